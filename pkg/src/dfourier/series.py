"""Banded Fourier series with explicit tail bookkeeping.

Coefficients live on the symmetric integer band [-L, L] as a dense
complex array of odd length 2L+1; ``tail_bound`` is a certified upper
bound on the l1 mass of everything outside the band.  Products track
tails with the cross formula tail_a*l1_b + tail_b*l1_a + tail_a*tail_b,
which stays a true bound under truncation of either factor.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import fftconvolve

from .errors import BandwidthBudgetError


@dataclass(frozen=True)
class TruncatedFourierSeries:
    """Dense coefficient band [-L, L] plus an l1 tail certificate.

    Parameters
    ----------
    coeffs : np.ndarray
        Complex coefficients, index i holding frequency i - L; the
        length must be odd.
    tail_bound : float
        Upper bound on sum of |c(l)| over |l| > L.
    """

    coeffs: np.ndarray
    tail_bound: float = 0.0

    def __post_init__(self) -> None:
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.ndim != 1 or len(c) % 2 == 0:
            raise ValueError("coefficient array must be 1-d with odd length")
        object.__setattr__(self, "coeffs", c)
        if self.tail_bound < 0.0:
            raise ValueError("tail_bound must be nonnegative")

    @property
    def half_bandwidth(self) -> int:
        return (len(self.coeffs) - 1) // 2

    def coeff(self, l: int) -> complex:
        """Coefficient at frequency l (zero outside the stored band)."""
        L = self.half_bandwidth
        if abs(l) > L:
            return 0.0 + 0.0j
        return complex(self.coeffs[l + L])

    def l1_norm(self) -> float:
        return float(np.sum(np.abs(self.coeffs)))

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2)))

    def sup_bound(self) -> float:
        """Upper bound on the sup of the underlying periodic function."""
        return self.l1_norm() + self.tail_bound

    def hermitian_defect(self) -> float:
        """Max deviation from c(-l) == conj(c(l)); 0 for real densities."""
        return float(np.max(np.abs(self.coeffs - np.conj(self.coeffs[::-1]))))

    def symmetrized(self) -> "TruncatedFourierSeries":
        """Project onto exact Hermitian symmetry (real-valued function)."""
        c = 0.5 * (self.coeffs + np.conj(self.coeffs[::-1]))
        return replace(self, coeffs=c)

    def slice_to(self, half_bandwidth: int) -> "TruncatedFourierSeries":
        """Restrict (or zero-pad) to [-half_bandwidth, half_bandwidth].

        Mass dropped by a narrowing slice is added to the tail bound.
        """
        L, Lnew = self.half_bandwidth, int(half_bandwidth)
        if Lnew < 0:
            raise ValueError("half_bandwidth must be nonnegative")
        if Lnew >= L:
            pad = Lnew - L
            c = np.pad(self.coeffs, (pad, pad))
            return TruncatedFourierSeries(c, self.tail_bound)
        cut = L - Lnew
        dropped = float(np.sum(np.abs(self.coeffs[:cut]))
                        + np.sum(np.abs(self.coeffs[-cut:])))
        return TruncatedFourierSeries(self.coeffs[cut:-cut],
                                      self.tail_bound + dropped)

    def evaluate_on_regular_grid(self, n: int) -> np.ndarray:
        """Values at x = j/n, j = 0..n-1, via band folding and one inverse FFT.

        Exact for the banded part; the neglected tail is bounded by
        ``tail_bound`` uniformly in x.
        """
        if n < 1:
            raise ValueError("grid size must be positive")
        L = self.half_bandwidth
        width = 2 * L + 1
        pad = (-width) % n
        folded = np.pad(self.coeffs, (0, pad)).reshape(-1, n).sum(axis=0)
        # stored index 0 is frequency -L; realign to frequency 0 mod n
        folded = np.roll(folded, -(L % n))
        return np.fft.ifft(folded) * n


def constant_series(value: complex = 1.0) -> TruncatedFourierSeries:
    """The series of a constant function (single coefficient at 0)."""
    return TruncatedFourierSeries(np.array([value], dtype=np.complex128))


def series_multiply(a: TruncatedFourierSeries, b: TruncatedFourierSeries,
                    budget: int | None = None,
                    where: str = "series product") -> TruncatedFourierSeries:
    """Product of two banded series by coefficient convolution.

    The result band is [-(La+Lb), La+Lb]; when ``budget`` is given and
    the band would need more than that many coefficients, raise
    ``BandwidthBudgetError`` instead of allocating.  The tail bound is
    the cross formula, a true bound for the product of the two periodic
    functions.
    """
    width = len(a.coeffs) + len(b.coeffs) - 1
    if budget is not None and width > budget:
        raise BandwidthBudgetError(width, budget, where)
    if len(a.coeffs) == 1 or len(b.coeffs) == 1:
        coeffs = np.convolve(a.coeffs, b.coeffs)
    else:
        coeffs = fftconvolve(a.coeffs, b.coeffs)
    tail = (a.tail_bound * b.l1_norm() + b.tail_bound * a.l1_norm()
            + a.tail_bound * b.tail_bound)
    return TruncatedFourierSeries(coeffs, tail)
