"""Acceptance gate: one test per criterion, one verdict line each.

Every expected number here was computed by an independent oracle (FFT
brute force, direct quadrature, closed forms) before the assertion was
written.  Criteria that the desk-scale reference run cannot meet are
asserted at their stated tolerance anyway and fail honestly; the verdict
line carries the measured values either way.
"""
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from dfourier import (
    BumpSpec,
    MeasureStage,
    borel_cantelli_report,
    compare_with_window_only,
    decay_report,
    gm_series,
    power_law_profile,
    predicted_dimension,
    support_witness_scan,
)
from dfourier.arith import (
    bound_ratio_scan,
    divisor_count,
    divisors,
    mobius,
    ramanujan_period,
    ramanujan_period_dense,
    residue_count,
    residue_set,
)
from dfourier.cli import EXIT_OK, main
from dfourier.measure import _member_data, assemble_line, envelope_tail

ETA, EPS = 0.3, 0.05
PAIR_GRID = [(0, 1), (1, 2), (3, 4)]
REFERENCE_CONFIG = str(Path(__file__).resolve().parent.parent
                       / "configs" / "reference.json")
REGIME_SCALES = (4, 8, 16, 32)


@pytest.fixture
def emit(capsys):
    def _emit(line):
        with capsys.disabled():
            print(line, flush=True)
    return _emit


@pytest.fixture(scope="module")
def regime_rows(reference_profile):
    """Full-band factors at four scales, reduced to regime scalars.

    The band is certified complete (tail below the tolerance), so the
    in-band maxima below are the true regime suprema; the per-octave
    envelope certificates bound anything beyond the stored band.
    """
    bump = BumpSpec()
    rows = {}
    for M in REGIME_SCALES:
        fac = gm_series(reference_profile, bump, ETA, M, 1e-8, 1 << 26)
        ser = fac.series
        L = ser.half_bandwidth
        c = ser.coeffs
        small_hi = math.floor(3 * M ** (1 / ETA))
        large_lo = math.floor(M ** (1 / ETA)) + 1
        ls = np.arange(1, small_hi + 1)
        taus = np.array([divisor_count(int(l)) for l in ls], dtype=float)
        c_small = float(np.max(np.abs(c[L + ls]) * M
                               / (math.log(M) ** 5 * taus)))
        ll = np.arange(large_lo, L + 1)
        c_large = float(np.max(np.abs(c[L + ll])
                               * ll.astype(float) ** (ETA - EPS)))
        data = _member_data(reference_profile,
                            reference_profile.bucket(ETA, M).members)
        certs = [float(envelope_tail(data, bump, L << j))
                 * float(L << (j + 1)) ** (ETA - EPS) for j in range(7)]
        raw_center = complex(assemble_line(data, bump, 0, 0)[0])
        rows[M] = {
            "L": L,
            "complete": fac.complete,
            "tail": ser.tail_bound,
            "center": complex(ser.coeff(0)),
            "raw_center": raw_center,
            "c_small": c_small,
            "c_large": c_large,
            "certs": certs,
        }
        del c, ser, fac, ll, data
    return rows


# ----------------------------------------------------------------------
# arithmetic identities
# ----------------------------------------------------------------------

def test_criterion_01_ramanujan_oracles_agree(emit):
    t0 = time.perf_counter()
    worst = 0.0
    for q in range(1, 501):
        for a, b in PAIR_GRID + [(1, q)]:
            if math.gcd(a, b) != 1:
                continue
            diff = np.abs(ramanujan_period(q, a, b)
                          - ramanujan_period_dense(q, a, b)).max()
            worst = max(worst, float(diff))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and elapsed < 60.0
    emit(f"criterion 1: {'PASS' if ok else 'FAIL'} - max |divisor - brute| "
         f"= {worst:.3e} over q <= 500, full periods, 4 pairs "
         f"(tolerance 1e-9, {elapsed:.1f}s)")
    assert worst < 1e-9
    assert elapsed < 60.0


def test_criterion_02_residue_cardinality_identity(emit):
    t0 = time.perf_counter()
    mismatches = 0
    for q in range(1, 10_001):
        for a, b in PAIR_GRID + [(1, q)]:
            if math.gcd(a, b) != 1:
                continue
            if residue_set(q, a, b).count != residue_count(q, b):
                mismatches += 1
    elapsed = time.perf_counter() - t0
    emit(f"criterion 2: {'PASS' if mismatches == 0 else 'FAIL'} - "
         f"{mismatches} mismatches between enumeration and the product "
         f"formula, q <= 10^4 ({elapsed:.1f}s)")
    assert mismatches == 0


def test_criterion_03_classical_specialization(emit):
    worst = 0.0
    for q in range(1, 301):
        period = ramanujan_period(q, 0, 1)
        mu = {d: mobius(q // d) for d in divisors(q)}
        for k in range(1, 301):
            g = math.gcd(q, k)
            vs = sum(mu[d] * d for d in divisors(g))
            worst = max(worst, abs(period[k % q] - vs))
    ok = worst < 1e-9
    emit(f"criterion 3: {'PASS' if ok else 'FAIL'} - max deviation from "
         f"the Mobius divisor form = {worst:.3e} over q, k <= 300 "
         f"(tolerance 1e-9)")
    assert worst < 1e-9


def test_criterion_04_bound_ratio_bounded(emit):
    res = bound_ratio_scan(2000, 2000, PAIR_GRID)
    worst = res["worst_ratio"]
    arg = (res["q"], res["k"], tuple(res["pair"]))
    for q in range(2, 2001):
        period = ramanujan_period(q, 1, q)
        kk = np.arange(1, min(2000, q) + 1)
        ratios = np.abs(period[kk % q]) / (np.gcd(q, kk) * math.log(q))
        i = int(np.argmax(ratios))
        if ratios[i] > worst:
            worst = float(ratios[i])
            arg = (q, int(kk[i]), (1, q))
    ok = math.isfinite(worst) and worst < 10.0
    emit(f"criterion 4: {'PASS' if ok else 'FAIL'} - realized max of "
         f"|S| / (gcd(q, k) log q) = {worst!r} at q={arg[0]} k={arg[1]} "
         f"pair={arg[2]} (bound 10)")
    assert math.isfinite(worst)
    assert worst < 10.0


# ----------------------------------------------------------------------
# factor normalization and two-regime constants
# ----------------------------------------------------------------------

def test_criterion_05_factor_centers_normalized(emit, regime_rows,
                                                reference_profile):
    worst = 0.0
    for M in REGIME_SCALES:
        row = regime_rows[M]
        worst = max(worst, abs(row["center"] - 1.0),
                    abs(row["raw_center"] - 1.0))
    fac = gm_series(reference_profile, BumpSpec(), ETA, 256, 1e-8, 1 << 20,
                    band_cap=4096)
    data = _member_data(reference_profile,
                        reference_profile.bucket(ETA, 256).members)
    raw256 = complex(assemble_line(data, BumpSpec(), 0, 0)[0])
    worst = max(worst, abs(complex(fac.series.coeff(0)) - 1.0),
                abs(raw256 - 1.0))
    ok = worst < 1e-9
    emit(f"criterion 5: {'PASS' if ok else 'FAIL'} - max |g_M(0) - 1| = "
         f"{worst:.3e} over M in {REGIME_SCALES + (256,)} "
         f"(tolerance 1e-9, stored and raw averages)")
    assert worst < 1e-9


def test_criterion_06_two_regime_constants_stable(emit, regime_rows):
    for M in REGIME_SCALES:
        row = regime_rows[M]
        assert row["complete"], f"band at M={M} not certified complete"
        assert row["tail"] <= 1e-8
        # beyond the stored band the octave certificates keep the
        # large-regime weight below the in-band maximum, so the in-band
        # sup is the regime constant
        assert max(row["certs"]) < row["c_large"]
        assert all(a >= b for a, b in zip(row["certs"], row["certs"][1:]))
    small = [regime_rows[M]["c_small"] for M in REGIME_SCALES]
    large = [regime_rows[M]["c_large"] for M in REGIME_SCALES]
    ratio_small = max(small) / min(small)
    ratio_large = max(large) / min(large)
    ok = ratio_small < 5.0 and ratio_large < 5.0
    emit(f"criterion 6: {'PASS' if ok else 'FAIL'} - regime constant "
         f"spread over M in {REGIME_SCALES}: small-l ratio = "
         f"{ratio_small:.4f}, large-l ratio = {ratio_large:.4f} (bound 5); "
         f"small constants {['%.4g' % v for v in small]}, "
         f"large constants {['%.4g' % v for v in large]}")
    assert ratio_large < 5.0
    # the small-l constant decays like M^(-0.73) instead of settling,
    # so its spread across one dyadic decade exceeds the bound
    assert ratio_small < 5.0


# ----------------------------------------------------------------------
# end-to-end pipeline
# ----------------------------------------------------------------------

def test_criterion_07_end_to_end_decay_run(emit, st0, tmp_path):
    out_dir = tmp_path / "reference"
    t0 = time.perf_counter()
    rc = main(["build", "--config", REFERENCE_CONFIG,
               "--output-dir", str(out_dir)])
    elapsed = time.perf_counter() - t0
    stage = MeasureStage.load(out_dir / "stage.bin")
    rep = decay_report(stage)
    cmp = compare_with_window_only(rep, decay_report(st0))
    ordering_ok = (not cmp["ordering_applies"]) or cmp["ordered"]
    slope_ok = rep.fitted_slope <= -(ETA - EPS) + 0.1
    ok = rc == EXIT_OK and slope_ok and ordering_ok and elapsed < 600.0
    emit(f"criterion 7: {'PASS' if ok else 'FAIL'} - reference build exit "
         f"{rc}, {stage.stages}/{stage.requested_stages} stages "
         f"(scales {stage.scales}); fitted slope {rep.fitted_slope:.4f} "
         f"vs target -0.15; window-only slope on the same bands "
         f"{cmp['base_slope_restricted']:.4f} (flat: "
         f"{cmp['base_flat_on_fit_bands']}, ordering applies: "
         f"{cmp['ordering_applies']}); {elapsed:.1f}s of 600s")
    assert elapsed < 600.0
    assert slope_ok
    assert ordering_ok
    # the third stage needs a coefficient band five orders past the
    # budget, so the reference run cannot finish at desk scale
    assert rc == EXIT_OK


def test_criterion_08_support_witnesses_complete(emit, st1, st2):
    scan1 = support_witness_scan(st1, threshold=st1.uniform_error_bound)
    scan2 = support_witness_scan(st2, threshold=st2.uniform_error_bound)
    ok = scan1["zero_failures"] and scan2["zero_failures"]
    emit(f"criterion 8: {'PASS' if ok else 'FAIL'} - witness scan on "
         f"2^14 points: one-stage {scan1['positive_points']} positives / "
         f"{len(scan1['failures'])} failures, two-stage "
         f"{scan2['positive_points']} positives / "
         f"{len(scan2['failures'])} failures (threshold = certified "
         f"truncation error)")
    assert scan1["positive_points"] > 0
    assert scan1["zero_failures"] is True
    assert scan2["zero_failures"] is True


def test_criterion_09_interval_mass_upper_bound(emit, st2):
    up = borel_cantelli_report(st2, n_max=500)
    cauchy_ok = up.max_increment_beyond < 1e-6
    ok = math.isfinite(up.constant) and cauchy_ok
    emit(f"criterion 9: {'PASS' if ok else 'FAIL'} - recorded constant "
         f"C = {up.constant!r} over q <= 500 (measured partial sum "
         f"{up.measured_partial:.4f} vs series {up.series_partial:.4f}); "
         f"max increment beyond q = {up.increment_cutoff} is "
         f"{up.max_increment_beyond:.3e} (tolerance 1e-6)")
    assert math.isfinite(up.constant)
    for row in up.per_q:
        assert row["measured"] <= up.constant * row["bound"] + 1e-12
    # two stages leave spikes of width ~ psi(q)/q at every modulus in
    # the second bucket, so increments past q = 400 sit at 1e-3, not 0
    assert cauchy_ok


def test_criterion_10_predicted_dimension_values(emit):
    two_thirds = predicted_dimension(power_law_profile(2.0, 1000))
    one = predicted_dimension(power_law_profile(1.0, 1000))
    ok = two_thirds == 2.0 / 3.0 and one == 1.0
    emit(f"criterion 10: {'PASS' if ok else 'FAIL'} - predicted dimension "
         f"{two_thirds!r} for tau = 2 (want 2/3) and {one!r} for tau = 1 "
         f"(want 1), exact float equality")
    assert two_thirds == 2.0 / 3.0
    assert one == 1.0


def test_criterion_11_deterministic_reruns(emit, tmp_path):
    artifacts = []
    codes = []
    for tag in ("r1", "r2"):
        build_dir = tmp_path / f"build_{tag}"
        rep_dir = tmp_path / f"rep_{tag}"
        codes.append(main(["build", "--config", REFERENCE_CONFIG,
                           "--output-dir", str(build_dir)]))
        rc = main(["analyze", str(build_dir / "stage.bin"),
                   "--config", REFERENCE_CONFIG,
                   "--output-dir", str(rep_dir)])
        assert rc == EXIT_OK
        artifacts.append(tuple(
            p.read_bytes() for p in (build_dir / "stage.bin",
                                     build_dir / "build_log.json",
                                     rep_dir / "decay_report.json",
                                     rep_dir / "upper_report.json")))
    ok = codes[0] == codes[1] and artifacts[0] == artifacts[1]
    sizes = [len(b) for b in artifacts[0]]
    emit(f"criterion 11: {'PASS' if ok else 'FAIL'} - two build + analyze "
         f"rounds from the same config: exit codes {codes}, artifact and "
         f"report bytes identical: {artifacts[0] == artifacts[1]} "
         f"(sizes {sizes})")
    assert codes[0] == codes[1]
    assert artifacts[0] == artifacts[1]
