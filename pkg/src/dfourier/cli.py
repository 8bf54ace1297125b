"""Command line front end: one JSON config drives every operation.

Any flag whose name matches a config key overrides that key.  Exit
codes: 0 success, 2 usage or precondition, 3 exhausted scale window,
4 bandwidth budget overflow.  A failing build still writes the artifact
of its completed stages before exiting, so the analyzer can inspect the
partial measure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from dataclasses import dataclass

from dfourier.arith import (
    ramanujan_sum_bruteforce,
    ramanujan_sum_divisor,
    residue_count,
    residue_set,
)
from dfourier.analyze import (
    borel_cantelli_report,
    decay_report,
    write_decay_csv,
    write_report_json,
    write_upper_csv,
)
from dfourier.errors import (
    BandwidthBudgetError,
    ProfileError,
    WindowExhaustedError,
)
from dfourier.measure import BuildConfig, MeasureStage, build_measure
from dfourier.profile import ApproximationProfile

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_WINDOW = 3
EXIT_BUDGET = 4

STAGE_FILE = "stage.bin"
BUILD_LOG = "build_log.json"


# ----------------------------------------------------------------------
# run configuration
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs, serializable as one flat JSON object.

    ``profile`` holds the nested profile descriptor.  ``eta = None``
    defers to the builder default (0.9 times the critical exponent).
    The remaining keys mirror the builder and analyzer knobs; ``seed``
    feeds any Monte-Carlo cross-check so reruns are reproducible.
    """
    profile: dict | None = None
    eta: float | None = None
    eps: float = 0.05
    stages: int = 3
    xi_max: float = 65536.0
    tail_tol: float = 1e-8
    bandwidth_budget: int = 1 << 20
    output_dir: str = "."
    format: str = "json"
    samples_per_band: int = 32
    kernel_halfwidth: int = 64
    band_margin: int = 512
    workers: int | None = None
    seed: int = 0
    upper_q_max: int = 500

    def validate(self) -> None:
        if self.format not in ("json", "csv"):
            raise ProfileError(f"unknown output format {self.format!r}")
        for name in ("eps", "xi_max", "tail_tol"):
            if getattr(self, name) <= 0.0:
                raise ProfileError(f"config key {name} must be positive")
        if self.eta is not None and not 0.0 < self.eta < 1.0:
            raise ProfileError("config key eta must lie in (0, 1)")
        if self.stages < 0 or self.bandwidth_budget < 1:
            raise ProfileError("stages and bandwidth_budget must be nonnegative")

    def build_config(self) -> BuildConfig:
        workers = self.workers if self.workers else os.cpu_count() or 1
        return BuildConfig(
            xi_max=int(self.xi_max), samples_per_band=self.samples_per_band,
            tail_tol=self.tail_tol, bandwidth_budget=self.bandwidth_budget,
            kernel_halfwidth=self.kernel_halfwidth,
            band_margin=self.band_margin, workers=workers)


_CONFIG_KEYS = {f.name for f in dataclasses.fields(RunConfig)}


def load_run_config(path: str | None, overrides: dict) -> RunConfig:
    """Config file merged with flag overrides; unknown keys are rejected."""
    data: dict = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        unknown = set(data) - _CONFIG_KEYS
        if unknown:
            raise ProfileError(f"unknown config keys: {sorted(unknown)}")
    data.update({k: v for k, v in overrides.items()
                 if k in _CONFIG_KEYS and v is not None})
    cfg = RunConfig(**data)
    cfg.validate()
    return cfg


def _resolve_profile(cfg: RunConfig) -> ApproximationProfile:
    if cfg.profile is None:
        raise ProfileError("this command needs a profile in the config file")
    return ApproximationProfile.from_descriptor(cfg.profile)


def _resolve_eta(profile: ApproximationProfile, cfg: RunConfig) -> float:
    """Weight exponent with the mandatory warning against the series exponent."""
    s_res = profile.s_exponent("auto")
    eta = cfg.eta if cfg.eta is not None else 0.9 * s_res.value
    if s_res.mode != "analytic":
        print(f"warning: critical exponent is empirical "
              f"(s ~ {s_res.value:.4f}); eta check is heuristic",
              file=sys.stderr)
    if eta >= s_res.value:
        print(f"warning: eta = {eta:.4f} is not below the critical "
              f"exponent s = {s_res.value:.4f}; the weighted series "
              f"need not converge", file=sys.stderr)
    return eta


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------

def _fmt_value(z: complex) -> str:
    if abs(z.imag) < 1e-9:
        return f"{z.real:.12g}"
    return f"{z.real:.12g}{z.imag:+.12g}i"


def cmd_ramanujan(args: argparse.Namespace) -> int:
    if args.b < 1 or math.gcd(args.a, args.b) != 1:
        print(f"error: pair ({args.a}, {args.b}) must be coprime with b >= 1",
              file=sys.stderr)
        return EXIT_USAGE
    if args.q < 1:
        print("error: modulus must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    if args.method in ("brute", "both"):
        brute = ramanujan_sum_bruteforce(args.q, args.k, args.a, args.b)
        print(f"brute   = {_fmt_value(brute)}")
    if args.method in ("divisor", "both"):
        div = ramanujan_sum_divisor(args.q, args.k, args.a, args.b)
        print(f"divisor = {_fmt_value(div)}")
    if args.method == "both":
        print(f"|diff|  = {abs(brute - div):.3e}")
    return EXIT_OK


def cmd_residues(args: argparse.Namespace) -> int:
    try:
        rs = residue_set(args.q, args.a, args.b)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    body = ", ".join(str(p) for p in rs.members.tolist())
    print(f"I_{args.q}({args.a},{args.b}) = {{{body}}}")
    print(f"enumerated = {rs.count}")
    print(f"formula    = {residue_count(args.q, args.b)}")
    return EXIT_OK


def cmd_buckets(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config, vars(args))
    profile = _resolve_profile(cfg)
    eta = _resolve_eta(profile, cfg)
    k_lo, k_hi = 1, None
    if args.k_range:
        lo, _, hi = args.k_range.partition(":")
        k_lo, k_hi = int(lo or 1), int(hi) if hi else None
    sset = profile.scale_set(eta, k_max=k_hi)
    rows = [e for e in sset.entries
            if e.k >= k_lo and (k_hi is None or e.k <= k_hi)]
    header = f"{'k':>3} {'M':>8} {'count':>8} {'mass':>14} " \
             f"{'qualifies':>9} {'M/(logM)^2':>12}"
    print(header)
    for e in rows:
        print(f"{e.k:>3} {e.scale:>8} {e.count:>8} {e.mass:>14.6g} "
              f"{'yes' if e.qualifies else 'no':>9} {e.size_ratio:>12.6g}")
    if cfg.format == "csv" and rows:
        os.makedirs(cfg.output_dir, exist_ok=True)
        out = os.path.join(cfg.output_dir, "buckets.csv")
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write("k,M,count,mass,qualifies,size_ratio\n")
            for e in rows:
                fh.write(f"{e.k},{e.scale},{e.count},{e.mass!r},"
                         f"{int(e.qualifies)},{e.size_ratio!r}\n")
        print(f"table written to {out}")
    return EXIT_OK


def _write_build_outputs(stage: MeasureStage, cfg: RunConfig,
                         status: str, error: str | None) -> str:
    os.makedirs(cfg.output_dir, exist_ok=True)
    stage_path = os.path.join(cfg.output_dir, STAGE_FILE)
    stage.save(stage_path)
    log = {
        "status": status,
        "error": error,
        "requested_stages": stage.requested_stages,
        "stages_completed": stage.stages,
        "scales": list(stage.scales),
        "c_stab": stage.c_stab,
        "normalization": stage.normalization,
        "uniform_error_bound": stage.uniform_error_bound,
        "per_stage": [list(probes) for probes in stage.gap_log],
        "factors": [dict(f) for f in stage.factor_summaries],
    }
    with open(os.path.join(cfg.output_dir, BUILD_LOG), "w",
              encoding="utf-8") as fh:
        json.dump(log, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return stage_path


def _print_stage_lines(stage: MeasureStage) -> None:
    for i, probes in enumerate(stage.gap_log, 1):
        if i <= len(stage.scales):
            chosen = stage.scales[i - 1]
            gap = next(p["gap"] for p in probes if p["scale"] == chosen)
            thr = probes[0]["threshold"]
            thr_s = "none" if thr is None else f"{thr:.6g}"
            print(f"stage {i}: scale M={chosen} accepted "
                  f"(gap {gap:.6g}, threshold {thr_s}, "
                  f"{len(probes)} probed)")
        elif probes:
            last = probes[-1]
            print(f"stage {i}: not completed ({len(probes)} probed, "
                  f"last scale M={last['scale']}, gap {last['gap']:.6g})")
        else:
            print(f"stage {i}: not completed (no admissible scale to probe)")


def cmd_build(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config, vars(args))
    profile = _resolve_profile(cfg)
    eta = _resolve_eta(profile, cfg)
    try:
        stage = build_measure(profile, eta=eta, eps=cfg.eps,
                              stages=cfg.stages, config=cfg.build_config())
    except (BandwidthBudgetError, WindowExhaustedError) as exc:
        code = EXIT_BUDGET if isinstance(exc, BandwidthBudgetError) \
            else EXIT_WINDOW
        status = "bandwidth-budget" if code == EXIT_BUDGET else "window-exhausted"
        print(f"error: {exc}", file=sys.stderr)
        if exc.partial is not None:
            path = _write_build_outputs(exc.partial, cfg, status, str(exc))
            _print_stage_lines(exc.partial)
            print(f"partial artifact ({exc.partial.stages} of "
                  f"{exc.partial.requested_stages} stages) written to {path}")
        return code
    path = _write_build_outputs(stage, cfg, "complete", None)
    _print_stage_lines(stage)
    print(f"artifact ({stage.stages} stages, Z = {stage.normalization!r}) "
          f"written to {path}")
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config, vars(args))
    if not os.path.exists(args.stage_file):
        print(f"error: stage file not found: {args.stage_file}",
              file=sys.stderr)
        return EXIT_USAGE
    stage = MeasureStage.load(args.stage_file)
    decay = decay_report(stage, xi_max=cfg.xi_max,
                         samples_per_band=cfg.samples_per_band)
    upper = borel_cantelli_report(stage, n_max=cfg.upper_q_max)
    os.makedirs(cfg.output_dir, exist_ok=True)
    if cfg.format == "json":
        d_path = os.path.join(cfg.output_dir, "decay_report.json")
        u_path = os.path.join(cfg.output_dir, "upper_report.json")
        write_report_json(decay, d_path)
        write_report_json(upper, u_path)
    else:
        d_path = os.path.join(cfg.output_dir, "decay_bands.csv")
        u_path = os.path.join(cfg.output_dir, "upper_bounds.csv")
        write_decay_csv(decay, d_path)
        write_upper_csv(upper, u_path)
    print(f"nu_hat(0) = {decay.nu_hat_zero!r}")
    print(f"fitted_slope = {decay.fitted_slope!r}  "
          f"predicted_dimension = {decay.predicted_dimension!r}")
    print(f"decay target exponent = {-decay.target_exponent!r}  "
          f"certified floor = {decay.pointwise_error_bound!r}")
    print(f"upper-bound constant = {upper.constant!r}  "
          f"(q <= {upper.increment_cutoff} partial sums: measured "
          f"{upper.measured_partial!r} vs series {upper.series_partial!r})")
    print(f"reports written to {d_path} and {u_path}")
    return EXIT_OK


# ----------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------

def _add_config_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="JSON run config")
    sp.add_argument("--eta", type=float)
    sp.add_argument("--eps", type=float)
    sp.add_argument("--stages", type=int)
    sp.add_argument("--xi-max", dest="xi_max", type=float)
    sp.add_argument("--tail-tol", dest="tail_tol", type=float)
    sp.add_argument("--bandwidth-budget", dest="bandwidth_budget", type=int)
    sp.add_argument("--output-dir", dest="output_dir")
    sp.add_argument("--format", choices=("json", "csv"))
    sp.add_argument("--samples-per-band", dest="samples_per_band", type=int)
    sp.add_argument("--kernel-halfwidth", dest="kernel_halfwidth", type=int)
    sp.add_argument("--band-margin", dest="band_margin", type=int)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--upper-q-max", dest="upper_q_max", type=int)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dfourier",
        description="Fourier decay pipeline for coprimality-restricted "
                    "well-approximable sets")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("ramanujan", help="restricted Ramanujan sum S(q, k)")
    sp.add_argument("q", type=int)
    sp.add_argument("k", type=int)
    sp.add_argument("a", type=int, nargs="?", default=0)
    sp.add_argument("b", type=int, nargs="?", default=1)
    sp.add_argument("--method", choices=("brute", "divisor", "both"),
                    default="divisor")
    sp.set_defaults(func=cmd_ramanujan)

    sp = sub.add_parser("residues",
                        help="restricted residue set and its cardinality")
    sp.add_argument("q", type=int)
    sp.add_argument("a", type=int, nargs="?", default=0)
    sp.add_argument("b", type=int, nargs="?", default=1)
    sp.set_defaults(func=cmd_residues)

    sp = sub.add_parser("buckets",
                        help="dyadic scale table with bucket masses")
    sp.add_argument("--k-range", dest="k_range",
                    help="restrict rows to LO:HI stage indices")
    _add_config_flags(sp)
    sp.set_defaults(func=cmd_buckets)

    sp = sub.add_parser("build", help="run the staged measure construction")
    _add_config_flags(sp)
    sp.set_defaults(func=cmd_build)

    sp = sub.add_parser("analyze",
                        help="decay and upper-bound reports for an artifact")
    sp.add_argument("stage_file")
    _add_config_flags(sp)
    sp.set_defaults(func=cmd_analyze)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ProfileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except json.JSONDecodeError as exc:
        print(f"error: malformed config: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
