"""End-to-end command line checks driven through main()."""
import json
import re
from pathlib import Path

import pytest

from dfourier import MeasureStage, ramanujan_sum
from dfourier.cli import EXIT_BUDGET, EXIT_OK, EXIT_USAGE, EXIT_WINDOW, main

REFERENCE_CONFIG = str(Path(__file__).resolve().parent.parent
                       / "configs" / "reference.json")


def tiny_config(tmp_path, q_max, name="tiny.json", **extra):
    data = {
        "profile": {
            "window": [2, q_max],
            "psi": {"kind": "power_law", "tau": 2.0},
            "theta": {"kind": "constant", "value": 0.3},
            "coprime": {"kind": "classical"},
            "q_member": {"kind": "all"},
        },
        "eta": 0.3,
        "stages": 3,
        "workers": 1,
    }
    data.update(extra)
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


# ----------------------------------------------------------------------
# arithmetic subcommands
# ----------------------------------------------------------------------

def test_ramanujan_both_methods_agree(capsys):
    assert main(["ramanujan", "12", "3", "--method", "both"]) == EXIT_OK
    out = capsys.readouterr().out
    brute = float(re.search(r"brute\s+= (\S+)", out).group(1))
    div = float(re.search(r"divisor = (\S+)", out).group(1))
    diff = float(re.search(r"\|diff\|\s+= (\S+)", out).group(1))
    assert abs(brute - div) < 1e-9
    assert diff < 1e-9
    want = ramanujan_sum(12, 3)
    assert div == pytest.approx(want.real, abs=1e-9)


def test_ramanujan_defaults_to_divisor(capsys):
    assert main(["ramanujan", "5", "1"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "divisor = " in out
    assert "brute" not in out


def test_ramanujan_usage_errors(capsys):
    assert main(["ramanujan", "12", "3", "2", "4"]) == EXIT_USAGE
    assert "coprime" in capsys.readouterr().err
    assert main(["ramanujan", "12", "3", "1", "0"]) == EXIT_USAGE
    assert main(["ramanujan", "0", "1"]) == EXIT_USAGE


def test_residues_enumeration_matches_formula(capsys):
    assert main(["residues", "12", "1", "2"]) == EXIT_OK
    out = capsys.readouterr().out
    body = re.search(r"I_12\(1,2\) = \{(.*)\}", out).group(1)
    members = [int(p) for p in body.split(",")]
    enumerated = int(re.search(r"enumerated = (\d+)", out).group(1))
    formula = int(re.search(r"formula\s+= (\d+)", out).group(1))
    assert len(members) == enumerated == formula
    # members must satisfy the coprimality constraint gcd(2p + 1, 12) = 1
    import math
    assert all(math.gcd(2 * p + 1, 12) == 1 for p in members)


def test_residues_rejects_non_coprime_pair(capsys):
    assert main(["residues", "12", "2", "4"]) == EXIT_USAGE
    assert "coprime" in capsys.readouterr().err


# ----------------------------------------------------------------------
# bucket table
# ----------------------------------------------------------------------

def parse_bucket_rows(out):
    rows = {}
    for line in out.splitlines():
        m = re.match(r"\s*(\d+)\s+(\d+)\s+(\d+)\s+(\S+)\s+(yes|no)\s+(\S+)",
                     line)
        if m:
            rows[int(m.group(1))] = (int(m.group(2)), int(m.group(3)),
                                     m.group(5))
    return rows


def test_buckets_reference_table(capsys):
    assert main(["buckets", "--config", REFERENCE_CONFIG,
                 "--k-range", "1:8"]) == EXIT_OK
    rows = parse_bucket_rows(capsys.readouterr().out)
    counts = {1: 2, 2: 6, 3: 11, 4: 26, 5: 54, 6: 118, 7: 255, 8: 550}
    assert {k: rows[k][1] for k in counts} == counts
    assert rows[1][2] == "no"
    assert all(rows[k][2] == "yes" for k in range(2, 9))
    assert all(rows[k][0] == 1 << k for k in counts)


def test_buckets_csv_export(tmp_path, capsys):
    out_dir = tmp_path / "tables"
    assert main(["buckets", "--config", REFERENCE_CONFIG,
                 "--k-range", "1:4", "--format", "csv",
                 "--output-dir", str(out_dir)]) == EXIT_OK
    out = capsys.readouterr().out
    csv_path = out_dir / "buckets.csv"
    assert f"table written to {csv_path}" in out
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "k,M,count,mass,qualifies,size_ratio"
    assert len(lines) == 5
    k, M, count, mass, qualifies, _ = lines[2].split(",")
    assert (k, M, count, qualifies) == ("2", "4", "6", "1")
    assert float(mass) == pytest.approx(1.0260406602206753, rel=1e-12)


def test_buckets_eta_override_changes_rows(capsys):
    assert main(["buckets", "--config", REFERENCE_CONFIG,
                 "--eta", "0.2", "--k-range", "2:2"]) == EXIT_OK
    rows = parse_bucket_rows(capsys.readouterr().out)
    # weights scale with eta, so the k = 2 bucket collects q in (10, 32]
    assert rows[2][1] == 22


def test_buckets_warns_when_eta_reaches_critical(capsys):
    assert main(["buckets", "--config", REFERENCE_CONFIG,
                 "--eta", "0.5", "--k-range", "1:2"]) == EXIT_OK
    err = capsys.readouterr().err
    assert "not below the critical exponent" in err


def test_buckets_needs_profile(tmp_path, capsys):
    empty = tmp_path / "empty.json"
    empty.write_text("{}")
    assert main(["buckets", "--config", str(empty)]) == EXIT_USAGE
    assert "needs a profile" in capsys.readouterr().err


# ----------------------------------------------------------------------
# build
# ----------------------------------------------------------------------

def test_build_window_only(tmp_path, capsys):
    out_dir = tmp_path / "w"
    assert main(["build", "--config", REFERENCE_CONFIG, "--stages", "0",
                 "--output-dir", str(out_dir)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "artifact (0 stages, Z = 1.0) written to" in out
    stage = MeasureStage.load(out_dir / "stage.bin")
    assert stage.scales == ()
    log = json.loads((out_dir / "build_log.json").read_text())
    assert log["status"] == "complete"
    assert log["error"] is None
    assert log["scales"] == []


def test_build_one_stage_then_analyze_round_trip(tmp_path, capsys):
    out_dir = tmp_path / "b1"
    assert main(["build", "--config", REFERENCE_CONFIG, "--stages", "1",
                 "--output-dir", str(out_dir)]) == EXIT_OK
    out = capsys.readouterr().out
    assert ("stage 1: scale M=4 accepted (gap 1.72576, threshold none, "
            "1 probed)") in out
    assert "artifact (1 stages, Z = 0.7878842692743078)" in out
    log = json.loads((out_dir / "build_log.json").read_text())
    assert log["c_stab"] == pytest.approx(3.451512863852634, rel=1e-12)
    assert log["scales"] == [4]
    assert log["factors"][0]["count"] == 6

    stage_file = str(out_dir / "stage.bin")
    reports = []
    for sub in ("a1", "a2"):
        rep_dir = tmp_path / sub
        assert main(["analyze", stage_file, "--config", REFERENCE_CONFIG,
                     "--output-dir", str(rep_dir),
                     "--upper-q-max", "120"]) == EXIT_OK
        reports.append(((rep_dir / "decay_report.json").read_bytes(),
                        (rep_dir / "upper_report.json").read_bytes()))
    # same artifact, same config: byte-identical reports
    assert reports[0] == reports[1]
    out = capsys.readouterr().out
    assert "nu_hat(0) = 0.9999999999999998" in out
    assert "fitted_slope = -1.8231030964255324" in out
    decay = json.loads(reports[0][0])
    assert decay["fitted_slope"] == pytest.approx(-1.8231030964255324,
                                                  rel=1e-12)
    assert decay["scales"] == [4]


def test_build_reference_overflows_budget(tmp_path, capsys):
    out_dir = tmp_path / "ref"
    rc = main(["build", "--config", REFERENCE_CONFIG,
               "--output-dir", str(out_dir)])
    assert rc == EXIT_BUDGET
    captured = capsys.readouterr()
    assert "need 74551825993 coefficients, cap 1048576" in captured.err
    assert "factor at scale 256" in captured.err
    assert "partial artifact (1 of 3 stages) written to" in captured.out
    partial = MeasureStage.load(out_dir / "stage.bin")
    assert partial.scales == (4,)
    assert partial.stages == 1
    assert partial.requested_stages == 3
    assert not partial.complete
    log = json.loads((out_dir / "build_log.json").read_text())
    assert log["status"] == "bandwidth-budget"
    assert "scale 256" in log["error"]
    # the failing stage's probe record is preserved
    assert [p["scale"] for p in log["per_stage"][1]] == [16, 32, 64, 128, 256]


def test_build_window_exhausted_after_probing(tmp_path, capsys):
    cfg = tiny_config(tmp_path, 50, output_dir=str(tmp_path / "t50"))
    assert main(["build", "--config", cfg]) == EXIT_WINDOW
    captured = capsys.readouterr()
    assert "no admissible scale satisfies the stability threshold" in captured.err
    assert "stage 2: not completed (1 probed, last scale M=16" in captured.out
    log = json.loads((tmp_path / "t50" / "build_log.json").read_text())
    assert log["status"] == "window-exhausted"
    assert log["scales"] == [4]


def test_build_window_exhausted_without_candidates(tmp_path, capsys):
    cfg = tiny_config(tmp_path, 12, output_dir=str(tmp_path / "t12"))
    assert main(["build", "--config", cfg]) == EXIT_WINDOW
    captured = capsys.readouterr()
    assert "stage 2: not completed (no admissible scale to probe)" in captured.out
    partial = MeasureStage.load(tmp_path / "t12" / "stage.bin")
    assert partial.scales == (4,)


# ----------------------------------------------------------------------
# analyze and config plumbing
# ----------------------------------------------------------------------

def test_analyze_missing_stage_file(capsys):
    assert main(["analyze", "/nonexistent/stage.bin"]) == EXIT_USAGE
    assert "not found" in capsys.readouterr().err


def test_analyze_csv_format(st1, tmp_path, capsys):
    stage_file = tmp_path / "stage.bin"
    st1.save(stage_file)
    out_dir = tmp_path / "csv"
    assert main(["analyze", str(stage_file), "--format", "csv",
                 "--output-dir", str(out_dir),
                 "--upper-q-max", "50"]) == EXIT_OK
    out = capsys.readouterr().out
    bands = (out_dir / "decay_bands.csv").read_text().strip().splitlines()
    uppers = (out_dir / "upper_bounds.csv").read_text().strip().splitlines()
    assert bands[0].startswith("j,lo,hi")
    assert len(bands) == 17
    assert uppers[0].startswith("q,intervals")
    assert len(uppers) == 50  # q = 2..50 inclusive
    assert "reports written to" in out


def test_malformed_config_is_usage_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["buckets", "--config", str(bad)]) == EXIT_USAGE
    assert "malformed config" in capsys.readouterr().err


def test_unknown_config_key_is_rejected(tmp_path, capsys):
    odd = tmp_path / "odd.json"
    odd.write_text('{"fruit": 1}')
    assert main(["buckets", "--config", str(odd)]) == EXIT_USAGE
    assert "unknown config keys" in capsys.readouterr().err


def test_config_validation_messages(tmp_path, capsys):
    cfg = tiny_config(tmp_path, 50, name="badfmt.json", format="yaml")
    assert main(["buckets", "--config", cfg]) == EXIT_USAGE
    assert "unknown output format" in capsys.readouterr().err
    cfg = tiny_config(tmp_path, 50, name="badeta.json", eta=1.2)
    assert main(["buckets", "--config", cfg]) == EXIT_USAGE
    assert "eta" in capsys.readouterr().err
