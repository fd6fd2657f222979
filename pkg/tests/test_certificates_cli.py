import json
import subprocess
import sys

import numpy as np
import pytest

from biorthcurv import certificates as C
from biorthcurv.cli import ConfigError, ScanConfig, main

WILKING = {"space": "wilking", "grid": {"points": 10, "planes": 20, "radial": 3, "angular": 8, "cloud": 6, "flat_planes": 200}}
WU = {"space": "wu", "grid": {"trace": 8, "infeasibility": 128, "planes": 256, "complements": 20, "refine": 1, "fit_planes": 10}, "options": {"target": 0.2}}
DEFORMED = {
    "space": "deformed",
    "grid": {"tube_angles": 2, "global_rings": 2, "global_angles": 4, "pair_planes": 60, "pair_low": 15, "pair_refine": 1, "halvings": 6, "bisections": 0, "flat_points_per_sphere": 1},
    "options": {"tube_radii": [0.0, 0.1]},
}


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def wilking_cert(workdir):
    cfg = write_json(workdir / "wcfg.json", WILKING)
    out = workdir / "ws.json"
    assert main(["wilking-scan", "--config", cfg, "--out", str(out)]) == 0
    return out


def test_dumps_is_canonical_and_handles_non_finite():
    cert = C.make_certificate("x", {"b": 1, "a": (1, 2)}, {"v": np.float64(0.1), "n": np.nan, "i": -np.inf, "arr": np.arange(2)})
    text = C.dumps(cert)
    back = json.loads(text)
    assert back["results"] == {"arr": [0, 1], "i": "-inf", "n": "nan", "v": 0.1}
    assert C.dumps(back) == text
    assert list(back) == sorted(back)
    with pytest.raises(ValueError):
        C.make_certificate("x", {}, {}, status="maybe")


def test_diff_classes():
    a = C.make_certificate("x", {"grid": 4}, {"value": 1.0, "witness": [0.5]})
    b = json.loads(C.dumps(a))
    assert C.diff_certificates(a, b).entries == []
    b["config"]["grid"] = 8
    b["results"]["value"] = 1.0 + 1e-6
    b["results"]["witness"] = [0.5 + 1e-8]
    b["versions"]["numpy"] = "0.0"
    rep = C.diff_certificates(a, b)
    klasses = {e.path: e.klass for e in rep.entries}
    assert klasses == {"config.grid": "config-drift", "results.value": "value-drift", "versions.numpy": "environment"}
    assert rep.exit_code == C.EXIT_NUMERIC
    b["results"]["value"] = 1.0
    assert C.diff_certificates(a, b).exit_code == C.EXIT_PASS
    b["schema_version"] = 99
    with pytest.raises(C.SchemaMismatch):
        C.diff_certificates(a, b)


def test_wall_clock_is_ignored_by_diff():
    a = C.make_certificate("x", {}, {"v": 1.0}, wall_clock=1.0)
    b = C.make_certificate("x", {}, {"v": 1.0}, wall_clock=2.0)
    assert C.diff_certificates(a, b).entries == []


def test_scan_config_validation():
    cfg = ScanConfig.from_dict(DEFORMED)
    assert cfg.theta == 0.1 and cfg.grid["halvings"] == 6
    assert ScanConfig.from_dict(cfg.as_dict()) == cfg
    for bad in (
        {"space": "torus"},
        {"space": "wu", "grid": {"nope": 3}},
        {"space": "wu", "grid": {"trace": 1.5}},
        {"space": "wu", "grid": {"trace": 1}},
        {"space": "deformed", "theta": -1.0},
        {"space": "wu", "extra": 1},
        {"space": "wu", "tolerances": {"nope": 1.0}},
    ):
        with pytest.raises(ConfigError):
            ScanConfig.from_dict(bad)


def test_exit_code_config_error(workdir, capsys):
    cfg = write_json(workdir / "bad.json", {"space": "wu", "grid": {"trace": 0}})
    assert main(["wu-verify", "--config", cfg]) == C.EXIT_CONFIG
    assert main(["wilking-scan", "--config", str(workdir / "missing.json")]) == C.EXIT_CONFIG
    assert main(["wu-verify", "--config", write_json(workdir / "w.json", WILKING)]) == C.EXIT_CONFIG
    assert main(["wu-verify", "--jobs", "0"]) == C.EXIT_CONFIG
    assert main(["diff", str(workdir / "missing.json"), str(workdir / "missing.json")]) == C.EXIT_CONFIG


def test_wu_verify_pass_and_insufficient_resolution(workdir):
    cfg = write_json(workdir / "wu.json", WU)
    out = workdir / "wu_out.json"
    assert main(["wu-verify", "--config", cfg, "--out", str(out)]) == C.EXIT_PASS
    cert = C.load(out)
    assert cert["status"] == "pass" and cert["results"]["infeasibility"]["certified"]
    assert main(["wu-verify", "--config", cfg, "--grid", "2", "--out", str(out)]) == C.EXIT_RESOLUTION
    cert = C.load(out)
    assert cert["status"] == "insufficient-resolution"
    assert cert["config"]["grid"]["infeasibility"] == 2


def test_wilking_scan_numeric_failure(workdir):
    cfg = dict(WILKING, tolerances={"sec_floor": -1.0})
    assert main(["wilking-scan", "--config", write_json(workdir / "wf.json", cfg), "--out", str(workdir / "wf_out.json")]) == C.EXIT_NUMERIC
    assert C.load(workdir / "wf_out.json")["failures"]


def test_wilking_scan_flags_central_double_flat(wilking_cert):
    cert = C.load(wilking_cert)
    assert cert["status"] == "pass"
    zeros = cert["results"]["atlas"]["zeros"]
    assert any(z["isolated_second_flat"] and np.allclose(z["invariants"], 0, atol=1e-9) for z in zeros)
    assert any("two isolated flat planes" in w for w in cert["results"]["warnings"])


def test_wilking_scan_byte_identical_across_runs_and_jobs(workdir, wilking_cert):
    cfg = write_json(workdir / "wcfg.json", WILKING)
    out2 = workdir / "ws_jobs2.json"
    assert main(["wilking-scan", "--config", cfg, "--jobs", "2", "--out", str(out2)]) == 0
    assert wilking_cert.read_bytes() == out2.read_bytes()
    assert main(["diff", str(wilking_cert), str(out2)]) == 0


def test_deform_verify_small_config(workdir, wilking_cert):
    cfg = write_json(workdir / "dcfg.json", DEFORMED)
    a, b = workdir / "d1.json", workdir / "d2.json"
    code = main(["deform-verify", "--config", cfg, "--atlas", str(wilking_cert), "--out", str(a)])
    cert = C.load(a)
    assert code == cert["exit_code"] and code in (C.EXIT_PASS, C.EXIT_NUMERIC)
    assert cert["config"]["theta"] == 0.1
    sst = cert["results"]["s_star"]
    assert sst["s_max"] > 0 and sst["tube_points"] > 0 and sst["global_points"] > 0
    if sst["tube_success"]:
        assert cert["results"]["ricci"]["min_ricci"] > 0
    main(["deform-verify", "--config", cfg, "--atlas", str(wilking_cert), "--jobs", "2", "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_containment_requires_passing_base_and_larger_theta(workdir):
    base = C.make_certificate(
        "deform-verify",
        ScanConfig.from_dict(DEFORMED).as_dict(),
        {"s_star": {"s_star": 1e-3, "min_f": 1e-4}},
    )
    path = workdir / "base.json"
    C.write(base, path)
    cfg = write_json(workdir / "dcfg2.json", DEFORMED)
    out = workdir / "contained.json"
    assert main(["deform-verify", "--config", cfg, "--theta", "0.3", "--from-certificate", str(path), "--out", str(out)]) == 0
    cert = C.load(out)
    assert cert["results"]["method"] == "containment" and cert["results"]["s_star"] == 1e-3
    assert main(["deform-verify", "--config", cfg, "--theta", "0.05", "--from-certificate", str(path)]) == C.EXIT_CONFIG
    base["status"] = "numeric-failure"
    C.write(base, path)
    assert main(["deform-verify", "--config", cfg, "--theta", "0.3", "--from-certificate", str(path)]) == C.EXIT_CONFIG


def test_console_entry_point(workdir):
    r = subprocess.run([sys.executable, "-m", "biorthcurv.cli", "diff", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "usage" in r.stdout
