import csv
import json

import pytest

from kdvb import cli
from kdvb.critical import critical_length
from kdvb.sim import SimConfig

MINIMAL = {
    "kind": "simulate", "L": 1, "n": 201, "dt": 1e-3, "T": 1, "dynamics": "linear",
    "control": "open", "bc_variant": "homogeneous",
    "initial": {"kind": "sine_mode", "m": 1, "amplitude": 0.01},
}


def _write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return p


def _manifests(d):
    return [json.loads(line) for line in (d / "manifests.jsonl").read_text().splitlines()]


def test_minimal_config_defaults(tmp_path):
    cfg = cli.load_config(_write(tmp_path, MINIMAL))
    assert cfg["record_every"] == 1 and cfg["lambda"] == 1.0 and cfg["snapshots"] is False
    sc = cli.parse_config(_write(tmp_path, MINIMAL))
    assert isinstance(sc, SimConfig)
    assert sc.steps == 1000 and sc.grid.n == 201


def test_kernel_and_criticality_defaults():
    k = cli.validate_config({"kind": "kernel", "L": 1, "n": 41, "lambda": 1})
    assert k["exclusion_band"] == 3
    c = cli.validate_config({"kind": "criticality", "L": 1})
    assert c["tol"] == 1e-9


def test_missing_key_names_pointer():
    raw = {k: v for k, v in MINIMAL.items() if k != "dt"}
    with pytest.raises(cli.ConfigError) as ei:
        cli.validate_config(raw)
    assert ei.value.pointer == "/dt"


@pytest.mark.parametrize("patch,pointer", [
    ({"dtt": 1e-3}, "/dtt"),
    ({"initial": {"kind": "sine_mode", "m": 1, "amplitude": 0.01, "phase": 0}}, "/initial/phase"),
    ({"n": 10.5}, "/n"),
    ({"dt": True}, "/dt"),
    ({"control": "pid"}, "/control"),
    ({"kind": "plot"}, "/kind"),
])
def test_schema_violations(patch, pointer):
    with pytest.raises(cli.ConfigError) as ei:
        cli.validate_config({**MINIMAL, **patch})
    assert ei.value.pointer == pointer


def test_config_error_exit_code(tmp_path, capsys):
    raw = {k: v for k, v in MINIMAL.items() if k != "dt"}
    rc = cli.main(["simulate", "--config", str(_write(tmp_path, raw)), "--out", str(tmp_path / "o")])
    assert rc == 1
    assert "/dt" in capsys.readouterr().err


def test_bad_json_and_missing_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["simulate", "--config", str(bad)]) == 1
    assert cli.main(["simulate", "--config", str(tmp_path / "nope.json")]) == 1


def test_unknown_subcommand():
    assert cli.main(["plot"]) == 1


def test_criticality_two_pi(capsys):
    assert cli.main(["criticality", "--L", "6.283185307", "--tol", "1e-6"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["critical"] is True
    assert out["nearest"][0] == pytest.approx(6.2831853, abs=1e-6)


def test_criticality_noncritical(capsys):
    assert cli.main(["criticality", "--L", "1"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["critical"] is False
    assert out["nearest"][0] == pytest.approx(critical_length(1, 1))


def test_simulate_row_count_and_header(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["simulate", "--config", str(_write(tmp_path, MINIMAL)), "--out", str(out)]) == 0
    rows = list(csv.reader((out / "trajectory.csv").open()))
    assert rows[0] == ["t", "E", "f", "g", "x0_norm", "target_norm"]
    assert len(rows) == 1 + 1001
    assert float(rows[-1][0]) == pytest.approx(1.0)
    man = _manifests(out)
    assert len(man) == 1 and man[0]["status"] == "ok"
    assert man[0]["config"]["record_every"] == 1
    assert str(out / "trajectory.csv") in man[0]["outputs"]


def test_simulate_deterministic(tmp_path):
    cfg = _write(tmp_path, {**MINIMAL, "n": 41, "T": 0.2})
    texts = []
    for d in ("a", "b"):
        assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / d)]) == 0
        texts.append((tmp_path / d / "trajectory.csv").read_bytes())
    assert texts[0] == texts[1]


def test_dt_exceeds_h_warns_and_runs(tmp_path):
    out = tmp_path / "o"
    cfg = _write(tmp_path, {**MINIMAL, "n": 21, "dt": 0.1, "T": 0.5})
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    man = _manifests(out)[0]
    assert any("dt exceeds" in w for w in man["warnings"])
    assert (out / "trajectory.csv").exists()


def test_env_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("KDVB_OUT_DIR", str(tmp_path / "env"))
    cfg = _write(tmp_path, {**MINIMAL, "n": 21, "T": 0.01})
    assert cli.main(["simulate", "--config", str(cfg)]) == 0
    assert (tmp_path / "env" / "trajectory.csv").exists()


def test_manifests_append(tmp_path):
    out = tmp_path / "o"
    cfg = _write(tmp_path, {**MINIMAL, "n": 21, "T": 0.01})
    for _ in range(2):
        cli.main(["simulate", "--config", str(cfg), "--out", str(out)])
    assert len(_manifests(out)) == 2


def test_kernel_file_round_trip(tmp_path):
    kfile = tmp_path / "k.json"
    assert cli.main(["kernel", "--L", "1", "--n", "21", "--lambda", "1", "--out", str(kfile)]) == 0
    kp = cli.kernel_from_json(kfile)
    assert kp.n == 21 and kp.lam == 1.0
    ref, _ = cli.solve_kernels(1.0, 21, 1.0)
    assert (kp.k_vals == ref.k_vals).all() and (kp.trace_sxL == ref.trace_sxL).all()
    assert _manifests(tmp_path)[0]["subcommand"] == "kernel"


def test_kernel_grid_mismatch(tmp_path):
    kfile = tmp_path / "k.json"
    cli.main(["kernel", "--L", "1", "--n", "21", "--lambda", "1", "--out", str(kfile)])
    cfg = _write(tmp_path, {**MINIMAL, "n": 41, "T": 0.01, "control": "closed",
                            "bc_variant": "controlled"})
    assert cli.main(["simulate", "--config", str(cfg), "--kernel", str(kfile)]) == 1


def test_numerical_failure_exit_and_manifest(tmp_path):
    # the closed loop with the collocation kernels leaves the bounded regime;
    # the run must stop with exit 2, keep the partial CSV and explain itself
    out = tmp_path / "o"
    cfg = _write(tmp_path, {**MINIMAL, "n": 41, "T": 0.5, "control": "closed",
                            "bc_variant": "controlled"})
    rc = cli.main(["simulate", "--config", str(cfg), "--out", str(out)])
    man = _manifests(out)[0]
    if rc == 2:
        assert man["status"] == "failed" and "blow-up" in man["reason"]
        assert (out / "trajectory.csv").exists()
    else:
        assert rc == 0 and man["status"] == "ok"


def test_sweep_three_amplitudes(tmp_path):
    out = tmp_path / "o"
    cfg = {**MINIMAL, "kind": "sweep", "n": 41, "T": 0.1, "dynamics": "nonlinear",
           "control": "closed", "bc_variant": "controlled",
           "sweep": {"amplitude": [1e-3, 1e-2, 1e-1]}}
    assert cli.main(["sweep", "--config", str(_write(tmp_path, cfg)), "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "sweep.csv").open()))
    assert len(rows) == 3
    assert [float(r["amplitude"]) for r in rows] == [1e-3, 1e-2, 1e-1]
    assert all(r["status"] in ("decayed", "diverged") for r in rows)
    # one kernel shared by the three runs
    assert len(list((out / "kernels").iterdir())) == 1


def test_sweep_parallel_matches_serial(tmp_path):
    cfg = {**MINIMAL, "kind": "sweep", "n": 21, "T": 0.05, "sweep": {"amplitude": [1e-3, 1e-2]}}
    p = _write(tmp_path, cfg)
    assert cli.main(["sweep", "--config", str(p), "--out", str(tmp_path / "s")]) == 0
    assert cli.main(["sweep", "--config", str(p), "--out", str(tmp_path / "p"), "--jobs", "2"]) == 0
    assert (tmp_path / "s" / "sweep.csv").read_bytes() == (tmp_path / "p" / "sweep.csv").read_bytes()


def test_residual_report_keys(tmp_path):
    kfile = tmp_path / "k.json"
    cli.main(["kernel", "--L", "1", "--n", "21", "--lambda", "1", "--out", str(kfile)])
    cfg = _write(tmp_path, {**MINIMAL, "kind": "residual", "n": 21, "T": 0.01,
                            "control": "closed", "bc_variant": "controlled"})
    out = tmp_path / "o"
    rc = cli.main(["residual", "--config", str(cfg), "--kernel", str(kfile), "--out", str(out)])
    assert rc in (0, 2)
    rep = json.loads((out / "residual.json").read_text())
    assert set(rep) >= {"residual", "K1", "K2", "K3", "C1", "condition_estimates"}
    assert rep["C1"] > 0
