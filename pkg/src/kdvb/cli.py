"""Command-line front end: ``kdvb {kernel,simulate,criticality,residual,sweep}``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure
(blow-up, singular solve).  Partial outputs are kept on failure and every run
that writes files appends a manifest line to ``manifests.jsonl`` in its
output directory.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import itertools
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .critical import CriticalQuery, is_critical, nearest_critical
from .diagnostics import fit_decay_rate, stability_constants, target_residual
from .grid import DomainError, Grid2D, make_grid
from .kernel import (
    KernelPair,
    KernelSolveError,
    ScalarKernelProblem,
    compose_kernel_pair,
    kernel_residual,
    solve_scalar_kernel,
)
from .sim import InitialData, SimConfig, simulate
from .transform import TransformError, build_inverse_operators

log = logging.getLogger("kdvb")

CSV_HEADER = ["t", "E", "f", "g", "x0_norm", "target_norm"]
EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
DEFAULT_OUT = "kdvb_out"


class ConfigError(ValueError):
    """Schema violation; ``pointer`` is the JSON pointer of the offending value."""

    def __init__(self, pointer: str, msg: str):
        super().__init__(f"{pointer or '/'}: {msg}")
        self.pointer = pointer


# --------------------------------------------------------------------------
# config schema

_INITIAL_KEYS = {
    "sine_mode": {"kind": str, "m": int, "amplitude": float},
    "gaussian": {"kind": str, "center": float, "width": float, "amplitude": float},
    "explicit": {"kind": str, "eta": list, "w": list},
}
_SIM_REQUIRED = {"L": float, "n": int, "dt": float, "T": float, "dynamics": str,
                 "control": str, "bc_variant": str, "initial": dict}
_SIM_OPTIONAL = {"lambda": (float, 1.0), "record_every": (int, 1), "snapshots": (bool, False)}
_SCHEMAS = {
    "simulate": (_SIM_REQUIRED, _SIM_OPTIONAL),
    "residual": (_SIM_REQUIRED, _SIM_OPTIONAL),
    "kernel": ({"L": float, "n": int, "lambda": float}, {"exclusion_band": (int, 3)}),
    "criticality": ({"L": float}, {"tol": (float, 1e-9)}),
    "sweep": (
        {**_SIM_REQUIRED, "sweep": dict},
        {**_SIM_OPTIONAL, "tol": (float, 1e-9)},
    ),
}
_SWEEP_AXES = ("L", "lambda", "amplitude", "n")


def _coerce(value, typ, pointer):
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(pointer, f"expected a number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError(pointer, "must be finite")
        return value
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(pointer, f"expected an integer, got {value!r}")
        return int(value)
    if not isinstance(value, typ) or (typ is not bool and isinstance(value, bool)):
        raise ConfigError(pointer, f"expected {typ.__name__}, got {value!r}")
    return value


def _check_keys(obj: dict, required: dict, optional: dict, base: str) -> dict:
    out = {}
    for key in obj:
        if key not in required and key not in optional:
            raise ConfigError(f"{base}/{key}", "unknown key")
    for key, typ in required.items():
        if key not in obj:
            raise ConfigError(f"{base}/{key}", "missing required key")
        out[key] = _coerce(obj[key], typ, f"{base}/{key}")
    for key, (typ, default) in optional.items():
        out[key] = _coerce(obj[key], typ, f"{base}/{key}") if key in obj else default
    return out


def _parse_initial(obj: dict, base: str = "/initial") -> dict:
    kind = obj.get("kind")
    if kind not in _INITIAL_KEYS:
        raise ConfigError(f"{base}/kind", f"must be one of {sorted(_INITIAL_KEYS)}")
    schema = _INITIAL_KEYS[kind]
    return _check_keys(obj, schema, {}, base)


def validate_config(raw) -> dict:
    """Validate a config object and return it with defaults materialized."""
    if not isinstance(raw, dict):
        raise ConfigError("", "config must be a JSON object")
    kind = raw.get("kind")
    if kind not in _SCHEMAS:
        raise ConfigError("/kind", f"must be one of {sorted(_SCHEMAS)}")
    required, optional = _SCHEMAS[kind]
    cfg = _check_keys(raw, {"kind": str, **required}, optional, "")
    if "initial" in cfg:
        cfg["initial"] = _parse_initial(cfg["initial"])
    if "sweep" in cfg:
        sw = cfg["sweep"]
        for key, vals in sw.items():
            if key not in _SWEEP_AXES:
                raise ConfigError(f"/sweep/{key}", f"unknown axis, expected one of {_SWEEP_AXES}")
            if not isinstance(vals, list) or not vals:
                raise ConfigError(f"/sweep/{key}", "expected a non-empty list")
            typ = int if key == "n" else float
            sw[key] = [_coerce(v, typ, f"/sweep/{key}/{i}") for i, v in enumerate(vals)]
    for key in ("L", "dt", "T"):
        if key in cfg and not cfg[key] > 0:
            raise ConfigError(f"/{key}", "must be positive")
    if "n" in cfg and cfg["n"] < 7:
        raise ConfigError("/n", "must be >= 7")
    for key, allowed in (("dynamics", ("linear", "nonlinear")), ("control", ("open", "closed")),
                         ("bc_variant", ("controlled", "homogeneous"))):
        if key in cfg and cfg[key] not in allowed:
            raise ConfigError(f"/{key}", f"must be one of {allowed}")
    return cfg


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON: {exc}") from exc
    return validate_config(raw)


def sim_config(cfg: dict) -> SimConfig:
    ini = dict(cfg["initial"])
    if ini["kind"] == "explicit":
        ini["eta"], ini["w"] = tuple(ini["eta"]), tuple(ini["w"])
    return SimConfig(
        grid=make_grid(cfg["L"], cfg["n"]),
        dt=cfg["dt"],
        T=cfg["T"],
        lam=cfg["lambda"],
        dynamics=cfg["dynamics"],
        control=cfg["control"],
        bc_variant=cfg["bc_variant"],
        initial=InitialData(**ini),
        record_every=cfg["record_every"],
        snapshots=cfg["snapshots"],
    )


def parse_config(path):
    """Typed config: ``SimConfig``, ``ScalarKernelProblem`` or ``CriticalQuery``."""
    cfg = load_config(path)
    if cfg["kind"] in ("simulate", "residual"):
        return sim_config(cfg)
    if cfg["kind"] == "kernel":
        return ScalarKernelProblem(Grid2D.square(make_grid(cfg["L"], cfg["n"])), cfg["lambda"], +1)
    if cfg["kind"] == "criticality":
        return CriticalQuery(tolerance=cfg["tol"])
    return cfg


# --------------------------------------------------------------------------
# kernel files

def kernel_to_json(kp: KernelPair, residuals=None) -> dict:
    return {
        "L": kp.g.length,
        "n": kp.n,
        "lambda": kp.lam,
        "k_vals": kp.k_vals.tolist(),
        "s_vals": kp.s_vals.tolist(),
        "trace_kx0": kp.trace_kx0.tolist(),
        "trace_sx0": kp.trace_sx0.tolist(),
        "trace_kxL": kp.trace_kxL.tolist(),
        "trace_sxL": kp.trace_sxL.tolist(),
        "residuals": residuals or {},
    }


def kernel_from_json(path) -> KernelPair:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError("", f"cannot load kernel file {path}: {exc}") from exc
    for key in ("L", "n", "lambda", "k_vals", "s_vals"):
        if key not in d:
            raise ConfigError(f"/{key}", "missing in kernel file")
    g = make_grid(d["L"], d["n"])
    kp = KernelPair(
        grid=Grid2D.square(g),
        lam=float(d["lambda"]),
        k_vals=np.array(d["k_vals"], dtype=float),
        s_vals=np.array(d["s_vals"], dtype=float),
        trace_kx0=np.array(d["trace_kx0"], dtype=float),
        trace_sx0=np.array(d["trace_sx0"], dtype=float),
        trace_kxL=np.array(d["trace_kxL"], dtype=float),
        trace_sxL=np.array(d["trace_sxL"], dtype=float),
    )
    if kp.k_vals.shape != (g.n, g.n):
        raise ConfigError("/k_vals", f"expected shape {(g.n, g.n)}")
    return kp


def solve_kernels(L: float, n: int, lam: float, band: int = 3):
    g = make_grid(L, n)
    if is_critical(L):
        log.warning("L=%g is critical; kernel solve is not covered by the theory", L)
    G = Grid2D.square(g)
    v, rv = solve_scalar_kernel(ScalarKernelProblem(G, lam, +1), return_residual=True)
    u, ru = solve_scalar_kernel(ScalarKernelProblem(G, lam, -1), return_residual=True)
    kp = compose_kernel_pair(v, u, ScalarKernelProblem(G, lam, +1))
    rk, rs = kernel_residual(kp, band)
    return kp, {"linear_plus": rv, "linear_minus": ru, "pde_k": rk, "pde_s": rs,
                "exclusion_band": band}


# --------------------------------------------------------------------------
# outputs

def _num(x) -> str:
    return "" if x is None else repr(float(x))


def trajectory_csv(traj) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_HEADER)
    tn = traj.target_norms
    for i in range(traj.times.size):
        wr.writerow([
            _num(traj.times[i]), _num(traj.energies[i]), _num(traj.controls_f[i]),
            _num(traj.controls_g[i]), _num(traj.x0_norms[i]),
            _num(tn[i]) if tn is not None else "",
        ])
    return buf.getvalue()


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _finite(x):
    return x if x is None or math.isfinite(x) else None


def write_manifest(out_dir: Path, sub: str, cfg, inputs, outputs, t0: float, status: str,
                   warnings=None, reason=None):
    out_dir.mkdir(parents=True, exist_ok=True)
    rec = {
        "subcommand": sub,
        "config": cfg,
        "inputs": {str(p): _sha256(p) for p in inputs if p and Path(p).exists()},
        "outputs": [str(p) for p in outputs],
        "status": status,
        "reason": reason,
        "warnings": warnings or [],
        "duration_s": time.time() - t0,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "version": __version__,
    }
    with open(out_dir / "manifests.jsonl", "a") as fh:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")


def out_root(arg) -> Path:
    return Path(arg or os.environ.get("KDVB_OUT_DIR") or DEFAULT_OUT)


# --------------------------------------------------------------------------
# pipelines

def run_simulation(cfg: dict, kernel_path=None) -> tuple:
    """Run one simulate config; returns ``(trajectory, kernel, summary)``."""
    sc = sim_config(cfg)
    kp = None
    if sc.control == "closed":
        kp = kernel_from_json(kernel_path) if kernel_path else solve_kernels(cfg["L"], cfg["n"], cfg["lambda"])[0]
        if not kp.g.same_as(sc.grid):
            raise ConfigError("/n", "kernel file grid does not match config grid")
    traj = simulate(sc, kp)
    summary = {
        "failure": traj.failure,
        "final_time": float(traj.times[-1]),
        "final_x0_norm": _finite(float(traj.x0_norms[-1])),
        "final_target_norm": _finite(float(traj.target_norms[-1])) if kp is not None else None,
        "energy_drift": _finite(float(abs(traj.energies[-1] - traj.energies[0]) / traj.energies[0]))
        if traj.energies[0] > 0 else None,
        "critical_L": is_critical(cfg["L"]),
    }
    for name, series in (("x0", "x0_decay"), ("target", "target_decay")):
        try:
            fit = fit_decay_rate(traj, None, series=name)
            summary[series] = {"sigma": fit.sigma, "C_fit": fit.C_fit, "r_squared": fit.r_squared}
        except DomainError:
            summary[series] = None
    return traj, kp, summary


def _sweep_point(args):
    cfg, axes, kernel_path = args
    try:
        traj, _, summary = run_simulation(cfg, kernel_path)
    except (KernelSolveError, TransformError, DomainError) as exc:
        return {**axes, "sigma": None, "status": "failed", "failure": str(exc)}
    fit = summary["x0_decay"]
    sigma = fit["sigma"] if fit else None
    decayed = traj.failure is None and traj.x0_norms[-1] < traj.x0_norms[0]
    return {**axes, "sigma": sigma, "status": "decayed" if decayed else "diverged",
            "failure": traj.failure}


def cmd_criticality(a) -> int:
    q = CriticalQuery(tolerance=a.tol)
    out = {"L": a.L, "tol": a.tol, "critical": is_critical(a.L, q), "nearest": nearest_critical(a.L, 3, q)}
    print(json.dumps(out))
    return EXIT_OK


def cmd_kernel(a) -> int:
    t0 = time.time()
    if a.config:
        cfg = load_config(a.config)
        if cfg["kind"] != "kernel":
            raise ConfigError("/kind", "expected 'kernel'")
    else:
        if a.L is None or a.n is None or a.lam is None:
            raise ConfigError("", "kernel needs --L, --n and --lambda (or --config)")
        cfg = validate_config({"kind": "kernel", "L": a.L, "n": a.n, "lambda": a.lam})
    out = Path(a.out) if a.out else out_root(None) / "kernel.json"
    try:
        kp, res = solve_kernels(cfg["L"], cfg["n"], cfg["lambda"], cfg["exclusion_band"])
    except (KernelSolveError, DomainError) as exc:
        write_manifest(out.parent, "kernel", cfg, [a.config], [], t0, "failed", reason=str(exc))
        print(f"kernel solve failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(kernel_to_json(kp, res)))
    write_manifest(out.parent, "kernel", cfg, [a.config], [out], t0, "ok")
    print(json.dumps({"out": str(out), **res}))
    return EXIT_OK


def cmd_simulate(a) -> int:
    t0 = time.time()
    cfg = load_config(a.config)
    if cfg["kind"] != "simulate":
        raise ConfigError("/kind", "expected 'simulate'")
    out_dir = out_root(a.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    warnings = []
    if cfg["dt"] > cfg["L"] / (cfg["n"] - 1):
        warnings.append("dt exceeds grid spacing h (accuracy guard)")
    if is_critical(cfg["L"]):
        warnings.append("L is a critical length")
    try:
        traj, _, summary = run_simulation(cfg, a.kernel)
    except (KernelSolveError, TransformError) as exc:
        write_manifest(out_dir, "simulate", cfg, [a.config, a.kernel], [], t0, "failed",
                       warnings, str(exc))
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    csv_path, sum_path = out_dir / "trajectory.csv", out_dir / "summary.json"
    csv_path.write_text(trajectory_csv(traj))
    sum_path.write_text(json.dumps(summary, indent=2, sort_keys=True))
    status = "ok" if traj.failure is None else "failed"
    write_manifest(out_dir, "simulate", cfg, [a.config, a.kernel], [csv_path, sum_path], t0,
                   status, warnings, traj.failure)
    print(json.dumps({"csv": str(csv_path), **summary}))
    return EXIT_OK if traj.failure is None else EXIT_NUMERIC


def cmd_residual(a) -> int:
    t0 = time.time()
    cfg = load_config(a.config)
    if cfg["kind"] not in ("residual", "simulate"):
        raise ConfigError("/kind", "expected 'residual'")
    if cfg["control"] != "closed":
        raise ConfigError("/control", "residual needs a closed-loop config")
    cfg["snapshots"] = True
    out_dir = out_root(a.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "residual.json"
    try:
        kp = kernel_from_json(a.kernel)
        traj, _, _ = run_simulation(cfg, a.kernel)
        inv = build_inverse_operators(kp)
        sc = stability_constants(kp, inv, kp.g)
        res = target_residual(kp, traj, cfg["lambda"], nonlinear=cfg["dynamics"] == "nonlinear")
    except (KernelSolveError, TransformError, DomainError) as exc:
        write_manifest(out_dir, "residual", cfg, [a.config, a.kernel], [], t0, "failed",
                       reason=str(exc))
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    report = {
        "residual": _finite(res),
        "K1": sc.K1, "K2": sc.K2, "K3": sc.K3, "C1": sc.C1,
        "condition_estimates": {"plus": inv.cond_plus, "minus": inv.cond_minus},
        "simulation_failure": traj.failure,
    }
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True))
    write_manifest(out_dir, "residual", cfg, [a.config, a.kernel], [report_path], t0,
                   "ok" if traj.failure is None else "failed", reason=traj.failure)
    print(json.dumps(report))
    return EXIT_OK if traj.failure is None else EXIT_NUMERIC


def sweep_points(cfg: dict) -> list:
    base = {k: v for k, v in cfg.items() if k not in ("sweep", "tol")}
    base["kind"] = "simulate"
    axes = [k for k in _SWEEP_AXES if k in cfg["sweep"]]
    points = []
    for combo in itertools.product(*(cfg["sweep"][k] for k in axes)):
        c = json.loads(json.dumps(base))
        vals = dict(zip(axes, combo))
        for k, v in vals.items():
            if k == "amplitude":
                if "amplitude" not in c["initial"]:
                    raise ConfigError("/sweep/amplitude", "initial data has no amplitude")
                c["initial"]["amplitude"] = v
            else:
                c[k] = v
        points.append((c, vals))
    return points


def cmd_sweep(a) -> int:
    t0 = time.time()
    cfg = load_config(a.config)
    if cfg["kind"] != "sweep":
        raise ConfigError("/kind", "expected 'sweep'")
    if a.jobs < 1:
        raise ConfigError("", "--jobs must be >= 1")
    points = sweep_points(cfg)
    out_dir = out_root(a.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    # one kernel per (L, n, lambda), solved here and read by every run that needs it
    kernel_files = {}
    tasks = []
    for c, vals in points:
        path = None
        if c["control"] == "closed":
            key = (c["L"], c["n"], c["lambda"])
            if key not in kernel_files:
                path = out_dir / "kernels" / f"kernel_L{key[0]!r}_n{key[1]}_lam{key[2]!r}.json"
                try:
                    kp, res = solve_kernels(*key)
                except KernelSolveError as exc:
                    kernel_files[key] = None
                    log.warning("kernel solve failed for %s: %s", key, exc)
                else:
                    path.parent.mkdir(parents=True, exist_ok=True)
                    path.write_text(json.dumps(kernel_to_json(kp, res)))
                    kernel_files[key] = path
            path = kernel_files[key]
            if path is None:
                tasks.append(None)
                continue
        tasks.append((c, vals, str(path) if path else None))
    todo = [t for t in tasks if t is not None]
    if a.jobs == 1:
        done = [_sweep_point(t) for t in todo]
    else:
        with ProcessPoolExecutor(max_workers=a.jobs) as pool:
            done = list(pool.map(_sweep_point, todo))
    it = iter(done)
    rows = [next(it) if t is not None else
            {**vals, "sigma": None, "status": "failed", "failure": "kernel solve failed"}
            for t, (_, vals) in zip(tasks, points)]
    path = out_dir / "sweep.csv"
    axes = [k for k in _SWEEP_AXES if k in cfg["sweep"]]
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(axes + ["sigma", "status", "failure"])
    for r in rows:
        wr.writerow([repr(r[k]) for k in axes] + [_num(r["sigma"]) if r["sigma"] is not None and
                     math.isfinite(r["sigma"]) else "", r["status"], r["failure"] or ""])
    path.write_text(buf.getvalue())
    outputs = [path] + [p for p in kernel_files.values() if p is not None]
    write_manifest(out_dir, "sweep", cfg, [a.config], outputs, t0, "ok")
    print(buf.getvalue(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kdvb", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    k = sub.add_parser("kernel", help="solve the kernel pair and write it as JSON")
    k.add_argument("--config")
    k.add_argument("--L", type=float)
    k.add_argument("--n", type=int)
    k.add_argument("--lambda", dest="lam", type=float)
    k.add_argument("--out", help="output JSON path")

    s = sub.add_parser("simulate", help="run one simulation")
    s.add_argument("--config", required=True)
    s.add_argument("--kernel", help="kernel JSON produced by 'kernel'")
    s.add_argument("--out", help="output directory")

    c = sub.add_parser("criticality", help="critical-length membership")
    c.add_argument("--L", type=float, required=True)
    c.add_argument("--tol", type=float, default=1e-9)

    r = sub.add_parser("residual", help="target-system residual and stability constants")
    r.add_argument("--config", required=True)
    r.add_argument("--kernel", required=True)
    r.add_argument("--out")

    w = sub.add_parser("sweep", help="grid of simulations")
    w.add_argument("--config", required=True)
    w.add_argument("--out")
    w.add_argument("--jobs", type=int, default=1)
    return p


COMMANDS = {
    "kernel": cmd_kernel,
    "simulate": cmd_simulate,
    "criticality": cmd_criticality,
    "residual": cmd_residual,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[a.command](a)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DomainError as exc:
        print(f"invalid argument: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
