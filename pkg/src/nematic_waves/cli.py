"""Command-line driver: ``nematic-waves <command> --config cfg.json``.

Configuration is a JSON object; ``--override section.key=value`` replaces a
single entry (the value is parsed as JSON when possible). Errors are reported
as one JSON object on standard error with a nonzero exit status.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import compare, metric
from .chart import P, Q
from .errors import ConfigError, NematicError
from .fixtures import FIXTURES, InitialData, perturbed, tabulated_data
from .model import ModelParams, validate_params
from .pullback import reconstruct, total_energy
from .solver import PicardConfig, blowup_time, max_drift, solve_data, write_grid
from .state import write_snapshot
from .tangent import TangentBundle, linear_path_tangent, zero_bundle

COMMANDS = ("solve", "reconstruct", "metric", "gronwall", "compare", "verify")

DEFAULTS: Dict = {
    "params": {"alpha": 1.0, "gamma": 4.0},
    "data": {"fixture": "F1"},
    "pair": {"fixture": None, "bump": [1e-3, 0.05, 0.1]},
    "solver": {"h": 0.01, "T": 0.25, "picard_tol": 1e-13, "picard_max_iter": 60,
               "scheme": "adams4", "project": False},
    "metric": {"delta": 0.1, "kappa": None, "mode": "optimize", "lambda_samples": 5,
               "times": None, "n_times": 6, "coarsen": 1},
    "compare": {"constants": {"sobolev": 0.02, "l1": 20.0, "kr": 1000.0}, "convention": "max",
                "sobolev_dx": 1e-3},
    "verify": {"energy_tol": 5e-3, "constraint_tol": 2e-3},
    "outputs": {"directory": "out"},
}


@dataclass
class RunConfig:
    params: ModelParams
    data: InitialData
    pair: InitialData
    solver: Dict
    metric: Dict
    compare: Dict
    verify: Dict
    out_dir: str

    @property
    def h(self) -> float:
        return float(self.solver["h"])

    @property
    def T(self) -> float:
        return float(self.solver["T"])

    @property
    def picard(self) -> PicardConfig:
        return PicardConfig(max_iter=int(self.solver["picard_max_iter"]), tol_fix=float(self.solver["picard_tol"]))

    def times(self) -> List[float]:
        if self.metric.get("times") is not None:
            return [float(t) for t in self.metric["times"]]
        return np.linspace(0.0, self.T, int(self.metric["n_times"])).tolist()

    def kappa(self):
        k = self.metric.get("kappa")
        return None if k is None else np.asarray(k, dtype=float)


def _merge(base: Dict, extra: Dict, path: str = "") -> Dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown configuration field '{where}'")
        if isinstance(base[key], dict) and key not in ("constants",):
            if not isinstance(val, dict):
                raise ConfigError(f"field '{where}' must be an object")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = val
    return out


def _apply_override(cfg: Dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"override '{item}' is not of the form key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node:
            raise ConfigError(f"unknown configuration field '{key}'")
        node = node[p]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigError(f"unknown configuration field '{key}'")
    node[parts[-1]] = value


def _load_table(path: str, field_name: str) -> np.ndarray:
    if not os.path.exists(path):
        raise ConfigError(f"file for '{field_name}' not found: {path}")
    try:
        return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise ConfigError(f"cannot parse '{field_name}' file {path}: {exc}") from None


def _build_data(section: Dict, field_name: str, params: ModelParams) -> InitialData:
    if section.get("fixture") is not None:
        name = section["fixture"]
        if name not in FIXTURES:
            raise ConfigError(f"'{field_name}.fixture' must be one of {sorted(FIXTURES)}, got {name!r}")
        # pure-wave fixtures depend on the wave speed, so follow the configured constants
        spec = replace(FIXTURES[name], alpha=params.alpha, gamma=params.gamma)
        return spec.build()
    if "n0" in section and "n1" in section:
        t0 = _load_table(section["n0"], field_name + ".n0")
        t1 = _load_table(section["n1"], field_name + ".n1")
        if t0.shape[1] != 4 or t1.shape != t0.shape or not np.allclose(t0[:, 0], t1[:, 0]):
            raise ConfigError(f"'{field_name}' tables need matching columns x,c1,c2,c3")
        return tabulated_data(t0[:, 0], t0[:, 1:], t1[:, 1:], name=os.path.basename(section["n0"]))
    raise ConfigError(f"'{field_name}' needs either 'fixture' or both 'n0' and 'n1' file paths")


def load_config(path: Optional[str], overrides: Sequence[str] = (), out: Optional[str] = None) -> RunConfig:
    """Read, merge with the defaults, apply overrides and validate."""
    raw: Dict = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    data_section = raw.pop("data", None)
    pair_section = raw.pop("pair", None)
    cfg = _merge({k: v for k, v in DEFAULTS.items() if k not in ("data", "pair")}, raw)
    cfg["data"] = dict(DEFAULTS["data"]) if data_section is None else dict(data_section)
    cfg["pair"] = dict(DEFAULTS["pair"], **(pair_section or {}))
    for item in overrides:
        _apply_override(cfg, item)
    try:
        params = validate_params(cfg["params"]["alpha"], cfg["params"]["gamma"])
    except (TypeError, KeyError):
        raise ConfigError("'params' needs numeric 'alpha' and 'gamma'") from None
    for key in ("h", "T"):
        v = cfg["solver"][key]
        if not isinstance(v, (int, float)) or not v > 0:
            raise ConfigError(f"'solver.{key}' must be a positive number")
    if cfg["metric"]["mode"] not in ("zero_shift", "optimize"):
        raise ConfigError("'metric.mode' must be 'zero_shift' or 'optimize'")
    data = _build_data(cfg["data"], "data", params)
    pair_cfg = cfg["pair"]
    if pair_cfg.get("fixture") is not None or "n0" in pair_cfg:
        pair = _build_data(pair_cfg, "pair", params)
    else:
        bump = pair_cfg.get("bump")
        if cfg["data"].get("fixture") is None or not (isinstance(bump, list) and len(bump) == 3):
            raise ConfigError("'pair' needs a fixture, files, or 'bump' [eps, centre, width] on a fixture")
        spec = replace(FIXTURES[cfg["data"]["fixture"]], alpha=params.alpha, gamma=params.gamma)
        pair = perturbed(spec, *map(float, bump))
    out_dir = out if out is not None else cfg["outputs"]["directory"]
    return RunConfig(params, data, pair, cfg["solver"], cfg["metric"], cfg["compare"], cfg["verify"], out_dir)


# --------------------------------------------------------------------------
# commands


def _solve(cfg: RunConfig, data: InitialData, like=None):
    return solve_data(data, cfg.params, cfg.h, cfg.T, picard=cfg.picard, project=bool(cfg.solver["project"]),
                      scheme=cfg.solver["scheme"], like=like)


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(metric._jsonable(obj), indent=2, sort_keys=True))
        fh.write("\n")


def cmd_solve(cfg: RunConfig) -> int:
    grid = _solve(cfg, cfg.data)
    write_grid(grid, os.path.join(cfg.out_dir, "solution"))
    summary = {"N": grid.N, "K": grid.K, "h": grid.h, "t_complete": grid.t_complete(),
               "blowup_time": blowup_time(grid), "constraint_drift": max_drift(grid)}
    _write_json(os.path.join(cfg.out_dir, "solve_summary.json"), summary)
    return 0


def _times_within(cfg: RunConfig, grid) -> List[float]:
    tmax = grid.t_complete()
    return [t for t in cfg.times() if t <= tmax]


def cmd_reconstruct(cfg: RunConfig) -> int:
    grid = _solve(cfg, cfg.data)
    index = []
    for k, t in enumerate(_times_within(cfg, grid)):
        name = f"snapshot_{k:03d}.csv"
        write_snapshot(reconstruct(grid, t), os.path.join(cfg.out_dir, name), cfg.params)
        index.append({"file": name, "t": t})
    _write_json(os.path.join(cfg.out_dir, "snapshots.json"), index)
    return 0


def cmd_metric(cfg: RunConfig) -> int:
    times = cfg.times()
    kappa, delta = cfg.kappa(), float(cfg.metric["delta"])
    dist = metric.distance(cfg.data, cfg.pair, times, cfg.params, cfg.h,
                           samples=int(cfg.metric["lambda_samples"]), kappa=kappa, delta=delta)
    # physical norm of the initial linear-path tangent at lambda = 0
    grid = _solve(cfg, cfg.pair)
    snap = reconstruct(grid, 0.0)
    b0 = linear_path_tangent(cfg.data, cfg.pair, 0.0, cfg.params, snap.x)
    pot = metric.potentials(snap, cfg.params)
    res = metric.tangent_norm(b0, snap, pot, cfg.params, mode=cfg.metric["mode"], kappa=kappa, delta=delta,
                              coarsen=int(cfg.metric["coarsen"]))
    kap = metric.default_kappa(delta) if kappa is None else kappa
    report = metric.MetricReport(I=res.terms.I.tolist(), kappa=kap.tolist(), delta=delta, weighted=res.value,
                                 flags=res.flags,
                                 meta={"mode": res.mode, "zero_shift_value": res.zero_shift_value,
                                       "distance": {"t": dist["taus"], "value": dist["values"]},
                                       "h": cfg.h, "dataA": cfg.data.name, "dataB": cfg.pair.name})
    with open(os.path.join(cfg.out_dir, "metric_report.json"), "w") as fh:
        fh.write(report.to_json() + "\n")
    return 0


def cmd_gronwall(cfg: RunConfig) -> int:
    rep = metric.gronwall_verify(cfg.data, cfg.pair, cfg.params, cfg.T, n_times=int(cfg.metric["n_times"]),
                                 h=cfg.h, kappa=cfg.kappa(), delta=float(cfg.metric["delta"]))
    with open(os.path.join(cfg.out_dir, "gronwall.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        cols = ["t", "value", "ratio", "a", "G", "h1_ratio"]
        w.writerow(cols)
        for row in rep.gronwall:
            w.writerow([format(float(row[c]), ".17g") for c in cols])
    with open(os.path.join(cfg.out_dir, "gronwall_report.json"), "w") as fh:
        fh.write(rep.to_json() + "\n")
    return 0


def cmd_compare(cfg: RunConfig) -> int:
    reps = compare.compare_pair(cfg.data, cfg.pair, cfg.params, cfg.h, cfg.times(),
                                samples=int(cfg.metric["lambda_samples"]), kappa=cfg.kappa(),
                                delta=float(cfg.metric["delta"]), constants=cfg.compare["constants"],
                                sobolev_dx=float(cfg.compare["sobolev_dx"]),
                                kr_convention=cfg.compare["convention"])
    with open(os.path.join(cfg.out_dir, "comparison_report.json"), "w") as fh:
        fh.write(compare.reports_json(reps) + "\n")
    return 0


def verify_checks(cfg: RunConfig) -> List[Dict]:
    """Invariant checks on the configured data; each entry has name, ok, value."""
    checks: List[Dict] = []

    def add(name, ok, value):
        checks.append({"name": name, "ok": bool(ok), "value": float(value)})

    xs = np.linspace(cfg.data.support[0] - 0.1, cfg.data.support[1] + 0.1, 401)
    try:
        cfg.data.check(xs)
        add("initial data on the sphere and tangent", True, 0.0)
    except NematicError:
        add("initial data on the sphere and tangent", False, 1.0)
    grid = _solve(cfg, cfg.data)
    E0 = cfg.data.energy(cfg.params)
    times = _times_within(cfg, grid)
    defect = max(abs(total_energy(grid, t) - E0) for t in times) / max(E0, 1.0)
    add("energy conservation", defect <= cfg.verify["energy_tol"], defect)
    drift = max(max_drift(grid).values())
    add("algebraic constraints", drift <= cfg.verify["constraint_tol"], drift)
    U = grid.U
    pq = float(np.nanmin(np.minimum(U[..., P], U[..., Q])))
    add("p and q stay positive", pq > 0, pq)
    snap = reconstruct(grid, times[-1])
    pot = metric.potentials(snap, cfg.params)
    zb = zero_bundle(snap.x, snap.time)
    zval = metric.tangent_norm(zb, snap, pot, cfg.params).value
    add("zero tangent has zero norm", zval == 0.0, zval)
    rng = np.random.default_rng(0)
    m = len(snap.x)
    b = TangentBundle(snap.time, snap.x, rng.normal(size=(m, 3)), rng.normal(size=(m, 3)),
                      rng.normal(size=(m, 3)), np.zeros(m), np.zeros(m))
    r1 = metric.tangent_norm(b, snap, pot, cfg.params, mode="optimize", coarsen=max(1, m // 50))
    r2 = metric.tangent_norm(b.scaled(-2.5), snap, pot, cfg.params, mode="optimize", coarsen=max(1, m // 50))
    add("optimized norm <= zero-shift norm", r1.value <= r1.zero_shift_value, r1.zero_shift_value - r1.value)
    hom = abs(r2.value - 2.5 * r1.value) / max(r1.value, 1e-300)
    add("norm homogeneity", hom <= 1e-12, hom)
    cdf = compare.energy_cdf(grid, times[-1])
    add("KR distance of a measure to itself", compare.kr_distance(cdf, cdf) == 0.0,
        compare.kr_distance(cdf, cdf))
    add("L1 distance of a snapshot to itself", compare.l1_distance(snap, snap) == 0.0,
        compare.l1_distance(snap, snap))
    return checks


def cmd_verify(cfg: RunConfig) -> int:
    checks = verify_checks(cfg)
    width = max(len(c["name"]) for c in checks)
    for c in checks:
        print(f"{c['name']:<{width}}  {'PASS' if c['ok'] else 'FAIL'}  {c['value']:.3e}")
    _write_json(os.path.join(cfg.out_dir, "verify.json"), checks)
    return 0 if all(c["ok"] for c in checks) else 1


HANDLERS = {"solve": cmd_solve, "reconstruct": cmd_reconstruct, "metric": cmd_metric,
            "gronwall": cmd_gronwall, "compare": cmd_compare, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nematic-waves", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON configuration file (defaults are used for missing fields)")
    ap.add_argument("--out", help="output directory (overrides outputs.directory)")
    ap.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                    help="replace one configuration entry, e.g. solver.h=0.005")
    return ap


def _error(exc: Exception) -> int:
    code = getattr(exc, "code", type(exc).__name__)
    print(json.dumps({"error": code, "message": str(exc)}), file=sys.stderr)
    return 3 if isinstance(exc, ConfigError) else 2


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.override, args.out)
        os.makedirs(cfg.out_dir, exist_ok=True)
        return HANDLERS[args.command](cfg)
    except NematicError as exc:
        return _error(exc)


if __name__ == "__main__":
    sys.exit(main())
