"""Physical snapshots at fixed time: Riemann variables, energy densities and
residuals of the directional energy balance laws."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import GridMismatch, UnitNormViolation
from .model import ModelParams, speed, validate_params

TOL_UNIT = 1e-8

SNAPSHOT_COLUMNS = ["x", "n1", "n2", "n3", "nt1", "nt2", "nt3",
                    "R1", "R2", "R3", "S1", "S2", "S3"]


def _trapz(y, x):
    return float(np.trapezoid(y, x)) if len(x) > 1 else 0.0


@dataclass
class PhysicalSnapshot:
    """Fields x -> (n, n_t, R, S) at a fixed time.

    Vector fields have shape ``(len(x), 3)``. ``concentration`` is an optional
    boolean mask of nodes inside detected energy-concentration intervals.
    """

    time: float
    x: np.ndarray
    n: np.ndarray
    nt: np.ndarray
    R: np.ndarray
    S: np.ndarray
    params: Optional[ModelParams] = None
    concentration: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        for name in ("n", "nt", "R", "S"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (len(self.x), 3):
                raise GridMismatch(f"{name} has shape {arr.shape}, expected ({len(self.x)}, 3)")
            setattr(self, name, arr)

    def validate(self, tol_unit: float = TOL_UNIT, tol_orth: Optional[float] = None) -> None:
        """Check the snapshot invariants; raise on violation."""
        tol_orth = tol_unit if tol_orth is None else tol_orth
        if len(self.x) > 1 and not np.all(np.diff(self.x) > 0):
            raise GridMismatch("grid_x must be strictly increasing")
        dev = np.max(np.abs(np.linalg.norm(self.n, axis=1) - 1.0))
        if dev > tol_unit:
            raise UnitNormViolation(f"max | |n| - 1 | = {dev:.3e} > {tol_unit:.1e}")
        orth = max(np.max(np.abs(np.sum(self.n * self.R, axis=1))),
                   np.max(np.abs(np.sum(self.n * self.S, axis=1))))
        if orth > tol_orth * max(1.0, np.max(np.abs(self.R)), np.max(np.abs(self.S))):
            raise UnitNormViolation(f"n.R or n.S up to {orth:.3e}")
        if np.max(np.abs(self.nt - 0.5 * (self.R + self.S))) > tol_orth * max(1.0, np.max(np.abs(self.nt))):
            raise UnitNormViolation("nt != (R+S)/2")

    @property
    def nx(self) -> np.ndarray:
        c, _, _ = speed(self.params, self.n[:, 0])
        return (self.R - self.S) / (2 * c[:, None])


@dataclass
class EnergyProfile:
    e_minus: np.ndarray
    e_plus: np.ndarray
    total: float


def decompose(n, nt, nx, params: ModelParams, tol_unit: float = TOL_UNIT):
    """R = n_t + c(n1) n_x, S = n_t - c(n1) n_x. Works on single vectors or stacks."""
    n = np.asarray(n, dtype=float)
    dev = np.max(np.abs(np.linalg.norm(n, axis=-1) - 1.0))
    if dev > tol_unit:
        raise UnitNormViolation(f"| |n| - 1 | = {dev:.3e}")
    c, _, _ = speed(params, n[..., 0])
    c = np.asarray(c)[..., None]
    nt = np.asarray(nt, dtype=float)
    nx = np.asarray(nx, dtype=float)
    return nt + c * nx, nt - c * nx


def reconstruct_gradients(R, S, n1, params: ModelParams):
    """Inverse of :func:`decompose`: returns (n_t, n_x)."""
    R = np.asarray(R, dtype=float)
    S = np.asarray(S, dtype=float)
    c, _, _ = speed(params, np.asarray(n1, dtype=float))
    c = np.asarray(c)[..., None]
    return 0.5 * (R + S), (R - S) / (2 * c)


def energy_profile(snapshot: PhysicalSnapshot) -> EnergyProfile:
    em = np.sum(snapshot.R ** 2, axis=1)
    ep = np.sum(snapshot.S ** 2, axis=1)
    return EnergyProfile(em, ep, _trapz(em + ep, snapshot.x))


def balance_residual(snapA: PhysicalSnapshot, snapB: PhysicalSnapshot, params: ModelParams):
    """Residuals of the backward/forward energy balance laws between two
    snapshots on a shared grid, centred at the midpoint time.

    Time derivative by the forward difference A -> B, spatial terms by centred
    differences of the A/B average.
    """
    if snapA.x.shape != snapB.x.shape or not np.array_equal(snapA.x, snapB.x):
        raise GridMismatch("balance_residual needs snapshots on a shared grid")
    dt = snapB.time - snapA.time
    if not dt > 0:
        raise GridMismatch("snapA.time must precede snapB.time")
    x = snapA.x

    def parts(s):
        c, cp, _ = speed(params, s.n[:, 0])
        R2 = np.sum(s.R ** 2, axis=1)
        S2 = np.sum(s.S ** 2, axis=1)
        src = cp / (2 * c) * (R2 * s.S[:, 0] - s.R[:, 0] * S2)
        return R2, S2, c * R2, c * S2, src

    a = parts(snapA)
    b = parts(snapB)
    R2t = (b[0] - a[0]) / dt
    S2t = (b[1] - a[1]) / dt
    cR2x = np.gradient(0.5 * (a[2] + b[2]), x)
    cS2x = np.gradient(0.5 * (a[3] + b[3]), x)
    src = 0.5 * (a[4] + b[4])
    return R2t - cR2x - src, S2t + cS2x + src


# --------------------------------------------------------------------------
# serialisation


def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_snapshot(snapshot: PhysicalSnapshot, path, params: Optional[ModelParams] = None) -> None:
    """Write ``<path>`` (CSV) and ``<path>.json`` (sidecar)."""
    path = Path(path)
    params = params or snapshot.params
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SNAPSHOT_COLUMNS)
        for k in range(len(snapshot.x)):
            row = [snapshot.x[k], *snapshot.n[k], *snapshot.nt[k], *snapshot.R[k], *snapshot.S[k]]
            w.writerow([_fmt(v) for v in row])
    side = {
        "time": snapshot.time,
        "params": params.to_dict() if params is not None else None,
        "grid_size": int(len(snapshot.x)),
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)


def read_snapshot(path) -> PhysicalSnapshot:
    path = Path(path)
    with open(str(path) + ".json") as fh:
        side = json.load(fh)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    params = validate_params(**side["params"]) if side.get("params") else None
    return PhysicalSnapshot(
        time=float(side["time"]), x=data[:, 0], n=data[:, 1:4], nt=data[:, 4:7],
        R=data[:, 7:10], S=data[:, 10:13], params=params,
    )
