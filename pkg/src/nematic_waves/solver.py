"""Anti-diagonal marching solver for the semilinear system in (X, Y).

Grid nodes sit at ``X = X0 + i h``, ``Y = Y0 + j h`` with ``0 <= i, j <= N``
and the initial curve on ``i + j = N``. Nodes are stored by diagonal level
``k = i + j - N`` (t grows with k), so ``U[k, i]`` holds node ``(i, N + k - i)``;
entries with ``i < k`` lie outside the triangle and are NaN.

Each node is obtained by integrating along its two characteristics: Y-fields
from the nodes below it on the same column, X-fields from the nodes to its left
on the same row. The default quadrature is the four-point Adams-Moulton rule
(trapezoid on the first diagonal, three-point rule on the second), with the
implicit node value found by Picard iteration. Fields transported in Y are
n, l, h1 and p, those in X are m, h2 and q, and x, t average both routes.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .chart import (FIELD_NAMES, H1, H2, NF, P, Q, TT, XX, X_FIELDS, Y_FIELDS,
                    BoundaryCurve, N_, L_, M_, constraint_residuals, rhs_arrays)
from .errors import GridMismatch, InvariantBlowup, PicardDivergence
from .fixtures import InitialData
from .model import ModelParams, validate_params

log = logging.getLogger(__name__)

H_SING = 1e-3


@dataclass
class PicardConfig:
    max_iter: int = 60
    tol_fix: float = 1e-13


@dataclass
class ChartGrid:
    U: np.ndarray  # (K + 1, N + 1, NF)
    X0: float
    Y0: float
    h: float
    params: ModelParams
    meta: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.U.shape[1] - 1

    @property
    def K(self) -> int:
        return self.U.shape[0] - 1

    def X_of(self, i):
        return self.X0 + np.asarray(i) * self.h

    def Y_of(self, k, i):
        return self.Y0 + (self.N + np.asarray(k) - np.asarray(i)) * self.h

    def field(self, name: str) -> np.ndarray:
        return self.U[..., FIELD_NAMES.index(name)]

    @property
    def valid(self) -> np.ndarray:
        k = np.arange(self.K + 1)[:, None]
        i = np.arange(self.N + 1)[None, :]
        return i >= k

    def column(self, i: int):
        """Nodes on X = X_i ordered by increasing Y: (Y values, states)."""
        kmax = min(self.K, i)
        ks = np.arange(kmax + 1)
        return self.Y_of(ks, i), self.U[: kmax + 1, i]

    def row(self, j: int):
        """Nodes on Y = Y_j ordered by increasing X: (X values, states)."""
        i = np.arange(self.N + 1)
        k = i + j - self.N
        ok = (k >= 0) & (k <= self.K) & (i >= k)
        i, k = i[ok], k[ok]
        return self.X_of(i), self.U[k, i]

    def same_layout(self, other: "ChartGrid") -> bool:
        return (self.U.shape == other.U.shape and np.isclose(self.h, other.h)
                and np.isclose(self.X0, other.X0) and np.isclose(self.Y0, other.Y0))

    def t_range(self):
        t = self.U[..., TT][self.valid]
        return float(np.nanmin(t)), float(np.nanmax(t))

    def t_complete(self) -> float:
        """Largest tau whose level curve lies inside the solved band."""
        return float(np.nanmin(self.U[self.K, self.K:, TT]))


# Adams-Moulton weights (new value first); the first levels use the lower
# orders because fewer previous nodes exist along each characteristic.
AM_COEFFS = {
    "trapezoid": [(0.5, 0.5)],
    "adams4": [(0.5, 0.5), (5 / 12, 8 / 12, -1 / 12), (9 / 24, 19 / 24, -5 / 24, 1 / 24)],
}


def march(levels: List[np.ndarray], rhs: Callable, y_fields, x_fields, both_fields,
          h: float, K: int, *, scheme: str = "adams4", picard: Optional[PicardConfig] = None,
          after_level: Optional[Callable] = None, done: Optional[Callable] = None):
    """Generic diagonal marcher shared by the solution and tangent fields.

    ``levels`` holds the already known diagonals (at least level 0, as arrays of
    shape (N + 1 - k, nf)). ``rhs(k, V)`` returns ``(DY, DX)`` for the states
    ``V`` of diagonal ``k``. Fields in ``y_fields`` are integrated along Y
    (from the nodes below), ``x_fields`` along X (from the nodes to the left)
    and ``both_fields`` take the mean of the two routes. Returns the list of
    levels and the largest number of Picard sweeps used.
    """
    picard = picard or PicardConfig()
    coeffs = AM_COEFFS[scheme]
    N = len(levels[0]) - 1
    levels = list(levels)
    rhs_y: List[np.ndarray] = []
    rhs_x: List[np.ndarray] = []
    for k, lev in enumerate(levels):
        DYl, DXl = rhs(k, lev)
        rhs_y.append(DYl)
        rhs_x.append(DXl)
    both_fields = list(both_fields)
    worst_iter = 0
    for k in range(len(levels), K + 1):
        width = N + 1 - k
        if width <= 0:
            break
        a = coeffs[min(k, len(coeffs)) - 1]  # (new, previous, previous-1, ...)
        # explicit part of the Y-route (south chain) and of the X-route (west chain);
        # node i of level k - r sits at position i - (k - r), i.e. offset r on the
        # south chain and offset 0 on the west chain
        accY = levels[k - 1][1:].copy()
        accX = levels[k - 1][:-1].copy()
        for r in range(1, len(a)):
            accY += h * a[r] * rhs_y[k - r][r: r + width]
            accX += h * a[r] * rhs_x[k - r][0: width]

        def combine(DYn, DXn):
            out = np.empty_like(accY)
            out[:, y_fields] = accY[:, y_fields] + h * a[0] * DYn[:, y_fields]
            out[:, x_fields] = accX[:, x_fields] + h * a[0] * DXn[:, x_fields]
            for f in both_fields:
                out[:, f] = 0.5 * (accY[:, f] + accX[:, f] + h * a[0] * (DYn[:, f] + DXn[:, f]))
            return out

        Pn = combine(rhs_y[k - 1][1:], rhs_x[k - 1][:-1])
        for it in range(picard.max_iter):
            DYP, DXP = rhs(k, Pn)
            new = combine(DYP, DXP)
            delta = np.max(np.abs(new - Pn) / (1.0 + np.abs(new)))
            Pn = new
            if not np.isfinite(delta):
                raise PicardDivergence(f"non-finite iterate on level {k}")
            if delta < picard.tol_fix:
                break
        else:
            raise PicardDivergence(
                f"Picard iteration did not converge on level {k} (last update {delta:.2e}); reduce the step")
        worst_iter = max(worst_iter, it + 1)
        if after_level is not None:
            after_level(k, Pn)
        levels.append(Pn)
        DYk, DXk = rhs(k, Pn)
        rhs_y.append(DYk)
        rhs_x.append(DXk)
        if done is not None and done(k, Pn):
            break
    return levels, worst_iter


def solve_rectangle(boundary: BoundaryCurve, params: ModelParams, *,
                    steps: Optional[float] = None,
                    picard: Optional[PicardConfig] = None,
                    t_max: Optional[float] = None,
                    max_levels: Optional[int] = None,
                    margin_levels: int = 2,
                    project: bool = False,
                    h_sing: float = H_SING,
                    scheme: str = "adams4",
                    data: Optional[InitialData] = None,
                    start_refine: int = 4) -> ChartGrid:
    """March the semilinear system above the initial curve.

    The rectangle is ``[x_0, x_N] x [-x_N, -x_0]`` from the boundary nodes, and
    the step equals their spacing. Marching stops after ``max_levels``
    diagonals, when the triangle is complete, or ``margin_levels`` diagonals
    after every node of a diagonal has ``t > t_max``.

    When the Cauchy ``data`` are supplied, the first two diagonals (where the
    multistep rule lacks history) are computed on a grid ``start_refine`` times
    finer and sampled, which keeps the start-up error below the multistep
    truncation error.
    """
    picard = picard or PicardConfig()
    xs = boundary.parameter
    N = len(xs) - 1
    h = float(xs[1] - xs[0])
    if np.max(np.abs(np.diff(xs) - h)) > 1e-9 * max(1.0, abs(h)):
        raise ValueError("boundary nodes must be uniformly spaced")
    if steps is not None and not np.isclose(steps, h, rtol=1e-9):
        raise ValueError(f"step {steps} differs from the boundary spacing {h}")
    K = N if max_levels is None else min(N, int(max_levels))

    levels: List[np.ndarray] = [boundary.U.copy()]
    if data is not None and scheme == "adams4" and start_refine > 1 and K >= 2:
        levels += _fine_start(data, params, xs, start_refine, picard)

    def after_level(k, Pn):
        if project:
            _project(Pn)
        if np.any(Pn[:, P] <= 0) or np.any(Pn[:, Q] <= 0):
            raise InvariantBlowup(f"p or q became non-positive on level {k}")

    stop = {"at": None}

    def done(k, Pn):
        if t_max is not None and stop["at"] is None and np.min(Pn[:, TT]) > t_max:
            stop["at"] = k + margin_levels
        return stop["at"] is not None and k >= stop["at"]

    levels, worst_iter = march(levels, lambda k, V: rhs_arrays(V, params), Y_FIELDS, X_FIELDS,
                               [XX, TT], h, K, scheme=scheme, picard=picard,
                               after_level=after_level, done=done)

    Kdone = len(levels) - 1
    U = np.full((Kdone + 1, N + 1, NF), np.nan)
    for k, lev in enumerate(levels):
        U[k, k:] = lev
    grid = ChartGrid(U, X0=float(xs[0]), Y0=float(-xs[-1]), h=h, params=params)
    res = constraint_residuals(U)
    grid.meta.update({
        "steps": {"dX": h, "dY": h},
        "max_constraint_residual": float(max(np.nanmax(np.abs(v)) for v in res.values())),
        "picard_max_iterations": int(worst_iter),
        "projected": bool(project),
        "scheme": scheme,
        "h_sing": h_sing,
        "singular_nodes": int(np.sum((U[..., H1] < h_sing) | (U[..., H2] < h_sing))),
    })
    return grid


def _fine_start(data, params, xs, m, picard):
    from .chart import boundary_data

    fine = xs[0] + (xs[1] - xs[0]) / m * np.arange(m * (len(xs) - 1) + 1)
    g = solve_rectangle(boundary_data(data, params, fine), params, picard=picard,
                        max_levels=2 * m, scheme="adams4", data=None)
    return [g.U[m * k, m * k::m].copy() for k in (1, 2)]


def _project(V):
    """Optional projection back onto |n| = 1, n.l = n.m = 0, |l|^2 = h1(1-h1)."""
    n = V[:, N_] / np.linalg.norm(V[:, N_], axis=1)[:, None]
    V[:, N_] = n
    for sl, hi in ((L_, H1), (M_, H2)):
        v = V[:, sl] - np.sum(V[:, sl] * n, axis=1)[:, None] * n
        target = np.sqrt(np.clip(V[:, hi] * (1 - V[:, hi]), 0, None))
        norm = np.linalg.norm(v, axis=1)
        scale = np.where(norm > 0, target / np.where(norm > 0, norm, 1), 0.0)
        V[:, sl] = v * scale[:, None]


def plan_domain(data: InitialData, params: ModelParams, T: float, h: float,
                margin: float = 0.05):
    """Initial-line interval [xL, xR] (a multiple of ``h`` long) such that the
    band up to time T contains every wave launched from the support.

    The edge characteristics travel at the speed of the constant far state, the
    waves at most at c1.
    """
    a, b = data.support
    n_far = data.n0(np.array([a - 1.0, b + 1.0]))
    c_far = np.sqrt(params.alpha + (params.gamma - params.alpha) * n_far[:, 0] ** 2)
    xL = a - (params.c1 + c_far[0]) * T - margin
    xR = b + (params.c1 + c_far[1]) * T + margin
    xL = np.floor(xL / h) * h
    N = int(np.ceil((xR - xL) / h - 1e-9))
    return xL, N


def solve_data(data: InitialData, params: ModelParams, h: float, T: float,
               picard: Optional[PicardConfig] = None, project: bool = False,
               margin: float = 0.05, scheme: str = "adams4",
               like: Optional[ChartGrid] = None) -> ChartGrid:
    """Convenience pipeline: plan the domain, assign boundary data, march to T.

    With ``like`` the initial nodes and the number of diagonals are copied from
    that grid, so that the two solutions can be differenced node by node.
    """
    from .chart import boundary_data

    if like is not None:
        xs = like.U[0, :, XX].copy()  # the exact nodes, not X0 + i h
        bc = boundary_data(data, params, xs)
        grid = solve_rectangle(bc, params, picard=picard, max_levels=like.K, project=project,
                               scheme=scheme, data=data)
        if grid.K != like.K:
            raise GridMismatch(f"solution stopped after {grid.K} of {like.K} diagonals")
        grid.meta["data"] = data.name
        grid.meta["T"] = like.meta.get("T", T)
        return grid
    xL, N = plan_domain(data, params, T, h, margin)
    xs = xL + h * np.arange(N + 1)
    bc = boundary_data(data, params, xs)
    grid = solve_rectangle(bc, params, picard=picard, t_max=T, project=project, scheme=scheme,
                           data=data)
    grid.meta["data"] = data.name
    grid.meta["T"] = T
    return grid


def estimate_singularity(grid: ChartGrid, h_sing: float = H_SING):
    """Nodes with h1 < h_sing or h2 < h_sing as (X, Y, t, x) tuples, ordered by t.

    ``h_sing <= 0`` disables detection (scheme undershoot can leave h1 or h2
    slightly negative at a crossing).
    """
    if h_sing <= 0:
        return []
    U = grid.U
    with np.errstate(invalid="ignore"):
        mask = (U[..., H1] < h_sing) | (U[..., H2] < h_sing)
    ks, iis = np.nonzero(mask)
    out = [(float(grid.X_of(i)), float(grid.Y_of(k, i)), float(U[k, i, TT]), float(U[k, i, XX]))
           for k, i in zip(ks, iis)]
    out.sort(key=lambda r: (r[2], r[3]))
    return out


def blowup_time(grid: ChartGrid, h_sing: float = H_SING) -> Optional[float]:
    pts = estimate_singularity(grid, h_sing)
    return pts[0][2] if pts else None


def cross_derivative_residual(grid: ChartGrid) -> float:
    """max | dn/dX (finite difference of stored n) - p l / (2c) | at interior
    nodes, with both sides sampled at X-edge midpoints."""
    U = grid.U
    h = grid.h
    worst = 0.0
    for k in range(grid.K + 1):
        # along a row (fixed Y): node (i, j) and (i+1, j) sit on levels k and k+1
        if k + 1 > grid.K:
            break
        i = np.arange(k, grid.N)
        a = U[k, i]
        b = U[k + 1, i + 1]
        fd = (b[:, N_] - a[:, N_]) / h
        _, DXa = rhs_arrays(a, grid.params)
        _, DXb = rhs_arrays(b, grid.params)
        mid = 0.5 * (DXa[:, N_] + DXb[:, N_])
        worst = max(worst, float(np.nanmax(np.abs(fd - mid))))
    return worst


def max_drift(grid: ChartGrid) -> dict:
    res = constraint_residuals(grid.U)
    return {k: float(np.nanmax(np.abs(v))) for k, v in res.items()}


# --------------------------------------------------------------------------
# grid dump: <stem>.grid.csv + <stem>.grid.json


def write_grid(grid: ChartGrid, stem) -> None:
    stem = str(stem)
    with open(stem + ".grid.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "i", "X", "Y"] + FIELD_NAMES)
        for k in range(grid.K + 1):
            for i in range(k, grid.N + 1):
                row = [grid.X_of(i), grid.Y_of(k, i), *grid.U[k, i]]
                w.writerow([k, i] + [format(float(v), ".17g") for v in row])
    meta = {
        "X0": grid.X0, "Y0": grid.Y0, "h": grid.h, "N": grid.N, "K": grid.K,
        "params": grid.params.to_dict(),
        "meta": {k: v for k, v in grid.meta.items() if isinstance(v, (int, float, str, dict, list, bool))},
    }
    with open(stem + ".grid.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def read_grid(stem) -> ChartGrid:
    stem = str(stem)
    with open(stem + ".grid.json") as fh:
        meta = json.load(fh)
    raw = np.loadtxt(stem + ".grid.csv", delimiter=",", skiprows=1, ndmin=2)
    U = np.full((meta["K"] + 1, meta["N"] + 1, NF), np.nan)
    U[raw[:, 0].astype(int), raw[:, 1].astype(int)] = raw[:, 4:]
    return ChartGrid(U, meta["X0"], meta["Y0"], meta["h"], validate_params(**meta["params"]),
                     dict(meta.get("meta", {})))
