"""First-order perturbations of a solution.

Two representations are provided.

Physical route: vertical displacements ``(v, r, s)`` of ``(n, R, S)`` and the
horizontal shifts ``w, z`` of backward and forward characteristics. They obey
linear transport equations along the characteristics of the base solution,
which are integrated on the chart grid with the same Adams-Moulton marcher as
the solution itself. The coefficients contain ``R_x`` and ``S_x``, so this
route is limited to the region where ``h1`` and ``h2`` stay away from zero.

Chart route: the perturbation of every chart field,
``(N, L, M, H1, H2, P, Q, X, T)``, taken as a finite difference of two chart
solutions on a common (X, Y) grid. All chart fields are smooth, so this route
works across cusps.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .chart import H1, H2, L_, M_, N_, P, Q, TT, XX
from .errors import GridMismatch, SingularRegionCrossed, TauOutOfRange
from .fixtures import InitialData
from .model import ModelParams, speed
from .pullback import LevelCurve, advancing_mask, level_set
from .solver import H_SING, ChartGrid, PicardConfig, march

# packed layout of the physical tangent fields marched on the chart grid
TV_ = slice(0, 3)
TR_ = slice(3, 6)
TS_ = slice(6, 9)
TW, TZ = 9, 10
TNF = 11
_T_Y_FIELDS = np.r_[3:6, TW]
_T_X_FIELDS = np.r_[6:9, TZ]
_T_BOTH_FIELDS = [0, 1, 2]

BUNDLE_COLUMNS = (["x"] + [f"v{i}" for i in (1, 2, 3)] + [f"r{i}" for i in (1, 2, 3)]
                  + [f"s{i}" for i in (1, 2, 3)] + ["w", "z", "wx", "zx"]
                  + [f"rstar{i}" for i in (1, 2, 3)] + [f"sstar{i}" for i in (1, 2, 3)])


@dataclass
class TangentBundle:
    """Perturbation fields over the nodes ``x`` of a snapshot at ``time``."""

    time: float
    x: np.ndarray
    v: np.ndarray
    r: np.ndarray
    s: np.ndarray
    w: np.ndarray
    z: np.ndarray
    wx: Optional[np.ndarray] = None
    zx: Optional[np.ndarray] = None
    rstar: Optional[np.ndarray] = None
    sstar: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        m = len(self.x)
        for name in ("v", "r", "s", "rstar", "sstar"):
            val = getattr(self, name)
            if val is not None:
                val = np.asarray(val, dtype=float)
                if val.shape != (m, 3):
                    raise GridMismatch(f"{name} has shape {val.shape}, expected ({m}, 3)")
                setattr(self, name, val)
        for name in ("w", "z", "wx", "zx"):
            val = getattr(self, name)
            if val is not None:
                val = np.broadcast_to(np.asarray(val, dtype=float), (m,)).copy()
                setattr(self, name, val)
        if self.wx is None:
            self.wx = _ddx(self.w, self.x)
        if self.zx is None:
            self.zx = _ddx(self.z, self.x)

    def scaled(self, factor: float) -> "TangentBundle":
        f = float(factor)
        opt = lambda a: None if a is None else f * a
        return TangentBundle(self.time, self.x.copy(), f * self.v, f * self.r, f * self.s,
                             f * self.w, f * self.z, f * self.wx, f * self.zx,
                             opt(self.rstar), opt(self.sstar), dict(self.meta))

    def with_shifts(self, w, z, wx=None, zx=None) -> "TangentBundle":
        """Same vertical part with new shifts; effective displacements are dropped."""
        return TangentBundle(self.time, self.x.copy(), self.v.copy(), self.r.copy(), self.s.copy(),
                             w, z, wx, zx, None, None, dict(self.meta))


def _ddx(f, x):
    f = np.asarray(f, dtype=float)
    if len(x) < 2:
        return np.zeros_like(f)
    if len(x) < 3:
        return np.gradient(f, x, axis=0, edge_order=1)
    return np.gradient(f, x, axis=0, edge_order=2)


def zero_bundle(x, time: float = 0.0) -> TangentBundle:
    m = len(x)
    z3 = np.zeros((m, 3))
    return TangentBundle(time, np.asarray(x, dtype=float), z3, z3.copy(), z3.copy(),
                         np.zeros(m), np.zeros(m))


# --------------------------------------------------------------------------
# initial tangents


def integrate_v(x, r, s, n, R, S, params: ModelParams) -> np.ndarray:
    """Solve ``v_x = (r - s)/2c - (R - S) c' v1 / 2c^2`` with ``v = 0`` at the
    left node (linear ODE; coefficients interpolated linearly between nodes)."""
    x = np.asarray(x, dtype=float)
    c, cp, _ = speed(params, n[:, 0])
    src = (r - s) / (2 * c[:, None])
    coef = -(R - S) * (cp / (2 * c * c))[:, None]
    if len(x) < 2:
        return np.zeros((len(x), 3))

    def rhs(y, v):
        fs = np.array([np.interp(y, x, src[:, i]) for i in range(3)])
        fc = np.array([np.interp(y, x, coef[:, i]) for i in range(3)])
        return fs + fc * v[0]

    sol = solve_ivp(rhs, (x[0], x[-1]), np.zeros(3), t_eval=x, rtol=1e-10, atol=1e-13,
                    max_step=float(np.min(np.diff(x))) * 4)
    return sol.y.T.copy()


def linear_path_tangent(dataA: InitialData, dataB: InitialData, lam: float,
                        params: ModelParams, xs) -> TangentBundle:
    """Tangent at ``lam`` of the path ``R^lam = lam R_A + (1 - lam) R_B`` (same
    for S) through the Cauchy data, on the nodes ``xs``.

    ``r = R_A - R_B``, ``s = S_A - S_B``, ``v`` from the linear ODE for ``v_x``
    anchored at the left node, and ``w = z = 0``.
    """
    xs = np.asarray(xs, dtype=float)
    if len(xs) > 1 and not np.all(np.diff(xs) > 0):
        raise GridMismatch("nodes must be strictly increasing")
    RA, SA = dataA.riemann(xs, params)
    RB, SB = dataB.riemann(xs, params)
    nA, nB = dataA.n0(xs[:1]), dataB.n0(xs[:1])
    if np.max(np.abs(nA - nB)) > 1e-12:
        raise GridMismatch("the two data differ at the left node; choose a wider interval")
    r, s = RA - RB, SA - SB
    path = linear_rs_data(dataA, dataB, lam, params, xs)
    n = path.n0(xs)
    R, S = path.riemann(xs, params)
    Rl = lam * RA + (1 - lam) * RB
    Sl = lam * SA + (1 - lam) * SB
    v = integrate_v(xs, r, s, n, Rl, Sl, params)
    m = len(xs)
    b = TangentBundle(0.0, xs.copy(), v, r, s, np.zeros(m), np.zeros(m))
    b.meta["lambda"] = float(lam)
    return b


def linear_rs_data(dataA: InitialData, dataB: InitialData, lam: float,
                   params: ModelParams, xs) -> InitialData:
    """Cauchy data whose Riemann variables interpolate linearly between A and B.

    The director is rebuilt from ``n_x = P_n (R - S) / 2c`` starting at the
    left node of ``xs``, where ``P_n`` removes the component along ``n``; the
    projection keeps the rebuilt director on the sphere and ``n_t`` tangent.
    """
    xs = np.asarray(xs, dtype=float)
    lam = float(lam)
    x0, x1 = float(xs[0]), float(xs[-1])

    def riem(y):
        RA, SA = dataA.riemann(y, params)
        RB, SB = dataB.riemann(y, params)
        # B + lam (A - B) is exactly B for every lam when A and B agree
        return RB + lam * (RA - RB), SB + lam * (SA - SB)

    def rhs(y, n):
        R, S = riem(np.array([y]))
        d = (R - S)[0]
        d = d - n * (n @ d) / (n @ n)
        c = np.sqrt(params.alpha + (params.gamma - params.alpha) * min(n[0] * n[0], 1.0))
        return d / (2 * c)

    start = dataA.n0(np.array([x0]))[0]
    sol = solve_ivp(rhs, (x0, x1), start, dense_output=True, rtol=1e-11, atol=1e-13,
                    max_step=float(np.min(np.diff(xs))) * 4 if len(xs) > 1 else np.inf)
    far_right = sol.y[:, -1]

    def n0(y):
        y = np.asarray(y, dtype=float)
        out = np.empty((len(y), 3))
        inside = (y >= x0) & (y <= x1)
        if np.any(inside):
            out[inside] = sol.sol(y[inside]).T
        out[y < x0] = start
        out[y > x1] = far_right
        return out / np.linalg.norm(out, axis=1)[:, None]

    def proj(n, a):
        return a - n * np.sum(n * a, axis=1)[:, None]

    def n0_x(y):
        y = np.asarray(y, dtype=float)
        n = n0(y)
        R, S = riem(y)
        c, _, _ = speed(params, n[:, 0])
        return proj(n, R - S) / (2 * c[:, None])

    def n1(y):
        y = np.asarray(y, dtype=float)
        n = n0(y)
        R, S = riem(y)
        return 0.5 * proj(n, R + S)

    lo = min(dataA.support[0], dataB.support[0])
    hi = max(dataA.support[1], dataB.support[1])
    return InitialData(n0, n0_x, n1, (lo, hi), name=f"path({dataA.name},{dataB.name},{lam:g})")


def data_tangent(data_minus: InitialData, data_plus: InitialData, eps: float,
                 params: ModelParams, xs) -> TangentBundle:
    """Central-difference tangent of a one-parameter family of Cauchy data whose
    members at ``-eps`` and ``+eps`` are given; shifts are zero."""
    xs = np.asarray(xs, dtype=float)
    Rm, Sm = data_minus.riemann(xs, params)
    Rp, Sp = data_plus.riemann(xs, params)
    v = (data_plus.n0(xs) - data_minus.n0(xs)) / (2 * eps)
    m = len(xs)
    return TangentBundle(0.0, xs.copy(), v, (Rp - Rm) / (2 * eps), (Sp - Sm) / (2 * eps),
                         np.zeros(m), np.zeros(m))


def translation_tangent(data: InitialData, params: ModelParams, xs, step: float = 1e-5) -> TangentBundle:
    """Tangent generated by shifting the data to the left, ``n(x + e)``.

    Both families of characteristics move by ``-e``, so ``w = z = -1`` and the
    combination ``v + (R w - S z) / 2c`` vanishes identically.
    """
    xs = np.asarray(xs, dtype=float)
    Rp, Sp = data.riemann(xs + step, params)
    Rm, Sm = data.riemann(xs - step, params)
    m = len(xs)
    return TangentBundle(0.0, xs.copy(), data.n0_x(xs), (Rp - Rm) / (2 * step), (Sp - Sm) / (2 * step),
                         -np.ones(m), -np.ones(m), np.zeros(m), np.zeros(m))


# --------------------------------------------------------------------------
# derivatives on the chart grid


def _diff_axis0(A, h):
    """Derivative along axis 0 of an array whose valid entries in every column
    form a prefix: fourth-order central inside, one-sided near the ends, lower
    order only where a column is too short."""
    D = np.full(A.shape, np.nan)
    with np.errstate(invalid="ignore"):
        if len(A) > 4:
            D[2:-2] = (A[:-4] - 8 * A[1:-3] + 8 * A[3:-1] - A[4:]) / (12 * h)
        c2 = np.full(A.shape, np.nan)
        c2[1:-1] = (A[2:] - A[:-2]) / (2 * h)
        fill = np.isnan(D) & ~np.isnan(c2)
        D[fill] = c2[fill]
        # one-sided fourth order at the first and last two nodes
        f4 = np.full(A.shape, np.nan)
        b4 = np.full(A.shape, np.nan)
        if len(A) > 4:
            f4[:-4] = (-25 * A[:-4] + 48 * A[1:-3] - 36 * A[2:-2] + 16 * A[3:-1] - 3 * A[4:]) / (12 * h)
            b4[4:] = (25 * A[4:] - 48 * A[3:-1] + 36 * A[2:-2] - 16 * A[1:-3] + 3 * A[:-4]) / (12 * h)
        fwd = np.full(A.shape, np.nan)
        bwd = np.full(A.shape, np.nan)
        fwd[:-2] = (-3 * A[:-2] + 4 * A[1:-1] - A[2:]) / (2 * h)
        bwd[2:] = (3 * A[2:] - 4 * A[1:-1] + A[:-2]) / (2 * h)
        f1 = np.full(A.shape, np.nan)
        b1 = np.full(A.shape, np.nan)
        f1[:-1] = (A[1:] - A[:-1]) / h
        b1[1:] = (A[1:] - A[:-1]) / h
    for alt in (f4, b4, fwd, bwd, f1, b1):
        fill = np.isnan(D) & ~np.isnan(alt)
        D[fill] = alt[fill]
    # a lone node (corner of the triangle) has no neighbour in this direction
    D[np.isnan(D)] = 0.0
    D[np.isnan(A)] = np.nan
    return D


def _shear(A):
    """``S[k, d] = A[k, k + d]``: rows of fixed Y become columns of fixed d."""
    K1, N1 = A.shape[:2]
    S = np.full(A.shape, np.nan)
    for k in range(K1):
        S[k, : N1 - k] = A[k, k:]
    return S


def _unshear(S):
    K1, N1 = S.shape[:2]
    A = np.full(S.shape, np.nan)
    for k in range(K1):
        A[k, k:] = S[k, : N1 - k]
    return A


def chart_gradient(grid: ChartGrid, values: np.ndarray):
    """Finite-difference ``(d/dX, d/dY)`` of a node array shaped like
    ``grid.U[..., 0]`` (optionally with trailing axes)."""
    values = np.asarray(values, dtype=float)
    dY = _diff_axis0(values, grid.h)
    dX = _unshear(_diff_axis0(_shear(values), grid.h))
    return dX, dY


def physical_gradient(grid: ChartGrid, values: np.ndarray) -> np.ndarray:
    """``d/dx`` by the chain rule ``f_x = f_X / (p h1) - f_Y / (q h2)``."""
    fX, fY = chart_gradient(grid, values)
    U = grid.U
    a = U[..., P] * U[..., H1]
    b = U[..., Q] * U[..., H2]
    if values.ndim > 2:
        a = a[..., None]
        b = b[..., None]
    return fX / a - fY / b


# --------------------------------------------------------------------------
# physical route


@dataclass
class _Coefficients:
    n: np.ndarray
    R: np.ndarray
    S: np.ndarray
    Rx: np.ndarray
    Sx: np.ndarray
    c: np.ndarray
    cp: np.ndarray
    cpp: np.ndarray
    dY: np.ndarray  # q h2 / 2c
    dX: np.ndarray  # p h1 / 2c


def _coefficients(grid: ChartGrid) -> _Coefficients:
    U = grid.U
    with np.errstate(divide="ignore", invalid="ignore"):
        R = U[..., L_] / U[..., H1][..., None]
        S = U[..., M_] / U[..., H2][..., None]
    c, cp, cpp = speed(grid.params, np.clip(np.nan_to_num(U[..., 0]), -1, 1))
    Rx = physical_gradient(grid, R)
    Sx = physical_gradient(grid, S)
    return _Coefficients(U[..., N_], R, S, Rx, Sx, c, cp, cpp,
                         U[..., Q] * U[..., H2] / (2 * c), U[..., P] * U[..., H1] / (2 * c))


def riemann_tangent_rhs(n, R, S, Rx, Sx, c, cp, cpp, v, r, s, params: ModelParams,
                        s_signs: str = "linearised"):
    """Right-hand sides of ``r_t - c r_x`` and ``s_t + c s_x`` for the
    linearised Riemann system (arrays of shape (..., 3)).

    ``s_signs="printed"`` flips the signs of the last two ``S_1`` terms of the
    s-equation to the alternative reading kept for comparison.
    """
    zeta = params.zeta
    c2 = (c * c)[..., None]
    cq = c[..., None]
    cpv = cp[..., None]
    v1 = v[..., 0:1]
    R2 = np.sum(R * R, axis=-1, keepdims=True)
    S2 = np.sum(S * S, axis=-1, keepdims=True)
    RS = np.sum(R * S, axis=-1, keepdims=True)
    Rr = np.sum(R * r, axis=-1, keepdims=True)
    Ss = np.sum(S * s, axis=-1, keepdims=True)
    Rs = np.sum(R * s, axis=-1, keepdims=True)
    Sr = np.sum(S * r, axis=-1, keepdims=True)
    common = (cpv * zeta / (2 * c2 * cq) * v1 * n * (R2 + S2 - 2 * RS)
              + v / (4 * c2) * ((c2 - zeta) * (R2 + S2) - 2 * (3 * c2 - zeta) * RS)
              + n / (2 * c2) * ((c2 - zeta) * (Rr + Ss) - (3 * c2 - zeta) * (Rs + Sr)))
    curv = ((cq * cpp[..., None] - cpv * cpv) / (2 * c2))
    rr = (cpv * v1 * Rx + common + curv * (R - S) * R[..., 0:1] * v1
          + cpv / (2 * cq) * ((R - S) * r[..., 0:1] + (r - s) * R[..., 0:1]))
    sign = -1.0 if s_signs == "linearised" else 1.0
    ss = (-cpv * v1 * Sx + common + sign * curv * (R - S) * S[..., 0:1] * v1
          + sign * cpv / (2 * cq) * ((R - S) * s[..., 0:1] + (r - s) * S[..., 0:1]))
    return rr, ss


def _check_regular(grid: ChartGrid, t_end: float, h_min: float):
    U = grid.U
    with np.errstate(invalid="ignore"):
        near = (U[..., TT] <= t_end) & ((U[..., H1] < h_min) | (U[..., H2] < h_min))
    if np.any(near):
        k, i = np.argwhere(near)[0]
        raise SingularRegionCrossed(
            f"h1 or h2 below {h_min:g} at t = {U[k, i, TT]:.4g}, x = {U[k, i, XX]:.4g}; "
            "use the chart-coordinate tangent instead")


@dataclass
class TangentField:
    """Physical tangent fields marched over a chart grid, ``F[k, i, :TNF]``."""

    F: np.ndarray
    grid: ChartGrid

    def bundle(self, tau: float, x_tol: float = 1e-13) -> TangentBundle:
        curve = level_set(self.grid, tau)
        Fc = curve.interpolate(self.F)
        keep = advancing_mask(curve.states[:, XX], x_tol)
        Fc = Fc[keep]
        x = curve.states[keep, XX]
        return TangentBundle(float(tau), x, Fc[:, TV_], Fc[:, TR_], Fc[:, TS_],
                             Fc[:, TW], Fc[:, TZ])

    def derivatives(self, tau: float, x_tol: float = 1e-13) -> dict:
        """``R_x``, ``S_x``, ``w_x``, ``z_x`` on the nodes of :meth:`bundle`,
        differentiated on the chart grid and interpolated onto the level curve."""
        grid = self.grid
        co = _coefficients(grid)
        nodes = {"Rx": co.Rx, "Sx": co.Sx,
                 "wx": physical_gradient(grid, self.F[..., TW]),
                 "zx": physical_gradient(grid, self.F[..., TZ])}
        curve = level_set(grid, tau)
        keep = advancing_mask(curve.states[:, XX], x_tol)
        return {k: curve.interpolate(v)[keep] for k, v in nodes.items()}


def _initial_fields(bundle0: TangentBundle, xs) -> np.ndarray:
    """Bundle fields on the nodes ``xs`` (cubic spline, constant beyond the ends)."""
    cols = np.column_stack([bundle0.v, bundle0.r, bundle0.s, bundle0.w, bundle0.z])
    if len(bundle0.x) < 4:
        return np.column_stack([np.interp(xs, bundle0.x, col) for col in cols.T])
    xq = np.clip(xs, bundle0.x[0], bundle0.x[-1])
    return CubicSpline(bundle0.x, cols, axis=0)(xq)


def _tangent_rhs(grid: ChartGrid, s_signs: str):
    co = _coefficients(grid)
    params = grid.params

    def rhs(k, V):
        sl = (k, slice(k, None))
        n, R, S = co.n[sl], co.R[sl], co.S[sl]
        c, cp, cpp = co.c[sl], co.cp[sl], co.cpp[sl]
        v, r, s = V[:, TV_], V[:, TR_], V[:, TS_]
        rr, ss = riemann_tangent_rhs(n, R, S, co.Rx[sl], co.Sx[sl], c, cp, cpp, v, r, s,
                                     params, s_signs)
        dY = co.dY[sl][:, None]
        dX = co.dX[sl][:, None]
        n1x = (R[:, 0] - S[:, 0]) / (2 * c)
        skew = (R - S) * (cp / (2 * c))[:, None] * v[:, 0:1]
        DY = np.full(V.shape, np.nan)
        DX = np.full(V.shape, np.nan)
        DY[:, TR_] = dY * rr
        DX[:, TS_] = dX * ss
        DY[:, TV_] = dY * (s + skew)
        DX[:, TV_] = dX * (r - skew)
        DY[:, TW] = -co.dY[sl] * cp * (v[:, 0] + V[:, TW] * n1x)
        DX[:, TZ] = co.dX[sl] * cp * (v[:, 0] + V[:, TZ] * n1x)
        return DY, DX

    return rhs


def evolve_fields(bundle0: TangentBundle, solution: ChartGrid, *, s_signs: str = "linearised",
                  t_end: Optional[float] = None, h_min: float = H_SING,
                  picard: Optional[PicardConfig] = None, scheme: str = "adams4",
                  data: Optional[InitialData] = None, start_refine: int = 4) -> TangentField:
    """March ``(v, r, s, w, z)`` from the initial line over the chart grid.

    ``bundle0`` is interpolated onto the initial nodes. Raises
    ``SingularRegionCrossed`` if a node with ``t <= t_end`` (default: the
    whole grid) has ``h1`` or ``h2`` below ``h_min``. When the Cauchy ``data``
    of the solution are given, the first two diagonals come from a march on a
    ``start_refine`` times finer grid, as in the solver.
    """
    from .chart import boundary_data
    from .solver import solve_rectangle

    grid = solution
    picard = picard or PicardConfig()
    t_end = grid.t_range()[1] if t_end is None else float(t_end)
    _check_regular(grid, t_end, h_min)
    xs = grid.U[0, :, XX]
    F0 = _initial_fields(bundle0, xs)
    # levels needed: every diagonal with some node at or below t_end, plus margin
    tmin = np.nanmin(np.where(grid.valid, grid.U[..., TT], np.nan), axis=1)
    K = int(min(grid.K, np.searchsorted(tmin, t_end, side="right") + 2))
    levels = [F0]
    m = start_refine
    if data is not None and scheme == "adams4" and m > 1 and K >= 2:
        fine_x = xs[0] + grid.h / m * np.arange(m * grid.N + 1)
        fine = solve_rectangle(boundary_data(data, grid.params, fine_x), grid.params,
                               picard=picard, max_levels=2 * m)
        fl, _ = march([_initial_fields(bundle0, fine_x)], _tangent_rhs(fine, s_signs),
                      _T_Y_FIELDS, _T_X_FIELDS, _T_BOTH_FIELDS, fine.h, 2 * m,
                      scheme=scheme, picard=picard)
        levels += [fl[m * k][::m].copy() for k in (1, 2)]
    levels, _ = march(levels, _tangent_rhs(grid, s_signs), _T_Y_FIELDS, _T_X_FIELDS,
                      _T_BOTH_FIELDS, grid.h, K, scheme=scheme, picard=picard)
    F = np.full((grid.K + 1, grid.N + 1, TNF), np.nan)
    for k, lev in enumerate(levels):
        F[k, k:] = lev
    return TangentField(F, grid)


def evolve_tangent(bundle0: TangentBundle, solution: ChartGrid, taus: Sequence[float], *,
                   s_signs: str = "linearised", h_min: float = H_SING,
                   with_effective: bool = True,
                   data: Optional[InitialData] = None) -> List[TangentBundle]:
    """The tangent bundle at each ``tau`` (physical route).

    Effective displacements are attached when ``with_effective`` is set, using
    the reconstructed snapshot at each tau. Passing the Cauchy ``data`` of the
    solution enables the refined start (see :func:`evolve_fields`).
    """
    from .pullback import reconstruct

    taus = [float(t) for t in taus]
    tc = solution.t_complete()
    for t in taus:
        if not 0.0 <= t <= tc:
            raise TauOutOfRange(f"tau={t} outside [0, {tc:.6g}]")
    tf = evolve_fields(bundle0, solution, s_signs=s_signs, t_end=max(taus), h_min=h_min, data=data)
    out = []
    for t in taus:
        b = tf.bundle(t)
        if with_effective:
            b = effective_displacements(b, reconstruct(solution, t), solution.params, tf.derivatives(t))
        out.append(b)
    return out


def evolve_shifts(w0, z0, solution: ChartGrid, taus: Sequence[float], bundle0: Optional[TangentBundle] = None,
                  h_min: float = H_SING):
    """Shifts ``(w, z)`` at each ``tau`` as ``[(x, w, z), ...]``.

    ``w0`` and ``z0`` are values (or constants) on the initial nodes. The
    vertical displacement ``v`` that drives them is co-evolved from
    ``bundle0`` (zero by default).
    """
    xs = solution.U[0, :, XX]
    if bundle0 is None:
        bundle0 = zero_bundle(xs)
    def on_nodes(values):
        arr = np.atleast_1d(np.asarray(values, dtype=float))
        if arr.size == 1:
            return np.full(xs.shape, arr[0])
        if arr.shape != xs.shape:
            raise GridMismatch("shift arrays must live on the bundle nodes")
        return arr

    b0 = bundle0.with_shifts(on_nodes(w0), on_nodes(z0))
    tc = solution.t_complete()
    for t in taus:
        if not 0.0 <= t <= tc:
            raise TauOutOfRange(f"tau={t} outside [0, {tc:.6g}]")
    tf = evolve_fields(b0, solution, t_end=max(taus), h_min=h_min)
    out = []
    for t in taus:
        b = tf.bundle(t)
        out.append((b.x, b.w, b.z))
    return out


def effective_displacements(bundle: TangentBundle, snapshot, params: ModelParams,
                            derivatives: Optional[dict] = None) -> TangentBundle:
    """Attach ``rstar``, ``sstar`` and the shift derivatives on the snapshot nodes.

    ``derivatives`` may supply any of ``Rx``, ``Sx``, ``wx``, ``zx`` on those
    nodes; the missing ones are second-order differences on the (possibly
    nonuniform) nodes.
    """
    if len(snapshot.x) != len(bundle.x) or np.max(np.abs(snapshot.x - bundle.x)) > 1e-9:
        raise GridMismatch("bundle and snapshot nodes differ")
    x = snapshot.x
    given = derivatives or {}
    d = {"Rx": snapshot.R, "Sx": snapshot.S, "wx": bundle.w, "zx": bundle.z}
    d = {k: given[k] if k in given else snapshot.meta.get(k) if k in snapshot.meta else _ddx(f, x)
         for k, f in d.items()}
    rstar, sstar = effective_terms(snapshot.n, snapshot.R, snapshot.S, d["Rx"], d["Sx"],
                                   bundle.r, bundle.s, bundle.w, bundle.z, params)
    return replace(bundle, rstar=rstar, sstar=sstar, wx=d["wx"], zx=d["zx"], meta=dict(bundle.meta))


def effective_terms(n, R, S, Rx, Sx, r, s, w, z, params: ModelParams):
    """Pointwise ``(r*, s*)`` from the vertical displacements and the shifts."""
    c, cp, _ = speed(params, np.clip(n[:, 0], -1, 1))
    zeta = params.zeta
    c2 = (c * c)[:, None]
    R2 = np.sum(R * R, axis=1)[:, None]
    S2 = np.sum(S * S, axis=1)[:, None]
    RS = np.sum(R * S, axis=1)[:, None]
    dw = (np.asarray(w) - np.asarray(z))[:, None]
    base = n / (8 * c2 * c[:, None]) * dw
    k = (cp / (4 * c * c))[:, None] * dw
    rstar = (r + np.asarray(w)[:, None] * Rx
             + base * ((c2 - zeta) * S2 - 2 * (3 * c2 - zeta) * RS)
             - k * R[:, 0:1] * S)
    sstar = (s + np.asarray(z)[:, None] * Sx
             + base * ((c2 - zeta) * R2 - 2 * (3 * c2 - zeta) * RS)
             - k * R * S[:, 0:1])
    return rstar, sstar


def write_bundle(bundle: TangentBundle, path) -> None:
    cols = [bundle.x[:, None], bundle.v, bundle.r, bundle.s, bundle.w[:, None], bundle.z[:, None],
            bundle.wx[:, None], bundle.zx[:, None],
            bundle.rstar if bundle.rstar is not None else np.full((len(bundle.x), 3), np.nan),
            bundle.sstar if bundle.sstar is not None else np.full((len(bundle.x), 3), np.nan)]
    table = np.hstack(cols)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(BUNDLE_COLUMNS)
        for row in table:
            wr.writerow([format(float(v), ".17g") for v in row])


# --------------------------------------------------------------------------
# chart route


@dataclass
class ChartTangent:
    """Perturbations of all chart fields on a grid, packed like ``ChartGrid.U``."""

    D: np.ndarray  # (K + 1, N + 1, NF)

    @property
    def N(self):
        return self.D[..., N_]

    @property
    def Lcal(self):
        return self.D[..., L_]

    @property
    def M(self):
        return self.D[..., M_]

    @property
    def H1(self):
        return self.D[..., H1]

    @property
    def H2(self):
        return self.D[..., H2]

    @property
    def P(self):
        return self.D[..., P]

    @property
    def Q(self):
        return self.D[..., Q]

    @property
    def Xcal(self):
        return self.D[..., XX]

    @property
    def Tcal(self):
        return self.D[..., TT]


def transformed_tangent(gridA: ChartGrid, gridB: ChartGrid, eps: float) -> ChartTangent:
    """``(gridB - gridA) / eps`` node by node."""
    if not gridA.same_layout(gridB):
        raise GridMismatch("the two chart grids do not share the (X, Y) layout")
    if eps == 0:
        raise ValueError("eps must be nonzero")
    return ChartTangent((gridB.U - gridA.U) / eps)


def family_tangents(grids: Sequence[ChartGrid], lams: Sequence[float]) -> List[ChartTangent]:
    """d/dlambda of a family of chart solutions by finite differences in lambda
    (second order, one-sided at the two ends)."""
    if len(grids) != len(lams) or len(grids) < 2:
        raise ValueError("need at least two grids, one per lambda")
    for g in grids[1:]:
        if not grids[0].same_layout(g):
            raise GridMismatch("family members do not share the (X, Y) layout")
    # offsets from the first member: identical members then differ by exact zeros
    stack = np.stack([g.U - grids[0].U for g in grids])
    lams = np.asarray(lams, dtype=float)
    D = np.gradient(stack, lams, axis=0, edge_order=2 if len(lams) > 2 else 1)
    return [ChartTangent(D[j]) for j in range(len(grids))]


@dataclass
class JTerms:
    """The integrands of the chart-coordinate norm on one level curve.

    ``minus[j]`` and ``plus[j]`` hold ``J_j^-`` and ``J_j^+``; entries 2 and 4
    keep their three components (shape (M, 3)) because the norm takes the
    absolute value of each component.
    """

    curve: LevelCurve
    minus: List[np.ndarray]
    plus: List[np.ndarray]


def j_terms_xy(tan: ChartTangent, grid: ChartGrid, tau: float) -> JTerms:
    """Evaluate ``J_0^± ... J_5^±`` on the level curve ``t = tau``."""
    if tan.D.shape != grid.U.shape:
        raise GridMismatch("tangent and grid shapes differ")
    curve = level_set(grid, tau)
    st = curve.states
    d = curve.interpolate(tan.D)
    n, l, m = st[:, N_], st[:, L_], st[:, M_]
    h1, h2, p, q = st[:, H1], st[:, H2], st[:, P], st[:, Q]
    Nn, Ll, Mm = d[:, N_], d[:, L_], d[:, M_]
    dH1, dH2, dP, dQ, dX, dT = d[:, H1], d[:, H2], d[:, P], d[:, Q], d[:, XX], d[:, TT]
    c, cp, _ = speed(grid.params, np.clip(n[:, 0], -1, 1))
    zeta = grid.params.zeta
    c2 = (c * c)[:, None]
    wv = dX + c * dT
    zv = dX - c * dT
    minus = [
        wv * p * h1,
        wv * p,
        Nn * p[:, None],
        h1 * dP + p * dH1 + cp * dT * p * l[:, 0] / (2 * c),
        l * dP[:, None] + p[:, None] * Ll - n * (dT * p)[:, None] * (c2 - zeta) * (1 - h1)[:, None] / (4 * c2),
        (1 - h1) * dP - p * dH1,
    ]
    plus = [
        zv * q * h2,
        zv * q,
        Nn * q[:, None],
        h2 * dQ + q * dH2 + cp * dT * q * m[:, 0] / (2 * c),
        m * dQ[:, None] + q[:, None] * Mm - n * (dT * q)[:, None] * (c2 - zeta) * (1 - h2)[:, None] / (4 * c2),
        (1 - h2) * dQ - q * dH2,
    ]
    return JTerms(curve, minus, plus)
