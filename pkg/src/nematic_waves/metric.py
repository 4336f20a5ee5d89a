"""The Finsler transport norm of tangent vectors, path lengths and distances.

Physical form: six weighted integrals ``I_0 ... I_5`` of a tangent bundle over
a snapshot, weighted by the interaction potentials

    V_minus(x) = 1 + int_{-inf}^x |S|^2,   V_plus(x) = 1 + int_x^{inf} |R|^2.

The norm of ``(v, r, s)`` is the infimum over the horizontal shifts ``(w, z)``;
the integrands are absolute values of affine functions of ``(w, z, w_x, z_x)``
so, once discretised, the infimum is a linear program.

Chart form: the same quantities as line integrals of ``|J_j^±|`` along a level
curve in (X, Y); these stay finite through concentration points and are what
path lengths and the Groenwall study use.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import linprog

from .chart import XX
from .errors import GridMismatch, OptimizerFailure, TauOutOfRange
from .fixtures import InitialData
from .model import ModelParams, speed
from .pullback import curve_measures, reconstruct
from .solver import ChartGrid, solve_data
from .state import PhysicalSnapshot
from .tangent import (JTerms, TangentBundle, effective_terms, family_tangents, j_terms_xy,
                      linear_rs_data, transformed_tangent, _ddx)

log = logging.getLogger(__name__)

DEFAULT_DELTA = 0.1


def default_kappa(delta: float = DEFAULT_DELTA) -> np.ndarray:
    """Weights ``(1, d, d^4, d^2, d^3, d^4)``: kappa_0 >> kappa_1 >> kappa_3 >>
    kappa_4 >> kappa_2, kappa_5."""
    d = float(delta)
    return np.array([1.0, d, d ** 4, d ** 2, d ** 3, d ** 4])


def _weights(x) -> np.ndarray:
    """Trapezoid quadrature weights on the nodes ``x``."""
    x = np.asarray(x, dtype=float)
    w = np.zeros(len(x))
    if len(x) > 1:
        dx = np.diff(x)
        w[:-1] += 0.5 * dx
        w[1:] += 0.5 * dx
    return w


@dataclass
class Potentials:
    x: np.ndarray
    V_minus: np.ndarray
    V_plus: np.ndarray
    G: float


def potentials(snapshot: PhysicalSnapshot, params: Optional[ModelParams] = None) -> Potentials:
    """Interaction potentials and the interaction rate
    ``G = int |c'/2c (|R|^2 S_1 - R_1 |S|^2)| dx`` of a snapshot."""
    params = params or snapshot.params
    x = snapshot.x
    R, S = snapshot.R, snapshot.S
    R2 = np.sum(R * R, axis=1)
    S2 = np.sum(S * S, axis=1)
    if len(x) > 1:
        cumS = cumulative_trapezoid(S2, x, initial=0.0)
        cumR = cumulative_trapezoid(R2, x, initial=0.0)
    else:
        cumS = cumR = np.zeros(len(x))
    c, cp, _ = speed(params, np.clip(snapshot.n[:, 0], -1, 1))
    dens = np.abs(cp / (2 * c) * (R2 * S[:, 0] - R[:, 0] * S2))
    G = float(np.sum(_weights(x) * dens))
    return Potentials(x.copy(), 1.0 + cumS, 1.0 + cumR[-1] - cumR if len(x) else cumR, G)


# --------------------------------------------------------------------------
# physical integrands


@dataclass
class NormTerms:
    """``I[j]`` and the pointwise integrands (absolute values, components summed)."""

    I: np.ndarray
    minus: List[np.ndarray]
    plus: List[np.ndarray]
    x: np.ndarray

    def weighted(self, kappa) -> float:
        return float(np.dot(np.asarray(kappa, dtype=float), self.I))


def _riemann_x(snapshot: PhysicalSnapshot):
    """``(R_x, S_x)``: the chart-derived values a reconstructed snapshot carries,
    otherwise differences on its nodes."""
    Rx, Sx = snapshot.meta.get("Rx"), snapshot.meta.get("Sx")
    if Rx is None or Sx is None or np.shape(Rx) != snapshot.R.shape:
        return _ddx(snapshot.R, snapshot.x), _ddx(snapshot.S, snapshot.x)
    return Rx, Sx


def norm_integrands(bundle: TangentBundle, snapshot: PhysicalSnapshot, params: ModelParams):
    """Signed pieces of every integrand: returns ``(minus, plus)`` lists where
    entries 2 and 4 have shape (M, 3) and the others (M,)."""
    if len(bundle.x) != len(snapshot.x) or np.max(np.abs(bundle.x - snapshot.x), initial=0) > 1e-9:
        raise GridMismatch("bundle and snapshot nodes differ")
    n, R, S = snapshot.n, snapshot.R, snapshot.S
    c, cp, _ = speed(params, np.clip(n[:, 0], -1, 1))
    w, z, wx, zx = bundle.w, bundle.z, bundle.wx, bundle.zx
    rstar, sstar = bundle.rstar, bundle.sstar
    if rstar is None or sstar is None:
        rstar, sstar = effective_terms(n, R, S, *_riemann_x(snapshot), bundle.r, bundle.s, w, z, params)
    k = cp / (4 * c * c) * (w - z)
    R2 = np.sum(R * R, axis=1)
    S2 = np.sum(S * S, axis=1)
    shiftN = bundle.v + (R * w[:, None] - S * z[:, None]) / (2 * c[:, None])
    am = wx + k * S[:, 0]
    ap = zx + k * R[:, 0]
    q5m = 2 * np.sum(R * rstar, axis=1) + R2 * wx + k * R2 * S[:, 0]
    q5p = 2 * np.sum(S * sstar, axis=1) + S2 * zx + k * S2 * R[:, 0]
    minus = [w, w * (1 + R2), shiftN * (1 + R2)[:, None], am, rstar + R * am[:, None], q5m]
    plus = [z, z * (1 + S2), shiftN * (1 + S2)[:, None], ap, sstar + S * ap[:, None], q5p]
    return minus, plus


def _absum(a):
    a = np.abs(a)
    return a.sum(axis=1) if a.ndim == 2 else a


def norm_terms(bundle: TangentBundle, snapshot: PhysicalSnapshot, pot: Potentials,
               params: ModelParams) -> NormTerms:
    """The six integrals of the physical norm for a bundle with given shifts."""
    minus, plus = norm_integrands(bundle, snapshot, params)
    wq = _weights(snapshot.x)
    jm = [_absum(a) for a in minus]
    jp = [_absum(a) for a in plus]
    I = np.array([float(np.sum(wq * (a * pot.V_minus + b * pot.V_plus))) for a, b in zip(jm, jp)])
    return NormTerms(I, jm, jp, snapshot.x.copy())


# --------------------------------------------------------------------------
# infimum over shifts


@dataclass
class NormResult:
    value: float
    mode: str
    w: np.ndarray
    z: np.ndarray
    terms: NormTerms
    zero_shift_value: float
    flags: List[str] = field(default_factory=list)


def _affine_terms(bundle, snapshot, params, kappa, pot):
    """Every absolute-value term as ``const + Aw w + Az z`` with a weight.

    Returns ``(const, Aw, Az, weight)`` with sparse ``Aw``, ``Az`` of shape
    (T, M) where T counts all scalar terms.
    """
    x = snapshot.x
    M = len(x)
    n, R, S = snapshot.n, snapshot.R, snapshot.S
    c, cp, _ = speed(params, np.clip(n[:, 0], -1, 1))
    zeta = params.zeta
    k = cp / (4 * c * c)
    R2 = np.sum(R * R, axis=1)
    S2 = np.sum(S * S, axis=1)
    RS = np.sum(R * S, axis=1)
    Rx, Sx = _riemann_x(snapshot)
    c2 = (c * c)[:, None]
    alpha = n / (8 * c2 * c[:, None]) * ((c2 - zeta) * S2[:, None] - 2 * (3 * c2 - zeta) * RS[:, None])
    beta = n / (8 * c2 * c[:, None]) * ((c2 - zeta) * R2[:, None] - 2 * (3 * c2 - zeta) * RS[:, None])
    D = sparse.csr_matrix(_ddx(np.eye(M), x)) if M > 1 else sparse.csr_matrix((M, M))
    I_ = sparse.identity(M, format="csr")
    dg = lambda a: sparse.diags(np.asarray(a, dtype=float), format="csr")
    wq = _weights(x)
    Vm, Vp = pot.V_minus, pot.V_plus
    zero = sparse.csr_matrix((M, M))

    rows = []  # (const, Aw, Az, weight)
    # I0, I1
    rows.append((np.zeros(M), I_, zero, kappa[0] * wq * Vm))
    rows.append((np.zeros(M), zero, I_, kappa[0] * wq * Vp))
    rows.append((np.zeros(M), I_, zero, kappa[1] * wq * Vm * (1 + R2)))
    rows.append((np.zeros(M), zero, I_, kappa[1] * wq * Vp * (1 + S2)))
    # I2
    wt2 = kappa[2] * wq * ((1 + R2) * Vm + (1 + S2) * Vp)
    for i in range(3):
        rows.append((bundle.v[:, i], dg(R[:, i] / (2 * c)), dg(-S[:, i] / (2 * c)), wt2))
    # I3: a_minus = D w + k (w - z) S1, a_plus = D z + k (w - z) R1
    am_w, am_z = D + dg(k * S[:, 0]), dg(-k * S[:, 0])
    ap_w, ap_z = dg(k * R[:, 0]), D - dg(k * R[:, 0])
    rows.append((np.zeros(M), am_w, am_z, kappa[3] * wq * Vm))
    rows.append((np.zeros(M), ap_w, ap_z, kappa[3] * wq * Vp))
    # r*_i = r_i + w Rx_i + alpha_i (w - z) - k (w - z) R1 S_i ; similarly s*
    rs_w = [dg(Rx[:, i] + alpha[:, i] - k * R[:, 0] * S[:, i]) for i in range(3)]
    rs_z = [dg(-alpha[:, i] + k * R[:, 0] * S[:, i]) for i in range(3)]
    ss_w = [dg(beta[:, i] - k * R[:, i] * S[:, 0]) for i in range(3)]
    ss_z = [dg(Sx[:, i] - beta[:, i] + k * R[:, i] * S[:, 0]) for i in range(3)]
    for i in range(3):
        rows.append((bundle.r[:, i], rs_w[i] + dg(R[:, i]) @ am_w, rs_z[i] + dg(R[:, i]) @ am_z,
                     kappa[4] * wq * Vm))
    for i in range(3):
        rows.append((bundle.s[:, i], ss_w[i] + dg(S[:, i]) @ ap_w, ss_z[i] + dg(S[:, i]) @ ap_z,
                     kappa[4] * wq * Vp))
    # I5
    c5m_w = sum(dg(2 * R[:, i]) @ rs_w[i] for i in range(3)) + dg(R2) @ D + dg(k * R2 * S[:, 0])
    c5m_z = sum(dg(2 * R[:, i]) @ rs_z[i] for i in range(3)) - dg(k * R2 * S[:, 0])
    c5p_w = sum(dg(2 * S[:, i]) @ ss_w[i] for i in range(3)) + dg(k * S2 * R[:, 0])
    c5p_z = sum(dg(2 * S[:, i]) @ ss_z[i] for i in range(3)) + dg(S2) @ D - dg(k * S2 * R[:, 0])
    rows.append((2 * np.sum(R * bundle.r, axis=1), c5m_w, c5m_z, kappa[5] * wq * Vm))
    rows.append((2 * np.sum(S * bundle.s, axis=1), c5p_w, c5p_z, kappa[5] * wq * Vp))

    const = np.concatenate([r[0] for r in rows])
    Aw = sparse.vstack([r[1] for r in rows], format="csr")
    Az = sparse.vstack([r[2] for r in rows], format="csr")
    weight = np.concatenate([r[3] for r in rows])
    return const, Aw, Az, weight


def _solve_shift_lp(const, Aw, Az, weight, M, free=None, bound=None):
    """Minimiser (w, z) of ``sum weight |const + Aw w + Az z|``."""
    keep = weight > 0
    B = sparse.hstack([Aw[keep], Az[keep]], format="csr")
    const = const[keep]
    # unit-size rows; the row scale moves into the cost
    row = np.maximum(np.abs(const), abs(B).max(axis=1).toarray().ravel())
    row = np.where(row > 0, row, 1.0)
    B = sparse.diags(1.0 / row) @ B
    const = const / row
    cost_u = weight[keep] * row
    cost_u = cost_u / cost_u.max()
    if free is not None:
        cols = np.concatenate([np.flatnonzero(free), M + np.flatnonzero(free)])
        B = B[:, cols]
    nvar = B.shape[1]
    T = B.shape[0]
    I_T = sparse.identity(T, format="csr")
    A_ub = sparse.vstack([sparse.hstack([B, -I_T]), sparse.hstack([-B, -I_T])], format="csr")
    b_ub = np.concatenate([-const, const])
    cost = np.concatenate([np.zeros(nvar), cost_u])
    ybounds = (None, None) if bound is None else (-float(bound), float(bound))
    bounds = [ybounds] * nvar + [(0, None)] * T
    messages = []
    for method in ("highs-ds", "highs-ipm"):
        res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method=method,
                      options={"primal_feasibility_tolerance": 1e-10,
                               "dual_feasibility_tolerance": 1e-10})
        if res.status == 0:
            break
        messages.append(f"{method}: {res.message}")
    else:
        raise OptimizerFailure("shift LP failed: " + "; ".join(messages))
    y = np.zeros(2 * M)
    if free is None:
        y[:] = res.x[:nvar]
    else:
        y[cols] = res.x[:nvar]
    return y[:M], y[M:]


def _canonical_scale(bundle: TangentBundle) -> float:
    """Signed max-abs entry of the vertical part, with the sign of the first
    nonzero entry. Dividing by it gives every multiple ``c * bundle`` the same
    LP input up to one rounding per entry, which keeps the optimizer on the
    same path and the computed norm positively homogeneous."""
    flat = np.concatenate([bundle.v.ravel(), bundle.r.ravel(), bundle.s.ravel()])
    nz = np.flatnonzero(flat)
    if len(nz) == 0:
        return 0.0
    return float(np.sign(flat[nz[0]]) * np.max(np.abs(flat)))


_SNAP = 2.0 ** -26


def _snap(a):
    return np.round(a / _SNAP) * _SNAP


def tangent_norm(bundle: TangentBundle, snapshot: PhysicalSnapshot, pot: Potentials,
                 params: ModelParams, mode: str = "zero_shift", kappa=None,
                 delta: float = DEFAULT_DELTA, coarsen: int = 1,
                 free: Optional[np.ndarray] = None, bound: Optional[float] = None) -> NormResult:
    """Norm of the vertical displacements ``(v, r, s)`` of ``bundle``.

    ``zero_shift`` evaluates with ``w = z = 0``. ``optimize`` minimises over
    the shifts on the snapshot nodes (every ``coarsen``-th node free, the others
    zero; ``free`` and ``bound`` restrict further) and returns the smaller of
    the optimum and the zero-shift value. If the LP fails, the zero-shift value
    is returned with the flag ``"optimizer_failure"``.
    """
    kappa = default_kappa(delta) if kappa is None else np.asarray(kappa, dtype=float)
    M = len(snapshot.x)
    zb = bundle.with_shifts(np.zeros(M), np.zeros(M), np.zeros(M), np.zeros(M))
    zt = norm_terms(zb, snapshot, pot, params)
    zval = zt.weighted(kappa)
    if mode == "zero_shift":
        return NormResult(zval, mode, np.zeros(M), np.zeros(M), zt, zval)
    if mode != "optimize":
        raise ValueError("mode must be 'zero_shift' or 'optimize'")
    scale = _canonical_scale(bundle)
    if scale == 0.0:
        return NormResult(0.0, mode, np.zeros(M), np.zeros(M), zt, zval)
    unit = bundle.scaled(1.0 / scale)
    # the shifts are chosen for a copy snapped to a dyadic lattice, so that
    # multiples of one bundle present bit-identical LP input; the value itself
    # is evaluated on the unsnapped bundle
    unit = TangentBundle(unit.time, unit.x, _snap(unit.v), _snap(unit.r), _snap(unit.s),
                         unit.w, unit.z)
    mask = np.zeros(M, dtype=bool)
    mask[:: max(1, int(coarsen))] = True
    if free is not None:
        mask &= np.asarray(free, dtype=bool)
    flags = []
    try:
        const, Aw, Az, weight = _affine_terms(unit, snapshot, params, kappa, pot)
        # the LP sees the bundle divided by scale, so the box shrinks with it
        unit_bound = None if bound is None else float(bound) / abs(scale)
        w, z = _solve_shift_lp(const, Aw, Az, weight, M, free=None if mask.all() else mask,
                               bound=unit_bound)
        w, z = w * scale, z * scale
        tb = bundle.with_shifts(w, z)
        terms = norm_terms(tb, snapshot, pot, params)
        val = terms.weighted(kappa)
    except OptimizerFailure as exc:
        log.warning("%s; falling back to zero shifts", exc)
        flags.append("optimizer_failure")
        return NormResult(zval, mode, np.zeros(M), np.zeros(M), zt, zval, flags)
    if val > zval:
        return NormResult(zval, mode, np.zeros(M), np.zeros(M), zt, zval, flags + ["zero_shift_better"])
    return NormResult(val, mode, w, z, terms, zval, flags)


def shift_objective(bundle: TangentBundle, snapshot: PhysicalSnapshot, pot: Potentials,
                    params: ModelParams, w, z, kappa=None,
                    delta: float = DEFAULT_DELTA) -> float:
    """Weighted norm of ``(v, r*, s*, w, z)`` for explicit shifts."""
    kappa = default_kappa(delta) if kappa is None else np.asarray(kappa, dtype=float)
    return norm_terms(bundle.with_shifts(w, z), snapshot, pot, params).weighted(kappa)


# --------------------------------------------------------------------------
# chart-coordinate norm


@dataclass
class ChartNorm:
    I: np.ndarray
    weighted: float


def chart_norm(jt: JTerms, kappa=None, delta: float = DEFAULT_DELTA) -> ChartNorm:
    """``sum_j kappa_j int (|J_j^-| V^- |dX| + |J_j^+| V^+ |dY|)`` on the curve."""
    kappa = default_kappa(delta) if kappa is None else np.asarray(kappa, dtype=float)
    curve = jt.curve
    mm, mp = curve_measures(curve)
    Vm = 1.0 + mp.F
    Vp = 1.0 + mm.total - mm.F
    wX = _weights(curve.X)
    wY = _weights(-curve.Y)
    I = np.array([float(np.sum(wX * _absum(a) * Vm) + np.sum(wY * _absum(b) * Vp))
                  for a, b in zip(jt.minus, jt.plus)])
    return ChartNorm(I, float(np.dot(kappa, I)))


def path_length(grids: Sequence[ChartGrid], lams: Sequence[float], tau: float, kappa=None,
                delta: float = DEFAULT_DELTA) -> Dict:
    """Length at time ``tau`` of a lambda-family of chart solutions (identity
    relabelling): trapezoid over lambda of the chart norm of d/dlambda."""
    lams = np.asarray(lams, dtype=float)
    if len(grids) == 1:
        return {"length": 0.0, "norms": [0.0], "lams": lams.tolist()}
    tans = family_tangents(grids, lams)
    norms = []
    for g, t in zip(grids, tans):
        if tau > g.t_complete():
            raise TauOutOfRange(f"tau={tau} beyond the solved range {g.t_complete():.6g}")
        norms.append(chart_norm(j_terms_xy(t, g, tau), kappa, delta).weighted)
    norms = np.array(norms)
    return {"length": float(np.trapezoid(norms, lams)), "norms": norms.tolist(), "lams": lams.tolist()}


@dataclass
class PathFamily:
    lams: np.ndarray
    grids: List[ChartGrid]
    data: List[InitialData]


def linear_family(dataA: InitialData, dataB: InitialData, params: ModelParams, h: float,
                  T: float, samples: int = 5) -> PathFamily:
    """Chart solutions along the linear path in (R, S) from B (lambda = 0) to A
    (lambda = 1), all on the layout of the lambda = 0 member."""
    lams = np.linspace(0.0, 1.0, int(samples))
    base = solve_data(dataB, params, h, T * 1.05 + 4 * h)
    xs = base.U[0, :, XX].copy()
    data = [linear_rs_data(dataA, dataB, lam, params, xs) for lam in lams]
    grids = [solve_data(d, params, h, T, like=base) for d in data]
    return PathFamily(lams, grids, data)


def distance(dataA: InitialData, dataB: InitialData, taus, params: ModelParams, h: float,
             samples: int = 5, kappa=None, delta: float = DEFAULT_DELTA,
             family: Optional[PathFamily] = None) -> Dict:
    """Upper bound for the distance between the solutions from A and B at each
    time in ``taus``, from the linear path in (R, S)."""
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    if family is None:
        family = linear_family(dataA, dataB, params, h, float(taus.max()), samples)
    out = [path_length(family.grids, family.lams, float(t), kappa, delta) for t in taus]
    return {"taus": taus.tolist(), "values": [o["length"] for o in out],
            "norms": [o["norms"] for o in out], "lams": family.lams.tolist()}


# --------------------------------------------------------------------------
# Groenwall study


@dataclass
class MetricReport:
    I: List[float]
    kappa: List[float]
    delta: float
    weighted: float
    J_integrals: Dict[str, List[float]] = field(default_factory=dict)
    gronwall: Optional[List[Dict[str, float]]] = None
    flags: List[str] = field(default_factory=list)
    meta: Dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True)

    @property
    def max_ratio(self) -> float:
        if not self.gronwall:
            return 1.0
        return float(max(r["ratio"] for r in self.gronwall))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return float(format(v, ".17g")) if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def h1_distance(a: PhysicalSnapshot, b: PhysicalSnapshot) -> float:
    """``(sum_i ||n_i - n'_i||_{H^1}^2)^{1/2}`` on the merged nodes, with
    ``n_x = (R - S) / 2c`` taken from each snapshot."""
    lo, hi = max(a.x[0], b.x[0]), min(a.x[-1], b.x[-1])
    x = np.union1d(a.x[(a.x >= lo) & (a.x <= hi)], b.x[(b.x >= lo) & (b.x <= hi)])
    na = np.column_stack([np.interp(x, a.x, a.n[:, i]) for i in range(3)])
    nb = np.column_stack([np.interp(x, b.x, b.n[:, i]) for i in range(3)])
    ga, gb = a.nx, b.nx
    da = np.column_stack([np.interp(x, a.x, ga[:, i]) for i in range(3)])
    db = np.column_stack([np.interp(x, b.x, gb[:, i]) for i in range(3)])
    wq = _weights(x)
    return float(np.sqrt(np.sum(wq * (np.sum((na - nb) ** 2, axis=1) + np.sum((da - db) ** 2, axis=1)))))


def gronwall_verify(dataA: InitialData, dataB: InitialData, params: ModelParams, T: float,
                    n_times: int = 11, h: float = 1 / 200, kappa=None,
                    delta: float = DEFAULT_DELTA, gridA: Optional[ChartGrid] = None,
                    with_h1: bool = True) -> MetricReport:
    """Weighted chart norm of the tangent ``gridB - gridA`` at ``n_times``
    times in [0, T], its ratio to the initial value, a finite-difference
    ``a(t) = d/dt log weighted``, the interaction rate ``G(t)`` of A and, for
    contrast, the ratio of the H^1 distances."""
    kappa = default_kappa(delta) if kappa is None else np.asarray(kappa, dtype=float)
    gA = gridA if gridA is not None else solve_data(dataA, params, h, T)
    gB = solve_data(dataB, params, gA.h, T, like=gA)
    T_eff = min(float(T), gA.t_complete(), gB.t_complete())
    flags = []
    if T_eff < T - 1e-12:
        flags.append(f"T clipped to {T_eff:.6g}")
    times = np.linspace(0.0, T_eff, int(n_times))
    tan = transformed_tangent(gA, gB, 1.0)
    values, terms, Gs, h1 = [], [], [], []
    for t in times:
        cn = chart_norm(j_terms_xy(tan, gA, float(t)), kappa, delta)
        values.append(cn.weighted)
        terms.append(cn.I)
        sA = reconstruct(gA, float(t))
        Gs.append(potentials(sA, params).G)
        if with_h1:
            h1.append(h1_distance(sA, reconstruct(gB, float(t))))
    values = np.array(values)
    if values[0] == 0.0:
        flags.append("degenerate: zero initial norm, ratio set to 1")
        ratio = np.ones_like(values)
    else:
        ratio = values / values[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        loga = np.log(np.where(values > 0, values, np.nan))
    a = np.gradient(loga, times) if len(times) > 2 else np.zeros_like(times)
    a = np.nan_to_num(a)
    h1r = (np.array(h1) / h1[0]) if (with_h1 and h1[0] > 0) else np.ones(len(times))
    series = [{"t": float(t), "value": float(v), "ratio": float(r), "a": float(ai), "G": float(g),
               "h1_ratio": float(hr)}
              for t, v, r, ai, g, hr in zip(times, values, ratio, a, Gs, h1r)]
    I0 = np.asarray(terms[0])
    return MetricReport(I=I0.tolist(), kappa=kappa.tolist(), delta=float(delta), weighted=float(values[0]),
                        J_integrals={f"I{j}": [float(tt[j]) for tt in terms] for j in range(6)},
                        gronwall=series, flags=flags,
                        meta={"h": gA.h, "T": T_eff, "dataA": dataA.name, "dataB": dataB.name})
