"""Classical distances used to sandwich the transport metric.

* ``sobolev_bound``: an upper-bound functional on the initial data;
* ``l1_distance``: L^1 distance of two directors at one time;
* ``kr_distance``: bounded-Lipschitz (Kantorovich-Rubinstein) distance of two
  energy measures, as a linear program over nodal values of the test function.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .errors import CommonGridFailure, GridMismatch, OptimizerFailure
from .fixtures import InitialData
from .metric import DEFAULT_DELTA, _jsonable, _weights, distance, linear_family
from .model import ModelParams
from .pullback import MeasureCDF, energy_measures, reconstruct
from .state import PhysicalSnapshot


def data_grid(dataA: InitialData, dataB: InitialData, dx: float, pad: float = 0.05) -> np.ndarray:
    """Uniform grid covering both supports plus ``pad`` on each side."""
    lo = min(dataA.support[0], dataB.support[0]) - pad
    hi = max(dataA.support[1], dataB.support[1]) + pad
    m = int(np.ceil((hi - lo) / dx))
    return lo + (hi - lo) * np.arange(m + 1) / m


def sobolev_terms(dataA: InitialData, dataB: InitialData, xs) -> Dict[str, float]:
    """The four norms of the data difference, each summed over components:
    ``H^1`` and ``W^{1,1}`` of ``n0 - n0'`` and ``L^1``, ``L^2`` of ``n1 - n1'``.

    Integrals use the trapezoid rule on ``xs``; derivatives are centred
    differences (one-sided at the two ends).
    """
    xs = np.asarray(xs, dtype=float)
    if xs.ndim != 1 or len(xs) < 3 or not np.all(np.diff(xs) > 0):
        raise GridMismatch("need a strictly increasing grid with at least 3 nodes")
    d0 = dataA.n0(xs) - dataB.n0(xs)
    d1 = dataA.n1(xs) - dataB.n1(xs)
    dd0 = np.gradient(d0, xs, axis=0, edge_order=2)
    wq = _weights(xs)
    integ = lambda f: wq @ f  # per component
    return {
        "H1_n0": float(np.sum(np.sqrt(integ(d0 ** 2) + integ(dd0 ** 2)))),
        "W11_n0": float(np.sum(integ(np.abs(d0)) + integ(np.abs(dd0)))),
        "L1_n1": float(np.sum(integ(np.abs(d1)))),
        "L2_n1": float(np.sum(np.sqrt(integ(d1 ** 2)))),
    }


def sobolev_bound(dataA: InitialData, dataB: InitialData, params: Optional[ModelParams] = None,
                  xs=None, dx: float = 1e-3) -> float:
    """Sum of the four norms of :func:`sobolev_terms` (no constant applied)."""
    if xs is None:
        xs = data_grid(dataA, dataB, dx)
    return float(sum(sobolev_terms(dataA, dataB, xs).values()))


def l1_distance(snapA: PhysicalSnapshot, snapB: PhysicalSnapshot) -> float:
    """``sum_i int |n_i - n'_i| dx`` on the merged nodes of the common x-range.

    Both directors are linearly interpolated; sign changes between nodes are
    resolved exactly for the piecewise-linear difference.
    """
    lo, hi = max(snapA.x[0], snapB.x[0]), min(snapA.x[-1], snapB.x[-1])
    if hi <= lo:
        return 0.0
    x = np.union1d(snapA.x[(snapA.x >= lo) & (snapA.x <= hi)], snapB.x[(snapB.x >= lo) & (snapB.x <= hi)])
    x = np.union1d(x, [lo, hi])
    total = 0.0
    for i in range(3):
        d = np.interp(x, snapA.x, snapA.n[:, i]) - np.interp(x, snapB.x, snapB.n[:, i])
        total += _abs_integral_linear(x, d)
    return float(total)


def _abs_integral_linear(x, d) -> float:
    """Exact ``int |d|`` of the piecewise-linear interpolant of ``d``."""
    a, b = d[:-1], d[1:]
    dx = np.diff(x)
    same = a * b >= 0
    out = np.where(same, 0.5 * (np.abs(a) + np.abs(b)) * dx, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        cross = 0.5 * (a * a + b * b) / (np.abs(a) + np.abs(b)) * dx
    out = np.where(same, out, cross)
    return float(np.sum(out))


# --------------------------------------------------------------------------
# bounded-Lipschitz distance of measures


def _check_cdf(cdf: MeasureCDF, name: str):
    xs = np.asarray(cdf.xs, dtype=float)
    F = np.asarray(cdf.F, dtype=float)
    if xs.ndim != 1 or xs.shape != F.shape or len(xs) == 0:
        raise CommonGridFailure(f"{name}: xs and F must be equal-length nonempty 1-d arrays")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(F))):
        raise CommonGridFailure(f"{name}: non-finite values")
    if np.any(np.diff(xs) < 0):
        raise CommonGridFailure(f"{name}: abscissae must be nondecreasing")
    if np.any(np.diff(F) < -1e-12 * max(1.0, abs(F[-1]))):
        raise CommonGridFailure(f"{name}: F must be nondecreasing")
    return xs, F


def _limits(xs, F, nodes) -> Tuple[np.ndarray, np.ndarray]:
    """Left and right limits of F at ``nodes``.

    F is constant (= its first value) left of ``xs[0]``, constant right of
    ``xs[-1]``, linear between distinct abscissae and jumps at a repeated one.
    """
    xu, first = np.unique(xs, return_index=True)
    last = np.r_[first[1:] - 1, len(xs) - 1]
    FL, FR = F[first], F[last]
    FL = FL.copy()
    FL[0] = F[0]
    j = np.searchsorted(xu, nodes, side="right") - 1
    left = np.empty(len(nodes))
    right = np.empty(len(nodes))
    for k, (x, jj) in enumerate(zip(nodes, j)):
        if jj < 0:
            left[k] = right[k] = F[0]
        elif xu[jj] == x:
            left[k], right[k] = FL[jj], FR[jj]
        elif jj == len(xu) - 1:
            left[k] = right[k] = FR[-1]
        else:
            th = (x - xu[jj]) / (xu[jj + 1] - xu[jj])
            left[k] = right[k] = FR[jj] + th * (FL[jj + 1] - FR[jj])
    return left, right


def _node_weights(nodes, cdfs):
    """Per-node signed weights ``g_k`` of ``mu_A - mu_B`` for piecewise-linear
    test functions: atom at the node plus half of each adjacent cell."""
    (xa, Fa), (xb, Fb) = cdfs
    La, Ra = _limits(xa, Fa, nodes)
    Lb, Rb = _limits(xb, Fb, nodes)
    atom = (Ra - La) - (Rb - Lb)
    cell = (La[1:] - Ra[:-1]) - (Lb[1:] - Rb[:-1])
    g = atom.copy()
    g[:-1] += 0.5 * cell
    g[1:] += 0.5 * cell
    return g, (Ra - Rb), (La - Lb)


def kr_distance(muA: MeasureCDF, muB: MeasureCDF, cap: bool = True, convention: str = "max") -> float:
    """``sup |int f dmu_A - int f dmu_B|`` over test functions in the unit
    C^1 ball.

    ``convention="max"``: ``|f| <= 1`` and ``|f'| <= 1``; ``"sum"``:
    ``sup|f| + sup|f'| <= 1``. With ``cap=False`` only ``|f'| <= 1`` is imposed
    (f pinned to 0 at the first node), which is the 1-d Wasserstein distance
    and requires equal total masses.
    """
    xa, Fa = _check_cdf(muA, "muA")
    xb, Fb = _check_cdf(muB, "muB")
    nodes = np.union1d(xa, xb)
    # the difference of CDFs is linear on each cell: add its zero crossings
    g, Dr, Dl = _node_weights(nodes, ((xa, Fa), (xb, Fb)))
    a, b = Dr[:-1], Dl[1:]
    cross = (a * b < 0)
    if np.any(cross):
        th = a[cross] / (a[cross] - b[cross])
        extra = nodes[:-1][cross] + th * np.diff(nodes)[cross]
        nodes = np.union1d(nodes, extra)
        g, _, _ = _node_weights(nodes, ((xa, Fa), (xb, Fb)))
    mass_gap = (Fa[-1] - Fa[0]) - (Fb[-1] - Fb[0])
    scale = max(1.0, abs(Fa[-1] - Fa[0]), abs(Fb[-1] - Fb[0]))
    if np.max(np.abs(g)) <= 1e-15 * scale:
        return 0.0
    K = len(nodes)
    dx = np.diff(nodes)
    if not cap:
        if abs(mass_gap) > 1e-9 * scale:
            raise CommonGridFailure("uncapped distance needs equal total masses")
        # the LP over increments |u_j| <= dx_j decouples: each u_j takes the
        # sign of the mass to its right, so the optimum is explicit
        tail = np.cumsum(g[::-1])[::-1][1:]
        return float(np.sum(np.abs(tail) * dx))
    if convention not in ("max", "sum"):
        raise ValueError("convention must be 'max' or 'sum'")
    # variables: f (K), then (a, b) bounds for the sum convention
    rows, cols, vals = [], [], []
    for k in range(K - 1):
        rows += [2 * k, 2 * k, 2 * k + 1, 2 * k + 1]
        cols += [k + 1, k, k + 1, k]
        vals += [1.0, -1.0, -1.0, 1.0]
    if convention == "max":
        A = sparse.csr_matrix((vals, (rows, cols)), shape=(2 * (K - 1), K))
        b_ub = np.repeat(dx, 2)
        bounds = [(-1.0, 1.0)] * K
        cost = -g
    else:
        nvar = K + 2
        ia, ib = K, K + 1
        for k in range(K - 1):
            rows += [2 * k, 2 * k + 1]
            cols += [ib, ib]
            vals += [-dx[k], -dx[k]]
        base = 2 * (K - 1)
        for k in range(K):
            rows += [base + 2 * k, base + 2 * k, base + 2 * k + 1, base + 2 * k + 1]
            cols += [k, ia, k, ia]
            vals += [1.0, -1.0, -1.0, -1.0]
        last = base + 2 * K
        rows += [last, last]
        cols += [ia, ib]
        vals += [1.0, 1.0]
        A = sparse.csr_matrix((vals, (rows, cols)), shape=(last + 1, nvar))
        b_ub = np.r_[np.zeros(base + 2 * K), 1.0]
        bounds = [(None, None)] * K + [(0, None), (0, None)]
        cost = np.r_[-g, 0.0, 0.0]
    res = linprog(cost, A_ub=A, b_ub=b_ub, bounds=bounds, method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise OptimizerFailure(f"KR linear program failed: {res.message}")
    return float(max(-res.fun, 0.0))


def energy_cdf(grid, tau: float) -> MeasureCDF:
    """CDF of ``(mu_minus + mu_plus) / 2``, the measure with density
    ``(|R|^2 + |S|^2) / 2 = |n_t|^2 + c^2 |n_x|^2`` plus concentrated parts."""
    mm, mp = energy_measures(grid, tau)
    return MeasureCDF(mm.xs.copy(), 0.5 * (mm.F + mp.F))


# --------------------------------------------------------------------------
# joint report


@dataclass
class ComparisonReport:
    time: float
    sobolev_rhs: float
    l1_lhs: float
    kr_lhs: float
    metric_value: float
    constants: Dict[str, float] = field(default_factory=dict)
    inequalities_hold: Dict[str, bool] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return _jsonable(asdict(self))


# about twice the constants fitted on random fixture pairs (see the acceptance suite)
DEFAULT_CONSTANTS = {"sobolev": 0.02, "l1": 20.0, "kr": 1000.0}


def compare_pair(dataA: InitialData, dataB: InitialData, params: ModelParams, h: float,
                 times: Sequence[float], samples: int = 5, kappa=None, delta: float = DEFAULT_DELTA,
                 constants: Optional[Dict[str, float]] = None, sobolev_dx: float = 1e-3,
                 kr_convention: str = "max") -> List[ComparisonReport]:
    """All comparison quantities for one pair at each time in ``times``.

    ``metric_value`` is the linear-path upper bound for the transport distance;
    the flags test ``l1 <= C_l1 * metric``, ``kr <= C_kr * metric`` and, at
    ``t = 0``, ``metric <= C_sobolev * sobolev_rhs``.
    """
    constants = dict(DEFAULT_CONSTANTS, **(constants or {}))
    times = np.asarray(times, dtype=float)
    family = linear_family(dataA, dataB, params, h, float(times.max()), samples)
    dist = distance(dataA, dataB, times, params, h, samples, kappa, delta, family=family)
    sob = sobolev_bound(dataA, dataB, params, dx=sobolev_dx)
    gA, gB = family.grids[-1], family.grids[0]  # lambda = 1 is A, lambda = 0 is B
    out = []
    for t, dv in zip(times, dist["values"]):
        sA, sB = reconstruct(gA, float(t)), reconstruct(gB, float(t))
        l1 = l1_distance(sA, sB)
        kr = kr_distance(energy_cdf(gA, float(t)), energy_cdf(gB, float(t)), convention=kr_convention)
        flags = {"l1": bool(l1 <= constants["l1"] * dv), "kr": bool(kr <= constants["kr"] * dv)}
        if t == 0.0:
            flags["sobolev"] = bool(dv <= constants["sobolev"] * sob)
        out.append(ComparisonReport(float(t), sob, l1, kr, float(dv), dict(constants), flags))
    return out


def reports_json(reports: Sequence[ComparisonReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True)
