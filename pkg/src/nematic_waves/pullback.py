"""Constant-time curves of a chart solution and what lives on them: physical
snapshots, the two energy measures and a local Hoelder diagnostic.

A level curve {t(X, Y) = tau} is monotone (X nondecreasing, Y nonincreasing)
because t increases in both chart directions. It is located by linear
interpolation of t on every grid edge it crosses, both column edges (fixed X)
and row edges (fixed Y). Column edges alone would miss the stretches where the
curve runs almost parallel to the Y axis, which is exactly where the forward
energy concentrates (h2 -> 0).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .chart import H1, H2, L_, M_, N_, P, Q, TT, XX
from .errors import TauOutOfRange
from .solver import H_SING, ChartGrid
from .state import PhysicalSnapshot


@dataclass
class LevelCurve:
    """Ordered crossings of t = tau.

    ``edges`` holds ``(k_a, i_a, k_b, i_b)`` storage indices of the two end
    nodes of the crossed edge and ``theta`` the weight of the second one, so
    any node field ``F`` is interpolated as ``(1 - theta) F[a] + theta F[b]``.
    """

    tau: float
    X: np.ndarray
    Y: np.ndarray
    edges: np.ndarray  # (M, 4) int
    theta: np.ndarray
    states: np.ndarray  # (M, NF)
    monotone: bool = True

    def interpolate(self, field_array: np.ndarray) -> np.ndarray:
        """Interpolate a node array of shape (K+1, N+1, ...) onto the curve."""
        e = self.edges
        a = field_array[e[:, 0], e[:, 1]]
        b = field_array[e[:, 2], e[:, 3]]
        th = self.theta.reshape((-1,) + (1,) * (a.ndim - 1))
        return (1 - th) * a + th * b

    def __len__(self) -> int:
        return len(self.X)


@dataclass
class MeasureCDF:
    """Cumulative mass F(x) of a positive measure.

    ``xs`` is nondecreasing; a repeated abscissa carries a jump of F, which is
    how an atom (energy concentrated at a point) is represented.
    """

    xs: np.ndarray
    F: np.ndarray

    @property
    def total(self) -> float:
        return float(self.F[-1]) if len(self.F) else 0.0

    def __call__(self, x):
        """Right-continuous evaluation (linear between distinct abscissae)."""
        x = np.asarray(x, dtype=float)
        last = len(self.xs) - 1
        idx = np.searchsorted(self.xs, x, side="right") - 1
        j = np.clip(idx, 0, last)
        j1 = np.clip(idx + 1, 0, last)
        gap = self.xs[j1] - self.xs[j]
        w = np.where(gap > 0, (x - self.xs[j]) / np.where(gap > 0, gap, 1.0), 0.0)
        val = np.where(idx < 0, 0.0, self.F[j] + w * (self.F[j1] - self.F[j]))
        return val if val.ndim else float(val)

    def jumps(self, threshold: float) -> List[Tuple[float, float]]:
        """Atoms: (x, mass) where F rises by more than ``threshold`` at one x
        (within 1e-12)."""
        out = []
        if len(self.xs) < 2:
            return out
        start = 0
        for k in range(1, len(self.xs) + 1):
            if k == len(self.xs) or self.xs[k] - self.xs[start] > 1e-12:
                mass = self.F[k - 1] - self.F[start]
                if k - 1 > start and mass > threshold:
                    out.append((float(self.xs[start]), float(mass)))
                start = k
        return out


def _column_crossings(T, tau):
    a = T[:-1, :]
    b = T[1:, :]
    with np.errstate(invalid="ignore"):
        hit = (a <= tau) & (tau <= b) & (b > a)
    ks, iis = np.nonzero(hit)
    return ks, iis, ks + 1, iis


def _row_crossings(T, tau):
    a = T[:-1, :-1]
    b = T[1:, 1:]
    with np.errstate(invalid="ignore"):
        hit = (a <= tau) & (tau <= b) & (b > a)
    ks, iis = np.nonzero(hit)
    return ks, iis, ks + 1, iis + 1


def level_set(grid: ChartGrid, tau: float) -> LevelCurve:
    """The curve t = tau, ordered by increasing X (Y decreasing)."""
    T = grid.U[..., TT]
    tmax = grid.t_complete()
    if not (0.0 <= tau <= tmax):
        raise TauOutOfRange(f"tau={tau} outside the completely solved range [0, {tmax:.6g}]")
    if tau == 0.0:
        i = np.arange(grid.N + 1)
        edges = np.stack([np.zeros_like(i), i, np.zeros_like(i), i], axis=1)
        return LevelCurve(0.0, grid.X_of(i).astype(float), grid.Y_of(0, i).astype(float),
                          edges, np.zeros(len(i)), grid.U[0].copy())
    parts = [_column_crossings(T, tau), _row_crossings(T, tau)]
    ka = np.concatenate([p[0] for p in parts])
    ia = np.concatenate([p[1] for p in parts])
    kb = np.concatenate([p[2] for p in parts])
    ib = np.concatenate([p[3] for p in parts])
    ta, tb = T[ka, ia], T[kb, ib]
    theta = (tau - ta) / (tb - ta)
    Xa, Ya = grid.X_of(ia), grid.Y_of(ka, ia)
    Xb, Yb = grid.X_of(ib), grid.Y_of(kb, ib)
    X = (1 - theta) * Xa + theta * Xb
    Y = (1 - theta) * Ya + theta * Yb
    # snap to a lattice of h*1e-9 so that a node hit from several edges dedups
    q = 1e-9 * grid.h
    key = np.stack([np.round(X / q), np.round(-Y / q)], axis=1)
    _, first = np.unique(key, axis=0, return_index=True)
    order = first[np.lexsort((-Y[first], X[first]))]
    edges = np.stack([ka, ia, kb, ib], axis=1)[order]
    th = theta[order]
    Ua = grid.U[edges[:, 0], edges[:, 1]]
    Ub = grid.U[edges[:, 2], edges[:, 3]]
    states = (1 - th)[:, None] * Ua + th[:, None] * Ub
    Xo, Yo = X[order], Y[order]
    monotone = bool(np.all(np.diff(Xo) >= 0) and np.all(np.diff(Yo) <= 0))
    return LevelCurve(float(tau), Xo, Yo, edges, th, states, monotone)


def _concentration_mask(states, h_sing):
    return (states[:, H1] <= h_sing) | (states[:, H2] <= h_sing)


def reconstruct(grid: ChartGrid, tau: float, h_sing: float = H_SING,
                x_tol: float = 1e-13) -> PhysicalSnapshot:
    """Physical snapshot at time tau.

    The interpolated director is renormalised and R, S are projected onto its
    tangent plane. Points whose x does not advance by more than ``x_tol`` are
    collapsed onto one (the first); nodes with h1 or h2 at most ``h_sing`` are flagged in
    ``snapshot.concentration``.
    """
    curve = level_set(grid, tau)
    st = curve.states[advancing_mask(curve.states[:, XX], x_tol)]
    flagged = _concentration_mask(st, h_sing)
    with np.errstate(divide="ignore", invalid="ignore"):
        R = st[:, L_] / st[:, H1][:, None]
        S = st[:, M_] / st[:, H2][:, None]
    # edge interpolation leaves the sphere at second order; restore |n| = 1 and n.R = n.S = 0
    n = st[:, N_] / np.linalg.norm(st[:, N_], axis=1)[:, None]
    R = R - n * np.sum(n * R, axis=1)[:, None]
    S = S - n * np.sum(n * S, axis=1)[:, None]
    nt = 0.5 * (R + S)
    snap = PhysicalSnapshot(time=float(tau), x=st[:, XX].copy(), n=n, nt=nt,
                            R=R, S=S, params=grid.params, concentration=flagged)
    # x-derivatives of R and S by the chain rule on the chart grid, for callers
    # that need them more accurately than differences on the uneven curve nodes
    from .tangent import physical_gradient

    with np.errstate(divide="ignore", invalid="ignore"):
        for name, sl, hf in (("Rx", L_, H1), ("Sx", M_, H2)):
            field_x = physical_gradient(grid, grid.U[..., sl] / grid.U[..., hf][..., None])
            snap.meta[name] = curve.interpolate(field_x)[advancing_mask(curve.states[:, XX], x_tol)]
    snap.meta["concentration_intervals"] = concentration_intervals(snap.x, flagged)
    snap.meta["n1_at_concentration"] = st[flagged, 0].tolist()
    return snap


def advancing_mask(x, x_tol: float = 1e-13) -> np.ndarray:
    """Keep-mask dropping points whose x does not exceed the last kept x by
    more than ``x_tol``."""
    keep = np.ones(len(x), dtype=bool)
    last = x[0] if len(x) else 0.0
    for k in range(1, len(x)):
        if x[k] - last <= x_tol:
            keep[k] = False
        else:
            last = x[k]
    return keep


def concentration_intervals(x, mask) -> List[Tuple[float, float]]:
    """Maximal runs of flagged nodes as (x_start, x_end)."""
    out = []
    k = 0
    n = len(mask)
    while k < n:
        if mask[k]:
            j = k
            while j + 1 < n and mask[j + 1]:
                j += 1
            out.append((float(x[k]), float(x[j])))
            k = j + 1
        else:
            k += 1
    return out


def curve_measures(curve: LevelCurve) -> Tuple[MeasureCDF, MeasureCDF]:
    st = curve.states
    dens_minus = st[:, P] * (1 - st[:, H1])
    dens_plus = st[:, Q] * (1 - st[:, H2])
    dX = np.abs(np.diff(curve.X))
    dY = np.abs(np.diff(curve.Y))
    inc_minus = 0.5 * (dens_minus[1:] + dens_minus[:-1]) * dX
    inc_plus = 0.5 * (dens_plus[1:] + dens_plus[:-1]) * dY
    x = np.maximum.accumulate(st[:, XX])  # guard against roundoff reversals
    Fm = np.concatenate([[0.0], np.cumsum(inc_minus)])
    Fp = np.concatenate([[0.0], np.cumsum(inc_plus)])
    return MeasureCDF(x.copy(), Fm), MeasureCDF(x.copy(), Fp)


def energy_measures(grid: ChartGrid, tau: float) -> Tuple[MeasureCDF, MeasureCDF]:
    """CDFs of the backward (mu_minus, density |R|^2) and forward (mu_plus,
    density |S|^2) energy measures at time tau, integrated in chart variables
    so that they stay finite through concentration points."""
    return curve_measures(level_set(grid, tau))


def total_energy(grid: ChartGrid, tau: float) -> float:
    mm, mp = energy_measures(grid, tau)
    return mm.total + mp.total


def holder_estimate(snapshot: PhysicalSnapshot, window: float = 0.1,
                    exponent: float = 0.5) -> float:
    """max |n(x) - n(y)| / |x - y|^exponent over node pairs with
    |x - y| <= window * (domain width)."""
    x = snapshot.x
    n = snapshot.n
    if len(x) < 2:
        return 0.0
    width = window * (x[-1] - x[0])
    best = 0.0
    for k in range(len(x) - 1):
        hi = np.searchsorted(x, x[k] + width * (1 + 1e-12), side="right")
        if hi <= k + 1:
            continue
        d = x[k + 1:hi] - x[k]
        ok = d > 0
        if not np.any(ok):
            continue
        diff = np.linalg.norm(n[k + 1:hi][ok] - n[k], axis=1)
        best = max(best, float(np.max(diff / d[ok] ** exponent)))
    return best


def write_cdf(cdf: MeasureCDF, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "F"])
        for a, b in zip(cdf.xs, cdf.F):
            w.writerow([format(float(a), ".17g"), format(float(b), ".17g")])


def read_cdf(path) -> MeasureCDF:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return MeasureCDF(data[:, 0], data[:, 1])
