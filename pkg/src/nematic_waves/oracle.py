"""Independent finite-difference solver in physical variables (smooth regime only).

Leapfrog in time, centred differences in space::

    n^{k+1} = 2 n^k - n^{k-1} + dt^2 [ (c^2 n_x)_x + (-|n_t|^2 + (2c^2 - zeta_i)|n_x|^2) n_i ]

with ``n_t = (n^{k+1} - n^{k-1}) / (2 dt)`` resolved by a two-pass fixed point,
constant (Dirichlet) end values and, by default, renormalisation onto the unit
sphere after every step. It exists to cross-check the characteristic solver
before any gradient blows up.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import GradientExplosion, NoOverlap
from .fixtures import InitialData
from .model import ModelParams, speed
from .state import PhysicalSnapshot


@dataclass
class FDConfig:
    dx: float
    T: float
    cfl: float = 0.5
    projection: bool = True
    explosion_factor: float = 50.0
    xlim: Optional[tuple] = None  # (xL, xR); default: support widened by 2 c1 T
    fixed_point_passes: int = 2

    def __post_init__(self):
        if not (self.dx > 0 and self.T > 0):
            raise ValueError("dx and T must be positive")
        if not (0 < self.cfl < 1):
            raise ValueError("cfl must lie in (0, 1)")


def _dx_central(n, dx):
    d = np.zeros_like(n)
    d[1:-1] = (n[2:] - n[:-2]) / (2 * dx)
    return d


def _accel(n, nt, params: ModelParams, dx):
    """Right-hand side of n_tt at interior nodes (zero at the two ends)."""
    c, _, _ = speed(params, n[:, 0])
    c2 = c * c
    c2h = 0.5 * (c2[1:] + c2[:-1])
    flux = c2h[:, None] * (n[1:] - n[:-1]) / dx
    out = np.zeros_like(n)
    out[1:-1] = (flux[1:] - flux[:-1]) / dx
    nx = _dx_central(n, dx)
    nx2 = np.sum(nx * nx, axis=1)
    nt2 = np.sum(nt * nt, axis=1)
    coef = -nt2[:, None] + (2 * c2[:, None] - params.zeta) * nx2[:, None]
    out[1:-1] += (coef * n)[1:-1]
    return out


def _normalise(n):
    return n / np.linalg.norm(n, axis=1)[:, None]


def _snapshot(t, x, n, nt, params, dx):
    c, _, _ = speed(params, np.clip(n[:, 0], -1, 1))
    nx = _dx_central(n, dx)
    R = nt + c[:, None] * nx
    S = nt - c[:, None] * nx
    snap = PhysicalSnapshot(time=float(t), x=x.copy(), n=n.copy(), nt=nt.copy(), R=R, S=S, params=params)
    snap.meta["source"] = "fd_solve"
    return snap


def fd_solve(data: InitialData, params: ModelParams, cfg: FDConfig,
             times: Optional[Sequence[float]] = None) -> List[PhysicalSnapshot]:
    """Snapshots at ``times`` (default: ``[cfg.T]``).

    The step is ``cfl * dx / c1`` shortened so that ``max(times)`` is a whole
    number of steps; each snapshot is taken at the step nearest its requested
    time and carries that step's actual time.
    """
    times = sorted(float(t) for t in (times if times is not None else [cfg.T]))
    if cfg.xlim is None:
        a, b = data.support
        pad = 2 * params.c1 * max(times) + 0.05
        xL, xR = a - pad, b + pad
    else:
        xL, xR = cfg.xlim
    M = int(np.ceil((xR - xL) / cfg.dx))
    x = xL + cfg.dx * np.arange(M + 1)
    dx = cfg.dx
    t_end = max(times)
    dt0 = cfg.cfl * dx / params.c1
    nsteps = max(1, int(np.ceil(t_end / dt0 - 1e-12)))
    dt = t_end / nsteps if t_end > 0 else dt0
    want = {int(round(t / dt)): t for t in times}

    n0 = data.n0(x)
    v0 = data.n1(x)
    limit = cfg.explosion_factor * max(np.max(np.abs(_dx_central(n0, dx))), 1.0)

    out: List[PhysicalSnapshot] = []
    if 0 in want:
        out.append(_snapshot(0.0, x, n0, v0, params, dx))
    if nsteps == 0 or t_end == 0:
        return out

    # Taylor start: n^1 = n^0 + dt v + dt^2/2 a(n^0, v)
    n_prev = n0
    n_cur = n0 + dt * v0 + 0.5 * dt * dt * _accel(n0, v0, params, dx)
    n_cur[0], n_cur[-1] = n0[0], n0[-1]
    if cfg.projection:
        n_cur = _normalise(n_cur)
    nt_cur = None
    for k in range(1, nsteps + 1):
        # at this point n_cur = n^k, n_prev = n^{k-1}
        nt_guess = (n_cur - n_prev) / dt
        for _ in range(cfg.fixed_point_passes):
            n_next = 2 * n_cur - n_prev + dt * dt * _accel(n_cur, nt_guess, params, dx)
            n_next[0], n_next[-1] = n_cur[0], n_cur[-1]
            nt_guess = (n_next - n_prev) / (2 * dt)
        if cfg.projection:
            n_next = _normalise(n_next)
        nt_cur = (n_next - n_prev) / (2 * dt)
        if k in want:
            out.append(_snapshot(k * dt, x, n_cur, nt_cur, params, dx))
        gmax = np.max(np.abs(_dx_central(n_next, dx)))
        if not np.isfinite(gmax) or gmax > limit:
            raise GradientExplosion(f"max|n_x| = {gmax:.3g} exceeds {limit:.3g} at t = {(k + 1) * dt:.4g}")
        n_prev, n_cur = n_cur, n_next
    return out


def compare_solutions(a: PhysicalSnapshot, b: PhysicalSnapshot) -> Dict[str, float]:
    """Differences of ``b`` (linearly interpolated) against ``a`` on the
    overlap of their x-ranges: L2 and max norms of n, L2 norm of n_t."""
    lo = max(a.x[0], b.x[0])
    hi = min(a.x[-1], b.x[-1])
    mask = (a.x >= lo) & (a.x <= hi)
    if hi <= lo or np.count_nonzero(mask) < 2:
        raise NoOverlap("snapshots share no x-interval")
    xa = a.x[mask]
    nb = np.stack([np.interp(xa, b.x, b.n[:, i]) for i in range(3)], axis=1)
    ntb = np.stack([np.interp(xa, b.x, b.nt[:, i]) for i in range(3)], axis=1)
    dn = a.n[mask] - nb
    dnt = a.nt[mask] - ntb
    l2 = lambda f: float(np.sqrt(np.trapezoid(np.sum(f * f, axis=1), xa)))
    return {
        "l2_n": l2(dn),
        "l2_nt": l2(dnt),
        "linf_n": float(np.max(np.linalg.norm(dn, axis=1))),
    }
