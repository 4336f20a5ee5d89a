"""Characteristic coordinates (X, Y): node state, boundary data on the initial
curve X + Y = 0, and the right-hand side of the semilinear system.

Node variables, with R, S the Riemann variables::

    l = R / (1 + |R|^2),  m = S / (1 + |S|^2),
    h1 = 1 / (1 + |R|^2), h2 = 1 / (1 + |S|^2),
    p = (1 + |R|^2) / X_x, q = (1 + |S|^2) / (-Y_x)

plus n, x and t. All of them stay bounded where R or S blow up.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvariantViolation, NonFiniteDerivative, UnitNormViolation
from .fixtures import InitialData
from .model import ModelParams, speed

TOL_ALG = 1e-7

# layout of the packed node vector
N_ = slice(0, 3)
L_ = slice(3, 6)
M_ = slice(6, 9)
H1, H2, P, Q, XX, TT = 9, 10, 11, 12, 13, 14
NF = 15
FIELD_NAMES = ["n1", "n2", "n3", "l1", "l2", "l3", "m1", "m2", "m3",
               "h1", "h2", "p", "q", "x", "t"]

# fields advanced along Y (X fixed) and along X (Y fixed); x and t use both
Y_FIELDS = np.r_[0:3, 3:6, H1, P]
X_FIELDS = np.r_[6:9, H2, Q]


@dataclass(frozen=True)
class ChartState:
    n: np.ndarray
    l: np.ndarray
    m: np.ndarray
    h1: float
    h2: float
    p: float
    q: float
    x: float
    t: float

    @classmethod
    def from_vector(cls, u) -> "ChartState":
        u = np.asarray(u, dtype=float)
        return cls(u[N_].copy(), u[L_].copy(), u[M_].copy(), float(u[H1]), float(u[H2]),
                   float(u[P]), float(u[Q]), float(u[XX]), float(u[TT]))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.n, self.l, self.m,
                               [self.h1, self.h2, self.p, self.q, self.x, self.t]])

    def residuals(self) -> dict:
        return constraint_residuals(self.to_vector())


@dataclass
class BoundaryCurve:
    """States on the initial curve, node k sitting at (X, Y) = (x_k, -x_k)."""

    parameter: np.ndarray
    U: np.ndarray  # (len(parameter), NF)

    @property
    def states(self):
        return [ChartState.from_vector(u) for u in self.U]

    @property
    def step(self) -> float:
        d = np.diff(self.parameter)
        return float(d.mean()) if len(d) else 0.0


def constraint_residuals(U) -> dict:
    """Pointwise algebraic constraint residuals of packed states (..., NF)."""
    U = np.asarray(U, dtype=float)
    n, l, m = U[..., N_], U[..., L_], U[..., M_]
    h1, h2 = U[..., H1], U[..., H2]
    return {
        "l": np.sum(l * l, axis=-1) - h1 * (1 - h1),
        "m": np.sum(m * m, axis=-1) - h2 * (1 - h2),
        "unit": np.linalg.norm(n, axis=-1) - 1.0,
        "nl": np.sum(n * l, axis=-1),
        "nm": np.sum(n * m, axis=-1),
    }


def max_constraint_residual(U) -> float:
    res = constraint_residuals(U)
    vals = [np.nanmax(np.abs(v)) if np.size(v) else 0.0 for v in res.values()]
    return float(max(vals))


def boundary_data(data: InitialData, params: ModelParams, xs) -> BoundaryCurve:
    """Assign chart states along X + Y = 0 from Cauchy data sampled at ``xs``."""
    xs = np.asarray(xs, dtype=float)
    n = data.n0(xs)
    if np.max(np.abs(np.linalg.norm(n, axis=1) - 1)) > TOL_ALG:
        raise UnitNormViolation("initial director is not unit length")
    R, S = data.riemann(xs, params)
    if not (np.all(np.isfinite(R)) and np.all(np.isfinite(S))):
        raise NonFiniteDerivative("initial data derivative is not finite")
    R2 = np.sum(R * R, axis=1)
    S2 = np.sum(S * S, axis=1)
    U = np.empty((len(xs), NF))
    h1 = 1.0 / (1.0 + R2)
    h2 = 1.0 / (1.0 + S2)
    U[:, N_] = n
    U[:, L_] = R * h1[:, None]
    U[:, M_] = S * h2[:, None]
    U[:, H1] = h1
    U[:, H2] = h2
    U[:, P] = 1.0 + R2
    U[:, Q] = 1.0 + S2
    U[:, XX] = xs
    U[:, TT] = 0.0
    return BoundaryCurve(xs.copy(), U)


def rhs_arrays(U, params: ModelParams):
    """Vectorised right-hand side on packed states of shape (..., NF).

    Returns ``(DY, DX)``: Y-derivatives (valid on Y_FIELDS, x, t) and
    X-derivatives (valid on X_FIELDS, x, t, and n for the cross-check).
    Entries without an equation are NaN.
    """
    U = np.asarray(U, dtype=float)
    n, l, m = U[..., N_], U[..., L_], U[..., M_]
    h1, h2, p, q = U[..., H1], U[..., H2], U[..., P], U[..., Q]
    c, cp, _ = speed(params, n[..., 0])
    c2 = c * c
    zeta = params.zeta
    lm = np.sum(l * m, axis=-1)
    hh = h1 + h2 - 2 * h1 * h2
    A = ((c2[..., None] - zeta) * hh[..., None]
         - 2 * (3 * c2[..., None] - zeta) * lm[..., None]) * n
    k = cp / (4 * c2)
    l1, m1 = l[..., 0], m[..., 0]

    DY = np.full(U.shape, np.nan)
    DX = np.full(U.shape, np.nan)
    DY[..., L_] = (q / (8 * c2 * c))[..., None] * A + (k * l1 * q)[..., None] * (l - m)
    DX[..., M_] = (p / (8 * c2 * c))[..., None] * A - (k * m1 * p)[..., None] * (l - m)
    DY[..., N_] = (q / (2 * c))[..., None] * m
    DX[..., N_] = (p / (2 * c))[..., None] * l
    DY[..., H1] = k * q * l1 * (h1 - h2)
    DX[..., H2] = k * p * m1 * (h2 - h1)
    DY[..., P] = -k * p * q * (l1 - m1)
    DX[..., Q] = k * p * q * (l1 - m1)
    DX[..., TT] = p * h1 / (2 * c)
    DY[..., TT] = q * h2 / (2 * c)
    DX[..., XX] = p * h1 / 2
    DY[..., XX] = -q * h2 / 2
    return DY, DX


class RHS(NamedTuple):
    dY: dict
    dX: dict
    dxt: dict


def semilinear_rhs(u: ChartState, params: ModelParams, check: bool = True) -> RHS:
    """Right-hand side of the semilinear system and of the (t, x) equations at
    one node."""
    vec = u.to_vector()
    if check:
        worst = max_constraint_residual(vec)
        if worst > 100 * TOL_ALG:
            raise InvariantViolation(f"chart state violates its constraints by {worst:.3e}")
        if not (u.p > 0 and u.q > 0):
            raise InvariantViolation("p and q must be positive")
    DY, DX = rhs_arrays(vec, params)
    dY = {"l": DY[L_], "n": DY[N_], "h1": DY[H1], "p": DY[P]}
    dX = {"m": DX[M_], "n": DX[N_], "h2": DX[H2], "q": DX[Q]}
    dxt = {"t_X": DX[TT], "t_Y": DY[TT], "x_X": DX[XX], "x_Y": DY[XX]}
    return RHS(dY, dX, dxt)
