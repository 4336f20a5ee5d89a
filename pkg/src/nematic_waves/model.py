"""Elastic constants and the director-dependent wave speed.

The speed is c(n1) = sqrt(alpha + (gamma - alpha) n1^2). Closed forms for the
derivatives used throughout:

    c'  = (gamma - alpha) n1 / c
    c'' = alpha (gamma - alpha) / c^3
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import DegenerateSpeed, NonPositiveConstant, OutOfRange

#: |n1| may exceed 1 by this much (roundoff) before wave_speed refuses it.
N1_CLAMP_TOL = 1e-9


@dataclass(frozen=True)
class ModelParams:
    """Elastic constants (splay ``alpha``, bend ``gamma``)."""

    alpha: float
    gamma: float

    @property
    def c0(self) -> float:
        return float(np.sqrt(min(self.alpha, self.gamma)))

    @property
    def c1(self) -> float:
        return float(np.sqrt(max(self.alpha, self.gamma)))

    @property
    def zeta(self) -> np.ndarray:
        """Per-component coefficients (gamma, alpha, alpha)."""
        return np.array([self.gamma, self.alpha, self.alpha])

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "gamma": self.gamma}


def validate_params(alpha: float, gamma: float) -> ModelParams:
    alpha = float(alpha)
    gamma = float(gamma)
    if not (alpha > 0 and gamma > 0):
        raise NonPositiveConstant(f"elastic constants must be positive, got alpha={alpha}, gamma={gamma}")
    if alpha == gamma:
        raise DegenerateSpeed(f"alpha == gamma == {alpha}: constant wave speed is not supported")
    return ModelParams(alpha, gamma)


def speed(params: ModelParams, n1):
    """Unchecked vectorised (c, c', c''). Used inside the solvers, where n1 may
    drift off [-1, 1] by the scheme's truncation error."""
    a, g = params.alpha, params.gamma
    c2 = a + (g - a) * n1 * n1
    c = np.sqrt(c2)
    cp = (g - a) * n1 / c
    cpp = a * (g - a) / (c2 * c)
    return c, cp, cpp


def wave_speed(params: ModelParams, n1) -> Tuple:
    """Return ``(c, c_prime, c_second)`` at ``n1``, which must lie in [-1, 1]."""
    n1 = np.asarray(n1, dtype=float)
    if np.any(np.abs(n1) > 1 + N1_CLAMP_TOL) or not np.all(np.isfinite(n1)):
        raise OutOfRange(f"|n1| must not exceed 1 (max seen {np.max(np.abs(n1))})")
    n1 = np.clip(n1, -1.0, 1.0)
    c, cp, cpp = speed(params, n1)
    if n1.ndim == 0:
        return float(c), float(cp), float(cpp)
    return c, cp, cpp
