"""Initial data and the built-in fixtures.

Every fixture is a rotation of the constant director ``e_a`` through an angle
profile ``phi(x)`` along a great circle spanned by ``(e_a, e_b)``::

    n0(x) = cos(phi) e_a + sin(phi) e_b
    n1(x) = omega1(x) (-sin(phi) e_a + cos(phi) e_b) + omega2(x) e_c,  e_c = e_a x e_b

with ``phi`` a sum of smooth compactly supported bumps
``A exp(-s^2 / (1 - s^2))``, ``s = (x - x0) / w``, and
``omega1 = B bump(s)``, ``omega2 = B2 s bump(s)`` on the first bump's support.
With ``pure="R"`` the coefficient ``omega1`` is instead ``c phi'``, so that
S vanishes on the great circle and the data launch a single left-moving wave.
The temporal datum is tangent to the sphere by construction. Outside the
support the data equal the constant state ``(e_a, 0)``.

Fixtures (defaults; none of these numbers come from a reference solution):

* F1: smooth, non-planar, no singularity before t = 0.25 (alpha=1, gamma=4).
* F2: planar (n3 = 0, e_a, e_b in the n1-n2 plane) single left-moving wave
  whose front focuses; h1 reaches zero (gradient blow-up) near t ~ 0.29.
* F3: non-planar version of F2: e_a is tilted out of the n1-n2 plane and a
  transverse temporal component (B2) is added. h1 falls below 1e-3 near
  t ~ 0.09 and collapses to ~5e-8 (|R| ~ 4e3) near t ~ 0.29, the same at
  every resolution. Run it to F3_T = 0.6 to go well past the blow-up.

Tilting e_a alone only rotates F2 about the n1 axis, a symmetry of the
system. Tilting e_b instead (so that n1 only reaches 0.96) stops the
focusing at h1 ~ 2e-4: such data are steep but stay regular.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline

from .errors import UnitNormViolation
from .model import ModelParams, speed


def bump(s):
    """exp(-s^2/(1-s^2)) on |s| < 1, zero outside (C-infinity, peak 1)."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    si = s[inside]
    out[inside] = np.exp(-si * si / (1 - si * si))
    return out


def bump_prime(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    si = s[inside]
    out[inside] = np.exp(-si * si / (1 - si * si)) * (-2 * si / (1 - si * si) ** 2)
    return out


@dataclass
class InitialData:
    """Cauchy data (n0, n1) with the analytic derivative of n0.

    Callables take an array ``x`` of shape (N,) and return (N, 3).
    """

    n0: Callable
    n0_x: Callable
    n1: Callable
    support: Tuple[float, float]
    name: str = "data"

    def riemann(self, x, params: ModelParams):
        """(R, S) at t = 0."""
        x = np.asarray(x, dtype=float)
        n = self.n0(x)
        c, _, _ = speed(params, n[:, 0])
        nx = self.n0_x(x)
        nt = self.n1(x)
        return nt + c[:, None] * nx, nt - c[:, None] * nx

    def check(self, x, tol: float = 1e-10) -> None:
        n = self.n0(np.asarray(x, dtype=float))
        dev = np.max(np.abs(np.linalg.norm(n, axis=1) - 1))
        if dev > tol:
            raise UnitNormViolation(f"initial director off the sphere by {dev:.2e}")
        tang = np.max(np.abs(np.sum(n * self.n1(x), axis=1)))
        if tang > tol:
            raise UnitNormViolation(f"n0 . n1 = {tang:.2e}; temporal datum must be tangent")

    def energy(self, params: ModelParams) -> float:
        """E0 = int (|R|^2 + |S|^2) dx by adaptive quadrature on the support."""
        def dens(y):
            R, S = self.riemann(np.array([y]), params)
            return float(np.sum(R ** 2) + np.sum(S ** 2))

        a, b = self.support
        val, _ = quad(dens, a, b, limit=400, epsabs=1e-13, epsrel=1e-12)
        return val


@dataclass
class FixtureSpec:
    """Parameters of a great-circle fixture (see module docstring)."""

    bumps: List[Tuple[float, float, float]]  # (amplitude, centre, half-width) of phi
    B: float = 0.0
    B2: float = 0.0
    e_a: Sequence[float] = (0.0, 1.0, 0.0)
    e_b: Sequence[float] = (1.0, 0.0, 1.0)
    name: str = "fixture"
    # "R" or "S": replace omega1 by the value that makes S (resp. R) vanish,
    # giving a single wave; needs the elastic constants for the speed.
    pure: Optional[str] = None
    alpha: float = 1.0
    gamma: float = 4.0

    def with_bump(self, amp: float, centre: float, width: float, name: Optional[str] = None) -> "FixtureSpec":
        return replace(self, bumps=list(self.bumps) + [(amp, centre, width)], name=name or self.name + "+bump")

    def build(self) -> InitialData:
        ea = np.asarray(self.e_a, dtype=float)
        ea = ea / np.linalg.norm(ea)
        eb = np.asarray(self.e_b, dtype=float)
        eb = eb - ea * (eb @ ea)
        eb = eb / np.linalg.norm(eb)
        ec = np.cross(ea, eb)
        bumps = [tuple(map(float, b)) for b in self.bumps]
        _, c0, w0 = bumps[0]
        B, B2 = float(self.B), float(self.B2)
        sign = {None: 0.0, "R": 1.0, "S": -1.0}[self.pure]
        prm = ModelParams(self.alpha, self.gamma)

        def phi(x):
            return sum(A * bump((x - c) / w) for A, c, w in bumps)

        def phi_x(x):
            return sum(A * bump_prime((x - c) / w) / w for A, c, w in bumps)

        def n0(x):
            x = np.asarray(x, dtype=float)
            f = phi(x)[:, None]
            return np.cos(f) * ea + np.sin(f) * eb

        def n0_x(x):
            x = np.asarray(x, dtype=float)
            f = phi(x)[:, None]
            return phi_x(x)[:, None] * (-np.sin(f) * ea + np.cos(f) * eb)

        def n1(x):
            x = np.asarray(x, dtype=float)
            f = phi(x)[:, None]
            s = (x - c0) / w0
            if sign:
                n1c = np.cos(f[:, 0]) * ea[0] + np.sin(f[:, 0]) * eb[0]
                om1 = (sign * speed(prm, n1c)[0] * phi_x(x))[:, None]
            else:
                om1 = (B * bump(s))[:, None]
            om2 = (B2 * s * bump(s))[:, None]
            return om1 * (-np.sin(f) * ea + np.cos(f) * eb) + om2 * ec

        lo = min(c - w for _, c, w in bumps)
        hi = max(c + w for _, c, w in bumps)
        return InitialData(n0, n0_x, n1, (lo, hi), self.name)


DEFAULT_PARAMS = ModelParams(1.0, 4.0)
DEFAULT_T = 0.25

F1_SPEC = FixtureSpec(bumps=[(0.8, 0.0, 0.2)], B=1.0, B2=0.5, name="F1")
F2_SPEC = FixtureSpec(bumps=[(0.9, 0.0, 0.2)], e_a=(0.0, 1.0, 0.0), e_b=(1.0, 0.0, 0.0),
                      pure="R", name="F2")
F3_SPEC = FixtureSpec(bumps=[(0.9, 0.0, 0.2)], B2=0.5, e_a=(0.0, 1.0, 0.3), e_b=(1.0, 0.0, 0.0),
                      pure="R", name="F3")
F3_T = 0.6
TRIVIAL_SPEC = FixtureSpec(bumps=[(0.0, 0.0, 0.2)], name="trivial")

FIXTURES = {"F1": F1_SPEC, "F2": F2_SPEC, "F3": F3_SPEC, "trivial": TRIVIAL_SPEC}


def fixture(name: str) -> InitialData:
    return FIXTURES[name].build()


def perturbed(spec: FixtureSpec, eps: float, centre: float = 0.05, width: float = 0.1) -> InitialData:
    """``spec`` with an extra angle bump of amplitude ``eps``."""
    return spec.with_bump(eps, centre, width, name=f"{spec.name}+{eps:g}bump").build()


def random_spec(rng: np.random.Generator, name: str = "random") -> FixtureSpec:
    """A random smooth fixture supported in [-0.2, 0.2]."""
    amp = rng.uniform(0.3, 0.9)
    return FixtureSpec(bumps=[(amp, rng.uniform(-0.03, 0.03), 0.17)],
                       B=rng.uniform(-1.0, 1.0), B2=rng.uniform(-0.5, 0.5), name=name)


def tabulated_data(x, n0_values, n1_values, name: str = "table") -> InitialData:
    """Initial data from samples on nodes ``x``.

    ``n0`` is a cubic spline renormalised onto the sphere (its derivative is
    the projected spline derivative); ``n1`` is linearly interpolated and
    projected onto the tangent plane. Outside the table both are held at the
    end values.
    """
    x = np.asarray(x, dtype=float)
    a0 = np.asarray(n0_values, dtype=float)
    a1 = np.asarray(n1_values, dtype=float)
    if x.ndim != 1 or len(x) < 4 or not np.all(np.diff(x) > 0):
        raise ValueError("need at least 4 strictly increasing nodes")
    if a0.shape != (len(x), 3) or a1.shape != (len(x), 3):
        raise ValueError("n0 and n1 tables must have shape (len(x), 3)")
    spline = CubicSpline(x, a0, axis=0)
    lo, hi = float(x[0]), float(x[-1])

    def n0(y):
        v = spline(np.clip(np.asarray(y, dtype=float), lo, hi))
        return v / np.linalg.norm(v, axis=1)[:, None]

    def n0_x(y):
        y = np.asarray(y, dtype=float)
        v = spline(np.clip(y, lo, hi))
        dv = spline(np.clip(y, lo, hi), 1)
        dv[(y < lo) | (y > hi)] = 0.0
        nv = np.linalg.norm(v, axis=1)[:, None]
        u = v / nv
        return (dv - u * np.sum(u * dv, axis=1)[:, None]) / nv

    def n1(y):
        y = np.clip(np.asarray(y, dtype=float), lo, hi)
        w = np.column_stack([np.interp(y, x, a1[:, i]) for i in range(3)])
        u = n0(y)
        return w - u * np.sum(u * w, axis=1)[:, None]

    return InitialData(n0, n0_x, n1, (lo, hi), name)
