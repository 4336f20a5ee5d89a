import numpy as np
import pytest
from scipy.integrate import solve_ivp

from nematic_waves.errors import GridMismatch, SingularRegionCrossed, TauOutOfRange
from nematic_waves.fixtures import DEFAULT_PARAMS, F1_SPEC, FixtureSpec, InitialData, bump, fixture, perturbed
from nematic_waves.model import speed
from nematic_waves.pullback import advancing_mask, reconstruct
from nematic_waves.solver import solve_data
from nematic_waves.tangent import (ChartTangent, TangentBundle, data_tangent, effective_displacements,
                                   effective_terms, evolve_shifts, evolve_tangent, family_tangents,
                                   integrate_v, j_terms_xy, linear_path_tangent, transformed_tangent,
                                   translation_tangent, zero_bundle)

from conftest import solved

P = DEFAULT_PARAMS


def perturbed_grid(base, eps):
    return solve_data(perturbed(F1_SPEC, eps), P, base.h, 0.25, like=base)


# ---- initial tangents -------------------------------------------------------


def test_identical_data_give_zero_tangent():
    d = fixture("F1")
    xs = np.linspace(-0.6, 0.6, 121)
    b = linear_path_tangent(d, d, 0.3, P, xs)
    for arr in (b.v, b.r, b.s, b.w, b.z):
        assert np.all(arr == 0)


def test_temporal_offset_gives_constant_riemann_difference():
    # constant director e3; B adds a temporal bump delta * phi(x) e2 to it
    xs = np.linspace(-0.5, 0.5, 201)
    delta = 0.3
    e3 = lambda x: np.tile([0.0, 0.0, 1.0], (len(x), 1))
    zero = lambda x: np.zeros((len(x), 3))
    A = InitialData(e3, zero, zero, (-0.2, 0.2), "A")
    B = InitialData(e3, zero, lambda x: delta * bump(x / 0.2)[:, None] * np.array([0.0, 1.0, 0.0]),
                    (-0.2, 0.2), "B")
    b = linear_path_tangent(A, B, 0.5, P, xs)
    expected = -delta * bump(xs / 0.2)
    assert np.allclose(b.r[:, 1], expected, atol=1e-14) and np.allclose(b.s[:, 1], expected, atol=1e-14)
    assert np.all(b.r[:, [0, 2]] == 0)
    assert np.abs(b.v).max() < 1e-12


def test_planar_pair_has_planar_tangent():
    A = fixture("F2")
    B = FixtureSpec(bumps=[(0.9, 0.0, 0.2), (0.05, 0.05, 0.1)], e_a=(0, 1, 0), e_b=(1, 0, 0),
                    pure="R").build()
    b = linear_path_tangent(A, B, 0.5, P, np.linspace(-0.5, 0.5, 101))
    assert np.abs(b.v[:, 2]).max() < 1e-12
    assert np.abs(b.r[:, 2]).max() == 0 and np.abs(b.s[:, 2]).max() == 0


def test_integrate_v_reference_solution():
    # with n1 = 0 there is no coupling term, so v is the integral of (r - s)/2
    x = np.linspace(0, 1, 201)
    n = np.tile([0.0, 1.0, 0.0], (201, 1))
    r = np.column_stack([0 * x, 0 * x, np.cos(x)])
    s = -r
    v = integrate_v(x, r, s, n, np.zeros_like(r), np.zeros_like(r), P)
    assert np.allclose(v[:, 2], np.sin(x), atol=1e-8)


def test_left_node_must_agree():
    A, B = fixture("F1"), perturbed(F1_SPEC, 0.1)
    with pytest.raises(GridMismatch):
        linear_path_tangent(A, B, 0.5, P, np.linspace(0.0, 0.4, 11))


# ---- shifts -----------------------------------------------------------------


def test_shifts_are_transported_when_speed_is_stationary():
    spec = FixtureSpec(bumps=[(0.8, 0.0, 0.2)], B=1.0, e_a=(0, 1, 0), e_b=(0, 0, 1), name="n1-free")
    g = solve_data(spec.build(), P, 1 / 100, 0.25)
    xs = g.U[0, :, 13]
    for (x, w, z), tau in zip(evolve_shifts(np.sin(3 * xs), np.cos(2 * xs), g, [0.1, 0.2]), [0.1, 0.2]):
        assert np.allclose(w, np.sin(3 * (x + tau)), atol=1e-12)
        assert np.allclose(z, np.cos(2 * (x - tau)), atol=1e-12)


def test_zero_shifts_stay_zero(f1_grid):
    for x, w, z in evolve_shifts(0.0, 0.0, f1_grid, [0.1, 0.2]):
        assert np.all(w == 0) and np.all(z == 0)


def test_shifts_match_characteristic_integration():
    g = solved("F1", 1 / 200)
    T = 0.2
    times = np.linspace(0, T, 81)
    snaps = [reconstruct(g, t) for t in times]

    def n1_and_slope(x, t):
        j = min(int(t / T * 80), 79)
        th = (t - times[j]) / (times[j + 1] - times[j])
        a, b = snaps[j], snaps[j + 1]
        pick = lambda s: (np.interp(x, s.x, s.n[:, 0]), np.interp(x, s.x, s.nx[:, 0]))
        return [(1 - th) * u + th * v for u, v in zip(pick(a), pick(b))]

    def rhs(t, y):
        n1, n1x = n1_and_slope(y[0], t)
        c, cp, _ = speed(P, n1)
        return [-c, -cp * n1x * y[1]]

    (x, w, z), = evolve_shifts(1.0, 0.0, g, [T])
    assert np.all(z == 0)
    spread = np.abs(w - 1).max()
    for x0 in np.linspace(-0.2, 0.45, 20):
        sol = solve_ivp(rhs, (0, T), [x0, 1.0], rtol=1e-9, atol=1e-12, max_step=T / 400)
        x_end, w_end = sol.y[:, -1]
        assert abs(np.interp(x_end, x, w) - w_end) <= 0.03 * spread


def test_shift_arrays_must_match_nodes(f1_grid):
    with pytest.raises(GridMismatch):
        evolve_shifts(np.zeros(5), 0.0, f1_grid, [0.1])
    with pytest.raises(TauOutOfRange):
        evolve_shifts(0.0, 0.0, f1_grid, [1.0])


# ---- physical route ---------------------------------------------------------


def test_zero_bundle_stays_zero(f1_grid):
    b, = evolve_tangent(zero_bundle(f1_grid.U[0, :, 13]), f1_grid, [0.2])
    for arr in (b.v, b.r, b.s, b.w, b.z, b.rstar, b.sstar):
        assert np.all(arr == 0)


def test_evolution_is_linear(f1_grid):
    xs = f1_grid.U[0, :, 13]
    b0 = data_tangent(fixture("F1"), perturbed(F1_SPEC, 1e-3), 5e-4, P, xs)
    one, = evolve_tangent(b0, f1_grid, [0.2])
    three, = evolve_tangent(b0.scaled(-3.0), f1_grid, [0.2])
    for name in ("v", "r", "s", "w", "z", "rstar", "sstar"):
        a, b = getattr(one, name), getattr(three, name)
        assert np.allclose(b, -3.0 * a, rtol=1e-10, atol=1e-10 * (1 + np.abs(a).max()))


def test_planar_bundle_stays_planar(f2_grid):
    data = fixture("F2")
    other = FixtureSpec(bumps=[(0.9, 0.0, 0.2), (0.01, 0.05, 0.1)], e_a=(0, 1, 0), e_b=(1, 0, 0),
                        pure="R").build()
    xs = f2_grid.U[0, :, 13]
    b, = evolve_tangent(data_tangent(data, other, 0.005, P, xs), f2_grid, [0.05])
    assert np.abs(b.v[:, 2]).max() < 1e-12 and np.abs(b.r[:, 2]).max() < 1e-12
    assert np.abs(b.s[:, 2]).max() < 1e-12


def translation_errors(h, tau=0.1):
    g = solved("F1", h)
    data = fixture("F1")
    b, = evolve_tangent(translation_tangent(data, P, g.U[0, :, 13]), g, [tau], data=data)
    snap = reconstruct(g, tau)
    return (np.abs(b.v - snap.nx).max(), np.abs(b.w + 1).max(),
            max(np.abs(b.rstar).max(), np.abs(b.sstar).max()))


def test_translation_symmetry_oracle():
    coarse, fine = translation_errors(1 / 200), translation_errors(1 / 400)
    for a, b in zip(coarse, fine):
        assert b < a / 3
    assert fine[1] < 1e-4


def test_evolved_bundle_matches_finite_difference_of_solutions():
    errs = []
    for h in (1 / 100, 1 / 200):
        g = solved("F1", h)
        eps = 1e-4
        gB = perturbed_grid(g, eps)
        b, = evolve_tangent(data_tangent(fixture("F1"), perturbed(F1_SPEC, eps), eps / 2, P, g.U[0, :, 13]),
                            g, [0.15], data=fixture("F1"))
        a, c = reconstruct(g, 0.15), reconstruct(gB, 0.15)
        nB = np.column_stack([np.interp(a.x, c.x, c.n[:, i]) for i in range(3)])
        errs.append(np.abs(b.v - (nB - a.n) / eps).max())
    assert errs[1] < errs[0] / 2
    assert errs[1] < 0.01


def test_physical_route_refuses_singular_region(f3_grid):
    with pytest.raises(SingularRegionCrossed):
        evolve_tangent(zero_bundle(f3_grid.U[0, :, 13]), f3_grid, [0.5])


# ---- effective displacements ------------------------------------------------


def test_zero_shifts_leave_displacements_unchanged(f1_grid):
    snap = reconstruct(f1_grid, 0.1)
    rng = np.random.default_rng(3)
    M = len(snap.x)
    b = TangentBundle(0.1, snap.x, rng.normal(size=(M, 3)), rng.normal(size=(M, 3)),
                      rng.normal(size=(M, 3)), np.zeros(M), np.zeros(M))
    out = effective_displacements(b, snap, P)
    assert np.array_equal(out.rstar, b.r) and np.array_equal(out.sstar, b.s)


def test_equal_constant_shifts_on_uniform_state():
    M = 7
    n = np.tile([0.6, 0.8, 0.0], (M, 1))
    R = np.tile([0.0, 0.0, 2.0], (M, 1))
    S = np.tile([-0.8, 0.6, 1.0], (M, 1))
    r = np.arange(3 * M, dtype=float).reshape(M, 3)
    s = -r
    rs, ss = effective_terms(n, R, S, np.zeros((M, 3)), np.zeros((M, 3)), r, s,
                             np.full(M, 0.7), np.full(M, 0.7), P)
    assert np.array_equal(rs, r) and np.array_equal(ss, s)


def test_effective_terms_match_term_by_term_evaluation(f1_grid):
    snap = reconstruct(f1_grid, 0.1)
    idx = np.linspace(5, len(snap.x) - 6, 20).astype(int)
    M = len(snap.x)
    rng = np.random.default_rng(11)
    r, s = rng.normal(size=(M, 3)), rng.normal(size=(M, 3))
    b = TangentBundle(0.1, snap.x, np.zeros((M, 3)), r, s, np.ones(M), np.full(M, 0.5))
    out = effective_displacements(b, snap, P)
    gap = 0.5  # w - z
    Rx, Sx = snap.meta["Rx"], snap.meta["Sx"]
    zeta = [P.gamma, P.alpha, P.alpha]
    for j in idx:
        n, R, S = snap.n[j], snap.R[j], snap.S[j]
        c2 = P.alpha + (P.gamma - P.alpha) * n[0] ** 2
        c = np.sqrt(c2)
        dc = (P.gamma - P.alpha) * n[0] / c
        for i in range(3):
            bracket_r = (c2 - zeta[i]) * (S @ S) - 2 * (3 * c2 - zeta[i]) * (R @ S)
            bracket_s = (c2 - zeta[i]) * (R @ R) - 2 * (3 * c2 - zeta[i]) * (R @ S)
            ref_r = r[j, i] + Rx[j, i] + gap * (n[i] / (8 * c2 * c) * bracket_r - dc / (4 * c2) * R[0] * S[i])
            ref_s = s[j, i] + 0.5 * Sx[j, i] + gap * (n[i] / (8 * c2 * c) * bracket_s - dc / (4 * c2) * R[i] * S[0])
            assert out.rstar[j, i] == pytest.approx(ref_r, rel=1e-12, abs=1e-12)
            assert out.sstar[j, i] == pytest.approx(ref_s, rel=1e-12, abs=1e-12)


# ---- chart route ------------------------------------------------------------


def test_same_grid_gives_zero_chart_tangent(f1_grid):
    tan = transformed_tangent(f1_grid, f1_grid, 1e-3)
    assert np.all(tan.D[f1_grid.valid] == 0)
    jt = j_terms_xy(tan, f1_grid, 0.2)
    for arr in jt.minus + jt.plus:
        assert np.all(arr == 0)


def test_chart_tangent_time_vanishes_on_initial_line(f1_grid):
    tan = transformed_tangent(f1_grid, perturbed_grid(f1_grid, 1e-3), 1e-3)
    assert np.all(tan.Tcal[0] == 0)
    assert np.abs(tan.Xcal[0]).max() < 1e-10  # node positions differ by roundoff only


def test_chart_tangent_converges_in_eps():
    g = solved("F1", 1 / 50)
    tans = [transformed_tangent(g, perturbed_grid(g, e), e).D[g.valid] for e in (4e-2, 2e-2, 1e-2)]
    d1 = np.abs(tans[0] - tans[1]).max()
    d2 = np.abs(tans[1] - tans[2]).max()
    assert 1.6 <= d1 / d2 <= 2.5


def test_chart_tangent_layout_checks(f1_grid):
    with pytest.raises(GridMismatch):
        transformed_tangent(f1_grid, solved("F1", 1 / 50), 1e-3)
    with pytest.raises(ValueError):
        transformed_tangent(f1_grid, f1_grid, 0.0)


def test_family_tangents_of_linear_family_are_constant(f1_grid):
    other = perturbed_grid(f1_grid, 1e-3)
    grids = [f1_grid, other]
    tans = family_tangents(grids, [0.0, 1.0])
    assert np.allclose(tans[0].D[f1_grid.valid], (other.U - f1_grid.U)[f1_grid.valid])
    assert isinstance(tans[1], ChartTangent)


def test_chart_and_physical_tangents_agree():
    # w = X + c T, z = X - c T and v + (R w - S z)/2c = N on the level curve
    errs = []
    for h in (1 / 100, 1 / 200):
        g = solved("F1", h)
        eps = 1e-4
        tan = transformed_tangent(g, perturbed_grid(g, eps), eps)
        b, = evolve_tangent(data_tangent(fixture("F1"), perturbed(F1_SPEC, eps), eps / 2, P, g.U[0, :, 13]),
                            g, [0.15], data=fixture("F1"), with_effective=False)
        curve = j_terms_xy(tan, g, 0.15).curve
        keep = advancing_mask(curve.states[:, 13])
        st, d = curve.states[keep], curve.interpolate(tan.D)[keep]
        c = speed(P, st[:, 0])[0]
        R, S = st[:, 3:6] / st[:, 9:10], st[:, 6:9] / st[:, 10:11]
        N = b.v + (R * b.w[:, None] - S * b.z[:, None]) / (2 * c[:, None])
        errs.append((np.abs(d[:, 13] + c * d[:, 14] - b.w).max(), np.abs(d[:, 13] - c * d[:, 14] - b.z).max(),
                     np.abs(N - d[:, 0:3]).max()))
    scale = 0.4
    assert all(e < 0.02 * scale for e in errs[1])
    assert errs[1][2] < errs[0][2] / 2
