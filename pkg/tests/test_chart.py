import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from nematic_waves.chart import (H1, H2, L_, M_, N_, NF, P, Q, TT, XX, ChartState, boundary_data,
                                 constraint_residuals, rhs_arrays, semilinear_rhs)
from nematic_waves.errors import InvariantViolation, NonFiniteDerivative, UnitNormViolation
from nematic_waves.fixtures import DEFAULT_PARAMS, InitialData, fixture

PRM = DEFAULT_PARAMS


def packed_state(n, R, S, p=1.0, q=1.0, x=0.0, t=0.0):
    R2, S2 = R @ R, S @ S
    h1, h2 = 1 / (1 + R2), 1 / (1 + S2)
    return np.concatenate([n, R * h1, S * h2, [h1, h2, p, q, x, t]])


vec3 = arrays(np.float64, 3, elements=st.floats(-30, 30, allow_nan=False))
direction = arrays(np.float64, 3, elements=st.floats(-1, 1, allow_nan=False))
positive = st.floats(0.01, 50.0)


@st.composite
def consistent_states(draw):
    d = draw(direction)
    if np.linalg.norm(d) < 0.1:
        d = np.array([0.3, 0.5, -0.2])
    n = d / np.linalg.norm(d)
    R, S = draw(vec3), draw(vec3)
    R, S = R - n * (n @ R), S - n * (n @ S)
    return packed_state(n, R, S, draw(positive), draw(positive))


def test_boundary_of_constant_data_is_trivial(params):
    xs = np.linspace(-1, 1, 21)
    bc = boundary_data(fixture("trivial"), params, xs)
    U = bc.U
    assert np.allclose(U[:, N_], [0, 1, 0])
    assert np.all(U[:, H1] == 1) and np.all(U[:, H2] == 1)
    assert np.all(U[:, P] == 1) and np.all(U[:, Q] == 1)
    assert np.all(U[:, L_] == 0) and np.all(U[:, M_] == 0)
    assert np.array_equal(U[:, XX], xs) and np.all(U[:, TT] == 0)
    assert bc.step == pytest.approx(0.1)


def test_boundary_of_planar_data_has_no_third_channel(params):
    bc = boundary_data(fixture("F2"), params, np.linspace(-0.3, 0.3, 61))
    assert np.max(np.abs(bc.U[:, [2, 5, 8]])) == 0.0


def test_boundary_of_f1_matches_independent_evaluation(params):
    data = fixture("F1")
    xs = np.linspace(-0.19, 0.19, 20)
    bc = boundary_data(data, params, xs)
    step = 1e-6
    for k, x in enumerate(xs):
        n = data.n0(np.array([x]))[0]
        nx = (data.n0(np.array([x + step]))[0] - data.n0(np.array([x - step]))[0]) / (2 * step)
        nt = data.n1(np.array([x]))[0]
        c = np.sqrt(1 + 3 * n[0] ** 2)
        R, S = nt + c * nx, nt - c * nx
        ref = packed_state(n, R, S, 1 + R @ R, 1 + S @ S, x, 0.0)
        assert np.allclose(bc.U[k], ref, rtol=1e-7, atol=1e-7)
    assert np.max(np.abs(np.concatenate(list(constraint_residuals(bc.U).values())))) < 1e-12


def test_boundary_rejects_bad_data(params):
    good = fixture("F1")
    off = InitialData(lambda x: 1.01 * good.n0(x), good.n0_x, good.n1, good.support)
    with pytest.raises(UnitNormViolation):
        boundary_data(off, params, np.linspace(-0.3, 0.3, 11))
    inf = InitialData(good.n0, lambda x: np.full((len(x), 3), np.inf), good.n1, good.support)
    with pytest.raises(NonFiniteDerivative):
        boundary_data(inf, params, np.linspace(-0.3, 0.3, 11))


def test_rhs_of_trivial_state(params):
    u = ChartState.from_vector(packed_state(np.array([0, 1.0, 0]), np.zeros(3), np.zeros(3)))
    rhs = semilinear_rhs(u, params)
    for group in (rhs.dY, rhs.dX):
        for value in group.values():
            assert np.all(np.asarray(value) == 0)
    assert rhs.dxt == {"t_X": 0.5, "t_Y": 0.5, "x_X": 0.5, "x_Y": -0.5}


def test_rhs_rejects_inconsistent_state(params):
    vec = packed_state(np.array([0, 1.0, 0]), np.zeros(3), np.zeros(3))
    vec[H1] = 0.5
    with pytest.raises(InvariantViolation):
        semilinear_rhs(ChartState.from_vector(vec), params)
    vec = packed_state(np.array([0, 1.0, 0]), np.zeros(3), np.zeros(3), p=-1.0)
    with pytest.raises(InvariantViolation):
        semilinear_rhs(ChartState.from_vector(vec), params)


def test_state_vector_round_trip():
    vec = packed_state(np.array([0.6, 0.8, 0]), np.array([0, 0, 2.0]), np.array([0.8, -0.6, 1.0]), 3.0, 4.0, 0.1, 0.2)
    assert np.array_equal(ChartState.from_vector(vec).to_vector(), vec)


def hand_expanded(vec, alpha, gamma):
    """Component-wise evaluation of the semilinear system at one state."""
    n, l, m = vec[0:3], vec[3:6], vec[6:9]
    h1, h2, p, q = vec[9:13]
    c2 = alpha + (gamma - alpha) * n[0] ** 2
    c = np.sqrt(c2)
    dc = (gamma - alpha) * n[0] / c
    zeta = [gamma, alpha, alpha]
    lm = sum(l[i] * m[i] for i in range(3))
    out = {"l": [], "m": []}
    for i in range(3):
        big = ((c2 - zeta[i]) * (h1 + h2 - 2 * h1 * h2) - 2 * (3 * c2 - zeta[i]) * lm) * n[i]
        out["l"].append(q / (8 * c2 * c) * big + dc / (4 * c2) * l[0] * q * (l[i] - m[i]))
        out["m"].append(p / (8 * c2 * c) * big - dc / (4 * c2) * m[0] * p * (l[i] - m[i]))
    out["h1"] = dc / (4 * c2) * q * l[0] * (h1 - h2)
    out["h2"] = dc / (4 * c2) * p * m[0] * (h2 - h1)
    out["p"] = -dc / (4 * c2) * p * q * (l[0] - m[0])
    out["q"] = dc / (4 * c2) * p * q * (l[0] - m[0])
    out["nY"] = q / (2 * c) * m
    out["nX"] = p / (2 * c) * l
    return out


def test_rhs_matches_hand_expansion_on_f1_boundary(params):
    bc = boundary_data(fixture("F1"), params, np.array([-0.05, 0.0, 0.07]))
    for vec in bc.U:
        ref = hand_expanded(vec, params.alpha, params.gamma)
        rhs = semilinear_rhs(ChartState.from_vector(vec), params)
        assert np.allclose(rhs.dY["l"], ref["l"], rtol=1e-13, atol=1e-13)
        assert np.allclose(rhs.dX["m"], ref["m"], rtol=1e-13, atol=1e-13)
        assert np.allclose(rhs.dY["n"], ref["nY"]) and np.allclose(rhs.dX["n"], ref["nX"])
        for key in ("h1", "p"):
            assert np.isclose(rhs.dY[key], ref[key], rtol=1e-13, atol=1e-14)
        for key in ("h2", "q"):
            assert np.isclose(rhs.dX[key], ref[key], rtol=1e-13, atol=1e-14)


@given(consistent_states())
def test_p_and_q_derivatives_are_opposite(vec):
    DY, DX = rhs_arrays(vec, PRM)
    assert DY[P] + DX[Q] == pytest.approx(0.0, abs=1e-9 * (1 + abs(DX[Q])))


@given(consistent_states())
def test_rhs_is_tangent_to_constraint_manifold(vec):
    DY, DX = rhs_arrays(vec, PRM)
    n, l, m, h1, h2 = vec[N_], vec[L_], vec[M_], vec[H1], vec[H2]
    scale = 1 + np.abs(DY[L_]).max() + np.abs(DX[M_]).max() + abs(DY[H1]) + abs(DX[H2])
    assert abs(2 * l @ DY[L_] - (1 - 2 * h1) * DY[H1]) <= 1e-12 * scale
    assert abs(2 * m @ DX[M_] - (1 - 2 * h2) * DX[H2]) <= 1e-12 * scale
    assert abs(n @ DY[N_]) <= 1e-12 * scale
    assert abs(n @ DY[L_] + l @ DY[N_]) <= 1e-12 * scale
    assert abs(n @ DX[M_] + m @ DX[N_]) <= 1e-12 * scale


@given(consistent_states())
def test_time_increases_along_both_characteristics(vec):
    DY, DX = rhs_arrays(vec, PRM)
    assert DX[TT] >= 0 and DY[TT] >= 0
    assert DX[XX] >= 0 >= DY[XX]


def test_packed_layout():
    assert NF == 15


@given(consistent_states())
def test_zeros_of_h1_persist_only_where_speed_is_stationary(vec):
    # at a zero of h1 (l = 0) the Y-derivative of l has a closed form that
    # vanishes exactly when n1 is 0 or +-1
    vec = vec.copy()
    vec[L_] = 0.0
    vec[H1] = 0.0
    DY, _ = rhs_arrays(vec, PRM)
    n1, h2, q = vec[0], vec[H2], vec[Q]
    c = np.sqrt(PRM.alpha + (PRM.gamma - PRM.alpha) * n1 ** 2)
    expected = q * (PRM.gamma - PRM.alpha) * h2 * abs(n1) * np.sqrt(max(0.0, 1 - n1 ** 2)) / (8 * c ** 3)
    assert np.linalg.norm(DY[L_]) == pytest.approx(expected, rel=1e-9, abs=1e-13)
    assert DY[H1] == 0.0
