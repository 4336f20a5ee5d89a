import numpy as np
import pytest

from nematic_waves.chart import TT
from nematic_waves.errors import TauOutOfRange
from nematic_waves.fixtures import DEFAULT_PARAMS, fixture
from nematic_waves.pullback import (MeasureCDF, advancing_mask, concentration_intervals, energy_measures,
                                    holder_estimate, level_set, read_cdf, reconstruct, total_energy,
                                    write_cdf)
from nematic_waves.state import PhysicalSnapshot

from conftest import solved


def test_level_set_of_trivial_solution_is_straight():
    g = solved("trivial", 1 / 50, 1.1)
    curve = level_set(g, 1.0)
    assert np.allclose(curve.X + curve.Y, 2.0, atol=1e-12)
    assert curve.monotone and len(curve) > 10


def test_level_set_at_zero_is_the_initial_line(f1_grid):
    curve = level_set(f1_grid, 0.0)
    assert np.allclose(curve.X + curve.Y, 0.0, atol=1e-12)
    assert len(curve) == f1_grid.N + 1


def test_level_set_interpolation_agrees_with_refined_grid():
    coarse, fine = solved("F1", 1 / 50), solved("F1", 1 / 100)
    curve = level_set(coarse, 0.2)
    assert np.allclose(curve.states[:, TT], 0.2, atol=1e-13)
    worst = 0.0
    for j in np.nonzero(curve.edges[:, 1] == curve.edges[:, 3])[0]:
        Y, states = fine.column(2 * curve.edges[j, 1])
        worst = max(worst, abs(np.interp(curve.Y[j], Y, states[:, TT]) - 0.2))
    assert worst < (2 * coarse.h) ** 2


def test_level_set_outside_band_raises(f1_grid):
    with pytest.raises(TauOutOfRange):
        level_set(f1_grid, 5.0)


def test_reconstruct_trivial(trivial_grid):
    snap = reconstruct(trivial_grid, 0.2)
    assert np.allclose(snap.n, [0, 1, 0]) and np.all(snap.R == 0) and np.all(snap.S == 0)
    assert not snap.concentration.any()


def test_reconstruct_at_zero_reproduces_data(f1_grid, params):
    snap = reconstruct(f1_grid, 0.0)
    data = fixture("F1")
    R, S = data.riemann(snap.x, params)
    assert np.abs(snap.n - data.n0(snap.x)).max() <= 1e-6
    assert np.abs(snap.R - R).max() <= 1e-6 and np.abs(snap.S - S).max() <= 1e-6


def test_reconstructed_snapshots_are_valid(f1_grid):
    for tau in (0.05, 0.15, 0.25):
        snap = reconstruct(f1_grid, tau)
        assert np.all(np.diff(snap.x) > 0)
        snap.validate()
        assert np.abs(np.sum(snap.n * snap.R, axis=1)).max() <= 1e-6
        assert np.abs(np.sum(snap.n * snap.S, axis=1)).max() <= 1e-6


def test_planar_snapshot_stays_planar(f2_grid):
    for tau in (0.1, 0.35):
        snap = reconstruct(f2_grid, tau)
        assert np.abs(snap.n[:, 2]).max() <= 1e-8


def test_energy_measures_trivial(trivial_grid):
    mm, mp = energy_measures(trivial_grid, 0.2)
    assert mm.total == 0.0 and mp.total == 0.0


def test_energy_conserved_through_singular_times(params):
    E0 = fixture("F2").energy(params)
    g = solved("F2", 1 / 200)
    for tau in np.linspace(0, 0.4, 10):
        assert abs(total_energy(g, tau) - E0) / E0 <= 1e-3


def test_measure_density_converges_to_backward_energy_density():
    errs = []
    for h in (1 / 100, 1 / 200):
        g = solved("F1", h)
        snap = reconstruct(g, 0.15)
        mm, _ = energy_measures(g, 0.15)
        density = np.gradient(mm(snap.x), snap.x)
        errs.append(np.abs(density - np.sum(snap.R ** 2, axis=1)).max())
    assert errs[1] < errs[0] / 2


def test_holder_estimate_reference_cases():
    x = np.linspace(0, 1, 101)
    z = np.zeros((101, 3))
    const = PhysicalSnapshot(0, x, np.tile([1.0, 0, 0], (101, 1)), z, z, z, DEFAULT_PARAMS)
    assert holder_estimate(const) == 0.0
    slope = 0.7
    ramp = PhysicalSnapshot(0, x, np.column_stack([slope * x, 0 * x, 0 * x]), z, z, z, DEFAULT_PARAMS)
    assert holder_estimate(ramp, window=1.0) == pytest.approx(slope, rel=1e-12)


def test_holder_estimate_stays_bounded_past_blowup():
    values = [holder_estimate(reconstruct(solved("F3", h), 0.45)) for h in (1 / 100, 1 / 200)]
    assert 0.5 <= values[0] / values[1] <= 2


def test_l2_lipschitz_in_time_bounded_under_refinement():
    constants = []
    for h in (1 / 100, 1 / 200):
        g = solved("F3", h)
        snaps = [reconstruct(g, t) for t in (0.3, 0.35, 0.4)]
        worst = 0.0
        for a, b in zip(snaps, snaps[1:]):
            x = np.linspace(max(a.x[0], b.x[0]), min(a.x[-1], b.x[-1]), 4001)
            na = np.column_stack([np.interp(x, a.x, a.n[:, i]) for i in range(3)])
            nb = np.column_stack([np.interp(x, b.x, b.n[:, i]) for i in range(3)])
            l2 = np.sqrt(np.trapezoid(np.sum((na - nb) ** 2, axis=1), x))
            worst = max(worst, l2 / (b.time - a.time))
        constants.append(worst)
    assert 0.8 <= constants[0] / constants[1] <= 1.25


def test_measure_cdf_jumps_and_round_trip(tmp_path):
    cdf = MeasureCDF(np.array([0.0, 0.5, 0.5, 1.0]), np.array([0.0, 0.2, 0.7, 1.0]))
    assert cdf.jumps(0.1) == [(0.5, pytest.approx(0.5))]
    assert cdf(0.25) == pytest.approx(0.1) and cdf(-1.0) == 0.0 and cdf(0.5) == pytest.approx(0.7)
    write_cdf(cdf, tmp_path / "mu.csv")
    back = read_cdf(tmp_path / "mu.csv")
    assert np.array_equal(back.xs, cdf.xs) and np.array_equal(back.F, cdf.F)


def test_advancing_mask_and_intervals():
    x = np.array([0.0, 0.1, 0.1, 0.1 + 1e-15, 0.3])
    assert advancing_mask(x).tolist() == [True, True, False, False, True]
    mask = np.array([False, True, True, False, True])
    assert concentration_intervals(np.arange(5.0), mask) == [(1.0, 2.0), (4.0, 4.0)]
