import math

import numpy as np
import pytest

from pksfil.grid import Grid2D, ZSliceField, morrey_norm
from pksfil.filament import (
    FilamentConstants,
    FilamentDivergenceError,
    FilamentSetup,
    FilamentState,
    TestFunction,
    assemble_solution,
    data_norm,
    duhamel_fixed_point,
    fixed_point_defect,
    gaussian_filament_data,
    lipschitz_ratio,
    verify_mild,
    x_distance,
    x_norm,
)
from pksfil.operators import make_context

EPS = 1e-3
DATA_GRID = Grid2D(1.0, 64)


@pytest.fixture(scope="module")
def setup():
    return FilamentSetup(grid=Grid2D(12.0, 64), zeta_max=1.0, dzeta=0.5, nodes_per_decade=3, n_nodes=10,
                         max_iter=8)


@pytest.fixture(scope="module")
def ctx(profile_4pi, setup):
    return make_context(profile_4pi, setup.grid)


@pytest.fixture(scope="module")
def datum(setup):
    return gaussian_filament_data(DATA_GRID, setup.zetas, setup.dzeta, EPS, center=(0.05, 0.0))


@pytest.fixture(scope="module")
def solved(profile_4pi, setup, ctx, datum):
    return duhamel_fixed_point(datum, profile_4pi, EPS, setup, ctx=ctx)


class TestConstants:
    @pytest.mark.parametrize("kw", [dict(M=0.5), dict(M=2.0, D=2.0), dict(beta=1.0), dict(eps0=0.0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            FilamentConstants(**kw)

    def test_default_admissible(self):
        c = FilamentConstants()
        assert c.M + c.D / c.M < c.D


class TestSetup:
    def test_time_nodes(self, setup):
        assert setup.times[-1] == pytest.approx(1.0)
        assert np.allclose(np.diff(setup.taus), math.log(10) / 3)
        assert list(setup.half_zetas) == [0.0, 0.5, 1.0]

    def test_rejects_bad(self):
        with pytest.raises(ValueError):
            FilamentSetup(horizon=0.0)
        with pytest.raises(ValueError):
            FilamentSetup(n_nodes=1)

    def test_state_shape_checked(self, setup):
        z = np.zeros((2, 3, 64, 64))
        with pytest.raises(ValueError):
            FilamentState(setup, 4 * math.pi, z, z)


class TestData:
    def test_norm_scaled(self, datum):
        assert data_norm(datum) == pytest.approx(EPS, rel=1e-12)

    def test_z_independent(self, setup):
        mu = gaussian_filament_data(DATA_GRID, setup.zetas, setup.dzeta, EPS, z_independent=True)
        assert np.all(mu.slices[setup.zetas != 0] == 0)
        assert data_norm(mu) == pytest.approx(EPS)

    def test_rejects_large_eps(self, profile_4pi, setup, ctx, datum):
        with pytest.raises(ValueError):
            duhamel_fixed_point(datum, profile_4pi, 0.5, setup, ctx=ctx)

    def test_rejects_datum_above_eps(self, profile_4pi, setup, ctx, datum):
        with pytest.raises(ValueError):
            duhamel_fixed_point(datum, profile_4pi, 0.5 * EPS, setup, ctx=ctx)

    def test_rejects_frequency_mismatch(self, profile_4pi, setup, ctx):
        mu = gaussian_filament_data(DATA_GRID, np.array([-0.5, 0.0, 0.5]), 0.5, EPS)
        with pytest.raises(ValueError):
            duhamel_fixed_point(mu, profile_4pi, EPS, setup, ctx=ctx)

    def test_line_measure_is_small_in_morrey_sense(self):
        from pksfil.grid import LineDensity, MeasureSample
        res = morrey_norm(MeasureSample(lines=(LineDensity(4 * math.pi),)))
        assert res.value == pytest.approx(8 * math.pi)


class TestFixedPoint:
    def test_zero_datum_gives_zero(self, profile_4pi, setup, ctx):
        mu = gaussian_filament_data(DATA_GRID, setup.zetas, setup.dzeta, 0.0)
        state, log = duhamel_fixed_point(mu, profile_4pi, EPS, setup, ctx=ctx)
        assert np.all(state.core == 0) and np.all(state.background == 0)
        assert log[0].difference == 0

    def test_contracts(self, solved):
        _, log = solved
        ratios = [r.ratio for r in log[1:]]
        assert all(r < 1 for r in ratios)
        assert log[-1].difference <= 1e-4 * 16 * EPS

    def test_within_ball(self, solved):
        state, _ = solved
        xn = x_norm(state, eps=EPS)
        assert xn.within_ball and xn.value > 0
        assert xn.value == pytest.approx(xn.M * xn.background + xn.core)

    def test_defect_small(self, profile_4pi, ctx, datum, solved):
        state, _ = solved
        d = fixed_point_defect(state, datum, profile_4pi, ctx=ctx)
        # refining the time steps moves the fixed point by the time-discretization error
        assert d < 0.1 * x_norm(state).value

    def test_distance_to_self(self, solved):
        state, _ = solved
        assert x_distance(state, state) == 0.0

    def test_distance_needs_same_setup(self, solved, profile_4pi, datum):
        state, _ = solved
        other = FilamentSetup(grid=Grid2D(12.0, 64), zeta_max=1.0, dzeta=0.5, nodes_per_decade=3, n_nodes=11)
        z = np.zeros((11, 3, 64, 64), dtype=complex)
        with pytest.raises(ValueError):
            x_distance(state, FilamentState(other, 4 * math.pi, z, z))

    def test_divergence_detected(self, profile_4pi, ctx, setup):
        big = FilamentConstants(eps0=1e3)
        mu = gaussian_filament_data(DATA_GRID, setup.zetas, setup.dzeta, 50.0, width=0.02)
        with pytest.raises(FilamentDivergenceError):
            duhamel_fixed_point(mu, profile_4pi, 50.0, setup, big, ctx=ctx)

    def test_linear_in_datum_without_transport(self, profile_4pi, setup, ctx, datum):
        half = ZSliceField(datum.grid, datum.zetas, 0.5 * datum.slices, True)
        a, _ = duhamel_fixed_point(datum, profile_4pi, EPS, setup, ctx=ctx, transport=False)
        b, _ = duhamel_fixed_point(half, profile_4pi, EPS, setup, ctx=ctx, transport=False)
        assert np.allclose(a.background, 2 * b.background, atol=1e-14)

    def test_lipschitz_ratio(self, profile_4pi, setup, ctx, datum, solved):
        other = gaussian_filament_data(DATA_GRID, setup.zetas, setup.dzeta, 0.9 * EPS, center=(0.05, 0.0))
        res = lipschitz_ratio(datum, other, profile_4pi, setup, ctx=ctx, state1=solved[0])
        assert res["data_distance"] == pytest.approx(0.1 * EPS, rel=1e-10)
        assert 0 < res["ratio"] < 16
        with pytest.raises(ValueError):
            lipschitz_ratio(datum, datum, profile_4pi, setup, ctx=ctx, state1=solved[0])


class TestReconstruction:
    def test_mass_of_zero_slice(self, solved, profile_4pi, setup):
        state, _ = solved
        u = assemble_solution(state, profile_4pi, 1.0, dst=Grid2D(12.0, 64))
        mid = (len(setup.zetas) - 1) // 2
        mass_per_length = np.real(u.slices[mid].sum()) * u.grid.cell_area * setup.dzeta / math.sqrt(2 * math.pi)
        assert mass_per_length == pytest.approx(4 * math.pi, rel=1e-2)


class TestMild:
    def test_heat_only_exact(self, profile_4pi, setup, ctx, datum):
        rep = verify_mild(None, profile_4pi, datum, [TestFunction(), TestFunction(a=1, x0=(0.2, 0.0))],
                          [1.0], setup, ctx, heat_only=True)
        assert np.max(rep.relative_duhamel) < 1e-8

    def test_residuals_shrink_with_time(self, profile_4pi, setup, ctx, datum, solved):
        state, _ = solved
        rep = verify_mild(state, profile_4pi, datum, [TestFunction()], [1.0, 0.1], setup, ctx)
        assert rep.monotone()
        assert rep.relative_duhamel.shape == (1, 2)

    def test_test_function_heat_evolution(self):
        tf = TestFunction(sigma=0.5, sz=0.7)
        # integral of the planar factor is 1 for every s
        g = Grid2D(6.0, 128)
        X, Y = g.mesh
        assert tf.planar(X, Y, 0.3).sum() * g.cell_area == pytest.approx(1.0, rel=1e-8)
        assert tf.line_pairing() == pytest.approx(1 / (2 * math.pi * 0.25), rel=1e-12)
