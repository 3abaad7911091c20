import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pksfil.grid import Field2D, Grid2D, norm_array
from pksfil.propagators import (
    StabilityError,
    TimeStepper,
    commutation_defect,
    core_propagate,
    fit_decay,
    fokker_planck_flow,
    fp_flow_array,
    heat_start,
    linearized_2d_flow,
    march,
    measure_short_time,
    probe_family,
    probe_norm,
    div_bar,
)
from pksfil.spectral import grad

from conftest import smooth_field


def heat_gaussian(grid):
    return np.exp(-grid.r2 / 4) / (4 * math.pi)


class TestFokkerPlanckFlow:
    def test_gaussian_fixed(self):
        g = Grid2D(16.0, 256)
        G = heat_gaussian(g)
        for tau in (0.1, 1.0, 5.0):
            assert np.max(np.abs(fp_flow_array(G, tau, g) - G)) < 1e-12

    def test_gradient_mode_rate(self):
        g = Grid2D(16.0, 256)
        d1 = grad(heat_gaussian(g), g)[0]
        out = fp_flow_array(d1, 2.0, g)
        assert np.max(np.abs(out - math.exp(-1.0) * d1)) < 1e-12

    def test_semigroup(self, rng):
        g = Grid2D(10.0, 128)
        f = smooth_field(g, rng)
        a = fp_flow_array(fp_flow_array(f, 0.3, g), 0.4, g)
        b = fp_flow_array(f, 0.7, g)
        assert np.max(np.abs(a - b)) < 1e-10

    def test_mass_conserved(self, rng):
        g = Grid2D(10.0, 128)
        f = smooth_field(g, rng)
        out = fp_flow_array(f, 1.5, g)
        assert out.sum() == pytest.approx(f.sum(), rel=1e-12)

    def test_complex_matches_real(self, rng):
        g = Grid2D(10.0, 64)
        f = smooth_field(g, rng)
        assert np.allclose(fp_flow_array(f.astype(complex), 0.5, g).real, fp_flow_array(f, 0.5, g), atol=1e-13)

    def test_shift(self, rng):
        g = Grid2D(10.0, 64)
        f = smooth_field(g, rng)
        assert np.allclose(fp_flow_array(f, 0.5, g, shift=-0.5), math.exp(-0.25) * fp_flow_array(f, 0.5, g))

    def test_backward_rejected(self):
        g = Grid2D(10.0, 64)
        with pytest.raises(ValueError):
            fp_flow_array(np.zeros((64, 64)), -0.1, g)

    def test_boundary_warning(self):
        g = Grid2D(4.0, 64)
        with pytest.warns(RuntimeWarning):
            fokker_planck_flow(Field2D(g, np.exp(-g.r2 / 8)), 2.0)


class TestMarch:
    def test_stepper_validation(self):
        with pytest.raises(ValueError):
            TimeStepper(scheme="euler")
        with pytest.raises(ValueError):
            TimeStepper(dtau=0.0)

    def test_zero_rhs_is_exact_flow(self, rng):
        g = Grid2D(10.0, 64)
        f = smooth_field(g, rng)
        out = march(f, 0.0, 1.0, g, lambda W, t: np.zeros_like(W))
        assert np.max(np.abs(out - fp_flow_array(f, 1.0, g))) < 1e-10

    def test_damping_factor(self, rng):
        g = Grid2D(10.0, 64)
        f = smooth_field(g, rng)
        out = march(f, 0.5, 1.0, g, zetas=2.0)
        fac = math.exp(-4.0 * (math.exp(1.0) - math.exp(0.5)))
        assert np.max(np.abs(out - fac * fp_flow_array(f, 0.5, g))) < 1e-10

    def test_stops_visited(self, rng):
        g = Grid2D(10.0, 32)
        seen = []
        march(np.ones((32, 32)), 0.0, 1.0, g, stops=(0.25, 0.5, 2.0), on_stop=lambda t, W: seen.append(t),
              stepper=TimeStepper(dtau=0.3))
        assert seen == [0.25, 0.5, 1.0]

    def test_backward_rejected(self):
        g = Grid2D(10.0, 32)
        with pytest.raises(ValueError):
            march(np.ones((32, 32)), 1.0, 0.0, g)

    def test_exact_scheme_rejects_rhs(self):
        g = Grid2D(10.0, 32)
        with pytest.raises(ValueError):
            march(np.ones((32, 32)), 0.0, 1.0, g, lambda W, t: W, stepper=TimeStepper(scheme="exact"))

    def test_growth_detected(self, rng):
        g = Grid2D(10.0, 32)
        with pytest.raises(StabilityError):
            march(smooth_field(g, rng), 0.0, 1.0, g, lambda W, t: 1e4 * W)

    def test_linear_ode_second_order(self, rng):
        # constant-rate rhs: the split scheme reproduces e^{c tau} to second order
        g = Grid2D(10.0, 64)
        f = smooth_field(g, rng)
        exact = math.exp(-0.7) * fp_flow_array(f, 1.0, g)
        errs = [np.max(np.abs(march(f, 0.0, 1.0, g, lambda W, t: -0.7 * W, stepper=TimeStepper(dtau=d)) - exact))
                for d in (0.1, 0.05)]
        assert 3.5 < errs[0] / errs[1] < 4.5


class TestLinearizedFlow:
    def test_translation_mode_decays_at_half(self, ctx_wide):
        d1 = Field2D(ctx_wide.grid, ctx_wide.gradG[0])
        log = []
        out = linearized_2d_flow(d1, 1.0, ctx_wide, TimeStepper(dtau=0.05), norm_log=log)
        ratio = np.linalg.norm(out.values) / np.linalg.norm(d1.values)
        assert ratio == pytest.approx(math.exp(-0.5), rel=1e-2)
        assert len(log) == 21

    def test_zero_frequency_core_equals_planar(self, ctx_small, rng):
        W = smooth_field(ctx_small.grid, rng)
        a = core_propagate(W, 0.0, 0.5, 0.0, ctx_small)
        b = linearized_2d_flow(Field2D(ctx_small.grid, W), 0.5, ctx_small).values
        assert np.max(np.abs(a - b)) < 1e-12

    def test_core_requires_order(self, ctx_small):
        with pytest.raises(ValueError):
            core_propagate(np.zeros((96, 96)), 1.0, 0.5, 0.0, ctx_small)


def test_heat_start_gaussian():
    # heat flow of a unit Gaussian of variance s for time t, in self-similar variables
    src = Grid2D(8.0, 128)
    dst = Grid2D(12.0, 128)
    s, t = 0.3, 0.5
    u = np.exp(-src.r2 / (2 * s)) / (2 * math.pi * s)
    B = heat_start(u, src, t, dst)
    var = (s + 2 * t) / t
    exact = np.exp(-dst.r2 / (2 * var)) / (2 * math.pi * var)
    assert np.max(np.abs(B - exact)) < 1e-12


def test_heat_start_damps_slices():
    g = Grid2D(8.0, 64)
    u = np.exp(-g.r2)
    B = heat_start(np.stack([u, u]), g, 0.5, g, zetas=np.array([0.0, 2.0]))
    assert np.allclose(B[1], math.exp(-2.0) * B[0], atol=1e-14)


def test_div_bar_z_component():
    g = Grid2D(8.0, 32)
    H = np.zeros((3, 32, 32), dtype=complex)
    H[2] = 1.0
    out = div_bar(H, g, 2.0, math.log(4.0))
    assert np.allclose(out, 4j)


def test_commutation_small(profile_4pi):
    from pksfil.operators import make_context
    ctx = make_context(profile_4pi, Grid2D(12.0, 128))
    F = np.zeros((1, 3, 128, 128), dtype=complex)
    F[0, 0] = np.exp(-ctx.grid.r2)
    F[0, 2] = np.exp(-ctx.grid.r2 / 2)
    d = commutation_defect(F, 0.0, 0.3, np.array([0.5]), ctx, TimeStepper(dtau=0.05))
    assert d < 1e-4


class TestFitDecay:
    def test_noise_free(self):
        t = np.linspace(0, 10, 50)
        fit = fit_decay(np.stack([t, 3 * np.exp(-0.4 * t)], 1))
        assert fit.rate == pytest.approx(0.4, abs=1e-12)
        assert fit.prefactor == pytest.approx(3.0)
        assert not fit.short_window

    @given(rate=st.floats(0.05, 2.0), seed=st.integers(0, 2**31 - 1))
    def test_noisy_recovers_rate(self, rate, seed):
        rng = np.random.default_rng(seed)
        t = np.linspace(0, 20, 200)
        y = np.exp(-rate * t + 0.01 * rng.normal(size=t.size))
        assert fit_decay(np.stack([t, y], 1)).rate == pytest.approx(rate, abs=0.01)

    def test_window_and_flag(self):
        t = np.linspace(0, 10, 101)
        fit = fit_decay(np.stack([t, np.exp(-0.1 * t)], 1), window=(2, 4))
        assert fit.window == (2.0, 4.0) and fit.short_window

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            fit_decay([[0, 1], [1, 0.5]])
        with pytest.raises(ValueError):
            fit_decay(np.stack([np.arange(10.0), -np.ones(10)], 1))


class TestProbes:
    def test_deterministic_and_normalized(self):
        g = Grid2D(8.0, 64)
        a = probe_family(g, 8, seed=3)
        b = probe_family(g, 8, seed=3)
        assert np.array_equal(a, b)
        assert np.allclose(norm_array(a, g, 3.0, 2.0), 1.0)

    def test_mean_zero(self):
        g = Grid2D(8.0, 64)
        a = probe_family(g, 8, seed=1, mean_zero=True)
        assert np.max(np.abs(a.sum(axis=(-2, -1)))) * g.cell_area < 1e-12

    def test_probe_norm_scaling(self):
        g = Grid2D(8.0, 64)
        probes = probe_family(g, 6, seed=2)
        res = probe_norm(lambda W: 2.5 * W, probes, g)
        assert res["max_ratio"] == pytest.approx(2.5)
        assert res["span_norm"] == pytest.approx(2.5)

    def test_span_dominates_single_probes(self):
        g = Grid2D(8.0, 64)
        X, _ = g.mesh
        probes = probe_family(g, 6, seed=2)
        res = probe_norm(lambda W: W * (1 + np.tanh(X)), probes, g)
        assert res["span_norm"] >= res["max_ratio"] * (1 - 1e-12)
        assert res["span_norm"] <= 2.0 + 1e-12


def test_short_time_rejects_unknown(ctx_small):
    with pytest.raises(ValueError):
        measure_short_time("nope", 2.0, ctx_small)


def test_short_time_table_structure(ctx_small):
    seps = np.geomspace(2e-3, 2e-2, 4)
    tab = measure_short_time("core_grad", 2.0, ctx_small, separations=seps,
                             widths=np.geomspace(2.5 * ctx_small.grid.h, 0.5, 6), substeps=2)
    assert tab.expected == -0.5 and len(tab.constants) == 4
    assert np.all(np.isfinite(tab.constants)) and np.all(np.array(tab.constants) > 0)
    assert tab.separations == tuple(seps)
    assert tab.deviation == abs(tab.exponent + 0.5)
    assert tab.as_dict()["op"] == "core_grad"
