"""Acceptance suite: one test per criterion, one PASS/FAIL line per criterion.

Every criterion runs at its reference resolution and stated tolerance and
prints a summary line (also when pytest captures output).  Runtimes are part
of the criteria.  Run alone with::

    pytest tests/test_acceptance.py -v
"""
from __future__ import annotations

import math
import sys
import time

import numpy as np
import pytest

from pksfil.grid import Field2D, Grid2D, WeightSpec, norm_array
from pksfil.spectral import continuous_ft, continuous_ft_half, fft2, ifft2, inverse_ft, inverse_ft_half

PI = math.pi
pytestmark = pytest.mark.slow


class Criterion:
    """Collects named checks and renders the summary line."""

    def __init__(self, number: int, title: str, budget: float):
        self.number = number
        self.title = title
        self.budget = budget
        self.checks: list[tuple[str, bool, str]] = []
        self.start = time.perf_counter()

    def check(self, name: str, ok: bool, detail: str = "") -> None:
        self.checks.append((name, bool(ok), detail))

    def finish(self, reporter) -> None:
        elapsed = time.perf_counter() - self.start
        self.check("runtime", elapsed < self.budget, f"{elapsed:.1f}s < {self.budget:.0f}s")
        failed = [c for c in self.checks if not c[1]]
        status = "PASS" if not failed else "FAIL"
        parts = "; ".join(f"{n}={'ok' if ok else 'FAIL'}({d})" for n, ok, d in self.checks)
        reporter(f"ACCEPTANCE criterion {self.number} [{self.title}]: {status} -- {parts}")
        assert not failed, "failed checks: " + ", ".join(f"{n} ({d})" for n, _, d in failed)


@pytest.fixture
def report(request):
    tr = request.config.pluginmanager.get_plugin("terminalreporter")
    if tr is None:
        return print

    def write(line: str) -> None:
        tr.ensure_newline()
        tr.write_line(line)

    return write


# --------------------------------------------------------------------------
# 1. radial profiles
# --------------------------------------------------------------------------


def test_criterion_1_profile(report):
    from pksfil.profile import check_asymptotics, solve_profile

    c = Criterion(1, "profile", 10.0)
    for k in (1, 2, 4, 6):
        a = k * PI
        p = solve_profile(a)
        err = abs(p.quadrature_mass() - a) / a
        c.check(f"mass[{k}pi]", err < 1e-6, f"{err:.2e}")
        slope, expected = check_asymptotics(p), -a / (2 * PI)
        dev = abs(slope - expected) / abs(expected)
        c.check(f"tail[{k}pi]", dev < 0.05, f"{slope:.4f} vs {expected:.4f}")
    try:
        solve_profile(8.1 * PI)
        c.check("reject[8.1pi]", False, "accepted")
    except ValueError:
        c.check("reject[8.1pi]", True, "rejected")
    c.finish(report)


# --------------------------------------------------------------------------
# 2. Fokker-Planck flow
# --------------------------------------------------------------------------


def test_criterion_2_fokker_planck(report):
    from pksfil.estimates import fp_fixed_point, fp_gradient_smoothing, fp_mean_zero_rate

    c = Criterion(2, "fokker-planck", 60.0)
    r = fp_fixed_point(R=16.0, N=256)
    c.check("gaussian_fixed", r.constant < 1e-6, f"{r.constant:.2e}")
    r = fp_mean_zero_rate(R=16.0, N=256)
    c.check("mean_zero_rate", abs(r.fitted_exponent - 0.5) <= 0.025, f"{r.fitted_exponent:.6f}")
    r = fp_gradient_smoothing()
    c.check("gradient_exponent", abs(r.fitted_exponent + 0.5) <= 0.1, f"{r.fitted_exponent:.3f}")
    c.finish(report)


# --------------------------------------------------------------------------
# 3. linearized core at 4 pi
# --------------------------------------------------------------------------


def test_criterion_3_core(report):
    from pksfil.estimates import core_boundedness, core_decay_rate, coupling_bound, splitting_identity

    c = Criterion(3, "core", 600.0)
    r = core_decay_rate(alpha=4 * PI)
    c.check("decay_rate_in_(0,0.5)", 0.0 < r.fitted_exponent < 0.5, f"nu={r.fitted_exponent:.5f}")
    r = core_boundedness(alpha=4 * PI, zetas=(0.0, 1.0, 4.0))
    c.check("boundedness_stable", r.passed, f"spread={r.extra['spread']:.3g}")
    r = coupling_bound(alpha=4 * PI, zetas=(0.25, 0.5, 1.0, 2.0, 4.0), taus=(-2.0, -1.0, 0.0, 1.0, 2.0), delta=0.25)
    c.check("coupling_bound_stable", r.passed, f"spread={r.extra['spread']:.3g}")
    r = splitting_identity(alpha=4 * PI)
    c.check("Z1+Z2=Z", r.constant < 1e-8, f"{r.constant:.2e}")
    c.finish(report)


# --------------------------------------------------------------------------
# 4. short-time smoothing
# --------------------------------------------------------------------------


def test_criterion_4_short_time(report):
    from pksfil.estimates import commutation_record, short_time_record

    c = Criterion(4, "short-time", 600.0)
    for p in (2.0, 4.0 / 3.0):
        r = short_time_record("core_div", p)
        c.check(f"S_divbar[p={p:.3g}]", abs(r.fitted_exponent + 1 / p) <= 0.1,
                f"{r.fitted_exponent:.3f} vs {-1 / p:.3f}")
    r = short_time_record("core_grad", 2.0)
    c.check("gradbar_S", abs(r.fitted_exponent + 0.5) <= 0.1, f"{r.fitted_exponent:.3f}")
    r = short_time_record("bg_div", 1.0)
    c.check("bg_S_div", abs(r.fitted_exponent + 0.5) <= 0.1, f"{r.fitted_exponent:.3f}")
    r = commutation_record()
    c.check("commutation", r.passed, f"{r.constant:.2e}")
    for p in (2.0, 4.0):
        r = short_time_record("bg_lp", p)
        c.check(f"L1_to_Lp[p={p:.3g}]", abs(r.fitted_exponent - (1 / p - 1)) <= 0.1,
                f"{r.fitted_exponent:.3f} vs {1 / p - 1:.3f}")
    c.finish(report)


# --------------------------------------------------------------------------
# 5. planar dichotomy
# --------------------------------------------------------------------------


def _virial_slope(mass: float) -> float:
    from pksfil.solver import PKSStepper, gaussian_data, solve_pks_2d

    g = Grid2D(10.0, 256)
    traj = solve_pks_2d(gaussian_data(g, mass, s=0.5), 0.01, PKSStepper(dt_max=1e-4, fixed_step=True))
    d = traj.diagnostics
    return float(np.polyfit(np.asarray(d["time"]), np.asarray(d["second_moment"]), 2)[1])


def _scaling_defect(lam: float = 1.5, T: float = 0.1) -> float:
    """``lam^2 u(lam x, lam^2 t)`` solves the same system; compare node by node."""
    from pksfil.solver import PKSStepper, gaussian_data, solve_pks_2d

    big, small = Grid2D(8.0, 128), Grid2D(8.0 / lam, 128)
    mass, s = 4 * PI, 0.5
    a = solve_pks_2d(gaussian_data(big, mass, s=s), T, PKSStepper(dt_max=1e-3, fixed_step=True)).final.values
    b = solve_pks_2d(gaussian_data(small, mass, s=s / lam**2), T / lam**2,
                     PKSStepper(dt_max=1e-3 / lam**2, fixed_step=True)).final.values
    return float(np.max(np.abs(lam**2 * a - b)) / np.max(np.abs(b)))


def test_criterion_5_dichotomy(report):
    from pksfil.profile import solve_profile
    from pksfil.solver import PKSStepper, attractor_distance, gaussian_data, solve_pks_2d, virial_bound

    c = Criterion(5, "dichotomy", 300.0)
    # subcritical: self-similar frame up to tau = 8
    g = Grid2D(12.0, 256)
    traj = solve_pks_2d(gaussian_data(g, 4 * PI), 8.0, PKSStepper(frame="self_similar", dt_max=0.05),
                        record_times=np.arange(0.5, 8.0, 0.5))
    _, dist = attractor_distance(traj, solve_profile(4 * PI), WeightSpec(3.0, 2.0))
    c.check("4pi_attractor", (not traj.blowup) and dist[-1] < 0.05, f"{dist[-1]:.2e} at tau=8")
    # supercritical: physical frame up to 1.5 x the virial bound
    g = Grid2D(8.0, 256)
    u0 = gaussian_data(g, 12 * PI)
    bound = virial_bound(12 * PI, float(np.sum(u0.values * g.r2) * g.cell_area))
    traj = solve_pks_2d(u0, 1.5 * bound, PKSStepper(dt_max=5e-3))
    c.check("12pi_blowup", traj.blowup and traj.last_valid_time < 1.5 * bound,
            f"flag t={traj.last_valid_time:.4f}, bound={bound:.4f}, {traj.blowup_reason}")
    for k in (4, 12):
        M = k * PI
        slope, expected = _virial_slope(M), 4 * M - M * M / (2 * PI)
        c.check(f"virial_slope[{k}pi]", abs(slope - expected) <= 0.01 * abs(expected),
                f"{slope:.5g} vs {expected:.5g}")
    d = _scaling_defect()
    c.check("scaling_covariance", d < 1e-4, f"{d:.2e}")
    c.finish(report)


# --------------------------------------------------------------------------
# 6. near-filament Duhamel solutions
# --------------------------------------------------------------------------


def _mild_tests():
    from pksfil.filament import TestFunction

    return [TestFunction(), TestFunction(a=1, x0=(0.2, 0.0)), TestFunction(c=1, sz=0.7),
            TestFunction(sigma=0.5, x0=(0.3, -0.2), z0=0.5)]


def _perturbed(mu, setup, src, delta):
    from pksfil.filament import gaussian_filament_data

    bump = gaussian_filament_data(src, setup.zetas, setup.dzeta, 1.0, center=(0.02, -0.01), z_center=0.5)
    return type(mu)(mu.grid, mu.zetas, mu.slices + delta * bump.slices, True)


def test_criterion_6_filament(report):
    from pksfil.filament import (
        FilamentConstants,
        FilamentSetup,
        duhamel_fixed_point,
        gaussian_filament_data,
        lipschitz_ratio,
        verify_mild,
        x_norm,
    )
    from pksfil.operators import make_context
    from pksfil.profile import make_radial_grid, solve_profile

    eps, alpha = 1e-3, 4 * PI
    c = Criterion(6, "filament", 1800.0)
    constants = FilamentConstants(M=4.0, D=16.0)
    prof = solve_profile(alpha, make_radial_grid(16.0, 32768))
    src = Grid2D(1.0, 128)

    setup = FilamentSetup(grid=Grid2D(16.0, 128), zeta_max=4.0, dzeta=0.25)
    ctx = make_context(prof, setup.grid)
    mu = gaussian_filament_data(src, setup.zetas, setup.dzeta, eps)
    t0 = time.perf_counter()
    state, log = duhamel_fixed_point(mu, prof, eps, setup, constants, ctx)
    late = [r.ratio for r in log if r.iteration >= 3]
    c.check("picard_ratio", bool(late) and all(q < 0.5 for q in late),
            "ratios=" + ",".join(f"{r.ratio:.2g}" for r in log))
    xn = x_norm(state, constants, eps)
    c.check("x_norm<=D*eps", xn.within_ball, f"{xn.value:.3e} <= {constants.D * eps:.3e}")
    rep = verify_mild(state, prof, mu, _mild_tests(), [0.1, 0.01, 0.001], ctx=ctx)
    c.check("duhamel_monotone", rep.monotone("duhamel"),
            "max residual " + ",".join(f"{v:.2e}" for v in np.max(rep.relative_duhamel, axis=0)))
    main_run = time.perf_counter() - t0
    c.check("run_N128_33_slices", main_run < 1800.0, f"{main_run:.0f}s")

    # Lipschitz constant at two resolutions
    delta = 1e-4
    mu2 = _perturbed(mu, setup, src, delta)
    eps_l = max(eps, 1.1e-3)
    lip128 = lipschitz_ratio(mu, mu2, prof, setup, constants, ctx, state1=state)["ratio"]
    coarse = FilamentSetup(grid=Grid2D(16.0, 96), zeta_max=4.0, dzeta=0.25)
    lip96 = lipschitz_ratio(mu, _perturbed(mu, coarse, src, delta), prof, coarse, constants,
                            make_context(prof, coarse.grid))["ratio"]
    rel = abs(lip96 / lip128 - 1)
    c.check("lipschitz_refinement", rel < 0.2, f"N96={lip96:.4g}, N128={lip128:.4g}, rel={rel:.3f}, eps<={eps_l:g}")

    # z-independent data against the planar (single-slice) run
    mu_z = gaussian_filament_data(src, setup.zetas, setup.dzeta, eps, z_independent=True)
    full, _ = duhamel_fixed_point(mu_z, prof, eps, setup, constants, ctx)
    planar_setup = FilamentSetup(grid=Grid2D(16.0, 128), zeta_max=0.0, dzeta=0.25)
    mu_p = gaussian_filament_data(src, planar_setup.zetas, planar_setup.dzeta, eps, z_independent=True)
    planar, _ = duhamel_fixed_point(mu_p, prof, eps, planar_setup, constants, ctx)
    scale = max(np.max(np.abs(planar.core)), np.max(np.abs(planar.background)))
    gap = max(np.max(np.abs(full.core[:, 0] - planar.core[:, 0])),
              np.max(np.abs(full.background[:, 0] - planar.background[:, 0]))) / scale
    rest = max(np.max(np.abs(full.core[:, 1:])), np.max(np.abs(full.background[:, 1:]))) / scale
    c.check("z_independent=planar", gap < 1e-8 and rest < 1e-8, f"gap={gap:.1e}, other slices={rest:.1e}")
    c.finish(report)


# --------------------------------------------------------------------------
# 7. infrastructure
# --------------------------------------------------------------------------


def test_criterion_7_infrastructure(report, tmp_path):
    from pksfil.cli import main

    c = Criterion(7, "infrastructure", 600.0)
    rng = np.random.default_rng(12345)
    g = Grid2D(6.0, 16)
    bad_h = bad_t = 0
    for i in range(1000):
        p = [1.0, 4 / 3, 2.0, 4.0, math.inf][i % 5]
        m = [0.0, 1.0, 3.0][i % 3]
        a, b = rng.normal(size=(2, 16, 16)) * rng.lognormal(size=(2, 1, 1))
        s = rng.normal() * 10.0
        na, nb = norm_array(a, g, m, p), norm_array(b, g, m, p)
        if abs(norm_array(s * a, g, m, p) - abs(s) * na) > 1e-12 * abs(s) * na:
            bad_h += 1
        if norm_array(a + b, g, m, p) > (na + nb) * (1 + 1e-12):
            bad_t += 1
    c.check("norm_homogeneity", bad_h == 0, f"{bad_h}/1000 violations")
    c.check("norm_triangle", bad_t == 0, f"{bad_t}/1000 violations")

    g = Grid2D(8.0, 128)
    X, Y = g.mesh
    f = np.exp(-((X - 0.3) ** 2 + (Y + 0.5) ** 2)) * (1 + 0.2 * X)
    z = rng.normal(size=(128, 128)) + 1j * rng.normal(size=(128, 128))
    errs = [np.max(np.abs(ifft2(fft2(z)) - z)) / np.max(np.abs(z)),
            np.max(np.abs(inverse_ft(continuous_ft(f, g), g, real=True) - f)) / np.max(np.abs(f)),
            np.max(np.abs(inverse_ft_half(continuous_ft_half(f, g), g) - f)) / np.max(np.abs(f))]
    c.check("spectral_round_trip", max(errs) < 1e-12, f"{max(errs):.1e}")

    files = []
    for _ in range(2):
        code = main(["estimates", "--suite", "resolvent", "--seed", "7", "--out", str(tmp_path), "--quiet"])
        files.append((tmp_path / "estimates" / "records.jsonl").read_bytes())
    same = files[0] == files[1] and len(files[0]) > 0
    c.check("jsonl_determinism", same and code in (0, 3), f"{len(files[0])} bytes, exit {code}")
    c.finish(report)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(pytest.main([__file__, "-v"]))
