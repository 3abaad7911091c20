"""Measured-constant sweeps for the linear estimates.

Each suite returns a list of :class:`EstimateRecord` — one per estimate and
parameter point — holding the fitted exponent or rate, the measured
constant, the fit residual, the expected value and a pass flag.  Operator
norms are approximated from below by maximising over probe families, so a
constant is a lower bound; exponents are least-squares slopes in log-log
(smoothing) or log-linear (decay) coordinates.

Suites
------
``fokker-planck``
    stationary Gaussian, mean-zero decay rate, gradient smoothing.
``core``
    decay rate of the linearized flow on mean-zero data, boundedness of the
    core propagator across z-frequencies, the coupling bound and the
    two-piece splitting identity.
``background``
    ``L^1 -> L^p`` smoothing of the background flow, stability of the vector
    system, commutation with the divergence and monotone damping in ``zeta``.
``resolvent``
    the screened-resolvent bound across ``lambda`` and ``r``.
``short-time``
    the short-time smoothing exponents of the core and background flows.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .grid import Grid2D, a_of_tau, norm_array
from .operators import OperatorContext, Z_array, make_context, split_Z_array
from .profile import make_radial_grid, solve_profile
from .propagators import (
    K_propagate,
    TimeStepper,
    _gaussian_probes,
    background_propagate,
    commutation_defect,
    core_propagate,
    fit_decay,
    fp_flow_array,
    march,
    core_rhs,
    measure_short_time,
    probe_family,
    probe_norm,
)
from .spectral import free_space, grad

__all__ = ["EstimateRecord", "SUITES", "run_suite", "suite_jobs"]

FOUR_PI = 4.0 * math.pi


@dataclass(frozen=True)
class EstimateRecord:
    """One measured estimate at one parameter point."""

    estimate_id: str
    params: dict
    fitted_exponent: float | None
    constant: float | None
    residual: float | None
    expected: float | None
    tolerance: float | None
    passed: bool
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


def _exponent_record(estimate_id: str, params: dict, exponent: float, expected: float, tol: float,
                     constant: float | None = None, residual: float | None = None, extra=None) -> EstimateRecord:
    return EstimateRecord(estimate_id, params, float(exponent), constant, residual, float(expected), float(tol),
                          bool(abs(exponent - expected) <= tol), extra or {})


def _stability_record(estimate_id: str, params: dict, constants: Sequence[float], factor: float = 10.0,
                      extra=None) -> EstimateRecord:
    c = np.asarray(constants, dtype=float)
    spread = float(c.max() / c.min())
    info = {"constants": [float(v) for v in c], "spread": spread}
    info.update(extra or {})
    return EstimateRecord(estimate_id, params, None, float(c.max()), None, None, float(factor),
                          bool(np.all(np.isfinite(c)) and spread < factor), info)


def _loglog_fit(x, y) -> tuple[float, float, float]:
    """Slope, prefactor and rms residual of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    coef = np.polyfit(lx, ly, 1)
    resid = ly - np.polyval(coef, lx)
    return float(coef[0]), float(math.exp(coef[1])), float(np.sqrt(np.mean(resid**2)))


@lru_cache(maxsize=8)
def _context(alpha: float, R: float, N: int, m: float = 3.0, radial_M: int = 2048) -> OperatorContext:
    from .grid import WeightSpec

    p = solve_profile(alpha, make_radial_grid(16.0, radial_M))
    return make_context(p, Grid2D(R, N), WeightSpec(m, 2.0), validate=True, tol=1e-3)


# --------------------------------------------------------------------------
# Fokker-Planck
# --------------------------------------------------------------------------


def fp_fixed_point(R: float = 16.0, N: int = 256, tau: float = 1.0) -> EstimateRecord:
    """The unit-mass Gaussian is invariant under the Fokker-Planck flow."""
    g = Grid2D(R, N)
    f = np.exp(-g.r2 / 4.0) / FOUR_PI
    err = float(np.max(np.abs(fp_flow_array(f, tau, g) - f)) / np.max(f))
    return EstimateRecord("fp_fixed_point", {"R": R, "N": N, "tau": tau}, None, err, None, 0.0, 1e-6, err < 1e-6)


def fp_mean_zero_rate(R: float = 16.0, N: int = 256, window=(1.0, 5.0), m: float = 3.0) -> EstimateRecord:
    """Weighted decay rate of the flow on the mean-zero field ``d_1 G_0``."""
    g = Grid2D(R, N)
    X, _ = g.mesh
    f = -0.5 * X * np.exp(-g.r2 / 4.0) / FOUR_PI
    taus = np.linspace(0.0, window[1], 21)
    series, W, prev = [], f, 0.0
    for t in taus:
        W = fp_flow_array(W, t - prev, g)
        prev = t
        series.append((t, float(norm_array(W, g, m, 2.0))))
    fit = fit_decay(series, window)
    return EstimateRecord("fp_mean_zero_rate", {"R": R, "N": N, "m": m, "window": list(window)}, fit.rate,
                          fit.prefactor, fit.residual, 0.5, 0.025, abs(fit.rate - 0.5) <= 0.025)


def fp_gradient_smoothing(R: float = 4.0, N: int = 512, tau_range=(1e-3, 1e-2), n_tau: int = 6,
                          n_widths: int = 8, m: float = 3.0) -> EstimateRecord:
    """Exponent of ``sup ||grad e^{tau L} f|| / ||f||`` against ``a(tau)``.

    Probes are centred Gaussians with widths from 2.5 cells to 0.5, so the
    worst probe at each ``tau`` is the one whose width matches ``sqrt(a)``.
    """
    g = Grid2D(R, N)
    W = _gaussian_probes(g, np.geomspace(2.5 * g.h, 0.5, n_widths))
    n0 = norm_array(W, g, m, 2.0)
    taus = np.geomspace(*tau_range, n_tau)
    consts, prev = [], 0.0
    for t in taus:
        W = fp_flow_array(W, t - prev, g)
        prev = t
        consts.append(float(np.max(norm_array(grad(W, g), g, m, 2.0, vector=True) / n0)))
    a = np.array([a_of_tau(t) for t in taus])
    slope, c, resid = _loglog_fit(a, consts)
    return _exponent_record("fp_gradient_smoothing", {"R": R, "N": N, "m": m, "tau_range": list(tau_range)},
                            slope, -0.5, 0.1, c, resid)


# --------------------------------------------------------------------------
# linearized core
# --------------------------------------------------------------------------


def core_decay_rate(alpha: float = FOUR_PI, R: float = 12.0, N: int = 192, n_probes: int = 16, seed: int = 1,
                    tau_end: float = 10.0, window=(4.0, 10.0), dtau: float = 0.05) -> EstimateRecord:
    """Envelope decay rate of the linearized planar flow on mean-zero probes.

    The envelope is the maximum weighted norm over the probe family at each
    time; the pass condition is a rate strictly inside ``(0, 1/2)``.
    """
    ctx = _context(alpha, R, N)
    P = probe_family(ctx.grid, n=n_probes, seed=seed, mean_zero=True)
    rec = []
    march(P, 0.0, tau_end, ctx.grid, core_rhs(ctx), stepper=TimeStepper(dtau=dtau),
          stops=np.arange(0.5, tau_end + 1e-9, 0.5),
          on_stop=lambda t, W: rec.append((t, float(np.max(norm_array(W, ctx.grid, ctx.weight.m, 2.0))))))
    fit = fit_decay(rec, window)
    return EstimateRecord("core_decay_rate", {"alpha": alpha, "R": R, "N": N, "probes": n_probes, "seed": seed,
                                              "window": list(window)},
                          fit.rate, fit.prefactor, fit.residual, 0.25, 0.25, bool(0.0 < fit.rate < 0.5),
                          {"short_window": fit.short_window})


def core_boundedness(alpha: float = FOUR_PI, zetas=(0.0, 1.0, 4.0), R: float = 12.0, N: int = 128,
                     n_probes: int = 8, seed: int = 0, span: float = 6.0, dtau: float = 0.05) -> EstimateRecord:
    """``sup ||S(tau, 0) F|| / ||F||`` over ``tau`` in ``[0, span]`` for each ``zeta``.

    Passes when the constants agree within a factor 10 across the sweep.
    """
    ctx = _context(alpha, R, N)
    P = probe_family(ctx.grid, n=n_probes, seed=seed)
    consts = []
    for z in zetas:
        W = P.astype(complex) if z else P.copy()
        best, t = 1.0, 0.0
        while t < span - 1e-12:
            W = core_propagate(W, t, t + 0.5, float(z), ctx, TimeStepper(dtau=dtau))
            t += 0.5
            r = float(np.max(norm_array(W, ctx.grid, ctx.weight.m, 2.0)))
            best = max(best, r)
            if r < 1e-12:
                break
        consts.append(best)
    return _stability_record("core_boundedness", {"alpha": alpha, "zetas": [float(z) for z in zetas],
                                                  "R": R, "N": N, "span": span}, consts)


def coupling_bound(alpha: float = FOUR_PI, zetas=(0.25, 0.5, 1.0, 2.0, 4.0), taus=(-2.0, -1.0, 0.0, 1.0, 2.0),
                   delta: float = 0.25, R: float = 12.0, N: int = 128, n_probes: int = 32,
                   seed: int = 0) -> EstimateRecord:
    """``||Z(W)|| / (|zeta|^{1-2 delta} e^{(1/2 - delta) tau} ||W||)`` over a grid of ``(zeta, tau)``."""
    ctx = _context(alpha, R, N)
    P = probe_family(ctx.grid, n=n_probes, seed=seed)
    consts = []
    for z in zetas:
        for t in taus:
            r = probe_norm(lambda W: Z_array(W, z, t, ctx), P, ctx.grid, m_in=ctx.weight.m, m_out=ctx.weight.m)
            consts.append(r["span_norm"] / (abs(z) ** (1 - 2 * delta) * math.exp((0.5 - delta) * t)))
    return _stability_record("coupling_bound", {"alpha": alpha, "zetas": list(zetas), "taus": list(taus),
                                                "delta": delta, "R": R, "N": N}, consts)


def splitting_identity(alpha: float = FOUR_PI, R: float = 12.0, N: int = 128, n_probes: int = 8, seed: int = 3,
                       points=((0.5, -1.0), (1.0, 0.0), (4.0, 1.0))) -> EstimateRecord:
    """``||Z1 + Z2 - Z|| / ||W||`` on random fields, worst case over the points."""
    ctx = _context(alpha, R, N)
    P = probe_family(ctx.grid, n=n_probes, seed=seed)
    m = ctx.weight.m
    worst = 0.0
    for z, t in points:
        Z1, Z2 = split_Z_array(P, z, t, ctx)
        gap = norm_array(Z1 + Z2 - Z_array(P, z, t, ctx), ctx.grid, m, 2.0) / norm_array(P, ctx.grid, m, 2.0)
        worst = max(worst, float(np.max(gap)))
    return EstimateRecord("splitting_identity", {"alpha": alpha, "R": R, "N": N,
                                                 "points": [list(p) for p in points]},
                          None, worst, None, 0.0, 1e-8, worst < 1e-8)


# --------------------------------------------------------------------------
# background
# --------------------------------------------------------------------------


def short_time_record(op: str, p: float, alpha: float = FOUR_PI, R: float = 5.0, N: int = 640,
                      zeta: float = 0.0, separations=None, substeps: int = 2, tol: float = 0.1) -> EstimateRecord:
    """Wrap :func:`measure_short_time` with the resolution used for each operator.

    The core operators are fitted on ``[1e-3, 1e-2]``; the background ones
    need wider probes in ``L^1`` and are fitted on ``[1e-2, 0.2]``.
    """
    ctx = _context(alpha, R, N)
    g = ctx.grid
    if separations is None:
        separations = np.geomspace(1e-3, 1e-2, 6) if op.startswith("core") else np.geomspace(1e-2, 0.2, 6)
    widths = np.geomspace(2.5 * g.h, 0.5, 8)
    tab = measure_short_time(op, p, ctx, separations=separations, zeta=zeta, widths=widths, substeps=substeps)
    _, c, resid = _loglog_fit(tab.separations, tab.constants)
    return _exponent_record(f"short_time_{op}", {"op": op, "p": p, "alpha": alpha, "zeta": zeta, "R": R, "N": N,
                                                 "separations": list(tab.separations)},
                            tab.exponent, tab.expected, tol, c, resid, {"constants": list(tab.constants)})


def commutation_record(alpha: float = FOUR_PI, R: float = 12.0, N: int = 256, zetas=(0.0, 0.5, 1.0),
                       tau1: float = 1.0, n_fields: int = 4, seed: int = 5, tol: float = 1e-8) -> EstimateRecord:
    """Gap between ``background(div_bar F)`` and ``div_bar K F`` on random 3-vector fields."""
    ctx = _context(alpha, R, N)
    g = ctx.grid
    rng = np.random.default_rng(seed)
    worst = 0.0
    for z in zetas:
        P = probe_family(g, n=3 * n_fields, seed=int(rng.integers(1 << 31)))
        F = P.reshape(n_fields, 3, g.N, g.N)
        if z:
            F = F * (1.0 + 0.5j)
        worst = max(worst, commutation_defect(F, 0.0, tau1, float(z), ctx, TimeStepper(dtau=0.05)))
    return EstimateRecord("commutation", {"alpha": alpha, "R": R, "N": N, "zetas": list(zetas), "tau1": tau1},
                          None, worst, None, 0.0, tol, worst < tol)


def K_stability(alpha: float = FOUR_PI, R: float = 12.0, N: int = 128, zetas=(0.0, 1.0), ratio: float = 20.0,
                n_fields: int = 4, seed: int = 7, factor: float = 10.0) -> EstimateRecord:
    """``sup ||K(t, 1) F||_{L^1} / ||F||_{L^1}`` for ``t`` in ``[1, ratio]``.

    The vector fields live at amplitude ``t^{1/2}`` in self-similar
    variables, so the physical ``L^1`` ratio is ``e^{(tau - tau0)/2}`` times
    the self-similar one.  Passes when the constant is below ``factor``.
    """
    ctx = _context(alpha, R, N)
    g = ctx.grid
    consts = []
    for z in zetas:
        P = probe_family(g, n=3 * n_fields, seed=seed)
        H = P.reshape(n_fields, 3, g.N, g.N).astype(complex if z else float)
        n0 = norm_array(H, g, 0.0, 1.0, vector=True)
        best = [1.0]

        def watch(t, W, best=best, n0=n0):
            best[0] = max(best[0], float(np.max(math.exp(0.5 * t) * norm_array(W, g, 0.0, 1.0, vector=True) / n0)))

        K_propagate(H, 0.0, math.log(ratio), float(z), ctx, TimeStepper(dtau=0.05),
                    stops=np.linspace(0.0, math.log(ratio), 13)[1:], on_stop=watch)
        consts.append(best[0])
    c = float(max(consts))
    return EstimateRecord("K_stability", {"alpha": alpha, "R": R, "N": N, "zetas": list(zetas), "ratio": ratio},
                          None, c, None, None, factor, c < factor, {"constants": consts})


def monotone_damping(alpha: float = FOUR_PI, R: float = 12.0, N: int = 128, zetas=(0.0, 0.5, 1.0, 2.0),
                     tau1: float = 1.0, n_probes: int = 4, seed: int = 9) -> EstimateRecord:
    """Terminal background norms are nonincreasing in ``|zeta|`` for fixed data."""
    ctx = _context(alpha, R, N)
    g = ctx.grid
    P = probe_family(g, n=n_probes, seed=seed)
    norms = []
    for z in zetas:
        B = background_propagate(P.astype(complex) if z else P, 0.0, tau1, float(z), ctx, TimeStepper(dtau=0.05))
        norms.append(norm_array(B, g, 0.0, 1.0))
    norms = np.array(norms)
    ok = bool(np.all(np.diff(norms, axis=0) <= 1e-12 * norms[0]))
    return EstimateRecord("monotone_damping", {"alpha": alpha, "R": R, "N": N, "zetas": list(zetas)},
                          None, float(norms.max()), None, None, None, ok,
                          {"norms": norms.max(axis=1).tolist()})


# --------------------------------------------------------------------------
# resolvent
# --------------------------------------------------------------------------


def resolvent_bound(r: float, lams=(1.0, 2.0, 4.0, 8.0, 16.0), R: float = 12.0, N: int = 128, n_probes: int = 32,
                    seed: int = 0, m: float = 3.0, factor: float = 10.0) -> EstimateRecord:
    """``||(lam^2 - Delta)^{-1} f||_{L^r} / ||f||_{L^2(m)}`` times ``lam^{2/r + 2 delta}``.

    ``delta = 0.9 min(1/2, 1 - 1/r)``; passes when the rescaled constants
    agree within ``factor`` over the ``lam`` sweep.  Probes mix the random
    family with centred Gaussians down to two cells so that rough data are
    represented.
    """
    g = Grid2D(R, N)
    P = np.concatenate([probe_family(g, n=n_probes, seed=seed), _gaussian_probes(g, np.geomspace(2 * g.h, 2.0, 10))])
    P = P / norm_array(P, g, m, 2.0)[:, None, None]
    inv_r = 0.0 if math.isinf(r) else 1.0 / r
    delta = 0.9 * min(0.5, 1.0 - inv_r)
    fs = free_space(g)
    consts = [float(np.max(norm_array(fs.screened(P, float(lam)), g, 0.0, r))) * lam ** (2 * inv_r + 2 * delta)
              for lam in lams]
    return _stability_record("resolvent_bound", {"r": "inf" if math.isinf(r) else r, "delta": delta,
                                                 "lams": list(lams), "R": R, "N": N, "m": m}, consts, factor)


# --------------------------------------------------------------------------
# suites
# --------------------------------------------------------------------------


def suite_jobs(suite: str, alpha: float = FOUR_PI, ps: Sequence[float] | None = None,
               zetas: Sequence[float] | None = None, seed: int = 0) -> list[tuple[Callable, dict]]:
    """The ``(function, kwargs)`` jobs of a suite, in output order."""
    if suite == "fokker-planck":
        return [(fp_fixed_point, {}), (fp_mean_zero_rate, {}), (fp_gradient_smoothing, {})]
    if suite == "core":
        return [
            (core_decay_rate, {"alpha": alpha, "seed": seed + 1}),
            (core_boundedness, {"alpha": alpha, "seed": seed, **({"zetas": tuple(zetas)} if zetas else {})}),
            (coupling_bound, {"alpha": alpha, "seed": seed}),
            (splitting_identity, {"alpha": alpha, "seed": seed + 3}),
        ]
    if suite == "background":
        ps = tuple(ps) if ps else (2.0, 4.0)
        return ([(short_time_record, {"op": "bg_lp", "p": float(p), "alpha": alpha}) for p in ps]
                + [(commutation_record, {"alpha": alpha, "seed": seed + 5}),
                   (K_stability, {"alpha": alpha, "seed": seed + 7}),
                   (monotone_damping, {"alpha": alpha, "seed": seed + 9})])
    if suite == "resolvent":
        return [(resolvent_bound, {"r": r, "seed": seed}) for r in (2.0, 4.0, math.inf)]
    if suite == "short-time":
        ps = tuple(ps) if ps else (2.0, 4.0 / 3.0)
        return ([(short_time_record, {"op": "core_div", "p": float(p), "alpha": alpha}) for p in ps]
                + [(short_time_record, {"op": "core_grad", "p": 2.0, "alpha": alpha}),
                   (short_time_record, {"op": "bg_div", "p": 1.0, "alpha": alpha}),
                   (commutation_record, {"alpha": alpha, "seed": seed + 5})])
    raise ValueError(f"unknown suite {suite!r}; expected one of {sorted(SUITES)}")


SUITES = ("fokker-planck", "core", "background", "resolvent", "short-time")


def _call(job):
    fn, kw = job
    return fn(**kw)


def run_suite(suite: str, workers: int = 1, **kw) -> list[EstimateRecord]:
    """Run a suite; with ``workers > 1`` jobs go to a process pool (order is kept)."""
    jobs = suite_jobs(suite, **kw)
    if workers <= 1 or len(jobs) == 1:
        return [_call(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_call, jobs))
