"""Nonlinear planar dynamics and coordinate changes.

The planar aggregation-diffusion system

    du/dt + div(u grad c) = Delta u,    -Delta c = u

is integrated pseudo-spectrally with an integrating-factor fourth-order
Runge-Kutta scheme (Lawson form): the linear part is propagated exactly
(heat symbol in physical time, the exact Fokker-Planck flow in self-similar
time) and the transport term ``-div(u v)``, ``v = grad(-Delta)^{-1} u``, is
explicit with a free-space Biot-Savart velocity and 2/3-rule dealiasing.

The three-dimensional near-filament construction (core/background Duhamel
fixed point, assembly and mild-solution check) lives in
:mod:`pksfil.filament` and is re-exported here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import Field2D, Grid2D, WeightSpec, integrate, norm_array
from .profile import RadialProfile
from .propagators import fp_flow_array
from .spectral import dealias, dilate, div, fft2, free_space, ifft2, spectral_tail
from .filament import (  # noqa: F401  (re-exported)
    ContractionRecord,
    FilamentConstants,
    FilamentDivergenceError,
    FilamentSetup,
    FilamentState,
    MildReport,
    TestFunction,
    XNorm,
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

__all__ = [
    "PKSStepper",
    "Trajectory2D",
    "NonnegativityError",
    "gaussian_data",
    "solve_pks_2d",
    "transport_rhs",
    "diagnostics",
    "to_self_similar",
    "from_self_similar",
    "attractor_distance",
    "virial_bound",
    "translate",
    "FilamentConstants",
    "FilamentSetup",
    "FilamentState",
    "FilamentDivergenceError",
    "XNorm",
    "ContractionRecord",
    "MildReport",
    "TestFunction",
    "gaussian_filament_data",
    "duhamel_fixed_point",
    "fixed_point_defect",
    "assemble_solution",
    "verify_mild",
    "x_norm",
    "x_distance",
    "data_norm",
    "lipschitz_ratio",
]


class NonnegativityError(RuntimeError):
    """A resolved solution became negative beyond the allowed round-off level."""


@dataclass(frozen=True)
class PKSStepper:
    """Time-step control and breakdown criteria for :func:`solve_pks_2d`.

    ``frame`` is ``"physical"`` (time ``t``, heat integrating factor) or
    ``"self_similar"`` (time ``tau = log t``, exact Fokker-Planck factor).
    Steps are ``min(dt_max, cfl * h / max|v|)`` and are halved on failure.
    The run is flagged as blowing up when the density exceeds
    ``ceiling / h^2``, when the step falls below ``dt_min``, or when the
    spectral tail shows the grid no longer resolves the solution.
    """

    frame: str = "physical"
    dt_max: float = 5e-3
    cfl: float = 0.5
    dt_min: float = 1e-12
    ceiling: float = 1e6
    tail_tol: float = 1e-8
    neg_tol: float = 1e-8
    fixed_step: bool = False

    def __post_init__(self):
        if self.frame not in ("physical", "self_similar"):
            raise ValueError("frame must be 'physical' or 'self_similar'")
        if not (self.dt_max > 0 and self.cfl > 0):
            raise ValueError("steps must be positive")


@dataclass(frozen=True)
class Trajectory2D:
    """Snapshots and per-step diagnostics of a planar run."""

    grid: Grid2D
    frame: str
    times: np.ndarray
    snapshots: tuple[Field2D, ...]
    diagnostics: dict
    blowup: bool = False
    blowup_reason: str = ""
    last_valid_time: float = math.nan

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.size != len(self.snapshots):
            raise ValueError("one snapshot per sample time required")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("sample times must be strictly increasing")
        object.__setattr__(self, "times", t)

    @property
    def final(self) -> Field2D:
        return self.snapshots[-1]


def gaussian_data(grid: Grid2D, mass: float, s: float = 1.0, center=(0.0, 0.0)) -> Field2D:
    """``mass/(4 pi s) exp(-|x - c|^2/(4 s))``; its second moment about ``c`` is ``4 s mass``."""
    X, Y = grid.mesh
    r2 = (X - center[0]) ** 2 + (Y - center[1]) ** 2
    return Field2D(grid, mass / (4 * math.pi * s) * np.exp(-r2 / (4 * s)))


def transport_rhs(u: np.ndarray, grid: Grid2D) -> tuple[np.ndarray, float]:
    """``-div(u grad(-Delta)^{-1} u)`` (dealiased) and the maximal speed."""
    v = free_space(grid).grad_inverse_laplacian(u)
    speed = float(np.sqrt(np.max(np.sum(v * v, axis=0))))
    return -div(dealias(u[None] * v, grid), grid), speed


def diagnostics(u: np.ndarray, grid: Grid2D) -> dict:
    """Mass, second moment, maximum and boundary-band mass of a density."""
    return {
        "mass": float(integrate(u, grid)),
        "second_moment": float(integrate(u * grid.r2, grid)),
        "max_density": float(np.max(u)),
        "boundary_mass": float(np.sum(np.abs(u[grid.boundary_band()])) * grid.cell_area),
    }


def virial_bound(mass: float, second_moment: float) -> float:
    """Upper bound on the existence time for supercritical mass."""
    if mass <= 8 * math.pi:
        return math.inf
    return second_moment / (4 * mass * (mass / (8 * math.pi) - 1))


class _Linear:
    """Exact propagator of the linear part for one frame."""

    def __init__(self, grid: Grid2D, frame: str):
        self.grid = grid
        self.frame = frame

    def __call__(self, f: np.ndarray, h: float) -> np.ndarray:
        if h == 0:
            return f
        if self.frame == "physical":
            return ifft2(np.exp(-self.grid.k2 * h) * fft2(f)).real
        return fp_flow_array(f, h, self.grid)


def _lawson_rk4(u: np.ndarray, h: float, E: _Linear, grid: Grid2D, k1: np.ndarray):
    """One integrating-factor RK4 step; returns the new state."""
    N = lambda w: transport_rhs(w, grid)[0]
    Eu = E(u, 0.5 * h)
    k2 = N(E(u + 0.5 * h * k1, 0.5 * h))
    k3 = N(Eu + 0.5 * h * k2)
    k4 = N(E(Eu + h * k3, 0.5 * h))
    inner = E(u + (h / 6.0) * k1, 0.5 * h) + (h / 3.0) * (k2 + k3)
    return E(inner, 0.5 * h) + (h / 6.0) * k4


def solve_pks_2d(u0: Field2D, t_end: float, stepper: PKSStepper = PKSStepper(), t0: float = 0.0,
                 record_times: Sequence[float] | None = None) -> Trajectory2D:
    """Integrate the planar system from ``t0`` to ``t_end``.

    In the self-similar frame ``t0``/``t_end`` are values of ``tau`` and the
    state is the rescaled density.  Snapshots are stored at ``t0``, at each
    of ``record_times`` and at the final time; diagnostics at every step.
    """
    if u0.components != 1:
        raise ValueError("initial density must be scalar")
    u = np.array(u0.values.real if np.iscomplexobj(u0.values) else u0.values, dtype=float)
    if np.min(u) < -1e-12 * max(np.max(np.abs(u)), 1e-300):
        raise ValueError("initial density must be nonnegative")
    if not t_end > t0:
        raise ValueError("t_end must exceed the start time")
    grid = u0.grid
    E = _Linear(grid, stepper.frame)
    marks = sorted({float(t) for t in (() if record_times is None else record_times) if t0 < t < t_end} | {float(t_end)})
    times, snaps = [t0], [Field2D(grid, u)]
    diag = {k: [v] for k, v in diagnostics(u, grid).items()}
    diag["time"] = [t0]
    diag["dt"] = [0.0]
    diag["tail"] = [float(spectral_tail(u, grid))]
    t = t0
    dt = stepper.dt_max
    blowup, reason = False, ""
    ceiling = stepper.ceiling / grid.cell_area
    mark_iter = iter(marks)
    mark = next(mark_iter)
    while True:
        k1, speed = transport_rhs(u, grid)
        if stepper.fixed_step:
            dt = stepper.dt_max
        else:
            dt = min(stepper.dt_max, stepper.cfl * grid.h / max(speed, 1e-300), 2.0 * dt)
        dt = min(dt, mark - t)
        while True:
            if dt < stepper.dt_min:
                blowup, reason = True, "step size underflow"
                break
            new = _lawson_rk4(u, dt, E, grid, k1)
            if not np.all(np.isfinite(new)):
                dt *= 0.5
                continue
            tail = float(spectral_tail(new, grid))
            if tail > stepper.tail_tol:
                # either a too-large step excited the tail or the grid can no
                # longer resolve the concentration; halving separates the two
                if dt > 1e-3 * stepper.dt_max and not stepper.fixed_step:
                    dt *= 0.5
                    continue
                blowup, reason = True, "resolution lost"
                break
            mx = float(np.max(new))
            if float(np.min(new)) < -stepper.neg_tol * mx:
                raise NonnegativityError(
                    f"density reached {float(np.min(new)):.3e} (max {mx:.3e}) at t={t + dt:.6g} while resolved"
                )
            if mx > ceiling:
                blowup, reason = True, "density ceiling exceeded"
                break
            break
        if blowup:
            break
        u = new
        # snap to the mark when rounding leaves a sliver no step could cover
        t = t + dt if mark - (t + dt) > 1e-11 * max(1.0, abs(mark)) else mark
        for k, v in diagnostics(u, grid).items():
            diag[k].append(v)
        diag["time"].append(t)
        diag["dt"].append(dt)
        diag["tail"].append(tail)
        if t >= mark:
            times.append(t)
            snaps.append(Field2D(grid, u))
            if t >= t_end:
                break
            mark = next(mark_iter)
    diag = {k: np.asarray(v) for k, v in diag.items()}
    return Trajectory2D(grid, stepper.frame, np.asarray(times), tuple(snaps), diag, blowup, reason, float(t))


# --------------------------------------------------------------------------
# self-similar coordinates
# --------------------------------------------------------------------------


def to_self_similar(u: Field2D, t: float, dst: Grid2D | None = None) -> Field2D:
    """``U(xi) = t u(sqrt(t) xi)`` resampled spectrally onto ``dst``."""
    if not t > 0:
        raise ValueError("t must be positive")
    dst = dst or u.grid
    return Field2D(dst, dilate(u.values, u.grid, math.sqrt(t), dst, amplitude=t))


def from_self_similar(U: Field2D, tau: float, dst: Grid2D | None = None) -> Field2D:
    """``u(x) = e^{-tau} U(e^{-tau/2} x)`` resampled spectrally onto ``dst``."""
    dst = dst or U.grid
    return Field2D(dst, dilate(U.values, U.grid, math.exp(-0.5 * tau), dst, amplitude=math.exp(-tau)))


def translate(f: np.ndarray, grid: Grid2D, shift: tuple[float, float]) -> np.ndarray:
    """Spectral translation ``f(x + shift)``."""
    KX, KY = grid.kmesh
    out = ifft2(fft2(f) * np.exp(1j * (KX * shift[0] + KY * shift[1])))
    return out.real.copy() if not np.iscomplexobj(f) else out


def attractor_distance(traj: Trajectory2D, profile: RadialProfile, weight: WeightSpec = WeightSpec(),
                       recenter: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Relative ``L^2(m)`` distance of the rescaled snapshots to the profile.

    Physical-frame snapshots at ``t > 0`` are converted to self-similar
    variables first.  With ``recenter`` each snapshot is translated so that
    its centre of mass sits at the origin.
    """
    grid = traj.grid
    G = profile.sampler.on_grid(grid)[0]
    g_norm = float(norm_array(G, grid, weight.m, 2.0))
    X, Y = grid.mesh
    taus, dist = [], []
    for t, snap in zip(traj.times, traj.snapshots):
        if traj.frame == "physical":
            if t <= 0:
                continue
            U = to_self_similar(snap, t).values
            tau = math.log(t)
        else:
            U = snap.values
            tau = float(t)
        if recenter:
            mass = float(integrate(U, grid))
            c = (float(integrate(U * X, grid)) / mass, float(integrate(U * Y, grid)) / mass)
            U = translate(U, grid, c)
        taus.append(tau)
        dist.append(float(norm_array(U - G, grid, weight.m, 2.0)) / g_norm)
    return np.asarray(taus), np.asarray(dist)
