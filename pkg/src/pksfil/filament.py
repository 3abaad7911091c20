"""Near-filament solutions of the three-dimensional system.

The density is split as

    u(t, x, z) = t^{-1} G(x / sqrt t) + t^{-1} U^c(log t, x / sqrt t, z) + u^b(t, x, z)

with ``G`` the planar profile carrying the line mass, a core correction
``U^c`` at the filament scale and a background ``u^b``.  All fields are
stored as z-Fourier slices (nonnegative frequencies only; the fields are
real in ``z``).  Both corrections are integrated in self-similar variables
``tau = log t``, ``xi = x / sqrt t``; the background is kept as
``U^b = t u^b(sqrt t xi)``, where its drift coefficient is time independent,
and converted back to physical variables on output.

In these variables the full system reads

    d_tau U = (L - e^tau zeta^2) U - div_bar(U V),
    V = (grad_xi, i e^{tau/2} zeta) (-Delta_xi + e^tau zeta^2)^{-1} U,

and the pieces are obtained by Picard iteration of the Duhamel formulas

    U^c(tau) = int S(tau, sigma) g^c(sigma) dsigma,
    U^b(tau) = SS(tau, tau_0) U^b(tau_0) + int SS(tau, sigma) g^b(sigma) dsigma,

where ``S`` is the core propagator (Fokker-Planck flow, linearized
transport, z-coupling and damping), ``SS`` the background propagator
(transport by the profile drift) and

    g^c = -div_bar(G V^b + U^c V^b + U^c V^c),
    g^b = -div_bar(U^b V^c + U^b V^b).

Products of two corrections are formed on z-samples.  The time integrals
use a recursive trapezoid rule on a uniform grid of ``tau`` nodes,

    I_j = S_{j,j-1} [I_{j-1} + (d/2) g_{j-1}] + (d/2) g_j,

which integrates the singular endpoint behaviour of the propagator exactly
(it is absorbed in ``S``) and only approximates the smooth source.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.integrate import simpson

from .grid import (
    Grid2D,
    ZSliceField,
    complete_slices,
    from_z_space,
    norm_array,
    to_z_space,
    zeta_grid,
)
from .operators import OperatorContext, make_context
from .profile import RadialProfile
from .propagators import TimeStepper, background_propagate, core_propagate, div_bar, heat_start
from .spectral import dealias, dilate, free_space

__all__ = [
    "FilamentConstants",
    "FilamentSetup",
    "FilamentState",
    "XNorm",
    "ContractionRecord",
    "FilamentDivergenceError",
    "gaussian_filament_data",
    "slice_velocity",
    "filament_sources",
    "duhamel_fixed_point",
    "x_norm",
    "x_distance",
    "assemble_solution",
    "TestFunction",
    "MildReport",
    "verify_mild",
    "fixed_point_defect",
    "data_norm",
    "lipschitz_ratio",
]

SQRT_2PI = math.sqrt(2.0 * math.pi)


class FilamentDivergenceError(RuntimeError):
    """Picard iteration failed to contract; carries the measured ratios."""

    def __init__(self, message: str, ratios: Sequence[float]):
        super().__init__(message)
        self.ratios = tuple(float(r) for r in ratios)


@dataclass(frozen=True)
class FilamentConstants:
    """Ball constants ``(M, D, beta)`` and the admissible data size ``eps0``.

    The contraction argument needs ``M, D >= 1`` and ``M + D/M < D``.
    """

    M: float = 4.0
    D: float = 16.0
    beta: float = 0.75
    eps0: float = 0.025

    def __post_init__(self):
        if self.M < 1 or self.D < 1:
            raise ValueError("M and D must be at least 1")
        if not self.M + self.D / self.M < self.D:
            raise ValueError("constants violate M + D/M < D")
        if not (0 < self.beta < 1 and self.eps0 > 0):
            raise ValueError("need 0 < beta < 1 and eps0 > 0")


@dataclass(frozen=True)
class FilamentSetup:
    """Discretization of a filament run.

    ``tau`` nodes are ``log(horizon) + k * dtau`` for ``k = -(n_nodes-1), ..., 0``
    with ``dtau = ln(10) / nodes_per_decade``; each node interval is crossed
    with ``substeps`` split steps.  The z-frequency grid is
    ``zeta_grid(zeta_max, dzeta)``.
    """

    grid: Grid2D = field(default_factory=lambda: Grid2D(16.0, 128))
    zeta_max: float = 4.0
    dzeta: float = 0.25
    horizon: float = 1.0
    nodes_per_decade: int = 9
    n_nodes: int = 29
    substeps: int = 2
    max_iter: int = 12
    tol_factor: float = 1e-4
    weight_m: float = 3.0

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.nodes_per_decade < 1 or self.n_nodes < 2 or self.substeps < 1:
            raise ValueError("need at least two nodes and one substep")

    @property
    def zetas(self) -> np.ndarray:
        return zeta_grid(self.zeta_max, self.dzeta)

    @property
    def half_zetas(self) -> np.ndarray:
        z = self.zetas
        return z[z >= 0]

    @property
    def dtau(self) -> float:
        return math.log(10.0) / self.nodes_per_decade

    @property
    def taus(self) -> np.ndarray:
        k = np.arange(-(self.n_nodes - 1), 1)
        return math.log(self.horizon) + self.dtau * k

    @property
    def times(self) -> np.ndarray:
        return np.exp(self.taus)


@dataclass(frozen=True)
class FilamentState:
    """Core and background histories on the ``tau`` nodes.

    ``core`` and ``background`` have shape ``(n_nodes, K_half, N, N)`` and
    hold the nonnegative-frequency slices of ``U^c`` and ``U^b`` (both in
    self-similar variables).
    """

    setup: FilamentSetup
    alpha: float
    core: np.ndarray
    background: np.ndarray
    iteration: int = 0

    def __post_init__(self):
        shape = (self.setup.n_nodes, len(self.setup.half_zetas), self.setup.grid.N, self.setup.grid.N)
        if self.core.shape != shape or self.background.shape != shape:
            raise ValueError(f"histories must have shape {shape}")

    @property
    def taus(self) -> np.ndarray:
        return self.setup.taus

    @property
    def times(self) -> np.ndarray:
        return self.setup.times

    def node(self, t: float) -> int:
        """Index of the node at physical time ``t`` (must be a node)."""
        j = int(np.argmin(np.abs(self.taus - math.log(t))))
        if abs(self.taus[j] - math.log(t)) > 1e-9:
            raise ValueError(f"t = {t} is not a sample time")
        return j

    def core_at(self, j: int) -> ZSliceField:
        """``U^c`` at node ``j`` as a full (conjugate-completed) slice field."""
        s = self.setup
        return ZSliceField(s.grid, s.zetas, complete_slices(self.core[j], len(s.zetas)), True, s.dzeta)

    def background_at(self, j: int, dst: Grid2D | None = None) -> ZSliceField:
        """Physical background ``u^b(t_j)`` resampled onto ``dst``."""
        s = self.setup
        t = float(self.times[j])
        dst = dst or Grid2D(s.grid.R * math.sqrt(t), s.grid.N)
        half = dilate(self.background[j], s.grid, 1.0 / math.sqrt(t), dst, amplitude=1.0 / t, real=False)
        return ZSliceField(dst, s.zetas, complete_slices(half, len(s.zetas)), True, s.dzeta)


@dataclass(frozen=True)
class XNorm:
    """``M sup ||U^b||_{B_z L^{4/3}} + sup ||U^c||_{B_z L^2(m)}`` over the nodes.

    In physical variables the first term is ``M sup t^{1/4} ||u^b||``.
    """

    value: float
    core: float
    background: float
    M: float
    D: float
    horizon: float
    eps: float

    @property
    def within_ball(self) -> bool:
        return self.value <= self.D * self.eps

    def as_dict(self) -> dict:
        return {"value": self.value, "core": self.core, "background": self.background, "M": self.M,
                "D": self.D, "horizon": self.horizon, "eps": self.eps, "within_ball": self.within_ball}


@dataclass(frozen=True)
class ContractionRecord:
    iteration: int
    x_norm: float
    difference: float
    ratio: float


# --------------------------------------------------------------------------
# data, velocities, sources
# --------------------------------------------------------------------------


def gaussian_filament_data(grid: Grid2D, zetas: np.ndarray, dzeta: float, eps: float, width: float = 0.05,
                           z_width: float = 1.0, center=(0.0, 0.0), z_center: float = 0.0,
                           z_independent: bool = False) -> ZSliceField:
    """Smooth background datum scaled to ``B_z L^1`` norm ``eps``.

    The density is ``exp(-|x-c|^2/(2 w^2)) exp(-(z-z0)^2/(2 w_z^2))`` (or
    z-independent); slices are its unitary z-Fourier transform.
    """
    X, Y = grid.mesh
    prof = np.exp(-((X - center[0]) ** 2 + (Y - center[1]) ** 2) / (2 * width**2))
    zetas = np.asarray(zetas, dtype=float)
    if z_independent:
        coef = np.where(zetas == 0, 1.0, 0.0).astype(complex)
    else:
        coef = z_width * np.exp(-0.5 * (z_width * zetas) ** 2 - 1j * zetas * z_center)
    slices = coef[:, None, None] * prof
    scale = float(dzeta * np.sum(norm_array(slices, grid, 0.0, 1.0)))
    if eps == 0:
        slices = np.zeros_like(slices)
    else:
        slices = slices * (eps / scale)
    if len(zetas) == 1:
        return ZSliceField(grid, zetas, slices, True, dzeta)
    return ZSliceField(grid, zetas, slices, True)


def slice_velocity(U: np.ndarray, zetas: np.ndarray, tau: float, grid: Grid2D) -> np.ndarray:
    """``(grad, i e^{tau/2} zeta)(-Delta + e^tau zeta^2)^{-1} U`` per slice, shape ``(K, 3, N, N)``."""
    fs = free_space(grid)
    zetas = np.asarray(zetas, dtype=float)
    lam = math.exp(0.5 * tau) * np.abs(zetas)
    U = np.asarray(U, dtype=complex)
    Rh = fs.forward(U) * fs.symbols(lam, U.ndim, False)
    out = np.empty((U.shape[0], 3) + U.shape[1:], dtype=complex)
    out[:, :2] = fs.gradient_of(Rh, False)
    out[:, 2] = (1j * math.exp(0.5 * tau) * zetas)[:, None, None] * fs.backward(Rh, False)
    return out


def _z_product(A_half: np.ndarray, B_half: np.ndarray, zetas: np.ndarray, dzeta: float) -> np.ndarray:
    """Half slices of the z-space product ``A(z) B(z)`` (``B`` carries the vector axis)."""
    K = len(zetas)
    a = to_z_space(complete_slices(A_half, K), zetas, dzeta).real
    b = to_z_space(complete_slices(B_half, K), zetas, dzeta).real
    prod = a[:, None] * b
    return from_z_space(prod, zetas, dzeta)[(K - 1) // 2:]


def filament_sources(Uc: np.ndarray, Ub: np.ndarray, tau: float, ctx: OperatorContext, zetas: np.ndarray,
                     dzeta: float) -> tuple[np.ndarray, np.ndarray]:
    """Core and background sources ``(g^c, g^b)`` for half slices at ``tau``."""
    grid = ctx.grid
    K = len(zetas)
    half = zetas[(K - 1) // 2:]
    Vc = slice_velocity(Uc, half, tau, grid)
    Vb = slice_velocity(Ub, half, tau, grid)
    Vt = Vc + Vb
    Pc = ctx.G * Vb + _z_product(Uc, Vt, zetas, dzeta)
    Pb = _z_product(Ub, Vt, zetas, dzeta)
    gc = -div_bar(dealias(Pc, grid), grid, half, tau)
    gb = -div_bar(dealias(Pb, grid), grid, half, tau)
    return gc, gb


# --------------------------------------------------------------------------
# norms
# --------------------------------------------------------------------------


def _bz(slices: np.ndarray, grid: Grid2D, dzeta: float, m: float, p: float) -> float:
    """``B_z`` norm from half slices (negative frequencies by symmetry)."""
    n = norm_array(slices, grid, m, p)
    return float(dzeta * (n[0] + 2.0 * np.sum(n[1:])))


def _x_parts(core: np.ndarray, background: np.ndarray, setup: FilamentSetup) -> tuple[float, float]:
    g, dz = setup.grid, setup.dzeta
    c = max(_bz(core[j], g, dz, setup.weight_m, 2.0) for j in range(core.shape[0]))
    b = max(_bz(background[j], g, dz, 0.0, 4.0 / 3.0) for j in range(background.shape[0]))
    return c, b


def x_norm(state: FilamentState, constants: FilamentConstants = FilamentConstants(), eps: float = math.nan) -> XNorm:
    """X-norm of a state over its sample grid."""
    c, b = _x_parts(state.core, state.background, state.setup)
    return XNorm(constants.M * b + c, c, b, constants.M, constants.D, state.setup.horizon, eps)


def x_distance(a: FilamentState, b: FilamentState, constants: FilamentConstants = FilamentConstants()) -> float:
    """X-norm of the difference of two states on the same discretization."""
    if a.setup != b.setup:
        raise ValueError("states live on different discretizations")
    c, bg = _x_parts(a.core - b.core, a.background - b.background, a.setup)
    return constants.M * bg + c


# --------------------------------------------------------------------------
# fixed point
# --------------------------------------------------------------------------


def _check_data(mu_b: ZSliceField, setup: FilamentSetup) -> None:
    if mu_b.components != 1:
        raise ValueError("background datum must be scalar")
    if len(mu_b.zetas) != len(setup.zetas) or not np.allclose(mu_b.zetas, setup.zetas):
        raise ValueError("datum frequencies do not match the setup")
    if abs(mu_b.dzeta - setup.dzeta) > 1e-12:
        raise ValueError("datum frequency spacing does not match the setup")


def _initial_background(mu_b: ZSliceField, setup: FilamentSetup) -> np.ndarray:
    K = len(setup.zetas)
    half = mu_b.slices[(K - 1) // 2:]
    t0 = float(setup.times[0])
    return heat_start(np.asarray(half, dtype=complex), mu_b.grid, t0, setup.grid, setup.half_zetas)


def _apply_Q(core: np.ndarray, background: np.ndarray, B0: np.ndarray, ctx: OperatorContext,
             setup: FilamentSetup, transport: bool = True, substeps: int | None = None):
    """One application of the Duhamel map to a full history."""
    taus = setup.taus
    d = setup.dtau
    half = setup.half_zetas
    stepper = TimeStepper(dtau=d / (substeps or setup.substeps))
    new_c = np.zeros_like(core)
    new_b = np.zeros_like(background)
    new_b[0] = B0

    def src(j):
        if not transport:
            z = np.zeros_like(core[j])
            return z, z
        return filament_sources(core[j], background[j], float(taus[j]), ctx, setup.zetas, setup.dzeta)

    gc_prev, gb_prev = src(0)
    for j in range(1, len(taus)):
        gc, gb = src(j)
        t0, t1 = float(taus[j - 1]), float(taus[j])
        if transport:
            new_c[j] = core_propagate(new_c[j - 1] + 0.5 * d * gc_prev, t0, t1, half, ctx, stepper) + 0.5 * d * gc
            new_b[j] = background_propagate(new_b[j - 1] + 0.5 * d * gb_prev, t0, t1, half, ctx,
                                            stepper) + 0.5 * d * gb
        else:
            # transport switched off: pure damped heat flow of the background
            new_b[j] = heat_start_from_state(new_b[j - 1], setup.grid, t0, t1, half)
        gc_prev, gb_prev = gc, gb
    return new_c, new_b


def heat_start_from_state(B: np.ndarray, grid: Grid2D, tau0: float, tau1: float, zetas) -> np.ndarray:
    """Advance a self-similar heat state from ``tau0`` to ``tau1`` exactly."""
    from .propagators import march

    return march(B, tau0, tau1, grid, None, zetas=zetas, stepper=TimeStepper(scheme="exact", dtau=tau1 - tau0))


def duhamel_fixed_point(mu_b: ZSliceField, profile: RadialProfile, eps: float,
                        setup: FilamentSetup = FilamentSetup(),
                        constants: FilamentConstants = FilamentConstants(),
                        ctx: OperatorContext | None = None, transport: bool = True,
                        ) -> tuple[FilamentState, list[ContractionRecord]]:
    """Picard iteration of the core/background Duhamel system from ``(0, 0)``.

    ``mu_b`` is the background datum in physical variables, with the setup's
    frequency grid and ``B_z L^1`` norm at most ``eps``.  Iteration stops when
    successive iterates differ by less than ``tol_factor * D * eps`` in the
    X-norm, or after ``max_iter`` sweeps.  Two consecutive contraction
    ratios of at least one raise :class:`FilamentDivergenceError`.
    """
    _check_data(mu_b, setup)
    if eps > constants.eps0:
        raise ValueError(f"eps = {eps} exceeds the admissible size eps0 = {constants.eps0}")
    size = float(mu_b.dzeta * np.sum(norm_array(mu_b.slices, mu_b.grid, 0.0, 1.0)))
    if size > eps * (1 + 1e-9) + 1e-300:
        raise ValueError(f"datum norm {size:.6g} exceeds eps = {eps}")
    if ctx is None:
        ctx = make_context(profile, setup.grid, validate=True)
    n, Kh, N = setup.n_nodes, len(setup.half_zetas), setup.grid.N
    core = np.zeros((n, Kh, N, N), dtype=complex)
    background = np.zeros_like(core)
    B0 = _initial_background(mu_b, setup)
    log: list[ContractionRecord] = []
    prev_diff = math.nan
    strikes = 0
    tol = setup.tol_factor * constants.D * eps
    for it in range(1, setup.max_iter + 1):
        new_c, new_b = _apply_Q(core, background, B0, ctx, setup, transport)
        c, b = _x_parts(new_c - core, new_b - background, setup)
        diff = constants.M * b + c
        cn, bn = _x_parts(new_c, new_b, setup)
        ratio = diff / prev_diff if prev_diff > 0 else math.nan
        log.append(ContractionRecord(it, constants.M * bn + cn, diff, ratio))
        core, background = new_c, new_b
        if ratio >= 1:
            strikes += 1
            if strikes >= 2:
                raise FilamentDivergenceError(
                    f"Picard iteration does not contract (eps = {eps:g})", [r.ratio for r in log])
        else:
            strikes = 0
        prev_diff = diff
        if diff <= tol:
            break
    state = FilamentState(setup, profile.mass, core, background, iteration=len(log))
    return state, log


def fixed_point_defect(state: FilamentState, mu_b: ZSliceField, profile: RadialProfile,
                       constants: FilamentConstants = FilamentConstants(),
                       ctx: OperatorContext | None = None, refine: int = 2) -> float:
    """X-norm of ``x - Q(x)`` with the propagators refined ``refine`` times."""
    setup = state.setup
    ctx = ctx or make_context(profile, setup.grid, validate=False)
    B0 = _initial_background(mu_b, setup)
    qc, qb = _apply_Q(state.core, state.background, B0, ctx, setup, substeps=refine * setup.substeps)
    c, b = _x_parts(qc - state.core, qb - state.background, setup)
    return constants.M * b + c


def data_norm(mu: ZSliceField) -> float:
    """``B_z L^1`` norm of a datum given on its frequency grid."""
    return float(mu.dzeta * np.sum(norm_array(mu.slices, mu.grid, 0.0, 1.0)))


def lipschitz_ratio(mu1: ZSliceField, mu2: ZSliceField, profile: RadialProfile,
                    setup: FilamentSetup = FilamentSetup(), constants: FilamentConstants = FilamentConstants(),
                    ctx: OperatorContext | None = None, state1: FilamentState | None = None) -> dict:
    """X-distance of the two fixed points divided by the data distance.

    Both runs use ``eps = max(||mu1||, ||mu2||)``; ``state1`` reuses an
    existing solution for ``mu1``.
    """
    eps = max(data_norm(mu1), data_norm(mu2))
    d_data = data_norm(replace(mu1, slices=mu1.slices - mu2.slices))
    if not d_data > 0:
        raise ValueError("the two data coincide")
    if ctx is None:
        ctx = make_context(profile, setup.grid, validate=True)
    if state1 is None:
        state1, _ = duhamel_fixed_point(mu1, profile, eps, setup, constants, ctx)
    state2, _ = duhamel_fixed_point(mu2, profile, eps, setup, constants, ctx)
    d_sol = x_distance(state1, state2, constants)
    return {"ratio": d_sol / d_data, "solution_distance": d_sol, "data_distance": d_data, "eps": eps,
            "N": setup.grid.N, "R": setup.grid.R}


# --------------------------------------------------------------------------
# physical reconstruction
# --------------------------------------------------------------------------


def _interp_history(hist: np.ndarray, taus: np.ndarray, tau: float) -> np.ndarray:
    j = int(np.searchsorted(taus, tau))
    if j < len(taus) and abs(taus[j] - tau) < 1e-9:
        return hist[j]
    if j > 0 and abs(taus[j - 1] - tau) < 1e-9:
        return hist[j - 1]
    w = (tau - taus[j - 1]) / (taus[j] - taus[j - 1])
    return (1 - w) * hist[j - 1] + w * hist[j]


def assemble_solution(state: FilamentState, profile: RadialProfile, t: float,
                      dst: Grid2D | None = None) -> ZSliceField:
    """Physical density ``t^{-1}(G + U^c)(x/sqrt t) + u^b`` as z-slices on ``dst``.

    Between sample times the corrections are interpolated linearly in
    ``tau``.  The profile enters the ``zeta = 0`` slice with the factor
    ``sqrt(2 pi)/dzeta`` of a z-independent field.
    """
    s = state.setup
    taus = s.taus
    if not (0 < t <= s.horizon * (1 + 1e-12)):
        raise ValueError("t outside the horizon")
    tau = math.log(t)
    if tau < taus[0] - 1e-9:
        raise ValueError(f"t below the first sample time {s.times[0]:.3g}")
    rt = math.sqrt(t)
    dst = dst or Grid2D(s.grid.R * rt, s.grid.N)
    K = len(s.zetas)
    core = _interp_history(state.core, taus, tau)
    bg = _interp_history(state.background, taus, tau)
    half = dilate(core + bg, s.grid, 1.0 / rt, dst, amplitude=1.0 / t, real=False)
    G = profile.sampler.density(dst.r2 / t) / t
    half[0] = half[0] + G * (SQRT_2PI / s.dzeta)
    return ZSliceField(dst, s.zetas, complete_slices(half, K), True, s.dzeta)


# --------------------------------------------------------------------------
# mild-solution check
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """``d1^a d2^b dz^c`` of ``g_sigma(x - x0) g_sz(z - z0)`` (Gaussian densities).

    Its heat evolution for a time ``s`` replaces the variances by
    ``sigma^2 + 2 s`` and ``sz^2 + 2 s``, so every quantity below is exact.
    """

    __test__ = False  # not a pytest class

    a: int = 0
    b: int = 0
    c: int = 0
    sigma: float = 1.0
    sz: float = 1.0
    x0: tuple[float, float] = (0.0, 0.0)
    z0: float = 0.0

    def _g1(self, y: np.ndarray, var: float, order: int) -> np.ndarray:
        from numpy.polynomial.hermite_e import hermeval

        sd = math.sqrt(var)
        u = y / sd
        coef = np.zeros(order + 1)
        coef[order] = 1.0
        # d^n/dy^n of the Gaussian density = (-1/sd)^n He_n(u) g(y)
        return ((-1.0 / sd) ** order) * hermeval(u, coef) * np.exp(-0.5 * u * u) / (math.sqrt(2 * math.pi) * sd)

    def planar(self, X: np.ndarray, Y: np.ndarray, s: float = 0.0, dx: int = 0, dy: int = 0) -> np.ndarray:
        """``x``-factor of ``e^{s Delta} phi`` (optionally differentiated) at points ``(X, Y)``."""
        var = self.sigma**2 + 2 * s
        return self._g1(X - self.x0[0], var, self.a + dx) * self._g1(Y - self.x0[1], var, self.b + dy)

    def z_hat(self, zetas: np.ndarray, s: float = 0.0, dz: int = 0) -> np.ndarray:
        """Unitary z-Fourier transform of the z-factor of ``e^{s Delta} phi``."""
        var = self.sz**2 + 2 * s
        k = np.asarray(zetas, dtype=float)
        return ((1j * k) ** (self.c + dz)) * np.exp(-0.5 * var * k * k - 1j * k * self.z0) / SQRT_2PI

    def line_pairing(self, s: float = 0.0) -> float:
        """``int phi_s(0, z) dz`` (pairing with the unit line density)."""
        zero = np.zeros(1)
        z_int = SQRT_2PI * self.z_hat(zero, s)[0].real
        return float(self.planar(zero, zero, s)[0] * z_int)


def _pair(slices: np.ndarray, X: np.ndarray, Y: np.ndarray, cell: float, tf: TestFunction, zetas: np.ndarray,
          dzeta: float, s: float = 0.0, dx: int = 0, dy: int = 0, dz: int = 0) -> float:
    """``int f phi dx dz`` for slices ``f`` (Parseval in z, quadrature in x)."""
    px = tf.planar(X, Y, s, dx, dy)
    zh = np.conj(tf.z_hat(zetas, s, dz))
    per = np.sum(slices * px, axis=(-2, -1)) * cell
    return float(np.real(np.sum(per * zh) * dzeta))


@dataclass(frozen=True)
class MildReport:
    """Residuals of the mild formulation at the requested sample times."""

    times: tuple[float, ...]
    duhamel: np.ndarray
    trace: np.ndarray
    scale: np.ndarray

    @property
    def relative_duhamel(self) -> np.ndarray:
        return self.duhamel / self.scale

    @property
    def relative_trace(self) -> np.ndarray:
        return self.trace / self.scale

    def monotone(self, which: str = "duhamel") -> bool:
        """Residuals (maximized over test functions) decrease as ``t`` decreases."""
        r = np.max(self.relative_duhamel if which == "duhamel" else self.relative_trace, axis=0)
        order = np.argsort(self.times)
        return bool(np.all(np.diff(r[order]) > 0))

    def as_dict(self) -> dict:
        return {"times": list(self.times), "duhamel": self.duhamel.tolist(), "trace": self.trace.tolist(),
                "scale": self.scale.tolist()}


def _full_fields(state: FilamentState | None, setup: FilamentSetup, profile: RadialProfile | None,
                 mu_b: ZSliceField, tau: float, ctx: OperatorContext | None, j: int | None, heat_only: bool):
    """Total density slices and velocity slices (half frequencies) at ``tau``."""
    grid = setup.grid
    Kh = len(setup.half_zetas)
    if heat_only:
        # exact heat evolution of the line and of the datum
        X2 = grid.r2
        U = heat_start(np.asarray(mu_b.slices[(len(setup.zetas) - 1) // 2:], dtype=complex), mu_b.grid,
                       math.exp(tau), grid, setup.half_zetas)
        line = state.alpha if state is not None else profile.mass
        U[0] = U[0] + line * np.exp(-X2 / 4) / (4 * math.pi) * (SQRT_2PI / setup.dzeta)
        return U, None
    if j is not None and state is not None:
        Uc, Ub = state.core[j], state.background[j]
    else:
        Uc = np.zeros((Kh, grid.N, grid.N), dtype=complex)
        Ub = heat_start(np.asarray(mu_b.slices[(len(setup.zetas) - 1) // 2:], dtype=complex), mu_b.grid,
                        math.exp(tau), grid, setup.half_zetas)
    G = ctx.G
    gfac = SQRT_2PI / setup.dzeta
    U = Uc + Ub
    U[0] = U[0] + G * gfac
    Vc = slice_velocity(Uc + Ub, setup.half_zetas, tau, grid)
    # flux: (G + Uc + Ub)(V^G + Vc + Vb)
    F = _z_product(Uc + Ub, Vc, setup.zetas, setup.dzeta)
    F = F + G * Vc
    F[:, :2] = F[:, :2] + (Uc + Ub)[:, None] * ctx.V
    F[0, :2] = F[0, :2] + G * ctx.V * gfac
    return U, F


def verify_mild(state: FilamentState | None, profile: RadialProfile, mu_b: ZSliceField,
                tests: Sequence[TestFunction], times: Sequence[float], setup: FilamentSetup | None = None,
                ctx: OperatorContext | None = None, heat_only: bool = False, early_decades: float = 12.0,
                ) -> MildReport:
    """Duhamel and initial-trace residuals of an assembled solution.

    For each test function ``phi`` and sample time ``t`` (a node), with
    ``psi_s = e^{s Delta} phi``:

    * Duhamel residual
      ``<u(t), phi> - <u_0, psi_t> - int_0^t <u grad c, grad psi_{t - t'}> dt'``,
      ``u_0 = alpha delta_line + mu_b``;
    * trace residual ``<u(t), phi> - <u_0, phi>``.

    Pairings are exact in z (Parseval) and spectral in x.  The time integral
    runs over ``t' = e^sigma`` with Simpson's rule on the node grid, extended
    below the first node (where the core correction is negligible and the
    background is a heat state) by ``early_decades`` decades.  With
    ``heat_only`` the state is replaced by the exact heat evolution of the
    data and no flux term is included.
    """
    setup = setup or state.setup
    grid = setup.grid
    if ctx is None and not heat_only:
        ctx = make_context(profile, grid, validate=False)
    alpha = profile.mass if state is None else state.alpha
    Km = (len(setup.zetas) - 1) // 2
    mu_half = np.asarray(mu_b.slices, dtype=complex)
    Xm, Ym = mu_b.grid.mesh
    Xs, Ys = grid.mesh
    zeta_h = setup.half_zetas
    # full-line Parseval weights: slice k > 0 stands for +-zeta_k
    wz = np.where(zeta_h == 0, 1.0, 2.0)

    def pair_half(slices, X, Y, cell, tf, s=0.0, dx=0, dy=0, dz=0):
        px = tf.planar(X, Y, s, dx, dy)
        zh = np.conj(tf.z_hat(zeta_h, s, dz))
        per = np.sum(slices * px, axis=(-2, -1)) * cell
        return float(np.sum(np.real(per * zh) * wz) * setup.dzeta)

    def u0_pair(tf, s):
        return alpha * tf.line_pairing(s) + _pair(mu_half, Xm, Ym, mu_b.grid.cell_area, tf, mu_b.zetas,
                                                  mu_b.dzeta, s)

    taus = setup.taus
    n_early = int(round(early_decades * setup.nodes_per_decade))
    early = taus[0] - setup.dtau * np.arange(n_early, 0, -1)
    sig_all = np.concatenate([early, taus])
    cache: dict[int, tuple] = {}

    def fields(i):
        if i not in cache:
            tau = float(sig_all[i])
            j = i - n_early if i >= n_early else None
            cache[i] = _full_fields(state, setup, profile, mu_b, tau, ctx, j, heat_only)
        return cache[i]

    duh = np.zeros((len(tests), len(times)))
    tra = np.zeros_like(duh)
    scl = np.zeros_like(duh)
    for q, t in enumerate(times):
        tau_t = math.log(t)
        it = int(np.argmin(np.abs(sig_all - tau_t)))
        if abs(sig_all[it] - tau_t) > 1e-9:
            raise ValueError(f"t = {t} is not a sample time")
        U_t, _ = fields(it)
        for p, tf in enumerate(tests):
            # <u(t), phi>: x = sqrt(t) xi, dx = t dxi, u = U/t
            rt = math.sqrt(t)
            val = pair_half(U_t, rt * Xs, rt * Ys, grid.cell_area, tf)
            trace = val - u0_pair(tf, 0.0)
            duh_val = val - u0_pair(tf, t)
            if not heat_only:
                ig = np.zeros(it + 1)
                for i in range(it + 1):
                    tp = math.exp(sig_all[i])
                    _, F = fields(i)
                    rp = math.sqrt(tp)
                    # physical flux t'^{-3/2} F(xi), dx = t' dxi
                    s = t - tp
                    acc = 0.0
                    acc += pair_half(F[:, 0], rp * Xs, rp * Ys, grid.cell_area, tf, s, dx=1)
                    acc += pair_half(F[:, 1], rp * Xs, rp * Ys, grid.cell_area, tf, s, dy=1)
                    acc += pair_half(F[:, 2], rp * Xs, rp * Ys, grid.cell_area, tf, s, dz=1)
                    # integrand in sigma: dt' = t' dsigma
                    ig[i] = acc * tp ** (-0.5) * tp
                duh_val -= float(simpson(ig, x=sig_all[: it + 1]))
            duh[p, q] = abs(duh_val)
            tra[p, q] = abs(trace)
            scl[p, q] = _abs_scale(tf, alpha)
    return MildReport(tuple(float(t) for t in times), duh, tra, scl)


def _abs_scale(tf: TestFunction, alpha: float) -> float:
    """``alpha * max_x |phi_x| * int |phi_z| dz``: size of a line pairing with ``phi``."""
    from numpy.polynomial.hermite_e import hermeval

    xs = np.linspace(-6, 6, 241) * tf.sigma
    X, Y = np.meshgrid(xs + tf.x0[0], xs + tf.x0[1])
    px = float(np.max(np.abs(tf.planar(X, Y))))
    zs = np.linspace(-8, 8, 641) * tf.sz
    coef = np.zeros(tf.c + 1)
    coef[tf.c] = 1.0
    u = zs / tf.sz
    gz = ((-1.0 / tf.sz) ** tf.c) * hermeval(u, coef) * np.exp(-0.5 * u * u) / (SQRT_2PI * tf.sz)
    return alpha * px * float(np.sum(np.abs(gz)) * (zs[1] - zs[0]))
