"""Time evolution in self-similar variables and measured estimates.

Every flow here has the structure

    d/dtau W = (L + shift - lambda(tau)^2) W + N(W, tau)

with ``L`` the Fokker-Planck operator, a scalar ``shift``, a slice-wise
damping ``lambda^2 = e^tau zeta^2`` and a non-stiff linear part ``N``.  The
``L`` part is propagated exactly through its Fourier representation

    FT[e^{tau L} f](k) = exp(-a(tau)|k|^2) FT[f](e^{-tau/2} k),

evaluated with the chirp z-transform at the scaled wavenumbers; the damping
is an exact scalar factor; ``N`` is advanced by an explicit midpoint step in
the middle of a Strang splitting.

Background (physical-time) flows are evolved in self-similar variables,
where their drift coefficient is time independent, and converted back.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .grid import Field2D, Grid2D, ZSliceField, integrate, norm_array, project_mean_zero
from .operators import OperatorContext, Z_array, core_operator_array, lambda_array
from .spectral import continuous_ft, continuous_ft_half, dealias, dilate, div, grad, inverse_ft, inverse_ft_half

__all__ = [
    "StabilityError",
    "TimeStepper",
    "DecayFit",
    "fp_flow_array",
    "fokker_planck_flow",
    "march",
    "linearized_2d_flow",
    "linearized_2d_propagate",
    "core_flow_S",
    "core_propagate",
    "core_rhs",
    "background_rhs",
    "K_rhs",
    "background_propagate",
    "background_flow",
    "K_propagate",
    "background_K",
    "heat_start",
    "div_bar",
    "fit_decay",
    "probe_family",
    "probe_norm",
    "ShortTimeTable",
    "measure_short_time",
    "commutation_defect",
]


class StabilityError(RuntimeError):
    """Raised when a step amplifies the state by more than the allowed factor."""


@dataclass(frozen=True)
class TimeStepper:
    """Step control for the split schemes.

    ``scheme`` is ``"strang"`` (exact Fokker-Planck half steps around an
    explicit midpoint step of the remaining linear terms) or ``"exact"``
    (only valid for flows without such terms).  ``safety`` scales the step.
    """

    scheme: str = "strang"
    dtau: float = 0.05
    safety: float = 1.0
    growth_limit: float = 10.0

    def __post_init__(self):
        if self.scheme not in ("strang", "exact"):
            raise ValueError("scheme must be 'strang' or 'exact'")
        if not (self.dtau > 0 and self.safety > 0):
            raise ValueError("step and safety factor must be positive")

    @property
    def step(self) -> float:
        return self.dtau * self.safety


# --------------------------------------------------------------------------
# exact Fokker-Planck flow
# --------------------------------------------------------------------------


def fp_flow_array(f: np.ndarray, tau: float, grid: Grid2D, shift: float = 0.0) -> np.ndarray:
    """``e^{tau (L + shift)} f`` for a batched array (exact in Fourier space)."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if tau == 0:
        return np.array(f, copy=True)
    a = -math.expm1(-tau)
    dk = grid.dk * math.exp(-0.5 * tau)
    if not np.iscomplexobj(f):
        F = continuous_ft_half(f, grid, dk=dk)
        F *= np.exp(-a * grid.k2[:, : grid.N // 2 + 1] + shift * tau)
        return inverse_ft_half(F, grid)
    F = continuous_ft(f, grid, dk=dk)
    F *= np.exp(-a * grid.k2 + shift * tau)
    return inverse_ft(F, grid)


def fokker_planck_flow(f: Field2D, tau: float, warn_tol: float = 1e-8) -> Field2D:
    """Rescaled heat flow ``e^{tau L} f`` (heat flow of duration ``a(tau)`` of the dilated field)."""
    out = fp_flow_array(f.values, tau, f.grid)
    _boundary_warning(out, f.grid, warn_tol)
    return f.with_values(out)


def _boundary_warning(values: np.ndarray, grid: Grid2D, tol: float) -> None:
    a = np.abs(values)
    total = float(np.sum(a))
    if total > 0 and float(np.sum(a[..., grid.boundary_band()])) > tol * total:
        warnings.warn("field mass reaches the domain boundary; enlarge R", RuntimeWarning, stacklevel=3)


# --------------------------------------------------------------------------
# generic split march
# --------------------------------------------------------------------------

Explicit = Callable[[np.ndarray, float], np.ndarray]


def _damping(zetas, t0: float, t1: float, ndim: int) -> np.ndarray | float:
    if zetas is None:
        return 1.0
    z = np.asarray(zetas, dtype=float)
    fac = np.exp(-(z * z) * (math.exp(t1) - math.exp(t0)))
    if z.ndim == 0:
        return float(fac)
    return fac.reshape(z.shape + (1,) * (ndim - 1))


def march(W: np.ndarray, tau0: float, tau1: float, grid: Grid2D, explicit: Explicit | None = None, *,
          zetas=None, shift: float = 0.0, stepper: TimeStepper = TimeStepper(),
          stops: Sequence[float] = (), on_stop: Callable[[float, np.ndarray], None] | None = None,
          norm_log: list | None = None) -> np.ndarray:
    """Advance ``W`` from ``tau0`` to ``tau1`` with the split scheme.

    ``zetas`` (scalar, or one value per entry of axis 0) selects the damping
    ``e^tau zeta^2``.  ``on_stop`` is called at each time in ``stops`` (and at
    ``tau1``) with the current state; step sizes are adjusted to land on them.
    """
    if tau1 < tau0:
        raise ValueError("propagators run forward in time only")
    if explicit is not None and stepper.scheme == "exact":
        raise ValueError("the exact scheme cannot integrate extra linear terms")
    W = np.array(W, copy=True)
    marks = sorted({float(s) for s in stops if tau0 < s < tau1} | {float(tau1)})
    t = float(tau0)
    if norm_log is not None:
        norm_log.append((t, float(np.sqrt(np.sum(np.abs(W) ** 2)))))
    for mark in marks:
        span = mark - t
        n = max(1, int(math.ceil(span / stepper.step - 1e-9))) if span > 0 else 0
        d = span / n if n else 0.0
        for _ in range(n):
            before = float(np.sqrt(np.sum(np.abs(W) ** 2)))
            if explicit is None:
                W = fp_flow_array(W, d, grid, shift)
            else:
                W = fp_flow_array(W, 0.5 * d, grid, shift)
                tm = t + 0.5 * d
                k1 = explicit(W, tm)
                W = W + d * explicit(W + (0.5 * d) * k1, tm)
                W = fp_flow_array(W, 0.5 * d, grid, shift)
            W = W * _damping(zetas, t, t + d, W.ndim)
            t += d
            after = float(np.sqrt(np.sum(np.abs(W) ** 2)))
            if not math.isfinite(after) or (before > 0 and after > stepper.growth_limit * before):
                raise StabilityError(f"norm grew from {before:.3e} to {after:.3e} in one step at tau={t:.4f}")
            if norm_log is not None:
                norm_log.append((t, after))
        t = mark
        if on_stop is not None:
            on_stop(t, W)
    return W


# --------------------------------------------------------------------------
# explicit parts
# --------------------------------------------------------------------------


def core_rhs(ctx: OperatorContext, zetas=None) -> Explicit:
    """``-Lambda W + Z(W)`` for the core slices (``zetas`` along axis 0 or scalar)."""

    def rhs(W: np.ndarray, tau: float) -> np.ndarray:
        if zetas is None:
            return -lambda_array(W, ctx)
        return core_operator_array(W, zetas, tau, ctx)

    return rhs


def background_rhs(ctx: OperatorContext) -> Explicit:
    """``-div(B V)``: transport of the background by the profile drift."""
    V = ctx.V

    def rhs(B: np.ndarray, tau: float) -> np.ndarray:
        return -div(dealias(B[..., None, :, :] * V, ctx.grid), ctx.grid)

    return rhs


def div_bar(H: np.ndarray, grid: Grid2D, zetas, tau: float) -> np.ndarray:
    """Rescaled 3D divergence ``div_xi H^x + i zeta e^{tau/2} H^z`` (vectors on axis -3)."""
    out = div(H[..., :2, :, :], grid)
    z = np.asarray(zetas, dtype=float)
    if np.any(z != 0):
        coef = 1j * math.exp(0.5 * tau) * z
        if z.ndim:
            coef = coef.reshape(z.shape + (1,) * (H.ndim - 2))
        out = out + coef * H[..., 2, :, :]
    return out


def K_rhs(ctx: OperatorContext, zetas) -> Explicit:
    """Source of the vector system: ``H^x`` receives ``-V div_bar(H)``."""
    V = ctx.V

    def rhs(H: np.ndarray, tau: float) -> np.ndarray:
        b = div_bar(H, ctx.grid, zetas, tau)
        out = np.zeros_like(H, dtype=np.result_type(H, b))
        out[..., :2, :, :] = -dealias(b[..., None, :, :] * V, ctx.grid)
        return out

    return rhs


# --------------------------------------------------------------------------
# core flows
# --------------------------------------------------------------------------


def linearized_2d_propagate(W: np.ndarray, tau: float, ctx: OperatorContext,
                            stepper: TimeStepper = TimeStepper(), **kw) -> np.ndarray:
    """``e^{tau (L - Lambda)} W`` for a batch of planar fields."""
    return march(W, 0.0, tau, ctx.grid, core_rhs(ctx), stepper=stepper, **kw)


def linearized_2d_flow(f: Field2D, tau: float, ctx: OperatorContext, stepper: TimeStepper = TimeStepper(),
                       norm_log: list | None = None) -> Field2D:
    """Linearized planar flow; appends ``(tau, ||W||)`` per step to ``norm_log``."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    return f.with_values(linearized_2d_propagate(f.values, tau, ctx, stepper, norm_log=norm_log))


def core_propagate(W: np.ndarray, sigma: float, tau: float, zetas, ctx: OperatorContext,
                   stepper: TimeStepper = TimeStepper(), **kw) -> np.ndarray:
    """``S(tau, sigma)`` on slices: ``zetas`` scalar or one per entry of axis 0."""
    if tau < sigma:
        raise ValueError("need tau >= sigma")
    z = np.asarray(zetas, dtype=float)
    rhs = core_rhs(ctx, z if np.any(z != 0) else None)
    return march(W, sigma, tau, ctx.grid, rhs, zetas=z, stepper=stepper, **kw)


def core_flow_S(w: Field2D, sigma: float, tau: float, zeta: float, ctx: OperatorContext,
                stepper: TimeStepper = TimeStepper()) -> Field2D:
    """Core propagator of one z-frequency."""
    if w.components != 1:
        raise ValueError("core_flow_S expects a scalar field")
    return w.with_values(core_propagate(w.values, sigma, tau, float(zeta), ctx, stepper))


# --------------------------------------------------------------------------
# background flows (physical time, evolved in self-similar variables)
# --------------------------------------------------------------------------


def heat_start(u: np.ndarray, src: Grid2D, t: float, dst: Grid2D, zetas=None) -> np.ndarray:
    """Self-similar state at time ``t`` of the pure heat flow started from ``u``.

    Returns ``B(xi) = t (e^{t Delta_3} u)(sqrt(t) xi)`` on ``dst`` via
    ``FT[B](k) = exp(-|k|^2 - t zeta^2) FT[u](k / sqrt(t))``.  Exact for any
    ``t > 0``; ``u`` may be a sampled measure approximation on ``src``.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    F = continuous_ft(u, src, dk=dst.dk / math.sqrt(t), m=dst.N)
    F = F * np.exp(-dst.k2)
    if zetas is not None:
        z = np.asarray(zetas, dtype=float)
        fac = np.exp(-t * z * z)
        F = F * (fac.reshape(z.shape + (1,) * (F.ndim - 1)) if z.ndim else fac)
    return inverse_ft(F, dst, real=not np.iscomplexobj(u))


def background_propagate(B: np.ndarray, tau0: float, tau1: float, zetas, ctx: OperatorContext,
                         stepper: TimeStepper = TimeStepper(), **kw) -> np.ndarray:
    """Self-similar background evolution ``dB = (L - lambda^2) B - div(B V) dtau``."""
    return march(B, tau0, tau1, ctx.grid, background_rhs(ctx), zetas=zetas, stepper=stepper, **kw)


def K_propagate(H: np.ndarray, tau0: float, tau1: float, zetas, ctx: OperatorContext,
                stepper: TimeStepper = TimeStepper(), **kw) -> np.ndarray:
    """Self-similar vector system ``dH = (L - 1/2 - lambda^2) H - (V div_bar H, 0) dtau``."""
    return march(H, tau0, tau1, ctx.grid, K_rhs(ctx, zetas), zetas=zetas, shift=-0.5,
                 stepper=stepper, **kw)


def _physical_slices(u: ZSliceField, s: float, ctx: OperatorContext, amplitude_power: float):
    """Resample physical slices at time ``s`` onto the self-similar grid."""
    rs = math.sqrt(s)
    return dilate(u.slices, u.grid, rs, ctx.grid, amplitude=s**amplitude_power, real=False)


def background_flow(u: ZSliceField, s: float, t: float, ctx: OperatorContext,
                    stepper: TimeStepper = TimeStepper(), start_fraction: float = 1e-3) -> ZSliceField:
    """Linear background propagator from physical time ``s`` to ``t``.

    Data are converted to ``B = s u(sqrt(s) xi)``, evolved in ``tau = log t``
    and converted back to ``u(x) = B(x/sqrt(t))/t`` on the input grid.  For
    ``s = 0`` the data are first carried by the exact heat flow up to
    ``start_fraction * t``, where transport starts.
    """
    if not (0 <= s < t):
        raise ValueError("need 0 <= s < t")
    if u.components != 1:
        raise ValueError("background_flow expects scalar slices")
    if s == 0:
        s = start_fraction * t
        B = heat_start(u.slices, u.grid, s, ctx.grid, u.zetas).astype(complex)
    else:
        B = _physical_slices(u, s, ctx, 1.0)
    B = background_propagate(B, math.log(s), math.log(t), u.zetas, ctx, stepper)
    out = dilate(B, ctx.grid, 1.0 / math.sqrt(t), u.grid, amplitude=1.0 / t, real=False)
    return ZSliceField(u.grid, u.zetas, out, u.real, u._dzeta_single)


def background_K(F: ZSliceField, s: float, t: float, ctx: OperatorContext,
                 stepper: TimeStepper = TimeStepper()) -> ZSliceField:
    """Vector propagator intertwined with the background flow by the divergence."""
    if not (0 < s < t):
        raise ValueError("need 0 < s < t")
    if F.components != 3:
        raise ValueError("background_K expects 3-vector slices")
    H = _physical_slices(F, s, ctx, 0.5)
    H = K_propagate(H, math.log(s), math.log(t), F.zetas, ctx, stepper)
    out = dilate(H, ctx.grid, 1.0 / math.sqrt(t), F.grid, amplitude=1.0 / math.sqrt(t), real=False)
    return ZSliceField(F.grid, F.zetas, out, F.real, F._dzeta_single)


def commutation_defect(F: np.ndarray, tau0: float, tau1: float, zetas, ctx: OperatorContext,
                       stepper: TimeStepper = TimeStepper()) -> float:
    """Relative sup-norm gap between ``S div_bar F`` and ``div_bar K F``.

    Both sides are evolved in self-similar time from ``tau0`` to ``tau1``;
    ``F`` holds 3-vector slices (component axis ``-3``).
    """
    lhs = background_propagate(div_bar(F, ctx.grid, zetas, tau0), tau0, tau1, zetas, ctx, stepper)
    rhs = div_bar(K_propagate(F, tau0, tau1, zetas, ctx, stepper), ctx.grid, zetas, tau1)
    return float(np.max(np.abs(lhs - rhs)) / max(np.max(np.abs(lhs)), 1e-300))


# --------------------------------------------------------------------------
# decay fits
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DecayFit:
    """Least-squares fit ``norm ~ C exp(-rate * tau)`` on a window."""

    rate: float
    prefactor: float
    residual: float
    window: tuple[float, float]
    samples: int
    short_window: bool

    def as_dict(self) -> dict:
        return {"rate": self.rate, "prefactor": self.prefactor, "residual": self.residual,
                "window": list(self.window), "samples": self.samples, "short_window": self.short_window}


def fit_decay(series, window: tuple[float, float] | None = None) -> DecayFit:
    """Fit an exponential rate to ``(time, norm)`` pairs inside ``window``.

    The residual is the root-mean-square deviation of the log-norms.  Fits
    whose window is shorter than two decay times are flagged.
    """
    data = np.asarray(series, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValueError("series must be a sequence of (time, norm) pairs")
    t, y = data[:, 0], data[:, 1]
    if window is not None:
        sel = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
        t, y = t[sel], y[sel]
    if t.size < 8:
        raise ValueError("need at least 8 samples in the fit window")
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise ValueError("norms must be positive and finite")
    A = np.stack([np.ones_like(t), -t], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.log(y), rcond=None)
    resid = np.log(y) - A @ coef
    rate = float(coef[1])
    lo, hi = float(t.min()), float(t.max())
    short = rate > 0 and (hi - lo) < 2.0 / rate
    return DecayFit(rate, float(math.exp(coef[0])), float(np.sqrt(np.mean(resid**2))), (lo, hi), int(t.size), bool(short))


# --------------------------------------------------------------------------
# operator-norm proxies
# --------------------------------------------------------------------------


def probe_family(grid: Grid2D, n: int = 64, seed: int = 0, widths: tuple[float, float] = (0.4, 1.5),
                 center_radius: float = 1.5, max_degree: int = 2, mean_zero: bool = False) -> np.ndarray:
    """Deterministic random Gaussians times Hermite polynomials, shape ``(n, N, N)``."""
    from numpy.polynomial.hermite_e import hermeval

    rng = np.random.default_rng(seed)
    X, Y = grid.mesh
    out = np.empty((n, grid.N, grid.N))
    for i in range(n):
        w = math.exp(rng.uniform(math.log(widths[0]), math.log(widths[1])))
        rad = center_radius * math.sqrt(rng.uniform())
        ang = rng.uniform(0, 2 * math.pi)
        cx, cy = rad * math.cos(ang), rad * math.sin(ang)
        a, b = rng.integers(0, max_degree + 1, size=2)
        u, v = (X - cx) / w, (Y - cy) / w
        ca = np.zeros(a + 1)
        ca[a] = 1.0
        cb = np.zeros(b + 1)
        cb[b] = 1.0
        out[i] = hermeval(u, ca) * hermeval(v, cb) * np.exp(-0.5 * (u * u + v * v))
    if mean_zero:
        out = project_mean_zero(out, grid)
    out /= norm_array(out, grid, 3.0, 2.0)[:, None, None]
    return out


def _gram(A: np.ndarray, B: np.ndarray, weight: np.ndarray) -> np.ndarray:
    a = A.reshape(A.shape[0], -1)
    b = B.reshape(B.shape[0], -1)
    return (a * weight.reshape(-1)) @ b.conj().T


def probe_norm(apply: Callable[[np.ndarray], np.ndarray], probes: np.ndarray, grid: Grid2D, *,
               m_in: float = 3.0, p_in: float = 2.0, m_out: float = 3.0, p_out: float = 2.0,
               vector_in: bool = False, vector_out: bool = False, ritz: bool = True,
               batch: int = 16) -> dict:
    """Lower bound for an operator norm from a probe family.

    Returns the largest ratio over single probes and, for ``L^2 -> L^2``
    norms with ``ritz``, the exact maximum over the probes' linear span
    (a Rayleigh-Ritz step that refines the worst probe).
    """
    outs = [apply(probes[i:i + batch]) for i in range(0, probes.shape[0], batch)]
    out = np.concatenate(outs, axis=0)
    n_in = norm_array(probes, grid, m_in, p_in, vector=vector_in)
    n_out = norm_array(out, grid, m_out, p_out, vector=vector_out)
    ratios = n_out / n_in
    best = int(np.argmax(ratios))
    result = {"max_ratio": float(ratios[best]), "worst_probe": best, "ratios": ratios}
    if ritz and p_in == 2 and p_out == 2:
        w_in = grid.japanese() ** (2 * m_in) * grid.cell_area
        w_out = grid.japanese() ** (2 * m_out) * grid.cell_area
        pin = probes.reshape(probes.shape[0], -1, grid.N, grid.N) if vector_in else probes[:, None]
        pout = out.reshape(out.shape[0], -1, grid.N, grid.N) if vector_out else out[:, None]
        Ain = sum(_gram(pin[:, c], pin[:, c], w_in) for c in range(pin.shape[1]))
        Aout = sum(_gram(pout[:, c], pout[:, c], w_out) for c in range(pout.shape[1]))
        Ain = 0.5 * (Ain + Ain.conj().T)
        Aout = 0.5 * (Aout + Aout.conj().T)
        ev, U = np.linalg.eigh(Ain)
        keep = ev > 1e-10 * ev.max()
        T = U[:, keep] / np.sqrt(ev[keep])
        M = T.conj().T @ Aout @ T
        mu = scipy.linalg.eigvalsh(0.5 * (M + M.conj().T))
        result["span_norm"] = float(math.sqrt(max(mu.max(), 0.0)))
    else:
        result["span_norm"] = result["max_ratio"]
    return result


# --------------------------------------------------------------------------
# short-time estimates
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ShortTimeTable:
    """Measured norm proxies against the time separation and their log-log slope."""

    op: str
    p: float
    separations: tuple[float, ...]
    constants: tuple[float, ...]
    exponent: float
    expected: float
    params: dict = field(default_factory=dict)

    @property
    def deviation(self) -> float:
        return abs(self.exponent - self.expected)

    def as_dict(self) -> dict:
        return {"op": self.op, "p": self.p, "separations": list(self.separations),
                "constants": list(self.constants), "exponent": self.exponent,
                "expected": self.expected, "params": self.params}


def _gaussian_probes(grid: Grid2D, widths: Sequence[float], center=(0.0, 0.0)) -> np.ndarray:
    X, Y = grid.mesh
    r2 = (X - center[0]) ** 2 + (Y - center[1]) ** 2
    return np.stack([np.exp(-0.5 * r2 / (w * w)) / (2 * math.pi * w * w) for w in widths])


def measure_short_time(op: str, p: float, ctx: OperatorContext, separations: Sequence[float] | None = None,
                       zeta: float = 0.0, sigma: float = 0.0, widths: Sequence[float] | None = None,
                       substeps: int = 4) -> ShortTimeTable:
    """Log-log exponent of a smoothing estimate over small time separations.

    ``op`` selects the operator:

    * ``"core_div"``: ``S(sigma + d, sigma) div_bar`` from ``L^p(m)`` to ``L^2(m)``
      (expected exponent ``-1/p``);
    * ``"core_grad"``: ``grad_bar S(sigma + d, sigma)`` on ``L^2(m)``
      (expected ``-1/2``);
    * ``"bg_div"``: background propagator composed with the divergence, on
      ``L^1`` at physical times ``s = 1``, ``t = 1 + d`` (expected ``-1/2``);
    * ``"bg_lp"``: background propagator from ``L^1`` to ``L^p`` at the same
      times (expected ``1/p - 1``).

    The norm proxy at each separation is the maximum over Gaussian probes of
    the given widths (and both vector directions where applicable).
    """
    grid = ctx.grid
    if separations is None:
        separations = np.geomspace(1e-2, 0.2, 6)
    seps = np.asarray(sorted(separations), dtype=float)
    if widths is None:
        widths = np.geomspace(3 * grid.h, 1.0, 14)
    m = ctx.weight.m
    gauss = _gaussian_probes(grid, widths)
    zeta = float(zeta)
    constants = []

    if op == "core_div":
        # x-directed and z-directed vector probes (the latter only when zeta != 0)
        n = len(widths)
        comps = [0] + ([2] if zeta != 0 else [])
        F = np.zeros((n * len(comps), 3, grid.N, grid.N), dtype=complex if zeta != 0 else float)
        for j, c in enumerate(comps):
            F[j * n:(j + 1) * n, c] = gauss
        n_in = norm_array(F, grid, m, p, vector=True)
        W = div_bar(F, grid, zeta, sigma)
        expected = -1.0 / p
        out_norm = lambda W: norm_array(W, grid, m, 2.0)
        evolve = lambda W, a, b: core_propagate(W, a, b, zeta, ctx, TimeStepper(dtau=(b - a) / substeps))
    elif op == "core_grad":
        W = gauss.astype(complex) if zeta != 0 else gauss.copy()
        n_in = norm_array(W, grid, m, 2.0)
        expected = -0.5

        def out_norm(W, tau):
            gb = grad(W, grid)
            if zeta != 0:
                gb = np.concatenate([gb, (1j * zeta * math.exp(0.5 * tau) * W)[:, None]], axis=1)
            return norm_array(gb, grid, m, 2.0, vector=True)

        evolve = lambda W, a, b: core_propagate(W, a, b, zeta, ctx, TimeStepper(dtau=(b - a) / substeps))
    elif op == "bg_div":
        n = len(widths)
        F = np.zeros((2 * n, 3, grid.N, grid.N), dtype=complex if zeta != 0 else float)
        F[:n, 0] = gauss
        F[n:, 1] = gauss
        if zeta != 0:
            F[n:, 2] = gauss
        n_in = norm_array(F, grid, 0.0, 1.0, vector=True)
        W = div_bar(F, grid, zeta, 0.0)
        expected = -0.5
        # at s = 1 the self-similar and physical variables coincide and L^1
        # norms are invariant under the conversion u(x) = B(x/sqrt t)/t
        out_norm = lambda W: norm_array(W, grid, 0.0, 1.0)
        evolve = lambda W, a, b: background_propagate(W, a, b, zeta, ctx,
                                                      TimeStepper(dtau=(b - a) / substeps))
    elif op == "bg_lp":
        W = gauss.astype(complex) if zeta != 0 else gauss.copy()
        n_in = norm_array(W, grid, 0.0, 1.0)
        expected = 1.0 / p - 1.0

        # physical density u(x) = B(x/sqrt t)/t has ||u||_p = t^{1/p - 1} ||B||_p
        def out_norm(W, tau):
            return math.exp(tau * (1.0 / p - 1.0)) * norm_array(W, grid, 0.0, p)

        evolve = lambda W, a, b: background_propagate(W, a, b, zeta, ctx,
                                                      TimeStepper(dtau=(b - a) / substeps))
    else:
        raise ValueError(f"unknown short-time operator {op!r}")

    if op in ("bg_div", "bg_lp"):
        times = np.log1p(seps)
        t_prev = 0.0
    else:
        times = sigma + seps
        t_prev = sigma
    for t_next in times:
        W = evolve(W, t_prev, float(t_next))
        t_prev = float(t_next)
        nrm = out_norm(W, t_next) if op in ("core_grad", "bg_lp") else out_norm(W)
        constants.append(float(np.max(nrm / n_in)))
    slope = float(np.polyfit(np.log(seps), np.log(constants), 1)[0])
    return ShortTimeTable(op, float(p), tuple(float(s) for s in seps), tuple(constants), slope, expected,
                          {"zeta": zeta, "sigma": sigma, "R": grid.R, "N": grid.N,
                           "widths": [float(w) for w in widths], "substeps": substeps})
