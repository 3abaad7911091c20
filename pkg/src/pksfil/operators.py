"""Linear operators around the self-similar profile.

Conventions
-----------
``V = grad (-Delta)^{-1} G`` is the attractive drift induced by the profile
(``div V = -G``).  The transport map of the rescaled aggregation equation is
``T(w) = div(w grad(-Delta)^{-1} w)`` and

    Lambda f = div(f V) + div(G grad(-Delta)^{-1} f)

is its derivative at ``G``.  The z-frequency coupling of the three-dimensional
problem enters through

    Z(W) = grad G . grad[ (-Delta)^{-1} W - (lambda^2 - Delta)^{-1} W ],
    lambda = e^{tau/2} |zeta|,

the difference of the planar and the screened potential gradients.

Array-level routines (suffix ``_array``) act on batched arrays; the public
``apply_*`` functions wrap them for :class:`~pksfil.grid.Field2D`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .grid import Field2D, Grid2D, WeightSpec, norm_array
from .profile import RadialProfile
from .spectral import dealias, div, fft2, free_space, grad, ifft2

__all__ = [
    "OperatorContext",
    "make_context",
    "apply_L",
    "apply_L_array",
    "biot_savart",
    "screened_resolvent",
    "apply_lambda_alpha",
    "lambda_array",
    "apply_Z",
    "Z_array",
    "split_Z",
    "split_Z_array",
    "core_operator_array",
    "transport_map",
]


def apply_L_array(f: np.ndarray, grid: Grid2D) -> np.ndarray:
    """``L f = Delta f + (1/2) xi . grad f + f`` (batched)."""
    KX, KY = grid.kmesh
    X, Y = grid.mesh
    fh = fft2(f)
    lap = ifft2(-grid.k2 * fh)
    fx = ifft2(1j * KX * fh)
    fy = ifft2(1j * KY * fh)
    out = lap + 0.5 * (X * fx + Y * fy) + f
    return out.real.copy() if not np.iscomplexobj(f) else out


def apply_L(f: Field2D) -> Field2D:
    """Fokker-Planck operator on a scalar field."""
    if f.components != 1:
        raise ValueError("apply_L expects a scalar field")
    return f.with_values(apply_L_array(f.values, f.grid))


def biot_savart(f: Field2D) -> Field2D:
    """``grad (-Delta)^{-1} f`` by free-space convolution (2-vector field)."""
    if f.components != 1:
        raise ValueError("biot_savart expects a scalar field")
    return f.with_values(free_space(f.grid).grad_inverse_laplacian(f.values))


def screened_resolvent(f: Field2D, lam: float) -> Field2D:
    """``(lam^2 - Delta)^{-1} f`` by free-space convolution with the Bessel kernel."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if f.components != 1:
        raise ValueError("screened_resolvent expects a scalar field")
    return f.with_values(free_space(f.grid).screened(f.values, float(lam)))


@dataclass(frozen=True)
class OperatorContext:
    """Profile-dependent coefficients sampled on one grid."""

    grid: Grid2D
    profile: RadialProfile
    weight: WeightSpec = WeightSpec()

    @cached_property
    def _fields(self):
        # G is resampled from the radial profile; its gradient and drift are
        # then derived with the grid's own calculus so that all coefficients
        # are mutually consistent (div V = -G, grad G exact on the grid).
        G = self.profile.sampler.on_grid(self.grid)[0]
        V = free_space(self.grid).grad_inverse_laplacian(G)
        gG = grad(G, self.grid)
        for a in (G, V, gG):
            a.setflags(write=False)
        return G, V, gG

    @property
    def G(self) -> np.ndarray:
        return self._fields[0]

    @property
    def V(self) -> np.ndarray:
        """Drift ``grad(-Delta)^{-1} G`` (free-space convolution), shape (2, N, N)."""
        return self._fields[1]

    @property
    def gradG(self) -> np.ndarray:
        return self._fields[2]

    @property
    def alpha(self) -> float:
        return self.profile.mass

    def validate(self, tol: float = 1e-3) -> dict:
        """Compare the grid coefficients with the radial profile.

        Checks the drift against the radial flux formula, the grid mass
        against the profile mass, and that the profile has decayed at the
        domain edge.  Raises ``ValueError`` when the profile is not resolved.
        """
        g = self.grid
        V_radial = self.profile.sampler.on_grid(g)[1]
        drift_err = float(np.max(np.abs(V_radial - self.V)) / np.max(np.abs(V_radial)))
        mass_err = abs(float(np.sum(self.G) * g.cell_area) - self.alpha) / self.alpha
        tail = float(np.max(self.G[g.boundary_band()]) / np.max(self.G))
        report = {"drift_error": drift_err, "mass_error": mass_err, "boundary_ratio": tail}
        if drift_err > tol or mass_err > tol or tail > tol:
            raise ValueError(f"profile not resolved on the grid: {report}")
        return report


def make_context(profile: RadialProfile, grid: Grid2D, weight: WeightSpec = WeightSpec(),
                 validate: bool = True, tol: float = 1e-3) -> OperatorContext:
    ctx = OperatorContext(grid, profile, weight)
    if validate:
        ctx.validate(tol)
    return ctx


# --------------------------------------------------------------------------
# linearized transport
# --------------------------------------------------------------------------


def transport_map(w: np.ndarray, grid: Grid2D) -> np.ndarray:
    """``T(w) = div(w grad(-Delta)^{-1} w)``."""
    u = free_space(grid).grad_inverse_laplacian(w)
    return div(w[..., None, :, :] * u, grid)


def lambda_array(f: np.ndarray, ctx: OperatorContext, dealiased: bool = True) -> np.ndarray:
    """``Lambda f = div(f V) + div(G grad(-Delta)^{-1} f)`` (batched)."""
    u = free_space(ctx.grid).grad_inverse_laplacian(f)
    flux = f[..., None, :, :] * ctx.V + ctx.G * u
    if dealiased:
        flux = dealias(flux, ctx.grid)
    return div(flux, ctx.grid)


def apply_lambda_alpha(f: Field2D, ctx: OperatorContext) -> Field2D:
    """Linearization of the transport term at the profile."""
    if f.components != 1:
        raise ValueError("apply_lambda_alpha expects a scalar field")
    return f.with_values(lambda_array(f.values, ctx))


# --------------------------------------------------------------------------
# z-frequency perturbation
# --------------------------------------------------------------------------


def _lambda_of(zeta, tau) -> np.ndarray:
    return np.exp(0.5 * np.asarray(tau, dtype=float)) * np.abs(np.asarray(zeta, dtype=float))


def _potential_gradient(Wh: np.ndarray, ctx: OperatorContext, lam, real: bool, ndim: int) -> np.ndarray:
    """``grad phi`` with ``phi = (-Delta)^{-1} W - (lam^2 - Delta)^{-1} W``.

    ``Wh`` is the padded spectrum of ``W``; ``phi`` equals
    ``lam^2 (-Delta)^{-1}(lam^2 - Delta)^{-1} W`` and is obtained with one
    multiplier, the difference of the two symbols.
    """
    fs = free_space(ctx.grid)
    return fs.gradient_of(Wh * fs.symbols(lam, ndim, real, difference=True), real)


def Z_array(W: np.ndarray, zeta, tau: float, ctx: OperatorContext) -> np.ndarray:
    """``Z(W)`` for a batch; ``zeta`` is a scalar or one value per axis-0 entry."""
    lam = _lambda_of(zeta, tau)
    if lam.ndim and W.ndim < 3:
        raise ValueError("per-slice zeta requires a leading slice axis")
    out = np.zeros_like(W, dtype=np.result_type(W, float))
    if lam.ndim == 0:
        if not lam > 0:
            return out
        return _Z_core(W, lam, ctx)
    idx = np.nonzero(lam > 0)[0]
    if idx.size:
        out[idx] = _Z_core(W[idx], lam[idx], ctx)
    return out


def _Z_core(W: np.ndarray, lam, ctx: OperatorContext) -> np.ndarray:
    real = not np.iscomplexobj(W)
    gphi = _potential_gradient(free_space(ctx.grid).forward(W), ctx, lam, real, W.ndim)
    return dealias(ctx.gradG[0] * gphi[..., 0, :, :] + ctx.gradG[1] * gphi[..., 1, :, :], ctx.grid)


def core_operator_array(W: np.ndarray, zeta, tau: float, ctx: OperatorContext) -> np.ndarray:
    """``-Lambda W + Z(W)`` sharing one padded transform between both terms."""
    lam = _lambda_of(zeta, tau)
    real = not np.iscomplexobj(W)
    fs = free_space(ctx.grid)
    Wh = fs.forward(W)
    u = fs.gradient_of(Wh * fs.view(fs.lap_symbol, real), real)
    flux = dealias(W[..., None, :, :] * ctx.V + ctx.G * u, ctx.grid)
    out = -div(flux, ctx.grid)
    if lam.ndim == 0:
        if lam > 0:
            gphi = _potential_gradient(Wh, ctx, lam, real, W.ndim)
            out = out + dealias(ctx.gradG[0] * gphi[..., 0, :, :] + ctx.gradG[1] * gphi[..., 1, :, :], ctx.grid)
        return out
    idx = np.nonzero(lam > 0)[0]
    if idx.size:
        gphi = _potential_gradient(Wh[idx], ctx, lam[idx], real, W.ndim)
        out[idx] += dealias(ctx.gradG[0] * gphi[..., 0, :, :] + ctx.gradG[1] * gphi[..., 1, :, :], ctx.grid)
    return out


def apply_Z(W: Field2D, zeta: float, tau: float, ctx: OperatorContext) -> Field2D:
    """Coupling term of the z-frequency ``zeta`` at rescaled time ``tau``."""
    if W.components != 1:
        raise ValueError("apply_Z expects a scalar field")
    return W.with_values(Z_array(W.values, float(zeta), float(tau), ctx))


def split_Z_array(W: np.ndarray, zeta: float, tau: float, ctx: OperatorContext):
    """``(Z1, Z2)`` with ``Z1 = div(G grad phi)`` and ``Z2 = G lam^2 (lam^2-Delta)^{-1} W``."""
    lam = float(_lambda_of(zeta, tau))
    if lam == 0.0:
        z = np.zeros_like(W, dtype=np.result_type(W, float))
        return z, z.copy()
    fs = free_space(ctx.grid)
    real = not np.iscomplexobj(W)
    gphi = _potential_gradient(fs.forward(W), ctx, lam, real, W.ndim)
    Z1 = div(dealias(ctx.G * gphi, ctx.grid), ctx.grid)
    Z2 = dealias(ctx.G * (lam * lam) * fs.screened(W, lam), ctx.grid)
    return Z1, Z2


def split_Z(W: Field2D, zeta: float, tau: float, ctx: OperatorContext) -> tuple[Field2D, Field2D]:
    """Divergence-form and remainder pieces of :func:`apply_Z`."""
    if W.components != 1:
        raise ValueError("split_Z expects a scalar field")
    Z1, Z2 = split_Z_array(W.values, float(zeta), float(tau), ctx)
    return W.with_values(Z1), W.with_values(Z2)
