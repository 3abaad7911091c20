"""Radially symmetric self-similar profiles of the 2D aggregation equation.

A stationary radial state of the rescaled equation has zero radial flux,
which integrates to

    g(r) = g(0) exp(phi(r) - r^2/4),     phi(r) = c(r) - c(0),
    phi'(r) = -m(r)/r,                    m(r) = int_0^r s g(s) ds,

so ``2 pi m(infinity)`` is the mass.  For a given central value ``g(0)`` the
system is an initial value problem; the central value is found by root
bracketing on the mass.  The discrete march uses the trapezoid rule for both
integrals and is solved implicitly node by node, so the flux identity
``r phi'(r) = -m(r)`` holds exactly on the grid.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from . import kernels
from .grid import Field2D, Grid2D, WeightSpec, norm_array

__all__ = [
    "RadialGrid",
    "RadialProfile",
    "ProfileConvergenceError",
    "ALPHA_CAP",
    "make_radial_grid",
    "mass_for_center_value",
    "solve_profile",
    "profile_velocity",
    "RadialSampler",
    "check_asymptotics",
    "stationarity_residual",
    "save_profile",
    "load_profile",
    "export_profile_csv",
]

EIGHT_PI = 8.0 * math.pi
ALPHA_CAP = 7.9 * math.pi


class ProfileConvergenceError(RuntimeError):
    """Shooting failed; carries the final bracket on the central value."""

    def __init__(self, message: str, bracket: tuple[float, float], masses: tuple[float, float]):
        super().__init__(f"{message}; bracket g(0) in {bracket}, masses {masses}")
        self.bracket = bracket
        self.masses = masses


@dataclass(frozen=True)
class RadialGrid:
    """Strictly increasing radial nodes starting at the origin."""

    nodes: np.ndarray

    def __post_init__(self):
        r = np.array(self.nodes, dtype=float)
        if r.ndim != 1 or r.size < 8:
            raise ValueError("radial grid needs at least 8 nodes")
        if r[0] != 0.0:
            raise ValueError("radial grid must start at r = 0")
        if np.any(np.diff(r) <= 0):
            raise ValueError("radial nodes must be strictly increasing")
        r.setflags(write=False)
        object.__setattr__(self, "nodes", r)

    @property
    def R_r(self) -> float:
        return float(self.nodes[-1])

    @property
    def M(self) -> int:
        return int(self.nodes.size)


def make_radial_grid(R_r: float = 16.0, M: int = 2048) -> RadialGrid:
    """Uniform radial grid with ``M`` nodes on ``[0, R_r]``."""
    if R_r <= 0:
        raise ValueError("R_r must be positive")
    return RadialGrid(np.linspace(0.0, R_r, M))


@dataclass(frozen=True)
class RadialProfile:
    """Converged profile: density ``g``, potential slope ``cprime`` and mass."""

    grid: RadialGrid
    g: np.ndarray
    cprime: np.ndarray
    phi: np.ndarray
    mass: float
    tol: float = 1e-10

    def __post_init__(self):
        for name in ("g", "cprime", "phi"):
            a = np.array(getattr(self, name), dtype=float)
            if a.shape != self.grid.nodes.shape:
                raise ValueError(f"{name} does not match the radial grid")
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def r(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def center_value(self) -> float:
        return float(self.g[0])

    @property
    def alpha(self) -> float:
        return self.mass

    @cached_property
    def enclosed(self) -> np.ndarray:
        """``m(r) = int_0^r s g(s) ds`` (so that ``r c'(r) = -m(r)``)."""
        return -self.r * self.cprime

    def quadrature_mass(self) -> float:
        """``2 pi int_0^R g r dr`` by the composite trapezoid rule."""
        return float(2.0 * math.pi * np.trapezoid(self.g * self.r, self.r))

    @cached_property
    def sampler(self) -> "RadialSampler":
        return RadialSampler(self)


def mass_for_center_value(g0: float, grid: RadialGrid) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """March the radial system from ``g(0) = g0``; returns (mass, g, m, phi)."""
    g, m, phi = kernels.radial_march(np.ascontiguousarray(grid.nodes), float(g0))
    return 2.0 * math.pi * float(m[-1]), g, m, phi


def solve_profile(alpha: float, grid: RadialGrid | None = None, tol: float = 1e-10,
                  allow_near_critical: bool = False, max_widen: int = 60) -> RadialProfile:
    """Shoot on the central value until the mass equals ``alpha``.

    ``alpha`` must lie in ``(0, 8 pi)``; values above ``7.9 pi`` additionally
    require ``allow_near_critical`` because the profile degenerates there.
    ``tol`` is the absolute mass tolerance.
    """
    if not (alpha > 0 and alpha < EIGHT_PI):
        raise ValueError(
            f"no radial self-similar profile exists for mass {alpha}: the mass must lie in (0, 8*pi)"
        )
    if alpha > ALPHA_CAP and not allow_near_critical:
        raise ValueError(f"mass {alpha} exceeds the default cap 7.9*pi; pass allow_near_critical=True")
    if grid is None:
        grid = make_radial_grid()

    def f(g0: float) -> float:
        return mass_for_center_value(g0, grid)[0] - alpha

    lo = alpha / (4.0 * math.pi)
    hi = lo * math.exp(alpha / (2.0 * math.pi))
    f_lo, f_hi = f(lo), f(hi)
    widen = 0
    while f_lo > 0 and widen < max_widen:
        hi, f_hi = lo, f_lo
        lo *= 0.5
        f_lo = f(lo)
        widen += 1
    while f_hi < 0 and widen < max_widen:
        lo, f_lo = hi, f_hi
        hi *= 2.0
        f_hi = f(hi)
        widen += 1
    if not (f_lo <= 0 <= f_hi):
        raise ProfileConvergenceError("could not bracket the central value", (lo, hi), (f_lo + alpha, f_hi + alpha))
    g0 = brentq(f, lo, hi, xtol=1e-15 * hi, rtol=4 * np.finfo(float).eps, maxiter=500)
    mass, g, m, phi = mass_for_center_value(g0, grid)
    if not abs(mass - alpha) < tol:
        raise ProfileConvergenceError("mass tolerance not met", (lo, hi), (f_lo + alpha, f_hi + alpha))
    if not np.all(g > 0):
        raise ProfileConvergenceError("profile lost positivity", (lo, hi), (f_lo + alpha, f_hi + alpha))
    r = grid.nodes
    cprime = np.zeros_like(r)
    cprime[1:] = -m[1:] / r[1:]
    return RadialProfile(grid, g, cprime, phi, float(mass), tol)


# --------------------------------------------------------------------------
# resampling onto Cartesian points
# --------------------------------------------------------------------------


class RadialSampler:
    """Smooth evaluation of a radial profile and its derived fields.

    Interpolation is done in ``s = r^2`` where all the radial functions are
    smooth (they are even in r): ``phi(s)``, ``c'(r)/r`` and the density via
    ``g = g0 exp(phi - s/4)``.  Beyond the radial grid the exact far field is
    used: all mass is enclosed, so ``c'(r) = -(alpha/2pi)/r``.
    """

    def __init__(self, p: RadialProfile):
        self.p = p
        r = p.r
        s = r * r
        self.s_max = float(s[-1])
        self.m_inf = float(p.enclosed[-1])
        self._phi = CubicSpline(s, p.phi)
        q = np.empty_like(r)
        q[1:] = p.cprime[1:] / r[1:]
        q[0] = -0.5 * p.g[0]
        self._q = CubicSpline(s, q)
        self.g0 = p.center_value

    def phi(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        inside = s <= self.s_max
        out = np.empty_like(s)
        out[inside] = self._phi(s[inside])
        # phi(r) = phi(R) - m_inf log(r/R) beyond the grid
        out[~inside] = self.p.phi[-1] - 0.5 * self.m_inf * np.log(s[~inside] / self.s_max)
        return out

    def density(self, s: np.ndarray) -> np.ndarray:
        """``G(r)`` as a function of ``s = r^2``."""
        s = np.asarray(s, dtype=float)
        return self.g0 * np.exp(self.phi(s) - 0.25 * s)

    def cprime_over_r(self, s: np.ndarray) -> np.ndarray:
        """``c'(r)/r`` as a function of ``s = r^2``."""
        s = np.asarray(s, dtype=float)
        inside = s <= self.s_max
        out = np.empty_like(s)
        out[inside] = self._q(s[inside])
        out[~inside] = -self.m_inf / s[~inside]
        return out

    def on_grid(self, grid: Grid2D, center: tuple[float, float] = (0.0, 0.0)):
        """``(G, V, grad G)`` sampled on ``grid`` (vectors on axis 0)."""
        X, Y = grid.mesh
        X = X - center[0]
        Y = Y - center[1]
        s = X * X + Y * Y
        G = self.density(s)
        q = self.cprime_over_r(s)
        V = np.stack([q * X, q * Y])
        gG = np.stack([G * (q - 0.5) * X, G * (q - 0.5) * Y])
        return G, V, gG


def profile_velocity(p: RadialProfile):
    """Sampler ``xi -> c'(r) xi / r`` of the attractive drift field.

    The returned callable maps an array of points of shape ``(..., 2)`` to
    velocities of the same shape.  The drift equals ``grad (-Delta)^{-1} G``
    and points toward the origin.
    """
    sampler = p.sampler

    def velocity(points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        s = np.sum(pts * pts, axis=-1)
        return sampler.cprime_over_r(s)[..., None] * pts

    return velocity


# --------------------------------------------------------------------------
# diagnostics
# --------------------------------------------------------------------------


def check_asymptotics(p: RadialProfile, window: tuple[float, float] = (6.0, 10.0)) -> float:
    """Least-squares slope of ``log g + r^2/4`` against ``log r`` in a window.

    For the self-similar profile the slope approaches ``-alpha/(2 pi)``.
    """
    lo, hi = window
    if lo < 6.0 or hi <= lo or hi > p.grid.R_r:
        raise ValueError("window must satisfy 6 <= r_lo < r_hi <= R_r")
    sel = (p.r >= lo) & (p.r <= hi)
    if np.count_nonzero(sel) < 8:
        raise ValueError("window holds fewer than 8 radial nodes")
    r = p.r[sel]
    y = np.log(p.g[sel]) + 0.25 * r * r
    slope = np.polyfit(np.log(r), y, 1)[0]
    return float(slope)


def stationarity_residual(p: RadialProfile, grid2d: Grid2D, w: WeightSpec = WeightSpec(),
                          field: np.ndarray | Field2D | None = None) -> float:
    """Weighted ``L^2(m)`` norm of ``L G - div(G grad(-Delta)^{-1} G)``.

    ``field`` replaces the resampled profile (e.g. a perturbed profile or a
    Gaussian) while keeping the same evaluation.
    """
    from .operators import apply_L_array
    from .spectral import biot_savart, div

    if field is None:
        G = p.sampler.on_grid(grid2d)[0]
    else:
        G = field.values if isinstance(field, Field2D) else np.asarray(field)
    res = apply_L_array(G, grid2d) - div(G[None] * biot_savart(G, grid2d), grid2d)
    return float(norm_array(res, grid2d, w.m, 2.0))


# --------------------------------------------------------------------------
# cache files
# --------------------------------------------------------------------------

_PROFILE_MAGIC = b"PKSP"
_PROFILE_HEADER = struct.Struct("<4sIdIdd")


def save_profile(p: RadialProfile, path: str | Path) -> None:
    """Binary cache: header (magic, version, alpha, M, R_r, tol) then r, g, c', phi."""
    header = _PROFILE_HEADER.pack(_PROFILE_MAGIC, 1, p.mass, p.grid.M, p.grid.R_r, p.tol)
    body = np.concatenate([p.r, p.g, p.cprime, p.phi]).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body.tobytes())


def load_profile(path: str | Path) -> RadialProfile:
    raw = Path(path).read_bytes()
    magic, version, alpha, M, R_r, tol = _PROFILE_HEADER.unpack_from(raw)
    if magic != _PROFILE_MAGIC or version != 1:
        raise ValueError("not a profile cache file")
    body = np.frombuffer(raw, dtype="<f8", offset=_PROFILE_HEADER.size)
    if body.size != 4 * M:
        raise ValueError("profile cache is truncated")
    r, g, cp, phi = body.reshape(4, M)
    if abs(r[-1] - R_r) > 1e-12 * max(1.0, R_r):
        raise ValueError("profile cache header inconsistent with its nodes")
    return RadialProfile(RadialGrid(r.copy()), g.copy(), cp.copy(), phi.copy(), float(alpha), float(tol))


def export_profile_csv(p: RadialProfile, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["r", "g", "cprime"])
        for row in zip(p.r, p.g, p.cprime):
            wr.writerow([format(float(v), ".17g") for v in row])
