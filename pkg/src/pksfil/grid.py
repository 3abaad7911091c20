"""Spatial discretization, field containers and the norms used everywhere.

The plane is truncated to the periodic square ``[-R, R]^2`` sampled at cell
centres.  Arrays handled by the numerical routines carry arbitrary leading
batch axes; the last two axes are always spatial, and vector fields keep
their component axis immediately before the spatial ones (axis ``-3``).
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels

__all__ = [
    "Grid2D",
    "Field2D",
    "WeightSpec",
    "ZSliceField",
    "LineDensity",
    "MeasureSample",
    "MorreyResult",
    "make_grid",
    "weighted_norm",
    "norm_array",
    "bz_norm",
    "bz_norm_array",
    "integrate",
    "zero_mean_project",
    "morrey_norm",
    "a_of_tau",
    "zeta_grid",
    "z_nodes",
    "to_z_space",
    "from_z_space",
    "complete_slices",
    "save_field",
    "load_field",
    "export_field_csv",
]


# --------------------------------------------------------------------------
# grids
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid2D:
    """Cell-centred uniform grid on the square ``[-R, R]^2``."""

    R: float
    N: int

    def __post_init__(self):
        if not (isinstance(self.N, (int, np.integer)) and not isinstance(self.N, bool)):
            raise TypeError("N must be an integer")
        if self.N < 16 or self.N % 2:
            raise ValueError(f"N must be even and >= 16, got {self.N}")
        if not (math.isfinite(self.R) and self.R > 0):
            raise ValueError(f"R must be positive and finite, got {self.R}")
        object.__setattr__(self, "R", float(self.R))
        object.__setattr__(self, "N", int(self.N))

    @property
    def h(self) -> float:
        return 2.0 * self.R / self.N

    @property
    def cell_area(self) -> float:
        return self.h * self.h

    @property
    def dk(self) -> float:
        """Wavenumber spacing ``2 pi / (2R)``."""
        return math.pi / self.R

    @property
    def k_max(self) -> float:
        """Nyquist wavenumber."""
        return math.pi / self.h

    @cached_property
    def x(self) -> np.ndarray:
        x = -self.R + (np.arange(self.N) + 0.5) * self.h
        x.setflags(write=False)
        return x

    @cached_property
    def k(self) -> np.ndarray:
        k = 2.0 * np.pi * np.fft.fftfreq(self.N, d=self.h)
        k.setflags(write=False)
        return k

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Nodes as ``(X, Y)`` with ``X[i, j] = x[j]`` and ``Y[i, j] = x[i]``."""
        Y, X = np.meshgrid(self.x, self.x, indexing="ij")
        X.setflags(write=False)
        Y.setflags(write=False)
        return X, Y

    @cached_property
    def kmesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Wavenumbers ``(KX, KY)`` aligned with :attr:`mesh`."""
        KY, KX = np.meshgrid(self.k, self.k, indexing="ij")
        KX.setflags(write=False)
        KY.setflags(write=False)
        return KX, KY

    @cached_property
    def r2(self) -> np.ndarray:
        X, Y = self.mesh
        r2 = X * X + Y * Y
        r2.setflags(write=False)
        return r2

    @cached_property
    def k2(self) -> np.ndarray:
        KX, KY = self.kmesh
        k2 = KX * KX + KY * KY
        k2.setflags(write=False)
        return k2

    def japanese(self) -> np.ndarray:
        """The bracket ``<xi> = (1 + |xi|^2)^{1/2}`` on the nodes."""
        return np.sqrt(1.0 + self.r2)

    def boundary_band(self, width_cells: int = 4) -> np.ndarray:
        """Boolean mask of the outer band of ``width_cells`` cells."""
        idx = np.arange(self.N)
        edge = (idx < width_cells) | (idx >= self.N - width_cells)
        return edge[:, None] | edge[None, :]

    def scaled(self, factor: float) -> "Grid2D":
        """Grid with the same node count and half-width ``factor * R``."""
        return Grid2D(self.R * factor, self.N)


def make_grid(R: float, N: int) -> Grid2D:
    """Validated constructor for :class:`Grid2D`."""
    return Grid2D(R, N)


# --------------------------------------------------------------------------
# fields
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Field2D:
    """Immutable scalar or vector field sampled on a :class:`Grid2D`.

    ``values`` has shape ``(N, N)`` for scalars and ``(C, N, N)`` with
    ``C`` in ``{2, 3}`` for vectors (two in-plane components, optionally a
    third z-component).
    """

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, copy=True)
        if not (np.issubdtype(v.dtype, np.floating) or np.issubdtype(v.dtype, np.complexfloating)):
            v = v.astype(float)
        N = self.grid.N
        if v.shape == (N, N):
            pass
        elif v.ndim == 3 and v.shape[1:] == (N, N) and v.shape[0] in (2, 3):
            pass
        else:
            raise ValueError(f"field shape {v.shape} incompatible with N={N}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite samples")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def components(self) -> int:
        return 1 if self.values.ndim == 2 else self.values.shape[0]

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    def with_values(self, values) -> "Field2D":
        return Field2D(self.grid, values)

    def integral(self) -> complex | float:
        """Midpoint-rule integral (component-wise for vectors)."""
        return integrate(self.values, self.grid)

    def __add__(self, other: "Field2D") -> "Field2D":
        _same_grid(self, other)
        return Field2D(self.grid, self.values + other.values)

    def __sub__(self, other: "Field2D") -> "Field2D":
        _same_grid(self, other)
        return Field2D(self.grid, self.values - other.values)

    def __mul__(self, c) -> "Field2D":
        return Field2D(self.grid, self.values * c)

    __rmul__ = __mul__

    def __neg__(self) -> "Field2D":
        return Field2D(self.grid, -self.values)


def _same_grid(a: Field2D, b: Field2D) -> None:
    if a.grid != b.grid:
        raise ValueError("fields live on different grids")
    if a.components != b.components:
        raise ValueError("component counts differ")


def integrate(values: np.ndarray, grid: Grid2D):
    """Midpoint-rule integral over the last two axes."""
    return np.sum(values, axis=(-2, -1)) * grid.cell_area


# --------------------------------------------------------------------------
# weighted norms
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightSpec:
    """Weight exponent ``m`` and integrability exponent ``p`` of ``L^p(m)``."""

    m: float = 3.0
    p: float = 2.0

    def __post_init__(self):
        if not self.m >= 0:
            raise ValueError("weight exponent m must be >= 0")
        if not (self.p >= 1 or self.p == math.inf):
            raise ValueError("p must lie in [1, inf]")


def norm_array(values: np.ndarray, grid: Grid2D, m: float = 3.0, p: float = 2.0,
               vector: bool = False) -> np.ndarray:
    """``L^p(m)`` norms over the spatial axes of a batched array.

    With ``vector=True`` axis ``-3`` is a component axis and the pointwise
    magnitude is the Euclidean norm over it.
    """
    a = np.abs(values)
    if vector:
        a = np.sqrt(np.sum(a * a, axis=-3))
    if m:
        a = a * grid.japanese() ** m
    if p == math.inf:
        return np.max(a, axis=(-2, -1))
    if p == 2:
        return np.sqrt(np.sum(a * a, axis=(-2, -1)) * grid.cell_area)
    if p == 1:
        return np.sum(a, axis=(-2, -1)) * grid.cell_area
    return (np.sum(a**p, axis=(-2, -1)) * grid.cell_area) ** (1.0 / p)


def weighted_norm(f: Field2D, w: WeightSpec = WeightSpec()) -> float:
    """``||f||_{L^p(m)}`` by midpoint quadrature of ``<xi>^{pm} |f|^p``.

    ``p = inf`` returns the weighted maximum over the nodes.  Vector fields
    use the Euclidean magnitude.
    """
    return float(norm_array(f.values, f.grid, w.m, w.p, vector=f.components > 1))


def a_of_tau(tau: float) -> float:
    """``a(tau) = 1 - exp(-tau)``; the effective heat time of the rescaled flow."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    return -math.expm1(-tau)


# --------------------------------------------------------------------------
# mean-zero projection
# --------------------------------------------------------------------------

_BUMP_RADIUS = 2.0


def _bump(grid: Grid2D) -> np.ndarray:
    """Smooth compactly supported bump ``exp(-1/(1-(r/r0)^2))`` of unit integral."""
    s = grid.r2 / _BUMP_RADIUS**2
    b = np.zeros_like(s)
    inside = s < 1.0
    b[inside] = np.exp(-1.0 / (1.0 - s[inside]))
    total = integrate(b, grid)
    if total <= 0:
        raise ValueError("grid too coarse to resolve the projection bump")
    return b / total


def zero_mean_project(f: Field2D) -> Field2D:
    """Remove the integral of ``f`` using a fixed compactly supported bump.

    The bump (radius 2, unit quadrature integral) is independent of ``f``, so
    the map is a linear idempotent projection that leaves tails untouched.
    """
    if f.components != 1:
        raise ValueError("zero_mean_project expects a scalar field")
    return Field2D(f.grid, project_mean_zero(f.values, f.grid))


def project_mean_zero(values: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Array form of :func:`zero_mean_project` (batched over leading axes)."""
    b = _bump(grid)
    mass = integrate(values, grid)
    return values - np.asarray(mass)[..., None, None] * b


# --------------------------------------------------------------------------
# z-frequency slices
# --------------------------------------------------------------------------


def zeta_grid(zeta_max: float, dzeta: float) -> np.ndarray:
    """Symmetric frequency grid ``k * dzeta`` for ``|k dzeta| <= zeta_max``."""
    if dzeta <= 0 or zeta_max < 0:
        raise ValueError("need dzeta > 0 and zeta_max >= 0")
    n = int(math.floor(zeta_max / dzeta + 1e-9))
    return dzeta * np.arange(-n, n + 1, dtype=float)


def z_nodes(zetas: np.ndarray, dzeta: float) -> np.ndarray:
    """Physical z-samples dual to a symmetric frequency grid (one period)."""
    K = len(zetas)
    dz = 2.0 * np.pi / (K * dzeta)
    return dz * (np.arange(K) - (K - 1) / 2.0)


def _z_matrix(zetas: np.ndarray, dzeta: float) -> np.ndarray:
    z = z_nodes(zetas, dzeta)
    return np.exp(1j * np.outer(z, zetas)) * (dzeta / math.sqrt(2.0 * math.pi))


def to_z_space(slices: np.ndarray, zetas: np.ndarray, dzeta: float) -> np.ndarray:
    """Samples ``f(z_j) = (dzeta/sqrt(2 pi)) sum_k fhat(zeta_k) e^{i z_j zeta_k}``.

    Axis 0 of ``slices`` is the frequency axis; the result has the same shape
    with axis 0 indexing the z-nodes.  This is the periodic discretization of
    the unitary inverse Fourier transform in z.
    """
    A = _z_matrix(zetas, dzeta)
    return np.tensordot(A, slices, axes=(1, 0))


def from_z_space(samples: np.ndarray, zetas: np.ndarray, dzeta: float) -> np.ndarray:
    """Inverse of :func:`to_z_space` (exact: the matrix is unitary up to scale)."""
    K = len(zetas)
    A = _z_matrix(zetas, dzeta)
    dz = 2.0 * np.pi / (K * dzeta)
    # A^H A = (dzeta^2 / 2pi) K I = (dzeta / dz) I
    return np.tensordot(A.conj().T, samples, axes=(1, 0)) * (dz / dzeta)


def complete_slices(half: np.ndarray, K: int) -> np.ndarray:
    """Rebuild all ``K`` slices from those with ``zeta >= 0`` by conjugation."""
    n0 = (K - 1) // 2
    if half.shape[0] != n0 + 1:
        raise ValueError("expected the nonnegative half of the slices")
    neg = np.conj(half[1:][::-1])
    return np.concatenate([neg, half], axis=0)


@dataclass(frozen=True)
class ZSliceField:
    """z-Fourier slices ``fhat(., zeta_k)`` of a 3D field on a symmetric grid.

    ``slices`` has shape ``(K, N, N)`` (scalar) or ``(K, C, N, N)``.  When
    ``real`` is true the slices satisfy ``fhat(-zeta) = conj(fhat(zeta))``,
    i.e. the physical field is real.
    """

    grid: Grid2D
    zetas: np.ndarray
    slices: np.ndarray
    real: bool = True

    def __post_init__(self):
        z = np.array(self.zetas, dtype=float)
        s = np.array(self.slices, dtype=complex)
        if z.ndim != 1 or len(z) % 2 != 1:
            raise ValueError("zeta grid must be one-dimensional with odd length")
        if not np.allclose(z, -z[::-1], atol=1e-12):
            raise ValueError("zeta grid must be symmetric about 0")
        if len(z) > 1:
            d = np.diff(z)
            if not np.allclose(d, d[0], rtol=1e-9):
                raise ValueError("zeta grid must be uniform")
        if s.shape[0] != len(z) or s.shape[-2:] != (self.grid.N, self.grid.N) or s.ndim not in (3, 4):
            raise ValueError("slices must have shape (K, [C,] N, N)")
        if not np.all(np.isfinite(s)):
            raise ValueError("slices contain non-finite samples")
        if self.real:
            scale = max(float(np.max(np.abs(s))), 1e-300)
            if np.max(np.abs(s - np.conj(s[::-1]))) > 1e-9 * scale:
                raise ValueError("reality flag set but slices are not conjugate-symmetric")
        z.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "zetas", z)
        object.__setattr__(self, "slices", s)

    @property
    def dzeta(self) -> float:
        return float(self.zetas[1] - self.zetas[0]) if len(self.zetas) > 1 else self._dzeta_single

    _dzeta_single: float = field(default=1.0, repr=False, compare=False)

    @property
    def components(self) -> int:
        return 1 if self.slices.ndim == 3 else self.slices.shape[1]

    def slice(self, k: int) -> Field2D:
        return Field2D(self.grid, self.slices[k])

    def to_z(self) -> np.ndarray:
        return to_z_space(self.slices, self.zetas, self.dzeta)

    @classmethod
    def single(cls, grid: Grid2D, values: np.ndarray, dzeta: float = 1.0, real: bool = True):
        """One slice at ``zeta = 0`` with an explicit frequency cell width."""
        return cls(grid, np.zeros(1), np.asarray(values)[None], real, dzeta)


def bz_norm_array(slices: np.ndarray, grid: Grid2D, dzeta: float, m: float = 3.0,
                  p: float = 2.0, vector: bool = False) -> float:
    """``dzeta * sum_k ||slice_k||_{L^p(m)}`` for a ``(K, ...)`` slice array."""
    return float(dzeta * np.sum(norm_array(slices, grid, m, p, vector=vector)))


def bz_norm(g: ZSliceField, w: WeightSpec = WeightSpec()) -> float:
    """Discrete ``B_z L^p(m)`` norm: ``dzeta * sum_k ||g(., zeta_k)||``."""
    return bz_norm_array(g.slices, g.grid, g.dzeta, w.m, w.p, vector=g.components > 1)


# --------------------------------------------------------------------------
# Morrey norm of sampled measures
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LineDensity:
    """Uniform density ``alpha`` on the straight line ``point + s * direction``."""

    alpha: float
    point: tuple[float, float, float] = (0.0, 0.0, 0.0)
    direction: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def distance(self, y: np.ndarray) -> np.ndarray:
        p = np.asarray(self.point, dtype=float)
        d = np.asarray(self.direction, dtype=float)
        d = d / np.linalg.norm(d)
        v = y - p
        along = v @ d
        return np.sqrt(np.maximum(np.sum(v * v, axis=-1) - along**2, 0.0))

    def scaled(self, lam: float) -> "LineDensity":
        return LineDensity(self.alpha, tuple(lam * np.asarray(self.point)), self.direction)


@dataclass(frozen=True)
class MeasureSample:
    """Finite atomic measure on R^3 plus optional line densities."""

    positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lines: tuple[LineDensity, ...] = ()

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1, 3)
        w = np.array(self.weights, dtype=float).reshape(-1)
        if pos.shape[0] != w.shape[0]:
            raise ValueError("positions and weights differ in length")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(w))):
            raise ValueError("atoms must be finite")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "lines", tuple(self.lines))

    @property
    def total_atom_mass(self) -> float:
        return float(np.sum(self.weights))


@dataclass(frozen=True)
class MorreyResult:
    """Outcome of the dyadic Morrey scan (a lower bound for the true sup)."""

    value: float
    divergent: bool
    radius: float
    center: tuple[float, float, float]
    profile: tuple[float, ...]  # max over centres of r^{-1}|mu(B)| per radius


def morrey_norm(mu: MeasureSample, h: float = 1.0 / 64, J: int = 12,
                extra_centers: Sequence[Sequence[float]] | None = None) -> MorreyResult:
    """Dyadic scan of ``sup_{y, r} r^{-1} |mu(B(y, r))|``.

    Radii are ``2^j h`` for ``j = 0..J``; candidate centres are the atoms, the
    anchor point of every line, and any ``extra_centers``.  The result is a
    lower bound of the true supremum.  The scan is flagged divergent when the
    maximum sits at the smallest radius and roughly doubles under each of the
    last two halvings, the signature of a point mass.
    """
    if h <= 0 or J < 2:
        raise ValueError("need h > 0 and J >= 2")
    radii = h * 2.0 ** np.arange(J + 1)
    centers = [mu.positions]
    centers += [np.asarray(l.point, dtype=float)[None] for l in mu.lines]
    if extra_centers is not None:
        centers.append(np.asarray(extra_centers, dtype=float).reshape(-1, 3))
    C = np.ascontiguousarray(np.concatenate(centers, axis=0))
    if C.shape[0] == 0:
        return MorreyResult(0.0, False, float(radii[0]), (0.0, 0.0, 0.0), tuple(np.zeros(J + 1)))
    masses = np.zeros((C.shape[0], radii.size))
    if mu.weights.size:
        masses += kernels.ball_masses(C, np.ascontiguousarray(radii),
                                      np.ascontiguousarray(mu.positions),
                                      np.ascontiguousarray(mu.weights))
    for line in mu.lines:
        d = line.distance(C)
        masses += 2.0 * line.alpha * np.sqrt(np.maximum(radii[None, :] ** 2 - d[:, None] ** 2, 0.0))
    ratio = np.abs(masses) / radii[None, :]
    per_radius = ratio.max(axis=0)
    c, j = np.unravel_index(np.argmax(ratio), ratio.shape)
    divergent = bool(
        j == 0 and per_radius[0] > 0
        and per_radius[0] >= 1.8 * per_radius[1]
        and per_radius[1] >= 1.8 * per_radius[2]
    )
    return MorreyResult(
        value=math.inf if divergent else float(ratio[c, j]),
        divergent=divergent,
        radius=float(radii[j]),
        center=tuple(float(v) for v in C[c]),
        profile=tuple(float(v) for v in per_radius),
    )


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

_FIELD_MAGIC = b"PKSF"
_FIELD_VERSION = 1
_FIELD_HEADER = struct.Struct("<4sIIIdI4x")  # 32 bytes


def save_field(f: Field2D, path: str | Path) -> None:
    """Binary dump: 32-byte header then little-endian float64 samples.

    Header: magic ``PKSF``, format version, N, component count, R, flags
    (bit 0 = complex, samples stored as interleaved real/imaginary pairs).
    """
    flags = 1 if f.is_complex else 0
    header = _FIELD_HEADER.pack(_FIELD_MAGIC, _FIELD_VERSION, f.grid.N, f.components, f.grid.R, flags)
    data = f.values.astype("<c16" if flags else "<f8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes(order="C"))


def load_field(path: str | Path) -> Field2D:
    """Read a field written by :func:`save_field`."""
    raw = Path(path).read_bytes()
    if len(raw) < _FIELD_HEADER.size:
        raise ValueError("truncated field file")
    magic, version, N, comps, R, flags = _FIELD_HEADER.unpack_from(raw)
    if magic != _FIELD_MAGIC or version != _FIELD_VERSION:
        raise ValueError("not a field file of a supported version")
    dtype = np.dtype("<c16" if flags & 1 else "<f8")
    shape = (N, N) if comps == 1 else (comps, N, N)
    data = np.frombuffer(raw, dtype=dtype, offset=_FIELD_HEADER.size)
    if data.size != int(np.prod(shape)):
        raise ValueError("field file size does not match its header")
    return Field2D(Grid2D(R, N), data.reshape(shape).astype(complex if flags & 1 else float))


def export_field_csv(f: Field2D, path: str | Path) -> None:
    """CSV rows ``xi1, xi2, value[s]`` with 17 significant digits."""
    X, Y = f.grid.mesh
    vals = f.values if f.components > 1 else f.values[None]
    cols = []
    names = ["xi1", "xi2"]
    for c in range(vals.shape[0]):
        if f.is_complex:
            cols += [vals[c].real.ravel(), vals[c].imag.ravel()]
            names += [f"re{c}", f"im{c}"]
        else:
            cols.append(vals[c].ravel())
            names.append(f"v{c}")
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(names)
        for row in zip(X.ravel(), Y.ravel(), *cols):
            wr.writerow([format(float(v), ".17g") for v in row])
