"""Spectral calculus on the truncated plane.

Derivatives use the periodic Fourier symbols of the grid.  Free-space
inverses of ``-Delta`` and ``lambda^2 - Delta`` are computed on a doubled,
zero-padded workspace with *truncated* kernels: the Green's function is cut
off at radius ``L = 2R`` (the diameter of the computational square) and its
exact Fourier transform is used as the multiplier.  Because no two points of
the original square are farther than ``L`` apart, the cut-off is invisible to
the result, which is therefore the free-space convolution to spectral
accuracy with no special treatment of the kernel singularity.

Scaled Fourier samples (needed for the exact rescaled heat flow and for
dilations between grids) are computed with the chirp z-transform.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
import scipy.fft as sfft
from scipy import special
from scipy.signal import CZT

from .grid import Grid2D

__all__ = [
    "fft2",
    "ifft2",
    "grad",
    "div",
    "laplacian",
    "curl",
    "dealias",
    "dealias_mask",
    "spectral_tail",
    "FreeSpace",
    "free_space",
    "inverse_laplacian",
    "biot_savart",
    "screened",
    "grad_screened",
    "continuous_ft",
    "inverse_ft",
    "continuous_ft_half",
    "inverse_ft_half",
    "dilate",
]


def fft2(a):
    return sfft.fft2(a, axes=(-2, -1))


def ifft2(a):
    return sfft.ifft2(a, axes=(-2, -1))


def _like(out: np.ndarray, ref: np.ndarray) -> np.ndarray:
    return out.real.copy() if not np.iscomplexobj(ref) else out


# --------------------------------------------------------------------------
# periodic derivatives
# --------------------------------------------------------------------------


def _fwd(f: np.ndarray) -> np.ndarray:
    """Forward transform, using the half spectrum for real input."""
    if np.iscomplexobj(f):
        return sfft.fft2(f, axes=(-2, -1))
    return sfft.rfft2(f, axes=(-2, -1))


def _inv(fh: np.ndarray, real: bool, N: int) -> np.ndarray:
    if real:
        return sfft.irfft2(fh, s=(N, N), axes=(-2, -1))
    return sfft.ifft2(fh, axes=(-2, -1))


@lru_cache(maxsize=32)
def _wavenumbers(grid: Grid2D, real: bool):
    KX, KY = grid.kmesh
    if real:
        n = grid.N // 2 + 1
        KX, KY = KX[:, :n].copy(), KY[:, :n].copy()
        # the Nyquist column is its own mirror image; a derivative there must
        # vanish for the result to stay real
        KX[:, -1] = 0.0
    KY = KY.copy()
    KY[grid.N // 2, :] = 0.0
    KX = KX.copy()
    KX[:, grid.N // 2 if not real else -1] = 0.0
    KX.setflags(write=False)
    KY.setflags(write=False)
    return KX, KY


def grad(f: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Spectral gradient; a new component axis is inserted at ``-3``."""
    real = not np.iscomplexobj(f)
    KX, KY = _wavenumbers(grid, real)
    fh = _fwd(f)
    return _inv(np.stack([1j * KX * fh, 1j * KY * fh], axis=-3), real, grid.N)


def div(F: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Spectral divergence of the first two components of axis ``-3``."""
    real = not np.iscomplexobj(F)
    KX, KY = _wavenumbers(grid, real)
    Fh = _fwd(F[..., :2, :, :])
    return _inv(1j * KX * Fh[..., 0, :, :] + 1j * KY * Fh[..., 1, :, :], real, grid.N)


def curl(F: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Scalar curl ``d1 F2 - d2 F1``."""
    real = not np.iscomplexobj(F)
    KX, KY = _wavenumbers(grid, real)
    Fh = _fwd(F[..., :2, :, :])
    return _inv(1j * KX * Fh[..., 1, :, :] - 1j * KY * Fh[..., 0, :, :], real, grid.N)


def laplacian(f: np.ndarray, grid: Grid2D) -> np.ndarray:
    real = not np.iscomplexobj(f)
    k2 = grid.k2[:, : grid.N // 2 + 1] if real else grid.k2
    return _inv(-k2 * _fwd(f), real, grid.N)


@lru_cache(maxsize=32)
def _dealias_mask(grid: Grid2D, real: bool = False) -> np.ndarray:
    kc = (2.0 / 3.0) * grid.k_max
    KX, KY = grid.kmesh
    m = (np.abs(KX) <= kc) & (np.abs(KY) <= kc)
    if real:
        m = m[:, : grid.N // 2 + 1].copy()
    m.setflags(write=False)
    return m


def dealias_mask(grid: Grid2D) -> np.ndarray:
    """Two-thirds rule mask in wavenumber space."""
    return _dealias_mask(grid)


def dealias(f: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Zero the upper third of the spectrum (applied after pointwise products)."""
    real = not np.iscomplexobj(f)
    return _inv(_fwd(f) * _dealias_mask(grid, real), real, grid.N)


def spectral_tail(f: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Fraction of spectral energy in the band ``k_max/2 < |k|_inf <= 2k_max/3``.

    A resolution monitor: smooth resolved fields have a negligible tail.
    """
    KX, KY = grid.kmesh
    kinf = np.maximum(np.abs(KX), np.abs(KY))
    band = (kinf > 0.5 * grid.k_max) & (kinf <= (2.0 / 3.0) * grid.k_max)
    e = np.abs(fft2(f)) ** 2
    total = np.sum(e, axis=(-2, -1))
    return np.sum(e * band, axis=(-2, -1)) / np.where(total > 0, total, 1.0)


# --------------------------------------------------------------------------
# free-space kernels on the doubled workspace
# --------------------------------------------------------------------------


class FreeSpace:
    """Truncated-kernel free-space solvers attached to one grid.

    The workspace has ``2N`` points per side (period ``4R``); data occupy the
    leading ``N x N`` block.  Kernels are cut off at ``L = 2R``, so the
    convolution is exact on the original square.  Real input is handled with
    half-spectrum transforms.
    """

    def __init__(self, grid: Grid2D):
        self.grid = grid
        n2 = 2 * grid.N
        self.n2 = n2
        self.L = 2.0 * grid.R
        k = 2.0 * np.pi * np.fft.fftfreq(n2, d=grid.h)
        KY, KX = np.meshgrid(k, k, indexing="ij")
        # the Nyquist lines carry no derivative (keeps real data real)
        KX[:, n2 // 2] = 0.0
        KY[n2 // 2, :] = 0.0
        self.KX, self.KY = KX, KY
        kabs = np.sqrt(k[None, :] ** 2 + k[:, None] ** 2)
        self.kabs = kabs
        self._J0 = special.j0(kabs * self.L)
        self._J1 = special.j1(kabs * self.L)
        with np.errstate(divide="ignore", invalid="ignore"):
            lap = (1.0 - self._J0) / kabs**2
        lap[0, 0] = self.L**2 / 4.0
        self.lap_symbol = lap
        self._half = n2 // 2 + 1
        self._screened_cache: dict[float, np.ndarray] = {}

    # -- transforms ----------------------------------------------------------

    def forward(self, f: np.ndarray) -> np.ndarray:
        """Zero-pad the last two axes to ``2N`` and transform (half spectrum if real)."""
        if np.iscomplexobj(f):
            return sfft.fft2(f, s=(self.n2, self.n2), axes=(-2, -1))
        return sfft.rfft2(f, s=(self.n2, self.n2), axes=(-2, -1))

    def backward(self, fh: np.ndarray, real: bool) -> np.ndarray:
        N = self.grid.N
        if real:
            out = sfft.irfft2(fh, s=(self.n2, self.n2), axes=(-2, -1))
        else:
            out = sfft.ifft2(fh, axes=(-2, -1))
        return np.ascontiguousarray(out[..., :N, :N])

    def view(self, a: np.ndarray, real: bool) -> np.ndarray:
        """Restrict a full-spectrum array to the layout used for real data."""
        return a[..., : self._half] if real else a

    # -- symbols -----------------------------------------------------------

    def screened_symbol(self, lam: float) -> np.ndarray:
        """Multiplier of the kernel ``K0(lam r)/(2 pi)`` truncated at ``L``."""
        lam = float(lam)
        if not lam > 0:
            raise ValueError("screening parameter must be positive")
        cached = self._screened_cache.get(lam)
        if cached is not None:
            return cached
        L = self.L
        k = self.kabs
        lL = lam * L
        # For large lam L the truncation is exponentially small and the Bessel
        # functions underflow; use the untruncated symbol there.
        if lL > 600.0:
            sym = 1.0 / (k * k + lam * lam)
        else:
            K0 = special.k0(lL)
            K1 = special.k1(lL)
            sym = (1.0 + L * (k * self._J1 * K0 - lam * self._J0 * K1)) / (k * k + lam * lam)
        if len(self._screened_cache) > 256:
            self._screened_cache.clear()
        self._screened_cache[lam] = sym
        return sym

    def symbols(self, lam, ndim: int, real: bool, difference: bool = False) -> np.ndarray:
        """Screened multipliers for scalar ``lam`` or one ``lam`` per axis-0 entry.

        ``lam = 0`` selects the inverse Laplacian symbol.

        With ``difference`` the result is ``lap_symbol - screened_symbol``,
        the multiplier of ``(-Delta)^{-1} - (lam^2 - Delta)^{-1}``.
        """
        lam = np.asarray(lam, dtype=float)

        def one(l):
            # lam = 0 is the unscreened (logarithmic) kernel
            if l == 0:
                return self.view(np.zeros_like(self.lap_symbol) if difference else self.lap_symbol, real)
            s = self.screened_symbol(float(l))
            s = self.lap_symbol - s if difference else s
            return self.view(s, real)

        if lam.ndim == 0:
            return one(lam)
        sym = np.stack([one(l) for l in lam])
        return sym.reshape(sym.shape[:1] + (1,) * (ndim - 3) + sym.shape[1:])

    # -- operators ---------------------------------------------------------

    def inverse_laplacian(self, f: np.ndarray) -> np.ndarray:
        """``(-Delta)^{-1} f`` with the logarithmic kernel (gauge fixed by ``L``)."""
        real = not np.iscomplexobj(f)
        return self.backward(self.forward(f) * self.view(self.lap_symbol, real), real)

    def gradient_of(self, fh: np.ndarray, real: bool) -> np.ndarray:
        """Cropped gradient of a padded spectrum (component axis at ``-3``)."""
        KX, KY = self.view(self.KX, real), self.view(self.KY, real)
        return self.backward(np.stack([1j * KX * fh, 1j * KY * fh], axis=-3), real)

    def grad_inverse_laplacian(self, f: np.ndarray) -> np.ndarray:
        """``grad (-Delta)^{-1} f``; component axis inserted at ``-3``."""
        real = not np.iscomplexobj(f)
        return self.gradient_of(self.forward(f) * self.view(self.lap_symbol, real), real)

    def screened(self, f: np.ndarray, lam) -> np.ndarray:
        """``(lam^2 - Delta)^{-1} f``; ``lam`` may vary along axis 0 of ``f``."""
        real = not np.iscomplexobj(f)
        return self.backward(self.forward(f) * self.symbols(lam, f.ndim, real), real)

    def grad_screened(self, f: np.ndarray, lam) -> np.ndarray:
        real = not np.iscomplexobj(f)
        return self.gradient_of(self.forward(f) * self.symbols(lam, f.ndim, real), real)


@lru_cache(maxsize=16)
def free_space(grid: Grid2D) -> FreeSpace:
    """Shared :class:`FreeSpace` instance per grid."""
    return FreeSpace(grid)


def inverse_laplacian(f: np.ndarray, grid: Grid2D) -> np.ndarray:
    return free_space(grid).inverse_laplacian(f)


def biot_savart(f: np.ndarray, grid: Grid2D) -> np.ndarray:
    """``grad (-Delta)^{-1} f`` = convolution with ``-(1/2pi) x/|x|^2``."""
    return free_space(grid).grad_inverse_laplacian(f)


def screened(f: np.ndarray, grid: Grid2D, lam) -> np.ndarray:
    return free_space(grid).screened(f, lam)


def grad_screened(f: np.ndarray, grid: Grid2D, lam) -> np.ndarray:
    return free_space(grid).grad_screened(f, lam)


# --------------------------------------------------------------------------
# continuous Fourier samples at scaled wavenumbers
# --------------------------------------------------------------------------


@lru_cache(maxsize=64)
def _czt(n: int, m: int, theta: float, phi0: float) -> CZT:
    # points z_q = exp(i (phi0 + q theta)); CZT evaluates sum_n x_n z_q^{-n}
    return CZT(n, m, w=np.exp(-1j * theta), a=np.exp(1j * phi0))


def _axis_ft(f: np.ndarray, grid: Grid2D, dk: float, m: int, axis: int) -> np.ndarray:
    """1D samples ``h sum_n f_n e^{-i kappa_q x_n}`` for ``kappa_q = dk (q - m/2)``.

    Output is in FFT order along ``axis``; wavenumbers beyond the source
    Nyquist limit are zeroed (they are aliases, not data).
    """
    h = grid.h
    q0 = -(m // 2)
    kappa = dk * (np.arange(m) + q0)
    t = _czt(grid.N, m, dk * h, dk * h * q0)
    out = t(np.moveaxis(f, axis, -1), axis=-1)
    phase = h * np.exp(-1j * kappa * grid.x[0])
    phase = np.where(np.abs(kappa) <= grid.k_max * (1 + 1e-12), phase, 0.0)
    out = out * phase
    out = np.fft.ifftshift(out, axes=-1)
    return np.moveaxis(out, -1, axis)


def continuous_ft(f: np.ndarray, grid: Grid2D, dk: float | None = None, m: int | None = None) -> np.ndarray:
    """Samples of ``int f(x) e^{-i k.x} dx`` on the lattice ``dk * Z^2``.

    With the defaults this is the grid's own wavenumber lattice, returned in
    FFT order; other ``dk`` give the transform at rescaled wavenumbers.
    """
    if dk is None:
        dk = grid.dk
    if m is None:
        m = grid.N
    out = _axis_ft(f, grid, dk, m, -1)
    return _axis_ft(out, grid, dk, m, -2)


def continuous_ft_half(f: np.ndarray, grid: Grid2D, dk: float | None = None) -> np.ndarray:
    """Half-spectrum version of :func:`continuous_ft` for real ``f``.

    The last axis holds the nonnegative wavenumbers (``rfft`` layout, with
    the Nyquist column stored at ``-N/2 dk`` as in the full layout).
    """
    if dk is None:
        dk = grid.dk
    h = grid.N // 2
    hgrid = grid.h
    kappa = dk * np.arange(h + 1)
    t = _czt(grid.N, h + 1, dk * hgrid, 0.0)
    out = t(f, axis=-1)
    phase = hgrid * np.exp(-1j * kappa * grid.x[0])
    phase = np.where(kappa <= grid.k_max * (1 + 1e-12), phase, 0.0)
    out = out * phase
    # rows are real, so the value at -N/2 dk is the conjugate of that at +N/2 dk
    out[..., -1] = np.conj(out[..., -1])
    return _axis_ft(out, grid, dk, grid.N, -2)


def inverse_ft_half(F: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Inverse of :func:`continuous_ft_half` (real result)."""
    n = grid.N // 2 + 1
    KX, KY = grid.kmesh
    x0 = grid.x[0]
    ph = np.exp(1j * (KX[:, :n] + KY[:, :n]) * x0)
    return sfft.irfft2(F * ph, s=(grid.N, grid.N), axes=(-2, -1)) / grid.cell_area


def inverse_ft(F: np.ndarray, grid: Grid2D, real: bool = False) -> np.ndarray:
    """Inverse of :func:`continuous_ft` on the grid's own lattice."""
    KX, KY = grid.kmesh
    x0 = grid.x[0]
    out = ifft2(F * np.exp(1j * (KX + KY) * x0)) / grid.cell_area
    return out.real.copy() if real else out


def dilate(f: np.ndarray, src: Grid2D, factor: float, dst: Grid2D | None = None,
           amplitude: float = 1.0, real: bool | None = None) -> np.ndarray:
    """Spectral resampling of ``amplitude * f(factor * y)`` onto ``dst`` nodes.

    Uses ``FT[f(c .)](k) = c^{-2} FT[f](k / c)``, so band-limited fields are
    transferred exactly up to truncation of their tails.
    """
    if dst is None:
        dst = src
    if real is None:
        real = not np.iscomplexobj(f)
    F = continuous_ft(f, src, dk=dst.dk / factor, m=dst.N)
    return inverse_ft(F * (amplitude / factor**2), dst, real=real)
