"""Pure-Python reference implementations of the compiled kernels."""
from __future__ import annotations

import math

import numpy as np


def radial_march(r, g0):
    """Implicit trapezoid march of the radial profile recurrence.

    Returns ``(g, m, phi)`` where ``m`` is the enclosed-mass integral
    ``int_0^r s g(s) ds`` and ``phi`` the potential increment ``c(r) - c(0)``.
    Each step solves ``g = g0 exp(C0 - D g)`` by Newton's method; the map is
    concave and increasing so the iteration cannot leave the positive axis.
    """
    r = np.ascontiguousarray(r, dtype=float)
    M = r.shape[0]
    g = np.empty(M)
    m = np.empty(M)
    phi = np.empty(M)
    g[0], m[0], phi[0] = g0, 0.0, 0.0
    q_prev = 0.0
    for i in range(1, M):
        ri = float(r[i])
        h = ri - float(r[i - 1])
        A = m[i - 1] + 0.5 * h * float(r[i - 1]) * g[i - 1]
        B = 0.5 * h * ri
        C0 = phi[i - 1] - 0.5 * h * q_prev - 0.5 * h * A / ri - 0.25 * ri * ri
        D = 0.25 * h * h
        gi = float(g[i - 1])
        for _ in range(60):
            e = g0 * math.exp(C0 - D * gi)
            step = (gi - e) / (1.0 + D * e)
            gi -= step
            if abs(step) <= 1e-16 * abs(gi):
                break
        m[i] = A + B * gi
        q = m[i] / ri
        phi[i] = phi[i - 1] - 0.5 * h * (q_prev + q)
        g[i] = gi
        q_prev = q
    return g, m, phi


def ball_masses(centers, radii, pos, w, chunk: int = 256):
    """Mass of atoms inside closed balls, shape ``(n_centers, n_radii)``."""
    centers = np.asarray(centers, dtype=float)
    radii = np.asarray(radii, dtype=float)
    pos = np.asarray(pos, dtype=float)
    w = np.asarray(w, dtype=float)
    out = np.zeros((centers.shape[0], radii.shape[0]))
    r2 = radii**2
    for s in range(0, centers.shape[0], chunk):
        d2 = ((centers[s:s + chunk, None, :] - pos[None, :, :]) ** 2).sum(-1)
        inside = d2[:, :, None] <= r2[None, None, :]
        out[s:s + chunk] = np.einsum("can,a->cn", inside, w)
    return out
