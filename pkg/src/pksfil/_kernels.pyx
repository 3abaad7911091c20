# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops.

Both kernels are inherently sequential or branchy element loops that do not
vectorize well in numpy; everything else in the package is FFT/BLAS bound.
The pure-Python twins live in ``_kernels_py`` and must stay bit-compatible
up to floating-point reassociation.
"""
import numpy as np
from libc.math cimport exp, fabs


def radial_march(const double[::1] r, double g0):
    """Implicit trapezoid march of the radial profile recurrence.

    Returns ``(g, m, phi)`` where ``m`` is the enclosed-mass integral
    ``int_0^r s g(s) ds`` and ``phi`` the potential increment ``c(r) - c(0)``.
    """
    cdef Py_ssize_t M = r.shape[0]
    cdef Py_ssize_t i, it
    g = np.empty(M)
    m = np.empty(M)
    phi = np.empty(M)
    cdef double[::1] gv = g
    cdef double[::1] mv = m
    cdef double[::1] pv = phi
    cdef double h, A, B, C0, D, gi, e, F, step, q_prev = 0.0, q
    gv[0] = g0
    mv[0] = 0.0
    pv[0] = 0.0
    for i in range(1, M):
        h = r[i] - r[i - 1]
        A = mv[i - 1] + 0.5 * h * r[i - 1] * gv[i - 1]
        B = 0.5 * h * r[i]
        C0 = pv[i - 1] - 0.5 * h * q_prev - 0.5 * h * A / r[i] - 0.25 * r[i] * r[i]
        D = 0.25 * h * h
        gi = gv[i - 1]
        for it in range(60):
            e = g0 * exp(C0 - D * gi)
            F = gi - e
            step = F / (1.0 + D * e)
            gi -= step
            if fabs(step) <= 1e-16 * fabs(gi):
                break
        mv[i] = A + B * gi
        q = mv[i] / r[i]
        pv[i] = pv[i - 1] - 0.5 * h * (q_prev + q)
        gv[i] = gi
        q_prev = q
    return g, m, phi


def ball_masses(const double[:, ::1] centers, const double[::1] radii,
                const double[:, ::1] pos, const double[::1] w):
    """Mass of atoms inside closed balls, shape ``(n_centers, n_radii)``."""
    cdef Py_ssize_t C = centers.shape[0], J = radii.shape[0], n = pos.shape[0]
    cdef Py_ssize_t c, a, j
    cdef double d2, dx, dy, dz
    out = np.zeros((C, J))
    cdef double[:, ::1] ov = out
    r2 = np.empty(J)
    cdef double[::1] r2v = r2
    for j in range(J):
        r2v[j] = radii[j] * radii[j]
    for c in range(C):
        for a in range(n):
            dx = pos[a, 0] - centers[c, 0]
            dy = pos[a, 1] - centers[c, 1]
            dz = pos[a, 2] - centers[c, 2]
            d2 = dx * dx + dy * dy + dz * dz
            for j in range(J):
                if d2 <= r2v[j]:
                    ov[c, j] += w[a]
    return out
