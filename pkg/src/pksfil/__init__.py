"""Numerical laboratory for self-similar aggregation profiles and near-filament solutions.

Modules
-------
grid         grids, weighted norms, z-Fourier slices, Morrey norms, field I/O
profile      radial self-similar profiles by shooting on the central value
operators    Fokker-Planck, linearized transport and z-coupling operators
propagators  linear flows, splitting integrators, decay and smoothing fits
solver       planar nonlinear solver, self-similar coordinates, filament construction
estimates    measured-constant sweeps used by the command line
cli          ``pksfil`` command-line drivers
"""
__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402

__all__ = ["__version__", "BACKEND"]
