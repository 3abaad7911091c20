"""Kernel dispatch: compiled core when importable, pure Python otherwise.

Set ``PKSFIL_PURE_PYTHON=1`` to force the fallback (used by the benchmark
and the parity tests).
"""
from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
radial_march = _kernels_py.radial_march
ball_masses = _kernels_py.ball_masses

if os.environ.get("PKSFIL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # pragma: no cover - depends on the build
        pass
    else:
        BACKEND = "compiled"
        radial_march = _compiled.radial_march
        ball_masses = _compiled.ball_masses

__all__ = ["BACKEND", "radial_march", "ball_masses"]
