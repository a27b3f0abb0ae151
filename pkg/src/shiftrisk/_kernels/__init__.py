"""Backend dispatch for the numeric hot kernels.

The jitted backend is used when numba imports cleanly; setting the
environment variable ``SHIFTRISK_NO_NUMBA=1`` (any non-empty value other
than ``0``) forces the pure-NumPy fallback. ``BACKEND`` records the choice.

Exposed kernels:
  rbf_gram(x, y, gamma)               gaussian kernel gram matrix
  pinball_sum(u, alpha)               exact check-loss sum
  smoothed_pinball(u, alpha, h)       smoothed check loss and gradient
  pinball_coord_argmin(c, x, a, lam)  exact 1-d coordinate minimizer
  bspline_design(x, knots, degree)    clamped B-spline basis matrix
"""

from __future__ import annotations

import os

from . import _numpy

__all__ = [
    "BACKEND",
    "rbf_gram",
    "pinball_sum",
    "smoothed_pinball",
    "pinball_coord_argmin",
    "bspline_design",
]

_flag = os.environ.get("SHIFTRISK_NO_NUMBA", "").strip()
_force_numpy = _flag not in ("", "0")

if not _force_numpy:
    try:
        from . import _numba as _impl

        BACKEND = "numba"
    except ImportError:
        _impl = _numpy
        BACKEND = "numpy"
else:
    _impl = _numpy
    BACKEND = "numpy"

rbf_gram = _impl.rbf_gram
pinball_sum = _impl.pinball_sum
smoothed_pinball = _impl.smoothed_pinball
pinball_coord_argmin = _impl.pinball_coord_argmin
bspline_design = _impl.bspline_design
