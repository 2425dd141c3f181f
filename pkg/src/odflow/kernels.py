"""Backend selection for the likelihood-ascent kernels.

The compiled extension is preferred when importable; the pure-numpy
implementation is the fallback and the reference. Set ODFLOW_NO_EXT=1 to
force the numpy backend (used by the parity tests and the benchmark).
"""

from __future__ import annotations

import os

from . import _mle_numpy

__all__ = ["poisson_ascent", "negbin_ascent", "BACKEND"]

if os.environ.get("ODFLOW_NO_EXT"):
    _impl = _mle_numpy
    BACKEND = "numpy"
else:
    try:
        from . import _mle_core as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _mle_numpy
        BACKEND = "numpy"

poisson_ascent = _impl.poisson_ascent
negbin_ascent = _impl.negbin_ascent
