"""Backend selection for the numeric kernels.

The compiled extension is used when it was built; otherwise the numpy
fallback takes over transparently. ``CANOPY_FORGE_KERNELS=python`` forces
the fallback, which the benchmark suite uses to compare the two.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("CANOPY_FORGE_KERNELS", "").lower() in ("python", "numpy"):
    _impl = _kernels_py
    BACKEND = "numpy"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "numpy"

accum_mean = _impl.accum_mean
accum_max = _impl.accum_max
accum_min = _impl.accum_min
box_mean_valid = _impl.box_mean_valid
