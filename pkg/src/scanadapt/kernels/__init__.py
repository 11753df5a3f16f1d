"""Per-point numeric kernels with a compiled fast path.

When the Cython extension ``scanadapt.kernels._native`` was built it is
selected at import time; otherwise the NumPy implementations take over.
Set ``SCANADAPT_KERNELS=numpy`` (or ``native``) to force a backend.
``BACKEND`` names the active one. Both backends expose the same
functions: integer outputs agree exactly, float outputs to round-off.
"""

import importlib
import os

from . import _numpy

_native = None
_forced = os.environ.get("SCANADAPT_KERNELS", "")
if _forced != "numpy":
    try:
        _native = importlib.import_module(__name__ + "._native")
    except ImportError:
        if _forced == "native":
            raise

if _native is not None:
    BACKEND = "native"
    _impl = _native
else:
    BACKEND = "numpy"
    _impl = _numpy

point_ranges = _impl.point_ranges
pitch_angles = _impl.pitch_angles
softmax_confidence = _impl.softmax_confidence
decay_weights = _impl.decay_weights
bin_indices = _impl.bin_indices
apply_clamped_noise = _impl.apply_clamped_noise
radius_stats = _impl.radius_stats


def available_backends():
    """Importable backend modules keyed by name (for tests and benchmarks)."""
    out = {"numpy": _numpy}
    if _native is not None:
        out["native"] = _native
    return out
