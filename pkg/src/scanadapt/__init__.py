"""scanadapt: deterministic self-training toolkit for LiDAR domain adaptation.

The package covers the algorithmic core of a mean-teacher adaptation
loop on rotating-scanner point clouds: confidence filtering that adapts
its thresholds online (``filtering``), distribution-aligning point cloud
augmentation (``augment``), pitch-region scan mixing (``mixing``), a
small dense-prediction trainer with exact gradients (``features``,
``model``, ``losses``, ``train``), synthetic two-domain scenes
(``scenes``), and binary scan/label I/O (``scanio``). Heavy per-point
kernels live in ``kernels`` with a compiled backend and a NumPy
fallback chosen at import time.
"""

from .kernels import BACKEND as kernel_backend

__version__ = "0.1.0"

__all__ = ["kernel_backend", "__version__"]
