"""Context-aware decomposed attention layers on a small numpy tensor core.

The package builds ResNet-style backbones whose 3x3 stage can be swapped
between a plain convolution, a multi-head depthwise convolution, and
per-location attention filters assembled from a small bank of shared base
kernels mixed by context-derived coefficients.  It also ships low-pass
downsampling filters, a minimal SGD training harness, and analysis tools
(profiling, base-kernel pruning, kernel correlation, spectra export).

``CADA_THREADS`` caps internal parallelism.  It must be honoured before
numpy first initialises its thread pools, so it is applied here, ahead of
any numpy import.
"""

import os as _os

_cap = _os.environ.get("CADA_THREADS")
if _cap:
    for _var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        _os.environ.setdefault(_var, _cap)

__version__ = "0.1.0"

import importlib as _importlib

from .errors import CheckpointError, ConfigurationError

_SUBMODULES = (
    "analysis",
    "attention",
    "backbone",
    "canet",
    "config",
    "kernels",
    "lowpass",
    "ops",
    "train",
)

__all__ = list(_SUBMODULES) + ["CheckpointError", "ConfigurationError", "__version__"]


def __getattr__(name):
    if name in _SUBMODULES:
        return _importlib.import_module("." + name, __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
