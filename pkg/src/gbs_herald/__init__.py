"""Simulate and optimize heralded non-Gaussian state sources built from
squeezed light, Gaussian circuits and photon-number-resolving detectors."""

__version__ = "0.1.0"

from .scheme import (  # noqa: E402
    CircuitSpec,
    Layer,
    LossSite,
    SqueezedInput,
    FockInput,
    Interferometer,
    SymplecticBlock,
    Truncation,
    evaluate_adaptive,
    evaluate_branch,
    evaluate_non_adaptive,
)
from .targets import TargetSpec, cat_state, gkp_core_state, gkp_delta  # noqa: E402

__all__ = [
    "CircuitSpec", "Layer", "LossSite", "SqueezedInput", "FockInput", "Interferometer",
    "SymplecticBlock", "Truncation", "evaluate_adaptive", "evaluate_branch",
    "evaluate_non_adaptive", "TargetSpec", "cat_state", "gkp_core_state", "gkp_delta",
]
