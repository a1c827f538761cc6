"""Directly modulated laser link: rate-equation channel, DSP chain,
differentiable surrogate and end-to-end transceiver optimization."""

__version__ = "0.1.0"

from dmlink.laser import LaserParams, LaserState, Trajectory, derive_params
from dmlink.dsp import LinkConfig, Metrics

__all__ = [
    "LaserParams",
    "LaserState",
    "Trajectory",
    "derive_params",
    "LinkConfig",
    "Metrics",
    "__version__",
]
