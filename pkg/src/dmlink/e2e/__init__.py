"""End-to-end optimization and the baselines it is judged against."""

from .autoencoder import (
    Autoencoder,
    AeTrainReport,
    Normalization,
    bounded,
    build_decoder,
    build_encoder,
    decode_frame,
    encode_frame,
    encoder_currents,
    train_autoencoder,
)
from .baselines import (
    BASELINE_BIAS,
    FfeBaseline,
    SlicerBaseline,
    VnleModel,
    VnleTrainReport,
    refit_vnle_kernel,
    symbol_windows,
    train_vnle,
)
from .evaluate import (
    DEFAULT_SWING_GRID,
    EvalReport,
    evaluate_autoencoder,
    evaluate_baseline_set,
    evaluate_link,
    hard_metrics,
    matched_grid_swing,
    run_frames,
)

__all__ = [
    "Autoencoder", "AeTrainReport", "Normalization", "bounded",
    "build_decoder", "build_encoder", "decode_frame", "encode_frame",
    "encoder_currents", "train_autoencoder", "BASELINE_BIAS", "FfeBaseline",
    "SlicerBaseline", "VnleModel", "VnleTrainReport", "refit_vnle_kernel",
    "symbol_windows", "train_vnle", "DEFAULT_SWING_GRID", "EvalReport",
    "evaluate_autoencoder", "evaluate_baseline_set", "evaluate_link",
    "hard_metrics", "matched_grid_swing", "run_frames",
]
