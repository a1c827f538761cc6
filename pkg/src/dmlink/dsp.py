"""Transmitter and receiver DSP, channel noise and link metrics.

The digital part of the link runs at 2 samples per symbol.  A frame of
4PAM symbols is pulse shaped, band limited to 0.9 R_s by a 65-tap FIR,
clipped to [-0.5, 0.5] and mapped onto a drive current
I = I_bias + I_pp * x.  The laser solver runs at 32 samples per symbol;
polyphase-style windowed-sinc resamplers bridge the two rates.  Received
power is band limited again, decimated back to 2 samples per symbol, and
additive white Gaussian noise calibrated to the target electrical SNR is
applied there.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy import signal as ssig

from dmlink import laser as _laser
from dmlink.laser import LaserParams, LaserState

__all__ = [
    "PAM4_LEVELS",
    "LinkConfig",
    "Metrics",
    "EyeHistogram",
    "map_pam",
    "shape_pulses",
    "random_pulse_taps",
    "design_lowpass",
    "fir_same",
    "interp_to_solver_rate",
    "decimate_from_solver_rate",
    "apply_drive_scaling",
    "tx_command",
    "simulate_received",
    "calibrate_noise",
    "add_awgn",
    "frame_rng",
    "estimate_centroids",
    "mld_decide",
    "compute_ser",
    "hard_decision_ce_bits",
    "softmax_ce_bits",
    "mutual_information_from_ce",
    "nrmse",
    "eye_histogram",
    "received_power_metric",
]

PAM4_LEVELS = np.array([-0.5, -1.0 / 6.0, 1.0 / 6.0, 0.5])

NOMINAL_RATES = (15e9, 20e9, 25e9)

# Kernel length for the 16x rate-change filters.  At 32 samples per symbol
# a 65-tap filter is far too short to reject interpolation images or
# decimation aliases, so the resamplers get a longer window: 385 taps puts
# the Hamming stopband edge near 1.14 R_s for a cutoff at R_s.
RESAMPLER_TAPS = 385


@dataclass(frozen=True)
class LinkConfig:
    """Static link description shared by all approaches at one rate."""

    symbol_rate: float              # R_s, Bd
    sps: int = 2                    # DSP samples per symbol
    oversample: int = 32            # solver samples per symbol
    i_bias: float = 75e-3           # A
    i_pp: float = 80e-3             # A, peak to peak
    lpf_fraction: float = 0.9       # band limit as a fraction of R_s
    snr_target_db: float = 22.0
    frame_len: int = 1024           # samples at `sps` per frame
    warmup: int = 64                # leading samples excluded from metrics
    tail_guard: int = 32            # trailing samples excluded from metrics

    def __post_init__(self):
        if self.symbol_rate <= 0.0:
            raise ValueError("symbol rate must be positive")
        if self.symbol_rate not in NOMINAL_RATES:
            warnings.warn(
                f"symbol rate {self.symbol_rate / 1e9:.3g} GBd is outside "
                "the nominal {15, 20, 25} GBd set", stacklevel=3)
        if self.oversample % self.sps != 0:
            raise ValueError("oversample must be divisible by sps")
        if not 50e-3 <= self.i_bias <= 100e-3:
            raise ValueError(f"I_bias must lie in [50, 100] mA, "
                             f"got {self.i_bias * 1e3:.3g} mA")
        if not 0.0 <= self.i_pp <= 80e-3:
            raise ValueError(f"I_pp must lie in [0, 80] mA, "
                             f"got {self.i_pp * 1e3:.3g} mA")
        if not 0.0 < self.lpf_fraction < 1.0:
            raise ValueError("lpf_fraction must be in (0, 1)")
        if self.frame_len % self.sps != 0:
            raise ValueError("frame length must hold whole symbols")
        if not 0 <= self.warmup < self.frame_len:
            raise ValueError("warmup must be shorter than the frame")
        if not 0 <= self.tail_guard < self.frame_len - self.warmup:
            raise ValueError("tail guard must leave room for metrics")

    @property
    def dsp_rate(self) -> float:
        return self.symbol_rate * self.sps

    @property
    def solver_rate(self) -> float:
        return self.symbol_rate * self.oversample

    @property
    def rate_factor(self) -> int:
        return self.oversample // self.sps

    @property
    def symbols_per_frame(self) -> int:
        return self.frame_len // self.sps

    @property
    def warmup_symbols(self) -> int:
        return self.warmup // self.sps

    @property
    def tail_guard_symbols(self) -> int:
        return self.tail_guard // self.sps

    def metric_slice(self, unit: str = "sample") -> slice:
        """Frame positions that count toward metrics.

        Frames are simulated in isolation, so the centered resampling
        filters smear the hard start and end of each frame.  The warmup
        also absorbs the laser settling transient.  ``unit`` selects
        sample or symbol indexing.
        """
        if unit == "sample":
            return slice(self.warmup, self.frame_len - self.tail_guard)
        if unit == "symbol":
            return slice(self.warmup_symbols,
                         self.symbols_per_frame - self.tail_guard_symbols)
        raise ValueError(f"unknown unit {unit!r}")

    def with_currents(self, i_bias: float, i_pp: float) -> "LinkConfig":
        return replace(self, i_bias=i_bias, i_pp=i_pp)


@dataclass
class Metrics:
    """One evaluated operating point, CSV-row shaped."""

    approach: str
    rs_gbd: float
    ipp_ma: float
    ibias_ma: float
    prec_dbm: float
    ser: float
    mi_bits: float
    seed: int


@dataclass
class EyeHistogram:
    counts: np.ndarray          # (phases, amplitude bins), int64
    amp_edges: np.ndarray
    span_samples: int


def map_pam(symbols: np.ndarray, levels: np.ndarray = PAM4_LEVELS) -> np.ndarray:
    """Symbol indices to amplitude levels."""
    symbols = np.asarray(symbols)
    if symbols.size and (symbols.min() < 0 or symbols.max() >= len(levels)):
        raise ValueError(f"symbol indices must lie in [0, {len(levels) - 1}]")
    return levels[symbols]


def shape_pulses(amplitudes: np.ndarray, taps: Sequence[float],
                 sps: int = 2) -> np.ndarray:
    """Replicate each amplitude onto `sps` samples weighted by the pulse taps."""
    taps = np.asarray(taps, dtype=float)
    if taps.shape != (sps,):
        raise ValueError(f"expected {sps} pulse taps, got shape {taps.shape}")
    amplitudes = np.asarray(amplitudes, dtype=float)
    out = amplitudes[..., :, None] * taps
    return out.reshape(amplitudes.shape[:-1] + (amplitudes.shape[-1] * sps,))


def random_pulse_taps(rng: np.random.Generator, sps: int = 2) -> np.ndarray:
    """Random pulse, uniform in [-0.5, 0.5], renormalized to max |tap| = 1."""
    for _ in range(100):
        taps = rng.uniform(-0.5, 0.5, size=sps)
        peak = np.abs(taps).max()
        if peak > 1e-6:
            return taps / peak
    raise RuntimeError("could not draw non-degenerate pulse taps")


def design_lowpass(cutoff: float, sample_rate: float,
                   n_taps: int = 65) -> np.ndarray:
    """Linear-phase windowed-sinc low-pass FIR with unity DC gain."""
    if not 0.0 < cutoff < sample_rate / 2.0:
        raise ValueError("cutoff must lie inside (0, Nyquist)")
    if n_taps < 3 or n_taps % 2 == 0:
        raise ValueError("n_taps must be odd and at least 3")
    m = np.arange(n_taps) - (n_taps - 1) / 2.0
    h = np.sinc(2.0 * cutoff / sample_rate * m)
    h *= np.hamming(n_taps)
    return h / h.sum()


def fir_same(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Zero-padded FIR along the last axis, group delay removed."""
    x = np.asarray(x, dtype=float)
    taps = np.asarray(taps, dtype=float)
    half = (len(taps) - 1) // 2
    shape = (1,) * (x.ndim - 1) + (-1,)
    full = ssig.fftconvolve(x, taps.reshape(shape), mode="full", axes=-1)
    return full[..., half:half + x.shape[-1]]


def interp_to_solver_rate(x: np.ndarray, cfg: LinkConfig) -> np.ndarray:
    """2 sps to solver-rate interpolation (zero stuffing plus windowed sinc)."""
    factor = cfg.rate_factor
    up = np.zeros(x.shape[:-1] + (x.shape[-1] * factor,), dtype=float)
    up[..., ::factor] = x
    taps = design_lowpass(cfg.symbol_rate, cfg.solver_rate, RESAMPLER_TAPS)
    return fir_same(up, taps) * factor


def decimate_from_solver_rate(x: np.ndarray, cfg: LinkConfig) -> np.ndarray:
    """Anti-alias filter at 0.9 R_s and pick every 16th solver sample."""
    taps = design_lowpass(cfg.lpf_fraction * cfg.symbol_rate,
                          cfg.solver_rate, RESAMPLER_TAPS)
    return fir_same(x, taps)[..., ::cfg.rate_factor]


def apply_drive_scaling(x: np.ndarray, i_pp: float, i_bias: float) -> np.ndarray:
    """Clip the shaped waveform to [-0.5, 0.5], amplify and add the bias."""
    return np.clip(x, -0.5, 0.5) * i_pp + i_bias


def tx_command(symbols: np.ndarray, pulse_taps: Sequence[float],
               cfg: LinkConfig, i_pp: float | None = None,
               i_bias: float | None = None) -> np.ndarray:
    """Drive-current command at 2 sps for a frame of symbol indices."""
    amps = map_pam(symbols)
    shaped = shape_pulses(amps, pulse_taps, cfg.sps)
    lpf = design_lowpass(cfg.lpf_fraction * cfg.symbol_rate, cfg.dsp_rate)
    filtered = fir_same(shaped, lpf)
    return apply_drive_scaling(
        filtered,
        cfg.i_pp if i_pp is None else i_pp,
        cfg.i_bias if i_bias is None else i_bias)


def simulate_received(p: LaserParams, cfg: LinkConfig, command: np.ndarray,
                      i_bias: float | np.ndarray | None = None) -> np.ndarray:
    """Noiseless received power frames for 2-sps current commands.

    ``command`` has shape (T,) or (B, T).  The laser starts from the
    steady state of ``i_bias`` (default: the per-frame mean command,
    which equals the bias for symmetric constellations).
    """
    command = np.asarray(command, dtype=float)
    squeeze = command.ndim == 1
    cmd = command[None, :] if squeeze else command
    if i_bias is None:
        bias = cmd.mean(axis=-1)
    else:
        bias = np.broadcast_to(np.asarray(i_bias, dtype=float),
                               (cmd.shape[0],))
    # interpolate the modulation around the bias so the zero padding of the
    # centered resampling filter relaxes the drive toward the bias, not
    # toward zero current, at the frame edges
    drive = interp_to_solver_rate(cmd - bias[:, None], cfg) + bias[:, None]
    # the clip bounds the 2-sps command, not the reconstructed waveform:
    # near-Nyquist content can overshoot well past the swing, and a laser
    # diode simply blocks whatever would come out negative
    np.maximum(drive, 0.0, out=drive)
    s0 = np.empty(cmd.shape[0])
    n0 = np.empty(cmd.shape[0])
    for k, b in enumerate(bias):
        ss = _laser.steady_state(p, float(b))
        s0[k], n0[k] = ss.s, ss.n
    traj = _laser.integrate_rate_equations(
        p, drive, cfg.solver_rate, LaserState(s0, n0, np.zeros_like(s0)))
    power = _laser.photon_to_power(p, traj.s)
    received = decimate_from_solver_rate(power, cfg)
    return received[0] if squeeze else received


def frame_rng(seed: int, frame_index: int) -> np.random.Generator:
    """Deterministic per-frame random stream keyed by (seed, frame index)."""
    return np.random.default_rng(np.random.SeedSequence((seed, frame_index)))


def add_awgn(x: np.ndarray, sigma: float,
             rng: np.random.Generator) -> np.ndarray:
    if sigma < 0.0:
        raise ValueError("noise sigma must be non-negative")
    return x + sigma * rng.standard_normal(np.shape(x))


def calibrate_noise(p: LaserParams, cfg: LinkConfig, n_frames: int = 64,
                    seed: int = 0) -> float:
    """Noise standard deviation hitting the target SNR on the reference link.

    The reference is the square-pulse 4PAM transmission at I_pp = 80 mA and
    I_bias = 75 mA.  sigma^2 = Var(P) / 10^(SNR/10) measured on the
    warmed-up received power; sigma is then frozen for every experiment at
    this symbol rate.
    """
    ref = cfg.with_currents(75e-3, 80e-3)
    rng = frame_rng(seed, 0)
    symbols = rng.integers(0, 4, size=(n_frames, ref.symbols_per_frame))
    command = tx_command(symbols, (1.0, 1.0), ref)
    received = simulate_received(p, ref, command, i_bias=ref.i_bias)
    settled = received[:, ref.metric_slice()]
    return float(np.sqrt(settled.var() / 10.0 ** (ref.snr_target_db / 10.0)))


def estimate_centroids(values: np.ndarray, symbols: np.ndarray,
                       n_levels: int = 4) -> np.ndarray:
    """Per-symbol-class mean of a decision variable."""
    values = np.asarray(values).ravel()
    symbols = np.asarray(symbols).ravel()
    if values.shape != symbols.shape:
        raise ValueError("values and symbols must have equal length")
    cent = np.empty(n_levels)
    for m in range(n_levels):
        sel = symbols == m
        if not sel.any():
            raise ValueError(f"symbol class {m} absent from training split")
        cent[m] = values[sel].mean()
    return cent


def mld_decide(values: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest-centroid decision via mid-point thresholds."""
    order = np.argsort(centroids)
    thresholds = 0.5 * (centroids[order][1:] + centroids[order][:-1])
    return order[np.searchsorted(thresholds, np.asarray(values))]


def compute_ser(tx_symbols: np.ndarray, rx_symbols: np.ndarray) -> float:
    tx_symbols = np.asarray(tx_symbols).ravel()
    rx_symbols = np.asarray(rx_symbols).ravel()
    if tx_symbols.size == 0 or tx_symbols.shape != rx_symbols.shape:
        raise ValueError("symbol streams must be non-empty and equally long")
    return float(np.mean(tx_symbols != rx_symbols))


def hard_decision_ce_bits(tx_symbols: np.ndarray, rx_symbols: np.ndarray,
                          n_levels: int = 4) -> float:
    """Conditional entropy H(X | decision) in bits from confusion counts.

    This is the cross-entropy of the plug-in posterior of a hard-output
    detector; zero when every decision is correct.
    """
    tx_symbols = np.asarray(tx_symbols).ravel()
    rx_symbols = np.asarray(rx_symbols).ravel()
    joint = np.zeros((n_levels, n_levels))
    np.add.at(joint, (tx_symbols, rx_symbols), 1.0)
    joint /= joint.sum()
    col = joint.sum(axis=0, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        info = joint * np.log2(joint / col)
    return float(-np.nansum(info))


def softmax_ce_bits(probs: np.ndarray, tx_symbols: np.ndarray) -> float:
    """Cross entropy in bits of soft posteriors against the sent symbols."""
    probs = np.asarray(probs, dtype=float)
    tx_symbols = np.asarray(tx_symbols).ravel()
    picked = probs[np.arange(len(tx_symbols)), tx_symbols]
    return float(-np.mean(np.log2(np.maximum(picked, 1e-300))))


def mutual_information_from_ce(ce_bits: float, n_levels: int = 4) -> float:
    """Lower bound I(X; Y) >= log2(M) - CE, floored at zero."""
    return max(math.log2(n_levels) - ce_bits, 0.0)


def nrmse(pred: np.ndarray, target: np.ndarray) -> float:
    """RMS error over peak-to-peak target span, averaged over sequences."""
    pred = np.atleast_2d(np.asarray(pred, dtype=float))
    target = np.atleast_2d(np.asarray(target, dtype=float))
    if pred.shape != target.shape:
        raise ValueError("prediction and target shapes differ")
    span = np.ptp(target, axis=-1)
    if np.any(span <= 0.0):
        raise ValueError("target sequence has zero peak-to-peak span")
    rmse = np.sqrt(np.mean((pred - target) ** 2, axis=-1))
    return float(np.mean(rmse / span))


def eye_histogram(waveform: np.ndarray, sps: int, bins: int = 64,
                  span_symbols: int = 2) -> EyeHistogram:
    """Fold a waveform modulo `span_symbols` symbol periods and bin it."""
    x = np.asarray(waveform, dtype=float).ravel()
    span = span_symbols * sps
    if bins < 2 or span < 1 or x.size < span:
        raise ValueError("waveform too short for the requested eye span")
    edges = np.linspace(x.min(), x.max() + 1e-300, bins + 1)
    counts = np.zeros((span, bins), dtype=np.int64)
    phases = np.arange(x.size) % span
    amp_idx = np.clip(np.searchsorted(edges, x, side="right") - 1,
                      0, bins - 1)
    np.add.at(counts, (phases, amp_idx), 1)
    return EyeHistogram(counts, edges, span)


def received_power_metric(p: LaserParams, i_bias: float,
                          i_pp: float) -> float:
    """Received power figure in dBm: half swing of the static L-I response."""
    if i_pp < 0.0:
        raise ValueError("I_pp must be non-negative")
    if i_pp == 0.0:
        return -math.inf
    hi = _laser.photon_to_power(p, _laser.steady_state(p, i_bias + i_pp / 2).s)
    lo = _laser.photon_to_power(p, _laser.steady_state(p, i_bias - i_pp / 2).s)
    return 10.0 * math.log10(max(hi - lo, 1e-300) / 2.0 / 1e-3)
