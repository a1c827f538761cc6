"""End-to-end learned transmitter and receiver.

The transmitter owns a 4 x 2 pulse mapping (one two-sample shape per
symbol), a bounded bias and a bounded swing.  Frames pass through the
band-limiting filter, the drive clip and the frozen link surrogate; the
receiver filters the detected power with a short causal FIR and scores
each symbol with a small MLP.  Everything trains jointly against the
cross entropy of the transmitted symbols.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import sqrt as _sqrt

import numpy as np

from .. import diffcore as dc
from .. import dsp
from ..diffcore import DiffValue, ParamStore
from ..laser import LaserParams, photon_to_power, steady_state
from ..surrogate import CatConfig, cat_forward

BIAS_RANGE = (50e-3, 100e-3)
SWING_RANGE = (0.0, 80e-3)
DECODER_TAPS = 11
DECODER_HIDDEN = 32
DECODER_LAYERS = 3
FEATURE_ADVANCE = 5             # samples between symbol start and feature


def bounded(raw: DiffValue, lo: float, hi: float) -> DiffValue:
    """Map an unconstrained scalar into (lo, hi)."""
    return lo + (hi - lo) * dc.sigmoid(raw)


@dataclass
class Normalization:
    """Fixed receiver input scaling, shared by training and evaluation."""

    center: float
    scale: float

    @classmethod
    def from_laser(cls, p: LaserParams, power_ref: float) -> "Normalization":
        center = photon_to_power(p, steady_state(p, 75e-3).s)
        return cls(center=center, scale=0.3 * power_ref)


def build_encoder(store: ParamStore) -> None:
    """Transmitter parameters: pulse mapping plus raw bias and swing.

    The mapping starts as the reference square pulse and the raw scalars
    at zero, which the sigmoid bounds place at 75 mA bias and 40 mA
    swing: the exact center of the allowed operating plane.
    """
    levels = np.asarray(dsp.PAM4_LEVELS)
    store.add("mapping", np.stack([levels, levels], axis=1))
    store.add("raw_bias", 0.0)
    store.add("raw_swing", 0.0)


def build_decoder(store: ParamStore, rng: np.random.Generator) -> None:
    store.add("rx_taps", rng.standard_normal(DECODER_TAPS)
              / _sqrt(DECODER_TAPS))
    fan = 2
    for layer in range(DECODER_LAYERS):
        store.add(f"rx_w{layer}",
                  rng.standard_normal((fan, DECODER_HIDDEN)) / _sqrt(fan))
        store.add(f"rx_b{layer}", np.zeros(DECODER_HIDDEN))
        fan = DECODER_HIDDEN
    store.add("rx_w_out", rng.standard_normal((fan, 4)) / _sqrt(fan))
    store.add("rx_b_out", np.zeros(4))


def encoder_currents(store: ParamStore) -> tuple[DiffValue, DiffValue]:
    bias = bounded(store["raw_bias"], *BIAS_RANGE)
    swing = bounded(store["raw_swing"], *SWING_RANGE)
    return bias, swing


def encode_frame(store: ParamStore, symbols: np.ndarray,
                 cfg: dsp.LinkConfig) -> DiffValue:
    """Differentiable drive command, (T,) at the DSP rate."""
    pulses = store["mapping"][np.asarray(symbols)]        # (M, 2)
    shaped = dc.reshape(pulses, (-1,))
    taps = dsp.design_lowpass(cfg.lpf_fraction * cfg.symbol_rate,
                              cfg.dsp_rate)
    limited = dc.fir_diff(shaped, taps, "same")
    clipped = dc.clip_straight_through(limited, -0.5, 0.5)
    bias, swing = encoder_currents(store)
    return clipped * swing + bias


def decode_frame(store: ParamStore, received, norm: Normalization,
                 n_symbols: int) -> DiffValue:
    """Symbol logits (n_symbols, 4) from one received frame (T,)."""
    y = (dc.as_value(received) - norm.center) / norm.scale
    filtered = dc.fir_diff(y, store["rx_taps"], "causal")
    padded = dc.pad_last(filtered, 0, DECODER_TAPS)
    first = padded[FEATURE_ADVANCE:FEATURE_ADVANCE + 2 * n_symbols:2]
    second = padded[FEATURE_ADVANCE + 1:FEATURE_ADVANCE + 1 + 2 * n_symbols:2]
    x = dc.stack([first, second], axis=1)                 # (M, 2)
    for layer in range(DECODER_LAYERS):
        x = dc.leaky_relu(x @ store[f"rx_w{layer}"] + store[f"rx_b{layer}"])
    return x @ store["rx_w_out"] + store["rx_b_out"]


@dataclass
class Autoencoder:
    """Trainable transmitter/receiver pair bound to one symbol rate."""

    cfg: dsp.LinkConfig
    norm: Normalization
    encoder: ParamStore
    decoder: ParamStore

    @classmethod
    def fresh(cls, p: LaserParams, cfg: dsp.LinkConfig, power_ref: float,
              seed: int = 0) -> "Autoencoder":
        encoder, decoder = ParamStore(), ParamStore()
        build_encoder(encoder)
        build_decoder(decoder, np.random.default_rng(seed))
        return cls(cfg, Normalization.from_laser(p, power_ref), encoder,
                   decoder)

    def trainable(self) -> list[DiffValue]:
        return self.encoder.values() + self.decoder.values()

    def learned_currents(self) -> tuple[float, float]:
        bias, swing = encoder_currents(self.encoder)
        return float(bias.data), float(swing.data)

    def logits_through(self, channel, symbols: np.ndarray) -> DiffValue:
        """Push one frame through ``channel`` (command -> received)."""
        command = encode_frame(self.encoder, symbols, self.cfg)
        received = channel(command)
        return decode_frame(self.decoder, received, self.norm, len(symbols))


@dataclass
class AeTrainReport:
    loss_curve: list = field(default_factory=list)    # per-epoch mean CE, nats
    bias_curve: list = field(default_factory=list)    # A, end of epoch
    swing_curve: list = field(default_factory=list)


def train_autoencoder(ae: Autoencoder, surrogate: ParamStore,
                      cat_cfg: CatConfig, sigma: float, n_frames: int = 1024,
                      epochs: int = 3, lr: float = 1e-3, seed: int = 0,
                      log=None) -> AeTrainReport:
    """Joint encoder/decoder training through the frozen surrogate."""
    cfg = ae.cfg
    for param in surrogate.values():
        param.requires_grad = False
    opt = dc.Adam(ae.trainable(), lr=lr)
    report = AeTrainReport()
    valid = cfg.metric_slice("symbol")
    step = 0
    try:
        for epoch in range(epochs):
            losses = []
            for k in range(n_frames):
                rng = dsp.frame_rng(seed, step)
                symbols = rng.integers(0, 4, size=cfg.symbols_per_frame)
                noise = sigma * rng.standard_normal(cfg.frame_len)

                def channel(command):
                    batched = dc.reshape(command, (1, cfg.frame_len))
                    out = cat_forward(surrogate, cat_cfg, batched)
                    return dc.reshape(out, (cfg.frame_len,)) + noise

                for param in ae.trainable():
                    param.grad = None
                logits = ae.logits_through(channel, symbols)
                loss = dc.softmax_cross_entropy(logits[valid], symbols[valid])
                loss.backward()
                opt.step()
                losses.append(loss.item())
                step += 1
            bias, swing = ae.learned_currents()
            report.loss_curve.append(float(np.mean(losses)))
            report.bias_curve.append(bias)
            report.swing_curve.append(swing)
            if log is not None:
                log(f"epoch {epoch:2d}  ce {report.loss_curve[-1]:.4f} nats  "
                    f"bias {bias * 1e3:.2f} mA  swing {swing * 1e3:.2f} mA")
    finally:
        for param in surrogate.values():
            param.requires_grad = True
    return report
