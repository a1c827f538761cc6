"""Reference receivers: slicer, linear FFE, Volterra with a learned pulse.

All three transmit with the fixed 75 mA bias.  The slicer and the FFE
use the square reference pulse; the Volterra equalizer additionally
learns a two-tap transmit pulse by gradient descent through the frozen
link surrogate, which is what makes it the strongest conventional
contender.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import diffcore as dc
from .. import dsp
from ..diffcore import ParamStore, VolterraKernel
from ..surrogate import CatConfig, cat_forward
from .autoencoder import Normalization

FFE_TAPS = 21
FFE_HALF = (FFE_TAPS - 1) // 2
VNLE_MEMORY = 16
VNLE_DELAY = 8                  # volterra output index for symbol m: 2m + 8
BASELINE_BIAS = 75e-3


def symbol_windows(received: np.ndarray, cfg: dsp.LinkConfig,
                   half: int = FFE_HALF) -> tuple[np.ndarray, slice]:
    """(M_valid, 2*half+1) windows centered on each metric symbol."""
    valid = cfg.metric_slice("symbol")
    centers = 2 * np.arange(valid.start, valid.stop)
    offsets = np.arange(-half, half + 1)
    return received[..., centers[:, None] + offsets], valid


@dataclass
class SlicerBaseline:
    centroids: np.ndarray = None

    def fit(self, received: np.ndarray, symbols: np.ndarray,
            cfg: dsp.LinkConfig):
        valid = cfg.metric_slice("symbol")
        samples = received[..., ::2][..., valid].ravel()
        self.centroids = dsp.estimate_centroids(samples,
                                                symbols[..., valid].ravel())
        return self

    def decide(self, received: np.ndarray, cfg: dsp.LinkConfig) -> np.ndarray:
        valid = cfg.metric_slice("symbol")
        return dsp.mld_decide(received[..., ::2][..., valid], self.centroids)


@dataclass
class FfeBaseline:
    weights: np.ndarray = None
    centroids: np.ndarray = None

    def fit(self, received: np.ndarray, symbols: np.ndarray,
            cfg: dsp.LinkConfig):
        windows, valid = symbol_windows(received, cfg)
        design = windows.reshape(-1, FFE_TAPS)
        targets = dsp.map_pam(symbols[..., valid].ravel())
        self.weights, _ = dc.fit_least_squares(design, targets)
        out = design @ self.weights
        self.centroids = dsp.estimate_centroids(out,
                                                symbols[..., valid].ravel())
        return self

    def decide(self, received: np.ndarray, cfg: dsp.LinkConfig) -> np.ndarray:
        windows, _ = symbol_windows(received, cfg)
        out = windows @ self.weights
        return dsp.mld_decide(out, self.centroids)


@dataclass
class VnleModel:
    """Two-tap transmit pulse plus second-order Volterra receiver."""

    pulse: np.ndarray
    kernel: VolterraKernel
    norm: Normalization
    i_pp: float
    centroids: np.ndarray = None

    def command(self, symbols: np.ndarray, cfg: dsp.LinkConfig) -> np.ndarray:
        return dsp.tx_command(symbols, self.pulse, cfg, i_pp=self.i_pp,
                              i_bias=BASELINE_BIAS)

    def equalize(self, received: np.ndarray,
                 cfg: dsp.LinkConfig) -> np.ndarray:
        """Volterra output at the metric symbol instants, flattened."""
        y = (received - self.norm.center) / self.norm.scale
        frames = y[None, :] if y.ndim == 1 else y
        valid = cfg.metric_slice("symbol")
        centers = 2 * np.arange(valid.start, valid.stop) + VNLE_DELAY
        rows = [dc.volterra_apply(self.kernel, frame)[centers]
                for frame in frames]
        out = np.stack(rows)
        return out[0] if y.ndim == 1 else out

    def fit_centroids(self, received: np.ndarray, symbols: np.ndarray,
                      cfg: dsp.LinkConfig):
        valid = cfg.metric_slice("symbol")
        out = self.equalize(received, cfg).ravel()
        self.centroids = dsp.estimate_centroids(out,
                                                symbols[..., valid].ravel())
        return self

    def decide(self, received: np.ndarray, cfg: dsp.LinkConfig) -> np.ndarray:
        return dsp.mld_decide(self.equalize(received, cfg), self.centroids)


@dataclass
class VnleTrainReport:
    ls_condition: float = np.nan
    loss_curve: list = field(default_factory=list)


def _surrogate_frames(surrogate: ParamStore, cat_cfg: CatConfig,
                      commands: np.ndarray) -> np.ndarray:
    return cat_forward(surrogate, cat_cfg, commands).data


def _ls_kernel_init(surrogate: ParamStore, cat_cfg: CatConfig,
                    cfg: dsp.LinkConfig, i_pp: float, sigma: float,
                    norm: Normalization, seed: int,
                    n_frames: int = 8) -> tuple[VolterraKernel, float]:
    """Square-pulse LS fit of the Volterra receiver through the surrogate."""
    xs, ys = [], []
    valid = cfg.metric_slice("symbol")
    centers = 2 * np.arange(valid.start, valid.stop) + VNLE_DELAY
    for k in range(n_frames):
        rng = dsp.frame_rng(seed, 900_000 + k)
        symbols = rng.integers(0, 4, size=cfg.symbols_per_frame)
        command = dsp.tx_command(symbols, (1.0, 1.0), cfg, i_pp=i_pp,
                                 i_bias=BASELINE_BIAS)
        power = _surrogate_frames(surrogate, cat_cfg, command[None, :])[0]
        noisy = dsp.add_awgn(power, sigma, rng)
        y = (noisy - norm.center) / norm.scale
        xs.append(dc.volterra_design(y, VNLE_MEMORY)[centers])
        ys.append(dsp.map_pam(symbols[valid]))
    coef, report = dc.fit_least_squares(np.vstack(xs), np.concatenate(ys))
    return dc.kernel_from_coefficients(coef, VNLE_MEMORY), report.condition


def train_vnle(surrogate: ParamStore, cat_cfg: CatConfig,
               cfg: dsp.LinkConfig, i_pp: float, sigma: float,
               norm: Normalization, steps: int = 300, lr: float = 1e-3,
               seed: int = 0, log=None) -> tuple[VnleModel, VnleTrainReport]:
    """Joint pulse/kernel training at one fixed swing through the
    surrogate."""
    kernel0, condition = _ls_kernel_init(surrogate, cat_cfg, cfg, i_pp,
                                         sigma, norm, seed)
    report = VnleTrainReport(ls_condition=condition)
    params = ParamStore()
    pulse = params.add("pulse", np.array([1.0, 1.0]))
    kr_bias = params.add("k_bias", kernel0.bias)
    kr_lin = params.add("k_lin", kernel0.linear)
    kr_quad = params.add("k_quad", kernel0.quad)
    for param in surrogate.values():
        param.requires_grad = False
    opt = dc.Adam(params, lr=lr)
    valid = cfg.metric_slice("symbol")
    taps = dsp.design_lowpass(cfg.lpf_fraction * cfg.symbol_rate,
                              cfg.dsp_rate)
    centers = 2 * np.arange(valid.start, valid.stop) + VNLE_DELAY
    try:
        for step in range(steps):
            rng = dsp.frame_rng(seed, step)
            symbols = rng.integers(0, 4, size=cfg.symbols_per_frame)
            noise = sigma * rng.standard_normal(cfg.frame_len)
            levels = dsp.map_pam(symbols)

            params.zero_grad()
            shaped = dc.reshape(dc.reshape(levels, (-1, 1)) * pulse, (-1,))
            limited = dc.fir_diff(shaped, taps, "same")
            command = (dc.clip_straight_through(limited, -0.5, 0.5) * i_pp
                       + BASELINE_BIAS)
            power = cat_forward(surrogate, cat_cfg,
                                dc.reshape(command, (1, -1)))
            noisy = dc.reshape(power, (-1,)) + noise
            y = (noisy - norm.center) / norm.scale
            z = dc.volterra_apply_diff(kr_bias, kr_lin, kr_quad, y)
            err = z[centers] - levels[valid]
            loss = (err * err).mean()
            loss.backward()
            opt.step()
            report.loss_curve.append(loss.item())
            if log is not None and (step + 1) % 50 == 0:
                recent = float(np.mean(report.loss_curve[-50:]))
                log(f"swing {i_pp * 1e3:.0f} mA step {step + 1:4d}  "
                    f"mse {recent:.5f}")
    finally:
        for param in surrogate.values():
            param.requires_grad = True
    quad = 0.5 * (kr_quad.data + kr_quad.data.T)
    kernel = VolterraKernel(float(kr_bias.data), kr_lin.data.copy(), quad)
    model = VnleModel(pulse.data.copy(), kernel, norm, i_pp)
    return model, report


def refit_vnle_kernel(model: VnleModel, received: np.ndarray,
                      symbols: np.ndarray, cfg: dsp.LinkConfig) -> VnleModel:
    """LS re-estimate of the receiver kernel on pilot frames.

    The learned transmit pulse is kept; only the Volterra coefficients
    adapt, mirroring how the linear equalizer trains on pilots.
    """
    valid = cfg.metric_slice("symbol")
    centers = 2 * np.arange(valid.start, valid.stop) + VNLE_DELAY
    xs, ys = [], []
    for frame, frame_symbols in zip(received, symbols):
        y = (frame - model.norm.center) / model.norm.scale
        xs.append(dc.volterra_design(y, VNLE_MEMORY)[centers])
        ys.append(dsp.map_pam(frame_symbols[valid]))
    coef, _ = dc.fit_least_squares(np.vstack(xs), np.concatenate(ys))
    model.kernel = dc.kernel_from_coefficients(coef, VNLE_MEMORY)
    return model
