"""Evaluation of every approach on the reference rate-equation channel.

Training may lean on the surrogate; judgment never does.  Each approach
transmits its own frames through the numerical solver, receivers that
need pilots get a dedicated block of them, and all approaches share the
same per-frame symbol and noise draws so comparisons ride on common
random numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import dsp
from ..diffcore import ParamStore
from ..laser import LaserParams
from ..surrogate import CatConfig
from .autoencoder import Autoencoder, decode_frame, encode_frame
from .baselines import (
    BASELINE_BIAS,
    FfeBaseline,
    SlicerBaseline,
    VnleModel,
    refit_vnle_kernel,
    train_vnle,
)

DEFAULT_SWING_GRID = tuple(np.linspace(8e-3, 80e-3, 10))
PILOT_FRAMES = 16
EVAL_FRAMES = 64


def run_frames(p: LaserParams, cfg: dsp.LinkConfig, build_command,
               i_bias: float, sigma: float, seed: int, start: int,
               count: int, batch: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Simulate ``count`` frames over the solver, with per-frame noise.

    ``build_command`` maps a symbol vector to the drive command and must
    not consume randomness, so every approach sees identical symbol and
    noise draws for a given frame index.
    """
    n_sym = cfg.symbols_per_frame
    symbols = np.empty((count, n_sym), dtype=np.int64)
    commands = np.empty((count, cfg.frame_len))
    noise = np.empty((count, cfg.frame_len))
    for j in range(count):
        rng = dsp.frame_rng(seed, start + j)
        symbols[j] = rng.integers(0, 4, size=n_sym)
        noise[j] = rng.standard_normal(cfg.frame_len)
        commands[j] = build_command(symbols[j])
    received = np.empty_like(commands)
    for lo in range(0, count, batch):
        hi = min(lo + batch, count)
        received[lo:hi] = dsp.simulate_received(p, cfg, commands[lo:hi],
                                                i_bias=i_bias)
    return received + sigma * noise, symbols


def hard_metrics(decided: np.ndarray, symbols: np.ndarray,
                 cfg: dsp.LinkConfig) -> tuple[float, float]:
    valid = cfg.metric_slice("symbol")
    truth = symbols[..., valid].ravel()
    ser = dsp.compute_ser(truth, decided.ravel())
    ce = dsp.hard_decision_ce_bits(truth, decided.ravel())
    return ser, dsp.mutual_information_from_ce(ce)


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)        # dsp.Metrics
    matched_swing: float = np.nan
    ae_bias: float = np.nan
    ae_swing: float = np.nan
    notes: dict = field(default_factory=dict)

    def by_approach(self, name: str) -> dsp.Metrics:
        for row in self.rows:
            if row.approach == name:
                return row
        raise KeyError(name)


def evaluate_autoencoder(p: LaserParams, cfg: dsp.LinkConfig,
                         ae: Autoencoder, sigma: float, seed: int,
                         n_eval: int = EVAL_FRAMES) -> dsp.Metrics:
    bias, swing = ae.learned_currents()

    def build(symbols):
        return encode_frame(ae.encoder, symbols, cfg).data

    received, symbols = run_frames(p, cfg, build, bias, sigma, seed,
                                   PILOT_FRAMES, n_eval)
    valid = cfg.metric_slice("symbol")
    all_logits, truth = [], []
    for frame, frame_symbols in zip(received, symbols):
        logits = decode_frame(ae.decoder, frame, ae.norm,
                              cfg.symbols_per_frame).data
        all_logits.append(logits[valid])
        truth.append(frame_symbols[valid])
    logits = np.concatenate(all_logits)
    truth = np.concatenate(truth)
    decided = logits.argmax(axis=1)
    ser = dsp.compute_ser(truth, decided)
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    mi = dsp.mutual_information_from_ce(dsp.softmax_ce_bits(probs, truth))
    prec = dsp.received_power_metric(p, bias, swing)
    return dsp.Metrics("ae", cfg.symbol_rate / 1e9, swing * 1e3, bias * 1e3,
                       prec, ser, mi, seed)


def matched_grid_swing(p: LaserParams, target_prec: float,
                       grid=DEFAULT_SWING_GRID) -> float:
    """Grid swing whose received-power metric sits closest to target."""
    precs = np.array([dsp.received_power_metric(p, BASELINE_BIAS, g)
                      for g in grid])
    return float(np.asarray(grid)[np.argmin(np.abs(precs - target_prec))])


def evaluate_baseline_set(p: LaserParams, cfg: dsp.LinkConfig,
                          surrogate: ParamStore, cat_cfg: CatConfig,
                          sigma: float, swing: float, norm, seed: int,
                          n_pilot: int = PILOT_FRAMES,
                          n_eval: int = EVAL_FRAMES,
                          vnle_steps: int = 300,
                          log=None) -> tuple[list, VnleModel]:
    """Slicer, FFE and pulse-shaping Volterra at one common swing."""
    rate = cfg.symbol_rate / 1e9
    prec = dsp.received_power_metric(p, BASELINE_BIAS, swing)
    rows = []

    def square_build(symbols):
        return dsp.tx_command(symbols, (1.0, 1.0), cfg, i_pp=swing,
                              i_bias=BASELINE_BIAS)

    pilot_rx, pilot_sym = run_frames(p, cfg, square_build, BASELINE_BIAS,
                                     sigma, seed, 0, n_pilot)
    eval_rx, eval_sym = run_frames(p, cfg, square_build, BASELINE_BIAS,
                                   sigma, seed, n_pilot, n_eval)

    slicer = SlicerBaseline().fit(pilot_rx, pilot_sym, cfg)
    ser, mi = hard_metrics(slicer.decide(eval_rx, cfg), eval_sym, cfg)
    rows.append(dsp.Metrics("bl", rate, swing * 1e3, BASELINE_BIAS * 1e3,
                            prec, ser, mi, seed))

    ffe = FfeBaseline().fit(pilot_rx, pilot_sym, cfg)
    ser, mi = hard_metrics(ffe.decide(eval_rx, cfg), eval_sym, cfg)
    rows.append(dsp.Metrics("ffe", rate, swing * 1e3, BASELINE_BIAS * 1e3,
                            prec, ser, mi, seed))

    vnle, _ = train_vnle(surrogate, cat_cfg, cfg, swing, sigma, norm,
                         steps=vnle_steps, seed=seed, log=log)

    def vnle_build(symbols):
        return vnle.command(symbols, cfg)

    vnle_pilot_rx, vnle_pilot_sym = run_frames(p, cfg, vnle_build,
                                               BASELINE_BIAS, sigma, seed,
                                               0, n_pilot)
    refit_vnle_kernel(vnle, vnle_pilot_rx, vnle_pilot_sym, cfg)
    vnle.fit_centroids(vnle_pilot_rx, vnle_pilot_sym, cfg)
    vnle_eval_rx, vnle_eval_sym = run_frames(p, cfg, vnle_build,
                                             BASELINE_BIAS, sigma, seed,
                                             n_pilot, n_eval)
    ser, mi = hard_metrics(vnle.decide(vnle_eval_rx, cfg), vnle_eval_sym, cfg)
    rows.append(dsp.Metrics("vnle", rate, swing * 1e3, BASELINE_BIAS * 1e3,
                            prec, ser, mi, seed))
    return rows, vnle


def evaluate_link(p: LaserParams, cfg: dsp.LinkConfig, ae: Autoencoder,
                  surrogate: ParamStore, cat_cfg: CatConfig, sigma: float,
                  seed: int = 0, n_pilot: int = PILOT_FRAMES,
                  n_eval: int = EVAL_FRAMES, vnle_steps: int = 300,
                  log=None) -> EvalReport:
    """Head-to-head comparison at matched received power."""
    report = EvalReport()
    ae_row = evaluate_autoencoder(p, cfg, ae, sigma, seed, n_eval)
    report.rows.append(ae_row)
    report.ae_bias, report.ae_swing = ae.learned_currents()
    report.matched_swing = matched_grid_swing(p, ae_row.prec_dbm)
    if log is not None:
        log(f"ae operating point {report.ae_bias * 1e3:.2f} mA / "
            f"{report.ae_swing * 1e3:.2f} mA -> {ae_row.prec_dbm:.2f} dBm, "
            f"matched grid swing {report.matched_swing * 1e3:.0f} mA")
    rows, _ = evaluate_baseline_set(p, cfg, surrogate, cat_cfg, sigma,
                                    report.matched_swing, ae.norm, seed,
                                    n_pilot, n_eval, vnle_steps, log=log)
    report.rows.extend(rows)
    return report
