"""Surrogate training and held-out evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import diffcore as dc
from .. import dsp
from ..diffcore import DiffValue, ParamStore
from ..laser import LaserParams, photon_to_power, steady_state
from .cat import CatConfig, build_cat, cat_forward
from .data import FrameDataset, generate_dataset


@dataclass
class TrainReport:
    train_curve: list = field(default_factory=list)   # epoch-mean train loss
    test_curve: list = field(default_factory=list)    # held-out NRMSE
    best_epoch: int = -1
    best_test: float = np.inf
    train_nrmse: float = np.inf     # forward-only, at the kept checkpoint
    test_nrmse: float = np.inf
    stopped_epoch: int = -1         # last epoch actually run


def nrmse_loss(pred: DiffValue, target: np.ndarray) -> DiffValue:
    """Mean over frames of RMSE normalized by the frame's target span."""
    span = np.ptp(target, axis=-1)
    if np.any(span <= 0.0):
        raise ValueError("target frame with zero span")
    err = pred - target
    rmse = dc.sqrt((err * err).mean(axis=-1))
    return (rmse / span).mean()


def default_cat_config(p: LaserParams, cfg: dsp.LinkConfig) -> CatConfig:
    ref = photon_to_power(p, steady_state(p, 95e-3).s)
    return CatConfig(power_ref=ref, max_len=cfg.frame_len)


def batch_nrmse(store: ParamStore, cat_cfg: CatConfig, commands: np.ndarray,
                received: np.ndarray, batch: int = 16) -> float:
    """Forward-only NRMSE over a frame set."""
    total = 0.0
    for start in range(0, commands.shape[0], batch):
        stop = min(start + batch, commands.shape[0])
        pred = cat_forward(store, cat_cfg, commands[start:stop]).data
        total += float(dsp.nrmse(pred, received[start:stop])) * (stop - start)
    return total / commands.shape[0]


def train_surrogate(dataset: FrameDataset, cat_cfg: CatConfig,
                    epochs: int = 20, batch: int = 4, lr: float = 1e-3,
                    seed: int = 0, patience: int = 10, lr_patience: int = 3,
                    log=None) -> tuple[ParamStore, TrainReport]:
    """Fit the surrogate, holding out the last 20% of frames as a test set.

    The parameters from the epoch with the lowest test NRMSE are kept.
    When the test NRMSE stalls for ``lr_patience`` epochs the step size
    is halved (down to a floor of 1e-5); if it fails to improve for
    ``patience`` consecutive epochs the run aborts with its loss
    history in the message.
    """
    train, test = dataset.split(0.8)
    rng = np.random.default_rng(seed)
    store = build_cat(cat_cfg, rng)
    opt = dc.Adam(store, lr=lr)
    report = TrainReport()
    best = store.state_arrays()
    last_halve = -1
    for epoch in range(epochs):
        order = rng.permutation(len(train))
        losses = []
        for start in range(0, len(order), batch):
            sel = order[start:start + batch]
            store.zero_grad()
            loss = nrmse_loss(cat_forward(store, cat_cfg,
                                          train.commands[sel]),
                              train.received[sel])
            loss.backward()
            opt.step()
            losses.append(loss.item())
        epoch_loss = float(np.mean(losses))
        test_loss = batch_nrmse(store, cat_cfg, test.commands, test.received)
        report.train_curve.append(epoch_loss)
        report.test_curve.append(test_loss)
        report.stopped_epoch = epoch
        if test_loss < report.best_test:
            report.best_test = test_loss
            report.best_epoch = epoch
            best = store.state_arrays()
        if log is not None:
            log(f"epoch {epoch:3d}  train {epoch_loss:.4f}  "
                f"test {test_loss:.4f}")
        stalled = epoch - max(report.best_epoch, last_halve)
        if lr_patience and stalled >= lr_patience and opt.lr > 1e-5:
            opt.lr = max(0.5 * opt.lr, 1e-5)
            last_halve = epoch
            if log is not None:
                log(f"  step size halved to {opt.lr:.2e}")
        if epoch - report.best_epoch >= patience:
            tail = ", ".join(f"{v:.4f}" for v in report.test_curve[-patience:])
            raise RuntimeError(
                f"test NRMSE has not improved for {patience} epochs "
                f"(best {report.best_test:.4f} at epoch "
                f"{report.best_epoch}, recent: {tail})")
    store.load_arrays(best)
    report.train_nrmse = batch_nrmse(store, cat_cfg, train.commands,
                                     train.received)
    report.test_nrmse = batch_nrmse(store, cat_cfg, test.commands,
                                    test.received)
    return store, report


def per_frame_nrmse(store: ParamStore, cat_cfg: CatConfig,
                    commands: np.ndarray, received: np.ndarray,
                    batch: int = 16) -> np.ndarray:
    """NRMSE of every frame separately, for consistency checks."""
    out = np.empty(commands.shape[0])
    for start in range(0, commands.shape[0], batch):
        stop = min(start + batch, commands.shape[0])
        pred = cat_forward(store, cat_cfg, commands[start:stop]).data
        err = pred - received[start:stop]
        span = np.ptp(received[start:stop], axis=-1)
        out[start:stop] = np.sqrt((err * err).mean(axis=-1)) / span
    return out


@dataclass
class GridEvaluation:
    """NRMSE over a bias x swing grid of fresh frames."""

    bias_edges: np.ndarray
    swing_edges: np.ndarray
    nrmse_grid: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.nrmse_grid.mean())

    @property
    def worst(self) -> float:
        return float(self.nrmse_grid.max())


def evaluate_surrogate(store: ParamStore, cat_cfg: CatConfig, p: LaserParams,
                       cfg: dsp.LinkConfig, n_cells: int = 10,
                       seed: int = 7777) -> GridEvaluation:
    """Stratified check: one fresh random frame per operating-plane cell.

    Bias spans [50, 100] mA and swing (8, 80] mA in ``n_cells`` equal
    strata each; near-zero swings are skipped because a flat frame has
    no span to normalize by.
    """
    bias_edges = np.linspace(50e-3, 100e-3, n_cells + 1)
    swing_edges = np.linspace(8e-3, 80e-3, n_cells + 1)
    grid = np.empty((n_cells, n_cells))
    for i in range(n_cells):
        for j in range(n_cells):
            rng = dsp.frame_rng(seed, i * n_cells + j)
            bias = rng.uniform(bias_edges[i], bias_edges[i + 1])
            swing = rng.uniform(swing_edges[j], swing_edges[j + 1])
            symbols = rng.integers(0, 4, size=cfg.symbols_per_frame)
            taps = dsp.random_pulse_taps(rng) if (i + j) % 2 else (1.0, 1.0)
            command = dsp.tx_command(symbols, taps, cfg, i_pp=swing,
                                     i_bias=bias)
            truth = dsp.simulate_received(p, cfg, command, i_bias=bias)
            pred = cat_forward(store, cat_cfg, command[None, :]).data
            grid[i, j] = dsp.nrmse(pred, truth[None, :])
    return GridEvaluation(bias_edges, swing_edges, grid)


def desk_training_run(p: LaserParams, cfg: dsp.LinkConfig, n_frames: int = 640,
                      epochs: int = 20, batch: int = 4, lr: float = 1e-3,
                      seed: int = 0, log=None):
    """Generate data and train with the defaults used by the experiments.

    Returns (store, cat_cfg, report); the final 20% of the frames form
    the held-out test set that selects the checkpoint.
    """
    dataset = generate_dataset(p, cfg, n_frames, seed=seed, log=log)
    cat_cfg = default_cat_config(p, cfg)
    store, report = train_surrogate(dataset, cat_cfg, epochs=epochs,
                                    batch=batch, lr=lr, seed=seed, log=log)
    return store, cat_cfg, report
