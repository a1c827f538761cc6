"""Frame datasets pairing drive commands with solver output."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import dsp
from ..laser import DivergenceError, LaserParams


@dataclass
class FrameDataset:
    """Paired (command, received) frames plus their operating points.

    ``commands`` and ``received`` are (N, T) at the DSP rate; the command
    is the drive current in amperes, the received array the detected
    power in watts with no noise added.  ``square`` flags frames that
    used the reference square pulse instead of a random two-tap shape.
    """

    symbol_rate: float
    commands: np.ndarray
    received: np.ndarray
    bias: np.ndarray
    swing: np.ndarray
    square: np.ndarray
    seed: int
    regenerated: int = 0            # frames redrawn after solver divergence

    def __post_init__(self):
        n = self.commands.shape[0]
        shapes = (self.received.shape[0], self.bias.shape[0],
                  self.swing.shape[0], self.square.shape[0])
        if any(s != n for s in shapes):
            raise ValueError("dataset arrays disagree on frame count")

    def __len__(self) -> int:
        return self.commands.shape[0]

    def split(self, train_fraction: float = 0.8) -> tuple["FrameDataset",
                                                          "FrameDataset"]:
        cut = int(round(len(self) * train_fraction))
        if cut == 0 or cut == len(self):
            raise ValueError("split leaves one side empty")
        return self._take(slice(None, cut)), self._take(slice(cut, None))

    def _take(self, sel) -> "FrameDataset":
        return FrameDataset(self.symbol_rate, self.commands[sel],
                            self.received[sel], self.bias[sel],
                            self.swing[sel], self.square[sel], self.seed)


def draw_frame_command(cfg: dsp.LinkConfig, rng: np.random.Generator,
                       square: bool) -> tuple[np.ndarray, float, float]:
    """One random training frame: uniform operating point, random data."""
    bias = rng.uniform(50e-3, 100e-3)
    swing = rng.uniform(0.0, 80e-3)
    symbols = rng.integers(0, 4, size=cfg.symbols_per_frame)
    taps = (1.0, 1.0) if square else dsp.random_pulse_taps(rng)
    command = dsp.tx_command(symbols, taps, cfg, i_pp=swing, i_bias=bias)
    return command, bias, swing


_MAX_REDRAWS = 8


def _solve_frame(p: LaserParams, cfg: dsp.LinkConfig, k: int, seed: int,
                 square: bool, log=None):
    """Command, response and operating point for frame ``k``.

    A frame whose drive makes the solver diverge is redrawn from a
    shifted stream so the replacement stays reproducible from
    ``(seed, k)`` alone.
    """
    for attempt in range(_MAX_REDRAWS):
        rng = dsp.frame_rng(seed, k + (attempt << 32))
        command, bias, swing = draw_frame_command(cfg, rng, square)
        try:
            received = dsp.simulate_received(p, cfg, command, i_bias=bias)
        except DivergenceError as err:
            if log is not None:
                log(f"frame {k} diverged ({err}), redrawing")
            continue
        return command, received, bias, swing, attempt
    raise DivergenceError(
        f"frame {k} still diverges after {_MAX_REDRAWS} redraws")


def generate_dataset(p: LaserParams, cfg: dsp.LinkConfig, n_frames: int,
                     seed: int = 0, batch: int = 64,
                     log=None) -> FrameDataset:
    """Simulate ``n_frames`` frames, alternating square and random pulses.

    Every frame draws its own bias in [50, 100] mA and swing in
    [0, 80] mA so the set covers the whole operating plane.   Frame k is
    reproducible in isolation through ``frame_rng(seed, k)``.  Frames
    that make the solver diverge are redrawn with a fresh seed; the
    count of such frames is kept in ``regenerated``.
    """
    if n_frames <= 0:
        raise ValueError("need at least one frame")
    commands = np.empty((n_frames, cfg.frame_len))
    bias = np.empty(n_frames)
    swing = np.empty(n_frames)
    square = np.arange(n_frames) % 2 == 0
    for k in range(n_frames):
        rng = dsp.frame_rng(seed, k)
        commands[k], bias[k], swing[k] = draw_frame_command(
            cfg, rng, bool(square[k]))
    received = np.empty_like(commands)
    regenerated = 0
    for start in range(0, n_frames, batch):
        stop = min(start + batch, n_frames)
        try:
            received[start:stop] = dsp.simulate_received(
                p, cfg, commands[start:stop], i_bias=bias[start:stop])
        except DivergenceError:
            # isolate the offending frames and redraw each of them
            for k in range(start, stop):
                (commands[k], received[k], bias[k], swing[k],
                 attempts) = _solve_frame(p, cfg, k, seed, bool(square[k]),
                                          log=log)
                regenerated += attempts
    if regenerated and log is not None:
        log(f"regenerated {regenerated} diverged frame(s)")
    return FrameDataset(cfg.symbol_rate, commands, received, bias, swing,
                        square, seed, regenerated=regenerated)
