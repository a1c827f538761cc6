"""Convolutional attention surrogate of the laser link.

The model maps a frame of drive current to the frame of detected power.
The scalar input enters through a per-channel affine embedding, and a
learned additive embedding marks positions.  Each block projects its
input to queries, keys and values with depthwise convolutions (giving
every attention head a locally filtered view of the drive history),
applies multi-head scaled dot-product attention over the whole frame,
and follows with a two-layer feed-forward stage.  Both stages are
residual.  A final affine layer maps the features back to power.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import sqrt as _sqrt

import numpy as np

from .. import diffcore as dc
from ..diffcore import DiffValue, ParamStore


@dataclass(frozen=True)
class CatConfig:
    power_ref: float                # output scale, W
    d_model: int = 32
    n_heads: int = 4
    n_blocks: int = 2
    kernel: int = 3                 # depthwise QKV projection taps
    ff_hidden: int = 64
    max_len: int = 1024
    current_center: float = 75e-3   # input normalization, A
    current_scale: float = 40e-3

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must split evenly across heads")
        if self.kernel % 2 == 0:
            raise ValueError("projection kernel must have odd length")
        if self.power_ref <= 0.0:
            raise ValueError("power_ref must be positive")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


def build_cat(cfg: CatConfig, rng: np.random.Generator) -> ParamStore:
    """Fresh parameter store for the configured model."""
    store = ParamStore()
    d, k, h = cfg.d_model, cfg.kernel, cfg.ff_hidden
    store.add("embed_w", rng.standard_normal(d))
    store.add("embed_b", np.zeros(d))
    store.add("pos", 0.02 * rng.standard_normal((cfg.max_len, d)))
    for b in range(cfg.n_blocks):
        for name in ("q", "k", "v"):
            store.add(f"block{b}_{name}_conv",
                      rng.standard_normal((d, k)) / _sqrt(k))
            store.add(f"block{b}_{name}_bias", np.zeros(d))
        store.add(f"block{b}_ff_w1", rng.standard_normal((d, h)) / _sqrt(d))
        store.add(f"block{b}_ff_b1", np.zeros(h))
        store.add(f"block{b}_ff_w2", rng.standard_normal((h, d)) / _sqrt(h))
        store.add(f"block{b}_ff_b2", np.zeros(d))
    store.add("out_w", rng.standard_normal((d, 1)) / _sqrt(d))
    store.add("out_b", np.array(0.5))
    return store


def _conv_projection(x: DiffValue, weight: DiffValue,
                     bias: DiffValue) -> DiffValue:
    moved = dc.transpose(x, (0, 2, 1))              # (B, d, T)
    filtered = dc.depthwise_conv1d(moved, weight)
    return dc.transpose(filtered, (0, 2, 1)) + bias


def _split_heads(x: DiffValue, cfg: CatConfig) -> DiffValue:
    b, t = x.shape[0], x.shape[1]
    headed = dc.reshape(x, (b, t, cfg.n_heads, cfg.head_dim))
    return dc.transpose(headed, (0, 2, 1, 3))       # (B, H, T, dh)


def _merge_heads(x: DiffValue, cfg: CatConfig) -> DiffValue:
    b, t = x.shape[0], x.shape[2]
    return dc.reshape(dc.transpose(x, (0, 2, 1, 3)), (b, t, cfg.d_model))


def cat_forward(store: ParamStore, cfg: CatConfig, commands) -> DiffValue:
    """Predicted received power, (B, T) for (B, T) drive current."""
    cmd = dc.as_value(commands)
    if cmd.ndim != 2:
        raise ValueError("expected a (B, T) command batch")
    t = cmd.shape[1]
    if t > cfg.max_len:
        raise ValueError(f"frame of {t} samples exceeds max_len "
                         f"{cfg.max_len}")
    u = (cmd - cfg.current_center) / cfg.current_scale
    x = dc.reshape(u, (cmd.shape[0], t, 1)) * store["embed_w"]
    x = x + store["embed_b"] + store["pos"][:t]
    scale = 1.0 / _sqrt(cfg.head_dim)
    for blk in range(cfg.n_blocks):
        # fold the attention scale into q while it is still small
        q = _split_heads(_conv_projection(
            x, store[f"block{blk}_q_conv"],
            store[f"block{blk}_q_bias"]) * scale, cfg)
        k = _split_heads(_conv_projection(
            x, store[f"block{blk}_k_conv"], store[f"block{blk}_k_bias"]), cfg)
        v = _split_heads(_conv_projection(
            x, store[f"block{blk}_v_conv"], store[f"block{blk}_v_bias"]), cfg)
        scores = q @ dc.transpose(k, (0, 1, 3, 2))
        x = x + _merge_heads(dc.softmax(scores) @ v, cfg)
        hidden = dc.relu(x @ store[f"block{blk}_ff_w1"]
                         + store[f"block{blk}_ff_b1"])
        x = x + hidden @ store[f"block{blk}_ff_w2"] + store[f"block{blk}_ff_b2"]
        if not np.isfinite(x.data).all():
            raise FloatingPointError(
                f"non-finite activations after block {blk}")
    y = x @ store["out_w"] + store["out_b"]
    return dc.reshape(y, (cmd.shape[0], t)) * cfg.power_ref
