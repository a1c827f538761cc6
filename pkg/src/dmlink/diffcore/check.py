"""Finite-difference validation of recorded gradients."""

from __future__ import annotations

import numpy as np


def gradient_check(fn, params, n_coords: int = 32, step: float = 1e-5,
                   seed: int = 0) -> float:
    """Worst relative error between tape and central-difference gradients.

    ``fn`` rebuilds the scalar loss from scratch on each call; ``params``
    are the leaves to probe.  For every parameter up to ``n_coords``
    random coordinates are perturbed by ``+-step``.  The error is
    normalized by max(|analytic|, |numeric|, 1e-4); the floor keeps
    round-off noise on near-zero partial derivatives from dominating the
    report.
    """
    params = list(params)
    for p in params:
        p.grad = None
    fn().backward()
    recorded = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for param, grad in zip(params, recorded):
        flat = param.data.reshape(-1)
        grad_flat = grad.reshape(-1)
        picks = rng.choice(flat.size, size=min(n_coords, flat.size),
                           replace=False)
        for i in picks:
            keep = flat[i]
            flat[i] = keep + step
            high = float(fn().data)
            flat[i] = keep - step
            low = float(fn().data)
            flat[i] = keep
            numeric = (high - low) / (2.0 * step)
            analytic = float(grad_flat[i])
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric),
                                                1e-4)
            worst = max(worst, err)
    return worst
