"""Second-order Volterra filters: evaluation, LS fitting, diff support.

The kernel acts on a causal lag window x[n], x[n-1], ..., x[n-M+1] and
produces

    y[n] = h0 + sum_i lin[i] x[n-i] + sum_ij quad[i,j] x[n-i] x[n-j]

with a symmetric quadratic matrix.  Only the upper triangle of ``quad``
is identifiable, so the least-squares fit works on the M(M+1)/2 distinct
products and mirrors the result.  Tap counts quoted for the kernel are
linear plus full quadratic entries (M + M^2); the constant h0 rides along
as an uncounted bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import graph
from .graph import DiffValue, as_value

DEFAULT_MEMORY = 16


@dataclass
class FitReport:
    condition: float
    rank: int
    rms_residual: float
    ridge: float = 0.0


@dataclass
class VolterraKernel:
    bias: float
    linear: np.ndarray          # (M,)
    quad: np.ndarray            # (M, M), symmetric

    def __post_init__(self):
        self.linear = np.asarray(self.linear, dtype=float)
        self.quad = np.asarray(self.quad, dtype=float)
        m = self.linear.shape[0]
        if self.quad.shape != (m, m):
            raise ValueError("quadratic matrix does not match memory length")
        if not np.allclose(self.quad, self.quad.T):
            raise ValueError("quadratic matrix must be symmetric")

    @property
    def memory(self) -> int:
        return self.linear.shape[0]

    @property
    def n_taps(self) -> int:
        return self.linear.size + self.quad.size


def lag_matrix(x: np.ndarray, memory: int) -> np.ndarray:
    """(T, M) matrix of causal lags with zero history."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("expected a one dimensional signal")
    padded = np.concatenate([np.zeros(memory - 1), x])
    windows = np.lib.stride_tricks.sliding_window_view(padded, memory)
    return windows[:, ::-1]


def volterra_apply(kernel: VolterraKernel, x: np.ndarray) -> np.ndarray:
    lags = lag_matrix(x, kernel.memory)
    quad = np.einsum("ni,ij,nj->n", lags, kernel.quad, lags)
    return kernel.bias + lags @ kernel.linear + quad


def lag_matrix_diff(x: DiffValue, memory: int) -> DiffValue:
    """Differentiable version of :func:`lag_matrix` for 1-D signals."""
    x = as_value(x)
    if x.ndim != 1:
        raise ValueError("expected a one dimensional signal")
    length = x.shape[0]
    padded = graph.pad_last(x, memory - 1, 0)
    cols = [padded[memory - 1 - i:memory - 1 - i + length]
            for i in range(memory)]
    return graph.stack(cols, axis=1)


def volterra_apply_diff(bias, linear, quad, x) -> DiffValue:
    """Volterra response where signal and coefficients may carry grads.

    ``linear`` is (M,) shaped, ``quad`` (M, M); symmetry of ``quad`` is
    the caller's business (training keeps it implicit: an asymmetric
    matrix acts identically to its symmetric part).
    """
    linear = as_value(linear)
    quad = as_value(quad)
    memory = linear.shape[0]
    lags = lag_matrix_diff(as_value(x), memory)
    lin_term = graph.reshape(lags @ graph.reshape(linear, (memory, 1)), (-1,))
    quad_term = graph.reduce_sum((lags @ quad) * lags, axis=1)
    return as_value(bias) + lin_term + quad_term


def fit_least_squares(a: np.ndarray, b: np.ndarray,
                      ridge: float = 1e-8) -> tuple[np.ndarray, FitReport]:
    """Column-scaled least squares with a ridge fallback.

    Columns are normalized to unit peak before solving, which keeps the
    conditioning honest when raw regressors span wildly different
    magnitudes.  A rank-deficient system is re-solved with Tikhonov
    weight ``ridge`` (relative to the largest singular value).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or b.ndim != 1 or a.shape[0] != b.shape[0]:
        raise ValueError("expected (T, K) design and (T,) target")
    scales = np.abs(a).max(axis=0)
    if np.any(scales == 0.0):
        scales = np.where(scales == 0.0, 1.0, scales)
    scaled = a / scales
    coef, _, rank, sv = np.linalg.lstsq(scaled, b, rcond=None)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0.0 else np.inf
    used_ridge = 0.0
    if rank < a.shape[1]:
        used_ridge = ridge * float(sv[0]) ** 2
        gram = scaled.T @ scaled + used_ridge * np.eye(a.shape[1])
        coef = np.linalg.solve(gram, scaled.T @ b)
    residual = float(np.sqrt(np.mean((scaled @ coef - b) ** 2)))
    return coef / scales, FitReport(cond, int(rank), residual, used_ridge)


def _triangle_index(memory: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(memory)


def volterra_design(x: np.ndarray, memory: int) -> np.ndarray:
    """Design matrix [1 | lags | upper-triangle products] of shape
    (T, 1 + M + M(M+1)/2)."""
    lags = lag_matrix(x, memory)
    rows, cols = _triangle_index(memory)
    products = lags[:, rows] * lags[:, cols]
    ones = np.ones((lags.shape[0], 1))
    return np.hstack([ones, lags, products])


def kernel_from_coefficients(coef: np.ndarray,
                             memory: int = DEFAULT_MEMORY) -> VolterraKernel:
    """Rebuild a kernel from the stacked design coefficients.

    ``coef`` is laid out like the :func:`volterra_design` columns; each
    off-diagonal triangle coefficient splits evenly across the two
    symmetric matrix entries.
    """
    expected = 1 + memory + memory * (memory + 1) // 2
    if coef.shape != (expected,):
        raise ValueError(f"expected {expected} coefficients for memory "
                         f"{memory}, got {coef.shape}")
    bias = float(coef[0])
    linear = coef[1:1 + memory]
    quad = np.zeros((memory, memory))
    rows, cols = _triangle_index(memory)
    tri = coef[1 + memory:]
    quad[rows, cols] = tri
    quad[cols, rows] = tri
    off_diag = rows != cols
    quad[rows[off_diag], cols[off_diag]] *= 0.5
    quad[cols[off_diag], rows[off_diag]] *= 0.5
    return VolterraKernel(bias, linear, quad)


def fit_volterra(x: np.ndarray, y: np.ndarray,
                 memory: int = DEFAULT_MEMORY) -> tuple[VolterraKernel,
                                                        FitReport]:
    """Least-squares Volterra kernel mapping x to y sample by sample."""
    y = np.asarray(y, dtype=float)
    design = volterra_design(x, memory)
    if design.shape[0] < design.shape[1]:
        raise ValueError("not enough samples to identify the kernel")
    coef, report = fit_least_squares(design, y)
    return kernel_from_coefficients(coef, memory), report
