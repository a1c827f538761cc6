"""Named parameter collections and the Adam update rule."""

from __future__ import annotations

import numpy as np

from .graph import DiffValue


class ParamStore:
    """Ordered mapping of names to trainable :class:`DiffValue` leaves."""

    def __init__(self):
        self._params: dict[str, DiffValue] = {}

    def add(self, name: str, value) -> DiffValue:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered")
        param = DiffValue(np.array(value, dtype=float), requires_grad=True)
        self._params[name] = param
        return param

    def __getitem__(self, name: str) -> DiffValue:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def values(self):
        return list(self._params.values())

    def zero_grad(self):
        for param in self._params.values():
            param.grad = None

    def n_scalars(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Copies of all parameter arrays, for checkpointing."""
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        missing = set(self._params) - set(arrays)
        if missing:
            raise ValueError(f"checkpoint lacks parameters {sorted(missing)}")
        for name, param in self._params.items():
            value = np.asarray(arrays[name], dtype=float)
            if value.shape != param.data.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: stored {value.shape}, "
                    f"expected {param.data.shape}")
            param.data = value.copy()


class Adam:
    """Adam with bias correction over a ParamStore or parameter list."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if isinstance(params, ParamStore):
            params = params.values()
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]
        self._t = 0

    def step(self):
        self._t += 1
        b1, b2 = self.beta1, self.beta2
        for k, param in enumerate(self.params):
            if param.grad is None:
                continue
            g = param.grad
            self._m[k] = b1 * self._m[k] + (1.0 - b1) * g
            self._v[k] = b2 * self._v[k] + (1.0 - b2) * g * g
            m_hat = self._m[k] / (1.0 - b1 ** self._t)
            v_hat = self._v[k] / (1.0 - b2 ** self._t)
            param.data = param.data - self.lr * m_hat / (np.sqrt(v_hat)
                                                         + self.eps)

    def zero_grad(self):
        for param in self.params:
            param.grad = None
