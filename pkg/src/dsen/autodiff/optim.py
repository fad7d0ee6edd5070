"""Adam optimizer with bias correction."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def adam_update(value, grad, m, v, t, lr, beta1, beta2, eps):
    """One bias-corrected Adam step on plain arrays.

    Returns (new_value, new_m, new_v); ``t`` is the 1-based step count.
    """
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return value - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    """Adam over a name -> Tensor parameter mapping.

    ``step()`` consumes ``p.grad`` (treating None as zero) and clears it.
    State is exposed as plain arrays so it can be checkpointed.
    """

    def __init__(self, params: dict[str, Tensor], lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> None:
        self.t += 1
        for name, p in self.params.items():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            p.data, self.m[name], self.v[name] = adam_update(
                p.data, grad, self.m[name], self.v[name], self.t,
                self.lr, self.beta1, self.beta2, self.eps,
            )
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        """Flatten optimizer state for checkpointing."""
        out = {f"{prefix}.t": np.array([float(self.t)])}
        for name in self.params:
            out[f"{prefix}.m.{name}"] = self.m[name]
            out[f"{prefix}.v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, prefix: str, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays[f"{prefix}.t"][0])
        for name in self.params:
            self.m[name] = arrays[f"{prefix}.m.{name}"].copy()
            self.v[name] = arrays[f"{prefix}.v.{name}"].copy()
