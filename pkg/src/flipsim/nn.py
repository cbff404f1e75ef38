"""Minimal dense networks with hand-written backprop and Adam.

Hidden layers use tanh, the output layer is linear. Forward passes cache
activations; backward returns parameter gradients in the same structure as
the parameter list. Deterministic given the same inputs and weights.
"""

from __future__ import annotations

import numpy as np


def orthogonal(rng: np.random.Generator, shape: tuple[int, int], gain: float) -> np.ndarray:
    a = rng.normal(size=shape)
    u, _, vt = np.linalg.svd(a, full_matrices=False)
    q = u if u.shape == shape else vt
    return gain * q


class Mlp:
    """Dense tanh network: widths[0] -> ... -> widths[-1] (linear head)."""

    def __init__(self, widths: tuple[int, ...], rng: np.random.Generator | None = None,
                 head_gain: float = 1.0, dtype=np.float32):
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        self.widths = tuple(int(w) for w in widths)
        self.dtype = dtype
        self.Ws: list[np.ndarray] = []
        self.bs: list[np.ndarray] = []
        rng = rng or np.random.default_rng(0)
        for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
            last = i == len(widths) - 2
            gain = head_gain if last else np.sqrt(2.0)
            self.Ws.append(orthogonal(rng, (n_in, n_out), gain).astype(dtype))
            self.bs.append(np.zeros(n_out, dtype=dtype))

    def forward(self, x: np.ndarray, cache: list | None = None) -> np.ndarray:
        """Forward pass; pass a list to receive the activation cache."""
        h = np.asarray(x, dtype=self.dtype)
        if h.shape[-1] != self.widths[0]:
            raise ValueError(f"input width {h.shape[-1]} != {self.widths[0]}")
        if cache is not None:
            cache.append(h)
        last = len(self.Ws) - 1
        for i, (W, b) in enumerate(zip(self.Ws, self.bs)):
            h = h @ W + b
            if i != last:
                h = np.tanh(h)
            if cache is not None:
                cache.append(h)
        return h

    def backward(self, cache: list, grad_out: np.ndarray):
        """Gradients of sum(grad_out * output) wrt parameters and input."""
        gWs = [None] * len(self.Ws)
        gbs = [None] * len(self.bs)
        g = np.asarray(grad_out, dtype=self.dtype)
        for i in range(len(self.Ws) - 1, -1, -1):
            h_in = cache[i]
            if i != len(self.Ws) - 1:
                h_out = cache[i + 1]
                g = g * (1.0 - h_out * h_out)
            flat_in = h_in.reshape(-1, h_in.shape[-1])
            flat_g = g.reshape(-1, g.shape[-1])
            gWs[i] = flat_in.T @ flat_g
            gbs[i] = flat_g.sum(axis=0)
            g = g @ self.Ws[i].T
        return gWs, gbs, g

    def params(self) -> list[np.ndarray]:
        return list(self.Ws) + list(self.bs)

    def set_params(self, params: list[np.ndarray]):
        n = len(self.Ws)
        self.Ws = [np.asarray(p, dtype=self.dtype) for p in params[:n]]
        self.bs = [np.asarray(p, dtype=self.dtype) for p in params[n:]]

    def copy(self) -> "Mlp":
        out = Mlp.__new__(Mlp)
        out.widths = self.widths
        out.dtype = self.dtype
        out.Ws = [W.copy() for W in self.Ws]
        out.bs = [b.copy() for b in self.bs]
        return out


class Adam:
    """Adaptive moment estimation over a flat list of parameter arrays."""

    def __init__(self, params: list[np.ndarray], lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray],
             lr: float | None = None) -> list[np.ndarray]:
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            out.append(p - lr * m_hat / (np.sqrt(v_hat) + self.eps))
        return out
