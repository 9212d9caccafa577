"""Minimal feed-forward network with hand-written backprop and Adam.

Architecture: input linear -> `depth` residual tanh blocks -> output
linear. Parameters live in a flat dict of float64 arrays so optimizers,
checkpoints, and finite-difference checks can treat them uniformly.

    h0 = X W_in^T + b_in
    h_{k+1} = h_k + drop(tanh(h_k W1_k^T + b1_k) W2_k^T + b2_k)
    out = h_L W_out^T + b_out
"""

from __future__ import annotations

import numpy as np

__all__ = ["init_mlp", "mlp_forward", "mlp_backward", "Adam", "param_count"]


def init_mlp(in_dim: int, hidden: int, depth: int, out_dim: int, rng: np.random.Generator) -> dict:
    """Fan-in scaled uniform weights, zero biases. Deterministic given seed."""
    if min(in_dim, hidden, out_dim) < 1 or depth < 0:
        raise ValueError("dims must be positive")

    def lin(n_out, n_in):
        bound = 1.0 / np.sqrt(n_in)
        return rng.uniform(-bound, bound, size=(n_out, n_in))

    params = {"w_in": lin(hidden, in_dim), "b_in": np.zeros(hidden)}
    for k in range(depth):
        params[f"blk{k}_w1"] = lin(hidden, hidden)
        params[f"blk{k}_b1"] = np.zeros(hidden)
        params[f"blk{k}_w2"] = lin(hidden, hidden)
        params[f"blk{k}_b2"] = np.zeros(hidden)
    params["w_out"] = lin(out_dim, hidden)
    params["b_out"] = np.zeros(out_dim)
    params["__depth__"] = np.array(depth)
    return params


def _depth(params: dict) -> int:
    return int(params["__depth__"])


def mlp_forward(
    params: dict,
    X: np.ndarray,
    dropout_p: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, dict]:
    """Forward pass; returns (output, cache). Dropout only when p > 0 and rng given."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    h = X @ params["w_in"].T + params["b_in"]
    cache = {"X": X, "h": [h], "u": [], "drop": []}
    for k in range(_depth(params)):
        pre = h @ params[f"blk{k}_w1"].T + params[f"blk{k}_b1"]
        u = np.tanh(pre)
        v = u @ params[f"blk{k}_w2"].T + params[f"blk{k}_b2"]
        if dropout_p > 0.0 and rng is not None:
            # inverted dropout; the scaled mask is reused verbatim in backward
            scale = (rng.random(v.shape) >= dropout_p) / (1.0 - dropout_p)
            v = v * scale
            cache["drop"].append(scale)
        else:
            cache["drop"].append(None)
        h = h + v
        cache["u"].append(u)
        cache["h"].append(h)
    out = h @ params["w_out"].T + params["b_out"]
    return out, cache


def mlp_backward(params: dict, cache: dict, grad_out: np.ndarray) -> dict:
    """Exact reverse-mode gradients of sum(grad_out * output) w.r.t. every parameter."""
    if not cache or "h" not in cache:
        raise ValueError("missing forward cache")
    grad_out = np.atleast_2d(np.asarray(grad_out, dtype=float))
    depth = _depth(params)
    grads = {
        "w_out": grad_out.T @ cache["h"][-1],
        "b_out": grad_out.sum(axis=0),
    }
    gh = grad_out @ params["w_out"]
    for k in reversed(range(depth)):
        scale = cache["drop"][k]
        gv = gh if scale is None else gh * scale
        u = cache["u"][k]
        grads[f"blk{k}_w2"] = gv.T @ u
        grads[f"blk{k}_b2"] = gv.sum(axis=0)
        gu = gv @ params[f"blk{k}_w2"]
        gpre = gu * (1.0 - u**2)
        h_in = cache["h"][k]
        grads[f"blk{k}_w1"] = gpre.T @ h_in
        grads[f"blk{k}_b1"] = gpre.sum(axis=0)
        gh = gh + gpre @ params[f"blk{k}_w1"]
    grads["w_in"] = gh.T @ cache["X"]
    grads["b_in"] = gh.sum(axis=0)
    return grads


def param_count(params: dict) -> int:
    return sum(v.size for k, v in params.items() if not k.startswith("__"))


class Adam:
    """Standard Adam over a flat parameter dict."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            if k.startswith("__"):
                continue
            self.m[k] = b1 * self.m.get(k, 0.0) + (1 - b1) * g
            self.v[k] = b2 * self.v.get(k, 0.0) + (1 - b2) * g**2
            mhat = self.m[k] / (1 - b1**self.t)
            vhat = self.v[k] / (1 - b2**self.t)
            params[k] = params[k] - self.lr * mhat / (np.sqrt(vhat) + self.eps)
