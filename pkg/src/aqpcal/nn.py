"""Minimal neural-network kernel: dense / 3x3 conv / 2x2 max-pool / relu
layers, MAPE loss, Adam, and finite-difference gradient checking.

Everything is float64 and batch-first.  Layers are parameter containers with
pure forward/backward functions (caches are passed explicitly), so a loaded
network can serve concurrent predictions.  Conv and pool dispatch to the
kernel backend; dense layers are BLAS either way.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels, rng


class Dense:
    """y = x @ W.T + b with W of shape (out, in)."""

    kind = "dense"

    def __init__(self, n_in: int, n_out: int):
        self.n_in = n_in
        self.n_out = n_out
        self.w = np.zeros((n_out, n_in))
        self.b = np.zeros(n_out)

    def init_params(self, seed: int) -> None:
        limit = 1.0 / math.sqrt(self.n_in)
        u = rng.uniform_array(seed, self.n_out * self.n_in)
        self.w = ((u * 2.0 - 1.0) * limit).reshape(self.n_out, self.n_in)
        self.b = np.zeros(self.n_out)

    def expects(self, shape):
        return len(shape) == 2 and shape[1] == self.n_in

    def forward(self, x):
        return x @ self.w.T + self.b, x

    def backward(self, cache, gy):
        gx = gy @ self.w
        return gx, [gy.T @ cache, gy.sum(axis=0)]

    def params(self):
        return [("w", self.w), ("b", self.b)]

    def set_params(self, arrays):
        self.w, self.b = arrays


class ReLU:
    kind = "relu"

    def init_params(self, seed):
        pass

    def expects(self, shape):
        return True

    def forward(self, x):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, cache, gy):
        return np.where(cache, gy, 0.0), []

    def params(self):
        return []

    def set_params(self, arrays):
        pass


class Flatten:
    kind = "flatten"

    def init_params(self, seed):
        pass

    def expects(self, shape):
        return len(shape) >= 2

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, gy):
        return gy.reshape(cache), []

    def params(self):
        return []

    def set_params(self, arrays):
        pass


class Conv2d:
    """Valid cross-correlation with a fixed 3x3 kernel, stride 1, no padding."""

    kind = "conv2d"

    def __init__(self, c_in: int, c_out: int):
        self.c_in = c_in
        self.c_out = c_out
        self.w = np.zeros((c_out, c_in, 3, 3))
        self.b = np.zeros(c_out)

    def init_params(self, seed: int) -> None:
        fan_in = self.c_in * 9
        limit = 1.0 / math.sqrt(fan_in)
        u = rng.uniform_array(seed, self.c_out * fan_in)
        self.w = ((u * 2.0 - 1.0) * limit).reshape(self.c_out, self.c_in, 3, 3)
        self.b = np.zeros(self.c_out)

    def expects(self, shape):
        return (
            len(shape) == 4
            and shape[1] == self.c_in
            and shape[2] >= 3
            and shape[3] >= 3
        )

    def forward(self, x):
        return kernels.conv2d_forward(x, self.w, self.b), x

    def backward(self, cache, gy):
        gx, gw, gb = kernels.conv2d_backward(cache, self.w, gy)
        return gx, [gw, gb]

    def params(self):
        return [("w", self.w), ("b", self.b)]

    def set_params(self, arrays):
        self.w, self.b = arrays


class MaxPool2:
    """Non-overlapping 2x2 max; odd trailing rows/columns are dropped."""

    kind = "maxpool2x2"

    def init_params(self, seed):
        pass

    def expects(self, shape):
        return len(shape) == 4 and shape[2] >= 2 and shape[3] >= 2

    def forward(self, x):
        y, arg = kernels.maxpool2_forward(x)
        return y, (arg, x.shape[2], x.shape[3])

    def backward(self, cache, gy):
        arg, h_in, w_in = cache
        return kernels.maxpool2_backward(arg, gy, h_in, w_in), []

    def params(self):
        return []

    def set_params(self, arrays):
        pass


def mape_loss(pred: np.ndarray, target: np.ndarray):
    """Mean absolute percentage error and its gradient w.r.t. pred.

    loss = mean(|target - pred| / |target|); the subgradient at an exact fit
    is taken as 0.  Targets with magnitude <= 1e-12 are rejected.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 1 or pred.size < 1:
        raise ValueError(f"mape_loss needs equal-length vectors, got {pred.shape} vs {target.shape}")
    if (np.abs(target) <= 1e-12).any():
        raise ValueError("MAPE undefined at zero target")
    n = pred.size
    at = np.abs(target)
    loss = float(np.mean(np.abs(target - pred) / at))
    grad = -np.sign(target - pred) / (n * at)
    return loss, grad


class Adam:
    """Adaptive moment optimizer with bias correction; updates in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def gradient_check(net, tab, hist, target, eps, n_positions=200, seed=0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``net`` needs param_arrays() and loss_and_param_grads(tab, hist, target).
    At least ``n_positions`` parameter positions are probed (all of them when
    the network is smaller than that).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must be in [1e-7, 1e-3], got {eps}")
    params = net.param_arrays()
    _, grads = net.loss_and_param_grads(tab, hist, target)
    sizes = [p.size for p in params]
    total = sum(sizes)
    if total <= n_positions:
        chosen = np.arange(total)
    else:
        chosen = rng.permutation(seed, total)[:n_positions]
    bounds = np.cumsum([0] + sizes)
    worst = 0.0
    for flat in chosen:
        ai = int(np.searchsorted(bounds, flat, side="right") - 1)
        pos = int(flat - bounds[ai])
        arr = params[ai]
        old = arr.flat[pos]
        arr.flat[pos] = old + eps
        lp, _ = net.loss_and_param_grads(tab, hist, target)
        arr.flat[pos] = old - eps
        lm, _ = net.loss_and_param_grads(tab, hist, target)
        arr.flat[pos] = old
        fd = (lp - lm) / (2.0 * eps)
        an = grads[ai].flat[pos]
        rel = abs(an - fd) / max(abs(an), abs(fd), 1e-12)
        if rel > worst:
            worst = rel
    return worst


def write_tensor(lines: list, name: str, arr: np.ndarray) -> None:
    """Append a text block encoding ``arr`` at full precision."""
    dims = "x".join(str(d) for d in arr.shape)
    lines.append(f"tensor {name} {dims}")
    flat = arr.reshape(-1)
    for i in range(0, flat.size, 8):
        lines.append(" ".join(repr(float(v)) for v in flat[i : i + 8]))


def read_tensors(lines) -> dict:
    """Parse all tensor blocks from an iterable of lines."""
    out = {}
    it = iter(lines)
    name = None
    shape = None
    vals: list[float] = []
    need = 0

    def finish():
        if name is not None:
            if len(vals) != need:
                raise ValueError(f"tensor {name}: expected {need} values, got {len(vals)}")
            out[name] = np.array(vals, dtype=np.float64).reshape(shape)

    for line in it:
        line = line.strip()
        if line.startswith("tensor "):
            finish()
            _, name, dims = line.split(" ")
            shape = tuple(int(d) for d in dims.split("x"))
            need = int(np.prod(shape)) if shape else 1
            vals = []
        elif line and name is not None:
            vals.extend(float(v) for v in line.split(" "))
    finish()
    return out
