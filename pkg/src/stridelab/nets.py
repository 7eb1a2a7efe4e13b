"""Minimal differentiable layers: MLP, strided 3x3 convolution, Adam.

Parameters live in flat dicts of numpy arrays; every forward returns a
cache that the matching backward consumes. Gradients are exact (verified
against central finite differences in the tests).
"""
import numpy as np

from .errors import DataError


def _he_scale(fan_in):
    return np.sqrt(2.0 / fan_in)


def linear_init(rng, fan_in, fan_out, scale=None, dtype=np.float64):
    s = _he_scale(fan_in) if scale is None else scale
    w = rng.normal(0.0, s, size=(fan_in, fan_out)).astype(dtype)
    b = np.zeros(fan_out, dtype=dtype)
    return w, b


def mlp_init(rng, sizes, out_scale=0.01, dtype=np.float64, prefix=""):
    """Parameter dict for an MLP with rectifier hidden layers."""
    params = {}
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        w, b = linear_init(rng, n_in, n_out, scale=out_scale if last else None, dtype=dtype)
        params[f"{prefix}W{i}"] = w
        params[f"{prefix}b{i}"] = b
    return params


def mlp_num_layers(params, prefix=""):
    n = 0
    while f"{prefix}W{n}" in params:
        n += 1
    return n


def mlp_forward(params, x, prefix=""):
    """Affine + rectifier chain; identity on the output layer."""
    n = mlp_num_layers(params, prefix)
    if n == 0:
        raise DataError("empty MLP parameter dict")
    h = x
    acts = [x]
    masks = []
    for i in range(n):
        w = params[f"{prefix}W{i}"]
        if h.shape[-1] != w.shape[0]:
            raise DataError(
                f"mlp layer {i}: input dim {h.shape[-1]} != weight fan-in {w.shape[0]}"
            )
        a = h @ w + params[f"{prefix}b{i}"]
        if i < n - 1:
            mask = a > 0
            h = a * mask
            masks.append(mask)
        else:
            h = a
        acts.append(h)
    return h, (acts, masks, prefix, n)


def mlp_backward(params, cache, gy):
    """Gradients for every parameter plus the input gradient."""
    acts, masks, prefix, n = cache
    grads = {}
    g = gy
    for i in reversed(range(n)):
        if i < n - 1:
            g = g * masks[i]
        h_in = acts[i]
        grads[f"{prefix}W{i}"] = h_in.reshape(-1, h_in.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        grads[f"{prefix}b{i}"] = g.reshape(-1, g.shape[-1]).sum(axis=0)
        g = g @ params[f"{prefix}W{i}"].T
    return grads, g


def mlp_input_grad(params, cache, gy=None):
    """d(output)/d(input) contraction without parameter grads (masks fixed)."""
    acts, masks, prefix, n = cache
    g = gy if gy is not None else np.ones_like(acts[-1])
    for i in reversed(range(n)):
        if i < n - 1:
            g = g * masks[i]
        g = g @ params[f"{prefix}W{i}"].T
    return g


def conv_init(rng, c_in, c_out, k=3, dtype=np.float64):
    s = _he_scale(c_in * k * k)
    w = rng.normal(0.0, s, size=(c_out, c_in, k, k)).astype(dtype)
    b = np.zeros(c_out, dtype=dtype)
    return w, b


def _im2col(x, k, stride, pad):
    n, c, h, w = x.shape
    hp = (h + 2 * pad - k) // stride + 1
    wp = (w + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, k, k, hp, wp), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + stride * hp : stride, j : j + stride * wp : stride]
    return cols.reshape(n, c * k * k, hp * wp), hp, wp


def _col2im(cols, x_shape, k, stride, pad):
    n, c, h, w = x_shape
    hp = (h + 2 * pad - k) // stride + 1
    wp = (w + 2 * pad - k) // stride + 1
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    cols = cols.reshape(n, c, k, k, hp, wp)
    for i in range(k):
        for j in range(k):
            xp[:, :, i : i + stride * hp : stride, j : j + stride * wp : stride] += cols[:, :, i, j]
    return xp[:, :, pad : pad + h, pad : pad + w]


def conv2d_forward(w, b, x, stride=2, pad=1):
    """x (N, C, H, W) -> (N, C_out, H', W')."""
    c_out, c_in, k, _ = w.shape
    cols, hp, wp = _im2col(x, k, stride, pad)
    n, ckk, p = cols.shape
    # one big GEMM: (n*p, ckk) @ (ckk, c_out)
    flat = np.ascontiguousarray(cols.transpose(0, 2, 1)).reshape(n * p, ckk)
    y = (flat @ w.reshape(c_out, -1).T + b).reshape(n, p, c_out).transpose(0, 2, 1)
    return (
        np.ascontiguousarray(y).reshape(n, c_out, hp, wp),
        (flat, cols.shape, x.shape, w.shape, stride, pad),
    )


def conv2d_backward(w, cache, gy):
    flat, cols_shape, x_shape, w_shape, stride, pad = cache
    c_out, c_in, k, _ = w_shape
    n, ckk, p = cols_shape
    g = np.ascontiguousarray(gy.reshape(n, c_out, p).transpose(0, 2, 1)).reshape(n * p, c_out)
    gw = (g.T @ flat).reshape(w_shape)
    gb = g.sum(axis=0)
    gcols = (g @ w.reshape(c_out, -1)).reshape(n, p, ckk).transpose(0, 2, 1)
    gx = _col2im(np.ascontiguousarray(gcols), x_shape, k, stride, pad)
    return gw, gb, gx


def adam_init(params):
    return {
        "m": {k: np.zeros_like(v) for k, v in params.items()},
        "v": {k: np.zeros_like(v) for k, v in params.items()},
        "t": 0,
    }


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update with bias correction; mutates params and state."""
    state["t"] += 1
    t = state["t"]
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, g in grads.items():
        m = state["m"][k]
        v = state["v"][k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params
