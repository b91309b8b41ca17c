"""Small trainable building blocks shared by both streams.

Feature maps are channels-last: (B, T, N, C).  Affine maps act on the trailing
axis through one flat gemm; BatchNorm normalizes each channel over every other
axis and can fuse a residual input and a trailing ReLU into the same pass.
"""

import numpy as np

from . import _kernels
from .tensor import Tensor, init_uniform


class Affine:
    """y = x @ w + b applied to the trailing axis."""

    def __init__(self, store, prefix, rng, c_in, c_out, bias=True):
        self.w = store.param(f"{prefix}.w", init_uniform(rng, (c_in, c_out), c_in))
        self.b = (store.param(f"{prefix}.b", init_uniform(rng, (c_out,), c_in))
                  if bias else None)
        self.c_in = c_in
        self.c_out = c_out

    def __call__(self, x):
        lead = x.shape[:-1]
        y = x.reshape(-1, self.c_in) @ self.w
        if self.b is not None:
            y = y + self.b
        return y.reshape(lead + (self.c_out,))


class BatchNorm:
    """Per-channel batch normalization over all non-channel axes.

    Training mode normalizes with batch statistics and updates running
    statistics with momentum 0.1; inference mode uses the running values.
    """

    EPS = 1e-5
    MOMENTUM = 0.1

    def __init__(self, store, prefix, channels):
        self.gamma = store.param(f"{prefix}.gamma", np.ones(channels))
        self.beta = store.param(f"{prefix}.beta", np.zeros(channels))
        self.running_mean = store.param(
            f"{prefix}.running_mean", np.zeros(channels), trainable=False)
        self.running_var = store.param(
            f"{prefix}.running_var", np.ones(channels), trainable=False)
        self.channels = channels

    def __call__(self, x, training, res=None, relu=False):
        c = self.channels
        x2 = x.data.reshape(-1, c)
        if training:
            mean, var = _kernels.bn_stats(x2)
            m = self.MOMENTUM
            self.running_mean.data[...] = (1 - m) * self.running_mean.data + m * mean
            self.running_var.data[...] = (1 - m) * self.running_var.data + m * var
        else:
            mean = self.running_mean.data.copy()
            var = self.running_var.data.copy()
        invstd = 1.0 / np.sqrt(var + self.EPS)
        out = np.empty_like(x.data)
        if res is not None:
            _kernels.bn_norm(x2, res.data.reshape(-1, c), True, mean, invstd,
                             self.gamma.data, self.beta.data, relu,
                             out.reshape(-1, c))
            prev = (x, self.gamma, self.beta, res)
        else:
            _kernels.bn_norm(x2, x2[:0], False, mean, invstd,
                             self.gamma.data, self.beta.data, relu,
                             out.reshape(-1, c))
            prev = (x, self.gamma, self.beta)
        node = Tensor(out, prev)
        if node.requires_grad:
            gamma, beta = self.gamma, self.beta

            def back():
                g2 = node.grad.reshape(-1, c)
                y2 = node.data.reshape(-1, c)
                gyb = np.empty_like(g2)
                dgamma = np.empty(c)
                dbeta = np.empty(c)
                _kernels.bn_bwd_reduce(x2, g2, y2, mean, invstd, relu,
                                       gyb, dgamma, dbeta)
                gamma._acc(dgamma)
                beta._acc(dbeta)
                if res is not None and res.requires_grad:
                    res._acc(gyb.reshape(res.data.shape))
                if x.requires_grad:
                    dx = np.empty_like(x2)
                    _kernels.bn_bwd_dx(x2, gyb, mean, invstd, gamma.data,
                                       dgamma, dbeta, training, dx)
                    x._acc(dx.reshape(x.data.shape))
            node._backward = back
        return node


def global_avg_pool(x):
    """Average a (B, T, N, C) map over frames and joints -> (B, C)."""
    return x.mean(axis=(1, 2))
