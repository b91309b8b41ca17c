"""Spatial-temporal transformer stream.

Spatial layers attend over the joints of each frame, temporal layers over the
frames of each joint; no positional encoding anywhere.  Each layer is
attention -> residual add -> batch norm -> feed-forward -> residual add ->
batch norm.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import Affine, BatchNorm, global_avg_pool
from .tensor import attention, init_uniform, matmul

SPATIAL = "spatial"
TEMPORAL = "temporal"


@dataclass
class SttConfig:
    layers: int = 3
    channels: int = 64
    heads: int = 8
    dk: int = 8
    dv: int = 8

    def __post_init__(self):
        if self.layers < 1 or self.channels < 1:
            raise ConfigError("stt needs layers >= 1 and channels >= 1")
        if self.heads < 1:
            raise ConfigError(f"stt.heads must be >= 1, got {self.heads}")
        if self.dk < 1 or self.dv < 1:
            raise ConfigError("stt key/value widths must be >= 1")


def attention_scores(q, k):
    """Raw pairwise scores S[i,j] = <q_i, k_j> for (tokens, width) inputs.

    Scaling by 1/sqrt(d_k) happens downstream, before the softmax.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(
            f"query width {q.shape[-1]} != key width {k.shape[-1]}")
    return matmul(q, k.transpose(*range(k.data.ndim - 2), k.data.ndim - 1,
                                 k.data.ndim - 2))


class MultiHeadAttention:
    """Per-head q/k/v projections, scaled-dot-product attention, head concat,
    and an output channel map."""

    def __init__(self, store, prefix, rng, c_in, c_out, heads, dk, dv):
        self.wq = store.param(f"{prefix}.wq",
                              init_uniform(rng, (heads, c_in, dk), c_in))
        self.wk = store.param(f"{prefix}.wk",
                              init_uniform(rng, (heads, c_in, dk), c_in))
        self.wv = store.param(f"{prefix}.wv",
                              init_uniform(rng, (heads, c_in, dv), c_in))
        self.out_map = Affine(store, f"{prefix}.out", rng, heads * dv, c_out)
        self.heads = heads
        self.dk = dk
        self.dv = dv
        self.c_in = c_in
        self.c_out = c_out
        self.last_weights = None  # (M, H, S, S) snapshot when requested

    def _project(self, tokens2d, w, width):
        m_s = tokens2d.shape[0]
        folded = w.transpose(1, 0, 2).reshape(self.c_in, self.heads * width)
        return (tokens2d @ folded).reshape(-1, self.tokens, self.heads, width) \
                                  .transpose(0, 2, 1, 3)

    def __call__(self, tokens, keep_weights=False):
        """tokens: (M, S, C_in) -> (M, S, C_out)."""
        m, s, c = tokens.shape
        if c != self.c_in:
            raise ShapeError(f"token width {c} != attention input {self.c_in}")
        self.tokens = s
        t2 = tokens.reshape(m * s, c)
        q = self._project(t2, self.wq, self.dk)
        k = self._project(t2, self.wk, self.dk)
        v = self._project(t2, self.wv, self.dv)
        scale = 1.0 / np.sqrt(self.dk)
        out = attention(q, k, v, scale)
        if keep_weights:
            scores = np.matmul(q.data, k.data.swapaxes(-1, -2)) * scale
            e = np.exp(scores - scores.max(axis=-1, keepdims=True))
            self.last_weights = e / e.sum(axis=-1, keepdims=True)
        merged = out.transpose(0, 2, 1, 3).reshape(m, s, self.heads * self.dv)
        return self.out_map(merged)


class TransformerLayer:
    def __init__(self, store, prefix, rng, config, mode):
        if mode not in (SPATIAL, TEMPORAL):
            raise ConfigError(f"unknown transformer mode {mode!r}")
        c = config.channels
        self.attn = MultiHeadAttention(store, f"{prefix}.attn", rng, c, c,
                                       config.heads, config.dk, config.dv)
        self.bn1 = BatchNorm(store, f"{prefix}.bn1", c)
        self.ff1 = Affine(store, f"{prefix}.ff1", rng, c, 2 * c)
        self.ff2 = Affine(store, f"{prefix}.ff2", rng, 2 * c, c)
        self.bn2 = BatchNorm(store, f"{prefix}.bn2", c)
        self.mode = mode
        self.channels = c

    def __call__(self, x, training, keep_weights=False):
        """x: (B, T, N, C) -> same shape."""
        b, t, n, c = x.shape
        if self.mode == SPATIAL:
            tokens = x.reshape(b * t, n, c)
            a = self.attn(tokens, keep_weights).reshape(b, t, n, c)
        else:
            xt = x.transpose(0, 2, 1, 3)
            tokens = xt.reshape(b * n, t, c)
            a = self.attn(tokens, keep_weights).reshape(b, n, t, c) \
                                               .transpose(0, 2, 1, 3)
        h = self.bn1(x + a, training)
        f = self.ff2(self.ff1(h).relu())
        return self.bn2(h + f, training)


class SttStream:
    """Input embedding then stacked (spatial -> temporal) transformer layers;
    returns the final feature map and its global average pool."""

    def __init__(self, store, prefix, rng, config, in_channels=3):
        self.embed = Affine(store, f"{prefix}.embed", rng, in_channels,
                            config.channels)
        self.layers = []
        for i in range(config.layers):
            self.layers.append(
                TransformerLayer(store, f"{prefix}.layer{i}.spatial", rng,
                                 config, SPATIAL))
            self.layers.append(
                TransformerLayer(store, f"{prefix}.layer{i}.temporal", rng,
                                 config, TEMPORAL))
        self.out_channels = config.channels
        self.config = config

    def __call__(self, x, training, keep_weights=False):
        x = self.embed(x)
        for layer in self.layers:
            x = layer(x, training, keep_weights)
        return x, global_avg_pool(x)
