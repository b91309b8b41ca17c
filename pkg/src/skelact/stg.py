"""Spatial-temporal graph convolution stream.

Each block applies an adaptive graph convolution (fixed normalized adjacency
+ learnable global matrix + per-sample embedded similarity, raised to powers
0..K_v with one channel map per power), then batch norm, ReLU, a temporal
convolution, batch norm, a residual connection, and ReLU.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .graph import build_adjacency, normalize_adjacency
from .nn import Affine, BatchNorm, global_avg_pool
from .tensor import Tensor, graph_apply, init_uniform, softmax, temporal_conv


@dataclass
class StgConfig:
    channels: tuple = (16, 16, 32, 32, 64, 64)
    kv: int = 1
    kt: int = 9
    strides: tuple = ()
    embed_dim: int = 8
    use_fixed: bool = True
    use_learnable: bool = True
    use_embedded: bool = True

    def __post_init__(self):
        if not self.channels:
            raise ConfigError("stg needs at least one block")
        if any(c < 1 for c in self.channels):
            raise ConfigError(f"stg channel widths must be positive: {self.channels}")
        if self.kv < 0:
            raise ConfigError(f"stg.kv must be >= 0, got {self.kv}")
        if not self.strides:
            self.strides = (1,) * len(self.channels)
        if len(self.strides) != len(self.channels):
            raise ConfigError("stg.strides length must match stg.channels")


class AdaptiveGraphLayer:
    """Adjacency mix for one layer: normalized fixed graph, a learnable matrix
    initialized from the raw adjacency, and an embedded per-sample similarity
    graph computed from the layer input."""

    def __init__(self, store, prefix, rng, topology, c_in, c_out, config):
        raw = build_adjacency(topology)
        self.fixed = normalize_adjacency(raw)  # never updated by the optimizer
        self.learnable = store.param(f"{prefix}.learnable", raw.copy())
        self.theta1 = Affine(store, f"{prefix}.embed1", rng, c_in,
                             config.embed_dim)
        self.theta2 = Affine(store, f"{prefix}.embed2", rng, c_in,
                             config.embed_dim)
        self.omega = [Affine(store, f"{prefix}.omega{k}", rng, c_in, c_out)
                      for k in range(config.kv + 1)]
        self.config = config
        self.joints = topology.joint_count
        self.last_embedded = None  # (B, N, N) snapshot of E, for inspection


def embedded_graph(features, layer):
    """Row-stochastic joint-similarity map E (one N x N matrix per sample).

    features: (B, T, N, C).  The two channel embeddings are multiplied per
    frame and the frame axis is mean-reduced before the row softmax.
    """
    b, t, n, _ = features.shape
    e1 = layer.theta1(features).transpose(0, 2, 1, 3).reshape(b, n, -1)
    e2 = layer.theta2(features).transpose(0, 2, 1, 3).reshape(b, n, -1)
    scores = (e1 @ e2.transpose(0, 2, 1)) * (1.0 / t)
    e = softmax(scores, axis=2)
    layer.last_embedded = e.data
    return e


def mix_matrix(features, layer):
    """Sum of the enabled adjacency contributions, shaped for graph_apply."""
    cfg = layer.config
    n = layer.joints
    parts = None
    if cfg.use_fixed:
        parts = Tensor(layer.fixed)
    if cfg.use_learnable:
        parts = layer.learnable if parts is None else parts + layer.learnable
    if cfg.use_embedded:
        e = embedded_graph(features, layer)
        parts = e if parts is None else parts + e
    if parts is None:
        parts = Tensor(np.zeros((n, n)))
    if len(parts.shape) == 2:
        parts = parts.reshape(1, n, n)
    return parts


def agcn_forward(h, layer):
    """sum_k omega_k((A~ + L + E)^k h) followed by ReLU; h: (B, T, N, C)."""
    mixed = mix_matrix(h, layer)
    out = layer.omega[0](h)
    hk = h
    for k in range(1, layer.config.kv + 1):
        hk = graph_apply(mixed, hk)
        out = out + layer.omega[k](hk)
    return out.relu()


class StgBlock:
    def __init__(self, store, prefix, rng, topology, c_in, c_out, stride, config):
        self.agcn = AdaptiveGraphLayer(store, f"{prefix}.agcn", rng, topology,
                                       c_in, c_out, config)
        self.bn1 = BatchNorm(store, f"{prefix}.bn1", c_out)
        kt = config.kt
        self.conv_w = store.param(
            f"{prefix}.tconv.w", init_uniform(rng, (kt, c_out, c_out), c_out * kt))
        self.conv_b = store.param(
            f"{prefix}.tconv.b", init_uniform(rng, (c_out,), c_out * kt))
        self.bn2 = BatchNorm(store, f"{prefix}.bn2", c_out)
        self.stride = stride
        self.residual = None
        if c_in != c_out:
            self.residual = Affine(store, f"{prefix}.res", rng, c_in, c_out)

    def __call__(self, x, training):
        y = agcn_forward(x, self.agcn)
        y = self.bn1(y, training, relu=True)
        y = temporal_conv(y, self.conv_w, self.conv_b, stride=self.stride)
        res = x if self.stride == 1 else x[:, ::self.stride]
        if self.residual is not None:
            res = self.residual(res)
        return self.bn2(y, training, res=res, relu=True)


class StgStream:
    """Stacked AGCN+TCN blocks; returns the final feature map and its global
    average pool (the graph-stream action representation)."""

    def __init__(self, store, prefix, rng, topology, config, in_channels=3):
        self.blocks = []
        c_prev = in_channels
        for i, (c, s) in enumerate(zip(config.channels, config.strides)):
            self.blocks.append(StgBlock(store, f"{prefix}.block{i}", rng,
                                        topology, c_prev, c, s, config))
            c_prev = c
        self.out_channels = c_prev
        self.config = config

    def __call__(self, x, training):
        for block in self.blocks:
            x = block(x, training)
        return x, global_avg_pool(x)


def joint_cosine_similarity(feature_map):
    """Mean pairwise cosine similarity between per-joint feature vectors.

    feature_map: (B, T, N, C) ndarray; joints are summarized by their
    frame-averaged channel vectors.
    """
    vecs = feature_map.mean(axis=1)  # (B, N, C)
    norms = np.linalg.norm(vecs, axis=2, keepdims=True)
    unit = vecs / np.maximum(norms, 1e-12)
    sims = unit @ unit.transpose(0, 2, 1)  # (B, N, N)
    n = sims.shape[1]
    iu = np.triu_indices(n, k=1)
    return float(sims[:, iu[0], iu[1]].mean())


def oversmoothing_probe(depths, seed, topology=None, frames=32, batch=8,
                        width=16):
    """Per depth: mean pairwise joint cosine similarity of a randomly
    initialized stream applied to random input."""
    from .graph import ntu_topology
    from .tensor import ParameterStore

    if topology is None:
        topology = ntu_topology()
    results = {}
    for depth in depths:
        if depth < 1:
            raise ConfigError(f"probe depth must be >= 1, got {depth}")
        rng = np.random.default_rng(seed)
        cfg = StgConfig(channels=(width,) * depth)
        store = ParameterStore()
        stream = StgStream(store, "probe", rng, topology, cfg)
        x = Tensor(rng.standard_normal((batch, frames, topology.joint_count, 3)))
        feature_map, _ = stream(x, training=True)
        results[depth] = joint_cosine_similarity(feature_map.data)
    return results
