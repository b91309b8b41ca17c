"""Reverse-mode autodiff over float64 numpy arrays.

A Tensor wraps an ndarray plus a gradient and a backward closure; ``backward()``
walks the tape in reverse topological order.  Cheap operations are plain numpy;
the hot paths (attention, batch norm, temporal convolution, graph aggregation)
are fused primitives with hand-written backward passes, all bound by the
finite-difference oracle in ``gradcheck``.
"""

import numpy as np

from . import _kernels
from ._blas import gemm_acc, gemm_acc_tn
from .errors import ConfigError, ContractError, ShapeError


def _unbroadcast(g, shape):
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "_backward", "_prev", "requires_grad")

    def __init__(self, data, prev=(), requires_grad=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._backward = None
        self._prev = prev
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in prev)
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def _acc(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Accumulate gradients of this scalar into every reachable leaf.

        The tape is dismantled as it is consumed; intermediate gradients are
        freed once used, so a graph can only be backpropagated once.
        """
        if self.data.size != 1:
            raise ContractError(
                f"backward() requires a scalar, got shape {self.data.shape}"
            )
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for child in node._prev:
                if id(child) not in seen:
                    stack.append((child, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            fn = node._backward
            if fn is not None and node.requires_grad:
                fn()
            if fn is not None and not isinstance(node, Parameter):
                node.grad = None  # leaf grads survive; intermediates are freed
            node._backward = None
            node._prev = ()

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = _wrap(other)
        out = Tensor(self.data + other.data, (self, other))
        if out.requires_grad:
            def back():
                self._acc(_unbroadcast(out.grad, self.data.shape))
                other._acc(_unbroadcast(out.grad, other.data.shape))
            out._backward = back
        return out

    def __sub__(self, other):
        other = _wrap(other)
        out = Tensor(self.data - other.data, (self, other))
        if out.requires_grad:
            def back():
                self._acc(_unbroadcast(out.grad, self.data.shape))
                other._acc(-_unbroadcast(out.grad, other.data.shape))
            out._backward = back
        return out

    def __mul__(self, other):
        other = _wrap(other)
        out = Tensor(self.data * other.data, (self, other))
        if out.requires_grad:
            def back():
                self._acc(_unbroadcast(out.grad * other.data, self.data.shape))
                other._acc(_unbroadcast(out.grad * self.data, other.data.shape))
            out._backward = back
        return out

    def __neg__(self):
        out = Tensor(-self.data, (self,))
        if out.requires_grad:
            out._backward = lambda: self._acc(-out.grad)
        return out

    __radd__ = __add__
    __rmul__ = __mul__

    def __rsub__(self, other):
        return _wrap(other) - self

    def __truediv__(self, other):
        return self * _wrap(other).pow(-1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def pow(self, p):
        """Elementwise power with a constant exponent."""
        out = Tensor(np.power(self.data, p), (self,))
        if out.requires_grad and p != 0:
            def back():
                self._acc(out.grad * p * np.power(self.data, p - 1))
            out._backward = back
        return out

    def log(self):
        out = Tensor(np.log(self.data), (self,))
        if out.requires_grad:
            out._backward = lambda: self._acc(out.grad / self.data)
        return out

    def exp(self):
        out = Tensor(np.exp(self.data), (self,))
        if out.requires_grad:
            out._backward = lambda: self._acc(out.grad * out.data)
        return out

    def sigmoid(self):
        x = self.data
        s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        out = Tensor(s, (self,))
        if out.requires_grad:
            out._backward = lambda: self._acc(out.grad * s * (1.0 - s))
        return out

    def log_sigmoid(self):
        """log(sigmoid(x)), computed stably as -log1p(exp(-x))."""
        out = Tensor(-np.logaddexp(0.0, -self.data), (self,))
        if out.requires_grad:
            def back():
                sig_neg = np.where(self.data >= 0,
                                   np.exp(-np.abs(self.data)) / (1.0 + np.exp(-np.abs(self.data))),
                                   1.0 / (1.0 + np.exp(-np.abs(self.data))))
                self._acc(out.grad * sig_neg)
            out._backward = back
        return out

    def relu(self):
        out = Tensor(np.maximum(self.data, 0.0), (self,))
        if out.requires_grad:
            out._backward = lambda: self._acc(out.grad * (self.data > 0.0))
        return out

    def clamp_min(self, lo):
        out = Tensor(np.maximum(self.data, lo), (self,))
        if out.requires_grad:
            out._backward = lambda: self._acc(out.grad * (self.data > lo))
        return out

    # -- shape & reductions --------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.data.shape
        out = Tensor(self.data.reshape(shape), (self,))
        if out.requires_grad:
            out._backward = lambda: self._acc(out.grad.reshape(src))
        return out

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = tuple(np.argsort(axes))
        out = Tensor(np.ascontiguousarray(self.data.transpose(axes)), (self,))
        if out.requires_grad:
            out._backward = lambda: self._acc(out.grad.transpose(inv))
        return out

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out.requires_grad:
            def back():
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._acc(np.broadcast_to(g, self.data.shape))
            out._backward = back
        return out

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in np.atleast_1d(axis)])
        out = Tensor(self.data.mean(axis=axis, keepdims=keepdims), (self,))
        if out.requires_grad:
            def back():
                g = out.grad / count
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._acc(np.broadcast_to(g, self.data.shape))
            out._backward = back
        return out

    def __getitem__(self, key):
        out = Tensor(self.data[key], (self,))
        if out.requires_grad:
            def back():
                g = np.zeros_like(self.data)
                g[key] = out.grad
                self._acc(g)
            out._backward = back
        return out

    def item(self):
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


class Parameter(Tensor):
    """Named trainable tensor; gradient buffer always allocated."""

    __slots__ = ("name", "trainable")

    def __init__(self, data, name, trainable=True):
        super().__init__(data, requires_grad=trainable)
        self.name = name
        self.trainable = trainable
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


class ParameterStore:
    """Insertion-ordered collection of uniquely named parameters."""

    def __init__(self):
        self._params = {}

    def add(self, param):
        if param.name in self._params:
            raise ConfigError(f"duplicate parameter name {param.name!r}")
        self._params[param.name] = param
        return param

    def param(self, name, data, trainable=True):
        return self.add(Parameter(data, name, trainable=trainable))

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def __contains__(self, name):
        return name in self._params

    def get(self, name):
        return self._params[name]

    def trainable(self):
        return [p for p in self._params.values() if p.trainable]

    def zero_grad(self):
        for p in self.trainable():
            p.zero_grad()


def init_uniform(rng, shape, fan_in):
    """Uniform in [-sqrt(1/fan_in), +sqrt(1/fan_in)] from a seeded generator."""
    bound = (1.0 / fan_in) ** 0.5
    return (rng.random(shape) * 2.0 - 1.0) * bound


# -- linear algebra ----------------------------------------------------------

def matmul(a, b):
    """Matrix product; leading dimensions broadcast."""
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(
            f"matmul needs >=2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}")
    out = Tensor(np.matmul(a.data, b.data), (a, b))
    if out.requires_grad:
        def back():
            g = out.grad
            if a.requires_grad:
                ga = np.matmul(g, b.data.swapaxes(-1, -2))
                a._acc(_unbroadcast(ga, a.data.shape))
            if b.requires_grad:
                gb = np.matmul(a.data.swapaxes(-1, -2), g)
                b._acc(_unbroadcast(gb, b.data.shape))
        out._backward = back
    return out


def softmax(x, axis):
    """exp(x - max) / sum(exp(x - max)) along `axis`."""
    x = _wrap(x)
    if not -x.data.ndim <= axis < x.data.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.data.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s, (x,))
    if out.requires_grad:
        def back():
            g = out.grad
            x._acc(s * (g - (g * s).sum(axis=axis, keepdims=True)))
        out._backward = back
    return out


def concat(tensors, axis):
    """Concatenate along a named axis."""
    tensors = [_wrap(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def back():
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                idx = [slice(None)] * out.grad.ndim
                idx[axis] = slice(lo, hi)
                t._acc(out.grad[tuple(idx)])
        out._backward = back
    return out


def take_axis(x, indices, axis):
    """Select (e.g. permute) indices along one axis; gradient scatter-adds."""
    x = _wrap(x)
    indices = np.asarray(indices, dtype=np.intp)
    out = Tensor(np.take(x.data, indices, axis=axis), (x,))
    if out.requires_grad:
        def back():
            g = np.zeros_like(x.data)
            gm = np.moveaxis(g, axis, 0)
            np.add.at(gm, indices, np.moveaxis(out.grad, axis, 0))
            x._acc(g)
        out._backward = back
    return out


def gather_rows(x, idx):
    """out[r] = x[r, idx[r]] for a 2-D tensor; used to pick p_t per sample."""
    x = _wrap(x)
    if x.data.ndim != 2:
        raise ShapeError(f"gather_rows needs a 2-D tensor, got {x.data.shape}")
    idx = np.asarray(idx, dtype=np.intp)
    rows = np.arange(x.data.shape[0])
    out = Tensor(x.data[rows, idx], (x,))
    if out.requires_grad:
        def back():
            g = np.zeros_like(x.data)
            np.add.at(g, (rows, idx), out.grad)
            x._acc(g)
        out._backward = back
    return out


# -- fused primitives --------------------------------------------------------

def temporal_conv(x, weight, bias=None, stride=1):
    """1-D convolution along the frame axis, per joint, zero padded to keep T.

    x: (B, T, N, C_in); weight: (K, C_in, C_out); bias: (C_out,) or None.
    K must be odd.  With stride s the output has ceil(T / s) frames.
    """
    x, weight = _wrap(x), _wrap(weight)
    if bias is not None:
        bias = _wrap(bias)
    if x.data.ndim != 4:
        raise ShapeError(f"temporal_conv expects (B,T,N,C), got {x.data.shape}")
    K, Cin, Cout = weight.data.shape
    if K % 2 == 0:
        raise ConfigError(f"temporal kernel size must be odd, got {K}")
    B, T, N, C = x.data.shape
    if C != Cin:
        raise ShapeError(f"temporal_conv channels {C} != kernel input {Cin}")
    if T < 1:
        raise ShapeError("temporal_conv needs at least one frame")
    pad = (K - 1) // 2
    Tout = (T - 1) // stride + 1
    xp = np.zeros((B, T + 2 * pad, N, C))
    xp[:, pad:pad + T] = x.data
    out = np.empty((B, Tout, N, Cout))
    out[...] = 0.0 if bias is None else bias.data
    for b in range(B):
        o2 = out[b].reshape(Tout * N, Cout)
        for kk in range(K):
            a2 = xp[b, kk:kk + stride * Tout:stride].reshape(Tout * N, C)
            gemm_acc(o2, a2, weight.data[kk])
    prev = (x, weight) if bias is None else (x, weight, bias)
    res = Tensor(out, prev)
    if res.requires_grad:
        def back():
            g = res.grad
            if bias is not None and bias.requires_grad:
                bias._acc(g.sum(axis=(0, 1, 2)))
            if weight.requires_grad:
                acc = np.zeros_like(weight.data)
                for b in range(B):
                    g2 = g[b].reshape(Tout * N, Cout)
                    for kk in range(K):
                        a2 = xp[b, kk:kk + stride * Tout:stride].reshape(Tout * N, C)
                        gemm_acc_tn(acc[kk], a2, g2)
                weight._acc(acc)
            if x.requires_grad:
                wt = np.ascontiguousarray(weight.data.transpose(0, 2, 1))
                dxp = np.zeros_like(xp)
                for b in range(B):
                    g2 = g[b].reshape(Tout * N, Cout)
                    for kk in range(K):
                        d2 = dxp[b, kk:kk + stride * Tout:stride].reshape(Tout * N, C)
                        gemm_acc(d2, g2, wt[kk])
                x._acc(np.ascontiguousarray(dxp[:, pad:pad + T]))
        res._backward = back
    return res


def attention(q, k, v, scale):
    """Fused softmax(q.k^T * scale).v over the token axis.

    q, k, v: (M, H, S, D) with matching token counts; returns (M, H, S, D).
    """
    q, k, v = _wrap(q), _wrap(k), _wrap(v)
    if q.data.shape != k.data.shape or q.data.shape[:3] != v.data.shape[:3]:
        raise ShapeError(
            f"attention shapes disagree: q {q.data.shape}, k {k.data.shape}, "
            f"v {v.data.shape}")
    M, H, S, D = q.data.shape
    out = np.empty_like(v.data)
    denom = np.empty((M, H, S))
    rowmax = np.empty((M, H, S))
    _kernels.attn_fwd(q.data, k.data, v.data, scale, out, denom, rowmax)
    res = Tensor(out, (q, k, v))
    if res.requires_grad:
        def back():
            dq = np.empty_like(q.data)
            dk = np.empty_like(k.data)
            dv = np.empty_like(v.data)
            _kernels.attn_bwd(q.data, k.data, v.data, res.grad, scale,
                              denom, rowmax, dq, dk, dv)
            q._acc(dq)
            k._acc(dk)
            v._acc(dv)
        res._backward = back
    return res


def graph_apply(mat, x):
    """Aggregate joints: out[b,t,i,:] = sum_j mat[b,i,j] x[b,t,j,:].

    mat: (B, N, N) (per-sample adjacency mix); x: (B, T, N, C).
    """
    mat, x = _wrap(mat), _wrap(x)
    B, T, N, C = x.data.shape
    if mat.data.shape != (B, N, N):
        raise ShapeError(
            f"graph_apply needs mat (B,N,N)=({B},{N},{N}), got {mat.data.shape}")
    out = np.empty_like(x.data)
    _kernels.graph_apply(mat.data, x.data, out)
    res = Tensor(out, (mat, x))
    if res.requires_grad:
        def back():
            g = res.grad
            if x.requires_grad:
                dx = np.empty_like(x.data)
                mt = np.ascontiguousarray(mat.data.swapaxes(1, 2))
                _kernels.graph_apply(mt, g, dx)
                x._acc(dx)
            if mat.requires_grad:
                gt = np.ascontiguousarray(g.swapaxes(1, 2)).reshape(B, N, T * C)
                xt = np.ascontiguousarray(x.data.swapaxes(1, 2)).reshape(B, N, T * C)
                mat._acc(np.matmul(gt, xt.swapaxes(1, 2)))
        res._backward = back
    return res
