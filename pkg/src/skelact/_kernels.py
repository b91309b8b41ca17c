"""Numba-compiled inner loops for the hot primitives.

Everything here is pure float64 and run-to-run deterministic: parallel loops
only ever write disjoint slices, and every reduction runs in a fixed order on
a single thread.  The attention kernels are fused (flash-style): the S x S
score matrix is never materialized; only per-row softmax max/denominator are
kept for the backward pass.
"""

import numpy as np
from numba import njit, prange

# exp(x) = 2^k * p(r), Cody-Waite range reduction, degree-13 Taylor tail.
# Accurate to ~1 ulp; the 2^k scale is applied through the exponent bits,
# collected per row in an int64 scratch and reinterpreted as float64.
_LOG2E = 1.4426950408889634074
_LN2_HI = 6.93147180369123816490e-01
_LN2_LO = 1.90821492927058770002e-10


@njit(cache=True, inline="always")
def _exp_parts(x):
    """Return (p, bits) with exp(x) = p * float64(bits); x is clamped below."""
    x = max(x, -690.0)  # softmax arguments are <= 0; clamp far underflow
    kf = np.floor(x * _LOG2E + 0.5)
    r = (x - kf * _LN2_HI) - kf * _LN2_LO
    p = 1.0 / 6227020800.0
    p = p * r + 1.0 / 479001600.0
    p = p * r + 1.0 / 39916800.0
    p = p * r + 1.0 / 3628800.0
    p = p * r + 1.0 / 362880.0
    p = p * r + 1.0 / 40320.0
    p = p * r + 1.0 / 5040.0
    p = p * r + 1.0 / 720.0
    p = p * r + 1.0 / 120.0
    p = p * r + 1.0 / 24.0
    p = p * r + 1.0 / 6.0
    p = p * r + 0.5
    p = p * r + 1.0
    p = p * r + 1.0
    return p, (np.int64(kf) + 1023) << 52


@njit(cache=True, fastmath=True, parallel=True)
def attn_fwd(q, k, v, scale, out, denom, rowmax):
    """Fused scaled-dot-product attention forward.

    q, k, v, out: (M, H, S, D); denom, rowmax: (M, H, S), saved for backward.
    Query rows are processed in pairs so each k/v row is streamed once per pair.
    """
    M, H, S, D = q.shape
    for m in prange(M):
        srow = np.empty((2, S))
        ebits = np.empty((2, S), dtype=np.int64)
        for h in range(H):
            qh = q[m, h]
            kh = k[m, h]
            vh = v[m, h]
            oh = out[m, h]
            i = 0
            while i < S:
                pair = i + 1 < S
                q0 = qh[i]
                q1 = qh[i + 1] if pair else qh[i]
                mx0 = -1.0e300
                mx1 = -1.0e300
                for j in range(S):
                    kj = kh[j]
                    a0 = 0.0
                    a1 = 0.0
                    for d in range(D):
                        kd = kj[d]
                        a0 += q0[d] * kd
                        a1 += q1[d] * kd
                    a0 *= scale
                    a1 *= scale
                    srow[0, j] = a0
                    srow[1, j] = a1
                    if a0 > mx0:
                        mx0 = a0
                    if a1 > mx1:
                        mx1 = a1
                for j in range(S):
                    p0, b0 = _exp_parts(srow[0, j] - mx0)
                    p1, b1 = _exp_parts(srow[1, j] - mx1)
                    srow[0, j] = p0
                    srow[1, j] = p1
                    ebits[0, j] = b0
                    ebits[1, j] = b1
                ev = ebits.view(np.float64)
                t0 = 0.0
                t1 = 0.0
                for j in range(S):
                    srow[0, j] *= ev[0, j]
                    srow[1, j] *= ev[1, j]
                    t0 += srow[0, j]
                    t1 += srow[1, j]
                inv0 = 1.0 / t0
                inv1 = 1.0 / t1
                o0 = oh[i]
                o1 = oh[i + 1] if pair else oh[i]
                for d in range(D):
                    o0[d] = 0.0
                if pair:
                    for d in range(D):
                        o1[d] = 0.0
                for j in range(S):
                    a0 = srow[0, j] * inv0
                    a1 = srow[1, j] * inv1
                    vj = vh[j]
                    if pair:
                        for d in range(D):
                            vd = vj[d]
                            o0[d] += a0 * vd
                            o1[d] += a1 * vd
                    else:
                        for d in range(D):
                            o0[d] += a0 * vj[d]
                denom[m, h, i] = t0
                rowmax[m, h, i] = mx0
                if pair:
                    denom[m, h, i + 1] = t1
                    rowmax[m, h, i + 1] = mx1
                i += 2


@njit(cache=True, fastmath=True, parallel=True)
def attn_bwd(q, k, v, gout, scale, denom, rowmax, dq, dk, dv):
    """Backward of attn_fwd; attention rows are recomputed from the saved
    per-row max/denominator instead of storing the S x S weight matrix."""
    M, H, S, D = q.shape
    for m in prange(M):
        arow = np.empty((2, S))
        garow = np.empty((2, S))
        ebits = np.empty((2, S), dtype=np.int64)
        dq0 = np.empty(D)
        dq1 = np.empty(D)
        for h in range(H):
            qh = q[m, h]
            kh = k[m, h]
            vh = v[m, h]
            gh = gout[m, h]
            dqh = dq[m, h]
            dkh = dk[m, h]
            dvh = dv[m, h]
            for j in range(S):
                for d in range(D):
                    dkh[j, d] = 0.0
                    dvh[j, d] = 0.0
            i = 0
            while i < S:
                pair = i + 1 < S
                q0 = qh[i]
                g0 = gh[i]
                q1 = qh[i + 1] if pair else qh[i]
                g1 = gh[i + 1] if pair else gh[i]
                mx0 = rowmax[m, h, i]
                inv0 = 1.0 / denom[m, h, i]
                mx1 = rowmax[m, h, i + 1] if pair else 0.0
                inv1 = 1.0 / denom[m, h, i + 1] if pair else 0.0
                for j in range(S):
                    kj = kh[j]
                    vj = vh[j]
                    s0 = 0.0
                    s1 = 0.0
                    ga0 = 0.0
                    ga1 = 0.0
                    for d in range(D):
                        kd = kj[d]
                        vd = vj[d]
                        s0 += q0[d] * kd
                        s1 += q1[d] * kd
                        ga0 += g0[d] * vd
                        ga1 += g1[d] * vd
                    p0, b0 = _exp_parts(s0 * scale - mx0)
                    p1, b1 = _exp_parts(s1 * scale - mx1)
                    arow[0, j] = p0
                    arow[1, j] = p1
                    ebits[0, j] = b0
                    ebits[1, j] = b1
                    garow[0, j] = ga0
                    garow[1, j] = ga1
                ev = ebits.view(np.float64)
                rd0 = 0.0
                rd1 = 0.0
                for j in range(S):
                    a0 = arow[0, j] * ev[0, j] * inv0
                    a1 = arow[1, j] * ev[1, j] * inv1
                    arow[0, j] = a0
                    arow[1, j] = a1
                    rd0 += garow[0, j] * a0
                    rd1 += garow[1, j] * a1
                for d in range(D):
                    dq0[d] = 0.0
                    dq1[d] = 0.0
                for j in range(S):
                    a0 = arow[0, j]
                    a1 = arow[1, j]
                    ds0 = a0 * (garow[0, j] - rd0) * scale
                    ds1 = a1 * (garow[1, j] - rd1) * scale
                    kj = kh[j]
                    dkj = dkh[j]
                    dvj = dvh[j]
                    if pair:
                        for d in range(D):
                            kd = kj[d]
                            dq0[d] += ds0 * kd
                            dq1[d] += ds1 * kd
                            dkj[d] += ds0 * q0[d] + ds1 * q1[d]
                            dvj[d] += a0 * g0[d] + a1 * g1[d]
                    else:
                        for d in range(D):
                            dq0[d] += ds0 * kj[d]
                            dkj[d] += ds0 * q0[d]
                            dvj[d] += a0 * g0[d]
                dqi = dqh[i]
                for d in range(D):
                    dqi[d] = dq0[d]
                if pair:
                    dqi1 = dqh[i + 1]
                    for d in range(D):
                        dqi1[d] = dq1[d]
                i += 2


@njit(cache=True, fastmath=True)
def bn_stats(x):
    """Per-column mean and (biased) variance of a 2-D view, fixed order."""
    R, C = x.shape
    s = np.zeros(C)
    ss = np.zeros(C)
    for r in range(R):
        xr = x[r]
        for c in range(C):
            v = xr[c]
            s[c] += v
            ss[c] += v * v
    mean = np.empty(C)
    var = np.empty(C)
    for c in range(C):
        m = s[c] / R
        mean[c] = m
        var[c] = max(ss[c] / R - m * m, 0.0)
    return mean, var


@njit(cache=True, fastmath=True, parallel=True)
def bn_norm(x, res, has_res, mean, invstd, gamma, beta, relu, out):
    """out = gamma * (x - mean) * invstd + beta [+ res] [then relu]."""
    R, C = x.shape
    for r in prange(R):
        xr = x[r]
        orow = out[r]
        if has_res:
            rr = res[r]
            for c in range(C):
                y = (xr[c] - mean[c]) * invstd[c] * gamma[c] + beta[c] + rr[c]
                orow[c] = max(y, 0.0) if relu else y
        else:
            for c in range(C):
                y = (xr[c] - mean[c]) * invstd[c] * gamma[c] + beta[c]
                orow[c] = max(y, 0.0) if relu else y


@njit(cache=True, fastmath=True)
def bn_bwd_reduce(x, gy, y, mean, invstd, relu, gyb, dgamma, dbeta):
    """Mask gy by relu (y > 0), and reduce dgamma = sum(gyb * xhat),
    dbeta = sum(gyb) in a fixed order.  gyb is written as a side effect."""
    R, C = x.shape
    for c in range(C):
        dgamma[c] = 0.0
        dbeta[c] = 0.0
    for r in range(R):
        xr = x[r]
        gr = gy[r]
        yr = y[r]
        br = gyb[r]
        for c in range(C):
            g = gr[c]
            if relu and yr[c] <= 0.0:
                g = 0.0
            br[c] = g
            dgamma[c] += g * (xr[c] - mean[c]) * invstd[c]
            dbeta[c] += g


@njit(cache=True, fastmath=True, parallel=True)
def bn_bwd_dx(x, gyb, mean, invstd, gamma, dgamma, dbeta, training, dx):
    """dx for batch norm given the reduced sums; training mode couples the
    batch statistics, inference mode is a plain per-channel affine."""
    R, C = x.shape
    for r in prange(R):
        xr = x[r]
        br = gyb[r]
        dr = dx[r]
        if training:
            for c in range(C):
                xh = (xr[c] - mean[c]) * invstd[c]
                dr[c] = gamma[c] * invstd[c] * (
                    br[c] - dbeta[c] / R - xh * dgamma[c] / R
                )
        else:
            for c in range(C):
                dr[c] = gamma[c] * invstd[c] * br[c]


@njit(cache=True, fastmath=True, parallel=True)
def graph_apply(mat, x, out):
    """out[b,t,i,:] = sum_j mat[b,i,j] * x[b,t,j,:] for x (B,T,N,C)."""
    B, T, N, C = x.shape
    for b in prange(B):
        mb = mat[b]
        xb = x[b]
        ob = out[b]
        for t in range(T):
            xt = xb[t]
            ot = ob[t]
            for i in range(N):
                oi = ot[i]
                for c in range(C):
                    oi[c] = 0.0
                mi = mb[i]
                for j in range(N):
                    w = mi[j]
                    if w != 0.0:
                        xj = xt[j]
                        for c in range(C):
                            oi[c] += w * xj[c]


def warmup():
    """Trigger compilation of every kernel on tiny inputs (cached on disk)."""
    q = np.random.default_rng(0).standard_normal((2, 2, 3, 4))
    o = np.empty_like(q)
    dn = np.empty((2, 2, 3))
    mx = np.empty((2, 2, 3))
    attn_fwd(q, q, q, 0.5, o, dn, mx)
    dq = np.empty_like(q)
    attn_bwd(q, q, q, o.copy(), 0.5, dn, mx, dq, dq.copy(), dq.copy())
    x = np.random.default_rng(1).standard_normal((6, 3))
    m, v = bn_stats(x)
    inv = 1.0 / np.sqrt(v + 1e-5)
    g = np.ones(3)
    b = np.zeros(3)
    y = np.empty_like(x)
    bn_norm(x, x, True, m, inv, g, b, True, y)
    bn_norm(x, x[:0], False, m, inv, g, b, False, y)
    gyb = np.empty_like(x)
    dg = np.empty(3)
    db = np.empty(3)
    bn_bwd_reduce(x, y.copy(), y, m, inv, True, gyb, dg, db)
    dx = np.empty_like(x)
    bn_bwd_dx(x, gyb, m, inv, g, dg, db, True, dx)
    bn_bwd_dx(x, gyb, m, inv, g, dg, db, False, dx)
    mat = np.random.default_rng(2).standard_normal((2, 3, 3))
    xg = np.random.default_rng(3).standard_normal((2, 4, 3, 5))
    og = np.empty_like(xg)
    graph_apply(mat, xg, og)
