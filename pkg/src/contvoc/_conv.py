"""Compiled direct convolution and pooling loops (channels-first).

Images are zero-padded and flattened per channel, and outputs are computed
at the padded row width. A kernel tap is then a constant offset into the
flattened input, so each tap is one long contiguous loop that vectorizes.
The extra columns per row that this produces are discarded by the caller.
Loop order is fixed, so results are reproducible run to run.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def conv_wide_forward(xflat, w, bias, h, wp):
    """``xflat`` (B, C, Hp*Wp) padded planes -> (B, F, H*Wp) wide outputs."""
    b_n, c_n, _ = xflat.shape
    f_n, _, k, _ = w.shape
    n = h * wp
    span = n - (k - 1)
    out = np.empty((b_n, f_n, n), dtype=xflat.dtype)
    for b in range(b_n):
        for f in range(f_n):
            o = out[b, f]
            o[:] = bias[f]
            seg_o = o[:span]
            for c in range(c_n):
                src = xflat[b, c]
                for i in range(k):
                    for j in range(k):
                        wv = w[f, c, i, j]
                        seg = src[i * wp + j:i * wp + j + span]
                        for t in range(span):
                            seg_o[t] += wv * seg[t]
    return out


@njit(cache=True, fastmath=True)
def conv_wide_backward(xflat, w, gwide, wp, need_dx):
    """Gradients for :func:`conv_wide_forward`.

    ``gwide`` (B, F, H*Wp) must be zero on the discarded columns. Returns
    ``(dxflat, dw)`` with ``dxflat`` in the padded flattened layout.
    """
    b_n, c_n, m = xflat.shape
    f_n, _, k, _ = w.shape
    span = gwide.shape[2] - (k - 1)
    dw = np.zeros(w.shape, dtype=np.float64)
    dx = np.zeros((b_n, c_n, m), dtype=xflat.dtype)
    for b in range(b_n):
        for f in range(f_n):
            g = gwide[b, f, :span]
            for c in range(c_n):
                src = xflat[b, c]
                dst = dx[b, c]
                for i in range(k):
                    for j in range(k):
                        off = i * wp + j
                        seg = src[off:off + span]
                        acc = 0.0
                        for t in range(span):
                            acc += g[t] * seg[t]
                        dw[f, c, i, j] += acc
                        if need_dx:
                            wv = w[f, c, i, j]
                            dseg = dst[off:off + span]
                            for t in range(span):
                                dseg[t] += wv * g[t]
    return dx, dw.astype(xflat.dtype)


@njit(cache=True)
def maxpool_forward(x, s):
    """Non-overlapping ``s x s`` max pooling; ties keep the first tap in row order."""
    b_n, c_n, h, wd = x.shape
    ho, wo = h // s, wd // s
    out = np.empty((b_n, c_n, ho, wo), dtype=x.dtype)
    arg = np.zeros((b_n, c_n, ho, wo), dtype=np.int8)
    for b in range(b_n):
        for c in range(c_n):
            for y in range(ho):
                orow = out[b, c, y]
                arow = arg[b, c, y]
                orow[:] = x[b, c, y * s, ::s][:wo]
                for q in range(1, s * s):
                    src = x[b, c, y * s + q // s, q % s::s]
                    for xx in range(wo):
                        v = src[xx]
                        if v > orow[xx]:
                            orow[xx] = v
                            arow[xx] = q
    return out, arg


@njit(cache=True)
def maxpool_backward(dout, arg, h, wd, s):
    b_n, c_n, ho, wo = dout.shape
    dx = np.zeros((b_n, c_n, h, wd), dtype=dout.dtype)
    for b in range(b_n):
        for c in range(c_n):
            for y in range(ho):
                grow = dout[b, c, y]
                arow = arg[b, c, y]
                for q in range(s * s):
                    dst = dx[b, c, y * s + q // s, q % s::s]
                    for xx in range(wo):
                        if arow[xx] == q:
                            dst[xx] = grow[xx]
    return dx


@njit(cache=True)
def maxpool2_forward(x):
    """2x2 max pooling without branches; ties keep the first tap in row order."""
    b_n, c_n, h, wd = x.shape
    ho, wo = h // 2, wd // 2
    out = np.empty((b_n, c_n, ho, wo), dtype=x.dtype)
    arg = np.empty((b_n, c_n, ho, wo), dtype=np.int8)
    for b in range(b_n):
        for c in range(c_n):
            for y in range(ho):
                r0 = x[b, c, 2 * y]
                r1 = x[b, c, 2 * y + 1]
                orow = out[b, c, y]
                arow = arg[b, c, y]
                for xx in range(wo):
                    best = r0[2 * xx]
                    a = 0
                    v = r0[2 * xx + 1]
                    a = 1 if v > best else a
                    best = v if v > best else best
                    v = r1[2 * xx]
                    a = 2 if v > best else a
                    best = v if v > best else best
                    v = r1[2 * xx + 1]
                    a = 3 if v > best else a
                    best = v if v > best else best
                    orow[xx] = best
                    arow[xx] = a
    return out, arg


@njit(cache=True)
def maxpool2_backward(dout, arg):
    b_n, c_n, ho, wo = dout.shape
    dx = np.empty((b_n, c_n, 2 * ho, 2 * wo), dtype=dout.dtype)
    for b in range(b_n):
        for c in range(c_n):
            for y in range(ho):
                g = dout[b, c, y]
                a = arg[b, c, y]
                r0 = dx[b, c, 2 * y]
                r1 = dx[b, c, 2 * y + 1]
                for xx in range(wo):
                    gv = g[xx]
                    q = a[xx]
                    r0[2 * xx] = gv if q == 0 else 0.0
                    r0[2 * xx + 1] = gv if q == 1 else 0.0
                    r1[2 * xx] = gv if q == 2 else 0.0
                    r1[2 * xx + 1] = gv if q == 3 else 0.0
    return dx
