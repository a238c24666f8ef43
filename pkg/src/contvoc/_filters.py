"""Compiled inner loops for the time-varying MGLSA filter."""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def mglsa_run(x, b_frames, c0_frames, log_gain, hop, alpha, stage, inverse):
    """Filter ``x`` through ``stage`` cascaded warped sections.

    ``b_frames`` (frames x M) and ``c0_frames`` hold the delay-free-loop-free
    coefficients of ``A(z~) = c0 + sum_m b_m Phi_m(z)`` at each frame centre;
    between centres they are interpolated linearly per sample. Synthesis
    computes ``exp(g) * x / A^stage``; the inverse computes ``A^stage x / exp(g)``.
    """
    n = x.shape[0]
    nfr, order = b_frames.shape
    beta = 1.0 - alpha * alpha
    # e[s, m]: output of Phi_{m+1} for section s; prev[s]: the signal that
    # drives the chain (section output when synthesizing, input when inverting)
    e = np.zeros((stage, order))
    prev = np.zeros(stage)
    b = np.zeros(order)
    y = np.empty(n)
    for t in range(n):
        i = t // hop
        frac = (t - i * hop) / hop
        j = i + 1
        if i >= nfr - 1:
            i = nfr - 1
            j = nfr - 1
            frac = 0.0
        for m in range(order):
            b[m] = (1.0 - frac) * b_frames[i, m] + frac * b_frames[j, m]
        c0 = (1.0 - frac) * c0_frames[i] + frac * c0_frames[j]
        g = np.exp((1.0 - frac) * log_gain[i] + frac * log_gain[j])

        v = x[t] / g if inverse else x[t]
        for s in range(stage):
            # advance the warped delay chain driven by this section's past signal
            old = e[s, 0]
            e[s, 0] = alpha * e[s, 0] + beta * prev[s]
            for m in range(1, order):
                cur = e[s, m]
                e[s, m] = old - alpha * e[s, m - 1] + alpha * cur
                old = cur
            acc = 0.0
            for m in range(order):
                acc += b[m] * e[s, m]
            if inverse:
                prev[s] = v
                v = c0 * v + acc
            else:
                v = (v - acc) / c0
                prev[s] = v
        y[t] = v * g if not inverse else v
    return y
