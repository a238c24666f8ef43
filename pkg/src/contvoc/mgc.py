"""Mel-generalized cepstral analysis, MGC <-> LSP conversion, MGLSA filtering.

With ``gamma = -1/stage`` the model spectrum is

    H(z) = K / A(z~)^stage,    A(z~) = 1 + gamma * sum_m c_m z~^-m,

where ``z~^-1 = (z^-1 - alpha) / (1 - alpha z^-1)`` is the first-order
all-pass frequency warp. ``c`` are the (gain-normalized) mel-generalized
cepstral coefficients, ``log K`` is the gain. ``A`` is an ordinary monic
polynomial in ``z~^-1``, so its line spectral pairs exist whenever it is
minimum phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._filters import mglsa_run
from .errors import (
    GridMismatchError,
    InvalidLspError,
    SilentFrameError,
    UnstableFrameError,
    ValidationError,
)
from .tracks import FrameGrid, MgcConfig, MgcLspTrack, Waveform, check_lsp_order

SILENT_LOG_GAIN = math.log(1e-6)
LSP_GRID_POINTS = 2048
LSP_TOLERANCE = 1e-10


@dataclass
class MgcFrame:
    gain: float
    coefficients: np.ndarray
    converged: bool = True
    iterations: int = 0


def warped_frequency(omega, alpha: float):
    """Frequency axis seen through the all-pass warp, ``beta(omega)``."""
    omega = np.asarray(omega, dtype=np.float64)
    return omega + 2.0 * np.arctan2(alpha * np.sin(omega), 1.0 - alpha * np.cos(omega))


def _basis(nfft: int, order: int, alpha: float):
    omega = 2 * np.pi * np.arange(nfft // 2 + 1) / nfft
    beta = warped_frequency(omega, alpha)
    m = np.arange(1, order + 1)
    # rfft bins stand for the full circle: interior bins count twice
    weights = np.full(omega.size, 2.0)
    weights[0] = weights[-1] = 1.0
    return np.cos(np.outer(beta, m)), np.sin(np.outer(beta, m)), weights / nfft


def _warp_jacobian(nfft: int, alpha: float) -> np.ndarray:
    """``d beta / d omega`` on the rfft grid; integrates to 1 over the circle."""
    omega = 2 * np.pi * np.arange(nfft // 2 + 1) / nfft
    return (1 - alpha * alpha) / (1 - 2 * alpha * np.cos(omega) + alpha * alpha)


def model_log_spectrum(gain: float, coefficients, cfg: MgcConfig, nfft: int = 1024) -> np.ndarray:
    """Natural-log magnitude ``log |H(e^{j omega})|`` on the rfft grid."""
    a = cfg.gamma * np.asarray(coefficients, dtype=np.float64)
    cos_b, sin_b, _ = _basis(nfft, cfg.order, cfg.alpha)
    re = 1.0 + cos_b @ a
    im = -(sin_b @ a)
    return gain - 0.5 * cfg.stage * np.log(re * re + im * im)


def _cepstral_start(power: np.ndarray, cfg: MgcConfig, nfft: int) -> np.ndarray:
    omega = 2 * np.pi * np.arange(nfft // 2 + 1) / nfft
    # the inverse warp is the same all-pass with -alpha
    log_warped = np.interp(warped_frequency(omega, -cfg.alpha), omega, np.log(power))
    ceps = np.fft.irfft(0.5 * log_warped, nfft)
    log_a = np.zeros(cfg.order + 1)
    log_a[1:] = -(2.0 / cfg.stage) * ceps[1:cfg.order + 1]
    a = np.zeros(cfg.order + 1)
    a[0] = 1.0
    k = np.arange(1, cfg.order + 1)
    for n in range(1, cfg.order + 1):
        a[n] = np.dot(k[:n] * log_a[1:n + 1], a[n - 1::-1][:n]) / n
    return a[1:]


def mgc_analyze(frame, cfg: MgcConfig = MgcConfig(), nfft: int | None = None,
                max_iter: int = 30, tol: float = 1e-6) -> MgcFrame:
    """Fit the mel-generalized cepstrum of one (already windowed) frame.

    Minimizes ``E(a) = mean_beta I(omega(beta)) |A(e^{j beta})|^(2 stage)``
    over the monic warped polynomial ``A``, where ``I`` is the frame
    periodogram and the mean runs over the warped frequency axis (so a flat
    spectrum maps to ``A = 1``). The criterion is convex in ``a``. Newton
    iterations with backtracking start from the truncated series
    ``A = exp(-(1/stage) * minimum-phase warped cepstrum)``, which is usually
    within a few steps of the optimum. The gain matches the model power to the
    frame power: ``K^2 = mean(I) / mean(|A|^(-2 stage))``.
    """
    x = np.asarray(frame, dtype=np.float64).reshape(-1)
    if x.size < 512:
        raise ValidationError(f"analysis frame needs >= 512 samples, got {x.size}")
    if not np.any(x):
        raise SilentFrameError("cannot analyze an all-zero frame")
    if nfft is None:
        nfft = max(1024, 1 << int(math.ceil(math.log2(x.size))))
    power = np.abs(np.fft.rfft(x, nfft)) ** 2
    cos_b, sin_b, wts = _basis(nfft, cfg.order, cfg.alpha)
    mean_power = float(wts @ power)
    # -100 dB floor keeps the Hessian well conditioned on near-empty bins
    weighted = wts * _warp_jacobian(nfft, cfg.alpha) * (power + 1e-10 * mean_power)
    s = cfg.stage

    def evaluate(a):
        re = 1.0 + cos_b @ a
        im = -(sin_b @ a)
        u = re * re + im * im
        return re, im, u, float(weighted @ u ** s)

    a = _cepstral_start(power + 1e-10 * mean_power, cfg, nfft)
    re, im, u, f = evaluate(a)
    zero = evaluate(np.zeros(cfg.order))
    if not f <= zero[3]:
        a = np.zeros(cfg.order)
        re, im, u, f = zero
    converged = False
    it = 0
    while not converged and it < max_iter:
        it += 1
        du = 2.0 * (re[:, None] * cos_b - im[:, None] * sin_b)
        w1 = weighted * s * u ** (s - 1)
        grad = du.T @ w1
        w2 = weighted * s * (s - 1) * u ** (s - 2)
        hess = (du.T * w2) @ du + 2.0 * ((cos_b.T * w1) @ cos_b + (sin_b.T * w1) @ sin_b)
        step = np.linalg.solve(hess, grad)
        t = 1.0
        while True:
            cand = a - t * step
            re_c, im_c, u_c, f_c = evaluate(cand)
            if f_c <= f or t < 1e-8:
                break
            t *= 0.5
        change = abs(f - f_c) / max(f, 1e-300)
        a, re, im, u, f = cand, re_c, im_c, u_c, min(f, f_c)
        if change < tol:
            converged = True
    gain = 0.5 * math.log(mean_power / float(wts @ u ** (-s)))
    return MgcFrame(gain, a / cfg.gamma, converged, it)


# --- line spectral pairs --------------------------------------------------


def _split_polynomials(a_poly: np.ndarray):
    """Sum/difference polynomials of monic ``A`` with trivial roots removed.

    Returns the symmetric reduced polynomials ``(p, q)`` whose roots on the
    unit circle (in (0, pi)) are the line spectral frequencies.
    """
    m = a_poly.size - 1
    ext = np.concatenate([a_poly, [0.0]])
    rev = ext[::-1]
    p_full = ext + rev
    q_full = ext - rev
    if m % 2 == 0:
        p, _ = np.polydiv(p_full, [1.0, 1.0])
        q, _ = np.polydiv(q_full, [1.0, -1.0])
    else:
        p = p_full
        q, _ = np.polydiv(q_full, [1.0, 0.0, -1.0])
    return p, q


def _cos_sum(poly: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Real amplitude of a symmetric polynomial on the unit circle.

    For symmetric ``poly`` of degree ``d``: ``poly(e^{jw}) e^{jwd/2}`` equals
    this real function (up to a constant factor).
    """
    d = poly.size - 1
    k = np.arange(d + 1)
    return np.cos(np.outer(omega, d / 2.0 - k)) @ poly


def _roots_on_circle(poly: np.ndarray, count: int) -> np.ndarray:
    if count == 0:
        return np.empty(0)
    points = LSP_GRID_POINTS
    while points <= 64 * LSP_GRID_POINTS:
        grid = np.linspace(0.0, np.pi, points + 1)
        vals = _cos_sum(poly, grid)
        sign = np.signbit(vals)
        idx = np.nonzero(sign[:-1] != sign[1:])[0]
        exact = np.nonzero(vals == 0.0)[0]
        if idx.size == count and exact.size == 0:
            break
        points *= 4
    else:
        raise UnstableFrameError(f"found {idx.size} of {count} unit-circle roots; polynomial not minimum phase")
    lo = grid[idx].copy()
    hi = grid[idx + 1].copy()
    f_lo = _cos_sum(poly, lo)
    while np.max(hi - lo) > LSP_TOLERANCE:
        mid = 0.5 * (lo + hi)
        f_mid = _cos_sum(poly, mid)
        left = np.signbit(f_mid) == np.signbit(f_lo)
        lo = np.where(left, mid, lo)
        f_lo = np.where(left, f_mid, f_lo)
        hi = np.where(left, hi, mid)
    return 0.5 * (lo + hi)


def poly_to_lsp(a_poly) -> np.ndarray:
    """Line spectral frequencies of a monic minimum-phase polynomial."""
    a_poly = np.asarray(a_poly, dtype=np.float64)
    m = a_poly.size - 1
    p, q = _split_polynomials(a_poly)
    n_p = (m + 1) // 2
    n_q = m // 2
    wp = _roots_on_circle(p, n_p)
    wq = _roots_on_circle(q, n_q)
    lsp = np.empty(m)
    lsp[0::2] = wp
    lsp[1::2] = wq
    if not np.all(np.diff(lsp) > 0) or lsp[0] <= 0 or lsp[-1] >= np.pi:
        raise UnstableFrameError("line spectral frequencies do not interlace")
    return lsp


def lsp_to_poly(lsp) -> np.ndarray:
    """Inverse of :func:`poly_to_lsp`: expand the two root sets and average."""
    lsp = np.asarray(lsp, dtype=np.float64).reshape(-1)
    check_lsp_order(lsp)
    m = lsp.size
    p = np.array([1.0])
    for w in lsp[0::2]:
        p = np.convolve(p, [1.0, -2.0 * math.cos(w), 1.0])
    q = np.array([1.0])
    for w in lsp[1::2]:
        q = np.convolve(q, [1.0, -2.0 * math.cos(w), 1.0])
    if m % 2 == 0:
        p = np.convolve(p, [1.0, 1.0])
        q = np.convolve(q, [1.0, -1.0])
    else:
        q = np.convolve(q, [1.0, 0.0, -1.0])
    a = 0.5 * (p + q)[: m + 1]
    # expansion round-off would otherwise keep the flat case from being exactly A = 1
    a[np.abs(a) < 1e-9] = 0.0
    return a


def mgc_to_lsp(mgc: MgcFrame, cfg: MgcConfig = MgcConfig()) -> tuple[float, np.ndarray]:
    """``(gain, lsp)`` for one frame; raises UnstableFrameError if not minimum phase."""
    c = np.asarray(mgc.coefficients, dtype=np.float64)
    if c.size != cfg.order or not np.all(np.isfinite(c)) or not math.isfinite(mgc.gain):
        raise ValidationError("MGC frame must hold `order` finite coefficients")
    a_poly = np.concatenate([[1.0], cfg.gamma * c])
    return float(mgc.gain), poly_to_lsp(a_poly)


def lsp_to_mgc(gain: float, lsp, cfg: MgcConfig = MgcConfig()) -> MgcFrame:
    lsp = np.asarray(lsp, dtype=np.float64).reshape(-1)
    if lsp.size != cfg.order:
        raise InvalidLspError(f"expected {cfg.order} LSPs, got {lsp.size}")
    a_poly = lsp_to_poly(lsp)
    return MgcFrame(float(gain), a_poly[1:] / cfg.gamma)


def flat_lsp(order: int) -> np.ndarray:
    """LSPs of ``A = 1``: ``k pi / (order + 1)``."""
    return np.arange(1, order + 1) * np.pi / (order + 1)


def repair_lsp(lsp, min_gap: float = 1e-4) -> tuple[np.ndarray, bool]:
    """Sort and spread LSPs so they are strictly ordered inside (0, pi).

    Returns the repaired vector and whether anything changed.
    """
    raw = np.asarray(lsp, dtype=np.float64).reshape(-1)
    m = raw.size
    out = np.sort(np.nan_to_num(raw, nan=np.pi / 2))
    lo = min_gap * np.arange(1, m + 1)
    hi = np.pi - min_gap * np.arange(m, 0, -1)
    out = np.clip(out, lo, hi)
    for i in range(1, m):
        if out[i] < out[i - 1] + min_gap:
            out[i] = out[i - 1] + min_gap
    return out, not np.array_equal(out, raw)


# --- track analysis -----------------------------------------------------------


def _stabilize(a_poly: np.ndarray) -> np.ndarray:
    for _ in range(20):
        try:
            return poly_to_lsp(a_poly)
        except UnstableFrameError:
            # bandwidth expansion pulls every root 2% towards the origin
            a_poly = a_poly * 0.98 ** np.arange(a_poly.size)
    raise UnstableFrameError("could not stabilize MGC frame")


def analyze_mgc(w: Waveform, grid: FrameGrid, cfg: MgcConfig = MgcConfig(),
                window_length: int | None = None, nfft: int = 1024):
    """MGC-LSP track of a waveform plus the count of non-converged frames.

    Each frame spans two hops, is Blackman-windowed and centred on its hop
    instant, scaled so the periodogram mean equals the window-weighted power.
    """
    if grid.sample_rate != w.sample_rate:
        raise GridMismatchError("grid and waveform sample rates differ")
    from .pitch import frame_signal

    length = window_length or 2 * grid.frame_shift_samples
    nfft = max(nfft, 1 << int(math.ceil(math.log2(max(length, 512)))))
    win = np.blackman(length)
    win = win / math.sqrt(np.sum(win ** 2))
    frames = frame_signal(w.samples, grid, length) * win
    gains = np.empty(grid.frame_count)
    lsp = np.empty((grid.frame_count, cfg.order))
    unconverged = 0
    for i, fr in enumerate(frames):
        if not np.any(fr):
            gains[i] = SILENT_LOG_GAIN
            lsp[i] = flat_lsp(cfg.order)
            continue
        if fr.size < 512:
            fr = np.pad(fr, (0, 512 - fr.size))
        frame = mgc_analyze(fr, cfg, nfft)
        unconverged += not frame.converged
        gains[i] = frame.gain
        lsp[i] = _stabilize(np.concatenate([[1.0], cfg.gamma * frame.coefficients]))
    return MgcLspTrack(gains, lsp, grid, cfg), unconverged


# --- MGLSA filtering ------------------------------------------------------------


def _filter_coefficients(track: MgcLspTrack):
    cfg = track.config
    alpha = cfg.alpha
    n = track.grid.frame_count
    b = np.empty((n, cfg.order))
    c0 = np.empty(n)
    for i in range(n):
        a = lsp_to_poly(track.lsp[i])[1:]
        # A(z~) = c0 + sum b_m Phi_m(z),  Phi_m = z~^-m + alpha z~^-(m-1)
        bi = np.empty(cfg.order)
        bi[-1] = a[-1]
        for k in range(cfg.order - 2, -1, -1):
            bi[k] = a[k] - alpha * bi[k + 1]
        b[i] = bi
        c0[i] = 1.0 - alpha * bi[0]
    return b, c0


def _run_filter(signal, track: MgcLspTrack, inverse: bool) -> np.ndarray:
    x = np.asarray(signal, dtype=np.float64).reshape(-1)
    if x.size != track.grid.duration_samples:
        raise GridMismatchError(
            f"signal has {x.size} samples; grid spans {track.grid.duration_samples}")
    if track.grid.frame_count == 0:
        return x.copy()
    b, c0 = _filter_coefficients(track)
    return mglsa_run(x, b, c0, track.gain.astype(np.float64), track.grid.frame_shift_samples,
                     float(track.config.alpha), int(track.config.stage), inverse)


def mglsa_synthesize(excitation, track: MgcLspTrack) -> Waveform:
    """Time-varying MGLSA synthesis filter ``K / A(z~)^stage``.

    Coefficients are interpolated linearly per sample between frame centres;
    each of the ``stage`` all-pole sections is realized without a delay-free
    loop, so the filter is exact rather than a Pade approximation.
    """
    return Waveform(_run_filter(excitation, track, inverse=False), track.grid.sample_rate)


def mglsa_inverse(w, track: MgcLspTrack) -> np.ndarray:
    """Residual: the exact inverse of :func:`mglsa_synthesize`."""
    samples = w.samples if isinstance(w, Waveform) else w
    return _run_filter(samples, track, inverse=True)
