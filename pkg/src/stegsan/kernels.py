"""Inner loops that dominate runtime.

Every kernel except ``im2col`` and ``extract_bits`` exists as ``<name>_numba``
(compiled loops) and ``<name>_numpy`` (vectorised). The public name is bound to one of
them according to :data:`stegsan._accel.USE_NUMBA`. Both variants are kept
importable so the benchmark and the tests can compare them side by side.

Layouts are NHWC throughout: ``x[n, h, w, c]``. Convolution windows are
unrolled in ``(kh, kw, c)`` order so a weight of shape ``(kh, kw, cin, cout)``
reshapes directly to the matmul operand.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import HAVE_NUMBA, USE_NUMBA, njit


# ---------------------------------------------------------------------------
# im2col / col2im for stride-1 "same" convolution with odd kernels
# ---------------------------------------------------------------------------

def im2col_numpy(x, kh, kw):
    n, h, w, c = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # n, h, w, c, kh, kw
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * h * w, kh * kw * c)


def col2im_numpy(cols, shape, kh, kw):
    n, h, w, c = shape
    ph, pw = kh // 2, kw // 2
    cols = cols.reshape(n, h, w, kh, kw, c)
    out = np.zeros((n, h + 2 * ph, w + 2 * pw, c), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, i:i + h, j:j + w, :] += cols[:, :, :, i, j, :]
    return out[:, ph:ph + h, pw:pw + w, :]


@njit
def _col2im_loops(cols, n, h, w, c, kh, kw, out):
    ph = kh // 2
    pw = kw // 2
    row = 0
    for b in range(n):
        for y in range(h):
            for xx in range(w):
                col = 0
                for i in range(kh):
                    yy = y + i - ph
                    for j in range(kw):
                        xs = xx + j - pw
                        if 0 <= yy < h and 0 <= xs < w:
                            for ch in range(c):
                                out[b, yy, xs, ch] += cols[row, col + ch]
                        col += c
                row += 1
    return out


def col2im_numba(cols, shape, kh, kw):
    n, h, w, c = shape
    out = np.zeros((n, h, w, c), dtype=cols.dtype)
    return _col2im_loops(np.ascontiguousarray(cols), n, h, w, c, kh, kw, out)


# ---------------------------------------------------------------------------
# Separable "valid" filtering over the two trailing axes (SSIM windows)
# ---------------------------------------------------------------------------

def filter_valid_numpy(img, kernel):
    """Correlate each ``(..., H, W)`` plane with ``outer(kernel, kernel)``, no padding."""
    k = kernel.shape[0]
    rows = sliding_window_view(img, k, axis=-1) @ kernel
    cols = sliding_window_view(rows, k, axis=-2) @ kernel
    return cols


@njit
def _filter_valid_loops(img, kernel, out):
    p, h, w = img.shape
    k = kernel.shape[0]
    tmp = np.empty((h, w - k + 1))
    for q in range(p):
        for y in range(h):
            for x in range(w - k + 1):
                acc = 0.0
                for i in range(k):
                    acc += img[q, y, x + i] * kernel[i]
                tmp[y, x] = acc
        for y in range(h - k + 1):
            for x in range(w - k + 1):
                acc = 0.0
                for i in range(k):
                    acc += tmp[y + i, x] * kernel[i]
                out[q, y, x] = acc
    return out


def filter_valid_numba(img, kernel):
    img = np.asarray(img, dtype=np.float64)
    lead = img.shape[:-2]
    h, w = img.shape[-2:]
    k = kernel.shape[0]
    flat = np.ascontiguousarray(img.reshape(-1, h, w))
    out = np.empty((flat.shape[0], h - k + 1, w - k + 1))
    _filter_valid_loops(flat, np.asarray(kernel, dtype=np.float64), out)
    return out.reshape(lead + (h - k + 1, w - k + 1))


# ---------------------------------------------------------------------------
# Bit packing into the low bits of integer samples (audio LSB)
# ---------------------------------------------------------------------------

def embed_bits_numpy(samples, bits, n_bits):
    """Write ``bits`` MSB-first into the ``n_bits`` lowest bits of consecutive samples."""
    out = samples.astype(np.int32)
    nb = len(bits)
    used = -(-nb // n_bits)
    padded = np.zeros(used * n_bits, dtype=np.int32)
    padded[:nb] = bits
    weights = 1 << np.arange(n_bits - 1, -1, -1, dtype=np.int32)
    chunks = padded.reshape(used, n_bits) @ weights
    if nb % n_bits:
        # last sample only replaces as many low bits as remain, keeping the rest
        rem = nb % n_bits
        keep = n_bits - rem
        last = out[used - 1]
        chunks[-1] = (chunks[-1] >> keep) << keep | (last & ((1 << keep) - 1))
    mask = (1 << n_bits) - 1
    out[:used] = (out[:used] & ~mask) | chunks
    return out.astype(samples.dtype)


def extract_bits_numpy(samples, count, n_bits):
    used = -(-count // n_bits)
    vals = samples[:used].astype(np.int32) & ((1 << n_bits) - 1)
    shifts = np.arange(n_bits - 1, -1, -1, dtype=np.int32)
    bits = (vals[:, None] >> shifts) & 1
    return bits.reshape(-1)[:count].astype(np.uint8)


@njit
def _embed_bits_loops(out, bits, n_bits):
    nb = bits.shape[0]
    for k in range(nb):
        s = k // n_bits
        pos = n_bits - 1 - (k % n_bits)
        v = out[s]
        v = (v & ~(1 << pos)) | (bits[k] << pos)
        out[s] = v
    return out


def embed_bits_numba(samples, bits, n_bits):
    out = samples.astype(np.int32)
    _embed_bits_loops(out, np.asarray(bits, dtype=np.int32), n_bits)
    return out.astype(samples.dtype)


# ---------------------------------------------------------------------------
# Group normalisation over (N, P, C) with channel groups; P = H * W positions
# ---------------------------------------------------------------------------

def groupnorm_fwd_numpy(x, groups, eps):
    """Returns ``(xhat, inv_std)``; ``inv_std`` has shape ``(N, groups)``."""
    n, p, c = x.shape
    xg = x.reshape(n, p, groups, c // groups)
    mean = xg.mean(axis=(1, 3), keepdims=True)
    var = xg.var(axis=(1, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return ((xg - mean) * inv).reshape(x.shape), inv.reshape(n, groups)


def groupnorm_bwd_numpy(gx, xhat, inv, groups):
    """Input gradient given ``gx = dL/dxhat``."""
    n, p, c = gx.shape
    g4 = gx.reshape(n, p, groups, c // groups)
    x4 = xhat.reshape(g4.shape)
    m = p * (c // groups)
    inv4 = inv.reshape(n, 1, groups, 1)
    dx = (inv4 / m) * (m * g4 - g4.sum(axis=(1, 3), keepdims=True)
                       - x4 * (g4 * x4).sum(axis=(1, 3), keepdims=True))
    return dx.reshape(gx.shape)


@njit
def _groupnorm_fwd_loops(x, groups, eps, xhat, inv):
    n, p, c = x.shape
    cg = c // groups
    m = p * cg
    for b in range(n):
        for g in range(groups):
            c0 = g * cg
            s = 0.0
            for i in range(p):
                for j in range(c0, c0 + cg):
                    s += x[b, i, j]
            mean = s / m
            v = 0.0
            for i in range(p):
                for j in range(c0, c0 + cg):
                    d = x[b, i, j] - mean
                    v += d * d
            r = 1.0 / np.sqrt(v / m + eps)
            inv[b, g] = r
            for i in range(p):
                for j in range(c0, c0 + cg):
                    xhat[b, i, j] = (x[b, i, j] - mean) * r
    return xhat, inv


@njit
def _groupnorm_bwd_loops(gx, xhat, inv, groups, dx):
    n, p, c = gx.shape
    cg = c // groups
    m = p * cg
    for b in range(n):
        for g in range(groups):
            c0 = g * cg
            s1 = 0.0
            s2 = 0.0
            for i in range(p):
                for j in range(c0, c0 + cg):
                    s1 += gx[b, i, j]
                    s2 += gx[b, i, j] * xhat[b, i, j]
            r = inv[b, g] / m
            for i in range(p):
                for j in range(c0, c0 + cg):
                    dx[b, i, j] = r * (m * gx[b, i, j] - s1 - xhat[b, i, j] * s2)
    return dx


def groupnorm_fwd_numba(x, groups, eps):
    x = np.ascontiguousarray(x)
    n, p, c = x.shape
    xhat = np.empty_like(x)
    inv = np.empty((n, groups), dtype=x.dtype)
    return _groupnorm_fwd_loops(x, groups, eps, xhat, inv)


def groupnorm_bwd_numba(gx, xhat, inv, groups):
    gx = np.ascontiguousarray(gx)
    dx = np.empty_like(gx)
    return _groupnorm_bwd_loops(gx, np.ascontiguousarray(xhat), inv, groups, dx)


# ---------------------------------------------------------------------------
# SiLU
# ---------------------------------------------------------------------------

def silu_fwd_numpy(x):
    """Returns ``(y, sigmoid(x))``."""
    from scipy.special import expit

    s = expit(x)
    return x * s, s


def silu_bwd_numpy(g, x, s):
    return g * (s * (1.0 + x * (1.0 - s)))


@njit
def _silu_fwd_loops(x, y, s):
    # branchless so the loop vectorises; exp(-v) -> inf gives sigmoid 0, never nan
    one = x.dtype.type(1.0)
    for i in range(x.size):
        v = x[i]
        sg = one / (one + np.exp(-v))
        s[i] = sg
        y[i] = v * sg
    return y, s


@njit
def _silu_bwd_loops(g, x, s, out):
    for i in range(g.size):
        sg = s[i]
        out[i] = g[i] * (sg * (1.0 + x[i] * (1.0 - sg)))
    return out


def silu_fwd_numba(x):
    xf = np.ascontiguousarray(x).reshape(-1)
    y = np.empty_like(xf)
    s = np.empty_like(xf)
    _silu_fwd_loops(xf, y, s)
    return y.reshape(x.shape), s.reshape(x.shape)


def silu_bwd_numba(g, x, s):
    gf = np.ascontiguousarray(g).reshape(-1)
    out = np.empty_like(gf)
    _silu_bwd_loops(gf, np.ascontiguousarray(x).reshape(-1), np.ascontiguousarray(s).reshape(-1), out)
    return out.reshape(g.shape)


if USE_NUMBA:
    col2im = col2im_numba
    filter_valid = filter_valid_numba
    embed_bits = embed_bits_numba
    groupnorm_fwd, groupnorm_bwd = groupnorm_fwd_numba, groupnorm_bwd_numba
    silu_fwd, silu_bwd = silu_fwd_numba, silu_bwd_numba
else:
    col2im = col2im_numpy
    filter_valid = filter_valid_numpy
    embed_bits = embed_bits_numpy
    groupnorm_fwd, groupnorm_bwd = groupnorm_fwd_numpy, groupnorm_bwd_numpy
    silu_fwd, silu_bwd = silu_fwd_numpy, silu_bwd_numpy
# pure copies / shift-and-mask: compiled loops measured no faster than numpy
im2col = im2col_numpy
extract_bits = extract_bits_numpy

__all__ = [
    "HAVE_NUMBA",
    "USE_NUMBA",
    "im2col",
    "col2im",
    "filter_valid",
    "embed_bits",
    "extract_bits",
    "groupnorm_fwd",
    "groupnorm_bwd",
    "silu_fwd",
    "silu_bwd",
]
