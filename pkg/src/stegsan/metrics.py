"""Image-quality metrics, bit error rate and the sanitization verdict.

Pixel metrics operate on the 8-bit scale ``[0, 255]``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels

THETA_IP = 0.95
THETA_SE = 0.30

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class MetricError(ValueError):
    pass


class UndefinedNCC(MetricError):
    """NCC is undefined because an input has zero variance."""


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b):
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, max_val=255.0):
    """Peak signal-to-noise ratio in dB; ``inf`` when the inputs are identical."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return float(10.0 * math.log10(max_val ** 2 / err))


def gaussian_window(size=SSIM_WIN, sigma=SSIM_SIGMA):
    """Normalised 1-D Gaussian taps; the 2-D window is their outer product."""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def ssim(a, b, data_range=255.0, win_size=SSIM_WIN, sigma=SSIM_SIGMA):
    """Mean structural similarity over all fully-contained Gaussian windows.

    Inputs are ``(H, W)`` or ``(C, H, W)``; the score is averaged over
    windows and channels.
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise MetricError("ssim expects (H, W) or (C, H, W) inputs")
    if min(a.shape[-2:]) < win_size:
        raise MetricError(f"image {a.shape[-2:]} smaller than the {win_size}x{win_size} window")
    g = gaussian_window(win_size, sigma)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    stack = np.stack([a, b, a * a, b * b, a * b])
    mu_a, mu_b, e_aa, e_bb, e_ab = kernels.filter_valid(stack, g)
    var_a = e_aa - mu_a ** 2
    var_b = e_bb - mu_b ** 2
    cov = e_ab - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ncc(a, b):
    """Pearson correlation over every pixel and channel.

    Raises :class:`UndefinedNCC` when either input is constant.
    """
    a, b = _pair(a, b)
    da = a.ravel() - a.mean()
    db = b.ravel() - b.mean()
    saa = float(da @ da)
    sbb = float(db @ db)
    if saa == 0.0 or sbb == 0.0:
        raise UndefinedNCC("ncc undefined for a constant input")
    r = float(da @ db) / math.sqrt(saa * sbb)
    return min(1.0, max(-1.0, r))


def ncc_or_nan(a, b):
    """:func:`ncc` with ``nan`` in place of the undefined case (for aggregation)."""
    try:
        return ncc(a, b)
    except UndefinedNCC:
        return math.nan


def ber(bits_a, bits_b):
    a = np.asarray(bits_a).astype(np.uint8).ravel()
    b = np.asarray(bits_b).astype(np.uint8).ravel()
    if a.shape != b.shape:
        raise MetricError(f"bit streams differ in length: {a.size} vs {b.size}")
    if a.size == 0:
        return 0.0
    return float(np.count_nonzero(a != b)) / a.size


def removal_rate(ber_value):
    """``1 - |2 * BER - 1|``: zero for an intact or fully inverted stream, one at BER 0.5."""
    if not 0.0 <= ber_value <= 1.0:
        raise MetricError(f"BER must lie in [0, 1], got {ber_value}")
    return 1.0 - abs(2.0 * ber_value - 1.0)


rr = removal_rate


@dataclass(frozen=True)
class Verdict:
    ip_success: bool
    se_success: bool
    theta_ip: float = THETA_IP
    theta_se: float = THETA_SE

    @property
    def success(self):
        return self.ip_success and self.se_success

    @staticmethod
    def label(ok):
        return "Success" if ok else "Fail"

    def __str__(self):
        return f"{self.label(self.ip_success)} / {self.label(self.se_success)}"


def verdict(ncc_ip, ncc_se, theta_ip=THETA_IP, theta_se=THETA_SE):
    """IP succeeds when ``ncc_ip >= theta_ip``; SE succeeds when ``ncc_se <= theta_se``."""
    return Verdict(bool(ncc_ip >= theta_ip), bool(ncc_se <= theta_se), theta_ip, theta_se)


@dataclass
class MetricReport:
    mse: float
    psnr_db: float
    ssim: float
    ncc: float

    def to_dict(self):
        return asdict(self)


def image_report(ref, test):
    """All four pixel metrics for one image pair. SSIM is ``nan`` below window size."""
    ref = np.asarray(ref)
    try:
        s = ssim(ref, test)
    except MetricError:
        s = math.nan
    return MetricReport(mse(ref, test), psnr(ref, test), s, ncc_or_nan(ref, test))
