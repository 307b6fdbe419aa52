import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stegsan.media import seeded_rng
from stegsan.metrics import (
    MetricError,
    UndefinedNCC,
    ber,
    gaussian_window,
    image_report,
    mse,
    ncc,
    psnr,
    removal_rate,
    ssim,
    verdict,
)


def test_identical_images():
    x = seeded_rng(0).integers(0, 256, size=(3, 16, 16))
    assert mse(x, x) == 0.0
    assert psnr(x, x) == math.inf
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    assert ncc(x, x) == pytest.approx(1.0, abs=1e-12)


def test_psnr_formula_points():
    a = np.zeros(4)
    assert psnr(a, np.full(4, 255.0)) == pytest.approx(0.0, abs=1e-12)
    b = np.full(4, math.sqrt(650.25))
    assert mse(a, b) == pytest.approx(650.25)
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-12)


def test_ncc_linear_relations():
    assert ncc([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert ncc([1, 2, 3], [-1, -2, -3]) == pytest.approx(-1.0)


def test_ncc_constant_input_undefined():
    with pytest.raises(UndefinedNCC):
        ncc(np.ones(5), np.arange(5))


def test_shape_mismatch():
    with pytest.raises(MetricError):
        mse(np.zeros(3), np.zeros(4))


def test_ncc_against_independent_noise():
    rng = seeded_rng(5)
    img = rng.integers(0, 256, size=(3, 32, 32))
    hits = sum(abs(ncc(img, rng.integers(0, 256, size=img.shape))) < 0.1 for _ in range(200))
    assert hits >= 198


def test_ssim_symmetric():
    rng = seeded_rng(1)
    a, b = rng.integers(0, 256, size=(2, 3, 16, 16))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-14)


def test_ssim_rejects_small_images():
    with pytest.raises(MetricError):
        ssim(np.zeros((10, 10)), np.zeros((10, 10)))


def brute_ssim(a, b, win, sigma, L=255.0):
    """Window-by-window SSIM with an explicit 2-D Gaussian; no separable filtering."""
    half = (win - 1) / 2
    yy, xx = np.mgrid[0:win, 0:win] - half
    w = np.exp(-(yy ** 2 + xx ** 2) / (2 * sigma ** 2))
    w /= w.sum()
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.ndim == 2:
        a, b = a[None], b[None]
    vals = []
    for ch in range(a.shape[0]):
        for i in range(a.shape[1] - win + 1):
            for j in range(a.shape[2] - win + 1):
                pa = a[ch, i:i + win, j:j + win]
                pb = b[ch, i:i + win, j:j + win]
                ma, mb = (w * pa).sum(), (w * pb).sum()
                va = (w * (pa - ma) ** 2).sum()
                vb = (w * (pb - mb) ** 2).sum()
                cv = (w * (pa - ma) * (pb - mb)).sum()
                vals.append(((2 * ma * mb + c1) * (2 * cv + c2)) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_ssim_matches_brute_force_default_window():
    rng = seeded_rng(9)
    a, b = rng.integers(0, 256, size=(2, 3, 14, 13))
    assert ssim(a, b) == pytest.approx(brute_ssim(a, b, 11, 1.5), abs=1e-9)


def test_ssim_inverted_mid_contrast_patch():
    rng = seeded_rng(4)
    x = rng.integers(64, 192, size=(11, 11))
    s = ssim(x, 255 - x)
    assert s == pytest.approx(brute_ssim(x, 255 - x, 11, 1.5), abs=1e-9)
    assert s < 0.1


def test_gaussian_window_normalised():
    g = gaussian_window()
    assert g.shape == (11,) and g.sum() == pytest.approx(1.0)
    assert np.argmax(g) == 5


def test_ber_and_rr_points():
    assert ber([0, 1, 1, 0], [0, 1, 1, 0]) == 0.0
    assert ber([0, 1, 1, 0], [1, 0, 0, 1]) == 1.0
    assert removal_rate(0.0) == 0.0
    assert removal_rate(1.0) == 0.0
    assert removal_rate(0.5) == 1.0
    assert removal_rate(0.25) == pytest.approx(0.5)


def test_ber_length_mismatch():
    with pytest.raises(MetricError):
        ber([0, 1], [0, 1, 1])


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 1.0))
def test_rr_symmetry_and_destruction_band(b):
    assert removal_rate(b) == pytest.approx(removal_rate(1.0 - b), abs=1e-12)
    if 0.2 < b < 0.8:
        assert removal_rate(b) > 0.4
    if 0.2 < b <= 0.8 and removal_rate(b) <= 0.4:
        pytest.fail("BER in (0.2, 0.8] must give RR > 0.4 up to rounding")


# Published NCC pairs (IP, SE) with their expected verdict cells.
VERDICT_CASES = [
    ((0.92, 0.02), (False, True)),   # LSB Gaussian
    ((0.95, 0.02), (True, True)),    # LSB DCT
    ((0.93, -0.00), (False, True)),  # LSB SUDS
    ((0.97, 0.01), (True, True)),    # LSB DM-SUDS
    ((0.90, 0.50), (False, False)),  # DDH Gaussian
    ((0.93, 0.83), (False, False)),  # DDH DCT
    ((0.92, 0.24), (False, True)),   # DDH SUDS
    ((0.95, 0.25), (True, True)),    # DDH DM-SUDS
    ((0.92, 0.39), (False, False)),  # UDH Gaussian
    ((0.95, 0.82), (True, False)),   # UDH DCT
    ((0.94, 0.04), (False, True)),   # UDH SUDS
    ((0.97, 0.04), (True, True)),    # UDH DM-SUDS
]


@pytest.mark.parametrize("nccs,cells", VERDICT_CASES)
def test_verdict_reproduces_table(nccs, cells):
    v = verdict(*nccs)
    assert (v.ip_success, v.se_success) == cells


def test_verdict_examples_and_label():
    assert str(verdict(0.97, 0.01)) == "Success / Success"
    assert str(verdict(0.93, -0.0)) == "Fail / Success"
    assert str(verdict(0.95, 0.82)) == "Success / Fail"
    assert verdict(0.97, 0.01).success


def test_image_report_small_image_has_nan_ssim():
    r = image_report(np.arange(16).reshape(1, 4, 4), np.arange(16).reshape(1, 4, 4)[:, ::-1])
    assert math.isnan(r.ssim) and r.mse > 0


# ---------------------------------------------------------------------------
# 4x4 brute-force fixtures
# ---------------------------------------------------------------------------

FIX_A = np.array([[12, 200, 45, 90], [33, 0, 255, 128], [77, 64, 19, 230], [5, 180, 101, 66]], dtype=float)
FIX_B = np.array([[10, 190, 60, 95], [40, 8, 250, 120], [70, 66, 30, 222], [9, 170, 99, 80]], dtype=float)


def loops_mse(a, b):
    s = 0.0
    for i in range(4):
        for j in range(4):
            s += (a[i][j] - b[i][j]) ** 2
    return s / 16


def loops_ncc(a, b):
    ma = sum(sum(r) for r in a) / 16
    mb = sum(sum(r) for r in b) / 16
    num = saa = sbb = 0.0
    for i in range(4):
        for j in range(4):
            num += (a[i][j] - ma) * (b[i][j] - mb)
            saa += (a[i][j] - ma) ** 2
            sbb += (b[i][j] - mb) ** 2
    return num / math.sqrt(saa * sbb)


def test_fixture_metrics_match_loops():
    a, b = FIX_A.tolist(), FIX_B.tolist()
    m = loops_mse(a, b)
    assert abs(mse(FIX_A, FIX_B) - m) < 1e-9
    assert abs(psnr(FIX_A, FIX_B) - 10 * math.log10(255 ** 2 / m)) < 1e-9
    assert abs(ncc(FIX_A, FIX_B) - loops_ncc(a, b)) < 1e-9
    assert abs(ssim(FIX_A, FIX_B, win_size=3, sigma=1.5) - brute_ssim(FIX_A, FIX_B, 3, 1.5)) < 1e-9
    bits_a = (FIX_A.astype(int) & 1).ravel()
    bits_b = (FIX_B.astype(int) & 1).ravel()
    mism = sum(int(x != y) for x, y in zip(bits_a, bits_b))
    assert abs(ber(bits_a, bits_b) - mism / 16) < 1e-9
    assert abs(removal_rate(mism / 16) - (1 - abs(2 * mism / 16 - 1))) < 1e-9
