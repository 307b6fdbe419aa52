import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stegsan.lsb import (
    HEADER_BITS,
    CapacityError,
    TextPayload,
    audio_lsb_hide,
    audio_lsb_reveal,
    lsb_hide,
    lsb_reveal,
    read_audio_bits,
)
from stegsan.media import AudioClip, MediaError, seeded_rng
from stegsan.metrics import ber


def px(v):
    return np.full((1, 1, 1), v, dtype=np.uint8)


def test_hide_bitwise_example():
    assert lsb_hide(px(0b10110010), px(0b11010111), 4)[0, 0, 0] == 0b10111101 == 189


def test_reveal_bitwise_example():
    assert lsb_reveal(px(189), 4)[0, 0, 0] == 0b11010000 == 208


def test_full_replacement_and_identity():
    rng = seeded_rng(0)
    c, s = rng.integers(0, 256, size=(2, 3, 5, 5), dtype=np.uint8)
    np.testing.assert_array_equal(lsb_hide(c, s, 8), s)
    np.testing.assert_array_equal(lsb_reveal(s, 8), s)


def test_one_bit_zero_secret_clears_lsb():
    c = seeded_rng(1).integers(0, 256, size=(3, 4, 4), dtype=np.uint8)
    np.testing.assert_array_equal(lsb_hide(c, np.zeros_like(c), 1), c & 0xFE)


def test_shape_mismatch():
    with pytest.raises(MediaError):
        lsb_hide(np.zeros((3, 4, 4), np.uint8), np.zeros((3, 4, 5), np.uint8), 4)


@pytest.mark.parametrize("n", [0, 9])
def test_bits_range(n):
    with pytest.raises(ValueError):
        lsb_hide(px(1), px(1), n)


def bit_oracle_hide(c, s, n):
    """Per-pixel bit-list construction, independent of the masking code path."""
    cb = [(int(c) >> (7 - i)) & 1 for i in range(8)]
    sb = [(int(s) >> (7 - i)) & 1 for i in range(8)]
    out = cb[:8 - n] + sb[:n]
    return sum(b << (7 - i) for i, b in enumerate(out))


def test_hide_matches_bit_oracle_exhaustively_for_all_depths():
    vals = np.arange(0, 256, 17, dtype=np.uint8)
    for n in range(1, 9):
        for c in vals:
            for s in vals:
                assert lsb_hide(px(c), px(s), n)[0, 0, 0] == bit_oracle_hide(c, s, n)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_round_trip_and_distortion_bound(n, seed):
    rng = seeded_rng(seed)
    c, s = rng.integers(0, 256, size=(2, 3, 6, 6), dtype=np.uint8)
    cont = lsb_hide(c, s, n)
    mask = np.uint8((0xFF << (8 - n)) & 0xFF)
    np.testing.assert_array_equal(lsb_reveal(cont, n), s & mask)
    assert np.abs(cont.astype(int) - c.astype(int)).max() <= 2 ** n - 1


# ---------------------------------------------------------------------------
# audio
# ---------------------------------------------------------------------------

def clip(n=2000, seed=0):
    return AudioClip(seeded_rng(seed).integers(-32768, 32768, size=n).astype(np.int16), 8000)


def test_audio_round_trip_hello():
    out = audio_lsb_reveal(audio_lsb_hide(clip(), "Hello", 1), 1)
    assert out.text == "Hello" and not out.malformed


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_audio_round_trip_all_depths(n):
    text = "Journeys end in lovers meeting. éè"
    out = audio_lsb_reveal(audio_lsb_hide(clip(), text, n), n)
    assert out.data == text.encode("utf-8")


def test_empty_text_writes_zero_header_only():
    c = clip(100)
    out = audio_lsb_hide(c, "", 1)
    assert read_audio_bits(out, HEADER_BITS, 1).sum() == 0
    np.testing.assert_array_equal(out.samples[HEADER_BITS:], c.samples[HEADER_BITS:])
    assert audio_lsb_reveal(out, 1).bits.size == 0


def test_capacity_exceeded():
    with pytest.raises(CapacityError):
        audio_lsb_hide(clip(50), "this text is far too long for fifty samples", 1)


def test_pre_sanitization_ber_is_zero():
    payload = TextPayload.from_text("If music be the food of love, play on.")
    cont = audio_lsb_hide(clip(), payload, 1)
    framed = payload.framed_bits()
    assert ber(read_audio_bits(cont, len(framed), 1), framed) == 0.0
    assert ber(audio_lsb_reveal(cont, 1).bits, payload.bits) == 0.0


def test_noise_clip_reveal_is_flagged_malformed():
    rng = seeded_rng(11)
    samples = rng.integers(-32768, 32768, size=500).astype(np.int16)
    samples[0] |= 1  # forces a header >= 2**31, far beyond 468 payload bits
    out = audio_lsb_reveal(AudioClip(samples, 8000), 1)
    assert out.malformed
    assert out.bits.size == 500 - HEADER_BITS


def test_amplitude_change_bound_exhaustive_one_bit():
    s = np.arange(-32768, 32768, dtype=np.int16)
    c = AudioClip(s, 8000)
    bits = seeded_rng(2).integers(0, 2, size=s.size - HEADER_BITS).astype(np.uint8)
    out = audio_lsb_hide(c, TextPayload(bits), 1)
    assert np.abs(out.samples.astype(int) - s.astype(int)).max() <= 1


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_only_low_bits_touched(n):
    c = clip(600, seed=n)
    out = audio_lsb_hide(c, "Be not afraid of greatness.", n)
    mask = ~((1 << n) - 1)
    np.testing.assert_array_equal(out.samples.astype(int) & mask, c.samples.astype(int) & mask)
