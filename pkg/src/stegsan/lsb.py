"""Least-significant-bit hiding: image-into-image and text-into-audio."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .media import AudioClip, MediaError, check_image

log = logging.getLogger(__name__)

HEADER_BITS = 32
DEFAULT_IMAGE_BITS = 4
DEFAULT_AUDIO_BITS = 1


class CapacityError(ValueError):
    pass


def _check_bits(n_bits, hi):
    if not (isinstance(n_bits, (int, np.integer)) and 1 <= n_bits <= hi):
        raise ValueError(f"n_bits must be an integer in [1, {hi}], got {n_bits!r}")


def lsb_hide(cover, secret, n_bits=DEFAULT_IMAGE_BITS):
    """Replace the ``n_bits`` low bits of ``cover`` with the top bits of ``secret``.

    Works on single images or batches; the two inputs must share a shape.
    """
    _check_bits(n_bits, 8)
    cover = np.asarray(cover)
    secret = np.asarray(secret)
    if cover.shape != secret.shape:
        raise MediaError(f"cover {cover.shape} and secret {secret.shape} differ in shape")
    cover = check_image(cover, batched=cover.ndim == 4)
    secret = check_image(secret, batched=secret.ndim == 4)
    keep = np.uint8((0xFF << n_bits) & 0xFF)
    return (cover & keep) | (secret >> np.uint8(8 - n_bits))


def lsb_reveal(container, n_bits=DEFAULT_IMAGE_BITS):
    """Move the ``n_bits`` low bits of each pixel to the top; the rest are zero."""
    _check_bits(n_bits, 8)
    container = np.asarray(container, dtype=np.uint8)
    low = container & np.uint8((1 << n_bits) - 1)
    return (low.astype(np.uint16) << (8 - n_bits)).astype(np.uint8)


# ---------------------------------------------------------------------------
# text into audio
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TextPayload:
    """Bits recovered from (or destined for) an audio container.

    ``bits`` holds the payload only, without the 32-bit length header.
    ``malformed`` is set when the header promised more bits than the clip holds.
    """

    bits: np.ndarray
    malformed: bool = False

    @classmethod
    def from_text(cls, text: str):
        data = np.frombuffer(text.encode("utf-8"), dtype=np.uint8)
        return cls(np.unpackbits(data))

    @property
    def data(self) -> bytes:
        n = len(self.bits) - len(self.bits) % 8
        return np.packbits(self.bits[:n]).tobytes()

    @property
    def text(self) -> str:
        return self.data.decode("utf-8", errors="replace")

    def framed_bits(self):
        """Header (payload bit count, big-endian) followed by the payload."""
        n = len(self.bits)
        header = (np.array([n], dtype=">u4").view(np.uint8))
        return np.concatenate([np.unpackbits(header), self.bits]).astype(np.uint8)


def audio_capacity(n_samples, n_bits=DEFAULT_AUDIO_BITS):
    """Payload bits that fit after the header."""
    return n_samples * n_bits - HEADER_BITS


def audio_lsb_hide(clip: AudioClip, payload, n_bits=DEFAULT_AUDIO_BITS) -> AudioClip:
    _check_bits(n_bits, 4)
    if isinstance(payload, str):
        payload = TextPayload.from_text(payload)
    bits = payload.framed_bits()
    if len(bits) > n_bits * len(clip):
        raise CapacityError(
            f"payload needs {len(bits)} bits, clip holds {n_bits * len(clip)} at {n_bits} bit(s)/sample")
    samples = kernels.embed_bits(clip.samples, bits, n_bits)
    return AudioClip(samples, clip.sample_rate)


def read_audio_bits(clip: AudioClip, count, n_bits=DEFAULT_AUDIO_BITS):
    """Raw bit stream of length ``count`` from the start of the clip."""
    _check_bits(n_bits, 4)
    count = min(count, n_bits * len(clip))
    return kernels.extract_bits(clip.samples, count, n_bits)


def audio_lsb_reveal(clip: AudioClip, n_bits=DEFAULT_AUDIO_BITS) -> TextPayload:
    _check_bits(n_bits, 4)
    total = n_bits * len(clip)
    if total < HEADER_BITS:
        raise CapacityError("clip too short to contain a length header")
    header = kernels.extract_bits(clip.samples, HEADER_BITS, n_bits)
    n = int(np.packbits(header).view(">u4")[0])
    avail = total - HEADER_BITS
    malformed = n > avail
    if malformed:
        log.debug("header claims %d bits, only %d available", n, avail)
        n = avail
    bits = kernels.extract_bits(clip.samples, HEADER_BITS + n, n_bits)[HEADER_BITS:]
    return TextPayload(bits, malformed)
