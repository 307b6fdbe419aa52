"""Media containers, range conversion, file I/O and seeded randomness.

Images are plain ``uint8`` arrays shaped ``(channels, height, width)`` with
``channels`` in {1, 3}; batches add a leading axis. The float working
representation used by the networks is ``float32`` in ``[-1, 1]``.
Audio is an :class:`AudioClip` of signed 16-bit samples.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

RNG_ALGORITHM = "PCG64"


class MediaError(ValueError):
    """Raised for malformed or unsupported media."""


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------

def check_image(img, *, batched=False):
    """Validate an image (or batch of images) and return it as ``uint8``."""
    arr = np.asarray(img)
    ndim = 4 if batched else 3
    if arr.ndim != ndim:
        raise MediaError(f"expected {ndim}-d image array, got shape {arr.shape}")
    if arr.shape[-3] not in (1, 3):
        raise MediaError(f"channel count must be 1 or 3, got {arr.shape[-3]}")
    if arr.shape[-1] < 1 or arr.shape[-2] < 1:
        raise MediaError("image must be at least 1x1")
    if arr.dtype != np.uint8:
        if np.issubdtype(arr.dtype, np.integer) and arr.size and (arr.min() < 0 or arr.max() > 255):
            raise MediaError("pixel values must lie in [0, 255]")
        if not np.issubdtype(arr.dtype, np.integer):
            raise MediaError(f"pixels must be integers, got {arr.dtype}")
        arr = arr.astype(np.uint8)
    return arr


def round_half_away(x):
    """Round to nearest integer, ties away from zero (platform independent)."""
    x = np.asarray(x)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def to_model_range(img):
    """Map 8-bit pixels to float32 ``x / 127.5 - 1``."""
    return (np.asarray(img, dtype=np.float32) / np.float32(127.5) - np.float32(1.0)).astype(np.float32)


def from_model_range(f):
    """Clamp to [-1, 1], rescale to [0, 255] and quantise to ``uint8``."""
    f = np.asarray(f, dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise MediaError("non-finite values cannot be quantised")
    pix = (np.clip(f, -1.0, 1.0) + 1.0) * 127.5
    return np.clip(round_half_away(pix), 0, 255).astype(np.uint8)


def load_png(path):
    """Load an 8-bit grayscale or RGB PNG as ``(C, H, W)`` uint8."""
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise MediaError(f"{path}: not a PNG file")
            mode = im.mode
            if mode in ("I", "I;16", "I;16B", "I;16L", "F"):
                raise MediaError(f"{path}: unsupported bit depth (mode {mode})")
            if mode == "L":
                arr = np.asarray(im, dtype=np.uint8)[None]
            elif mode == "RGB":
                arr = np.asarray(im, dtype=np.uint8).transpose(2, 0, 1)
            else:
                raise MediaError(f"{path}: unsupported PNG mode {mode}")
    except (OSError, SyntaxError) as exc:
        raise MediaError(f"{path}: malformed PNG ({exc})") from exc
    return np.ascontiguousarray(arr)


def save_png(path, img):
    img = check_image(img)
    if img.shape[0] == 1:
        pil = Image.fromarray(img[0], mode="L")
    else:
        pil = Image.fromarray(np.ascontiguousarray(img.transpose(1, 2, 0)), mode="RGB")
    pil.save(path, format="PNG")


def load_png_dir(directory):
    """Load every ``*.png`` in ``directory`` (sorted by name) into one batch."""
    paths = sorted(Path(directory).glob("*.png"))
    if not paths:
        raise MediaError(f"no PNG files in {directory}")
    imgs = [load_png(p) for p in paths]
    if len({i.shape for i in imgs}) != 1:
        raise MediaError(f"images in {directory} differ in shape")
    return np.stack(imgs)


# ---------------------------------------------------------------------------
# audio
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 1 or s.size == 0:
            raise MediaError("audio clip must be a non-empty 1-d sample sequence")
        if self.sample_rate <= 0:
            raise MediaError("sample rate must be positive")
        if s.dtype != np.int16:
            if not np.issubdtype(s.dtype, np.integer) or s.min() < -32768 or s.max() > 32767:
                raise MediaError("samples must be signed 16-bit integers")
            s = s.astype(np.int16)
        s = s.copy()
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)

    def __eq__(self, other):
        if not isinstance(other, AudioClip):
            return NotImplemented
        return self.sample_rate == other.sample_rate and np.array_equal(self.samples, other.samples)

    def __len__(self):
        return self.samples.shape[0]


def audio_to_model_range(samples):
    return (np.asarray(samples, dtype=np.float32) / np.float32(32768.0)).astype(np.float32)


def audio_from_model_range(f):
    f = np.asarray(f, dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise MediaError("non-finite values cannot be quantised")
    return np.clip(round_half_away(np.clip(f, -1.0, 1.0) * 32768.0), -32768, 32767).astype(np.int16)


def load_wav(path):
    """Read a mono 16-bit PCM WAV file."""
    try:
        with wave.open(str(path), "rb") as wf:
            channels, width, rate, frames = (
                wf.getnchannels(), wf.getsampwidth(), wf.getframerate(), wf.getnframes())
            if wf.getcomptype() != "NONE":
                raise MediaError(f"{path}: compressed WAV not supported")
            if width != 2:
                raise MediaError(f"{path}: only 16-bit PCM supported (sample width {width})")
            if channels != 1:
                raise MediaError(f"{path}: only mono WAV supported ({channels} channels)")
            raw = wf.readframes(frames)
    except (wave.Error, EOFError) as exc:
        raise MediaError(f"{path}: unsupported or malformed WAV ({exc})") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.int16)
    return AudioClip(samples, rate)


def save_wav(path, clip: AudioClip):
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(clip.sample_rate))
        wf.writeframes(clip.samples.astype("<i2").tobytes())


# ---------------------------------------------------------------------------
# randomness
# ---------------------------------------------------------------------------

def seeded_rng(seed):
    """A numpy ``Generator`` on PCG64; the same seed always yields the same stream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed) & (2**64 - 1))))


def split_rngs(seed, n):
    """``n`` independent child generators derived from one seed."""
    children = np.random.SeedSequence(int(seed) & (2**64 - 1)).spawn(n)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]
