"""Procedural datasets standing in for natural images and recorded sound."""

from __future__ import annotations

import numpy as np

from .media import AudioClip, seeded_rng

SUPERSAMPLE = 4

SENTENCES = (
    "If music be the food of love, play on.",
    "Some are born great, some achieve greatness, and some have greatness thrust upon them.",
    "Better a witty fool than a foolish wit.",
    "Love sought is good, but given unsought is better.",
    "Journeys end in lovers meeting.",
    "I am all the daughters of my father's house, and all the brothers too.",
    "Be not afraid of greatness.",
    "In nature there's no blemish but the mind.",
    "O time, thou must untangle this, not I; it is too hard a knot for me to untie.",
    "What is love? 'Tis not hereafter; present mirth hath present laughter.",
    "Many a good hanging prevents a bad marriage.",
    "There is no darkness but ignorance.",
)


def _render(rng, h, w, c):
    hs, ws = h * SUPERSAMPLE, w * SUPERSAMPLE
    yy, xx = np.mgrid[0:hs, 0:ws].astype(np.float64)
    yy = (yy + 0.5) / hs
    xx = (xx + 0.5) / ws
    c0, c1 = rng.uniform(0, 255, size=(2, c))
    ang = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(ang) * (xx - 0.5) + np.sin(ang) * (yy - 0.5)) / np.sqrt(0.5) + 0.5
    ramp = np.clip(ramp, 0, 1)[..., None]
    img = c0 * (1 - ramp) + c1 * ramp
    for _ in range(rng.integers(2, 5)):
        color = rng.uniform(0, 255, size=c)
        cy, cx = rng.uniform(0.1, 0.9, size=2)
        if rng.random() < 0.5:
            hh, hw = rng.uniform(0.12, 0.4, size=2)
            mask = (np.abs(yy - cy) < hh) & (np.abs(xx - cx) < hw)
        else:
            ry, rx = rng.uniform(0.12, 0.35, size=2)
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 < 1.0
        img[mask] = color
    img = img.reshape(h, SUPERSAMPLE, w, SUPERSAMPLE, c).mean(axis=(1, 3))
    return np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8).transpose(2, 0, 1)


def gen_synthetic_images(n, shape=(3, 16, 16), seed=0):
    """``n`` images of gradient backgrounds overlaid with solid rectangles and ellipses.

    Returns a ``(n, C, H, W)`` uint8 batch; identical seeds give identical bytes.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    c, h, w = shape
    rng = seeded_rng(seed)
    return np.stack([_render(rng, h, w, c) for _ in range(n)])


def pixel_entropy(imgs):
    """Shannon entropy (bits) of the pooled 8-bit value histogram."""
    counts = np.bincount(np.asarray(imgs, dtype=np.uint8).ravel(), minlength=256).astype(np.float64)
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log2(p)).sum())


def disjoint_pairs(n_images, n_pairs, rng):
    """Index pairs ``(cover, secret)`` where no image is used twice."""
    if 2 * n_pairs > n_images:
        raise ValueError(f"need {2 * n_pairs} distinct images, have {n_images}")
    idx = rng.permutation(n_images)[:2 * n_pairs]
    return idx[:n_pairs], idx[n_pairs:]


def gen_synthetic_audio(n, length=8192, sample_rate=8000, seed=0, level=0.1):
    """Harmonic tones under attack/decay envelopes with a faint noise floor.

    ``level`` is the target RMS in full-scale units.
    """
    rng = seeded_rng(seed)
    t = np.arange(length) / sample_rate
    clips = []
    for _ in range(n):
        sig = np.zeros(length)
        for _ in range(rng.integers(1, 4)):
            f0 = rng.uniform(80, 700)
            onset = rng.uniform(0, 0.5) * t[-1]
            decay = rng.uniform(0.2, 2.0)
            env = np.where(t >= onset, np.exp(-(t - onset) / decay) * (1 - np.exp(-(t - onset) / 0.01)), 0.0)
            for k in range(1, rng.integers(2, 6)):
                if f0 * k >= sample_rate / 2:
                    break
                sig += env * rng.uniform(0.2, 1.0) / k * np.sin(2 * np.pi * f0 * k * t + rng.uniform(0, 2 * np.pi))
        sig += 0.01 * rng.standard_normal(length)
        rms = np.sqrt(np.mean(sig ** 2)) + 1e-12
        sig *= level * rng.uniform(0.5, 1.5) / rms
        samples = np.clip(np.round(sig * 32768), -32768, 32767).astype(np.int16)
        clips.append(AudioClip(samples, sample_rate))
    return clips


def pick_sentences(n, rng):
    return [SENTENCES[i] for i in rng.integers(0, len(SENTENCES), size=n)]
