"""Blind sanitizers: diffusion (with and without forward noise), pixel and DCT
Gaussian noise, and a VAE reconstruction baseline.

Image sanitizers take ``uint8`` images ``(C, H, W)`` or batches
``(N, C, H, W)`` and return the same shape and dtype. The audio variant of
the diffusion sanitizer works on :class:`~stegsan.media.AudioClip` frames.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np
from scipy import fft

from .diffusion import EXACT_INVERSION, NoiseSchedule, predict_x0, q_sample
from .media import (
    AudioClip,
    MediaError,
    audio_from_model_range,
    audio_to_model_range,
    check_image,
    from_model_range,
    round_half_away,
    seeded_rng,
    to_model_range,
)
from .nn import Adam, Conv2d, GroupNorm, Linear, Module, ResBlock, SiLU, load_weights, save_weights
from .nn.layers import AvgPool, Upsample

log = logging.getLogger(__name__)

GAUSSIAN_SIGMA = 20.0
DCT_SIGMA = 20.0  # orthonormal: same pixel-domain noise energy as the Gaussian baseline
AUDIO_FRAME = 4096


class Method(str, enum.Enum):
    DM_SUDS = "dm_suds"
    DM_SUDS_DIRECT = "dm_suds_direct"
    GAUSSIAN = "gaussian"
    DCT_NOISE = "dct_noise"
    VAE = "vae"

    @classmethod
    def parse(cls, name):
        return cls(str(name).replace("-", "_").lower())


def _as_batch(x):
    x = np.asarray(x)
    single = x.ndim == 3
    x = check_image(x[None] if single else x, batched=True)
    return x, single


def _check_model_shape(model, shape):
    want = tuple(getattr(model, "cfg", None).sample_shape) if hasattr(model, "cfg") else None
    if want is not None and tuple(shape) != want:
        raise MediaError(f"input shape {tuple(shape)} does not match model sample shape {want}")


def _check_t(t, sched):
    if not (1 <= int(t) <= sched.T):
        raise ValueError(f"timestep {t} outside [1, {sched.T}]")
    return int(t)


# ---------------------------------------------------------------------------
# diffusion sanitizers
# ---------------------------------------------------------------------------

def diffuse_and_recover(x, t, model, sched, rng, mode=EXACT_INVERSION):
    """Float-domain core of :func:`dm_suds`: noise to step ``t``, predict noise, invert."""
    eps = rng.standard_normal(x.shape).astype(x.dtype)
    x_t = q_sample(x, t, eps, sched)
    eps_hat = model.predict_eps(x_t, np.full(x.shape[0], t))
    return predict_x0(x_t, t, eps_hat, sched, mode)


def dm_suds(x, t, model, sched: NoiseSchedule, rng, mode=EXACT_INVERSION):
    """Noise the image to step ``t`` and recover it with the denoiser."""
    t = _check_t(t, sched)
    batch, single = _as_batch(x)
    _check_model_shape(model, batch.shape[1:])
    out = from_model_range(diffuse_and_recover(to_model_range(batch), t, model, sched, rng, mode))
    return out[0] if single else out


def dm_suds_direct(x, t, model, sched: NoiseSchedule, mode=EXACT_INVERSION):
    """Treat the input itself as ``x_t`` (no forward noise); ``t`` only conditions the model."""
    t = _check_t(t, sched)
    batch, single = _as_batch(x)
    _check_model_shape(model, batch.shape[1:])
    xf = to_model_range(batch)
    eps_hat = model.predict_eps(xf, np.full(xf.shape[0], t))
    out = from_model_range(predict_x0(xf, t, eps_hat, sched, mode))
    return out[0] if single else out


def audio_frames(samples, frame=AUDIO_FRAME):
    """Split float samples into zero-padded frames; returns ``(frames, length)``."""
    n = len(samples)
    k = -(-n // frame)
    buf = np.zeros(k * frame, dtype=np.float32)
    buf[:n] = samples
    return buf.reshape(k, frame), n


def peak_normalize(x):
    """Scale float samples so the largest magnitude is 1; returns ``(scaled, gain)``."""
    peak = float(np.max(np.abs(x))) if len(x) else 0.0
    gain = 1.0 / peak if peak > 0 else 1.0
    return (x * gain).astype(np.float32), gain


def audio_training_frames(clips, frame=AUDIO_FRAME):
    """Peak-normalised full frames from each clip (partial tails dropped)."""
    out = []
    for clip in clips:
        x, _ = peak_normalize(audio_to_model_range(clip.samples))
        k = len(x) // frame
        out.append(x[:k * frame].reshape(k, frame))
    return np.concatenate(out) if out else np.zeros((0, frame), np.float32)


def dm_suds_audio(clip: AudioClip, t, model, sched: NoiseSchedule, rng, mode=EXACT_INVERSION, direct=False):
    """Frame-wise diffusion sanitisation of a clip.

    Quiet recordings use a small part of [-1, 1]; the clip is peak-normalised
    before diffusion (as in training) and scaled back afterwards.
    """
    t = _check_t(t, sched)
    frame = model.cfg.sample_shape[0]
    x, gain = peak_normalize(audio_to_model_range(clip.samples))
    frames, n = audio_frames(x, frame)
    if direct:
        eps_hat = model.predict_eps(frames, np.full(len(frames), t))
        rec = predict_x0(frames, t, eps_hat, sched, mode)
    else:
        rec = diffuse_and_recover(frames, t, model, sched, rng, mode)
    return AudioClip(audio_from_model_range(rec.reshape(-1)[:n] / gain), clip.sample_rate)


# ---------------------------------------------------------------------------
# noise baselines
# ---------------------------------------------------------------------------

def _quantise(f):
    return np.clip(round_half_away(f), 0, 255).astype(np.uint8)


def gaussian_sanitize(x, sigma=GAUSSIAN_SIGMA, rng=None):
    """Add ``N(0, sigma^2)`` per pixel on the 8-bit scale, then clamp and quantise."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    x = np.asarray(x)
    x = check_image(x, batched=x.ndim == 4)
    if sigma == 0:
        return x.copy()
    rng = rng if rng is not None else seeded_rng(0)
    return _quantise(x + rng.normal(0.0, sigma, size=x.shape))


def dct2(x):
    """Orthonormal 2-D DCT-II over the two trailing axes."""
    return fft.dctn(np.asarray(x, dtype=np.float64), type=2, axes=(-2, -1), norm="ortho")


def idct2(c):
    return fft.idctn(c, type=2, axes=(-2, -1), norm="ortho")


def dct_noise_sanitize(x, sigma=DCT_SIGMA, rng=None):
    """Add ``N(0, sigma^2)`` to every orthonormal DCT coefficient of every channel."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    x = np.asarray(x)
    x = check_image(x, batched=x.ndim == 4)
    rng = rng if rng is not None else seeded_rng(0)
    coef = dct2(x)
    if sigma > 0:
        coef = coef + rng.normal(0.0, sigma, size=coef.shape)
    return _quantise(idct2(coef))


# ---------------------------------------------------------------------------
# VAE baseline
# ---------------------------------------------------------------------------

@dataclass
class VaeConfig:
    latent_dim: int = 64
    base_channels: int = 32
    beta: float = 1.0
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0


class VaeModel(Module):
    """Conv encoder to a diagonal Gaussian latent, mirrored conv decoder.

    Two 2x2 poolings take an ``H x W`` image to ``H/4 x W/4`` before the
    dense latent projection.
    """

    def __init__(self, shape, latent_dim=64, base_channels=32, seed=0):
        self.shape = tuple(int(s) for s in shape)
        c, h, w = self.shape
        if h % 4 or w % 4:
            raise ValueError("VAE needs height and width divisible by 4")
        rng = seeded_rng(seed)
        b = base_channels
        self.latent_dim = latent_dim
        self._grid = (h // 4, w // 4, 2 * b)
        flat = (h // 4) * (w // 4) * 2 * b
        self.enc_in = Conv2d(c, b, 3, rng)
        self.enc1 = ResBlock(b, b, 0, rng)
        self.pool1 = AvgPool()
        self.enc2 = ResBlock(b, 2 * b, 0, rng)
        self.pool2 = AvgPool()
        self.enc_norm = GroupNorm(8, 2 * b)
        self.enc_act = SiLU()
        self.to_stats = Linear(flat, 2 * latent_dim, rng)
        self.from_z = Linear(latent_dim, flat, rng)
        self.dec1 = ResBlock(2 * b, 2 * b, 0, rng)
        self.up1 = Upsample()
        self.dec2 = ResBlock(2 * b, b, 0, rng)
        self.up2 = Upsample()
        self.dec3 = ResBlock(b, b, 0, rng)
        self.dec_norm = GroupNorm(8, b)
        self.dec_act = SiLU()
        self.dec_out = Conv2d(b, c, 3, rng)
        self.meta = {}

    def encode(self, x):
        """NHWC float input to ``(mu, logvar)``."""
        h = self.pool1.forward(self.enc1.forward(self.enc_in.forward(x)))
        h = self.enc_act.forward(self.enc_norm.forward(self.pool2.forward(self.enc2.forward(h))))
        stats = self.to_stats.forward(h.reshape(h.shape[0], -1))
        return stats[:, :self.latent_dim], stats[:, self.latent_dim:]

    def encode_backward(self, dmu, dlogvar):
        g = self.to_stats.backward(np.concatenate([dmu, dlogvar], axis=1))
        g = g.reshape((g.shape[0],) + self._grid)
        g = self.enc_norm.backward(self.enc_act.backward(g))
        g, _ = self.enc2.backward(self.pool2.backward(g))
        g, _ = self.enc1.backward(self.pool1.backward(g))
        return self.enc_in.backward(g)

    def decode(self, z):
        h = self.from_z.forward(z).reshape((z.shape[0],) + self._grid)
        h = self.up1.forward(self.dec1.forward(h))
        h = self.up2.forward(self.dec2.forward(h))
        h = self.dec3.forward(h)
        return self.dec_out.forward(self.dec_act.forward(self.dec_norm.forward(h)))

    def decode_backward(self, g):
        g = self.dec_norm.backward(self.dec_act.backward(self.dec_out.backward(g)))
        g, _ = self.dec3.backward(g)
        g, _ = self.dec2.backward(self.up2.backward(g))
        g, _ = self.dec1.backward(self.up1.backward(g))
        return self.from_z.backward(g.reshape(g.shape[0], -1))

    def reconstruct(self, x_nhwc):
        mu, _ = self.encode(x_nhwc)
        return self.decode(mu)

    def save(self, path):
        meta = dict(self.meta)
        meta.update({"shape": list(self.shape), "latent_dim": self.latent_dim,
                     "base_channels": self.enc_in.cout})
        save_weights(path, "vae", meta, self.state_dict())

    @classmethod
    def load(cls, path):
        _, meta, state = load_weights(path, expect_kind="vae")
        model = cls(meta["shape"], meta["latent_dim"], meta["base_channels"])
        model.load_state_dict(state)
        model.meta = {k: v for k, v in meta.items() if k not in ("shape", "latent_dim", "base_channels")}
        return model


def vae_loss_and_grad(model: VaeModel, x, rng, beta=1.0):
    """Negative ELBO per image (summed squared error + beta * KL), batch-averaged.

    Runs the backward pass; returns ``(loss, recon, kl)``.
    """
    n = x.shape[0]
    mu, logvar = model.encode(x)
    std = np.exp(0.5 * logvar)
    noise = rng.standard_normal(mu.shape).astype(mu.dtype)
    z = mu + std * noise
    rec = model.decode(z)
    diff = rec - x
    recon = float(np.sum(diff.astype(np.float64) ** 2)) / n
    kl_terms = 0.5 * (mu ** 2 + np.exp(logvar) - 1.0 - logvar)
    kl = float(np.sum(kl_terms, dtype=np.float64)) / n
    dz = model.decode_backward((2.0 / n) * diff)
    dmu = dz + (beta / n) * mu
    dlogvar = dz * noise * 0.5 * std + (beta / n) * 0.5 * (np.exp(logvar) - 1.0)
    model.encode_backward(dmu, dlogvar)
    return recon + beta * kl, recon, kl


def train_vae(dataset, cfg: VaeConfig, progress=None) -> VaeModel:
    """Fit the VAE on clean covers only."""
    dataset = check_image(dataset, batched=True)
    data = np.ascontiguousarray(to_model_range(dataset).transpose(0, 2, 3, 1))
    rng = seeded_rng(cfg.seed)
    model = VaeModel(dataset.shape[1:], cfg.latent_dim, cfg.base_channels, seed=cfg.seed)
    opt = Adam(model.params(), cfg.lr, clip_norm=5.0)
    n = data.shape[0]
    steps = -(-n // cfg.batch_size)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        acc = []
        for b in range(steps):
            x = data[order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            opt.zero_grad()
            loss, _, _ = vae_loss_and_grad(model, x, rng, cfg.beta)
            if not math.isfinite(loss):
                raise RuntimeError(f"VAE training diverged at epoch {epoch}")
            opt.step()
            acc.append(loss)
        history.append(float(np.mean(acc)))
        log.info("vae epoch %d/%d loss %.3f", epoch + 1, cfg.epochs, history[-1])
        if progress is not None:
            progress(epoch, history[-1])
    model.meta = {"train": asdict(cfg), "loss_history": history}
    return model


def vae_sanitize(x, model: VaeModel):
    """Reconstruct from the posterior mean: ``decode(mu(x))``."""
    batch, single = _as_batch(x)
    if batch.shape[1:] != model.shape:
        raise MediaError(f"input shape {batch.shape[1:]} does not match VAE shape {model.shape}")
    xf = np.ascontiguousarray(to_model_range(batch).transpose(0, 2, 3, 1)).astype(model.dtype)
    out = np.concatenate([model.reconstruct(xf[s:s + 256]) for s in range(0, len(xf), 256)])
    out = from_model_range(out.transpose(0, 3, 1, 2))
    return out[0] if single else out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

@dataclass
class SanitizeRequest:
    method: Method
    t: int | None = None
    sigma: float | None = None
    model: Any = None
    sched: NoiseSchedule | None = None
    mode: str = EXACT_INVERSION

    def __post_init__(self):
        self.method = Method.parse(self.method)
        if self.method in (Method.DM_SUDS, Method.DM_SUDS_DIRECT):
            if self.model is None or self.sched is None:
                raise ValueError(f"{self.method.value} needs a denoiser and a schedule")
            if self.t is None:
                self.t = self.sched.T // 2
            _check_t(self.t, self.sched)
        elif self.method is Method.VAE:
            if self.model is None:
                raise ValueError("vae sanitizer needs a trained VAE")
        elif self.sigma is None:
            self.sigma = GAUSSIAN_SIGMA if self.method is Method.GAUSSIAN else DCT_SIGMA


def sanitize(x, req: SanitizeRequest, rng=None):
    """Apply the requested sanitizer to an image batch or an :class:`AudioClip`."""
    rng = rng if rng is not None else seeded_rng(0)
    m = req.method
    if isinstance(x, AudioClip):
        if m not in (Method.DM_SUDS, Method.DM_SUDS_DIRECT):
            raise ValueError(f"{m.value} is not defined for audio")
        return dm_suds_audio(x, req.t, req.model, req.sched, rng, req.mode, direct=m is Method.DM_SUDS_DIRECT)
    if m is Method.DM_SUDS:
        return dm_suds(x, req.t, req.model, req.sched, rng, req.mode)
    if m is Method.DM_SUDS_DIRECT:
        return dm_suds_direct(x, req.t, req.model, req.sched, req.mode)
    if m is Method.GAUSSIAN:
        return gaussian_sanitize(x, req.sigma, rng)
    if m is Method.DCT_NOISE:
        return dct_noise_sanitize(x, req.sigma, rng)
    return vae_sanitize(x, req.model)


def describe(req: SanitizeRequest):
    if req.method in (Method.DM_SUDS, Method.DM_SUDS_DIRECT):
        return f"{req.method.value}(t={req.t})"
    if req.method is Method.VAE:
        return "vae"
    return f"{req.method.value}(sigma={req.sigma:g})"


__all__ = [
    "AUDIO_FRAME",
    "audio_training_frames",
    "peak_normalize",
    "DCT_SIGMA",
    "GAUSSIAN_SIGMA",
    "Method",
    "SanitizeRequest",
    "VaeConfig",
    "VaeModel",
    "dct2",
    "dct_noise_sanitize",
    "dm_suds",
    "dm_suds_audio",
    "dm_suds_direct",
    "gaussian_sanitize",
    "idct2",
    "sanitize",
    "train_vae",
    "vae_sanitize",
]
