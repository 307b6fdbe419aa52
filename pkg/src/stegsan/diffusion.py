"""Denoising diffusion: noise schedule, forward noising, posterior, x0 recovery,
the noise-prediction U-Net and its training loop.

Timesteps are 1-based. Schedule arrays are indexed directly by ``t`` with a
sentinel entry at index 0 (``alpha_bar[0] == 1``, ``beta[0] == 0``).
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .media import seeded_rng
from .nn import Adam, Conv2d, GroupNorm, Module, ResBlock, SiLU, TimeMLP, load_weights, save_weights
from .nn.layers import AvgPool, Upsample

log = logging.getLogger(__name__)

EXACT_INVERSION = "exact_inversion"
PAPER_EQ7 = "paper_eq7"


class TrainingDiverged(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    T: int
    betas: np.ndarray
    kind: str = "cosine"
    alphas: np.ndarray = field(init=False)
    alpha_bar: np.ndarray = field(init=False)
    posterior_variance: np.ndarray = field(init=False)
    posterior_coef_x0: np.ndarray = field(init=False)
    posterior_coef_xt: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.shape != (self.T + 1,):
            raise ValueError("betas must have T + 1 entries (index 0 is a sentinel)")
        alphas = 1.0 - betas
        alpha_bar = np.cumprod(alphas)
        ab_prev = np.concatenate([[1.0], alpha_bar[:-1]])
        with np.errstate(divide="ignore", invalid="ignore"):
            denom = 1.0 - alpha_bar
            post_var = np.where(denom > 0, (1.0 - ab_prev) / denom * betas, 0.0)
            coef_x0 = np.where(denom > 0, np.sqrt(ab_prev) * betas / denom, 0.0)
            coef_xt = np.where(denom > 0, np.sqrt(alphas) * (1.0 - ab_prev) / denom, 0.0)
        for name, val in [("betas", betas), ("alphas", alphas), ("alpha_bar", alpha_bar),
                          ("posterior_variance", post_var), ("posterior_coef_x0", coef_x0),
                          ("posterior_coef_xt", coef_xt)]:
            val.flags.writeable = False
            object.__setattr__(self, name, val)

    def check_t(self, t, lo=1):
        t = np.asarray(t)
        if np.any(t < lo) or np.any(t > self.T):
            raise ValueError(f"timestep out of range [{lo}, {self.T}]: {t}")
        return t.astype(np.int64)


def cosine_alpha_bar(t, T, s=0.008):
    """Continuous cosine curve ``f(t)/f(0)`` before any beta clipping."""
    f = lambda u: np.cos(((u / T + s) / (1.0 + s)) * math.pi / 2.0) ** 2  # noqa: E731
    return f(np.asarray(t, dtype=np.float64)) / f(0.0)


def cosine_schedule(T, s=0.008, max_beta=0.999):
    if T < 1:
        raise ValueError("T must be at least 1")
    ab = cosine_alpha_bar(np.arange(T + 1), T, s)
    betas = np.zeros(T + 1)
    betas[1:] = np.minimum(1.0 - ab[1:] / ab[:-1], max_beta)
    return NoiseSchedule(T, betas, "cosine")


def linear_schedule(T, beta_start=1e-4, beta_end=0.02):
    betas = np.zeros(T + 1)
    betas[1:] = np.linspace(beta_start * 1000 / T, beta_end * 1000 / T, T)
    return NoiseSchedule(T, betas, "linear")


def make_schedule(kind, T):
    if kind == "cosine":
        return cosine_schedule(T)
    if kind == "linear":
        return linear_schedule(T)
    raise ValueError(f"unknown schedule {kind!r}")


def _gather(arr, t, ndim, dtype):
    """Schedule coefficients at ``t`` shaped to broadcast over a batch of rank ``ndim``."""
    v = arr[np.asarray(t)]
    if np.ndim(v) == 0:
        return dtype(v)
    return v.reshape((-1,) + (1,) * (ndim - 1)).astype(dtype)


# ---------------------------------------------------------------------------
# forward process, posterior, x0 recovery
# ---------------------------------------------------------------------------

def q_sample(x0, t, eps, sched: NoiseSchedule):
    """``sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``; ``t`` may be a scalar or one per sample."""
    t = sched.check_t(t)
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if eps.shape != x0.shape:
        raise ValueError(f"noise shape {eps.shape} != image shape {x0.shape}")
    dt = x0.dtype.type if np.issubdtype(x0.dtype, np.floating) else np.float64
    ab = sched.alpha_bar
    return _gather(np.sqrt(ab), t, x0.ndim, dt) * x0 + _gather(np.sqrt(1.0 - ab), t, x0.ndim, dt) * eps


def posterior(x0, x_t, t, sched: NoiseSchedule):
    """Mean and variance of ``q(x_{t-1} | x_t, x0)``."""
    t = sched.check_t(t)
    x0 = np.asarray(x0)
    dt = x0.dtype.type if np.issubdtype(x0.dtype, np.floating) else np.float64
    mean = (_gather(sched.posterior_coef_x0, t, x0.ndim, dt) * x0
            + _gather(sched.posterior_coef_xt, t, x0.ndim, dt) * np.asarray(x_t))
    var = sched.posterior_variance[t]
    return mean, (float(var) if np.ndim(var) == 0 else var)


def predict_x0(x_t, t, eps_hat, sched: NoiseSchedule, mode=EXACT_INVERSION):
    """Recover the clean image from a noised one and a noise estimate.

    ``exact_inversion`` solves the forward-noising relation for ``x0``.
    ``paper_eq7`` applies ``(x_t - beta_t / sqrt(1 - abar_t) * eps) / sqrt(alpha_t)``,
    which is the mean of one reverse step rather than an inverse.
    """
    t = sched.check_t(t)
    x_t = np.asarray(x_t)
    dt = x_t.dtype.type if np.issubdtype(x_t.dtype, np.floating) else np.float64
    nd = x_t.ndim
    if mode == EXACT_INVERSION:
        ab = sched.alpha_bar
        return (x_t - _gather(np.sqrt(1.0 - ab), t, nd, dt) * eps_hat) / _gather(np.sqrt(ab), t, nd, dt)
    if mode == PAPER_EQ7:
        coef = np.zeros_like(sched.betas)
        coef[1:] = sched.betas[1:] / np.sqrt(1.0 - sched.alpha_bar[1:])
        return (x_t - _gather(coef, t, nd, dt) * eps_hat) / _gather(np.sqrt(sched.alphas), t, nd, dt)
    raise ValueError(f"unknown predict_x0 mode {mode!r}")


# ---------------------------------------------------------------------------
# denoiser network
# ---------------------------------------------------------------------------

@dataclass
class DenoiserConfig:
    """Architecture of the noise-prediction U-Net.

    ``domain`` selects how samples map onto the NHWC grid the network sees:
    images ``(C, H, W)`` are transposed; audio frames ``(L,)`` are folded into
    ``(1, L / patch, patch)`` so that neighbouring samples share a position.
    """

    sample_shape: tuple
    domain: str = "image"
    base_channels: int = 32
    channel_mults: tuple = (1, 2, 2)
    kernel: tuple = (3, 3)
    pool: tuple = (2, 2)
    temb_dim: int = 128
    groups: int = 8
    patch: int = 1

    def __post_init__(self):
        self.sample_shape = tuple(int(s) for s in self.sample_shape)
        self.channel_mults = tuple(self.channel_mults)
        self.kernel = tuple(self.kernel)
        self.pool = tuple(self.pool)

    @classmethod
    def for_audio(cls, frame_len=4096, patch=8, **kw):
        kw.setdefault("base_channels", 32)
        kw.setdefault("channel_mults", (1, 2, 2))
        return cls((frame_len,), "audio", kernel=(1, 5), pool=(1, 4), patch=patch, **kw)

    def grid_channels(self):
        return self.sample_shape[0] if self.domain == "image" else self.patch


class Denoiser(Module):
    """U-Net predicting the noise in ``x_t`` given ``t``."""

    def __init__(self, cfg: DenoiserConfig, seed=0):
        self.cfg = cfg
        rng = seeded_rng(seed)
        cin = cfg.grid_channels()
        chans = [cfg.base_channels * m for m in cfg.channel_mults]
        k, g, td = cfg.kernel, cfg.groups, cfg.temb_dim
        self.time = TimeMLP(cfg.base_channels, td, rng)
        self.conv_in = Conv2d(cin, chans[0], k, rng)
        self.down = []
        prev = chans[0]
        for c in chans:
            self.down.append(ResBlock(prev, c, td, rng, k, g))
            prev = c
        self.pools = [AvgPool(cfg.pool) for _ in chans[:-1]]
        self.mid = ResBlock(prev, prev, td, rng, k, g)
        self.up = [None] * len(chans)
        cur = prev
        for i in reversed(range(len(chans))):
            self.up[i] = ResBlock(cur + chans[i], chans[i], td, rng, k, g)
            cur = chans[i]
        self.ups = [Upsample(cfg.pool) for _ in chans[:-1]]
        self.norm_out = GroupNorm(min(g, chans[0]), chans[0])
        self.act_out = SiLU()
        self.conv_out = Conv2d(chans[0], cin, k, rng, zero_init=True)
        self._split = None

    # -- layout -------------------------------------------------------------
    def to_grid(self, x):
        n = x.shape[0]
        if self.cfg.domain == "image":
            return np.ascontiguousarray(x.transpose(0, 2, 3, 1))
        p = self.cfg.patch
        return x.reshape(n, 1, x.shape[1] // p, p)

    def from_grid(self, h):
        n = h.shape[0]
        if self.cfg.domain == "image":
            return np.ascontiguousarray(h.transpose(0, 3, 1, 2))
        return h.reshape(n, -1)

    # -- raw NHWC passes ----------------------------------------------------
    def forward(self, x, t):
        temb = self.time.forward(t)
        h = self.conv_in.forward(x)
        skips = []
        n_lv = len(self.down)
        for i, blk in enumerate(self.down):
            h = blk.forward(h, temb)
            skips.append(h)
            if i < n_lv - 1:
                h = self.pools[i].forward(h)
        h = self.mid.forward(h, temb)
        split = [0] * n_lv
        for i in reversed(range(n_lv)):
            split[i] = h.shape[-1]
            h = np.concatenate([h, skips[i]], axis=-1)
            h = self.up[i].forward(h, temb)
            if i > 0:
                h = self.ups[i - 1].forward(h)
        self._split = split
        return self.conv_out.forward(self.act_out.forward(self.norm_out.forward(h)))

    def backward(self, g):
        g = self.norm_out.backward(self.act_out.backward(self.conv_out.backward(g)))
        n_lv = len(self.down)
        dtemb = 0.0
        dskips = [None] * n_lv
        for i in range(n_lv):
            if i > 0:
                g = self.ups[i - 1].backward(g)
            g, dt = self.up[i].backward(g)
            dtemb = dtemb + dt
            c = self._split[i]
            dskips[i] = g[..., c:]
            g = g[..., :c]
        g, dt = self.mid.backward(g)
        dtemb = dtemb + dt
        for i in reversed(range(n_lv)):
            if i < n_lv - 1:
                g = self.pools[i].backward(g)
            g = g + dskips[i]
            g, dt = self.down[i].backward(g)
            dtemb = dtemb + dt
        dx = self.conv_in.backward(g)
        self.time.backward(dtemb)
        return dx

    # -- sample-layout inference ---------------------------------------------
    def predict_eps(self, x_t, t, batch_size=256):
        """Noise estimate for samples in media layout (``(N, C, H, W)`` or ``(N, L)``)."""
        x_t = np.asarray(x_t, dtype=self.dtype)
        n = x_t.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
        out = np.empty_like(x_t)
        for s in range(0, n, batch_size):
            sl = slice(s, s + batch_size)
            out[sl] = self.from_grid(self.forward(self.to_grid(x_t[sl]), t[sl]))
        return out

    # -- persistence -----------------------------------------------------------
    def save(self, path, meta=None):
        m = {"config": asdict(self.cfg)}
        m.update(meta or getattr(self, "meta", {}) or {})
        save_weights(path, "denoiser", m, self.state_dict())

    @classmethod
    def load(cls, path):
        _, meta, state = load_weights(path, expect_kind="denoiser")
        cfg = DenoiserConfig(**meta["config"])
        model = cls(cfg)
        model.load_state_dict(state)
        model.meta = {k: v for k, v in meta.items() if k != "config"}
        return model


class OracleDenoiser:
    """Returns the exact noise for a known clean batch (test and analysis aid)."""

    def __init__(self, x0, sched: NoiseSchedule):
        self.x0 = np.asarray(x0, dtype=np.float64)
        self.sched = sched

    def predict_eps(self, x_t, t):
        t = self.sched.check_t(t)
        ab = self.sched.alpha_bar
        x_t = np.asarray(x_t, dtype=np.float64)
        nd = x_t.ndim
        x0 = np.broadcast_to(self.x0, x_t.shape)
        return (x_t - _gather(np.sqrt(ab), t, nd, np.float64) * x0) / _gather(np.sqrt(1.0 - ab), t, nd, np.float64)


# ---------------------------------------------------------------------------
# training and sampling
# ---------------------------------------------------------------------------

@dataclass
class DiffTrainConfig:
    epochs: int = 40
    batch_size: int = 64
    lr: float = 2e-3
    seed: int = 0
    T: int = 200
    schedule: str = "cosine"
    warmup_steps: int = 100
    final_lr_frac: float = 0.1
    clip_norm: float = 1.0
    ema_decay: float = 0.995

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.T) <= 0 or self.lr <= 0:
            raise ValueError("epochs, batch_size, T and lr must be positive")


def lr_at(step, total, cfg):
    """Linear warm-up, then cosine decay to ``final_lr_frac * lr``."""
    if step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    frac = (step - cfg.warmup_steps) / max(1, total - cfg.warmup_steps)
    lo = cfg.final_lr_frac
    return cfg.lr * (lo + (1 - lo) * 0.5 * (1 + math.cos(math.pi * min(frac, 1.0))))


class EMA:
    def __init__(self, params, decay):
        self.params = params
        self.decay = decay
        self.shadow = [p.value.copy() for p in params]
        self.n = 0

    def update(self):
        self.n += 1
        d = min(self.decay, (1 + self.n) / (10 + self.n))
        for s, p in zip(self.shadow, self.params):
            s *= d
            s += (1 - d) * p.value

    def copy_to(self, params):
        for s, p in zip(self.shadow, params):
            p.value = s.copy()


def train_denoiser(data, model_cfg: DenoiserConfig, cfg: DiffTrainConfig, progress=None):
    """Fit a :class:`Denoiser` to ``data`` (float samples in [-1, 1]) by noise regression.

    Returns the model with EMA weights; ``model.meta["loss_history"]`` holds
    one mean loss per epoch and ``model.meta["step_losses"]`` every step.
    """
    if not np.issubdtype(np.asarray(data).dtype, np.floating):
        raise ValueError("training data must be float samples in [-1, 1], not raw integers")
    data = np.asarray(data, dtype=np.float32)
    if data.shape[0] == 0:
        raise ValueError("empty training set")
    if np.abs(data).max() > 1.0 + 1e-6:
        raise ValueError("training data must lie in [-1, 1]")
    if tuple(data.shape[1:]) != model_cfg.sample_shape:
        raise ValueError(f"data shape {data.shape[1:]} != model sample shape {model_cfg.sample_shape}")
    sched = make_schedule(cfg.schedule, cfg.T)
    rng = seeded_rng(cfg.seed)
    model = Denoiser(model_cfg, seed=cfg.seed)
    params = model.params()
    opt = Adam(params, cfg.lr, clip_norm=cfg.clip_norm)
    ema = EMA(params, cfg.ema_decay)
    n = data.shape[0]
    steps_per_epoch = -(-n // cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    step_losses, epoch_losses = [], []
    start = time.perf_counter()
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        acc = []
        for b in range(steps_per_epoch):
            x0 = data[order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            t = rng.integers(1, cfg.T + 1, size=x0.shape[0])
            eps = rng.standard_normal(x0.shape, dtype=np.float32)
            x_t = q_sample(x0, t, eps, sched)
            grid = model.to_grid(x_t)
            pred = model.forward(grid, t.astype(np.float64))
            diff = pred - model.to_grid(eps)
            loss = float(np.mean(diff.astype(np.float64) ** 2))
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch} step {b}")
            opt.zero_grad()
            model.backward((2.0 / diff.size) * diff)
            opt.step(lr_at(step, total, cfg))
            ema.update()
            step += 1
            acc.append(loss)
            step_losses.append(loss)
        epoch_losses.append(float(np.mean(acc)))
        log.info("denoiser epoch %d/%d loss %.4f (%.0fs)", epoch + 1, cfg.epochs, epoch_losses[-1],
                 time.perf_counter() - start)
        if progress is not None:
            progress(epoch, epoch_losses[-1])
    ema.copy_to(params)
    model.meta = {
        "T": cfg.T,
        "schedule": cfg.schedule,
        "seed": cfg.seed,
        "train": asdict(cfg),
        "loss_history": epoch_losses,
        "step_losses": step_losses,
        "train_seconds": time.perf_counter() - start,
    }
    return model


def eps_mse(model, data, sched: NoiseSchedule, rng, t=None):
    """Mean squared noise-prediction error on ``data`` (uniform random ``t`` unless given)."""
    data = np.asarray(data, dtype=np.float32)
    n = data.shape[0]
    tt = rng.integers(1, sched.T + 1, size=n) if t is None else np.full(n, t)
    eps = rng.standard_normal(data.shape, dtype=np.float32)
    x_t = q_sample(data, tt, eps, sched)
    pred = model.predict_eps(x_t, tt)
    return float(np.mean((pred.astype(np.float64) - eps) ** 2))


def ancestral_sample(model, sched: NoiseSchedule, n, rng, shape=None, x_T=None):
    """Draw samples by iterating the posterior from ``t = T`` down to 1.

    At each step the clean estimate comes from exact inversion (clipped to
    [-1, 1]) and the next state is drawn from the posterior around it.
    """
    shape = tuple(shape or model.cfg.sample_shape)
    x = rng.standard_normal((n,) + shape) if x_T is None else np.array(x_T, dtype=np.float64)
    for t in range(sched.T, 0, -1):
        eps_hat = model.predict_eps(x, t)
        x0_hat = np.clip(predict_x0(x, t, eps_hat, sched), -1.0, 1.0)
        mean, var = posterior(x0_hat, x, t, sched)
        x = mean + math.sqrt(var) * rng.standard_normal(x.shape) if t > 1 else mean
    return np.clip(x, -1.0, 1.0)
