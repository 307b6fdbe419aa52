"""A small trainable cover-dependent hiding pair.

The hide network sees cover and secret stacked along channels and emits a
residual that is added to the cover; the reveal network maps a container back
to a secret. Both are plain convolutional stacks of residual blocks.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .media import MediaError, check_image, from_model_range, seeded_rng, to_model_range
from .nn import Adam, Conv2d, GroupNorm, Module, ResBlock, SiLU, load_weights, save_weights

log = logging.getLogger(__name__)


@dataclass
class HideTrainConfig:
    lambda_cover: float = 1.0
    lambda_secret: float = 0.75
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    width: int = 32
    blocks: int = 2
    quant_noise: bool = True

    def __post_init__(self):
        if self.lambda_cover <= 0 or self.lambda_secret < 0:
            raise ValueError("loss weights must be positive (lambda_secret may be 0)")
        if min(self.epochs, self.batch_size) <= 0:
            raise ValueError("epochs and batch_size must be positive")


class _ConvStack(Module):
    def __init__(self, cin, cout, width, blocks, rng, zero_out):
        self.conv_in = Conv2d(cin, width, 3, rng)
        self.blocks = [ResBlock(width, width, 0, rng, groups=8) for _ in range(blocks)]
        self.norm = GroupNorm(8, width)
        self.act = SiLU()
        self.conv_out = Conv2d(width, cout, 3, rng, zero_init=zero_out)

    def forward(self, x):
        h = self.conv_in.forward(x)
        for b in self.blocks:
            h = b.forward(h)
        return self.conv_out.forward(self.act.forward(self.norm.forward(h)))

    def backward(self, g):
        g = self.norm.backward(self.act.backward(self.conv_out.backward(g)))
        for b in reversed(self.blocks):
            g, _ = b.backward(g)
        return self.conv_in.backward(g)


class HidePair(Module):
    def __init__(self, shape, width=32, blocks=2, seed=0):
        self.shape = tuple(int(s) for s in shape)
        c = self.shape[0]
        rng = seeded_rng(seed)
        self.hide_net = _ConvStack(2 * c, c, width, blocks, rng, zero_out=True)
        self.reveal_net = _ConvStack(c, c, width, blocks, rng, zero_out=False)
        self.meta = {}

    # float NHWC passes used in training
    def hide_f(self, cover, secret):
        return cover + self.hide_net.forward(np.concatenate([cover, secret], axis=-1))

    def reveal_f(self, container):
        return self.reveal_net.forward(container)

    def _check(self, img):
        img = np.asarray(img)
        if img.shape[-3:] != self.shape:
            raise MediaError(f"image shape {img.shape[-3:]} does not match trained shape {self.shape}")
        return check_image(img, batched=img.ndim == 4)

    def save(self, path):
        meta = dict(self.meta)
        meta.update({"shape": list(self.shape), "width": self.width, "blocks": self.blocks})
        save_weights(path, "hidepair", meta, self.state_dict())

    @property
    def width(self):
        return self.hide_net.conv_in.cout

    @property
    def blocks(self):
        return len(self.hide_net.blocks)

    @classmethod
    def load(cls, path):
        _, meta, state = load_weights(path, expect_kind="hidepair")
        pair = cls(meta["shape"], meta["width"], meta["blocks"])
        pair.load_state_dict(state)
        pair.meta = {k: v for k, v in meta.items() if k not in ("shape", "width", "blocks")}
        return pair


def _nhwc(x):
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1))


def _nchw(x):
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2))


def _batched(fn, imgs, *more):
    single = np.asarray(imgs).ndim == 3
    args = [np.asarray(a)[None] if single else np.asarray(a) for a in (imgs,) + more]
    out = fn(*args)
    return out[0] if single else out


def ddh_hide(pair: HidePair, cover, secret):
    """Container = quantised ``cover + residual(cover, secret)``."""
    cover = pair._check(cover)
    secret = pair._check(secret)
    if cover.shape != secret.shape:
        raise MediaError("cover and secret differ in shape")

    def run(c, s):
        out = pair.hide_f(_nhwc(to_model_range(c)), _nhwc(to_model_range(s)))
        return from_model_range(_nchw(out))

    return _batched(run, cover, secret)


def ddh_reveal(pair: HidePair, container):
    container = pair._check(container)

    def run(c):
        return from_model_range(_nchw(pair.reveal_f(_nhwc(to_model_range(c)))))

    return _batched(run, container)


def train_hide_pair(dataset, cfg: HideTrainConfig, progress=None) -> HidePair:
    """Jointly fit hide and reveal nets on random cover/secret pairings of ``dataset``.

    Loss: ``lambda_cover * MSE(cover, container) + lambda_secret * MSE(secret, revealed)``
    on the [-1, 1] scale. With ``quant_noise`` the container passed to the
    reveal net carries uniform noise of one quantisation step.
    """
    dataset = check_image(dataset, batched=True)
    if dataset.shape[0] < 2:
        raise ValueError("need at least two images to form cover/secret pairs")
    data = _nhwc(to_model_range(dataset))
    rng = seeded_rng(cfg.seed)
    pair = HidePair(dataset.shape[1:], cfg.width, cfg.blocks, seed=cfg.seed)
    opt = Adam(pair.params(), cfg.lr, clip_norm=1.0)
    n = data.shape[0]
    half = n // 2
    bs = cfg.batch_size
    steps = -(-half // bs)
    history = []
    q = 1.0 / 127.5
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        covers, secrets = perm[:half], perm[half:2 * half]
        lc_acc, ls_acc = [], []
        for b in range(steps):
            sl = slice(b * bs, (b + 1) * bs)
            c, s = data[covers[sl]], data[secrets[sl]]
            cont = pair.hide_f(c, s)
            noisy = cont + rng.uniform(-0.5 * q, 0.5 * q, cont.shape).astype(cont.dtype) if cfg.quant_noise else cont
            rev = pair.reveal_f(noisy)
            dc = cont - c
            ds = rev - s
            lc = float(np.mean(dc.astype(np.float64) ** 2))
            ls = float(np.mean(ds.astype(np.float64) ** 2))
            loss = cfg.lambda_cover * lc + cfg.lambda_secret * ls
            if not math.isfinite(loss):
                raise RuntimeError(f"hide-pair training diverged at epoch {epoch} step {b}")
            opt.zero_grad()
            g_cont = (2.0 * cfg.lambda_cover / dc.size) * dc
            if cfg.lambda_secret > 0:
                g_cont = g_cont + pair.reveal_net.backward((2.0 * cfg.lambda_secret / ds.size) * ds)
            # container = cover + residual; only the residual path has parameters
            pair.hide_net.backward(g_cont)
            opt.step()
            lc_acc.append(lc)
            ls_acc.append(ls)
        history.append((float(np.mean(lc_acc)), float(np.mean(ls_acc))))
        log.info("hide-pair epoch %d/%d cover %.5f secret %.5f", epoch + 1, cfg.epochs, *history[-1])
        if progress is not None:
            progress(epoch, history[-1])
    pair.meta = {"train": asdict(cfg), "loss_history": history,
                 "final_cover_mse": history[-1][0], "final_secret_mse": history[-1][1]}
    return pair
