"""``stegsan`` command line."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .data import gen_synthetic_audio, gen_synthetic_images
from .diffusion import EXACT_INVERSION, PAPER_EQ7, Denoiser, DenoiserConfig, DiffTrainConfig, make_schedule, train_denoiser
from .hiding import HidePair, HideTrainConfig, ddh_hide, ddh_reveal, train_hide_pair
from .lsb import CapacityError, audio_lsb_hide, audio_lsb_reveal, lsb_hide, lsb_reveal
from .media import (
    MediaError,
    load_png,
    load_png_dir,
    load_wav,
    save_png,
    save_wav,
    seeded_rng,
)
from .metrics import image_report
from .nn import WeightFileError
from .sanitizers import (
    AUDIO_FRAME,
    SanitizeRequest,
    VaeConfig,
    VaeModel,
    audio_training_frames,
    describe,
    sanitize,
    train_vae,
)

log = logging.getLogger("stegsan")


def _is_wav(path):
    return str(path).lower().endswith(".wav")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _hider(a):
    if not a.model:
        raise MediaError("--method ddh needs --model")
    return HidePair.load(a.model)


def cmd_hide(a):
    if getattr(a, "audio", False) or _is_wav(a.cover):
        if a.text is None:
            raise MediaError("audio hiding needs --text")
        save_wav(a.out, audio_lsb_hide(load_wav(a.cover), a.text, a.bits or 1))
        return 0
    cover = load_png(a.cover)
    secret = load_png(a.secret) if a.secret else None
    if secret is None:
        raise MediaError("image hiding needs --secret")
    if a.method == "ddh":
        out = ddh_hide(_hider(a), cover, secret)
    else:
        out = lsb_hide(cover, secret, a.bits or 4)
    save_png(a.out, out)
    return 0


def cmd_reveal(a):
    if getattr(a, "audio", False) or _is_wav(a.container):
        payload = audio_lsb_reveal(load_wav(a.container), a.bits or 1)
        if payload.malformed:
            print("warning: length header exceeds capacity; payload truncated", file=sys.stderr)
        text = payload.data.decode("utf-8", errors="replace")
        if a.out:
            Path(a.out).write_text(text)
        else:
            print(text)
        return 0
    if not a.out:
        raise MediaError("image reveal needs --out")
    img = load_png(a.container)
    out = ddh_reveal(_hider(a), img) if a.method == "ddh" else lsb_reveal(img, a.bits or 4)
    save_png(a.out, out)
    return 0


def _training_images(spec, n, shape, seed):
    if spec == "synthetic":
        return gen_synthetic_images(n, shape, seed=seed)
    return load_png_dir(spec)


def cmd_train_hider(a):
    data = _training_images(a.data, a.n, tuple(a.shape), a.seed)
    cfg = HideTrainConfig(lambda_cover=a.lambda_cover, lambda_secret=a.lambda_secret, epochs=a.epochs,
                          batch_size=a.batch_size, lr=a.lr, seed=a.seed, width=a.width)
    pair = train_hide_pair(data, cfg)
    pair.save(a.out)
    print(f"cover mse {pair.meta['final_cover_mse']:.6f}  secret mse {pair.meta['final_secret_mse']:.6f}")
    return 0


def cmd_train_diffusion(a):
    if a.channels is None:
        a.channels = 16 if a.audio else 32
    cfg = DiffTrainConfig(epochs=a.epochs, batch_size=a.batch_size, lr=a.lr, seed=a.seed, T=a.T,
                          schedule=a.schedule)
    if a.audio:
        if a.data == "synthetic":
            clips = gen_synthetic_audio(a.n, seed=a.seed)
        else:
            clips = [load_wav(p) for p in sorted(Path(a.data).glob("*.wav"))]
        if not clips:
            raise MediaError(f"no WAV files in {a.data}")
        data = audio_training_frames(clips)
        if len(data) == 0:
            raise MediaError(f"clips shorter than one {AUDIO_FRAME}-sample frame")
        mcfg = DenoiserConfig.for_audio(AUDIO_FRAME, base_channels=a.channels)
    else:
        imgs = _training_images(a.data, a.n, tuple(a.shape), a.seed)
        data = imgs.astype(np.float32) / 127.5 - 1.0
        mcfg = DenoiserConfig(imgs.shape[1:], base_channels=a.channels)
    model = train_denoiser(data, mcfg, cfg)
    model.save(a.out)
    print(f"final loss {model.meta['loss_history'][-1]:.5f}")
    return 0


def cmd_train_vae(a):
    data = _training_images(a.data, a.n, tuple(a.shape), a.seed)
    model = train_vae(data, VaeConfig(latent_dim=a.latent, epochs=a.epochs, seed=a.seed))
    model.save(a.out)
    print(f"final loss {model.meta['loss_history'][-1]:.3f}")
    return 0


def cmd_sanitize(a):
    method = a.method.replace("-", "_")
    model = sched = None
    if method in ("dm_suds", "dm_suds_direct"):
        if not a.model:
            raise MediaError(f"{a.method} needs --model")
        model = Denoiser.load(a.model)
        sched = make_schedule(model.meta.get("schedule", "cosine"), int(model.meta["T"]))
    elif method == "vae":
        if not a.model:
            raise MediaError("vae needs --model")
        model = VaeModel.load(a.model)
    req = SanitizeRequest(method, t=a.t, sigma=a.sigma, model=model, sched=sched, mode=a.mode)
    rng = seeded_rng(a.seed)
    if _is_wav(a.input):
        save_wav(a.out, sanitize(load_wav(a.input), req, rng))
    else:
        save_png(a.out, sanitize(load_png(a.input), req, rng))
    log.info("sanitized %s with %s", a.input, describe(req))
    return 0


def _json_num(v):
    return v if math.isfinite(v) else None


def cmd_eval(a):
    rep = image_report(load_png(a.ref), load_png(a.test))
    d = rep.to_dict()
    if a.json:
        print(json.dumps({k: _json_num(float(v)) for k, v in d.items()}))
    else:
        for k, v in d.items():
            print(f"{k:8s} {v:.6g}")
    return 0


def cmd_experiment(a):
    overrides = {}
    if a.no_train:
        overrides["train"] = "false"
    cfg = ex.load_config(a.config, overrides)
    rows = ex.EXPERIMENTS[a.name](cfg, a.out)
    print(f"{a.name}: {len(rows)} rows written to {a.out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="stegsan", description="Steganography hiding, sanitization and evaluation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def shape_args(sp):
        sp.add_argument("--n", type=int, default=2000, help="synthetic set size")
        sp.add_argument("--shape", type=int, nargs=3, default=(3, 16, 16), metavar=("C", "H", "W"))

    sp = sub.add_parser("hide", help="embed an image (PNG) or text (WAV)")
    sp.add_argument("--cover", required=True)
    sp.add_argument("--secret")
    sp.add_argument("--text")
    sp.add_argument("--bits", type=int)
    sp.add_argument("--method", choices=("lsb", "ddh"), default="lsb")
    sp.add_argument("--model", help="hide-pair weights for --method ddh")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_hide)

    sp = sub.add_parser("hide-audio", help="embed text in a WAV file")
    sp.add_argument("--cover", required=True)
    sp.add_argument("--text", required=True)
    sp.add_argument("--bits", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_hide, secret=None, method="lsb", model=None, audio=True)

    sp = sub.add_parser("reveal", help="extract a secret image (PNG) or text (WAV)")
    sp.add_argument("--in", dest="container", required=True)
    sp.add_argument("--bits", type=int)
    sp.add_argument("--method", choices=("lsb", "ddh"), default="lsb")
    sp.add_argument("--model")
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_reveal)

    sp = sub.add_parser("reveal-audio", help="extract text from a WAV file")
    sp.add_argument("--in", dest="container", required=True)
    sp.add_argument("--bits", type=int, default=1)
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_reveal, method="lsb", model=None, audio=True)

    sp = sub.add_parser("train-hider", help="train the learned hide/reveal pair")
    sp.add_argument("--data", default="synthetic", help="PNG directory or 'synthetic'")
    shape_args(sp)
    sp.add_argument("--epochs", type=int, default=20)
    sp.add_argument("--batch-size", type=int, default=32)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--width", type=int, default=32)
    sp.add_argument("--lambda-cover", type=float, default=1.0)
    sp.add_argument("--lambda-secret", type=float, default=0.75)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_train_hider)

    sp = sub.add_parser("train-diffusion", help="train a noise-prediction model")
    sp.add_argument("--data", default="synthetic", help="PNG or WAV directory, or 'synthetic'")
    sp.add_argument("--audio", action="store_true", help="train the 1-D frame model")
    shape_args(sp)
    sp.add_argument("--T", type=int, default=200)
    sp.add_argument("--schedule", choices=("cosine", "linear"), default="cosine")
    sp.add_argument("--epochs", type=int, default=120)
    sp.add_argument("--batch-size", type=int, default=16)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--channels", type=int, help="default 32 (image) / 16 (audio)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_train_diffusion)

    sp = sub.add_parser("train-vae", help="train the VAE baseline sanitizer")
    sp.add_argument("--data", default="synthetic")
    shape_args(sp)
    sp.add_argument("--latent", type=int, default=64)
    sp.add_argument("--epochs", type=int, default=30)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_train_vae)

    sp = sub.add_parser("sanitize", help="apply a sanitizer to a PNG or WAV file")
    sp.add_argument("--method", required=True,
                    choices=("dm-suds", "dm-suds-direct", "gaussian", "dct-noise", "vae",
                             "dm_suds", "dm_suds_direct", "dct_noise"))
    sp.add_argument("--t", type=int)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--model")
    sp.add_argument("--mode", choices=(EXACT_INVERSION, PAPER_EQ7), default=EXACT_INVERSION)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_sanitize)

    sp = sub.add_parser("eval", help="compare two images")
    sp.add_argument("--ref", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("experiment", help="run an experiment and write CSV/SVG reports")
    sp.add_argument("name", choices=sorted(ex.EXPERIMENTS))
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)
    sp.add_argument("--no-train", action="store_true", help="fail instead of training missing models")
    sp.set_defaults(fn=cmd_experiment)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.fn(args)
    except (MediaError, CapacityError, WeightFileError, ex.ConfigError, ex.MissingArtifact,
            FileNotFoundError, ValueError, OSError) as e:
        print(f"stegsan: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
