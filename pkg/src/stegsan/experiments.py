"""Experiment drivers: sanitizer comparison, timestep sweeps, the no-noise
ablation and the audio case, plus CSV and SVG reporting.

Every random draw is keyed on ``(seed, purpose)`` so results do not depend on
the order in which rows are computed. Trained models are cached in
``model_dir`` under names derived from their training settings.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import disjoint_pairs, gen_synthetic_audio, gen_synthetic_images, pick_sentences
from .diffusion import (
    EXACT_INVERSION,
    PAPER_EQ7,
    Denoiser,
    DenoiserConfig,
    DiffTrainConfig,
    make_schedule,
    train_denoiser,
)
from .hiding import HidePair, HideTrainConfig, ddh_hide, ddh_reveal, train_hide_pair
from .lsb import TextPayload, audio_capacity, audio_lsb_hide, audio_lsb_reveal, lsb_hide, lsb_reveal, read_audio_bits
from .media import MediaError, audio_to_model_range, load_png_dir, to_model_range
from .metrics import THETA_IP, THETA_SE, ber, image_report, removal_rate, verdict
from .sanitizers import (
    AUDIO_FRAME,
    DCT_SIGMA,
    GAUSSIAN_SIGMA,
    VaeConfig,
    VaeModel,
    audio_training_frames,
    dct_noise_sanitize,
    dm_suds,
    dm_suds_audio,
    dm_suds_direct,
    gaussian_sanitize,
    train_vae,
    vae_sanitize,
)

log = logging.getLogger(__name__)

CSV_COLUMNS = ("hide", "sanitizer", "t", "mse_ip", "psnr_ip", "ssim_ip", "ncc_ip",
               "mse_se", "psnr_se", "ssim_se", "ncc_se", "verdict_ip", "verdict_se", "time_ms")
AUDIO_COLUMNS = ("clip", "hide", "sanitizer", "t", "n_bits", "payload_bits",
                 "ber_pre", "ber_post", "rr", "mse", "malformed")
HIDE_METHODS = ("lsb", "ddh_toy")
SANITIZERS = ("dm_suds", "dm_suds_direct", "gaussian", "dct_noise", "vae")
NONE = "None"


class ConfigError(ValueError):
    pass


class MissingArtifact(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _csv_list(v):
    return tuple(s.strip() for s in str(v).split(",") if s.strip())


def _shape(v):
    if isinstance(v, str):
        v = v.lower().replace(",", "x").split("x")
    return tuple(int(s) for s in v)


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


@dataclass
class ExperimentConfig:
    """Settings for every experiment. ``t`` and ``t_step`` default to ``T/2`` and ``T/40``."""

    source: str = "synthetic"
    shape: tuple = (3, 16, 16)
    n_train: int = 2000
    n_containers: int = 100
    hide: tuple = HIDE_METHODS
    sanitizers: tuple = ("dm_suds", "gaussian", "dct_noise", "vae")
    lsb_bits: int = 4
    T: int = 200
    t: int = 0
    t_step: int = 0
    mode: str = EXACT_INVERSION
    seed: int = 0
    model_dir: str = ""
    train: bool = True
    timing: bool = False
    denoiser_epochs: int = 120
    denoiser_channels: int = 32
    denoiser_batch: int = 16
    denoiser_lr: float = 1e-3
    vae_epochs: int = 30
    vae_latent: int = 64
    hider_epochs: int = 20
    audio_clips: int = 50
    audio_train_clips: int = 200
    audio_length: int = 8192
    audio_bits: int = 1
    audio_epochs: int = 120
    audio_channels: int = 16

    _CONVERT = {"shape": _shape, "hide": _csv_list, "sanitizers": _csv_list, "train": _bool, "timing": _bool}

    def __post_init__(self):
        self.shape = _shape(self.shape)
        self.hide = _csv_list(",".join(self.hide)) if not isinstance(self.hide, str) else _csv_list(self.hide)
        if isinstance(self.sanitizers, str):
            self.sanitizers = _csv_list(self.sanitizers)
        self.sanitizers = tuple(s.replace("-", "_") for s in self.sanitizers)
        if not self.t:
            self.t = self.T // 2
        if not self.t_step:
            self.t_step = max(1, self.T // 40)
        self.validate()

    def validate(self):
        for name in ("n_train", "n_containers", "T", "lsb_bits", "audio_clips", "audio_length",
                     "audio_bits", "denoiser_epochs", "denoiser_batch", "vae_epochs", "hider_epochs", "audio_epochs"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not self.denoiser_lr > 0:
            raise ConfigError("denoiser_lr must be positive")
        if len(self.shape) != 3 or self.shape[0] not in (1, 3):
            raise ConfigError(f"shape must be CxHxW with C in (1, 3): {self.shape}")
        if not 1 <= self.lsb_bits <= 8 or not 1 <= self.audio_bits <= 8:
            raise ConfigError("bit depths must be in [1, 8]")
        if not 1 <= self.t <= self.T:
            raise ConfigError(f"t={self.t} outside [1, {self.T}]")
        bad = set(self.hide) - set(HIDE_METHODS)
        if bad or not self.hide:
            raise ConfigError(f"unknown hide method(s) {sorted(bad)}; choose from {HIDE_METHODS}")
        bad = set(self.sanitizers) - set(SANITIZERS)
        if bad:
            raise ConfigError(f"unknown sanitizer(s) {sorted(bad)}; choose from {SANITIZERS}")
        if self.mode not in (EXACT_INVERSION, PAPER_EQ7):
            raise ConfigError(f"unknown mode {self.mode!r}")

    def t_grid(self):
        return list(range(self.t_step, self.T + 1, self.t_step))

    @classmethod
    def keys(cls):
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_mapping(cls, items):
        known = set(cls.keys())
        unknown = sorted(set(items) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        kw = {}
        for f in dataclasses.fields(cls):
            if f.name not in items:
                continue
            v = items[f.name]
            conv = cls._CONVERT.get(f.name)
            try:
                if conv is not None:
                    kw[f.name] = conv(v)
                elif f.type in ("int", int):
                    kw[f.name] = int(v)
                elif f.type in ("float", float):
                    kw[f.name] = float(v)
                else:
                    kw[f.name] = str(v)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"bad value for {f.name}: {v!r} ({e})") from None
        return cls(**kw)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.keys()}


def parse_config_text(text):
    items = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k in items:
            raise ConfigError(f"line {lineno}: duplicate key {k!r}")
        items[k] = v
    return items


def load_config(path=None, overrides=None, env=None):
    """Read a ``key = value`` file; ``STEGSAN_SEED`` in ``env`` replaces the seed."""
    env = os.environ if env is None else env
    items = parse_config_text(Path(path).read_text()) if path else {}
    items.update(overrides or {})
    if env.get("STEGSAN_SEED"):
        items["seed"] = env["STEGSAN_SEED"]
    return ExperimentConfig.from_mapping(items)


# ---------------------------------------------------------------------------
# seeding and artifacts
# ---------------------------------------------------------------------------

def _tag(s):
    return zlib.crc32(str(s).encode())


def rng_for(seed, *keys):
    """Independent generator for a named purpose; order of use does not matter."""
    return np.random.default_rng([int(seed)] + [_tag(k) for k in keys])


def _subseed(seed, *keys):
    return int(rng_for(seed, *keys).integers(0, 2**31 - 1))


def _digest(obj):
    return hashlib.sha1(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:12]


class Workspace:
    """Datasets and trained models for one configuration, created lazily and cached."""

    def __init__(self, cfg: ExperimentConfig, out_dir=None):
        self.cfg = cfg
        base = cfg.model_dir or (Path(out_dir) / "models" if out_dir else Path("models"))
        self.model_dir = Path(base)
        self._cache = {}
        self.sched = make_schedule("cosine", cfg.T)

    # -- data -------------------------------------------------------------
    def _data_id(self):
        c = self.cfg
        return {"source": c.source, "shape": list(c.shape), "n_train": c.n_train, "seed": c.seed}

    def train_images(self):
        if "train" not in self._cache:
            c = self.cfg
            if c.source == "synthetic":
                imgs = gen_synthetic_images(c.n_train, c.shape, seed=_subseed(c.seed, "train-images"))
            else:
                imgs = load_png_dir(c.source)[:c.n_train]
                if imgs.shape[1:] != c.shape:
                    raise ConfigError(f"images in {c.source} have shape {imgs.shape[1:]}, config says {c.shape}")
            self._cache["train"] = imgs
        return self._cache["train"]

    def eval_images(self):
        if "eval" not in self._cache:
            c = self.cfg
            if c.source == "synthetic":
                pool = gen_synthetic_images(2 * c.n_containers, c.shape, seed=_subseed(c.seed, "eval-images"))
            else:
                pool = load_png_dir(c.source)
            cov, sec = disjoint_pairs(len(pool), c.n_containers, rng_for(c.seed, "pairs"))
            self._cache["eval"] = (pool[cov], pool[sec])
        return self._cache["eval"]

    # -- models -----------------------------------------------------------
    def _artifact(self, kind, settings, build, load):
        key = (kind, _digest(settings))
        if key in self._cache:
            return self._cache[key]
        path = self.model_dir / f"{kind}-{key[1]}.bin"
        if path.exists():
            model = load(path)
        elif not self.cfg.train:
            raise MissingArtifact(f"no trained {kind} at {path}; rerun with training enabled")
        else:
            log.info("training %s -> %s", kind, path)
            model = build()
            self.model_dir.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            model.save(tmp)
            os.replace(tmp, path)
        self._cache[key] = model
        return model

    def denoiser(self):
        c = self.cfg
        mcfg = DenoiserConfig(c.shape, base_channels=c.denoiser_channels)
        tcfg = DiffTrainConfig(epochs=c.denoiser_epochs, batch_size=c.denoiser_batch, lr=c.denoiser_lr, T=c.T,
                               seed=_subseed(c.seed, "denoiser"))
        settings = {"data": self._data_id(), "model": dataclasses.asdict(mcfg), "train": dataclasses.asdict(tcfg)}

        def build():
            return train_denoiser(to_model_range(self.train_images()), mcfg, tcfg)

        return self._artifact("denoiser", settings, build, Denoiser.load)

    def vae(self):
        c = self.cfg
        vcfg = VaeConfig(latent_dim=c.vae_latent, epochs=c.vae_epochs, seed=_subseed(c.seed, "vae"))
        settings = {"data": self._data_id(), "vae": dataclasses.asdict(vcfg)}
        return self._artifact("vae", settings, lambda: train_vae(self.train_images(), vcfg), VaeModel.load)

    def hider(self):
        c = self.cfg
        hcfg = HideTrainConfig(epochs=c.hider_epochs, seed=_subseed(c.seed, "hider"))
        settings = {"data": self._data_id(), "hider": dataclasses.asdict(hcfg)}
        return self._artifact("hidepair", settings, lambda: train_hide_pair(self.train_images(), hcfg),
                              HidePair.load)

    def audio_denoiser(self):
        c = self.cfg
        mcfg = DenoiserConfig.for_audio(AUDIO_FRAME, base_channels=c.audio_channels)
        tcfg = DiffTrainConfig(epochs=c.audio_epochs, batch_size=c.denoiser_batch, lr=c.denoiser_lr, T=c.T,
                               seed=_subseed(c.seed, "audio-denoiser"))
        settings = {"clips": c.audio_train_clips, "length": c.audio_length, "seed": c.seed,
                    "model": dataclasses.asdict(mcfg), "train": dataclasses.asdict(tcfg)}

        def build():
            clips = gen_synthetic_audio(c.audio_train_clips, c.audio_length, seed=_subseed(c.seed, "audio-train"))
            return train_denoiser(audio_training_frames(clips), mcfg, tcfg)

        return self._artifact("audio-denoiser", settings, build, Denoiser.load)

    # -- hiding -----------------------------------------------------------
    def hide_fns(self, method):
        if method == "lsb":
            n = self.cfg.lsb_bits
            return (lambda c, s: lsb_hide(c, s, n)), (lambda x: lsb_reveal(x, n))
        if method == "ddh_toy":
            pair = self.hider()
            return (lambda c, s: ddh_hide(pair, c, s)), (lambda x: ddh_reveal(pair, x))
        raise ConfigError(f"unknown hide method {method!r}")

    def containers(self, method):
        key = ("containers", method)
        if key not in self._cache:
            cov, sec = self.eval_images()
            hide, reveal = self.hide_fns(method)
            self._cache[key] = (cov, sec, hide(cov, sec), reveal)
        return self._cache[key]

    # -- sanitizers -------------------------------------------------------
    def sanitize(self, name, x, t, rng):
        c = self.cfg
        if name == "dm_suds":
            return dm_suds(x, t, self.denoiser(), self.sched, rng, c.mode)
        if name == "dm_suds_direct":
            return dm_suds_direct(x, t, self.denoiser(), self.sched, c.mode)
        if name == "gaussian":
            return gaussian_sanitize(x, GAUSSIAN_SIGMA, rng)
        if name == "dct_noise":
            return dct_noise_sanitize(x, DCT_SIGMA, rng)
        if name == "vae":
            return vae_sanitize(x, self.vae())
        raise ConfigError(f"unknown sanitizer {name!r}")


# ---------------------------------------------------------------------------
# rows
# ---------------------------------------------------------------------------

@dataclass
class ResultRow:
    hide: str
    sanitizer: str
    t: int
    mse_ip: float
    psnr_ip: float
    ssim_ip: float
    ncc_ip: float
    mse_se: float
    psnr_se: float
    ssim_se: float
    ncc_se: float
    verdict_ip: str
    verdict_se: str
    time_ms: float
    thresholds: tuple = field(default=(THETA_IP, THETA_SE), repr=False)

    def values(self):
        return [getattr(self, c) for c in CSV_COLUMNS]


def _mean(vals):
    a = np.asarray(vals, dtype=np.float64)
    if np.all(np.isnan(a)):
        return math.nan
    return float(np.nanmean(a))


def aggregate(hide, sanitizer, t, refs_ip, tests_ip, refs_se, tests_se, time_ms,
              theta_ip=THETA_IP, theta_se=THETA_SE):
    """Mean IP and SE metrics over a batch of images, with the verdict on the mean NCCs."""
    ip = [image_report(a, b) for a, b in zip(refs_ip, tests_ip)]
    se = [image_report(a, b) for a, b in zip(refs_se, tests_se)]
    m = {}
    for tag, reps in (("ip", ip), ("se", se)):
        m[f"mse_{tag}"] = _mean([r.mse for r in reps])
        m[f"psnr_{tag}"] = _mean([r.psnr_db for r in reps])
        m[f"ssim_{tag}"] = _mean([r.ssim for r in reps])
        m[f"ncc_{tag}"] = _mean([r.ncc for r in reps])
    v = verdict(m["ncc_ip"], m["ncc_se"], theta_ip, theta_se)
    return ResultRow(hide, sanitizer, int(t), verdict_ip=_label(v.ip_success), verdict_se=_label(v.se_success),
                     time_ms=time_ms, thresholds=(theta_ip, theta_se), **m)


def _label(ok):
    return "Success" if ok else "Fail"


def _run_cell(ws: Workspace, hide, sanitizer, t):
    cov, sec, cont, reveal = ws.containers(hide)
    rng = rng_for(ws.cfg.seed, "sanitize", hide, sanitizer, t)
    start = time.perf_counter()
    san = ws.sanitize(sanitizer, cont, t, rng)
    elapsed = time.perf_counter() - start
    ms = 1000.0 * elapsed / len(cont) if ws.cfg.timing else math.nan
    return aggregate(hide, sanitizer, t, cov, san, sec, reveal(san), ms)


def _none_row(ws: Workspace, hide):
    cov, sec, cont, reveal = ws.containers(hide)
    return aggregate(hide, NONE, 0, cov, cont, sec, reveal(cont), math.nan)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def run_rq1(cfg: ExperimentConfig, out_dir=None, ws=None):
    """One ``None`` row and one row per sanitizer for each hide method, at ``cfg.t``."""
    ws = ws or Workspace(cfg, out_dir)
    rows = []
    for hide in cfg.hide:
        rows.append(_none_row(ws, hide))
        for san in cfg.sanitizers:
            rows.append(_run_cell(ws, hide, san, cfg.t))
    if out_dir is not None:
        emit_report(rows, out_dir, "rq1")
    return rows


def run_rq2(cfg: ExperimentConfig, out_dir=None, ws=None):
    """Sweep the diffusion sanitizer over the evenly spaced timestep grid."""
    ws = ws or Workspace(cfg, out_dir)
    rows = [_run_cell(ws, hide, "dm_suds", t) for hide in cfg.hide for t in cfg.t_grid()]
    if out_dir is not None:
        emit_report(rows, out_dir, "rq2", plot=True)
    return rows


def run_rq3(cfg: ExperimentConfig, out_dir=None, ws=None):
    """Sweep with and without forward noise; also writes a paired SE comparison."""
    ws = ws or Workspace(cfg, out_dir)
    rows = []
    for hide in cfg.hide:
        for t in cfg.t_grid():
            rows.append(_run_cell(ws, hide, "dm_suds_direct", t))
            rows.append(_run_cell(ws, hide, "dm_suds", t))
    if out_dir is not None:
        emit_report(rows, out_dir, "rq3", plot=True)
        _write_text(Path(out_dir) / "rq3_paired.csv", _paired_csv(rows))
    return rows


def paired_comparison(rows):
    by = {(r.hide, r.sanitizer, r.t): r for r in rows}
    out = []
    for (hide, san, t), r in sorted(by.items()):
        if san != "dm_suds_direct" or (hide, "dm_suds", t) not in by:
            continue
        n = by[(hide, "dm_suds", t)]
        out.append((hide, t, n.ncc_se, r.ncc_se, r.ncc_se - n.ncc_se, n.ncc_ip, r.ncc_ip))
    return out


def _paired_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["hide", "t", "ncc_se_dm_suds", "ncc_se_direct", "delta_se", "ncc_ip_dm_suds", "ncc_ip_direct"])
    for rec in paired_comparison(rows):
        w.writerow([_fmt(v) for v in rec])
    return buf.getvalue()


@dataclass
class AudioRow:
    clip: str
    hide: str
    sanitizer: str
    t: int
    n_bits: int
    payload_bits: int
    ber_pre: float
    ber_post: float
    rr: float
    mse: float
    malformed: int

    def values(self):
        return [getattr(self, c) for c in AUDIO_COLUMNS]


def run_audio_case(cfg: ExperimentConfig, out_dir=None, ws=None):
    """LSB text in synthetic clips, sanitized frame-wise by the 1-D diffusion model.

    BER is measured over the header and payload bits at their original sample
    positions; ``mse`` compares container and sanitized clip on the [-1, 1] scale.
    The last row holds per-file means.
    """
    ws = ws or Workspace(cfg, out_dir)
    model = ws.audio_denoiser()
    clips = gen_synthetic_audio(cfg.audio_clips, cfg.audio_length, seed=_subseed(cfg.seed, "audio-eval"))
    texts = pick_sentences(cfg.audio_clips, rng_for(cfg.seed, "audio-text"))
    rows = []
    for i, (clip, text) in enumerate(zip(clips, texts)):
        payload = TextPayload.from_text(text)
        if len(payload.framed_bits()) > audio_capacity(len(clip), cfg.audio_bits):
            log.warning("clip %d: payload does not fit, skipped", i)
            continue
        cont = audio_lsb_hide(clip, payload, cfg.audio_bits)
        framed = payload.framed_bits()
        pre = ber(read_audio_bits(cont, len(framed), cfg.audio_bits), framed)
        san = dm_suds_audio(cont, cfg.t, model, ws.sched, rng_for(cfg.seed, "audio-sanitize", i), cfg.mode)
        post = ber(read_audio_bits(san, len(framed), cfg.audio_bits), framed)
        mse_n = float(np.mean((audio_to_model_range(cont.samples).astype(np.float64)
                               - audio_to_model_range(san.samples)) ** 2))
        rows.append(AudioRow(f"{i:03d}", "lsb_text", "dm_suds", cfg.t, cfg.audio_bits, int(payload.bits.size),
                             pre, post, removal_rate(post), mse_n, int(audio_lsb_reveal(san, cfg.audio_bits).malformed)))
    if not rows:
        raise MediaError("no clip could hold its payload")
    mean = AudioRow("mean", "lsb_text", "dm_suds", cfg.t, cfg.audio_bits,
                    int(round(np.mean([r.payload_bits for r in rows]))),
                    *(float(np.mean([getattr(r, k) for r in rows])) for k in ("ber_pre", "ber_post", "rr", "mse")),
                    int(sum(r.malformed for r in rows)))
    rows.append(mean)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        _write_text(Path(out_dir) / "audio.csv", rows_to_csv(rows, AUDIO_COLUMNS))
    return rows


EXPERIMENTS = {"rq1": run_rq1, "rq2": run_rq2, "rq3": run_rq3, "audio": run_audio_case}


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def rows_to_csv(rows, columns=CSV_COLUMNS):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r.values()])
    return buf.getvalue()


def read_csv(path):
    """Parse a report back into dicts with numeric fields as floats (``t`` as int)."""
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            row = {}
            for k, v in rec.items():
                if k in ("hide", "sanitizer", "verdict_ip", "verdict_se", "clip"):
                    row[k] = v
                elif k in ("t", "n_bits", "payload_bits", "malformed"):
                    row[k] = int(v)
                else:
                    row[k] = float(v)
            out.append(row)
    return out


def _write_text(path, text):
    try:
        Path(path).write_text(text)
    except OSError as e:
        raise OSError(f"cannot write report {path}: {e}") from e


def emit_report(rows, out_dir, name, plot=False):
    """Write ``<name>.csv`` and, for sweeps, ``<name>.svg``; returns the paths written."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {out}: {e}") from e
    paths = [out / f"{name}.csv"]
    _write_text(paths[0], rows_to_csv(rows))
    if plot:
        paths.append(out / f"{name}.svg")
        _write_text(paths[1], sweep_svg(rows, title=name))
    return paths


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def sweep_svg(rows, title="", width=640, height=400):
    """Line plot of mean IP and SE NCC against ``t``, one pair of lines per (hide, sanitizer)."""
    series = {}
    for r in rows:
        for metric, dash in (("ncc_ip", ""), ("ncc_se", "6,4")):
            key = (r.hide, r.sanitizer, metric, dash)
            series.setdefault(key, []).append((r.t, getattr(r, metric)))
    ts = [r.t for r in rows] or [0, 1]
    x0, x1 = min(ts), max(ts)
    if x1 == x0:
        x1 = x0 + 1
    ml, mr, mt, mb = 56, 190, 30, 44
    pw, ph = width - ml - mr, height - mt - mb

    def sx(t):
        return ml + (t - x0) / (x1 - x0) * pw

    def sy(v):
        return mt + (1.0 - (v + 1.0) / 2.0) * ph

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{ml}" y="18" font-size="13">{_esc(title)}: mean NCC vs t</text>']
    for v in (-1.0, -0.5, 0.0, 0.5, 1.0):
        y = sy(v)
        parts.append(f'<line x1="{ml}" y1="{y:.2f}" x2="{ml + pw}" y2="{y:.2f}" stroke="#ddd"/>')
        parts.append(f'<text x="{ml - 6}" y="{y + 4:.2f}" text-anchor="end">{v:g}</text>')
    for t in _ticks(x0, x1):
        x = sx(t)
        parts.append(f'<line x1="{x:.2f}" y1="{mt + ph}" x2="{x:.2f}" y2="{mt + ph + 4}" stroke="#333"/>')
        parts.append(f'<text x="{x:.2f}" y="{mt + ph + 16}" text-anchor="middle">{t}</text>')
    parts.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>')
    parts.append(f'<text x="{ml + pw / 2:.2f}" y="{height - 8}" text-anchor="middle">t</text>')
    for i, (key, pts) in enumerate(sorted(series.items())):
        hide, san, metric, dash = key
        color = _PALETTE[(i // 2) % len(_PALETTE)]
        pts = [(t, v) for t, v in sorted(pts) if math.isfinite(v)]
        if not pts:
            continue
        d = " ".join(f"{sx(t):.2f},{sy(v):.2f}" for t, v in pts)
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.6"{dash_attr} points="{d}"/>')
        ly = mt + 14 * i + 6
        parts.append(f'<line x1="{ml + pw + 10}" y1="{ly}" x2="{ml + pw + 30}" y2="{ly}" stroke="{color}"'
                     f' stroke-width="1.6"{dash_attr}/>')
        label = f"{hide} {san} {metric[-2:].upper()}"
        parts.append(f'<text x="{ml + pw + 34}" y="{ly + 4}">{_esc(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _ticks(lo, hi, n=8):
    step = max(1, int(math.ceil((hi - lo) / n)))
    return list(range(int(lo), int(hi) + 1, step))


def _esc(s):
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
