import json
import subprocess
import sys

import numpy as np
import pytest

from stegsan.cli import main
from stegsan.data import gen_synthetic_audio, gen_synthetic_images
from stegsan.lsb import lsb_hide, lsb_reveal
from stegsan.media import load_png, load_wav, save_png, save_wav


@pytest.fixture
def pngs(tmp_path):
    a, b = gen_synthetic_images(2, seed=4)
    save_png(tmp_path / "c.png", a)
    save_png(tmp_path / "s.png", b)
    return tmp_path, a, b


def test_hide_and_reveal_png(pngs):
    d, a, b = pngs
    assert main(["hide", "--cover", str(d / "c.png"), "--secret", str(d / "s.png"), "--bits", "4",
                 "--out", str(d / "ct.png")]) == 0
    np.testing.assert_array_equal(load_png(d / "ct.png"), lsb_hide(a, b, 4))
    assert main(["reveal", "--in", str(d / "ct.png"), "--bits", "4", "--out", str(d / "r.png")]) == 0
    np.testing.assert_array_equal(load_png(d / "r.png"), lsb_reveal(lsb_hide(a, b, 4), 4))


def test_audio_text_round_trip(tmp_path, capsys):
    save_wav(tmp_path / "a.wav", gen_synthetic_audio(1, length=4000)[0])
    assert main(["hide-audio", "--cover", str(tmp_path / "a.wav"), "--text", "Hello",
                 "--out", str(tmp_path / "b.wav")]) == 0
    assert main(["reveal-audio", "--in", str(tmp_path / "b.wav")]) == 0
    assert capsys.readouterr().out.strip() == "Hello"
    assert main(["hide", "--cover", str(tmp_path / "a.wav"), "--text", "Hi", "--out", str(tmp_path / "c.wav")]) == 0
    assert main(["reveal", "--in", str(tmp_path / "c.wav")]) == 0
    assert capsys.readouterr().out.strip() == "Hi"


def test_capacity_error_exit_code(tmp_path, capsys):
    save_wav(tmp_path / "a.wav", gen_synthetic_audio(1, length=40)[0])
    assert main(["hide-audio", "--cover", str(tmp_path / "a.wav"), "--text", "far too long",
                 "--out", str(tmp_path / "b.wav")]) == 2
    assert "error" in capsys.readouterr().err


def test_eval_json_fields(pngs, capsys):
    d, _, _ = pngs
    assert main(["eval", "--ref", str(d / "c.png"), "--test", str(d / "c.png"), "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert list(out) == ["mse", "psnr_db", "ssim", "ncc"]
    assert out["mse"] == 0.0 and out["psnr_db"] is None and out["ncc"] == pytest.approx(1.0)


def test_sanitize_noise_methods(pngs):
    d, a, _ = pngs
    for m in ("gaussian", "dct-noise"):
        assert main(["sanitize", "--method", m, "--sigma", "5", "--in", str(d / "c.png"),
                     "--out", str(d / f"{m}.png")]) == 0
        assert load_png(d / f"{m}.png").shape == a.shape


def test_train_and_sanitize_dm_suds(tmp_path, pngs):
    d, a, _ = pngs
    model = tmp_path / "m.bin"
    assert main(["train-diffusion", "--n", "16", "--epochs", "1", "--T", "20", "--channels", "8",
                 "--out", str(model)]) == 0
    assert main(["sanitize", "--method", "dm-suds", "--t", "10", "--model", str(model),
                 "--in", str(d / "c.png"), "--out", str(d / "y.png")]) == 0
    assert load_png(d / "y.png").shape == a.shape
    assert main(["sanitize", "--method", "dm-suds", "--t", "99", "--model", str(model),
                 "--in", str(d / "c.png"), "--out", str(d / "y.png")]) == 2


def test_train_audio_model_and_sanitize_wav(tmp_path):
    model = tmp_path / "a.bin"
    assert main(["train-diffusion", "--audio", "--n", "1", "--epochs", "1", "--T", "20", "--channels", "8",
                 "--out", str(model)]) == 0
    clip = gen_synthetic_audio(1, length=5000, seed=3)[0]
    save_wav(tmp_path / "x.wav", clip)
    assert main(["sanitize", "--method", "dm-suds", "--model", str(model), "--in", str(tmp_path / "x.wav"),
                 "--out", str(tmp_path / "y.wav")]) == 0
    assert len(load_wav(tmp_path / "y.wav")) == 5000


def test_train_hider_and_ddh(tmp_path, pngs):
    d, a, _ = pngs
    model = tmp_path / "h.bin"
    assert main(["train-hider", "--n", "8", "--epochs", "1", "--width", "8", "--out", str(model)]) == 0
    assert main(["hide", "--method", "ddh", "--model", str(model), "--cover", str(d / "c.png"),
                 "--secret", str(d / "s.png"), "--out", str(d / "dd.png")]) == 0
    assert main(["reveal", "--method", "ddh", "--model", str(model), "--in", str(d / "dd.png"),
                 "--out", str(d / "dr.png")]) == 0
    assert main(["hide", "--method", "ddh", "--cover", str(d / "c.png"), "--secret", str(d / "s.png"),
                 "--out", str(d / "x.png")]) == 2


def test_experiment_unknown_key(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("nonsense = 1\n")
    assert main(["experiment", "rq1", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_experiment_no_train_missing(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text(f"model_dir = {tmp_path / 'none'}\nhide = lsb\nsanitizers = dm_suds\n")
    assert main(["experiment", "rq1", "--config", str(cfg), "--out", str(tmp_path / "o"), "--no-train"]) == 2


def test_console_script_help():
    r = subprocess.run([sys.executable, "-m", "stegsan.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "experiment" in r.stdout
