"""CLI thin-client behavior, including the coder-job stdio boundary."""

import json
import shutil
import subprocess
from pathlib import Path

import pytest
from click.testing import CliRunner

from fcnr.cli import main
from fcnr.coderjob import run_reference_jobs

from test_service import _job_bytes


@pytest.fixture()
def runner():
    return CliRunner()


def test_gen_data_with_config(runner, tmp_path):
    cfg = tmp_path / "corpus.json"
    cfg.write_text(json.dumps({
        "subdiv_level": 0, "n_timesteps": 1, "height": 48, "width": 48,
        "field": {"n_lobes": 2},
    }))
    out = runner.invoke(main, ["gen-data", "--out", str(tmp_path / "c"),
                               "--config", str(cfg), "--seed", "5"])
    assert out.exit_code == 0, out.output
    assert "12 images" in out.output
    corpus = json.loads((tmp_path / "c" / "corpus.json").read_text())
    assert corpus["field"]["seed"] == 5


def test_train_then_eval(runner, tiny_trained, tmp_path):
    out = runner.invoke(main, [
        "train", "--corpus", tiny_trained["corpus"], "--out", str(tmp_path),
        "--max-steps", "1", "--lambda", "0.02", "--seed", "1",
        "--config", _model_cfg(tmp_path),
    ])
    assert out.exit_code == 0, out.output
    assert "trained 1 steps" in out.output

    ev = runner.invoke(main, [
        "eval", "--corpus", tiny_trained["corpus"],
        "--weights", tiny_trained["weights"], "--split", "train",
        "--report", str(tmp_path / "r.json"),
    ])
    assert ev.exit_code == 0, ev.output
    assert "train\t3\t" in ev.output
    assert (tmp_path / "r.json").exists()


def _model_cfg(tmp_path):
    path = tmp_path / "model.json"
    path.write_text(json.dumps({"model": {
        "trunk_channels": 32, "latent_channels": 8, "hyper_channels": 8,
        "attn_heads": 2,
    }}))
    return str(path)


def test_compress_decompress(runner, tiny_trained, tmp_path):
    out = runner.invoke(main, [
        "compress", "--corpus", tiny_trained["corpus"],
        "--weights", tiny_trained["weights"], "--out", str(tmp_path / "bits"),
        "--pair-id", "0", "--coder", "reference",
    ])
    assert out.exit_code == 0, out.output
    files = [ln for ln in out.output.splitlines() if ln.endswith(".fcnr")]
    assert len(files) == 1

    dec = runner.invoke(main, [
        "decompress", files[0], "--weights", tiny_trained["weights"],
        "--out", str(tmp_path / "img"),
    ])
    assert dec.exit_code == 0, dec.output
    assert len(list((tmp_path / "img").glob("*.png"))) == 2


def test_http_error_becomes_clean_failure(runner, tiny_trained, tmp_path):
    out = runner.invoke(main, [
        "compress", "--corpus", tiny_trained["corpus"],
        "--weights", str(tmp_path / "missing.pt"),
        "--out", str(tmp_path),
    ])
    assert out.exit_code != 0
    assert "404" in out.output or "Invalid value" in out.output


def test_coder_job_files(runner, tmp_path):
    job = _job_bytes()
    (tmp_path / "job.bin").write_bytes(job)
    out = runner.invoke(main, ["coder-job", "-i", str(tmp_path / "job.bin"),
                               "-o", str(tmp_path / "res.bin")])
    assert out.exit_code == 0, out.output
    assert (tmp_path / "res.bin").read_bytes() == run_reference_jobs(job)


@pytest.mark.skipif(shutil.which("fcnr") is None, reason="entry point not installed")
def test_coder_job_stdio_subprocess():
    # the exact seam external tooling batches jobs through
    job = _job_bytes()
    proc = subprocess.run(["fcnr", "coder-job"], input=job,
                          capture_output=True, timeout=120)
    assert proc.returncode == 0, proc.stderr.decode()
    assert proc.stdout == run_reference_jobs(job)
