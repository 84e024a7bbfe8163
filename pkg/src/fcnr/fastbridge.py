"""Subprocess bridge to the accelerated range coder.

The external coder consumes serialized job batches (see coderjob) over stdin
and answers on stdout, so the python side never links against it. Location
resolution: the FCNR_FASTCODER environment variable (full command line) wins,
else the built bundle under <repo>/fastcoder/dist/cli.js run with node.
"""

from __future__ import annotations

import os
import shlex
import subprocess
from pathlib import Path

import numpy as np

from .coderjob import DECODE, ENCODE, parse_results, serialize_jobs


class FastCoderUnavailable(RuntimeError):
    pass


def fastcoder_command() -> list[str]:
    env = os.environ.get("FCNR_FASTCODER")
    if env:
        return shlex.split(env)
    bundled = Path(__file__).resolve().parents[2] / "fastcoder" / "dist" / "cli.js"
    if bundled.exists():
        return ["node", str(bundled)]
    raise FastCoderUnavailable(
        "fast coder not found: set FCNR_FASTCODER or build fastcoder/ (npm run build)"
    )


def run_jobs(job_bytes: bytes) -> bytes:
    cmd = fastcoder_command()
    try:
        proc = subprocess.run(cmd, input=job_bytes, stdout=subprocess.PIPE, check=True)
    except (OSError, subprocess.CalledProcessError) as exc:
        raise FastCoderUnavailable(f"fast coder failed: {exc}") from exc
    return proc.stdout


def encode_planes_fast(planes: list[dict]) -> list[bytes]:
    """planes: dicts with v_min, v_max, cum, symbols (one batched subprocess call)."""
    return parse_results(run_jobs(serialize_jobs(ENCODE, planes)), ENCODE)


def decode_plane_fast(stream: bytes, cum: np.ndarray, v_min: int, v_max: int, count: int) -> np.ndarray:
    plane = {"v_min": v_min, "v_max": v_max, "cum": cum, "stream": stream, "count": count}
    return parse_results(run_jobs(serialize_jobs(DECODE, [plane])), DECODE)[0]
