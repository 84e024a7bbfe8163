"""PSNR/BPP metrics, corpus evaluation, rate-distortion sweeps and ablations."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import load_corpus_config, load_image, pair_records, read_manifest, vis_params_of
from .networks import FcnrModel, ModelConfig, model_fingerprint, save_checkpoint
from .pipeline import ImagePair, compress, decompress
from .training import TrainConfig, load_split_pairs, train

PSNR_SENTINEL = 100.0  # reported for identical images (MSE = 0)


def psnr(x, x_hat) -> float:
    """10*log10(1/MSE) over all elements, [0,1] scale, capped at the sentinel."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    mse = float(np.mean((x - x_hat) ** 2))
    if mse == 0.0:
        return PSNR_SENTINEL
    return min(float(10.0 * np.log10(1.0 / mse)), PSNR_SENTINEL)


def bpp(streams, pixel_count: int) -> float:
    """Payload bits per coded pixel; headers are framing, not payload."""
    if not streams or pixel_count <= 0:
        raise ValueError("need at least one stream and a positive pixel count")
    total_bits = sum(8 * s.payload_bytes for s in streams)
    return total_bits / pixel_count


@dataclass
class PairResult:
    pair_id: int
    split: str
    psnr_l: float
    psnr_r: float
    payload_bytes: int
    pixels: int  # both images at full resolution


@dataclass
class EvalReport:
    results: list = field(default_factory=list)  # PairResult
    errors: list = field(default_factory=list)  # (pair_id, message)
    encode_s: float = 0.0
    decode_s: float = 0.0

    def _filtered(self, split):
        return [r for r in self.results if split is None or r.split == split]

    def mean_psnr(self, split=None) -> float:
        rs = self._filtered(split)
        if not rs:
            raise ValueError(f"no results for split {split!r}")
        return float(np.mean([v for r in rs for v in (r.psnr_l, r.psnr_r)]))

    def bpp(self, split=None) -> float:
        rs = self._filtered(split)
        if not rs:
            raise ValueError(f"no results for split {split!r}")
        return 8.0 * sum(r.payload_bytes for r in rs) / sum(r.pixels for r in rs)

    def to_dict(self) -> dict:
        d = {
            "results": [asdict(r) for r in self.results],
            "errors": list(self.errors),
            "encode_s": self.encode_s,
            "decode_s": self.decode_s,
        }
        for split in (None, "train", "heldout"):
            key = split or "all"
            if self._filtered(split):
                d[f"mean_psnr_{key}"] = self.mean_psnr(split)
                d[f"bpp_{key}"] = self.bpp(split)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @staticmethod
    def from_json(text: str) -> "EvalReport":
        d = json.loads(text)
        rep = EvalReport(
            results=[PairResult(**r) for r in d["results"]],
            errors=[tuple(e) for e in d["errors"]],
            encode_s=d["encode_s"],
            decode_s=d["decode_s"],
        )
        return rep


def load_pair_images(corpus_dir, l_rec, r_rec, n_timesteps) -> ImagePair:
    corpus = Path(corpus_dir)
    return ImagePair(
        x_l=torch.from_numpy(load_image(corpus / l_rec.path)),
        x_r=torch.from_numpy(load_image(corpus / r_rec.path)),
        vp_l=vis_params_of(l_rec, n_timesteps),
        vp_r=vis_params_of(r_rec, n_timesteps),
        pair_id=l_rec.pair_id,
    )


def evaluate_corpus(corpus_dir, model: FcnrModel, split_filter=None, coder="reference") -> EvalReport:
    """Compress and decompress every pair in the chosen split, with timings.

    A missing or unreadable image is recorded in the error list and evaluation
    continues with the remaining pairs.
    """
    corpus = Path(corpus_dir)
    cfg = load_corpus_config(corpus / "corpus.json")
    records = read_manifest(corpus / "manifest.tsv")
    report = EvalReport()
    for l_rec, r_rec in pair_records(records, split=split_filter):
        try:
            pair = load_pair_images(corpus, l_rec, r_rec, cfg.n_timesteps)
        except (OSError, ValueError) as exc:
            report.errors.append((l_rec.pair_id, str(exc)))
            continue
        t0 = time.monotonic()
        bs = compress(pair, model, coder=coder)
        t1 = time.monotonic()
        x_l, x_r = decompress(bs, model, coder=coder)
        t2 = time.monotonic()
        report.encode_s += t1 - t0
        report.decode_s += t2 - t1
        h, w = pair.x_l.shape[-2:]
        report.results.append(
            PairResult(
                pair_id=l_rec.pair_id,
                split=l_rec.split,
                psnr_l=psnr(pair.x_l, x_l),
                psnr_r=psnr(pair.x_r, x_r),
                payload_bytes=bs.payload_bytes,
                pixels=2 * h * w,
            )
        )
    return report


def write_table(path, header: list[str], rows: list[list]) -> None:
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_table(path) -> tuple[list[str], list[list[str]]]:
    lines = Path(path).read_text().splitlines()
    return lines[0].split("\t"), [ln.split("\t") for ln in lines[1:]]


def _train_and_eval(corpus_dir, model_config, train_config, max_steps, eval_split, out_dir, tag):
    torch.manual_seed(train_config.seed)
    model = FcnrModel(model_config)
    pairs = load_split_pairs(corpus_dir, "train")
    t0 = time.monotonic()
    train(model, pairs, train_config, max_steps=max_steps)
    train_s = time.monotonic() - t0
    ckpt = None
    if out_dir is not None:
        ckpt = Path(out_dir) / f"model_{tag}.pt"
        save_checkpoint(model, ckpt)
    report = evaluate_corpus(corpus_dir, model, split_filter=eval_split)
    return model, report, train_s, ckpt


def rd_sweep(
    corpus_dir,
    lambdas=(1e-3, 1e-2, 1e-1),
    model_config: ModelConfig | None = None,
    base_train_config: TrainConfig | None = None,
    max_steps: int | None = None,
    eval_split: str | None = None,
    out_dir=None,
) -> dict:
    """One model per lambda; returns the (lambda, BPP, PSNR) trace.

    BPP is expected to grow with lambda (more weight on distortion buys more
    bits) but only a diagnostic is emitted; nothing is asserted.
    """
    if not lambdas:
        raise ValueError("need at least one lambda")
    model_config = model_config or ModelConfig()
    base = base_train_config or TrainConfig()
    rows = []
    fingerprints = []
    for lam in lambdas:
        tcfg = TrainConfig(**{**base.to_dict(), "lambda_rd": lam})
        model, report, train_s, ckpt = _train_and_eval(
            corpus_dir, model_config, tcfg, max_steps, eval_split, out_dir, f"lambda_{lam:g}"
        )
        fingerprints.append(model_fingerprint(model))
        rows.append([lam, report.bpp(), report.mean_psnr(), train_s, str(ckpt or "")])
    bpps = [r[1] for r in rows]
    ordered = sorted(range(len(lambdas)), key=lambda i: lambdas[i])
    monotone = all(bpps[ordered[i]] <= bpps[ordered[i + 1]] for i in range(len(ordered) - 1))
    diagnostic = "bpp nondecreasing in lambda" if monotone else "bpp NOT monotone in lambda"
    if out_dir is not None:
        write_table(Path(out_dir) / "rd_sweep.tsv", ["lambda", "bpp", "psnr", "train_s", "ckpt"], rows)
        _plot_rd(Path(out_dir) / "rd_sweep.png", rows)
    return {"rows": rows, "fingerprints": fingerprints, "diagnostic": diagnostic}


ABLATION_ORDER = ("full", "jct_only", "pe_only", "neither")


def ablate(
    corpus_dir,
    model_config: ModelConfig | None = None,
    train_config: TrainConfig | None = None,
    max_steps: int | None = None,
    eval_split: str | None = None,
    out_dir=None,
) -> list[list]:
    """Train and evaluate all four conditioning variants; rows in fixed order."""
    model_config = model_config or ModelConfig()
    train_config = train_config or TrainConfig()
    rows = []
    for name in ABLATION_ORDER:
        mcfg = model_config.with_ablation(name)
        _, report, train_s, _ = _train_and_eval(
            corpus_dir, mcfg, train_config, max_steps, eval_split, out_dir, name
        )
        rows.append([name, report.bpp(), report.mean_psnr(), train_s])
    if out_dir is not None:
        write_table(Path(out_dir) / "ablation.tsv", ["ablation", "bpp", "psnr", "train_s"], rows)
    return rows


def _plot_rd(path, rows) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    xs = [r[1] for r in rows]
    ys = [r[2] for r in rows]
    labels = [f"lambda={r[0]:g}" for r in rows]
    fig, ax = plt.subplots(figsize=(5, 4))
    order = np.argsort(xs)
    ax.plot([xs[i] for i in order], [ys[i] for i in order], "o-")
    for x, y, lab in zip(xs, ys, labels):
        ax.annotate(lab, (x, y), textcoords="offset points", xytext=(4, 4), fontsize=8)
    ax.set_xlabel("BPP")
    ax.set_ylabel("PSNR (dB)")
    ax.set_title("Rate-distortion trace")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
