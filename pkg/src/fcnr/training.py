"""Rate-distortion training: L_total = L_R + lambda * L_D over image pairs.

The rate term is the noise-relaxed bit count of all four coded planes; the
distortion term is the per-image MSE of the straight-through-quantized
reconstruction, so a single forward serves both relaxations. All randomness
(epoch shuffles, quantization noise) derives from (config.seed, step), which
makes trajectories bit-reproducible and checkpoint resume exact.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .data import load_corpus_config, load_image, pair_records, read_manifest, vis_params_of
from .entropy import quantize_noise, quantize_ste, relaxed_rate_bits
from .networks import FcnrModel, ModelConfig
from .pipeline import ImagePair, _broadcast_channel, pad_image

RATE_PLANES = ("z_l", "z_r", "y_l", "y_r")


@dataclass(frozen=True)
class TrainConfig:
    lambda_rd: float = 0.01
    lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    batch_size: int = 1
    epochs: int = 30
    seed: int = 0
    ablation: str = "full"
    checkpoint_every: int = 500

    def __post_init__(self):
        # lambda 0 is allowed for the rate-only probe; negative never is
        if self.lambda_rd < 0:
            raise ValueError(f"lambda_rd must be >= 0, got {self.lambda_rd}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        return TrainConfig(**d)


def distortion_loss(x_l, x_r, xh_l, xh_r) -> torch.Tensor:
    """Per-image mean squared error, summed over the two views."""
    if xh_l.shape != x_l.shape or xh_r.shape != x_r.shape:
        raise ValueError("reconstruction shape mismatch")
    return F.mse_loss(xh_l, x_l) + F.mse_loss(xh_r, x_r)


def rate_loss(values: dict, params: dict) -> torch.Tensor:
    """Total bits of the four coded planes under their Laplacian params.

    values[name] are the (noise-relaxed or quantized) plane tensors;
    params[name] is the matching (mu, b) pair.
    """
    total = None
    for name in RATE_PLANES:
        mu, b = params[name]
        bits = relaxed_rate_bits(values[name], mu, b)
        total = bits if total is None else total + bits
    return total


@dataclass
class TrainForward:
    rate_bits: torch.Tensor
    distortion: torch.Tensor
    rate_terms: dict
    x_hat_l: torch.Tensor
    x_hat_r: torch.Tensor


def train_forward(model: FcnrModel, pair: ImagePair, noise_seed: int, chain: str = "ste") -> TrainForward:
    """Differentiable twin of the coder chain.

    chain="ste": conditioning and decoder consume round(v-mu)+mu with a
    straight-through gradient, matching what the coder produces; the rate is
    measured on noise-relaxed values. chain="noise" feeds the noisy values
    everywhere, which keeps the whole loss smooth (used by the gradient
    check, where round()'s zero true derivative would defeat finite
    differences).
    """
    if chain not in ("ste", "noise"):
        raise ValueError(f"chain must be 'ste' or 'noise', got {chain!r}")

    def relax(v, mu, k):
        if chain == "ste":
            return quantize_ste(v, mu)
        return quantize_noise(v, noise_seed * 4 + k)

    xp_l, _, _ = pad_image(pair.x_l)
    xp_r, _, _ = pad_image(pair.x_r)
    y_l, y_r = model.encode(xp_l, xp_r)
    z_l, z_r = model.hyper_encode(y_l, y_r)

    mu_c, b_c = model.psi_z_left(pair.vp_l)
    mu_zl = _broadcast_channel(mu_c, z_l)
    b_zl = _broadcast_channel(b_c, z_l)
    z_hat_l = relax(z_l, mu_zl, 0)

    phi_zr = model.phi_z_right(pair.vp_r)
    mu_zr, b_zr = model.psi_z_right(z_hat_l, phi_zr)
    z_hat_r = relax(z_r, mu_zr, 1)

    (mu_yl, b_yl), phi_yr = model.hyper_decode(z_hat_l, z_hat_r)
    y_hat_l = relax(y_l, mu_yl, 2)

    mu_yr, b_yr = model.psi_y_right(y_hat_l, phi_yr)
    y_hat_r = relax(y_r, mu_yr, 3)

    values = {}
    for k, (name, v) in enumerate((("z_l", z_l), ("z_r", z_r), ("y_l", y_l), ("y_r", y_r))):
        values[name] = (
            quantize_noise(v, noise_seed * 4 + k)
            if chain == "ste"
            else {"z_l": z_hat_l, "z_r": z_hat_r, "y_l": y_hat_l, "y_r": y_hat_r}[name]
        )
    params = {"z_l": (mu_zl, b_zl), "z_r": (mu_zr, b_zr), "y_l": (mu_yl, b_yl), "y_r": (mu_yr, b_yr)}
    rate_terms = {
        name: relaxed_rate_bits(values[name], params[name][0], params[name][1])
        for name in RATE_PLANES
    }
    total_rate = sum(rate_terms.values())

    xh_l, xh_r = model.decode(y_hat_l, y_hat_r, clamp=False)
    h, w = pair.x_l.shape[-2:]
    xh_l = xh_l[0, :, :h, :w]
    xh_r = xh_r[0, :, :h, :w]
    dist = distortion_loss(pair.x_l, pair.x_r, xh_l, xh_r)
    return TrainForward(total_rate, dist, rate_terms, xh_l, xh_r)


@dataclass
class TrainState:
    step: int = 0
    history: list = field(default_factory=list)  # (step, rate_bits, distortion, total)

    def record(self, step, rate, dist, total):
        if not (np.isfinite(rate) and np.isfinite(dist) and np.isfinite(total)):
            raise ValueError("refusing to record non-finite losses")
        if step <= self.step and self.history:
            raise ValueError(f"step {step} not monotone past {self.step}")
        self.step = step
        self.history.append((step, rate, dist, total))

    def moving_average(self, at_step: int, window: int = 50, index: int = 3) -> float:
        vals = [h[index] for h in self.history if h[0] <= at_step][-window:]
        if not vals:
            raise ValueError(f"no history at or before step {at_step}")
        return float(np.mean(vals))


def _check_finite(fwd: TrainForward, step: int):
    for name, term in fwd.rate_terms.items():
        if not torch.isfinite(term):
            raise RuntimeError(f"rate term {name} diverged at step {step}: {float(term.detach())}")
    if not torch.isfinite(fwd.distortion):
        raise RuntimeError(f"distortion diverged at step {step}: {float(fwd.distortion.detach())}")


def noise_seed_for(seed: int, step: int) -> int:
    # distinct, deterministic per (run seed, step); plane index is mixed in
    # by train_forward
    return (seed * 1_000_003 + step) & 0x7FFFFFFF


def train_step(
    model: FcnrModel,
    optimizer: torch.optim.Optimizer,
    pair: ImagePair,
    config: TrainConfig,
    state: TrainState,
) -> tuple[float, float, float]:
    step = state.step + 1
    fwd = train_forward(model, pair, noise_seed_for(config.seed, step))
    _check_finite(fwd, step)
    total = fwd.rate_bits + config.lambda_rd * fwd.distortion
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    optimizer.step()
    rate = float(fwd.rate_bits.detach())
    dist = float(fwd.distortion.detach())
    tot = float(total.detach())
    state.record(step, rate, dist, tot)
    return rate, dist, tot


def make_optimizer(model: FcnrModel, config: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(
        model.parameters(), lr=config.lr, betas=(config.adam_beta1, config.adam_beta2)
    )


def epoch_order(seed: int, epoch: int, n: int) -> list[int]:
    return list(np.random.default_rng([seed, epoch]).permutation(n))


def save_train_state(path, model, optimizer, config: TrainConfig, state: TrainState):
    torch.save(
        {
            "format_version": 1,
            "model_config": model.config.to_dict(),
            "model": model.state_dict(),
            "optimizer": optimizer.state_dict(),
            "train_config": config.to_dict(),
            "step": state.step,
            "history": state.history,
        },
        path,
    )


def load_train_state(path):
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if blob.get("format_version") != 1:
        raise ValueError(f"unsupported train-state version {blob.get('format_version')}")
    model = FcnrModel(ModelConfig.from_dict(blob["model_config"]))
    model.load_state_dict(blob["model"])
    config = TrainConfig.from_dict(blob["train_config"])
    optimizer = make_optimizer(model, config)
    optimizer.load_state_dict(blob["optimizer"])
    state = TrainState(step=blob["step"], history=[tuple(h) for h in blob["history"]])
    return model, optimizer, config, state


def load_split_pairs(corpus_dir, split: str) -> list[ImagePair]:
    """Materialize a corpus split as training-ready pairs."""
    corpus = Path(corpus_dir)
    cfg = load_corpus_config(corpus / "corpus.json")
    records = read_manifest(corpus / "manifest.tsv")
    pairs = []
    for l_rec, r_rec in pair_records(records, split=split):
        pairs.append(
            ImagePair(
                x_l=torch.from_numpy(load_image(corpus / l_rec.path)),
                x_r=torch.from_numpy(load_image(corpus / r_rec.path)),
                vp_l=vis_params_of(l_rec, cfg.n_timesteps),
                vp_r=vis_params_of(r_rec, cfg.n_timesteps),
                pair_id=l_rec.pair_id,
            )
        )
    return pairs


def train(
    model: FcnrModel,
    pairs: list[ImagePair],
    config: TrainConfig,
    out_dir=None,
    max_steps: int | None = None,
    state: TrainState | None = None,
    optimizer: torch.optim.Optimizer | None = None,
    log_every: int = 10,
) -> tuple[TrainState, torch.optim.Optimizer]:
    """Uniform-shuffle epochs, batch size 1; resumes mid-epoch from state.step."""
    if not pairs:
        raise ValueError("no training pairs")
    state = state or TrainState()
    optimizer = optimizer or make_optimizer(model, config)
    out = Path(out_dir) if out_dir is not None else None
    log_path = out / "train.log" if out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    n = len(pairs)
    total_steps = config.epochs * n
    if max_steps is not None:
        total_steps = min(total_steps, max_steps)
    t0 = time.monotonic()
    lines = []
    while state.step < total_steps:
        epoch = state.step // n
        offset = state.step % n
        order = epoch_order(config.seed, epoch, n)
        for idx in order[offset:]:
            rate, dist, tot = train_step(model, optimizer, pairs[idx], config, state)
            if state.step % log_every == 0 or state.step == total_steps:
                lines.append(
                    f"step {state.step}  L_R_bits {rate:.1f}  L_D {dist:.6f}  "
                    f"L_total {tot:.1f}  wall_s {time.monotonic() - t0:.1f}"
                )
            if out and state.step % config.checkpoint_every == 0:
                save_train_state(out / f"ckpt_{state.step:06d}.pt", model, optimizer, config, state)
            if state.step >= total_steps:
                break
    if out:
        save_train_state(out / "ckpt_final.pt", model, optimizer, config, state)
        with open(log_path, "a") as f:
            f.write("\n".join(lines) + ("\n" if lines else ""))
    return state, optimizer
