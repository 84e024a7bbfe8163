"""Discretized-Laplacian entropy model, quantizers, and CDF table construction.

The coder-facing functions (`laplace_bin_prob`, `build_cdf`, `rate_bits`) run in
float64 numpy and are bit-deterministic: encoder and decoder must call them with
identical inputs and get identical tables. The training-facing functions
(`laplace_log_mass`, `relaxed_rate_bits`, `quantize_ste`, `quantize_noise`) run
on torch tensors and are differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

PRECISION = 16
TOTAL_FREQ = 1 << PRECISION
PROB_FLOOR = 2.0 ** -PRECISION
# exactly representable in float32, so float32 network outputs >= the floor
# stay >= it after casting to float64 (1e-6 would round below itself in f32)
SCALE_FLOOR = 2.0 ** -19
SYMBOL_LIMIT = (1 << 15) - 1  # symbols are clamped to +-32767

LOG2_E = 1.0 / np.log(2.0)


@dataclass
class EntropyParams:
    """Per-element Laplacian location/scale arrays of identical shape."""

    mu: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.mu.shape != self.b.shape:
            raise ValueError(f"mu/b shape mismatch: {self.mu.shape} vs {self.b.shape}")
        if self.b.size and self.b.min() < SCALE_FLOOR:
            raise ValueError(f"scale below floor: min b = {self.b.min()}")


@dataclass
class SymbolPlane:
    """Integer residual symbols v = round(x - mu) together with their bounds."""

    symbols: np.ndarray
    v_min: int
    v_max: int

    def __post_init__(self):
        self.symbols = np.asarray(self.symbols, dtype=np.int64)
        if self.symbols.size:
            lo, hi = int(self.symbols.min()), int(self.symbols.max())
            if lo < self.v_min or hi > self.v_max:
                raise ValueError(f"symbols [{lo},{hi}] outside bounds [{self.v_min},{self.v_max}]")

    @property
    def num_symbols(self) -> int:
        return self.v_max - self.v_min + 1


@dataclass
class CdfTable:
    """Per-element cumulative frequency rows quantized to a total of 2^16.

    `cum` has shape [n_elements, K+1] with K = v_max - v_min + 1,
    cum[:, 0] == 0, cum[:, -1] == 2^16, strictly increasing along axis 1.
    """

    cum: np.ndarray
    v_min: int
    v_max: int


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero (np.round rounds ties to even)."""
    x = np.asarray(x)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def round_half_away_t(x: torch.Tensor) -> torch.Tensor:
    return torch.sign(x) * torch.floor(torch.abs(x) + 0.5)


def quantize_ste(y: torch.Tensor, mu: torch.Tensor) -> torch.Tensor:
    """Mean-offset rounding with a straight-through gradient.

    Forward: round(y - mu) + mu. Backward: d/dy = 1 exactly, d/dmu = 0.
    """
    return y + (round_half_away_t(y - mu) + mu - y).detach()


def quantize_symbols(y: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Integer symbols v = round(y - mu), the values the range coder transports."""
    v = round_half_away(np.asarray(y, dtype=np.float64) - np.asarray(mu, dtype=np.float64))
    return np.clip(v, -SYMBOL_LIMIT, SYMBOL_LIMIT).astype(np.int64)


def quantize_noise(y: torch.Tensor, rng_seed: int) -> torch.Tensor:
    """Additive-uniform relaxation y + U(-0.5, 0.5), reproducible for a given seed."""
    gen = torch.Generator().manual_seed(int(rng_seed) & 0x7FFFFFFFFFFFFFFF)
    eps = torch.rand(y.shape, generator=gen, dtype=y.dtype) - 0.5
    return y + eps


def _laplace_cdf(x: np.ndarray, b: np.ndarray) -> np.ndarray:
    # F(x) = 0.5 exp(x/b) for x < 0, 1 - 0.5 exp(-x/b) otherwise; exp arg kept <= 0.
    e = 0.5 * np.exp(-np.abs(x) / b)
    return np.where(x < 0, e, 1.0 - e)


def laplace_bin_prob(v, mu_frac, b):
    """Probability mass of integer bin v under a unit-width discretized Laplace.

    Integrates the Laplace(mu_frac, b) density over [v-0.5, v+0.5] and floors the
    result at 2^-16 so every representable symbol stays codable.
    """
    v = np.asarray(v, dtype=np.float64)
    mu_frac = np.asarray(mu_frac, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    p = _laplace_cdf(v + 0.5 - mu_frac, b) - _laplace_cdf(v - 0.5 - mu_frac, b)
    return np.maximum(p, PROB_FLOOR)


def rate_bits(plane: SymbolPlane, params: EntropyParams) -> float:
    """Model cross-entropy in bits: sum of -log2 p(v) over the plane's symbols."""
    if plane.symbols.shape != params.b.shape:
        raise ValueError(f"shape mismatch: {plane.symbols.shape} vs {params.b.shape}")
    p = laplace_bin_prob(plane.symbols, 0.0, params.b)
    return float(-np.log2(p).sum())


def laplace_log_mass(x: torch.Tensor, mu: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """log of the Laplace mass over [x-0.5, x+0.5], numerically stable in the tails.

    Differentiable in x, mu and b; used for the noise-relaxed rate term.
    """
    a = (x - 0.5 - mu) / b
    c = (x + 0.5 - mu) / b
    straddle = (a < 0) & (c > 0)
    # tail form: both endpoints on one side -> 0.5 e^{m} (1 - e^{a-c}), m = min(c, -a)
    m = torch.minimum(c, -a)
    tail = np.log(0.5) + m + torch.log1p(-torch.exp(a - c))
    # straddle form: 1 - 0.5 e^{a} - 0.5 e^{-c}; mask args so the unused branch
    # cannot produce inf/nan that would poison gradients through torch.where
    a_s = torch.where(straddle, a, torch.zeros_like(a))
    c_s = torch.where(straddle, c, torch.zeros_like(c))
    mid = torch.log(torch.clamp(1.0 - 0.5 * (torch.exp(a_s) + torch.exp(-c_s)), min=1e-30))
    return torch.where(straddle, mid, tail)


def relaxed_rate_bits(x: torch.Tensor, mu: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Noise-relaxed rate in bits: sum of -log2 of the unit-bin mass around x."""
    return -laplace_log_mass(x, mu, b).sum() * LOG2_E


def symbol_bounds(symbols: np.ndarray) -> tuple[int, int]:
    """Per-plane [v_min, v_max] written to the container header."""
    if symbols.size == 0:
        return 0, 0
    return int(symbols.min()), int(symbols.max())


def build_cdf(params: EntropyParams, bounds: tuple[int, int]) -> CdfTable:
    """Quantize per-element Laplacian bin probabilities to integer frequency rows.

    Deterministic largest-remainder rounding to a fixed total of 2^16 with every
    bin kept >= 1 count. Encoder and decoder rebuild identical tables from
    identical params; the exact procedure is part of the bitstream format
    (see docs/FORMAT.md).
    """
    v_min, v_max = int(bounds[0]), int(bounds[1])
    if v_max < v_min:
        raise ValueError(f"empty bounds [{v_min},{v_max}]")
    k = v_max - v_min + 1
    b = params.b.reshape(-1, 1)  # [N, 1]
    v = np.arange(v_min, v_max + 1, dtype=np.float64)[None, :]  # [1, K]
    p = laplace_bin_prob(v, 0.0, b)  # [N, K], floored at 2^-16
    q = p / p.sum(axis=1, keepdims=True)  # condition on the coded range
    ideal = q * TOTAL_FREQ
    base = np.maximum(np.floor(ideal), 1.0).astype(np.int64)
    delta = TOTAL_FREQ - base.sum(axis=1)  # < K always; < 0 only via the 1-count clamp

    # largest-remainder rounding; stable argsort so ties break by symbol index
    rem = ideal - np.floor(ideal)
    order = np.argsort(-rem, axis=1, kind="stable")
    ranks = np.empty_like(order)
    rows = np.arange(base.shape[0])[:, None]
    ranks[rows, order] = np.arange(k)[None, :]
    base += ranks < np.maximum(delta, 0)[:, None]

    under = delta < 0  # 1-count clamps exceeded the budget; steal from the largest
    for i in np.nonzero(under)[0]:
        need = int(-delta[i])
        row = base[i]
        while need > 0:
            j = int(np.argmax(row))
            take = min(int(row[j]) - 1, need)
            if take <= 0:
                raise ValueError("cannot normalize CDF row: all counts at minimum")
            row[j] -= take
            need -= take

    cum = np.zeros((base.shape[0], k + 1), dtype=np.uint32)
    np.cumsum(base, axis=1, out=cum[:, 1:])
    return CdfTable(cum=cum, v_min=v_min, v_max=v_max)
