"""End-to-end codec pipeline over the decode-order dependency chain.

Order is fixed by conditioning: z_l is coded from the left view's
visualization parameters alone, z_r from (decoded z_l, right-view params),
y_l from the hyper-decoder output, and y_r from (decoded y_l, hyper output).
The decoder replays the identical chain, so every entropy parameter it needs
is available before the plane that uses it.

All coder-side math runs on detached tensors under no_grad; the training loop
has its own differentiable forward (see training module).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .container import PLANE_ORDER, FcnrBitstream, WrongModelError
from .entropy import (
    EntropyParams,
    SymbolPlane,
    build_cdf,
    quantize_noise,
    quantize_symbols,
    relaxed_rate_bits,
    symbol_bounds,
)
from .networks import FcnrModel, VisParams, model_fingerprint
from .rangecoder import decode_plane, encode_plane

PAD_MULTIPLE = 64


@dataclass
class ImagePair:
    """Two views rendered at the same timestep and polar angle."""

    x_l: torch.Tensor  # [3, H, W] in [0, 1]
    x_r: torch.Tensor
    vp_l: VisParams
    vp_r: VisParams
    pair_id: int = 0

    def __post_init__(self):
        if self.x_l.shape != self.x_r.shape:
            raise ValueError(f"pair shapes differ: {tuple(self.x_l.shape)} vs {tuple(self.x_r.shape)}")
        if self.x_l.dim() != 3 or self.x_l.shape[0] != 3:
            raise ValueError(f"expected [3,H,W] images, got {tuple(self.x_l.shape)}")
        if self.vp_l.t != self.vp_r.t:
            raise ValueError("pair members must share t")
        # pairs straddle a polar ring next to the icosphere poles, so theta is
        # only near-equal; pi/4 covers the coarsest supported sphere (level 1
        # normalized gap 0.554/pi ~ 0.176)
        if abs(self.vp_l.theta - self.vp_r.theta) > 0.25:
            raise ValueError("pair members must have nearby theta")


def pad_image(x: torch.Tensor, multiple: int = PAD_MULTIPLE) -> tuple[torch.Tensor, int, int]:
    """Reflect-pad [3,H,W] on the bottom/right to the next multiple; returns [1,3,H',W']."""
    h, w = x.shape[-2:]
    pad_h = (-h) % multiple
    pad_w = (-w) % multiple
    x = x.unsqueeze(0)
    if pad_h or pad_w:
        x = F.pad(x, (0, pad_w, 0, pad_h), mode="reflect")
    return x, pad_h, pad_w


def _flat_params(mu: torch.Tensor, b: torch.Tensor) -> EntropyParams:
    return EntropyParams(
        mu=mu.detach().contiguous().reshape(-1).numpy().astype(np.float64),
        b=b.detach().contiguous().reshape(-1).numpy().astype(np.float64),
    )


def _quantize(x: torch.Tensor, mu: torch.Tensor) -> tuple[np.ndarray, torch.Tensor]:
    """Integer symbols and the dequantized tensor (symbols + mu) the decoder rebuilds."""
    sym = quantize_symbols(x.detach().contiguous().numpy(), mu.detach().contiguous().numpy())
    return sym.reshape(-1), _dequantize(sym.reshape(-1), mu)


def _dequantize(symbols: np.ndarray, mu: torch.Tensor) -> torch.Tensor:
    v = torch.as_tensor(symbols, dtype=mu.dtype).reshape(mu.shape)
    return v + mu


def _broadcast_channel(vec: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    return vec.reshape(1, -1, 1, 1).expand_as(like).contiguous()


@dataclass
class ChainState:
    """Everything the coder produced along the chain, in plane order."""

    planes: dict[str, SymbolPlane]
    params: dict[str, EntropyParams]
    latents: dict[str, torch.Tensor]  # continuous pre-quantization values
    y_hat_l: torch.Tensor
    y_hat_r: torch.Tensor


def _encoder_chain(model: FcnrModel, xp_l, xp_r, vp_l: VisParams, vp_r: VisParams) -> ChainState:
    y_l, y_r = model.encode(xp_l, xp_r)
    z_l, z_r = model.hyper_encode(y_l, y_r)

    mu_c, b_c = model.psi_z_left(vp_l)
    mu_zl = _broadcast_channel(mu_c, z_l)
    b_zl = _broadcast_channel(b_c, z_l)
    sym_zl, z_hat_l = _quantize(z_l, mu_zl)

    phi_zr = model.phi_z_right(vp_r)
    mu_zr, b_zr = model.psi_z_right(z_hat_l, phi_zr)
    sym_zr, z_hat_r = _quantize(z_r, mu_zr)

    (mu_yl, b_yl), phi_yr = model.hyper_decode(z_hat_l, z_hat_r)
    sym_yl, y_hat_l = _quantize(y_l, mu_yl)

    mu_yr, b_yr = model.psi_y_right(y_hat_l, phi_yr)
    sym_yr, y_hat_r = _quantize(y_r, mu_yr)

    planes = {}
    params = {}
    for name, sym, mu, b in (
        ("z_l", sym_zl, mu_zl, b_zl),
        ("z_r", sym_zr, mu_zr, b_zr),
        ("y_l", sym_yl, mu_yl, b_yl),
        ("y_r", sym_yr, mu_yr, b_yr),
    ):
        lo, hi = symbol_bounds(sym)
        planes[name] = SymbolPlane(symbols=sym, v_min=lo, v_max=hi)
        params[name] = _flat_params(mu, b)
    latents = {"z_l": z_l, "z_r": z_r, "y_l": y_l, "y_r": y_r}
    return ChainState(planes, params, latents, y_hat_l, y_hat_r)


def _check_coder(coder: str):
    if coder not in ("reference", "fast"):
        raise ValueError(f"coder must be 'reference' or 'fast', got {coder!r}")


def compress(pair: ImagePair, model: FcnrModel, coder: str = "reference") -> FcnrBitstream:
    """Code a pair into the container; weights travel out-of-band.

    coder="fast" hands all four planes to the external coder in one batch;
    the two coders are byte-identical, so the container does not record which
    one produced it.
    """
    _check_coder(coder)
    with torch.no_grad():
        xp_l, pad_h, pad_w = pad_image(pair.x_l)
        xp_r, _, _ = pad_image(pair.x_r)
        state = _encoder_chain(model, xp_l, xp_r, pair.vp_l, pair.vp_r)
    substreams = {}
    bounds = {}
    tables = {
        name: build_cdf(state.params[name], (state.planes[name].v_min, state.planes[name].v_max))
        for name in PLANE_ORDER
    }
    if coder == "fast":
        from .fastbridge import encode_planes_fast

        jobs = [
            {
                "v_min": state.planes[n].v_min,
                "v_max": state.planes[n].v_max,
                "cum": tables[n].cum,
                "symbols": state.planes[n].symbols,
            }
            for n in PLANE_ORDER
        ]
        for name, stream in zip(PLANE_ORDER, encode_planes_fast(jobs)):
            substreams[name] = stream
            bounds[name] = (state.planes[name].v_min, state.planes[name].v_max)
    else:
        for name in PLANE_ORDER:
            plane = state.planes[name]
            substreams[name] = encode_plane(plane, tables[name])
            bounds[name] = (plane.v_min, plane.v_max)
    h, w = pair.x_l.shape[-2:]
    return FcnrBitstream(
        height=h,
        width=w,
        pad_h=pad_h,
        pad_w=pad_w,
        vp_l=pair.vp_l,
        vp_r=pair.vp_r,
        fingerprint=model_fingerprint(model),
        bounds=bounds,
        substreams=substreams,
    )


def decode_latents(bs: FcnrBitstream, model: FcnrModel, coder: str = "reference") -> dict[str, torch.Tensor]:
    """Entropy-decode the four planes in dependency order.

    Raises WrongModelError before touching any substream if the weights do not
    match the header fingerprint. Returns the dequantized tensors keyed by
    plane name; decoding plane k consumes only planes earlier in PLANE_ORDER.
    Planes decode one at a time regardless of coder: each plane's table
    depends on the previous plane's symbols.
    """
    _check_coder(coder)
    if model_fingerprint(model) != bs.fingerprint:
        raise WrongModelError(
            f"bitstream was coded with weights {bs.fingerprint:#018x}, got different weights"
        )
    cfg = model.config
    ph, pw = bs.height + bs.pad_h, bs.width + bs.pad_w
    z_shape = (1, cfg.hyper_channels, ph // 64, pw // 64)
    y_shape = (1, cfg.latent_channels, ph // 16, pw // 16)
    z_count = int(np.prod(z_shape))
    y_count = int(np.prod(y_shape))

    def decode(name, params, count):
        table = build_cdf(params, bs.bounds[name])
        if coder == "fast":
            from .fastbridge import decode_plane_fast

            return decode_plane_fast(
                bs.substreams[name], table.cum, table.v_min, table.v_max, count
            )
        return decode_plane(bs.substreams[name], table, count).symbols

    with torch.no_grad():
        mu_c, b_c = model.psi_z_left(bs.vp_l)
        mu_zl = mu_c.reshape(1, -1, 1, 1).expand(z_shape).contiguous()
        b_zl = _broadcast_channel(b_c, mu_zl)
        sym_zl = decode("z_l", _flat_params(mu_zl, b_zl), z_count)
        z_hat_l = _dequantize(sym_zl, mu_zl)

        phi_zr = model.phi_z_right(bs.vp_r)
        mu_zr, b_zr = model.psi_z_right(z_hat_l, phi_zr)
        sym_zr = decode("z_r", _flat_params(mu_zr, b_zr), z_count)
        z_hat_r = _dequantize(sym_zr, mu_zr)

        (mu_yl, b_yl), phi_yr = model.hyper_decode(z_hat_l, z_hat_r)
        sym_yl = decode("y_l", _flat_params(mu_yl, b_yl), y_count)
        y_hat_l = _dequantize(sym_yl, mu_yl)

        mu_yr, b_yr = model.psi_y_right(y_hat_l, phi_yr)
        sym_yr = decode("y_r", _flat_params(mu_yr, b_yr), y_count)
        y_hat_r = _dequantize(sym_yr, mu_yr)
    return {"z_l": z_hat_l, "z_r": z_hat_r, "y_l": y_hat_l, "y_r": y_hat_r}


def decompress(
    bs: FcnrBitstream, model: FcnrModel, coder: str = "reference"
) -> tuple[torch.Tensor, torch.Tensor]:
    """Replay the chain from the bitstream and reconstruct both views."""
    latents = decode_latents(bs, model, coder=coder)
    with torch.no_grad():
        x_l, x_r = model.decode(latents["y_l"], latents["y_r"], clamp=True)
    return x_l[0, :, : bs.height, : bs.width], x_r[0, :, : bs.height, : bs.width]


def _table_cross_entropy(plane: SymbolPlane, table) -> float:
    """Exact bits the range coder pays (minus framing): -log2 of table mass."""
    idx = plane.symbols - table.v_min
    rows = np.arange(plane.symbols.size)
    counts = (table.cum[rows, idx + 1] - table.cum[rows, idx]).astype(np.float64)
    return float(-np.log2(counts / float(table.cum[0, -1])).sum())


def simulate(
    pair: ImagePair, model: FcnrModel, mode: str = "ste", seed: int = 0
) -> tuple[torch.Tensor, torch.Tensor, float]:
    """Reconstructions plus estimated rate without running the coder.

    Reconstructions always come from the quantized (STE-valued) chain, so in
    ste mode they equal decompress(compress(pair)) exactly. The ste rate is the
    cross-entropy under the exact coding tables (what the coder would pay, up
    to framing); noise mode returns the noise-relaxed rate (seed-dependent).
    """
    if mode not in ("ste", "noise"):
        raise ValueError(f"mode must be 'ste' or 'noise', got {mode!r}")
    with torch.no_grad():
        xp_l, _, _ = pad_image(pair.x_l)
        xp_r, _, _ = pad_image(pair.x_r)
        state = _encoder_chain(model, xp_l, xp_r, pair.vp_l, pair.vp_r)
        if mode == "ste":
            total = 0.0
            for name in PLANE_ORDER:
                plane = state.planes[name]
                table = build_cdf(state.params[name], (plane.v_min, plane.v_max))
                total += _table_cross_entropy(plane, table)
        else:
            total = 0.0
            for k, name in enumerate(PLANE_ORDER):
                x = state.latents[name]
                noisy = quantize_noise(x, seed * 4 + k)
                p = state.params[name]
                mu = torch.as_tensor(p.mu, dtype=torch.float64).reshape(x.shape)
                b = torch.as_tensor(p.b, dtype=torch.float64).reshape(x.shape)
                total += float(relaxed_rate_bits(noisy.double(), mu, b))
        x_l, x_r = model.decode(state.y_hat_l, state.y_hat_r, clamp=True)
    h, w = pair.x_l.shape[-2:]
    return x_l[0, :, :h, :w], x_r[0, :, :h, :w], float(total)
