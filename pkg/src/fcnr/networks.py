"""Neural transforms for the paired-view codec.

Four shared-weight transforms (encoder, hyper-encoder, decoder, hyper-decoder)
process the two views of a pair; a joint context transfer module (JCTM) mixes
the views by bidirectional cross-attention, and stereo context modules (SCMs)
predict the right view's entropy parameters from the left view's decoded
values. A sinusoidal positional encoding of the visualization parameters
(timestep, polar angle, azimuth) feeds small MLPs that seed the hyper-latent
entropy parameters, which is what lets the model compress views it never saw.

Downsampling factors are fixed: latents live at 1/16 resolution, hyper-latents
at 1/64, so inputs must have height and width divisible by 64 (the pipeline
pads). All b (scale) outputs pass through softplus with a small floor, so they
are strictly positive everywhere.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .entropy import SCALE_FLOOR

# softplus^-1(1): biases of raw-scale outputs start the Laplacians at b ~= 1
RAW_B_INIT = float(np.log(np.expm1(1.0)))

ABLATIONS = ("full", "jct_only", "pe_only", "neither")


@dataclass(frozen=True)
class PEConfig:
    base_b: float = 1.25
    levels_L: int = 8

    def __post_init__(self):
        if not self.base_b > 1:
            raise ValueError(f"base_b must be > 1, got {self.base_b}")
        if self.levels_L < 1:
            raise ValueError(f"levels_L must be >= 1, got {self.levels_L}")

    @property
    def width(self) -> int:
        """Output width of pe_vis: 2L per scalar, three scalars."""
        return 6 * self.levels_L


@dataclass(frozen=True)
class VisParams:
    """Normalized visualization parameters of one rendered view, all in [0,1]."""

    t: float
    theta: float
    phi_view: float

    def __post_init__(self):
        for name in ("t", "theta", "phi_view"):
            u = getattr(self, name)
            if not (0.0 <= u <= 1.0):
                raise ValueError(f"{name}={u} outside [0,1]")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.t, self.theta, self.phi_view)


def pe_scalar(u: float, cfg: PEConfig) -> np.ndarray:
    """Sinusoidal lift of a scalar: (sin(b^0 pi u), cos(b^0 pi u), ..., sin(b^{L-1} pi u), cos(...))."""
    args = (cfg.base_b ** np.arange(cfg.levels_L, dtype=np.float64)) * (np.pi * float(u))
    out = np.empty(2 * cfg.levels_L, dtype=np.float64)
    out[0::2] = np.sin(args)
    out[1::2] = np.cos(args)
    return out


def pe_vis(v: VisParams, cfg: PEConfig) -> np.ndarray:
    """Concatenated encodings of (t, theta, phi_view), width 6L."""
    return np.concatenate([pe_scalar(u, cfg) for u in v.as_tuple()])


def to_scale(raw_b: torch.Tensor) -> torch.Tensor:
    """Positive Laplace scale from an unconstrained network output."""
    return F.softplus(raw_b) + SCALE_FLOOR


def split_channel_params(raw: torch.Tensor, dim: int = 1) -> tuple[torch.Tensor, torch.Tensor]:
    """Split a 2C-wide raw output into (mu, b) with the positivity mapping applied."""
    mu, raw_b = torch.chunk(raw, 2, dim=dim)
    return mu, to_scale(raw_b)


class CrossAttention(nn.Module):
    """Linear-complexity cross-attention over flattened spatial tokens.

    Keys are normalized over tokens and queries over channels, so the
    key/value aggregation is a fixed-size context matrix per head and cost
    stays linear in the number of positions.
    """

    def __init__(self, channels: int, heads: int):
        super().__init__()
        key_channels = max(channels // 8, heads)
        value_channels = max(channels // 4, heads)
        if key_channels % heads or value_channels % heads:
            raise ValueError(f"channels {channels} not divisible across {heads} heads")
        self.heads = heads
        self.key_channels = key_channels
        self.value_channels = value_channels
        self.queries = nn.Conv2d(channels, key_channels, 1)
        self.keys = nn.Conv2d(channels, key_channels, 1)
        self.values = nn.Conv2d(channels, value_channels, 1)
        self.reprojection = nn.Conv2d(value_channels, channels, 1)

    def forward(self, target: torch.Tensor, source: torch.Tensor) -> torch.Tensor:
        n, _, h, w = target.shape
        queries = self.queries(target).reshape(n, self.key_channels, h * w)
        keys = self.keys(source).reshape(n, self.key_channels, h * w)
        values = self.values(source).reshape(n, self.value_channels, h * w)
        hk = self.key_channels // self.heads
        hv = self.value_channels // self.heads
        attended = []
        for i in range(self.heads):
            key = F.softmax(keys[:, i * hk : (i + 1) * hk, :], dim=2)
            query = F.softmax(queries[:, i * hk : (i + 1) * hk, :], dim=1)
            value = values[:, i * hv : (i + 1) * hv, :]
            context = key @ value.transpose(1, 2)  # [n, hk, hv]
            attended.append((context.transpose(1, 2) @ query).reshape(n, hv, h, w))
        return self.reprojection(torch.cat(attended, dim=1))


class Jctm(nn.Module):
    """Joint context transfer: residual cross-view attention, weights shared
    across the two directions so swapping inputs exactly swaps outputs."""

    def __init__(self, channels: int, heads: int):
        super().__init__()
        self.attn = CrossAttention(channels, heads)

    def forward(self, f_l: torch.Tensor, f_r: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if f_l.shape != f_r.shape:
            raise ValueError(f"view shapes differ: {tuple(f_l.shape)} vs {tuple(f_r.shape)}")
        return f_l + self.attn(f_l, f_r), f_r + self.attn(f_r, f_l)


class _Identity2(nn.Module):
    def forward(self, f_l, f_r):
        return f_l, f_r


def _make_jctm(channels: int, heads: int, enabled: bool) -> nn.Module:
    return Jctm(channels, heads) if enabled else _Identity2()


class Encoder(nn.Module):
    """Image -> latent at 1/16 resolution; JCTM mixes the views mid-trunk."""

    def __init__(self, trunk: int, latent: int, heads: int, use_jctm: bool):
        super().__init__()
        self.stage1 = nn.Sequential(nn.Conv2d(3, trunk, 5, stride=2, padding=2), nn.PReLU(trunk))
        self.stage2 = nn.Sequential(nn.Conv2d(trunk, trunk, 5, stride=2, padding=2), nn.PReLU(trunk))
        self.jctm = _make_jctm(trunk, heads, use_jctm)
        self.stage3 = nn.Sequential(nn.Conv2d(trunk, trunk, 5, stride=2, padding=2), nn.PReLU(trunk))
        self.stage4 = nn.Sequential(nn.Conv2d(trunk, trunk, 5, stride=2, padding=2), nn.PReLU(trunk))
        self.head = nn.Conv2d(trunk, latent, 1)

    def forward(self, x_l: torch.Tensor, x_r: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        f_l = self.stage2(self.stage1(x_l))
        f_r = self.stage2(self.stage1(x_r))
        f_l, f_r = self.jctm(f_l, f_r)
        f_l = self.stage4(self.stage3(f_l))
        f_r = self.stage4(self.stage3(f_r))
        return self.head(f_l), self.head(f_r)


class HyperEncoder(nn.Module):
    """Latent -> hyper-latent at a further 1/4 resolution."""

    def __init__(self, trunk: int, latent: int, hyper: int, heads: int, use_jctm: bool):
        super().__init__()
        self.stage1 = nn.Sequential(nn.Conv2d(latent, trunk, 3, stride=2, padding=1), nn.PReLU(trunk))
        self.jctm = _make_jctm(trunk, heads, use_jctm)
        self.stage2 = nn.Conv2d(trunk, hyper, 3, stride=2, padding=1)

    def forward(self, y_l: torch.Tensor, y_r: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        f_l = self.stage1(y_l)
        f_r = self.stage1(y_r)
        f_l, f_r = self.jctm(f_l, f_r)
        return self.stage2(f_l), self.stage2(f_r)


class Decoder(nn.Module):
    """Quantized latent -> image; mirror of the encoder."""

    def __init__(self, trunk: int, latent: int, heads: int, use_jctm: bool):
        super().__init__()
        self.head = nn.Conv2d(latent, trunk, 1)
        self.stage1 = nn.Sequential(
            nn.ConvTranspose2d(trunk, trunk, 5, stride=2, padding=2, output_padding=1), nn.PReLU(trunk)
        )
        self.stage2 = nn.Sequential(
            nn.ConvTranspose2d(trunk, trunk, 5, stride=2, padding=2, output_padding=1), nn.PReLU(trunk)
        )
        self.jctm = _make_jctm(trunk, heads, use_jctm)
        self.stage3 = nn.Sequential(
            nn.ConvTranspose2d(trunk, trunk, 5, stride=2, padding=2, output_padding=1), nn.PReLU(trunk)
        )
        self.stage4 = nn.ConvTranspose2d(trunk, 3, 5, stride=2, padding=2, output_padding=1)

    def forward(
        self, y_hat_l: torch.Tensor, y_hat_r: torch.Tensor, clamp: bool = True
    ) -> tuple[torch.Tensor, torch.Tensor]:
        f_l = self.stage2(self.stage1(self.head(y_hat_l)))
        f_r = self.stage2(self.stage1(self.head(y_hat_r)))
        f_l, f_r = self.jctm(f_l, f_r)
        x_l = self.stage4(self.stage3(f_l))
        x_r = self.stage4(self.stage3(f_r))
        if clamp:
            x_l = x_l.clamp(0.0, 1.0)
            x_r = x_r.clamp(0.0, 1.0)
        return x_l, x_r


class HyperDecoder(nn.Module):
    """Quantized hyper-latent pair -> per-element (mu, b) for both latents."""

    def __init__(self, trunk: int, latent: int, hyper: int, heads: int, use_jctm: bool):
        super().__init__()
        self.stage1 = nn.Sequential(
            nn.ConvTranspose2d(hyper, trunk, 3, stride=2, padding=1, output_padding=1), nn.PReLU(trunk)
        )
        self.jctm = _make_jctm(trunk, heads, use_jctm)
        self.stage2 = nn.ConvTranspose2d(trunk, 2 * latent, 3, stride=2, padding=1, output_padding=1)
        with torch.no_grad():
            self.stage2.bias[latent:].fill_(RAW_B_INIT)

    def forward(self, z_hat_l: torch.Tensor, z_hat_r: torch.Tensor):
        f_l = self.stage1(z_hat_l)
        f_r = self.stage1(z_hat_r)
        f_l, f_r = self.jctm(f_l, f_r)
        return split_channel_params(self.stage2(f_l)), split_channel_params(self.stage2(f_r))


class Scm(nn.Module):
    """Stereo context module: refine (mu, b) for the right view from the left
    view's decoded values plus the right view's predicted parameters."""

    def __init__(self, channels: int):
        super().__init__()
        mid = 2 * channels
        self.context = nn.Sequential(
            nn.Conv2d(channels, mid, 3, padding=1),
            nn.PReLU(mid),
            nn.Conv2d(mid, mid, 3, padding=1),
            nn.PReLU(mid),
        )
        self.fuse = nn.Sequential(
            nn.Conv2d(mid + 2 * channels, mid, 1),
            nn.PReLU(mid),
            nn.Conv2d(mid, 2 * channels, 1),
        )
        with torch.no_grad():
            self.fuse[-1].bias[channels:].fill_(RAW_B_INIT)

    def forward(
        self, decoded_left: torch.Tensor, phi_mu: torch.Tensor, phi_b: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        ctx = self.context(decoded_left)
        raw = self.fuse(torch.cat([ctx, phi_mu, phi_b], dim=1))
        return split_channel_params(raw)


class VisMlp(nn.Module):
    """Positional-encoded visualization parameters -> 2C per-channel raw params."""

    def __init__(self, in_width: int, out_channels: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_width, 128),
            nn.PReLU(128),
            nn.Linear(128, 128),
            nn.PReLU(128),
            nn.Linear(128, 2 * out_channels),
        )
        with torch.no_grad():
            self.net[-1].bias[out_channels:].fill_(RAW_B_INIT)

    def forward(self, pe_vec: torch.Tensor) -> torch.Tensor:
        # per-feature PReLU slopes need an explicit batch dimension
        return self.net(pe_vec.reshape(1, -1)).reshape(-1)


@dataclass(frozen=True)
class ModelConfig:
    trunk_channels: int = 192
    latent_channels: int = 48
    hyper_channels: int = 48
    attn_heads: int = 2
    pe: PEConfig = field(default_factory=PEConfig)
    use_jctm: bool = True
    use_pe: bool = True

    @property
    def ablation(self) -> str:
        if self.use_jctm and self.use_pe:
            return "full"
        if self.use_jctm:
            return "jct_only"
        if self.use_pe:
            return "pe_only"
        return "neither"

    def with_ablation(self, name: str) -> "ModelConfig":
        if name not in ABLATIONS:
            raise ValueError(f"unknown ablation {name!r}, expected one of {ABLATIONS}")
        return ModelConfig(
            trunk_channels=self.trunk_channels,
            latent_channels=self.latent_channels,
            hyper_channels=self.hyper_channels,
            attn_heads=self.attn_heads,
            pe=self.pe,
            use_jctm=name in ("full", "jct_only"),
            use_pe=name in ("full", "pe_only"),
        )

    def to_dict(self) -> dict:
        return {
            "trunk_channels": self.trunk_channels,
            "latent_channels": self.latent_channels,
            "hyper_channels": self.hyper_channels,
            "attn_heads": self.attn_heads,
            "pe": {"base_b": self.pe.base_b, "levels_L": self.pe.levels_L},
            "use_jctm": self.use_jctm,
            "use_pe": self.use_pe,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        pe = d.pop("pe", {})
        return ModelConfig(pe=PEConfig(**pe), **d)


class FcnrModel(nn.Module):
    """The complete codec model: transforms, context modules, and the
    visualization-parameter path that seeds the hyper-latent entropy model."""

    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        cfg = config or ModelConfig()
        self.config = cfg
        t, c_y, c_z, h = cfg.trunk_channels, cfg.latent_channels, cfg.hyper_channels, cfg.attn_heads
        self.encoder = Encoder(t, c_y, h, cfg.use_jctm)
        self.hyper_encoder = HyperEncoder(t, c_y, c_z, h, cfg.use_jctm)
        self.decoder = Decoder(t, c_y, h, cfg.use_jctm)
        self.hyper_decoder = HyperDecoder(t, c_y, c_z, h, cfg.use_jctm)
        self.cont_z = Scm(c_z)
        self.cont_y = Scm(c_y)
        if cfg.use_pe:
            self.mlp_left = VisMlp(cfg.pe.width, c_z)
            self.mlp_right = VisMlp(cfg.pe.width, c_z)
        else:
            # unconditional fallback: one learned (mu, raw_b) vector per side
            init = torch.cat([torch.zeros(c_z), torch.full((c_z,), RAW_B_INIT)])
            self.param_left = nn.Parameter(init.clone())
            self.param_right = nn.Parameter(init.clone())

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def mlp_entropy_params(self, vp: VisParams, side: str) -> torch.Tensor:
        """Raw 2C vector for one side's hyper-latent entropy model."""
        if side not in ("left", "right"):
            raise ValueError(f"side must be 'left' or 'right', got {side!r}")
        if self.config.use_pe:
            vec = torch.as_tensor(pe_vis(vp, self.config.pe), dtype=self.dtype)
            mlp = self.mlp_left if side == "left" else self.mlp_right
            return mlp(vec)
        return self.param_left if side == "left" else self.param_right

    def psi_z_left(self, vp: VisParams) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-channel (mu, b) coding the left hyper-latent, broadcast spatially."""
        return split_channel_params(self.mlp_entropy_params(vp, "left"), dim=0)

    def phi_z_right(self, vp: VisParams) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-channel (mu, b) conditioning input for the right hyper-latent's SCM."""
        return split_channel_params(self.mlp_entropy_params(vp, "right"), dim=0)

    def psi_z_right(
        self, z_hat_l: torch.Tensor, phi: tuple[torch.Tensor, torch.Tensor]
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Refined (mu, b) for the right hyper-latent from the decoded left one."""
        n, _, hh, ww = z_hat_l.shape
        mu = phi[0].reshape(1, -1, 1, 1).expand(n, -1, hh, ww)
        b = phi[1].reshape(1, -1, 1, 1).expand(n, -1, hh, ww)
        return self.cont_z(z_hat_l, mu, b)

    def psi_y_right(
        self, y_hat_l: torch.Tensor, phi: tuple[torch.Tensor, torch.Tensor]
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Refined (mu, b) for the right latent from the decoded left one."""
        return self.cont_y(y_hat_l, phi[0], phi[1])

    def encode(self, x_l: torch.Tensor, x_r: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        for name, x in (("x_l", x_l), ("x_r", x_r)):
            if x.shape[-1] % 64 or x.shape[-2] % 64:
                raise ValueError(
                    f"{name} spatial size {tuple(x.shape[-2:])} not divisible by 64; pad first"
                )
        if x_l.shape != x_r.shape:
            raise ValueError(f"pair shapes differ: {tuple(x_l.shape)} vs {tuple(x_r.shape)}")
        return self.encoder(x_l, x_r)

    def hyper_encode(self, y_l: torch.Tensor, y_r: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.hyper_encoder(y_l, y_r)

    def hyper_decode(self, z_hat_l: torch.Tensor, z_hat_r: torch.Tensor):
        """(phi_y_l, phi_y_r) as (mu, b) pairs; the left one codes y_l directly."""
        return self.hyper_decoder(z_hat_l, z_hat_r)

    def decode(
        self, y_hat_l: torch.Tensor, y_hat_r: torch.Tensor, clamp: bool = True
    ) -> tuple[torch.Tensor, torch.Tensor]:
        return self.decoder(y_hat_l, y_hat_r, clamp=clamp)


def model_fingerprint(model: FcnrModel) -> int:
    """First 8 bytes of a sha256 over parameter names and exact tensor bytes."""
    h = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return int.from_bytes(h.digest()[:8], "little")


def save_checkpoint(model: FcnrModel, path, metadata: dict | None = None) -> None:
    torch.save(
        {
            "format_version": 1,
            "config": model.config.to_dict(),
            "state_dict": model.state_dict(),
            "metadata": metadata or {},
        },
        path,
    )


def load_checkpoint(path) -> tuple[FcnrModel, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format_version") != 1:
        raise ValueError(f"unsupported checkpoint format {payload.get('format_version')!r}")
    model = FcnrModel(ModelConfig.from_dict(payload["config"]))
    model.load_state_dict(payload["state_dict"])
    return model, payload["metadata"]
