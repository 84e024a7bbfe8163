"""Request/response bodies for the HTTP service.

Paths in requests refer to the service host's filesystem: the CLI talks to an
in-process app by default, so client and server share a disk. Binary coder
jobs travel base64-encoded.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class FieldParams(BaseModel):
    n_lobes: int = 5
    orbit_radius: float = 0.55
    lobe_sigma: float = 0.28
    orbit_turns: float = 0.5
    tilt: float = 0.35
    seed: int = 0
    symmetric: bool = False


class GenDataRequest(BaseModel):
    out_dir: str
    subdiv_level: int = 1
    n_timesteps: int = 6
    height: int = 128
    width: int = 128
    mode: str = "IR"
    field: FieldParams = Field(default_factory=FieldParams)


class GenDataResponse(BaseModel):
    n_images: int
    n_train_pairs: int
    n_heldout_pairs: int
    manifest: str
    corpus_config: str


class ModelParams(BaseModel):
    trunk_channels: int = 192
    latent_channels: int = 48
    hyper_channels: int = 48
    attn_heads: int = 2


class TrainRequest(BaseModel):
    corpus_dir: str
    out_dir: str
    lambda_rd: float = 0.01
    lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    epochs: int = 30
    seed: int = 0
    ablation: str = "full"
    checkpoint_every: int = 500
    max_steps: int | None = None
    resume_from: str | None = None
    model: ModelParams = Field(default_factory=ModelParams)


class TrainResponse(BaseModel):
    weights: str
    train_state: str
    steps: int
    final_rate_bits: float
    final_distortion: float
    final_total: float
    wall_s: float


class CompressRequest(BaseModel):
    corpus_dir: str
    weights: str
    out_dir: str
    split: str | None = None
    pair_ids: list[int] | None = None
    coder: str = "reference"


class CompressResponse(BaseModel):
    files: list[str]
    bpp: float
    encode_s: float


class DecompressRequest(BaseModel):
    files: list[str]
    weights: str
    out_dir: str
    coder: str = "reference"


class DecompressResponse(BaseModel):
    images: list[str]
    decode_s: float


class EvalRequest(BaseModel):
    corpus_dir: str
    weights: str
    split: str | None = None
    coder: str = "reference"
    report_path: str | None = None


class EvalResponse(BaseModel):
    report: dict
    report_path: str | None = None


class RdSweepRequest(BaseModel):
    corpus_dir: str
    out_dir: str
    lambdas: list[float] = [1e-3, 1e-2, 1e-1]
    max_steps: int | None = None
    seed: int = 0
    epochs: int = 30
    eval_split: str | None = None
    model: ModelParams = Field(default_factory=ModelParams)


class RdSweepResponse(BaseModel):
    rows: list[list]
    diagnostic: str
    table: str
    chart: str


class AblateRequest(BaseModel):
    corpus_dir: str
    out_dir: str
    max_steps: int | None = None
    seed: int = 0
    epochs: int = 30
    lambda_rd: float = 0.01
    eval_split: str | None = None
    model: ModelParams = Field(default_factory=ModelParams)


class AblateResponse(BaseModel):
    rows: list[list]
    table: str


class CoderJobRequest(BaseModel):
    job_b64: str


class CoderJobResponse(BaseModel):
    result_b64: str
