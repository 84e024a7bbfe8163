"""HTTP service exposing the codec workflows; the CLI is a thin client of it.

Every endpoint is a synchronous job on the host filesystem (desk-scale
corpora train in minutes, so requests simply block). Domain validation
errors surface as 400s with the original message.
"""

from __future__ import annotations

import base64
import time
from pathlib import Path

import torch
from fastapi import FastAPI, HTTPException

from . import __version__, schemas
from .coderjob import JobFormatError, run_reference_jobs
from .container import CorruptBitstreamError, FcnrBitstream, WrongModelError
from .data import (
    CorpusConfig,
    FieldConfig,
    generate_corpus,
    load_corpus_config,
    pair_records,
    read_manifest,
)
from .fastbridge import FastCoderUnavailable
from .metrics import ablate, evaluate_corpus, load_pair_images, rd_sweep
from .networks import FcnrModel, ModelConfig, load_checkpoint, save_checkpoint
from .pipeline import compress, decompress
from .training import TrainConfig, load_train_state, train


def _model_config(p: schemas.ModelParams, ablation: str = "full") -> ModelConfig:
    cfg = ModelConfig(
        trunk_channels=p.trunk_channels,
        latent_channels=p.latent_channels,
        hyper_channels=p.hyper_channels,
        attn_heads=p.attn_heads,
    )
    return cfg.with_ablation(ablation)


def _save_png(path, img: torch.Tensor) -> None:
    import numpy as np
    from PIL import Image

    arr = (img.clamp(0, 1).numpy() * 255.0).round().astype("uint8").transpose(1, 2, 0)
    Image.fromarray(arr, mode="RGB").save(path)


def create_app() -> FastAPI:
    app = FastAPI(title="fcnr", version=__version__)

    @app.exception_handler(ValueError)
    async def _value_error(request, exc):
        from fastapi.responses import JSONResponse

        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/gen-data", response_model=schemas.GenDataResponse)
    def gen_data(req: schemas.GenDataRequest):
        cfg = CorpusConfig(
            subdiv_level=req.subdiv_level,
            n_timesteps=req.n_timesteps,
            height=req.height,
            width=req.width,
            mode=req.mode,
            field=FieldConfig(**req.field.model_dump()),
        )
        records = generate_corpus(cfg, req.out_dir)
        pairs = {r.pair_id: r.split for r in records}
        return schemas.GenDataResponse(
            n_images=len(records),
            n_train_pairs=sum(1 for s in pairs.values() if s == "train"),
            n_heldout_pairs=sum(1 for s in pairs.values() if s == "heldout"),
            manifest=str(Path(req.out_dir) / "manifest.tsv"),
            corpus_config=str(Path(req.out_dir) / "corpus.json"),
        )

    @app.post("/train", response_model=schemas.TrainResponse)
    def train_endpoint(req: schemas.TrainRequest):
        from .training import load_split_pairs, make_optimizer

        out = Path(req.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        tcfg = TrainConfig(
            lambda_rd=req.lambda_rd,
            lr=req.lr,
            adam_beta1=req.adam_beta1,
            adam_beta2=req.adam_beta2,
            epochs=req.epochs,
            seed=req.seed,
            ablation=req.ablation,
            checkpoint_every=req.checkpoint_every,
        )
        state = None
        optimizer = None
        if req.resume_from:
            model, optimizer, tcfg, state = load_train_state(req.resume_from)
        else:
            torch.manual_seed(req.seed)
            model = FcnrModel(_model_config(req.model, req.ablation))
        pairs = load_split_pairs(req.corpus_dir, "train")
        t0 = time.monotonic()
        state, optimizer = train(
            model, pairs, tcfg, out_dir=out, max_steps=req.max_steps,
            state=state, optimizer=optimizer,
        )
        wall = time.monotonic() - t0
        weights = out / "model.pt"
        save_checkpoint(model, weights)
        last = state.history[-1] if state.history else (0, 0.0, 0.0, 0.0)
        return schemas.TrainResponse(
            weights=str(weights),
            train_state=str(out / "ckpt_final.pt"),
            steps=state.step,
            final_rate_bits=last[1],
            final_distortion=last[2],
            final_total=last[3],
            wall_s=wall,
        )

    def _load_model(path: str) -> FcnrModel:
        if not Path(path).exists():
            raise HTTPException(status_code=404, detail=f"weights not found: {path}")
        model, _ = load_checkpoint(path)
        return model

    @app.post("/compress", response_model=schemas.CompressResponse)
    def compress_endpoint(req: schemas.CompressRequest):
        model = _load_model(req.weights)
        corpus = Path(req.corpus_dir)
        cfg = load_corpus_config(corpus / "corpus.json")
        records = read_manifest(corpus / "manifest.tsv")
        out = Path(req.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = []
        total_bits = 0
        total_px = 0
        t0 = time.monotonic()
        try:
            for l_rec, r_rec in pair_records(records, split=req.split):
                if req.pair_ids is not None and l_rec.pair_id not in req.pair_ids:
                    continue
                pair = load_pair_images(corpus, l_rec, r_rec, cfg.n_timesteps)
                bs = compress(pair, model, coder=req.coder)
                path = out / f"pair_{l_rec.pair_id:05d}.fcnr"
                path.write_bytes(bs.serialize())
                files.append(str(path))
                total_bits += 8 * bs.payload_bytes
                total_px += 2 * bs.height * bs.width
        except FastCoderUnavailable as exc:
            raise HTTPException(status_code=503, detail=str(exc))
        if not files:
            raise HTTPException(status_code=400, detail="no pairs matched the filter")
        return schemas.CompressResponse(
            files=files, bpp=total_bits / total_px, encode_s=time.monotonic() - t0
        )

    @app.post("/decompress", response_model=schemas.DecompressResponse)
    def decompress_endpoint(req: schemas.DecompressRequest):
        model = _load_model(req.weights)
        out = Path(req.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        images = []
        t0 = time.monotonic()
        for f in req.files:
            data = Path(f).read_bytes()
            try:
                bs = FcnrBitstream.parse(data)
                x_l, x_r = decompress(bs, model, coder=req.coder)
            except (CorruptBitstreamError, WrongModelError) as exc:
                raise HTTPException(status_code=422, detail=f"{f}: {exc}")
            except FastCoderUnavailable as exc:
                raise HTTPException(status_code=503, detail=str(exc))
            stem = Path(f).stem
            for side, img in (("l", x_l), ("r", x_r)):
                path = out / f"{stem}_{side}.png"
                _save_png(path, img)
                images.append(str(path))
        return schemas.DecompressResponse(images=images, decode_s=time.monotonic() - t0)

    @app.post("/eval", response_model=schemas.EvalResponse)
    def eval_endpoint(req: schemas.EvalRequest):
        model = _load_model(req.weights)
        try:
            report = evaluate_corpus(req.corpus_dir, model, split_filter=req.split, coder=req.coder)
        except FastCoderUnavailable as exc:
            raise HTTPException(status_code=503, detail=str(exc))
        path = None
        if req.report_path:
            Path(req.report_path).parent.mkdir(parents=True, exist_ok=True)
            Path(req.report_path).write_text(report.to_json() + "\n")
            path = req.report_path
        return schemas.EvalResponse(report=report.to_dict(), report_path=path)

    @app.post("/rd-sweep", response_model=schemas.RdSweepResponse)
    def rd_sweep_endpoint(req: schemas.RdSweepRequest):
        out = Path(req.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result = rd_sweep(
            req.corpus_dir,
            lambdas=tuple(req.lambdas),
            model_config=_model_config(req.model),
            base_train_config=TrainConfig(seed=req.seed, epochs=req.epochs),
            max_steps=req.max_steps,
            eval_split=req.eval_split,
            out_dir=out,
        )
        return schemas.RdSweepResponse(
            rows=result["rows"],
            diagnostic=result["diagnostic"],
            table=str(out / "rd_sweep.tsv"),
            chart=str(out / "rd_sweep.png"),
        )

    @app.post("/ablate", response_model=schemas.AblateResponse)
    def ablate_endpoint(req: schemas.AblateRequest):
        out = Path(req.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows = ablate(
            req.corpus_dir,
            model_config=_model_config(req.model),
            train_config=TrainConfig(lambda_rd=req.lambda_rd, seed=req.seed, epochs=req.epochs),
            max_steps=req.max_steps,
            eval_split=req.eval_split,
            out_dir=out,
        )
        return schemas.AblateResponse(rows=rows, table=str(out / "ablation.tsv"))

    @app.post("/coder-job", response_model=schemas.CoderJobResponse)
    def coder_job(req: schemas.CoderJobRequest):
        try:
            job = base64.b64decode(req.job_b64, validate=True)
        except Exception as exc:
            raise HTTPException(status_code=400, detail=f"bad base64: {exc}")
        try:
            result = run_reference_jobs(job)
        except JobFormatError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return schemas.CoderJobResponse(result_b64=base64.b64encode(result).decode("ascii"))

    return app


app = create_app()
