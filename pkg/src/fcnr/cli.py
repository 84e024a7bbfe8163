"""Command-line surface: a thin client over the HTTP service.

Without --server the app runs in-process (client and service share the
filesystem); with --server the same requests go to a remote instance whose
paths are interpreted on that host.
"""

from __future__ import annotations

import base64
import json
import sys
from pathlib import Path

import click


def _client(server: str | None):
    if server:
        import httpx

        return httpx.Client(base_url=server, timeout=None)
    from fastapi.testclient import TestClient

    from .service import create_app

    return TestClient(create_app())


def _post(ctx, path: str, body: dict) -> dict:
    with _client(ctx.obj.get("server")) as client:
        resp = client.post(path, json=body)
    if resp.status_code != 200:
        try:
            detail = resp.json().get("detail", resp.text)
        except Exception:
            detail = resp.text
        raise click.ClickException(f"{path} failed ({resp.status_code}): {detail}")
    return resp.json()


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text())


@click.group()
@click.option("--server", default=None, help="Remote service URL; default runs in-process.")
@click.pass_context
def main(ctx, server):
    """Compressive codec for paired visualization images."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server


@main.command("gen-data")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="JSON with corpus fields (subdiv_level, n_timesteps, ...).")
@click.option("--seed", type=int, default=None, help="Field seed override.")
@click.pass_context
def gen_data(ctx, out_dir, config_path, seed):
    """Render the synthetic corpus and write its manifest."""
    body = {**_load_config(config_path), "out_dir": out_dir}
    if seed is not None:
        body.setdefault("field", {})["seed"] = seed
    out = _post(ctx, "/gen-data", body)
    click.echo(f"{out['n_images']} images ({out['n_train_pairs']} train pairs, "
               f"{out['n_heldout_pairs']} heldout pairs)")
    click.echo(f"manifest: {out['manifest']}")


@main.command()
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="JSON with TrainRequest fields (lambda_rd, epochs, model, ...).")
@click.option("--seed", type=int, default=None)
@click.option("--lambda", "lambda_rd", type=float, default=None)
@click.option("--ablation", type=click.Choice(["full", "jct_only", "pe_only", "neither"]),
              default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--max-steps", type=int, default=None)
@click.option("--resume", "resume_from", type=click.Path(exists=True), default=None)
@click.pass_context
def train(ctx, corpus_dir, out_dir, config_path, seed, lambda_rd, ablation, epochs,
          max_steps, resume_from):
    """Train a model on the corpus' train split."""
    body = {**_load_config(config_path), "corpus_dir": corpus_dir, "out_dir": out_dir}
    for key, val in (("seed", seed), ("lambda_rd", lambda_rd), ("ablation", ablation),
                     ("epochs", epochs), ("max_steps", max_steps),
                     ("resume_from", resume_from)):
        if val is not None:
            body[key] = val
    out = _post(ctx, "/train", body)
    click.echo(f"trained {out['steps']} steps in {out['wall_s']:.1f}s  "
               f"L_R {out['final_rate_bits']:.1f} bits  L_D {out['final_distortion']:.6f}")
    click.echo(f"weights: {out['weights']}")


@main.command()
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--weights", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--split", type=click.Choice(["train", "heldout"]), default=None)
@click.option("--pair-id", "pair_ids", type=int, multiple=True)
@click.option("--coder", type=click.Choice(["reference", "fast"]), default="reference")
@click.pass_context
def compress(ctx, corpus_dir, weights, out_dir, split, pair_ids, coder):
    """Compress corpus pairs into .fcnr containers."""
    body = {
        "corpus_dir": corpus_dir,
        "weights": weights,
        "out_dir": out_dir,
        "split": split,
        "pair_ids": list(pair_ids) or None,
        "coder": coder,
    }
    out = _post(ctx, "/compress", body)
    click.echo(f"{len(out['files'])} pairs -> {out['bpp']:.4f} bpp in {out['encode_s']:.2f}s")
    for f in out["files"]:
        click.echo(f)


@main.command()
@click.argument("files", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--weights", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--coder", type=click.Choice(["reference", "fast"]), default="reference")
@click.pass_context
def decompress(ctx, files, weights, out_dir, coder):
    """Reconstruct PNG pairs from .fcnr containers."""
    body = {"files": [str(f) for f in files], "weights": weights,
            "out_dir": out_dir, "coder": coder}
    out = _post(ctx, "/decompress", body)
    click.echo(f"{len(out['images'])} images in {out['decode_s']:.2f}s")
    for f in out["images"]:
        click.echo(f)


@main.command("eval")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--weights", required=True, type=click.Path(exists=True))
@click.option("--split", type=click.Choice(["train", "heldout"]), default=None)
@click.option("--coder", type=click.Choice(["reference", "fast"]), default="reference")
@click.option("--report", "report_path", type=click.Path(), default=None,
              help="Write the full JSON report here.")
@click.pass_context
def eval_cmd(ctx, corpus_dir, weights, split, coder, report_path):
    """Compress+decompress a split and report PSNR/BPP/timing."""
    body = {"corpus_dir": corpus_dir, "weights": weights, "split": split,
            "coder": coder, "report_path": report_path}
    out = _post(ctx, "/eval", body)
    rep = out["report"]
    click.echo("split\tpairs\tmean_psnr_db\tbpp")
    for key in ("train", "heldout", "all"):
        if f"mean_psnr_{key}" in rep:
            n = sum(1 for r in rep["results"] if key == "all" or r["split"] == key)
            click.echo(f"{key}\t{n}\t{rep[f'mean_psnr_{key}']:.3f}\t{rep[f'bpp_{key}']:.4f}")
    click.echo(f"encode_s {rep['encode_s']:.2f}  decode_s {rep['decode_s']:.2f}  "
               f"errors {len(rep['errors'])}")
    if out.get("report_path"):
        click.echo(f"report: {out['report_path']}")


@main.command("rd-sweep")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--lambdas", default="1e-3,1e-2,1e-1", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", type=int, default=None)
@click.option("--max-steps", type=int, default=None)
@click.option("--split", "eval_split", type=click.Choice(["train", "heldout"]), default=None)
@click.pass_context
def rd_sweep_cmd(ctx, corpus_dir, out_dir, lambdas, config_path, seed, max_steps, eval_split):
    """Trace the rate-distortion curve over a lambda sweep."""
    body = {**_load_config(config_path), "corpus_dir": corpus_dir, "out_dir": out_dir,
            "lambdas": [float(s) for s in lambdas.split(",") if s]}
    for key, val in (("seed", seed), ("max_steps", max_steps), ("eval_split", eval_split)):
        if val is not None:
            body[key] = val
    out = _post(ctx, "/rd-sweep", body)
    click.echo("lambda\tbpp\tpsnr_db")
    for row in out["rows"]:
        click.echo(f"{row[0]:g}\t{row[1]:.4f}\t{row[2]:.3f}")
    click.echo(out["diagnostic"])
    click.echo(f"table: {out['table']}  chart: {out['chart']}")


@main.command()
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", type=int, default=None)
@click.option("--max-steps", type=int, default=None)
@click.option("--split", "eval_split", type=click.Choice(["train", "heldout"]), default=None)
@click.pass_context
def ablate(ctx, corpus_dir, out_dir, config_path, seed, max_steps, eval_split):
    """Train and compare all four conditioning variants."""
    body = {**_load_config(config_path), "corpus_dir": corpus_dir, "out_dir": out_dir}
    for key, val in (("seed", seed), ("max_steps", max_steps), ("eval_split", eval_split)):
        if val is not None:
            body[key] = val
    out = _post(ctx, "/ablate", body)
    click.echo("ablation\tbpp\tpsnr_db")
    for row in out["rows"]:
        click.echo(f"{row[0]}\t{row[1]:.4f}\t{row[2]:.3f}")
    click.echo(f"table: {out['table']}")


@main.command("coder-job")
@click.option("--input", "-i", "input_path", default="-",
              help="Serialized job batch; '-' reads stdin.")
@click.option("--output", "-o", "output_path", default="-",
              help="Result destination; '-' writes stdout.")
@click.pass_context
def coder_job(ctx, input_path, output_path):
    """Run a serialized coder-job batch with the reference coder."""
    data = sys.stdin.buffer.read() if input_path == "-" else Path(input_path).read_bytes()
    out = _post(ctx, "/coder-job", {"job_b64": base64.b64encode(data).decode("ascii")})
    result = base64.b64decode(out["result_b64"])
    if output_path == "-":
        sys.stdout.buffer.write(result)
        sys.stdout.buffer.flush()
    else:
        Path(output_path).write_bytes(result)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8080, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
