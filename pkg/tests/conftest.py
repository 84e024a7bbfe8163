import pytest

from fcnr.data import CorpusConfig, FieldConfig, generate_corpus

SMALL_MODEL = {"trunk_channels": 32, "latent_channels": 8, "hyper_channels": 8,
               "attn_heads": 2}


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Level-0 icosphere, 2 timesteps, 48x48: 6 pairs per timestep."""
    out = tmp_path_factory.mktemp("corpus")
    cfg = CorpusConfig(subdiv_level=0, n_timesteps=2, height=48, width=48,
                       field=FieldConfig(n_lobes=3))
    generate_corpus(cfg, out)
    return out


@pytest.fixture(scope="session")
def tiny_trained(tiny_corpus, tmp_path_factory):
    """Two training steps through the /train endpoint; shared by service and CLI tests."""
    from fastapi.testclient import TestClient

    from fcnr.service import create_app

    out = tmp_path_factory.mktemp("trained")
    with TestClient(create_app()) as client:
        resp = client.post("/train", json={
            "corpus_dir": str(tiny_corpus),
            "out_dir": str(out),
            "max_steps": 2,
            "epochs": 1,
            "seed": 0,
            "model": SMALL_MODEL,
        })
    assert resp.status_code == 200, resp.text
    return {"corpus": str(tiny_corpus), "out": str(out), **resp.json()}
