import json
from pathlib import Path

import numpy as np
import pytest

from mtok.cli import main as cli_main

TINY_INI = """
[data]
n_items = 100
noise_scale = 0.02

[tokenizer]
latent_dim = 24
codebook_size = 32
width = 32
denoiser_blocks = 2
quantize_warmup_steps = 5

[planner]
d_model = 48
n_layers = 2
n_heads = 4

[training]
tokenizer_steps = 25
planner_steps = 20
embedder_steps = 30
batch_size = 8
planner_batch_size = 8

[eval]
embed_dim = 16
repeats = 2
n_generate = 6
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.ini").write_text(TINY_INI)
    return root


@pytest.fixture(scope="module")
def trained(workdir):
    out = workdir / "run"
    assert cli_main(["train-tokenizer", "--config", str(workdir / "tiny.ini"),
                     "--out", str(out), "--log-every", "0"]) == 0
    assert cli_main(["train-planner", "--config", str(workdir / "tiny.ini"),
                     "--out", str(out), "--log-every", "0"]) == 0
    return out


def test_training_artifacts(trained):
    assert (trained / "tokenizer.ckpt").exists()
    assert (trained / "planner_ddm.ckpt").exists()
    assert (trained / "text_encoder.ckpt").exists()
    assert (trained / "resolved-config.ini").exists()


def test_train_planner_requires_tokenizer(workdir):
    empty = workdir / "empty"
    code = cli_main(["train-planner", "--config", str(workdir / "tiny.ini"),
                     "--out", str(empty)])
    assert code == 2


def test_resume_extends_training(workdir, trained, capsys):
    code = cli_main(["train-tokenizer", "--config", str(workdir / "tiny.ini"),
                     "--out", str(trained), "--resume", "--steps", "30",
                     "--log-every", "0"])
    assert code == 0
    out = capsys.readouterr().out
    assert "resuming" in out
    from mtok.checkpoint import load_checkpoint

    assert load_checkpoint(trained / "tokenizer.ckpt").config["steps_done"] == 30


def test_generate_determinism(trained, workdir):
    out1 = workdir / "g1.json"
    out2 = workdir / "g2.json"
    args = ["generate", "--model", str(trained), "--prompt",
            "a person walks in a circle", "--length", "32", "--seed", "5"]
    assert cli_main(args + ["--output", str(out1)]) == 0
    assert cli_main(args + ["--output", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    body = json.loads(out1.read_text())
    assert len(body["tokens"]) == 8


def test_ar_planner_training_and_generation(workdir, trained):
    assert cli_main(["train-planner", "--config", str(workdir / "tiny.ini"),
                     "--out", str(trained), "--mode", "ar", "--steps", "10",
                     "--log-every", "0"]) == 0
    out = workdir / "ar.json"
    assert cli_main(["generate", "--model", str(trained), "--prompt",
                     "someone walks in a zigzag", "--planner", "ar",
                     "--length", "32", "--output", str(out)]) == 0
    assert len(json.loads(out.read_text())["tokens"]) == 8


def test_evaluate_writes_report(workdir, trained):
    code = cli_main(["evaluate", "--config", str(workdir / "tiny.ini"),
                     "--model", str(trained), "--regime", "pelvis",
                     "--repeats", "2"])
    assert code == 0
    reports = list((trained / "results").glob("report-*.json"))
    assert reports
    payload = json.loads(sorted(reports)[0].read_text())
    assert payload["meta"]["config_hash"]
    assert payload["meta"]["evaluator_version"]


def test_sweep_cfg_eleven_rows(workdir, trained, capsys):
    code = cli_main(["sweep-cfg", "--config", str(workdir / "tiny.ini"),
                     "--model", str(trained), "--n-prompts", "6"])
    assert code == 0
    out = capsys.readouterr().out
    rows = [l for l in out.splitlines() if l.startswith("w=")]
    assert len(rows) == 11
    assert sum("best" in l for l in rows) == 1
    reports = [json.loads(p.read_text())
               for p in (trained / "results").glob("report-*.json")]
    sweep = [r for r in reports if r.get("kind") == "cfg_sweep"]
    assert sweep and len(sweep[0]["rows"]) == 11
    ws = [row["w"] for row in sweep[0]["rows"]]
    assert ws == [round(1.6 + 0.2 * i, 1) for i in range(11)]


def test_ablate_grid_and_errors(workdir, capsys):
    out = workdir / "ablate"
    code = cli_main(["ablate", "--config", str(workdir / "tiny.ini"),
                     "--out", str(out), "--steps", "6",
                     "--grid", "decoder=conv,diffusion_head kernel=5 downrate=4 latent=16"])
    assert code == 0
    text = capsys.readouterr().out
    assert "conv-k5-r4-d16" in text
    assert "diffusion_head-k0-r4-d16" in text
    # invalid grid cell -> actionable error
    code = cli_main(["ablate", "--config", str(workdir / "tiny.ini"),
                     "--out", str(out), "--steps", "2", "--grid", "kernel=6"])
    assert code == 1


def test_ablate_two_stage_freeze(workdir, trained, capsys):
    code = cli_main(["ablate", "--config", str(workdir / "tiny.ini"),
                     "--out", str(trained), "--two-stage", "--steps", "4",
                     "--stage2-variants", "conv"])
    assert code == 0
    out = capsys.readouterr().out
    assert "encoder unchanged=True" in out
    assert (trained / "tokenizer_stage2_conv.ckpt").exists()


def test_missing_checkpoint_error(workdir):
    code = cli_main(["generate", "--model", str(workdir / "nope"),
                     "--prompt", "x", "--output", str(workdir / "x.json")])
    assert code == 1


def test_external_text_embeddings_path(workdir, trained):
    """Planner trained on precomputed 512-dim embeddings keyed by caption hash."""
    from mtok.config import load_config, load_or_generate_dataset
    from mtok.text import write_external_embeddings

    cfg = load_config(workdir / "tiny.ini")
    dataset = load_or_generate_dataset(cfg)
    rng = np.random.default_rng(0)
    records = {it.caption: rng.standard_normal(512).astype(np.float32)
               for it in dataset.items}
    emb_path = workdir / "clip_embeddings.bin"
    write_external_embeddings(emb_path, records)

    out = workdir / "run_external"
    ini = workdir / "external.ini"
    ini.write_text(TINY_INI.replace(
        "[planner]", f"[planner]\nexternal_embeddings = {emb_path}"))
    import shutil

    out.mkdir(exist_ok=True)
    shutil.copy(trained / "tokenizer.ckpt", out / "tokenizer.ckpt")
    assert cli_main(["train-planner", "--config", str(ini), "--out", str(out),
                     "--steps", "5", "--log-every", "0"]) == 0
    assert (out / "external_embeddings.bin").exists()
    gen = workdir / "ext_gen.json"
    assert cli_main(["generate", "--model", str(out), "--prompt",
                     dataset.items[0].caption, "--length", "32",
                     "--output", str(gen)]) == 0
    assert len(json.loads(gen.read_text())["tokens"]) == 8
