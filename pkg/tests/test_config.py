import pytest

from mtok.config import (default_config, load_config, load_or_generate_dataset,
                         make_planner_config, make_tokenizer_config)
from mtok.errors import ConfigError


def test_presets():
    toy = default_config("toy")
    assert toy.getint("tokenizer", "codebook_size") == 256
    paper = default_config("paper")
    assert paper.getint("tokenizer", "codebook_size") == 1024
    assert paper.getint("tokenizer", "latent_dim") == 768
    assert paper.getint("planner", "d_model") == 384
    assert paper.getint("planner", "n_layers") == 6
    with pytest.raises(ConfigError):
        default_config("huge")


def test_load_overlays_defaults(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[tokenizer]\ndownrate = 8\n\n[training]\nseed = 42\n")
    cfg = load_config(path)
    assert cfg.getint("tokenizer", "downrate") == 8
    assert cfg.getint("training", "seed") == 42
    assert cfg.getint("tokenizer", "codebook_size") == 256  # preserved default
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")


def test_hash_stable_and_sensitive(tmp_path):
    a = default_config("toy")
    b = default_config("toy")
    assert a.config_hash() == b.config_hash()
    b.set("training", "seed", 99)
    assert a.config_hash() != b.config_hash()


def test_snapshot_written(tmp_path):
    cfg = default_config("toy")
    path = cfg.write_snapshot(tmp_path / "run")
    assert path.exists()
    reloaded = load_config(path)
    assert reloaded.config_hash() == cfg.config_hash()


def test_typed_getters_errors():
    cfg = default_config("toy")
    cfg.set("training", "seed", "not-a-number")
    with pytest.raises(ConfigError):
        cfg.getint("training", "seed")
    with pytest.raises(ConfigError):
        cfg.get("nope", "nothing")
    cfg.set("x", "flag", "yes")
    assert cfg.getbool("x", "flag", False) is True
    cfg.set("x", "flag", "asdf")
    with pytest.raises(ConfigError):
        cfg.getbool("x", "flag", False)


def test_dataset_and_model_builders():
    cfg = default_config("toy")
    cfg.set("data", "n_items", 30)
    ds = load_or_generate_dataset(cfg)
    assert len(ds.items) == 30
    tok_cfg = make_tokenizer_config(cfg, ds.dim)
    assert tok_cfg.feature_dim == 12
    assert tok_cfg.codebook_size == 256
    pcfg = make_planner_config(cfg, "ddm", tok_cfg.codebook_size, tok_cfg.downrate,
                               max_tokens=16, joint_count=4, text_dim=128)
    assert pcfg.guidance_scale == 2.6  # downrate-4 default from the sweep optima
    cfg.set("planner", "guidance_scale", "3.0")
    pcfg2 = make_planner_config(cfg, "ddm", 256, 4, 16, 4, 128)
    assert pcfg2.guidance_scale == 3.0
