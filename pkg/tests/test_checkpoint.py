import numpy as np
import pytest

from mtok import checkpoint as ckpt
from mtok.errors import CheckpointError


def sample_tensors():
    rng = np.random.default_rng(0)
    return {"layer.w": rng.standard_normal((4, 3)).astype(np.float32),
            "layer.b": rng.standard_normal(3).astype(np.float32)}


def test_roundtrip_and_byte_identical_resave(tmp_path):
    path = tmp_path / "model.ckpt"
    tensors = sample_tensors()
    opt = {"m.layer.w": np.zeros((4, 3), dtype=np.float32),
           "__step__": np.array([7.0], dtype=np.float32)}
    ckpt.save_checkpoint(path, "tokenizer", {"a": 1, "nested": {"b": "x"}}, tensors, opt)
    loaded = ckpt.load_checkpoint(path)
    assert loaded.component == "tokenizer"
    assert loaded.config == {"a": 1, "nested": {"b": "x"}}
    for name, arr in tensors.items():
        assert np.array_equal(loaded.tensors[name], arr)
    assert np.array_equal(loaded.optimizer["__step__"], opt["__step__"])
    path2 = tmp_path / "resaved.ckpt"
    ckpt.save_checkpoint(path2, loaded.component, loaded.config, loaded.tensors,
                         loaded.optimizer)
    assert path.read_bytes() == path2.read_bytes()


def test_crc_detects_tamper(tmp_path):
    path = tmp_path / "model.ckpt"
    ckpt.save_checkpoint(path, "tokenizer", {}, sample_tensors())
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0x01
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="CRC"):
        ckpt.load_checkpoint(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "model.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 32)
    with pytest.raises(CheckpointError, match="magic"):
        ckpt.load_checkpoint(path)


def test_component_tag_mismatch(tmp_path):
    path = tmp_path / "p.ckpt"
    ckpt.save_checkpoint(path, "ddm", {}, sample_tensors())
    with pytest.raises(CheckpointError, match="component"):
        ckpt.load_checkpoint(path, expect_component="tokenizer")
    with pytest.raises(CheckpointError):
        ckpt.save_checkpoint(tmp_path / "bad.ckpt", "mystery", {}, sample_tensors())


def test_tokenizer_roundtrip_preserves_behavior(tmp_path, tiny_tokenizer, small_dataset):
    from mtok.data import normalize

    path = tmp_path / "tok.ckpt"
    ckpt.save_tokenizer(path, tiny_tokenizer)
    loaded = ckpt.load_tokenizer(path)
    motion = normalize(small_dataset.items[0].motion, small_dataset.normalization)
    a = tiny_tokenizer.tokenize(motion)
    b = loaded.tokenize(motion)
    assert np.array_equal(a.indices, b.indices)
    assert loaded.skeleton.joint_names == tiny_tokenizer.skeleton.joint_names
    ra = tiny_tokenizer.reconstruct(motion, np.random.default_rng(0))
    rb = loaded.reconstruct(motion, np.random.default_rng(0))
    assert np.allclose(ra.frames, rb.frames, atol=1e-6)


def test_planner_roundtrip(tmp_path, tiny_ddm):
    from mtok.planner import ConditionEmbeddings

    path = tmp_path / "p.ckpt"
    ckpt.save_planner(path, tiny_ddm)
    loaded = ckpt.load_planner(path, expect_mode="ddm")
    tokens = np.arange(8, dtype=np.int64).reshape(1, 8)
    cond = ConditionEmbeddings(m_g=None, m_s=None, present_g=False, present_s=False)
    assert np.allclose(loaded.logits(tokens, cond), tiny_ddm.logits(tokens, cond),
                       atol=1e-6)
    with pytest.raises(CheckpointError):
        ckpt.load_planner(path, expect_mode="ar")
    with pytest.raises(CheckpointError):
        ckpt.load_tokenizer(path)


def test_embedder_roundtrip(tmp_path, tiny_text_encoder, small_dataset):
    path = tmp_path / "emb.ckpt"
    ckpt.save_embedder(path, tiny_text_encoder, "text_encoder")
    loaded = ckpt.load_embedder(path, "text_encoder")
    captions = [it.caption for it in small_dataset.items[:5]]
    assert np.allclose(loaded.embed_text(captions),
                       tiny_text_encoder.embed_text(captions), atol=1e-6)
    motions = [it.motion for it in small_dataset.items[:5]]
    assert np.allclose(loaded.embed_motions(motions),
                       tiny_text_encoder.embed_motions(motions), atol=1e-6)
    assert loaded.version() == tiny_text_encoder.version()


def test_optimizer_state_resume(small_dataset):
    from mtok import nn
    from mtok.tokenizer import MotionTokenizer, TokenizerConfig, TokenizerTrainer

    cfg = TokenizerConfig(feature_dim=12, latent_dim=16, codebook_size=32,
                          downrate=4, width=24, denoiser_blocks=2)
    model = MotionTokenizer(cfg, seed=0)
    trainer = TokenizerTrainer(model, small_dataset, seed=0, batch_size=4)
    trainer.run(3)
    state = trainer.opt.state_dict()
    opt2 = nn.AdamW(model.named_params(), lr=trainer.opt.lr)
    opt2.load_state_dict(state)
    assert opt2.step_count == trainer.opt.step_count
    for key in trainer.opt.m:
        assert np.array_equal(opt2.m[key], trainer.opt.m[key])
