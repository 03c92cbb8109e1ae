import numpy as np
import pytest

from mtok.data import SyntheticSpec, generate_synthetic_dataset
from mtok.planner import PlannerConfig, PlannerTrainer, TokenPlanner
from mtok.text import ContrastiveEmbedder, build_vocab
from mtok.tokenizer import MotionTokenizer, TokenizerConfig, TokenizerTrainer


@pytest.fixture(scope="session")
def small_dataset():
    return generate_synthetic_dataset(SyntheticSpec(n_items=120, seed=7, noise_scale=0.02))


@pytest.fixture(scope="session")
def tiny_tokenizer(small_dataset):
    """A briefly-trained tokenizer for wiring-level tests (not quality gates)."""
    cfg = TokenizerConfig(feature_dim=12, latent_dim=32, codebook_size=64, downrate=4,
                          decoder_variant="diffusion_conv", kernel_size=5,
                          width=48, denoiser_blocks=2)
    model = MotionTokenizer(cfg, seed=0)
    TokenizerTrainer(model, small_dataset, seed=0, batch_size=8).run(40)
    return model


@pytest.fixture(scope="session")
def tiny_text_encoder(small_dataset):
    vocab = build_vocab([it.caption for it in small_dataset.split("train")])
    embedder = ContrastiveEmbedder(vocab, 12, dim=64, seed=0)
    embedder.train(small_dataset, steps=60, batch_size=16)
    return embedder


@pytest.fixture(scope="session")
def tiny_ddm(small_dataset, tiny_tokenizer, tiny_text_encoder):
    cfg = PlannerConfig(mode="ddm", codebook_size=64, downrate=4, max_tokens=16,
                        joint_count=4, text_dim=64, d_model=64, n_layers=2, n_heads=4)
    model = TokenPlanner(cfg, seed=1)
    PlannerTrainer(model, tiny_tokenizer, tiny_text_encoder.text, small_dataset,
                   seed=0, batch_size=8).run(30)
    return model


@pytest.fixture(scope="session")
def tiny_ar(small_dataset, tiny_tokenizer, tiny_text_encoder):
    cfg = PlannerConfig(mode="ar", codebook_size=64, downrate=4, max_tokens=16,
                        joint_count=4, text_dim=64, d_model=64, n_layers=2, n_heads=4)
    model = TokenPlanner(cfg, seed=2)
    PlannerTrainer(model, tiny_tokenizer, tiny_text_encoder.text, small_dataset,
                   seed=0, batch_size=8).run(20)
    return model


@pytest.fixture(scope="session")
def tiny_bundle(tmp_path_factory, small_dataset, tiny_tokenizer, tiny_text_encoder,
                tiny_ddm, tiny_ar):
    """A saved+reloaded model directory exercising the checkpoint path."""
    from mtok import checkpoint as ckpt
    from mtok.pipeline import ModelBundle

    out = tmp_path_factory.mktemp("bundle")
    ckpt.save_tokenizer(out / "tokenizer.ckpt", tiny_tokenizer)
    ckpt.save_planner(out / "planner_ddm.ckpt", tiny_ddm)
    ckpt.save_planner(out / "planner_ar.ckpt", tiny_ar)
    ckpt.save_embedder(out / "text_encoder.ckpt", tiny_text_encoder, "text_encoder")
    bundle = ModelBundle.load(out)
    bundle.model_dir = out
    return bundle


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(float(np.abs(a).max()), float(np.abs(b).max()), 1e-12)
    return float(np.abs(a - b).max()) / denom
