"""Run configuration: flat key-value INI with sections, presets, and hashing.

Every training or experiment run writes an immutable resolved snapshot of its
configuration next to its checkpoints.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

TOY_PRESET = {
    "data": {
        "source": "synthetic",
        "path": "",
        "n_items": "2000",
        "t_min": "48",
        "t_max": "64",
        "families": "walk_line,walk_circle,walk_zigzag",
        "noise_scale": "0.05",
        "fps": "20",
        "seed": "0",
    },
    "tokenizer": {
        "latent_dim": "128",
        "codebook_size": "256",
        "downrate": "4",
        "decoder_variant": "diffusion_conv",
        "kernel_size": "5",
        "width": "96",
        "denoiser_blocks": "3",
        "diffusion_steps": "1000",
        "commit_weight": "0.02",
        "max_len": "64",
    },
    "planner": {
        "mode": "ddm",
        "d_model": "128",
        "n_layers": "4",
        "n_heads": "4",
        "ff_mult": "4",
        "guidance_scale": "",
        "inference_steps": "10",
        "cond_dropout": "0.1",
        "temperature": "1.0",
        "external_embeddings": "",
    },
    "control": {
        "eta": "auto",
        "inner_steps": "1",
        "ramp": "0",
    },
    "training": {
        "tokenizer_steps": "1400",
        "planner_steps": "2200",
        "embedder_steps": "700",
        "batch_size": "16",
        "planner_batch_size": "32",
        "lr": "2e-4",
        "lr_final": "2e-5",
        "decay_fraction": "0.8333",
        "seed": "0",
    },
    "eval": {
        "embed_dim": "32",
        "repeats": "20",
        "loc_threshold": "0.5",
        "n_generate": "64",
    },
    "service": {
        "host": "127.0.0.1",
        "port": "8321",
    },
}

# Paper-scale hyperparameters (Appendix recipes); not runnable at desk scale.
PAPER_PRESET = {
    **{k: dict(v) for k, v in TOY_PRESET.items()},
    "data": {**TOY_PRESET["data"], "source": "humanml3d", "n_items": "0",
             "t_min": "40", "t_max": "196"},
    "tokenizer": {**TOY_PRESET["tokenizer"], "latent_dim": "768",
                  "codebook_size": "1024", "width": "512", "max_len": "224"},
    "planner": {**TOY_PRESET["planner"], "d_model": "384", "n_layers": "6",
                "n_heads": "6", "ar_d_model": "768", "ar_n_layers": "9",
                "ar_n_heads": "12"},
    "training": {**TOY_PRESET["training"], "tokenizer_steps": "48000",
                 "planner_steps": "48000", "batch_size": "512",
                 "planner_batch_size": "64"},
}

PRESETS = {"toy": TOY_PRESET, "paper": PAPER_PRESET}


@dataclass
class RunConfig:
    sections: dict[str, dict[str, str]]

    def get(self, section: str, key: str, fallback: str | None = None) -> str:
        try:
            return self.sections[section][key]
        except KeyError:
            if fallback is not None:
                return fallback
            raise ConfigError(f"missing config key [{section}] {key}")

    def getint(self, section: str, key: str, fallback: int | None = None) -> int:
        raw = self.get(section, key, None if fallback is None else str(fallback))
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be an integer, got {raw!r}")

    def getfloat(self, section: str, key: str, fallback: float | None = None) -> float:
        raw = self.get(section, key, None if fallback is None else str(fallback))
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be a number, got {raw!r}")

    def getbool(self, section: str, key: str, fallback: bool) -> bool:
        raw = self.get(section, key, str(fallback)).strip().lower()
        if raw in ("1", "true", "yes", "on"):
            return True
        if raw in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{section}] {key} must be a boolean, got {raw!r}")

    def set(self, section: str, key: str, value) -> None:
        self.sections.setdefault(section, {})[key] = str(value)

    def to_text(self) -> str:
        parser = configparser.ConfigParser()
        for name in sorted(self.sections):
            parser[name] = dict(sorted(self.sections[name].items()))
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def write_snapshot(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "resolved-config.ini"
        path.write_text(self.to_text())
        return path


def default_config(preset: str = "toy") -> RunConfig:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    return RunConfig({k: dict(v) for k, v in PRESETS[preset].items()})


def load_config(path: str | Path, preset: str = "toy") -> RunConfig:
    """Preset defaults overlaid with the file's sections."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found or unreadable: {path}")
    cfg = default_config(preset)
    for section in parser.sections():
        for key, value in parser[section].items():
            cfg.set(section, key, value)
    return cfg


def make_synthetic_spec(cfg: RunConfig):
    from .data import SyntheticSpec

    return SyntheticSpec(
        n_items=cfg.getint("data", "n_items"),
        t_range=(cfg.getint("data", "t_min"), cfg.getint("data", "t_max")),
        motion_families=tuple(f.strip() for f in cfg.get("data", "families").split(",") if f.strip()),
        seed=cfg.getint("data", "seed"),
        fps=cfg.getfloat("data", "fps"),
        noise_scale=cfg.getfloat("data", "noise_scale"),
    )


def load_or_generate_dataset(cfg: RunConfig):
    from .data import generate_synthetic_dataset, load_dataset

    source = cfg.get("data", "source")
    if source == "synthetic":
        return generate_synthetic_dataset(make_synthetic_spec(cfg))
    if source in ("native", "humanml3d"):
        return load_dataset(cfg.get("data", "path"), format=source)
    raise ConfigError(f"unknown data source {source!r}")


def make_tokenizer_config(cfg: RunConfig, feature_dim: int):
    from .tokenizer import TokenizerConfig

    return TokenizerConfig(
        feature_dim=feature_dim,
        latent_dim=cfg.getint("tokenizer", "latent_dim"),
        codebook_size=cfg.getint("tokenizer", "codebook_size"),
        downrate=cfg.getint("tokenizer", "downrate"),
        decoder_variant=cfg.get("tokenizer", "decoder_variant"),
        kernel_size=cfg.getint("tokenizer", "kernel_size"),
        diffusion_steps=cfg.getint("tokenizer", "diffusion_steps"),
        commit_weight=cfg.getfloat("tokenizer", "commit_weight"),
        width=cfg.getint("tokenizer", "width"),
        denoiser_blocks=cfg.getint("tokenizer", "denoiser_blocks", 3),
        max_len=cfg.getint("tokenizer", "max_len"),
    )


def make_planner_config(cfg: RunConfig, mode: str, codebook_size: int, downrate: int,
                        max_tokens: int, joint_count: int, text_dim: int):
    from .planner import PlannerConfig

    guidance = cfg.get("planner", "guidance_scale", "")
    # the AR backbone may carry its own capacity (paper scale: dim 768, 9 layers)
    prefix = "ar_" if mode == "ar" else ""

    def dim_key(key: str) -> int:
        if prefix and cfg.get("planner", prefix + key, "").strip():
            return cfg.getint("planner", prefix + key)
        return cfg.getint("planner", key)

    return PlannerConfig(
        mode=mode,
        codebook_size=codebook_size,
        downrate=downrate,
        max_tokens=max_tokens,
        joint_count=joint_count,
        text_dim=text_dim,
        d_model=dim_key("d_model"),
        n_layers=dim_key("n_layers"),
        n_heads=dim_key("n_heads"),
        ff_mult=cfg.getint("planner", "ff_mult", 4),
        cond_dropout=cfg.getfloat("planner", "cond_dropout"),
        inference_steps=cfg.getint("planner", "inference_steps"),
        guidance_scale=float(guidance) if guidance.strip() else None,
    )
