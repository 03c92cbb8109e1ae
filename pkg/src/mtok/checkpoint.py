"""Versioned binary checkpoint container (magic MTOKCKPT1) and typed
save/load helpers for each model component."""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import NormalizationStats, SkeletonDescriptor
from .errors import CheckpointError

MAGIC = b"MTOKCKPT1"
FORMAT_VERSION = 1
COMPONENTS = ("tokenizer", "ddm", "ar", "evaluator", "text_encoder")


@dataclass
class Checkpoint:
    component: str
    config: dict
    tensors: dict[str, np.ndarray]
    optimizer: dict[str, np.ndarray] | None = None


def save_checkpoint(path: str | Path, component: str, config: dict,
                    tensors: dict[str, np.ndarray],
                    optimizer: dict[str, np.ndarray] | None = None) -> None:
    if component not in COMPONENTS:
        raise CheckpointError(f"unknown component tag {component!r}")
    names = sorted(tensors)
    opt_names = sorted(optimizer) if optimizer else []
    header = {
        "version": FORMAT_VERSION,
        "component": component,
        "config": config,
        "tensors": [{"name": n, "shape": list(tensors[n].shape)} for n in names],
        "optimizer_tensors": [{"name": n, "shape": list(optimizer[n].shape)}
                              for n in opt_names],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = bytearray()
    payload += struct.pack("<I", len(header_bytes))
    payload += header_bytes
    for n in names:
        payload += np.ascontiguousarray(tensors[n], dtype="<f4").tobytes()
    for n in opt_names:
        payload += np.ascontiguousarray(optimizer[n], dtype="<f4").tobytes()
    crc = zlib.crc32(bytes(payload)) & 0xFFFFFFFF
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(payload)
        f.write(struct.pack("<I", crc))


def load_checkpoint(path: str | Path, expect_component: str | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad checkpoint magic")
    body, crc_stored = raw[len(MAGIC) : -4], struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise CheckpointError(f"{path}: CRC mismatch, file corrupt or tampered")
    (header_len,) = struct.unpack("<I", body[:4])
    header = json.loads(body[4 : 4 + header_len].decode("utf-8"))
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported container version {header.get('version')}")
    component = header["component"]
    if expect_component is not None and component != expect_component:
        raise CheckpointError(
            f"{path}: component tag is {component!r}, expected {expect_component!r}")
    offset = 4 + header_len
    tensors: dict[str, np.ndarray] = {}
    for rec in header["tensors"]:
        count = int(np.prod(rec["shape"])) if rec["shape"] else 1
        arr = np.frombuffer(body, dtype="<f4", count=count, offset=offset)
        tensors[rec["name"]] = arr.reshape(rec["shape"]).copy()
        offset += count * 4
    optimizer: dict[str, np.ndarray] | None = None
    if header["optimizer_tensors"]:
        optimizer = {}
        for rec in header["optimizer_tensors"]:
            count = int(np.prod(rec["shape"])) if rec["shape"] else 1
            arr = np.frombuffer(body, dtype="<f4", count=count, offset=offset)
            optimizer[rec["name"]] = arr.reshape(rec["shape"]).copy()
            offset += count * 4
    return Checkpoint(component, header["config"], tensors, optimizer)


# -- typed helpers -----------------------------------------------------------


def save_tokenizer(path: str | Path, model, optimizer=None) -> None:
    from .tokenizer import MotionTokenizer  # noqa: F401 (type context)

    config = {
        "tokenizer": model.cfg.to_json(),
        "fps": model.fps,
        "skeleton": model.skeleton.to_json() if model.skeleton else None,
    }
    save_checkpoint(path, "tokenizer", config, model.full_state(),
                    optimizer.state_dict() if optimizer else None)


def load_tokenizer(path: str | Path):
    from .tokenizer import MotionTokenizer, TokenizerConfig

    ckpt = load_checkpoint(path, expect_component="tokenizer")
    model = MotionTokenizer(TokenizerConfig.from_json(ckpt.config["tokenizer"]))
    model.load_full_state(ckpt.tensors)
    model.fps = float(ckpt.config.get("fps", 20.0))
    if ckpt.config.get("skeleton"):
        model.skeleton = SkeletonDescriptor.from_json(ckpt.config["skeleton"])
    return model


def save_planner(path: str | Path, model, optimizer=None) -> None:
    config = {"planner": model.cfg.to_json()}
    save_checkpoint(path, model.cfg.mode, config, model.state_dict(),
                    optimizer.state_dict() if optimizer else None)


def load_planner(path: str | Path, expect_mode: str | None = None):
    from .planner import PlannerConfig, TokenPlanner

    ckpt = load_checkpoint(path, expect_component=expect_mode)
    if ckpt.component not in ("ddm", "ar"):
        raise CheckpointError(f"{path}: component {ckpt.component!r} is not a planner")
    model = TokenPlanner(PlannerConfig.from_json(ckpt.config["planner"]))
    model.load_state_dict(ckpt.tensors)
    return model


def save_embedder(path: str | Path, embedder, component: str = "evaluator") -> None:
    save_checkpoint(path, component, {"embedder": embedder.config_json()},
                    embedder.full_state())


def load_embedder(path: str | Path, component: str = "evaluator"):
    from .text import ContrastiveEmbedder

    ckpt = load_checkpoint(path, expect_component=component)
    embedder = ContrastiveEmbedder.from_config(ckpt.config["embedder"])
    embedder.load_full_state(ckpt.tensors)
    return embedder
