"""Global-condition text encoders and the contrastive text-motion embedder.

Two interchangeable encoders produce the sequence-level condition vector: a
trainable bag-of-embeddings encoder pretrained contrastively on caption-motion
pairs, and a file adapter for externally computed 512-dim embeddings keyed by
caption hash.
"""

from __future__ import annotations

import hashlib
import re
import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .data import Dataset, MotionSequence, NormalizationStats, normalize, pad_or_crop
from .errors import ConfigError, LoadError, SchemaError

_WORD = re.compile(r"[a-z]+")
EXTERNAL_DIM = 512
EXTERNAL_MAGIC = b"MTOKTXT1"


def tokenize_caption(caption: str) -> list[str]:
    return _WORD.findall(caption.lower())


def build_vocab(captions: list[str]) -> dict[str, int]:
    """Word -> id; id 0 is reserved for unknown words."""
    words = sorted({w for c in captions for w in tokenize_caption(c)})
    return {w: i + 1 for i, w in enumerate(words)}


def caption_hash(caption: str) -> bytes:
    return hashlib.sha256(caption.encode("utf-8")).digest()


def _l2_normalize(x: Tensor, eps: float = 1e-8) -> Tensor:
    sq = ad.reduce_sum(ad.mul(x, x), axis=-1, keepdims=True)
    return ad.mul(x, ad.power(ad.add(sq, eps), -0.5))


class VocabTextEncoder(nn.Module):
    """Mean-pooled word embeddings through a 2-layer head; deterministic."""

    def __init__(self, vocab: dict[str, int], dim: int, rng: np.random.Generator,
                 width: int = 64, dtype=np.float32):
        self.vocab = vocab
        self.dim = dim
        self.emb = nn.Embedding(len(vocab) + 1, width, rng, dtype)
        self.fc1 = nn.Linear(width, width, rng, dtype)
        self.fc2 = nn.Linear(width, dim, rng, dtype)

    def ids(self, caption: str) -> list[int]:
        return [self.vocab.get(w, 0) for w in tokenize_caption(caption)]

    def forward_batch(self, captions: list[str]) -> Tensor:
        """(B, dim) un-normalized embeddings through the autodiff graph."""
        max_len = max(1, max(len(self.ids(c)) for c in captions))
        idx = np.zeros((len(captions), max_len), dtype=np.int64)
        weight = np.zeros((len(captions), max_len, 1), dtype=np.float32)
        for row, caption in enumerate(captions):
            ids = self.ids(caption)
            idx[row, : len(ids)] = ids
            if ids:
                weight[row, : len(ids), 0] = 1.0 / len(ids)
        pooled = ad.reduce_sum(ad.mul(self.emb(idx), Tensor(weight)), axis=1)
        return self.fc2(ad.gelu(self.fc1(pooled)))

    def encode(self, prompt: str):
        """Returns (vector (dim,), present). Empty-after-tokenization prompts
        yield a zero vector flagged as a dropped condition."""
        if not tokenize_caption(prompt):
            return np.zeros(self.dim, dtype=np.float32), False
        vec = self.forward_batch([prompt]).data[0]
        return vec, True

    def vocab_json(self) -> dict:
        return {"vocab": self.vocab, "dim": self.dim,
                "width": self.emb.table.data.shape[1]}


class FileTextEncoder:
    """Adapter over externally computed embeddings: records of
    (32-byte sha256 caption hash, 512 little-endian f32)."""

    dim = EXTERNAL_DIM

    def __init__(self, path: str | Path):
        raw = Path(path).read_bytes()
        if raw[: len(EXTERNAL_MAGIC)] != EXTERNAL_MAGIC:
            raise SchemaError(f"{path}: bad external-embedding magic")
        body = raw[len(EXTERNAL_MAGIC) :]
        record = 32 + EXTERNAL_DIM * 4
        if len(body) % record:
            raise SchemaError(f"{path}: truncated record")
        self.table: dict[bytes, np.ndarray] = {}
        for off in range(0, len(body), record):
            digest = body[off : off + 32]
            vec = np.frombuffer(body, dtype="<f4", count=EXTERNAL_DIM, offset=off + 32)
            self.table[digest] = vec.copy()

    def encode(self, prompt: str):
        vec = self.table.get(caption_hash(prompt))
        if vec is None:
            return np.zeros(self.dim, dtype=np.float32), False
        return vec, True


def write_external_embeddings(path: str | Path, records: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(EXTERNAL_MAGIC)
        for caption, vec in records.items():
            arr = np.ascontiguousarray(vec, dtype="<f4")
            if arr.shape != (EXTERNAL_DIM,):
                raise ConfigError(f"external embeddings must be ({EXTERNAL_DIM},)")
            f.write(caption_hash(caption))
            f.write(arr.tobytes())


class MotionFeatureEncoder(nn.Module):
    """Strided conv stack + masked mean pooling into the joint embedding space.

    Inputs carry three views per frame: normalized features, their first
    differences (texture sensitivity), and two heading-invariant root-path
    channels (speed and turning rate) that make path curvature pool-friendly.
    """

    AUX_CHANNELS = 2

    def __init__(self, feature_dim: int, dim: int, rng: np.random.Generator,
                 width: int = 64, dtype=np.float32):
        self.feature_dim = feature_dim
        c_in = 2 * feature_dim + self.AUX_CHANNELS
        self.conv1 = nn.Conv1d(c_in, width, 5, rng, stride=2, padding=2, dtype=dtype)
        self.conv2 = nn.Conv1d(width, width, 5, rng, stride=2, padding=2, dtype=dtype)
        self.res = nn.ResConv(width, 3, rng, dtype)
        self.ln = nn.LayerNorm(width, dtype)
        self.fc = nn.Linear(width, dim, rng, dtype)

    def __call__(self, frames: np.ndarray, valid: np.ndarray,
                 aux: np.ndarray) -> Tensor:
        vel = np.zeros_like(frames)
        vel[:, 1:] = frames[:, 1:] - frames[:, :-1]
        x = np.concatenate([frames, vel, aux], axis=-1)
        h = ad.silu(self.conv1(Tensor(x)))
        h = ad.silu(self.conv2(h))
        h = self.res(h)
        # pool only over windows containing valid frames
        b, t4, _ = h.shape
        v = valid[:, : t4 * 4 : 4].astype(np.float32)
        w = v / np.maximum(v.sum(axis=1, keepdims=True), 1.0)
        pooled = ad.reduce_sum(ad.mul(h, Tensor(w[..., None])), axis=1)
        return self.fc(self.ln(pooled))


def root_path_channels(frames_meters: np.ndarray, root_slice: tuple[int, int]) -> np.ndarray:
    """(T, 2) speed and turning-rate of the root's horizontal path, O(1)-scaled."""
    t = frames_meters.shape[0]
    out = np.zeros((t, 2), dtype=np.float32)
    xy = frames_meters[:, root_slice[0] : root_slice[0] + 2]
    v = np.diff(xy, axis=0)
    speed = np.linalg.norm(v, axis=1)
    out[1:, 0] = speed * 15.0
    angles = np.arctan2(v[:, 1], v[:, 0])
    turn = np.zeros(t - 1)
    dv = np.diff(angles)
    turn[1:] = (dv + np.pi) % (2 * np.pi) - np.pi
    moving = speed > 1e-4
    turn[1:] *= moving[1:] & moving[:-1]
    out[1:, 1] = np.clip(turn * 5.0, -3.0, 3.0)
    return out


@dataclass
class EmbedderReport:
    steps: int
    final_loss: float
    seconds: float


class ContrastiveEmbedder:
    """Joint caption-motion embedding trained with a symmetric InfoNCE loss."""

    def __init__(self, vocab: dict[str, int], feature_dim: int, dim: int = 32,
                 seed: int = 0, temperature: float = 0.07, max_len: int = 64):
        rng = np.random.default_rng(seed)
        self.dim = dim
        self.temperature = temperature
        self.max_len = max_len
        self.text = VocabTextEncoder(vocab, dim, rng)
        self.motion = MotionFeatureEncoder(feature_dim, dim, rng)
        self.stats: NormalizationStats | None = None

    def named_params(self):
        return {**self.text.named_params("text."), **self.motion.named_params("motion.")}

    def _motion_batch(self, motions: list[MotionSequence]):
        b = len(motions)
        frames = np.zeros((b, self.max_len, motions[0].dim), dtype=np.float32)
        valid = np.zeros((b, self.max_len), dtype=bool)
        aux = np.zeros((b, self.max_len, MotionFeatureEncoder.AUX_CHANNELS),
                       dtype=np.float32)
        for i, m in enumerate(motions):
            x = normalize(m, self.stats).frames
            frames[i], valid[i] = pad_or_crop(x, self.max_len)
            raw, _ = pad_or_crop(m.frames, self.max_len)
            aux[i] = root_path_channels(raw, m.skeleton.position_slices[0])
        return frames, valid, aux

    def train(self, dataset: Dataset, steps: int = 400, batch_size: int = 32,
              lr: float = 1e-3, seed: int = 0, log_every: int = 0) -> EmbedderReport:
        rng = np.random.default_rng(seed)
        if self.stats is None:
            self.stats = dataset.normalization
        items = dataset.split("train")
        if len(items) < 10:
            raise ConfigError("contrastive training needs at least 10 paired items")
        # duplicate captions inside a batch are false negatives for InfoNCE:
        # sample one item per caption bucket
        buckets: dict[str, list[int]] = {}
        for i, it in enumerate(items):
            buckets.setdefault(it.caption, []).append(i)
        bucket_keys = sorted(buckets)
        opt = nn.AdamW(self.named_params(), lr=lr)
        start = time.time()
        loss_value = float("nan")
        self.text.set_training(True)
        self.motion.set_training(True)
        for step in range(steps):
            keys = rng.choice(len(bucket_keys),
                              size=min(batch_size, len(bucket_keys)), replace=False)
            idx = [rng.choice(buckets[bucket_keys[int(k)]]) for k in keys]
            batch = [items[int(i)] for i in idx]
            u = _l2_normalize(self.text.forward_batch([it.caption for it in batch]))
            frames, valid, aux = self._motion_batch([it.motion for it in batch])
            v = _l2_normalize(self.motion(frames, valid, aux))
            logits = ad.mul(ad.matmul(u, ad.swapaxes(v, 0, 1)), 1.0 / self.temperature)
            labels = np.arange(len(batch))
            loss = ad.mul(ad.add(ad.cross_entropy(logits, labels),
                                 ad.cross_entropy(ad.swapaxes(logits, 0, 1), labels)), 0.5)
            opt.zero_grad()
            loss.backward()
            opt.step()
            loss_value = float(loss.data)
            if log_every and (step + 1) % log_every == 0:
                print(f"  contrastive step {step + 1}/{steps} loss={loss_value:.4f}", flush=True)
        self.text.set_training(False)
        self.motion.set_training(False)
        return EmbedderReport(steps, loss_value, time.time() - start)

    def embed_text(self, captions: list[str]) -> np.ndarray:
        out = _l2_normalize(self.text.forward_batch(captions))
        return out.data.copy()

    def embed_motions(self, motions: list[MotionSequence], chunk: int = 64) -> np.ndarray:
        rows = []
        for start in range(0, len(motions), chunk):
            frames, valid, aux = self._motion_batch(motions[start : start + chunk])
            rows.append(_l2_normalize(self.motion(frames, valid, aux)).data)
        return np.concatenate(rows, axis=0)

    def version(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.named_params()):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(self.named_params()[name].data, dtype="<f4").tobytes())
        return digest.hexdigest()[:12]

    # -- persistence --------------------------------------------------------

    def full_state(self) -> dict[str, np.ndarray]:
        state = {k: v.data for k, v in self.named_params().items()}
        if self.stats is not None:
            state["stats.mean"] = self.stats.mean
            state["stats.std"] = self.stats.std
        return state

    def load_full_state(self, state: dict[str, np.ndarray]) -> None:
        if "stats.mean" in state:
            self.stats = NormalizationStats(np.asarray(state["stats.mean"], dtype=np.float64),
                                            np.asarray(state["stats.std"], dtype=np.float64))
        params = self.named_params()
        for name, tensor in params.items():
            tensor.data = np.asarray(state[name], dtype=tensor.data.dtype).copy()

    def config_json(self) -> dict:
        return {"vocab": self.text.vocab, "dim": self.dim,
                "feature_dim": self.motion.feature_dim,
                "max_len": self.max_len, "temperature": self.temperature}

    @staticmethod
    def from_config(cfg: dict) -> "ContrastiveEmbedder":
        return ContrastiveEmbedder(cfg["vocab"], cfg["feature_dim"], cfg["dim"],
                                   max_len=cfg.get("max_len", 64),
                                   temperature=cfg.get("temperature", 0.07))
