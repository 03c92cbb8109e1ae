"""Evaluation metrics: FID, Diversity, MModality, R-Precision, MM-Dist,
spatial control metrics, foot skating, and the desk-scale evaluator."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import Dataset, MotionSequence
from .errors import ConfigError, SchemaError
from .text import ContrastiveEmbedder, build_vocab

log = logging.getLogger(__name__)

DIVERSITY_ALL_PAIRS_LIMIT = 512
DIVERSITY_SUBSAMPLE_PAIRS = 300
DEFAULT_LOC_THRESHOLD = 0.5  # meters
DEFAULT_CONTACT_HEIGHT = 0.05  # meters
RPRECISION_POOL = 32


def _as_features(x: np.ndarray) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise SchemaError(f"feature sets must be (M, F), got {arr.shape}")
    return arr


def fid(real: np.ndarray, gen: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two feature sets.

    ||mu_r - mu_g||^2 + Tr(S_r + S_g - 2 (S_r S_g)^{1/2}); the matrix square
    root comes from an eigendecomposition of the symmetrized product with
    negative eigenvalues clipped at zero. A 1e-6 ridge stabilizes covariances
    whenever a set has no more samples than dimensions.
    """
    real = _as_features(real)
    gen = _as_features(gen)
    if real.shape[1] != gen.shape[1]:
        raise SchemaError("feature dimensions differ")
    if real.shape[0] < 2 or gen.shape[0] < 2:
        raise SchemaError("FID needs at least 2 samples per set")
    f = real.shape[1]
    mu_r, mu_g = real.mean(axis=0), gen.mean(axis=0)
    cov_r = np.atleast_2d(np.cov(real, rowvar=False))
    cov_g = np.atleast_2d(np.cov(gen, rowvar=False))
    if min(real.shape[0], gen.shape[0]) <= f:
        ridge = 1e-6 * np.eye(f)
        cov_r = cov_r + ridge
        cov_g = cov_g + ridge
    vals_r, vecs_r = np.linalg.eigh(cov_r)
    sqrt_r = (vecs_r * np.sqrt(np.clip(vals_r, 0.0, None))) @ vecs_r.T
    inner = sqrt_r @ cov_g @ sqrt_r
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    tr_sqrt = np.sqrt(np.clip(vals, 0.0, None)).sum()
    diff = float(((mu_r - mu_g) ** 2).sum())
    return diff + float(np.trace(cov_r) + np.trace(cov_g) - 2.0 * tr_sqrt)


def diversity(feats: np.ndarray, seed: int = 0) -> float:
    """Mean pairwise Euclidean distance; all pairs up to M=512, then a seeded
    300-pair subsample."""
    feats = _as_features(feats)
    m = feats.shape[0]
    if m < 2:
        raise SchemaError("diversity needs at least 2 samples")
    if m <= DIVERSITY_ALL_PAIRS_LIMIT:
        total = 0.0
        count = 0
        for i in range(m - 1):
            d = np.linalg.norm(feats[i + 1 :] - feats[i], axis=1)
            total += float(d.sum())
            count += d.size
        return total / count
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(DIVERSITY_SUBSAMPLE_PAIRS):
        i, j = rng.choice(m, size=2, replace=False)
        total += float(np.linalg.norm(feats[i] - feats[j]))
    return total / DIVERSITY_SUBSAMPLE_PAIRS


def multimodality(groups: list[np.ndarray], seed: int = 0) -> float:
    """Mean over condition groups of the within-group pairwise distance."""
    if not groups:
        raise SchemaError("multimodality needs at least one group")
    return float(np.mean([diversity(g, seed) for g in groups]))


def r_precision(text_feats: np.ndarray, motion_feats: np.ndarray, r: int = 3,
                pool_size: int = RPRECISION_POOL, seed: int = 0) -> float:
    """Fraction of pools' queries whose paired motion ranks in the top R by
    Euclidean distance; pools of ``pool_size`` drawn without replacement."""
    text_feats = _as_features(text_feats)
    motion_feats = _as_features(motion_feats)
    if text_feats.shape != motion_feats.shape:
        raise SchemaError("text and motion feature sets must be paired")
    m = text_feats.shape[0]
    pool_size = min(pool_size, m)
    if pool_size < r:
        raise ConfigError(f"retrieval pool {pool_size} smaller than R={r}")
    if pool_size == r:
        raise ConfigError(f"degenerate retrieval pool: pool_size == R == {r}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(m)
    hits = 0
    queries = 0
    for start in range(0, m - pool_size + 1, pool_size):
        pool = order[start : start + pool_size]
        t = text_feats[pool]
        v = motion_feats[pool]
        d = np.linalg.norm(t[:, None, :] - v[None, :, :], axis=2)
        ranks = (d < d[np.arange(pool_size), np.arange(pool_size)][:, None]).sum(axis=1)
        hits += int((ranks < r).sum())
        queries += pool_size
    if queries == 0:
        raise ConfigError("not enough samples for a single retrieval pool")
    return hits / queries


def mm_dist(text_feats: np.ndarray, motion_feats: np.ndarray) -> float:
    """Mean Euclidean distance between paired text and motion embeddings."""
    text_feats = _as_features(text_feats)
    motion_feats = _as_features(motion_feats)
    if text_feats.shape != motion_feats.shape:
        raise SchemaError("text and motion feature sets must be paired")
    return float(np.linalg.norm(text_feats - motion_feats, axis=1).mean())


@dataclass(frozen=True)
class SpatialSample:
    """Generated vs ground-truth 3D positions at one sample's keyframes."""

    gen: np.ndarray  # (K, 3)
    gt: np.ndarray  # (K, 3)

    def errors(self) -> np.ndarray:
        gen = np.asarray(self.gen, dtype=np.float64)
        gt = np.asarray(self.gt, dtype=np.float64)
        if gen.shape != gt.shape:
            raise SchemaError("keyframe sets misaligned between generated and ground truth")
        return np.linalg.norm(gen - gt, axis=1)


def spatial_metrics(samples: list[SpatialSample],
                    tau: float = DEFAULT_LOC_THRESHOLD) -> dict[str, float]:
    """AvgErr (mean keyframe error, m), LocErr (fraction of keyframes over tau),
    TrajErr (fraction of samples whose worst keyframe exceeds tau)."""
    if not samples:
        raise SchemaError("spatial metrics need at least one sample")
    if tau <= 0:
        raise ConfigError("tau must be positive")
    per_sample = [s.errors() for s in samples]
    flat = np.concatenate(per_sample)
    return {
        "avg_err": float(flat.mean()),
        "loc_err": float((flat > tau).mean()),
        "traj_err": float(np.mean([e.max() > tau for e in per_sample])),
    }


def keyframe_errors(motion: MotionSequence, gt: MotionSequence,
                    mask: np.ndarray) -> SpatialSample:
    """Collect constrained-(frame, joint) positions from two aligned motions."""
    pos_gen = motion.joint_positions()
    pos_gt = gt.joint_positions()
    rows, joints = np.nonzero(mask)
    return SpatialSample(gen=pos_gen[rows, joints], gt=pos_gt[rows, joints])


def foot_skating(motion: MotionSequence, eps_velocity: float | None = None,
                 contact_height: float = DEFAULT_CONTACT_HEIGHT) -> float:
    """Fraction of foot-contact frames with horizontal speed above threshold.

    Contact frames are those with foot height below ``contact_height``; the
    default velocity threshold is 2.5 cm/frame expressed at the motion's fps.
    Returns 0 (with a log flag) when the motion has no contact frames.
    """
    feet = motion.skeleton.foot_joint_indices
    if not feet:
        raise ConfigError("skeleton declares no foot joints")
    if eps_velocity is None:
        eps_velocity = 0.025 * motion.fps
    positions = motion.joint_positions()  # (T, J, C)
    sliding = 0
    contacts = 0
    for j in feet:
        p = positions[:, j, :]
        contact = p[:-1, 2] < contact_height
        speed = np.linalg.norm(p[1:, :2] - p[:-1, :2], axis=1) * motion.fps
        contacts += int(contact.sum())
        sliding += int((speed[contact] > eps_velocity).sum())
    if contacts == 0:
        log.warning("foot skating: no contact frames detected; returning 0")
        return 0.0
    return sliding / contacts


# -- evaluator ---------------------------------------------------------------


def train_eval_embedder(dataset: Dataset, dim: int = 32, steps: int = 500,
                        seed: int = 0, log_every: int = 0) -> ContrastiveEmbedder:
    """Contrastive joint embedding trained on the caption-motion pairs; frozen
    afterwards and versioned through its weight hash."""
    train = dataset.split("train")
    by_family: dict[str, int] = {}
    for it in train:
        by_family[it.family or "_"] = by_family.get(it.family or "_", 0) + 1
    if any(count < 10 for count in by_family.values()):
        raise ConfigError(f"dataset too small per family for evaluator training: {by_family}")
    vocab = build_vocab([it.caption for it in train])
    embedder = ContrastiveEmbedder(vocab, dataset.dim, dim=dim, seed=seed)
    embedder.train(dataset, steps=steps, seed=seed, log_every=log_every)
    return embedder


def family_centroids(embedder: ContrastiveEmbedder, dataset: Dataset) -> dict[str, np.ndarray]:
    """Mean motion embedding per family over the train split."""
    train = dataset.split("train")
    feats = embedder.embed_motions([it.motion for it in train])
    out: dict[str, np.ndarray] = {}
    for family in sorted({it.family for it in train if it.family}):
        rows = [i for i, it in enumerate(train) if it.family == family]
        out[family] = feats[rows].mean(axis=0)
    return out


class FamilyClassifier:
    """k-NN over train-split motion embeddings; families form heading-wise
    clusters in feature space, so local votes beat family centroids."""

    def __init__(self, embedder: ContrastiveEmbedder, dataset: Dataset,
                 k: int = 7, max_train: int = 1000):
        train = [it for it in dataset.split("train") if it.family][:max_train]
        self.k = k
        self.labels = [it.family for it in train]
        self.feats = embedder.embed_motions([it.motion for it in train])

    def classify(self, feats: np.ndarray) -> list[str]:
        out = []
        for row in np.asarray(feats, dtype=np.float64):
            d = np.linalg.norm(self.feats - row, axis=1)
            votes: dict[str, int] = {}
            for i in np.argsort(d)[: self.k]:
                votes[self.labels[i]] = votes.get(self.labels[i], 0) + 1
            out.append(max(votes, key=votes.get))
        return out


def classify_family(feats: np.ndarray, classifier: FamilyClassifier) -> list[str]:
    return classifier.classify(feats)


def repeat_with_ci(fn, repeats: int = 20) -> dict[str, float]:
    """Mean and normal-approximation 95% confidence interval over repeats."""
    values = np.array([fn(rep) for rep in range(repeats)], dtype=np.float64)
    half = 1.96 * values.std(ddof=1) / np.sqrt(repeats) if repeats > 1 else 0.0
    return {"mean": float(values.mean()), "ci95": float(half), "repeats": repeats}
