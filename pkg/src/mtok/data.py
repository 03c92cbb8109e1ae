"""Motion data model, synthetic corpus generation, dataset IO, normalization,
and control-spec sampling."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, LoadError, SchemaError

NATIVE_MAGIC = b"MTOK1"
STD_FLOOR = 1e-8


@dataclass(frozen=True)
class SkeletonDescriptor:
    joint_names: tuple[str, ...]
    position_slices: tuple[tuple[int, int], ...]  # per joint: [start, stop) into D
    foot_joint_indices: tuple[int, ...] = ()

    @property
    def joint_count(self) -> int:
        return len(self.joint_names)

    def validate(self, d: int) -> None:
        seen: set[int] = set()
        for start, stop in self.position_slices:
            if not (0 <= start < stop <= d):
                raise SchemaError(f"position slice [{start},{stop}) outside feature dim {d}")
            span = set(range(start, stop))
            if span & seen:
                raise SchemaError("position slices overlap")
            seen |= span

    def joint_positions(self, frames: np.ndarray) -> np.ndarray:
        """Extract (T, J, C) joint positions from (T, D) frames."""
        cols = [frames[:, start:stop] for start, stop in self.position_slices]
        return np.stack(cols, axis=1)

    def to_json(self) -> dict:
        return {
            "joint_names": list(self.joint_names),
            "position_slices": [list(s) for s in self.position_slices],
            "foot_joint_indices": list(self.foot_joint_indices),
        }

    @staticmethod
    def from_json(obj: dict) -> "SkeletonDescriptor":
        return SkeletonDescriptor(
            joint_names=tuple(obj["joint_names"]),
            position_slices=tuple(tuple(s) for s in obj["position_slices"]),
            foot_joint_indices=tuple(obj.get("foot_joint_indices", [])),
        )


@dataclass(frozen=True)
class MotionSequence:
    frames: np.ndarray  # (T, D) float32
    fps: float
    skeleton: SkeletonDescriptor

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise SchemaError(f"frames must be (T>=1, D), got {frames.shape}")
        if not np.isfinite(frames).all():
            raise SchemaError("frames contain non-finite values")
        object.__setattr__(self, "frames", frames)

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def joint_positions(self) -> np.ndarray:
        return self.skeleton.joint_positions(self.frames)


@dataclass(frozen=True)
class TokenSequence:
    indices: np.ndarray  # (N,) int64
    source_length: int

    def __post_init__(self):
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=np.int64))

    def __len__(self) -> int:
        return int(self.indices.shape[0])

    @property
    def compression_ratio(self) -> float:
        return self.source_length / max(1, len(self))


@dataclass(frozen=True)
class LocalCondition:
    targets: np.ndarray  # (T, J, 3) meters
    mask: np.ndarray  # (T, J) bool

    def __post_init__(self):
        targets = np.asarray(self.targets, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=bool)
        if targets.ndim != 3 or mask.shape != targets.shape[:2]:
            raise SchemaError("targets must be (T, J, C) with mask (T, J)")
        if mask.any() and not np.isfinite(targets[mask]).all():
            raise SchemaError("constrained targets must be finite")
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "mask", mask)


@dataclass(frozen=True)
class ConditionSet:
    global_embedding: np.ndarray | None = None
    local: LocalCondition | None = None


@dataclass(frozen=True)
class ControlSpec:
    regime: str  # pelvis | random_one | random_two | random_three | custom
    joints: tuple[int, ...]
    frames: tuple[int, ...]
    seed: int = 0


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray  # (D,)
    std: np.ndarray  # (D,) floored at STD_FLOOR

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @staticmethod
    def from_json(obj: dict) -> "NormalizationStats":
        return NormalizationStats(np.asarray(obj["mean"], dtype=np.float64),
                                  np.asarray(obj["std"], dtype=np.float64))


@dataclass(frozen=True)
class DatasetItem:
    motion: MotionSequence
    caption: str
    split: str  # train | val | test
    family: str | None = None


@dataclass
class Dataset:
    items: list[DatasetItem]
    normalization: NormalizationStats | None = None

    def split(self, name: str) -> list[DatasetItem]:
        return [it for it in self.items if it.split == name]

    @property
    def skeleton(self) -> SkeletonDescriptor:
        return self.items[0].motion.skeleton

    @property
    def dim(self) -> int:
        return self.items[0].motion.dim

    @property
    def fps(self) -> float:
        return self.items[0].motion.fps


# -- normalization -------------------------------------------------------------


def fit_normalization(items: list[DatasetItem]) -> NormalizationStats:
    """Per-dimension stats over all frames; std clamped at STD_FLOOR."""
    stacked = np.concatenate([it.motion.frames for it in items], axis=0).astype(np.float64)
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), STD_FLOOR)
    return NormalizationStats(mean, std)


def normalize(motion: MotionSequence, stats: NormalizationStats) -> MotionSequence:
    if motion.dim != stats.mean.shape[0]:
        raise SchemaError(f"stats dimension {stats.mean.shape[0]} != motion dimension {motion.dim}")
    frames = (motion.frames - stats.mean) / stats.std
    return MotionSequence(frames.astype(motion.frames.dtype), motion.fps, motion.skeleton)


def denormalize(motion: MotionSequence, stats: NormalizationStats) -> MotionSequence:
    if motion.dim != stats.mean.shape[0]:
        raise SchemaError(f"stats dimension {stats.mean.shape[0]} != motion dimension {motion.dim}")
    frames = motion.frames * stats.std + stats.mean
    return MotionSequence(frames.astype(motion.frames.dtype), motion.fps, motion.skeleton)


def pad_or_crop(frames: np.ndarray, target_t: int, rng: np.random.Generator | None = None):
    """Crop long sequences (random start when rng given) or right-pad short ones
    with the last frame. Returns (frames (target_t, D), valid (target_t,) bool)."""
    t = frames.shape[0]
    if t > target_t:
        start = int(rng.integers(0, t - target_t + 1)) if rng is not None else 0
        return frames[start : start + target_t], np.ones(target_t, dtype=bool)
    valid = np.zeros(target_t, dtype=bool)
    valid[:t] = True
    if t == target_t:
        return frames, valid
    pad = np.repeat(frames[-1:], target_t - t, axis=0)
    return np.concatenate([frames, pad], axis=0), valid


# -- synthetic corpus ---------------------------------------------------------

FAMILY_KEYWORDS = {
    "walk_line": "straight",
    "walk_circle": "circle",
    "walk_zigzag": "zigzag",
}

_FAMILY_PHRASES = {
    "walk_line": "in a straight line",
    "walk_circle": "in a circle",
    "walk_zigzag": "in a zigzag",
}

PELVIS_HEIGHT = 0.9
TORSO_RISE = 0.45
FOOT_SIDE = 0.12


def default_skeleton() -> SkeletonDescriptor:
    """4-joint planar-plus-height skeleton; D = 12 absolute positions."""
    return SkeletonDescriptor(
        joint_names=("pelvis", "torso", "left_foot", "right_foot"),
        position_slices=((0, 3), (3, 6), (6, 9), (9, 12)),
        foot_joint_indices=(2, 3),
    )


@dataclass(frozen=True)
class SyntheticSpec:
    n_items: int = 200
    t_range: tuple[int, int] = (48, 64)
    motion_families: tuple[str, ...] = ("walk_line", "walk_circle", "walk_zigzag")
    seed: int = 0
    fps: float = 20.0
    noise_scale: float = 0.0  # white-noise fraction of each dim's clean std
    skeleton: SkeletonDescriptor = field(default_factory=default_skeleton)


def _root_path(family: str, t: int, fps: float, rng: np.random.Generator):
    """Analytic root XY path; returns (xy (T,2), params dict)."""
    ts = np.arange(t, dtype=np.float64) / fps
    speed = rng.uniform(0.8, 1.6)
    heading = rng.uniform(0.0, 2.0 * np.pi)
    direction = np.array([np.cos(heading), np.sin(heading)])
    if family == "walk_line":
        xy = ts[:, None] * speed * direction[None, :]
        params = {"speed": speed, "heading": heading}
    elif family == "walk_circle":
        radius = rng.uniform(1.2, 2.5)
        turn = 1.0 if rng.random() < 0.5 else -1.0
        omega = turn * speed / radius
        # start at the origin, center perpendicular to the initial heading
        center = radius * np.array([-np.sin(heading), np.cos(heading)]) * turn
        phi0 = np.arctan2(-center[1], -center[0])
        ang = phi0 + omega * ts
        xy = center[None, :] + radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        params = {"speed": speed, "heading": heading, "radius": radius,
                  "center": center, "turn": turn}
    elif family == "walk_zigzag":
        period = rng.uniform(1.2, 2.0)  # seconds per leg
        amp = np.pi / 4.0
        leg = np.floor(ts / period).astype(int)
        sign = np.where(leg % 2 == 0, 1.0, -1.0)
        angles = heading + sign * amp
        step = speed / fps
        deltas = step * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        xy = np.concatenate([np.zeros((1, 2)), np.cumsum(deltas[:-1], axis=0)], axis=0)
        params = {"speed": speed, "heading": heading, "period": period}
    else:
        raise ConfigError(f"unknown motion family {family!r}")
    return xy, params


def _gait_feet(root_xy: np.ndarray, fps: float, speed: float, rng: np.random.Generator):
    """Planted-stance gait: each foot alternates a stationary stance and a
    swing that carries it to the next plant point along the root path."""
    t = root_xy.shape[0]
    step_time = max(0.25, 0.5 / max(speed, 0.2))  # seconds per half-cycle
    half = max(2, int(round(step_time * fps)))
    # lateral offsets perpendicular to local direction of travel
    d = np.gradient(root_xy, axis=0)
    norms = np.linalg.norm(d, axis=1, keepdims=True)
    norms[norms < 1e-9] = 1.0
    perp = np.stack([-d[:, 1], d[:, 0]], axis=1) / norms
    feet = np.zeros((t, 2, 3))
    for foot, side in enumerate((1.0, -1.0)):
        offset = side * FOOT_SIDE * perp
        plant = root_xy[0] + offset[0]
        phase0 = foot * half  # feet alternate
        i = 0
        while i < t:
            cycle_pos = (i + phase0) % (2 * half)
            if cycle_pos < half:  # stance: planted
                feet[i, foot, :2] = plant
                feet[i, foot, 2] = 0.0
                i += 1
            else:  # swing: move toward the plant point half a cycle ahead
                target_i = min(t - 1, i + (2 * half - cycle_pos))
                target = root_xy[target_i] + offset[target_i]
                frac = (cycle_pos - half + 1) / half
                feet[i, foot, :2] = plant + (target - plant) * frac
                feet[i, foot, 2] = 0.08 * np.sin(np.pi * min(frac, 1.0))
                if cycle_pos == 2 * half - 1:
                    plant = target
                i += 1
    return feet


_COMPASS = ("east", "north-east", "north", "north-west",
            "west", "south-west", "south", "south-east")


def _compass_word(heading: float) -> str:
    return _COMPASS[int(np.round(heading / (np.pi / 4))) % 8]


def _caption(family: str, params: dict, shaky: bool, rng: np.random.Generator) -> str:
    pace = "slowly " if params["speed"] < 1.05 else ("briskly " if params["speed"] > 1.35 else "")
    style = "shakily " if shaky else ""
    subject = rng.choice(["a person", "someone", "the figure"])
    if family == "walk_circle":
        where = " turning left" if params.get("turn", 1.0) > 0 else " turning right"
    else:
        where = f" heading {_compass_word(params['heading'])}"
    return f"{subject} {pace}walks {style}{_FAMILY_PHRASES[family]}{where}"


def generate_synthetic_dataset(spec: SyntheticSpec) -> Dataset:
    """Deterministic procedural corpus of kinematic-chain walking motions."""
    if spec.n_items < 1:
        raise ConfigError("n_items must be >= 1")
    if not spec.motion_families:
        raise ConfigError("motion_families must not be empty")
    for family in spec.motion_families:
        if family not in _FAMILY_PHRASES:
            raise ConfigError(f"unknown motion family {family!r}")
    rng = np.random.default_rng(spec.seed)
    skeleton = spec.skeleton
    clean: list[np.ndarray] = []
    captions: list[str] = []
    families: list[str] = []
    for i in range(spec.n_items):
        family = spec.motion_families[i % len(spec.motion_families)]
        t = int(rng.integers(spec.t_range[0], spec.t_range[1] + 1))
        xy, params = _root_path(family, t, spec.fps, rng)
        ts = np.arange(t) / spec.fps
        bob_phase = rng.uniform(0, 2 * np.pi)
        pelvis_z = PELVIS_HEIGHT + 0.02 * np.sin(2 * np.pi * 1.8 * ts + bob_phase)
        sway = 0.03 * np.sin(2 * np.pi * 0.9 * ts + bob_phase)
        frames = np.zeros((t, 12))
        frames[:, 0:2] = xy
        frames[:, 2] = pelvis_z
        frames[:, 3:5] = xy + sway[:, None] * np.array([1.0, -1.0])
        frames[:, 5] = pelvis_z + TORSO_RISE
        feet = _gait_feet(xy, spec.fps, params["speed"], rng)
        frames[:, 6:9] = feet[:, 0]
        frames[:, 9:12] = feet[:, 1]
        # half the items carry a high-frequency torso tremor; its presence is
        # caption-relevant (low-frequency semantics) but its phase is not
        # predictable from tokens; the root path stays exactly analytic
        shaky = bool(rng.random() < 0.5)
        if shaky:
            amp = rng.uniform(0.08, 0.14)
            freq = rng.uniform(5.5, 8.5)
            phase = rng.uniform(0, 2 * np.pi)
            tremor = amp * np.sin(2 * np.pi * freq * ts + phase)
            direction = rng.standard_normal(2)
            direction /= np.linalg.norm(direction)
            frames[:, 3:5] += tremor[:, None] * direction
        clean.append(frames)
        captions.append(_caption(family, params, shaky, rng))
        families.append(family)
    # noise is a fraction of each dimension's clean std so low-variance
    # channels (heights) are not drowned out; foot channels stay clean so
    # ground contacts keep zero-velocity stance phases
    if spec.noise_scale > 0:
        dim_std = np.concatenate(clean, axis=0).std(axis=0)
        dim_std = np.maximum(dim_std, 1e-6)
        noisy_dims = np.ones(dim_std.shape[0], dtype=bool)
        for j in skeleton.foot_joint_indices:
            start, stop = skeleton.position_slices[j]
            noisy_dims[start:stop] = False
        scale = np.where(noisy_dims, spec.noise_scale * dim_std, 0.0)
        noisy = [f + scale * rng.standard_normal(f.shape) for f in clean]
    else:
        noisy = clean
    items: list[DatasetItem] = []
    for i, frames in enumerate(noisy):
        if i % 10 == 8:
            split = "val"
        elif i % 10 == 9:
            split = "test"
        else:
            split = "train"
        items.append(DatasetItem(
            # float64 keeps the analytic-path guarantees; IO and training
            # downcast to f32 where they need to
            motion=MotionSequence(frames, spec.fps, skeleton),
            caption=captions[i],
            split=split,
            family=families[i],
        ))
    ds = Dataset(items)
    ds.normalization = fit_normalization(ds.split("train"))
    return ds


# -- control-spec sampling ------------------------------------------------------

_REGIME_COUNTS = {"random_one": 1, "random_two": 2, "random_three": 3}


def sample_control_spec(regime: str, skeleton: SkeletonDescriptor,
                        motion: MotionSequence, seed: int = 0,
                        joints: tuple[int, ...] | None = None,
                        frames: tuple[int, ...] | None = None):
    """Dense full-timeline control targets copied from the ground-truth motion.

    Returns (ControlSpec, LocalCondition); deterministic for a fixed seed.
    """
    j = skeleton.joint_count
    t = motion.length
    if regime == "pelvis":
        if "pelvis" not in skeleton.joint_names:
            raise ConfigError("skeleton has no pelvis joint")
        chosen = (skeleton.joint_names.index("pelvis"),)
    elif regime in _REGIME_COUNTS:
        k = _REGIME_COUNTS[regime]
        if k > j:
            raise ConfigError(f"{regime} needs {k} joints but skeleton has {j}")
        rng = np.random.default_rng(seed)
        chosen = tuple(sorted(int(x) for x in rng.choice(j, size=k, replace=False)))
    elif regime == "custom":
        if not joints:
            raise ConfigError("custom regime requires explicit joints")
        chosen = tuple(int(x) for x in joints)
    else:
        raise ConfigError(f"unknown control regime {regime!r}")
    frame_idx = tuple(range(t)) if frames is None else tuple(int(f) for f in frames)
    positions = motion.joint_positions()  # (T, J, C)
    c = positions.shape[2]
    targets = np.zeros((t, j, 3))
    mask = np.zeros((t, j), dtype=bool)
    for joint in chosen:
        for f in frame_idx:
            targets[f, joint, :c] = positions[f, joint]
            mask[f, joint] = True
    spec = ControlSpec(regime=regime, joints=chosen, frames=frame_idx, seed=seed)
    return spec, LocalCondition(targets=targets, mask=mask)


# -- native dataset format -------------------------------------------------------


def save_native(dataset: Dataset, path: str | Path) -> None:
    """Directory of MTOK1 binaries plus JSON sidecars, one pair per sequence."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for i, item in enumerate(dataset.items):
        stem = root / f"{i:06d}"
        frames = np.ascontiguousarray(item.motion.frames, dtype="<f4")
        t, d = frames.shape
        with open(stem.with_suffix(".mtk"), "wb") as f:
            f.write(NATIVE_MAGIC)
            f.write(struct.pack("<II", t, d))
            f.write(frames.tobytes())
        sidecar = {
            "fps": item.motion.fps,
            "caption": item.caption,
            "split": item.split,
            "family": item.family,
            "skeleton": item.motion.skeleton.to_json(),
        }
        stem.with_suffix(".json").write_text(json.dumps(sidecar, indent=1))


def _load_native_item(stem: Path) -> DatasetItem:
    bin_path = stem.with_suffix(".mtk")
    meta_path = stem.with_suffix(".json")
    if not meta_path.exists():
        raise LoadError(f"missing sidecar {meta_path}")
    raw = bin_path.read_bytes()
    if raw[: len(NATIVE_MAGIC)] != NATIVE_MAGIC:
        raise SchemaError(f"{bin_path}: bad magic")
    t, d = struct.unpack("<II", raw[len(NATIVE_MAGIC) : len(NATIVE_MAGIC) + 8])
    body = raw[len(NATIVE_MAGIC) + 8 :]
    if len(body) != t * d * 4:
        raise SchemaError(f"{bin_path}: payload is {len(body)} bytes, expected {t * d * 4}")
    frames = np.frombuffer(body, dtype="<f4").reshape(t, d)
    meta = json.loads(meta_path.read_text())
    skeleton = SkeletonDescriptor.from_json(meta["skeleton"])
    skeleton.validate(d)
    if not np.isfinite(frames).all():
        raise SchemaError(f"{bin_path}: non-finite values")
    motion = MotionSequence(frames.copy(), float(meta["fps"]), skeleton)
    return DatasetItem(motion, meta["caption"], meta["split"], meta.get("family"))


def _load_native(path: Path) -> Dataset:
    stems = sorted(p.with_suffix("") for p in path.glob("*.mtk"))
    if not stems:
        raise LoadError(f"no .mtk files under {path}")
    items = [_load_native_item(stem) for stem in stems]
    dims = {it.motion.dim for it in items}
    if len(dims) > 1:
        raise SchemaError(f"inconsistent feature dimensions across sequences: {sorted(dims)}")
    return Dataset(items)


# -- HumanML3D community layout ----------------------------------------------------

HUMANML3D_DIM = 263
_H3D_JOINTS = 22

def humanml3d_skeleton() -> SkeletonDescriptor:
    """Community 263-dim layout: local joint positions for joints 1..21 live at
    4 + 3*(j-1); the root ground position is not a plain slice, so the pelvis is
    excluded from position slices and spatial losses treat D as opaque."""
    names = tuple(f"joint_{j}" for j in range(1, _H3D_JOINTS))
    slices = tuple((4 + 3 * j, 4 + 3 * (j + 1)) for j in range(_H3D_JOINTS - 1))
    # community foot indices 7, 10 (left/right ankle) -> local list positions 6, 9
    return SkeletonDescriptor(names, slices, foot_joint_indices=(6, 9))


def _load_humanml3d(path: Path) -> Dataset:
    vec_dir = path / "new_joint_vecs"
    text_dir = path / "texts"
    if not vec_dir.is_dir():
        raise LoadError(f"missing {vec_dir}")
    items: list[DatasetItem] = []
    skeleton = humanml3d_skeleton()
    for split in ("train", "val", "test"):
        list_file = path / f"{split}.txt"
        if not list_file.exists():
            continue
        for name in list_file.read_text().split():
            npy = vec_dir / f"{name}.npy"
            if not npy.exists():
                raise LoadError(f"missing motion file {npy}")
            frames = np.load(npy).astype(np.float32)
            if frames.ndim != 2 or frames.shape[1] != HUMANML3D_DIM:
                raise SchemaError(f"{npy}: expected (T, {HUMANML3D_DIM}), got {frames.shape}")
            if not np.isfinite(frames).all():
                raise SchemaError(f"{npy}: non-finite values")
            caption = ""
            text_file = text_dir / f"{name}.txt"
            if text_file.exists():
                first = text_file.read_text().strip().splitlines()
                if first:
                    caption = first[0].split("#")[0].strip()
            items.append(DatasetItem(MotionSequence(frames, 20.0, skeleton), caption, split))
    if not items:
        raise LoadError(f"no split lists found under {path}")
    return Dataset(items)


def load_dataset(path: str | Path, format: str = "native") -> Dataset:
    """Parse a dataset directory and fit normalization on its train split."""
    root = Path(path)
    if not root.exists():
        raise LoadError(f"dataset path does not exist: {root}")
    if format == "native":
        ds = _load_native(root)
    elif format == "humanml3d":
        ds = _load_humanml3d(root)
    else:
        raise ConfigError(f"unknown dataset format {format!r}")
    train = ds.split("train") or ds.items
    ds.normalization = fit_normalization(train)
    return ds
