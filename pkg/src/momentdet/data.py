"""Feature/annotation ingestion, training windows, synthetic datasets.

Feature files are ".afmt" binaries (magic "AFMT", u32 version, u32 T,
u32 D, f32 little-endian row-major) with a shared "manifest.json" sidecar
carrying fps / feature_stride metadata per video.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

AFMT_MAGIC = b"AFMT"
AFMT_VERSION = 1


class FeatureFileError(ValueError):
    pass


@dataclass
class FeatureSequence:
    video_id: str
    features: np.ndarray  # [T, D_in] float32
    fps: float
    feature_stride: float  # frames per feature step
    clip_window: float = 0.0  # frames per feature, metadata only

    @property
    def num_steps(self) -> int:
        return self.features.shape[0]

    def seconds(self, grid: float) -> float:
        return grid * self.feature_stride / self.fps

    def grid(self, seconds: float) -> float:
        return seconds * self.fps / self.feature_stride


@dataclass
class VideoAnnotation:
    video_id: str
    duration_sec: float
    actions: list  # (start_sec, end_sec, label)

    def validate(self, num_classes: int | None = None):
        for s, e, label in self.actions:
            if not (0 <= s < e <= self.duration_sec + 1e-6):
                raise ValueError(
                    f"{self.video_id}: segment [{s}, {e}] outside [0, {self.duration_sec}]"
                )
            if num_classes is not None and not (0 <= label < num_classes):
                raise ValueError(f"{self.video_id}: label {label} out of range")


@dataclass
class TrainingWindow:
    features: np.ndarray  # [T_max, D_in], zero padded
    mask: np.ndarray  # bool [T_max]
    actions: list  # (start, end, label) in window-local grid units


# ---- binary feature io -------------------------------------------------------


def save_features(path, features: np.ndarray):
    features = np.ascontiguousarray(features, dtype="<f4")
    if features.ndim != 2 or features.shape[0] < 1:
        raise FeatureFileError("features must be a non-empty [T, D] array")
    with open(path, "wb") as fh:
        fh.write(AFMT_MAGIC)
        fh.write(struct.pack("<III", AFMT_VERSION, *features.shape))
        fh.write(features.tobytes())


def load_features_array(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != AFMT_MAGIC:
        raise FeatureFileError(f"{path}: bad magic {data[:4]!r}")
    version, t_len, dim = struct.unpack_from("<III", data, 4)
    if version != AFMT_VERSION:
        raise FeatureFileError(f"{path}: unsupported version {version}")
    if t_len < 1:
        raise FeatureFileError(f"{path}: empty sequence")
    expected = 16 + 4 * t_len * dim
    if len(data) != expected:
        raise FeatureFileError(f"{path}: truncated payload ({len(data)} != {expected})")
    arr = np.frombuffer(data[16:], dtype="<f4").reshape(t_len, dim).copy()
    if not np.isfinite(arr).all():
        raise FeatureFileError(f"{path}: non-finite values")
    return arr


def load_features(path, manifest: dict) -> FeatureSequence:
    """Load one .afmt file; manifest carries per-video fps/stride metadata."""
    path = Path(path)
    video_id = path.stem
    meta = manifest[video_id]
    return FeatureSequence(
        video_id=video_id,
        features=load_features_array(path),
        fps=float(meta["fps"]),
        feature_stride=float(meta["feature_stride"]),
        clip_window=float(meta.get("clip_window", 0.0)),
    )


def load_manifest(directory) -> dict:
    with open(Path(directory) / "manifest.json") as fh:
        return json.load(fh)


def load_dataset(directory) -> list[FeatureSequence]:
    directory = Path(directory)
    manifest = load_manifest(directory)
    return [
        load_features(directory / f"{video_id}.afmt", manifest)
        for video_id in sorted(manifest)
    ]


# ---- annotations -------------------------------------------------------------


def load_annotations(path, subset: str | None = None) -> dict[str, VideoAnnotation]:
    """ActivityNet-style ground-truth JSON -> per-video annotations."""
    with open(path) as fh:
        payload = json.load(fh)
    out = {}
    for video_id, entry in payload["database"].items():
        if subset is not None and entry.get("subset") != subset:
            continue
        actions = [
            (float(a["segment"][0]), float(a["segment"][1]), int(a["label_id"]))
            for a in entry.get("annotations", [])
        ]
        ann = VideoAnnotation(video_id, float(entry["duration"]), actions)
        ann.validate()
        out[video_id] = ann
    return out


def actions_to_grid(ann: VideoAnnotation, seq: FeatureSequence) -> list:
    """Seconds -> grid units; floor the start and ceil the end so the
    labeled extent never shrinks."""
    out = []
    top = seq.num_steps
    for s, e, label in ann.actions:
        gs = math_floor(seq.grid(s))
        ge = math_ceil(seq.grid(e))
        gs = max(0, min(gs, top - 1))
        ge = max(gs + 1, min(ge, top))
        out.append((float(gs), float(ge), label))
    return out


def math_floor(x: float) -> int:
    return int(np.floor(x + 1e-9))


def math_ceil(x: float) -> int:
    return int(np.ceil(x - 1e-9))


# ---- training windows ---------------------------------------------------------

MIN_SURVIVING_SPAN = 0.25  # fraction of a clipped segment that must remain


def sample_window(
    seq: FeatureSequence,
    grid_actions: list,
    t_max: int,
    rng: np.random.Generator,
    max_tries: int = 64,
) -> TrainingWindow:
    """Pad short sequences; randomly crop long ones around >= 1 action.

    Cropped segments are clipped to the window and kept only if at least a
    quarter of their original span survives.
    """
    t_len = seq.num_steps
    dim = seq.features.shape[1]
    if t_len <= t_max:
        feats = np.zeros((t_max, dim), dtype=np.float32)
        feats[:t_len] = seq.features
        mask = np.zeros(t_max, dtype=bool)
        mask[:t_len] = True
        return TrainingWindow(feats, mask, list(grid_actions))
    if not grid_actions:
        raise ValueError(f"{seq.video_id}: cannot crop a video with no actions")
    for _ in range(max_tries):
        offset = int(rng.integers(0, t_len - t_max + 1))
        window_actions = []
        for s, e, label in grid_actions:
            cs = max(s - offset, 0.0)
            ce = min(e - offset, float(t_max))
            if ce <= cs:
                continue
            if (ce - cs) < MIN_SURVIVING_SPAN * (e - s):
                continue
            window_actions.append((cs, ce, label))
        if window_actions:
            feats = np.ascontiguousarray(seq.features[offset:offset + t_max])
            return TrainingWindow(feats, np.ones(t_max, dtype=bool), window_actions)
    # Fall back to a window centered on the first action.
    s0 = grid_actions[0][0]
    offset = int(min(max(s0 - t_max // 2, 0), t_len - t_max))
    feats = np.ascontiguousarray(seq.features[offset:offset + t_max])
    window_actions = [
        (max(s - offset, 0.0), min(e - offset, float(t_max)), label)
        for s, e, label in grid_actions
        if min(e - offset, t_max) > max(s - offset, 0.0)
    ]
    return TrainingWindow(feats, np.ones(t_max, dtype=bool), window_actions)


def resize_fixed(seq: FeatureSequence, target_len: int) -> FeatureSequence:
    """Linear interpolation to a fixed length, endpoints preserved."""
    t_len = seq.num_steps
    if target_len == t_len:
        return seq
    src = np.arange(t_len, dtype=np.float64)
    dst = np.linspace(0.0, t_len - 1, target_len)
    out = np.empty((target_len, seq.features.shape[1]), dtype=np.float32)
    for c in range(seq.features.shape[1]):
        out[:, c] = np.interp(dst, src, seq.features[:, c].astype(np.float64))
    return FeatureSequence(
        video_id=seq.video_id,
        features=out,
        fps=seq.fps,
        feature_stride=seq.feature_stride * (t_len / target_len),
        clip_window=seq.clip_window,
    )


def stride_downsample(seq: FeatureSequence, factor: int) -> FeatureSequence:
    """Keep every factor-th feature; stride metadata scales to match."""
    if factor == 1:
        return seq
    return FeatureSequence(
        video_id=seq.video_id,
        features=np.ascontiguousarray(seq.features[::factor]),
        fps=seq.fps,
        feature_stride=seq.feature_stride * factor,
        clip_window=seq.clip_window,
    )


# ---- synthetic dataset --------------------------------------------------------


@dataclass
class SyntheticSpec:
    num_videos: int = 200
    t_range: tuple = (128, 256)
    feature_dim: int = 32
    num_classes: int = 3
    instances_per_video: tuple = (1, 5)
    duration_range: tuple = (3.0, 96.0)
    amplitude: float = 3.0
    noise_level: float = 0.5
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        for key in ("t_range", "instances_per_video", "duration_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _envelope(length: int) -> np.ndarray:
    """Smooth temporal profile: raised cosine from 0.5 at the edges to 1."""
    x = np.linspace(0.0, np.pi, length)
    return 0.5 + 0.5 * np.sin(x) ** 0.5


def generate_synthetic(spec: SyntheticSpec, signatures: np.ndarray | None = None,
                       id_prefix: str = "video"):
    """Deterministic synthetic dataset.

    Each class gets a fixed random unit signature; instances add the
    amplitude-scaled signature under a smooth envelope onto Gaussian
    background noise.  Instances are non-overlapping per video with
    log-uniform durations so every pyramid level receives assignments.

    Pass the signatures returned by a previous call to draw another split
    (e.g. a test set) from the same class definitions.

    Returns (sequences, annotations, class signatures).
    """
    rng = np.random.default_rng(spec.seed)
    drawn = rng.normal(size=(spec.num_classes, spec.feature_dim))
    if signatures is None:
        signatures = drawn / np.linalg.norm(drawn, axis=1, keepdims=True)
    else:
        signatures = np.asarray(signatures, dtype=np.float64)
        if signatures.shape != (spec.num_classes, spec.feature_dim):
            raise ValueError("signature shape does not match the spec")
    sequences = []
    annotations = []
    for v in range(spec.num_videos):
        t_len = int(rng.integers(spec.t_range[0], spec.t_range[1] + 1))
        feats = rng.normal(0.0, spec.noise_level, size=(t_len, spec.feature_dim))
        n_inst = int(rng.integers(spec.instances_per_video[0],
                                  spec.instances_per_video[1] + 1))
        actions = []
        occupied = np.zeros(t_len, dtype=bool)
        for _ in range(n_inst):
            lo = np.log(spec.duration_range[0])
            hi = np.log(min(spec.duration_range[1], t_len / 2))
            for _try in range(32):
                duration = int(round(np.exp(rng.uniform(lo, hi))))
                duration = max(duration, 2)
                if duration >= t_len:
                    continue
                start = int(rng.integers(0, t_len - duration))
                if occupied[start:start + duration].any():
                    continue
                occupied[max(start - 2, 0):start + duration + 2] = True
                label = int(rng.integers(0, spec.num_classes))
                env = _envelope(duration)
                feats[start:start + duration] += (
                    spec.amplitude * env[:, None] * signatures[label][None, :]
                )
                actions.append((float(start), float(start + duration), label))
                break
        actions.sort()
        video_id = f"{id_prefix}_{v:04d}"
        sequences.append(FeatureSequence(
            video_id=video_id,
            features=feats.astype(np.float32),
            fps=1.0,
            feature_stride=1.0,
        ))
        annotations.append(VideoAnnotation(
            video_id=video_id,
            duration_sec=float(t_len),
            actions=actions,
        ))
    return sequences, annotations, signatures


def write_dataset(directory, sequences, annotations, subset: str = "training"):
    """Write .afmt files, the manifest sidecar, and ground-truth JSON."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {}
    database = {}
    for seq, ann in zip(sequences, annotations):
        save_features(directory / f"{seq.video_id}.afmt", seq.features)
        manifest[seq.video_id] = {
            "fps": seq.fps,
            "feature_stride": seq.feature_stride,
            "clip_window": seq.clip_window,
        }
        database[seq.video_id] = {
            "duration": ann.duration_sec,
            "fps": seq.fps,
            "subset": subset,
            "annotations": [
                {"segment": [s * seq.feature_stride / seq.fps,
                             e * seq.feature_stride / seq.fps],
                 "label_id": label}
                for s, e, label in ann.actions
            ],
        }
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    with open(directory / "ground_truth.json", "w") as fh:
        json.dump({"database": database}, fh, indent=2, sort_keys=True)
