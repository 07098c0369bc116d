"""Turn per-moment outputs into scored segments and suppress duplicates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import FeaturePyramid, MomentOutput


@dataclass
class Detection:
    start: float  # grid units
    end: float
    label: int
    score: float


@dataclass
class PostprocessConfig:
    pre_nms_score_threshold: float = 0.001
    pre_nms_topk: int = 2000
    soft_nms_sigma: float = 0.5
    soft_nms_min_score: float = 0.001
    max_detections_per_video: int = 200
    fusion_topk: int = 2
    class_agnostic_nms: bool = False

    def __post_init__(self):
        if not (0.0 <= self.pre_nms_score_threshold <= 1.0):
            raise ValueError("pre_nms_score_threshold must be in [0, 1]")
        if self.pre_nms_topk < 1 or self.fusion_topk < 1:
            raise ValueError("topk values must be >= 1")


def decode(
    outputs: MomentOutput,
    pyramid: FeaturePyramid,
    total_length: float,
    cfg: PostprocessConfig,
) -> list[Detection]:
    """Per level/moment/class, emit segments for scores above threshold.

    Distances are stride-denormalized; zero-length segments are dropped
    and boundaries are clipped to [0, total_length].
    """
    detections: list[Detection] = []
    for logits, reg, level in zip(
        outputs.class_logits, outputs.reg_distances, pyramid.levels
    ):
        scores = 1.0 / (1.0 + np.exp(-logits.data.astype(np.float64)))
        scores = scores * level.mask[:, None]
        t_idx, c_idx = np.nonzero(scores > cfg.pre_nms_score_threshold)
        if t_idx.size == 0:
            continue
        flat_scores = scores[t_idx, c_idx]
        if t_idx.size > cfg.pre_nms_topk:
            keep = np.argsort(-flat_scores, kind="stable")[:cfg.pre_nms_topk]
            t_idx, c_idx, flat_scores = t_idx[keep], c_idx[keep], flat_scores[keep]
        stride = level.stride
        dist = reg.data.astype(np.float64)
        starts = (t_idx - dist[t_idx, 0]) * stride
        ends = (t_idx + dist[t_idx, 1]) * stride
        starts = np.clip(starts, 0.0, total_length)
        ends = np.clip(ends, 0.0, total_length)
        for s, e, c, sc in zip(starts, ends, c_idx, flat_scores):
            if e > s:
                detections.append(Detection(float(s), float(e), int(c), float(sc)))
    return detections


def tiou(a_start: float, a_end: float, b_start: float, b_end: float) -> float:
    inter = min(a_end, b_end) - max(a_start, b_start)
    if inter <= 0:
        return 0.0
    union = (a_end - a_start) + (b_end - b_start) - inter
    return inter / union if union > 0 else 0.0


def soft_nms(dets: list[Detection], cfg: PostprocessConfig) -> list[Detection]:
    """Gaussian-decay Soft-NMS.

    Iteratively keep the highest-scoring detection and decay the scores of
    overlapping remaining ones (same class unless class_agnostic_nms) by
    exp(-tiou^2 / sigma); drop below min_score, stop at max_detections.
    """
    if not dets:
        return []
    starts = np.array([d.start for d in dets])
    ends = np.array([d.end for d in dets])
    labels = np.array([d.label for d in dets])
    scores = np.array([d.score for d in dets], dtype=np.float64)
    alive = np.ones(len(dets), dtype=bool)
    kept: list[Detection] = []
    while alive.any() and len(kept) < cfg.max_detections_per_video:
        live = np.flatnonzero(alive)
        best = live[np.argmax(scores[live])]
        alive[best] = False
        kept.append(Detection(dets[best].start, dets[best].end,
                              dets[best].label, float(scores[best])))
        rest = np.flatnonzero(alive)
        if rest.size == 0:
            break
        inter = np.minimum(ends[rest], ends[best]) - np.maximum(starts[rest], starts[best])
        inter = np.maximum(inter, 0.0)
        union = (ends[rest] - starts[rest]) + (ends[best] - starts[best]) - inter
        overlaps = np.where(union > 0, inter / np.maximum(union, 1e-12), 0.0)
        if not cfg.class_agnostic_nms:
            overlaps = overlaps * (labels[rest] == labels[best])
        scores[rest] *= np.exp(-(overlaps ** 2) / cfg.soft_nms_sigma)
        alive[rest] &= scores[rest] >= cfg.soft_nms_min_score
    kept.sort(key=lambda d: (-d.score, d.start, d.label))
    return kept


def fuse_scores(
    dets: list[Detection], video_scores: np.ndarray, topk: int
) -> list[Detection]:
    """Relabel each detection with the top-k external video-level classes.

    Each input detection spawns topk detections, scores multiplied by the
    external class scores.
    """
    order = np.argsort(-np.asarray(video_scores, dtype=np.float64), kind="stable")[:topk]
    fused = []
    for det in dets:
        for cls in order:
            fused.append(Detection(det.start, det.end, int(cls),
                                   det.score * float(video_scores[cls])))
    return fused


def detections_to_json(dets: list[Detection], fps: float, feature_stride: float) -> list[dict]:
    """Serialize detections with grid units converted to seconds."""
    scale = feature_stride / fps
    return [
        {
            "start_sec": round(d.start * scale, 6),
            "end_sec": round(d.end * scale, 6),
            "label": d.label,
            "score": round(d.score, 9),
        }
        for d in dets
    ]
