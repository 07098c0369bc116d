"""Per-moment training targets and the detection loss.

Ground-truth segments (in level-0 grid units) are routed to pyramid
levels by their boundary distances, optionally restricted to a
stride-scaled interval around each segment center, and turned into
multi-hot class targets plus stride-normalized distance targets.  The
loss is sigmoid focal classification over every moment plus distance-IoU
regression over the positive ones, normalized by the positive count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import FeaturePyramid, MomentOutput
from .tensor import Tensor, constant


@dataclass
class LossConfig:
    lambda_reg: float = 1.0
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    center_sampling_radius: float = 1.5
    center_sampling_enabled: bool = True

    def __post_init__(self):
        if self.lambda_reg <= 0:
            raise ValueError("lambda_reg must be positive")
        if self.center_sampling_radius <= 0:
            raise ValueError("center_sampling_radius must be positive")


@dataclass
class LevelTargets:
    positive_mask: np.ndarray  # bool [T_level]
    class_targets: np.ndarray  # [T_level, C] multi-hot
    reg_targets: np.ndarray  # [T_level, 2] stride units, valid at positives


@dataclass
class MomentTargets:
    levels: list[LevelTargets]

    @property
    def num_positives(self) -> int:
        return int(sum(lv.positive_mask.sum() for lv in self.levels))


def assign_targets(
    actions: list,
    pyramid: FeaturePyramid,
    num_classes: int,
    cfg: LossConfig,
) -> MomentTargets:
    """Build per-level targets from (start, end, label) grid-unit segments.

    A moment t at a level with stride s is positive for a segment iff
    t lies inside the segment, max boundary distance falls in the level's
    regression range, and (with center sampling) t lies strictly inside
    the interval center +- radius * s.  When several segments qualify at
    one moment, the shortest owns the regression target; class targets
    stay multi-hot over all of them.
    """
    for start, end, _ in actions:
        if start >= end:
            raise ValueError(f"segment start {start} must precede end {end}")
    levels = []
    for level in pyramid.levels:
        t_len = level.features.shape[0]
        stride = level.stride
        lo, hi = level.regression_range
        coords = np.arange(t_len, dtype=np.float64) * stride
        pos = np.zeros(t_len, dtype=bool)
        cls = np.zeros((t_len, num_classes), dtype=np.float32)
        reg = np.zeros((t_len, 2), dtype=np.float32)
        owner_len = np.full(t_len, np.inf)
        for start, end, label in actions:
            d_start = coords - start
            d_end = end - coords
            inside = (d_start >= 0) & (d_end >= 0)
            if cfg.center_sampling_enabled:
                center = 0.5 * (start + end)
                radius = cfg.center_sampling_radius * stride
                inside &= (coords > center - radius) & (coords < center + radius)
            dmax = np.maximum(d_start, d_end)
            inside &= (dmax >= lo) & (dmax < hi)
            inside &= level.mask[:t_len]
            if not inside.any():
                continue
            pos |= inside
            cls[inside, label] = 1.0
            length = end - start
            take = inside & (length < owner_len)
            owner_len[take] = length
            reg[take, 0] = d_start[take] / stride
            reg[take, 1] = d_end[take] / stride
        levels.append(LevelTargets(pos, cls, reg))
    return MomentTargets(levels)


def focal_loss(
    logits: Tensor,
    class_targets: np.ndarray,
    valid_mask: np.ndarray,
    gamma: float = 2.0,
    alpha: float = 0.25,
) -> Tensor:
    """Sigmoid focal loss summed over valid moments and classes."""
    y = constant(class_targets, dtype=logits.dtype)
    # Stable binary cross-entropy with logits:
    # bce = max(x, 0) - x*y + log(1 + exp(-|x|))
    absx = logits.relu() + (-logits).relu()
    bce = logits.relu() - logits * y + ((-absx).exp() + 1.0).log()
    p = logits.sigmoid()
    pt = p * y + (1.0 - p) * (1.0 - y)
    alpha_t = alpha * class_targets + (1.0 - alpha) * (1.0 - class_targets)
    focal = bce * (1.0 - pt) ** gamma * constant(alpha_t, dtype=logits.dtype)
    keep = valid_mask[:, None].astype(logits.dtype.type)
    return (focal * constant(keep, dtype=logits.dtype)).sum()


def diou_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Distance-IoU loss for (onset, offset) distance pairs, per row.

    pred, target: [P, 2] distances from the same moment; the moment
    coordinate cancels, so segments are formed around zero.
    """
    tgt = constant(target, dtype=pred.dtype)
    p_start = -pred.take(np.array([0]), axis=1)
    p_end = pred.take(np.array([1]), axis=1)
    g_start = -tgt.take(np.array([0]), axis=1)
    g_end = tgt.take(np.array([1]), axis=1)
    inter = p_end.minimum(g_end) - p_start.maximum(g_start)
    inter = inter.relu()
    union = (p_end - p_start) + (g_end - g_start) - inter
    iou = inter / union
    enclose = p_end.maximum(g_end) - p_start.minimum(g_start)
    center_gap = (p_start + p_end) * 0.5 - (g_start + g_end) * 0.5
    penalty = (center_gap * center_gap) / (enclose * enclose)
    return (1.0 - iou + penalty).reshape(-1)


@dataclass
class LossOutput:
    total: Tensor
    loss_cls: float = 0.0
    loss_reg: float = 0.0
    num_positives: int = 0


def total_loss(
    outputs: MomentOutput,
    targets: MomentTargets,
    masks: list,
    cfg: LossConfig,
) -> LossOutput:
    """Eq-style combined loss for one window, normalized by positive count.

    masks: per-level validity masks.  With zero positives the denominator
    is clamped to 1 so background-only windows still contribute the
    classification term.
    """
    num_pos = targets.num_positives
    denom = max(num_pos, 1)
    cls_terms = []
    reg_terms = []
    for logits, reg_out, level_targets, mask in zip(
        outputs.class_logits, outputs.reg_distances, targets.levels, masks
    ):
        cls_terms.append(
            focal_loss(logits, level_targets.class_targets, mask,
                       gamma=cfg.focal_gamma, alpha=cfg.focal_alpha)
        )
        pos_idx = np.flatnonzero(level_targets.positive_mask)
        if pos_idx.size:
            pred = reg_out.take(pos_idx, axis=0)
            reg_terms.append(diou_loss(pred, level_targets.reg_targets[pos_idx]).sum())
    loss_cls = cls_terms[0]
    for term in cls_terms[1:]:
        loss_cls = loss_cls + term
    loss_cls = loss_cls * (1.0 / denom)
    if reg_terms:
        loss_reg = reg_terms[0]
        for term in reg_terms[1:]:
            loss_reg = loss_reg + term
        loss_reg = loss_reg * (1.0 / denom)
        total = loss_cls + loss_reg * cfg.lambda_reg
        reg_val = loss_reg.item()
    else:
        total = loss_cls
        reg_val = 0.0
    if not np.isfinite(total.data):
        raise FloatingPointError("non-finite loss")
    return LossOutput(total=total, loss_cls=loss_cls.item(),
                      loss_reg=reg_val, num_positives=num_pos)
