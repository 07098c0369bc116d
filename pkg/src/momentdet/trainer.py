"""Training loop and checkpoint evaluation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import data as data_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .evaluation import EvalConfig, map_at
from .model import LocalizerModel, ModelConfig
from .optim import AdamState, EmaState, clip_grad_norm
from .postprocess import PostprocessConfig, decode, detections_to_json, soft_nms
from .targets import LossConfig, assign_targets, total_loss


@dataclass
class TrainConfig:
    epochs: int = 20
    warmup_epochs: int = 2
    base_lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 4
    t_max: int = 256
    seed: int = 0
    ema_decay: float = 0.999
    clip_norm: float = 1.0

    def __post_init__(self):
        if self.warmup_epochs >= self.epochs:
            raise ValueError("warmup_epochs must be smaller than epochs")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def train(
    sequences: list,
    annotations: list,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    loss_cfg: LossConfig,
    log_path=None,
    checkpoint_path=None,
):
    """Train a model; returns (model, ema_state, loss history).

    Per epoch, videos are shuffled with the run seed, windows are sampled,
    and each step runs forward -> loss -> backward -> clip -> Adam -> EMA.
    The loss history is serialized one JSON line per step when log_path is
    given.  NaN/Inf losses abort with the offending video ids.
    """
    ann_by_id = {a.video_id: a for a in annotations}
    model = LocalizerModel(model_cfg, seed=train_cfg.seed)
    steps_per_epoch = max(math.ceil(len(sequences) / train_cfg.batch_size), 1)
    total_steps = steps_per_epoch * train_cfg.epochs
    opt = AdamState(
        base_lr=train_cfg.base_lr,
        warmup_steps=steps_per_epoch * train_cfg.warmup_epochs,
        total_steps=total_steps,
        weight_decay=train_cfg.weight_decay,
    )
    ema = EmaState(decay=train_cfg.ema_decay)
    rng = np.random.default_rng(train_cfg.seed)
    history = []
    log_fh = open(log_path, "w") if log_path else None
    step = 0
    try:
        for _epoch in range(train_cfg.epochs):
            order = rng.permutation(len(sequences))
            for batch_start in range(0, len(order), train_cfg.batch_size):
                batch = order[batch_start:batch_start + train_cfg.batch_size]
                model.zero_grad()
                batch_total = None
                cls_sum = reg_sum = 0.0
                for vid_idx in batch:
                    seq = sequences[vid_idx]
                    ann = ann_by_id[seq.video_id]
                    grid_actions = data_mod.actions_to_grid(ann, seq)
                    window = data_mod.sample_window(
                        seq, grid_actions, train_cfg.t_max, rng
                    )
                    pyramid, outputs = model.forward(
                        window.features, window.mask, training=True
                    )
                    targets = assign_targets(
                        window.actions, pyramid, model_cfg.num_classes, loss_cfg
                    )
                    masks = [lv.mask for lv in pyramid.levels]
                    try:
                        loss = total_loss(outputs, targets, masks, loss_cfg)
                    except FloatingPointError as exc:
                        raise FloatingPointError(
                            f"{exc} at step {step} on video {seq.video_id}"
                        ) from exc
                    term = loss.total * (1.0 / len(batch))
                    batch_total = term if batch_total is None else batch_total + term
                    cls_sum += loss.loss_cls / len(batch)
                    reg_sum += loss.loss_reg / len(batch)
                batch_total.backward()
                clip_grad_norm(model.params, train_cfg.clip_norm)
                lr = opt.step(model.params)
                ema.update(model.params)
                record = {
                    "step": step,
                    "lr": lr,
                    "loss_total": float(batch_total.item()),
                    "loss_cls": cls_sum,
                    "loss_reg": reg_sum,
                }
                history.append(record)
                if log_fh:
                    log_fh.write(json.dumps(record) + "\n")
                step += 1
    finally:
        if log_fh:
            log_fh.close()
    if checkpoint_path:
        save_model(checkpoint_path, model, ema)
    return model, ema, history


def save_model(path, model: LocalizerModel, ema: EmaState | None = None):
    tensors = dict(model.state_dict())
    if ema is not None:
        for name, value in ema.shadow.items():
            tensors["ema." + name] = value.copy()
    save_checkpoint(path, tensors)


def load_model(path, model_cfg: ModelConfig, use_ema: bool = True) -> LocalizerModel:
    state = load_checkpoint(path)
    model = LocalizerModel(model_cfg, seed=0)
    raw = {k: v for k, v in state.items() if not k.startswith("ema.")}
    if use_ema:
        shadow = {k[4:]: v for k, v in state.items() if k.startswith("ema.")}
        if shadow:
            raw = {**raw, **shadow}
    model.load_state_dict(raw)
    return model


def predict_dataset(
    model: LocalizerModel,
    sequences: list,
    post_cfg: PostprocessConfig,
    video_scores: dict | None = None,
) -> dict:
    """Full-sequence inference; returns {video_id: [detection dicts]}."""
    from .postprocess import fuse_scores

    results = {}
    for seq in sequences:
        pyramid, outputs = model.forward(seq.features, training=False)
        dets = decode(outputs, pyramid, float(seq.num_steps), post_cfg)
        dets = soft_nms(dets, post_cfg)
        if video_scores and seq.video_id in video_scores:
            dets = fuse_scores(dets, np.asarray(video_scores[seq.video_id]),
                               post_cfg.fusion_topk)
            dets.sort(key=lambda d: (-d.score, d.start, d.label))
        results[seq.video_id] = detections_to_json(
            dets, seq.fps, seq.feature_stride
        )
    return results


def evaluate_predictions(predictions: dict, gt_path, eval_cfg: EvalConfig) -> dict:
    from .evaluation import load_ground_truth_json

    gts, _durations, _db = load_ground_truth_json(gt_path)
    preds = []
    for video_id, dets in predictions.items():
        for d in dets:
            preds.append((video_id, d["start_sec"], d["end_sec"],
                          d["label"], d["score"]))
    return map_at(preds, gts, eval_cfg)
