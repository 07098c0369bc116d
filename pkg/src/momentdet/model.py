"""Multiscale local-attention sequence localizer.

A shallow convolutional projection embeds the input features, a stack of
pre-LN transformer blocks with windowed self-attention builds a feature
pyramid (2x downsampling per pyramid block), and shared convolutional
heads emit per-moment class logits and non-negative boundary distances.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import ops
from .tensor import Tensor, constant, parameter


def default_regression_ranges(num_levels: int, init_max: float = 4.0):
    """Contiguous doubling ranges: [0,4),[4,8),...,[r,inf)."""
    ranges = []
    lo = 0.0
    hi = init_max
    for level in range(num_levels):
        if level == num_levels - 1:
            ranges.append((lo, float("inf")))
        else:
            ranges.append((lo, hi))
            lo, hi = hi, hi * 2.0
    return ranges


@dataclass
class ModelConfig:
    input_dim: int
    num_classes: int
    embed_dim: int = 512
    num_heads: int = 4
    window_size: int = 19
    num_stem_blocks: int = 2
    num_pyramid_blocks: int = 5
    head_kernel: int = 3
    head_layers: int = 3
    mlp_ratio: int = 4
    regression_ranges: list = None
    use_position_embedding: bool = False
    max_seq_len: int = 2304
    scale_init: float = 1e-4
    prior_prob: float = 0.01

    @property
    def num_levels(self) -> int:
        return 1 + self.num_pyramid_blocks

    def __post_init__(self):
        if self.regression_ranges is None:
            self.regression_ranges = default_regression_ranges(self.num_levels)
        else:
            self.regression_ranges = [
                (float(lo), float(hi)) for lo, hi in self.regression_ranges
            ]
        self.validate()

    def validate(self):
        if self.window_size % 2 == 0:
            raise ValueError("window_size must be odd")
        if self.embed_dim % self.num_heads != 0:
            raise ValueError("num_heads must divide embed_dim")
        if self.head_kernel % 2 == 0:
            raise ValueError("head_kernel must be odd")
        ranges = self.regression_ranges
        if len(ranges) != self.num_levels:
            raise ValueError(
                f"need {self.num_levels} regression ranges, got {len(ranges)}"
            )
        for (lo, hi), (nlo, _) in zip(ranges, ranges[1:]):
            if nlo != hi:
                raise ValueError("regression ranges must be contiguous")
        if not math.isinf(ranges[-1][1]):
            raise ValueError("last regression range must be open-ended")

    def to_json(self) -> str:
        d = asdict(self)
        d["regression_ranges"] = [
            [lo, "inf" if math.isinf(hi) else hi] for lo, hi in self.regression_ranges
        ]
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if d.get("regression_ranges") is not None:
            d["regression_ranges"] = [
                (lo, float("inf") if hi in ("inf", None) else hi)
                for lo, hi in d["regression_ranges"]
            ]
        return cls(**d)


@dataclass
class PyramidLevel:
    features: Tensor  # [T_level, D]
    mask: np.ndarray  # bool [T_level]
    stride: int
    regression_range: tuple


@dataclass
class FeaturePyramid:
    levels: list[PyramidLevel]


@dataclass
class MomentOutput:
    class_logits: list  # per level Tensor [T_level, C]
    reg_distances: list  # per level Tensor [T_level, 2], stride units, >= 0


def interpolate_position_embedding(pe: np.ndarray, t_len: int) -> np.ndarray:
    """Crop the table when t_len <= rows, linearly interpolate when longer."""
    t_max = pe.shape[0]
    if t_len <= t_max:
        return pe[:t_len]
    src = np.arange(t_max, dtype=np.float64)
    dst = np.linspace(0.0, t_max - 1, t_len)
    out = np.empty((t_len, pe.shape[1]), dtype=pe.dtype)
    for c in range(pe.shape[1]):
        out[:, c] = np.interp(dst, src, pe[:, c])
    return out


class LocalizerModel:
    """Holds named parameters and runs the forward pass."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self._init_params(np.random.default_rng(seed))

    # ---- parameter construction -----------------------------------------

    def _add(self, name: str, value: np.ndarray) -> Tensor:
        t = parameter(value, dtype=self.dtype)
        self.params[name] = t
        return t

    def _conv_init(self, rng, kernel, c_in, c_out):
        std = math.sqrt(2.0 / (kernel * c_in))
        return rng.normal(0.0, std, size=(kernel, c_in, c_out))

    def _init_params(self, rng):
        cfg = self.config
        d = cfg.embed_dim
        self._add("proj.conv1.weight", self._conv_init(rng, 3, cfg.input_dim, d))
        self._add("proj.conv1.bias", np.zeros(d))
        self._add("proj.conv2.weight", self._conv_init(rng, 3, d, d))
        self._add("proj.conv2.bias", np.zeros(d))
        if cfg.use_position_embedding:
            self._add("pos_embed", rng.normal(0.0, 0.02, size=(cfg.max_seq_len, d)))
        n_blocks = cfg.num_stem_blocks + cfg.num_pyramid_blocks
        for i in range(n_blocks):
            p = f"block{i}."
            for ln in ("ln1", "ln2"):
                self._add(p + ln + ".gain", np.ones(d))
                self._add(p + ln + ".bias", np.zeros(d))
            for w in ("wq", "wk", "wv", "wo"):
                self._add(p + "attn." + w + ".weight", rng.normal(0.0, 0.02, size=(d, d)))
                self._add(p + "attn." + w + ".bias", np.zeros(d))
            self._add(p + "scale_attn", np.full(d, cfg.scale_init))
            self._add(p + "scale_mlp", np.full(d, cfg.scale_init))
            hidden = cfg.mlp_ratio * d
            self._add(p + "mlp.fc1.weight", rng.normal(0.0, 0.02, size=(d, hidden)))
            self._add(p + "mlp.fc1.bias", np.zeros(hidden))
            self._add(p + "mlp.fc2.weight", rng.normal(0.0, 0.02, size=(hidden, d)))
            self._add(p + "mlp.fc2.bias", np.zeros(d))
            if i >= cfg.num_stem_blocks:
                # Strided depthwise downsample kernel: identity center tap
                # plus noise, so early training keeps the signal path open.
                dw = rng.normal(0.0, 0.02, size=(3, d))
                dw[1] += 1.0
                self._add(p + "down.weight", dw)
                self._add(p + "down.bias", np.zeros(d))
        for head in ("cls", "reg"):
            c_out_final = cfg.num_classes if head == "cls" else 2
            for layer in range(cfg.head_layers):
                p = f"{head}_head.conv{layer}."
                last = layer == cfg.head_layers - 1
                c_out = c_out_final if last else d
                self._add(p + "weight", self._conv_init(rng, cfg.head_kernel, d, c_out))
                if head == "cls" and last:
                    pi = cfg.prior_prob
                    bias = np.full(c_out, -math.log((1.0 - pi) / pi))
                else:
                    bias = np.zeros(c_out)
                self._add(p + "bias", bias)
                if not last:
                    self._add(f"{head}_head.ln{layer}.gain", np.ones(d))
                    self._add(f"{head}_head.ln{layer}.bias", np.zeros(d))

    # ---- forward ----------------------------------------------------------

    def _mask_mul(self, x: Tensor, mask: np.ndarray) -> Tensor:
        return x * constant(mask[:, None].astype(self.dtype), dtype=self.dtype)

    def _attention(self, z: Tensor, mask: np.ndarray, prefix: str) -> Tensor:
        cfg = self.config
        t_len, d = z.shape
        heads = cfg.num_heads
        dh = d // heads
        half = (cfg.window_size - 1) // 2
        window = 2 * half + 1
        p = self.params

        q = z @ p[prefix + "attn.wq.weight"] + p[prefix + "attn.wq.bias"]
        k = z @ p[prefix + "attn.wk.weight"] + p[prefix + "attn.wk.bias"]
        v = z @ p[prefix + "attn.wv.weight"] + p[prefix + "attn.wv.bias"]

        # Key index j of query t is t - half + j.  Zero-padding supplies the
        # out-of-range slots; those and masked positions get a -1e9 logit, so
        # their softmax weight underflows to exactly zero.
        k_win = k.reshape(t_len, heads, dh).pad_axis0(half, half).unfold(0, window)
        v_win = v.reshape(t_len, heads, dh).pad_axis0(half, half).unfold(0, window)

        idx = np.arange(t_len)[:, None] + np.arange(-half, half + 1)[None, :]
        key_ok = (idx >= 0) & (idx < t_len) & mask[np.clip(idx, 0, t_len - 1)]
        neg = np.where(key_ok, 0.0, -1e9).astype(self.dtype)[:, :, None]  # [T, W, 1]

        qr = q.reshape(t_len, 1, heads, dh)
        scores = (qr * k_win).sum(axis=3) * (1.0 / math.sqrt(dh))  # [T, W, H]
        attn = ops.softmax_rows(scores + constant(neg, dtype=self.dtype), axis=1)
        out = (attn.reshape(t_len, window, heads, 1) * v_win).sum(axis=1)
        out = out.reshape(t_len, d)
        out = out @ p[prefix + "attn.wo.weight"] + p[prefix + "attn.wo.bias"]
        return self._mask_mul(out, mask)

    def _block(self, z: Tensor, mask: np.ndarray, index: int):
        cfg = self.config
        p = self.params
        prefix = f"block{index}."
        ln1 = ops.layer_norm(z, p[prefix + "ln1.gain"], p[prefix + "ln1.bias"])
        z = z + self._attention(ln1, mask, prefix) * p[prefix + "scale_attn"]
        z = self._mask_mul(z, mask)
        ln2 = ops.layer_norm(z, p[prefix + "ln2.gain"], p[prefix + "ln2.bias"])
        h = ops.gelu(ln2 @ p[prefix + "mlp.fc1.weight"] + p[prefix + "mlp.fc1.bias"])
        h = h @ p[prefix + "mlp.fc2.weight"] + p[prefix + "mlp.fc2.bias"]
        z = z + h * p[prefix + "scale_mlp"]
        z = self._mask_mul(z, mask)
        if index >= cfg.num_stem_blocks:
            z = ops.depthwise_conv1d(
                z, p[prefix + "down.weight"], p[prefix + "down.bias"],
                stride=2, mask=mask,
            )
            mask = ops.downsample_mask(mask, 2)
        return z, mask

    def _head(self, z: Tensor, mask: np.ndarray, head: str) -> Tensor:
        cfg = self.config
        p = self.params
        for layer in range(cfg.head_layers):
            prefix = f"{head}_head.conv{layer}."
            z = ops.conv1d(z, p[prefix + "weight"], p[prefix + "bias"], mask=mask)
            if layer < cfg.head_layers - 1:
                z = ops.layer_norm(
                    z,
                    p[f"{head}_head.ln{layer}.gain"],
                    p[f"{head}_head.ln{layer}.bias"],
                )
                z = z.relu()
                z = self._mask_mul(z, mask)
        return z

    def project(self, features: np.ndarray, mask: np.ndarray) -> Tensor:
        cfg = self.config
        if features.shape[1] != cfg.input_dim:
            raise ValueError(
                f"expected {cfg.input_dim} input channels, got {features.shape[1]}"
            )
        x = constant(features, dtype=self.dtype)
        z = ops.conv1d(x, self.params["proj.conv1.weight"],
                       self.params["proj.conv1.bias"], mask=mask).relu()
        z = self._mask_mul(z, mask)
        z = ops.conv1d(z, self.params["proj.conv2.weight"],
                       self.params["proj.conv2.bias"], mask=mask)
        if cfg.use_position_embedding:
            pe = self.params["pos_embed"]
            t_len = features.shape[0]
            if t_len <= cfg.max_seq_len:
                z = z + pe.slice_axis0(0, t_len)
            else:
                z = z + constant(
                    interpolate_position_embedding(pe.data, t_len), dtype=self.dtype
                )
            z = self._mask_mul(z, mask)
        return z

    def forward(self, features: np.ndarray, mask: np.ndarray | None = None,
                training: bool = False):
        """Run the full network.

        features: [T, D_in]; mask: bool [T] (all-valid when omitted).
        Returns (FeaturePyramid, MomentOutput).
        """
        cfg = self.config
        t_len = features.shape[0]
        if mask is None:
            mask = np.ones(t_len, dtype=bool)
        if training and t_len > cfg.max_seq_len:
            raise ValueError(
                f"training sequence length {t_len} exceeds max_seq_len {cfg.max_seq_len}"
            )
        z = self.project(features, mask)
        levels: list[PyramidLevel] = []
        stride = 1
        n_blocks = cfg.num_stem_blocks + cfg.num_pyramid_blocks
        for i in range(n_blocks):
            z, new_mask = self._block(z, mask, i)
            if i >= cfg.num_stem_blocks:
                stride *= 2
            mask = new_mask
            if i >= cfg.num_stem_blocks - 1:
                level = len(levels)
                levels.append(PyramidLevel(
                    features=z, mask=mask, stride=stride,
                    regression_range=cfg.regression_ranges[level],
                ))
        cls_logits = []
        reg_distances = []
        for level in levels:
            cls_logits.append(self._head(level.features, level.mask, "cls"))
            reg = self._head(level.features, level.mask, "reg").relu()
            reg_distances.append(reg)
        return FeaturePyramid(levels), MomentOutput(cls_logits, reg_distances)

    # ---- weights io ---------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        for name, p in self.params.items():
            if name not in state:
                raise KeyError(f"checkpoint missing parameter {name!r}")
            if state[name].shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name!r}")
            p.data[...] = state[name].astype(p.data.dtype)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
