"""Central finite-difference gradient checking at f64."""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor


def finite_difference_grads(fn, tensors: list[Tensor], h: float = 1e-5):
    """Central-difference gradient of the scalar fn() w.r.t. each tensor."""
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            plus = fn()
            flat[i] = orig - h
            minus = fn()
            flat[i] = orig
            gflat[i] = (plus - minus) / (2.0 * h)
        grads.append(g)
    return grads


def check_gradients(build_loss, tensors: list[Tensor], rtol: float = 1e-4,
                    h: float = 1e-5) -> float:
    """Max relative error between reverse-mode and finite-difference grads.

    build_loss() must construct the graph fresh from `tensors` and return
    the scalar loss Tensor.
    """
    for t in tensors:
        t.grad = None
    loss = build_loss()
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in tensors]
    numeric = finite_difference_grads(lambda: build_loss().item(), tensors, h=h)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = max(np.abs(n).max(), np.abs(a).max(), 1e-8)
        worst = max(worst, float(np.abs(a - n).max() / scale))
    return worst


def _rand(rng, *shape):
    return Tensor(rng.uniform(-2.0, 2.0, size=shape), requires_grad=True,
                  dtype=np.float64)


def op_suite(seed: int = 0) -> list[dict]:
    """Finite-difference checks for every differentiable op."""
    rng = np.random.default_rng(seed)
    cases = []

    def add(name, tensors, build):
        err = check_gradients(build, tensors)
        cases.append({"op": name, "max_rel_error": err, "passed": err <= 1e-4})

    a = _rand(rng, 4, 3)
    b = _rand(rng, 3, 5)
    add("matmul", [a, b], lambda: ((a @ b) * rng_const(rng, 4, 5)).sum())

    x = _rand(rng, 5, 6)
    add("softmax_rows", [x],
        lambda: (ops.softmax_rows(x) * rng_const(rng, 5, 6)).sum())

    gain = _rand(rng, 6)
    bias = _rand(rng, 6)
    add("layer_norm", [x, gain, bias],
        lambda: (ops.layer_norm(x, gain, bias) * rng_const(rng, 5, 6)).sum())

    xc = _rand(rng, 7, 3)
    w = _rand(rng, 3, 3, 4)
    cb = _rand(rng, 4)
    mask = np.ones(7, dtype=bool)
    mask[5:] = False
    add("conv1d", [xc, w, cb],
        lambda: (ops.conv1d(xc, w, cb, stride=1, mask=mask)
                 * rng_const(rng, 7, 4)).sum())
    w2 = _rand(rng, 3, 3)
    add("depthwise_conv1d_stride2", [xc, w2],
        lambda: (ops.depthwise_conv1d(xc, w2, stride=2, mask=mask)
                 * rng_const(rng, 4, 3)).sum())

    y = _rand(rng, 4, 4)
    add("relu", [y], lambda: ((y.relu()) * rng_const(rng, 4, 4)).sum())
    add("gelu", [y], lambda: (ops.gelu(y) * rng_const(rng, 4, 4)).sum())
    add("sigmoid", [y], lambda: (y.sigmoid() * rng_const(rng, 4, 4)).sum())
    add("tanh", [y], lambda: (y.tanh() * rng_const(rng, 4, 4)).sum())
    add("exp", [y], lambda: (y.exp() * rng_const(rng, 4, 4)).sum())
    z = Tensor(np.abs(rng.uniform(0.5, 2.0, size=(4, 4))), requires_grad=True,
               dtype=np.float64)
    add("log", [z], lambda: (z.log() * rng_const(rng, 4, 4)).sum())
    add("sqrt", [z], lambda: (z.sqrt() * rng_const(rng, 4, 4)).sum())
    add("pow", [z], lambda: ((z ** 2.5) * rng_const(rng, 4, 4)).sum())
    add("div", [y, z], lambda: ((y / z) * rng_const(rng, 4, 4)).sum())
    add("take", [y],
        lambda: (y.take(np.array([0, 2, 2, 3]), axis=0) * rng_const(rng, 4, 4)).sum())
    add("unfold_stride2", [y],
        lambda: (y.pad_axis0(2, 2).unfold(0, 5, 2) * rng_const(rng, 2, 5, 4)).sum())
    add("maximum", [y, z], lambda: (y.maximum(z) * rng_const(rng, 4, 4)).sum())
    add("minimum", [y, z], lambda: (y.minimum(z) * rng_const(rng, 4, 4)).sum())
    add("mean", [y], lambda: y.mean(axis=1).sum() * 3.0)
    add("transpose_reshape", [y],
        lambda: (y.transpose(1, 0).reshape(2, 8) * rng_const(rng, 2, 8)).sum())
    add("pad_slice", [y],
        lambda: (y.pad_axis0(1, 2).slice_axis0(0, 6) * rng_const(rng, 6, 4)).sum())
    return cases


_CONST_CACHE: dict = {}


def rng_const(rng, *shape):
    """Fixed random projection so the scalar loss exercises the Jacobian;
    cached per shape so repeated closure calls see identical values."""
    key = shape
    if key not in _CONST_CACHE:
        _CONST_CACHE[key] = np.random.default_rng(hash(shape) % (2 ** 32)).uniform(
            0.5, 1.5, size=shape
        )
    return Tensor(_CONST_CACHE[key], dtype=np.float64)
