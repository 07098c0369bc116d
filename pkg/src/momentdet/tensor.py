"""Dense tensors with reverse-mode automatic differentiation.

Everything downstream (model, losses, trainer) computes with these.  The
design is a small tape: each op returns a new Tensor holding a closure
that routes the output gradient back to its parents.  Data lives in
contiguous numpy arrays; f32 is the training dtype, f64 is used for
gradient checking.
"""

from __future__ import annotations

import numpy as np

DTYPES = {"f32": np.float32, "f64": np.float64}


def _as_array(value, dtype):
    arr = np.asarray(value, dtype=dtype)
    return np.ascontiguousarray(arr)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to the parent's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """N-d array with an optional gradient buffer and autodiff tape entry."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=np.float32):
        if isinstance(data, Tensor):
            data = data.data
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # ---- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.dtype)

    def zero_grad(self):
        self.grad = None

    # ---- graph construction --------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(other, requires_grad=False, dtype=self.dtype)

    @staticmethod
    def _make(data, parents, backward):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    def _accumulate(self, grad: np.ndarray, own: bool = False):
        """Add grad into the buffer; own=True means grad is a fresh array
        this tensor may keep without copying."""
        if not self.requires_grad:
            return
        g = _unbroadcast(grad, self.data.shape)
        if g is not grad:
            own = True
        if self.grad is None:
            if own and g.dtype == self.data.dtype and g.flags.writeable:
                self.grad = g
            else:
                self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    # ---- arithmetic ------------------------------------------------------

    def __add__(self, other):
        other = self._coerce(other)
        out_data = self.data + other.data

        def backward(g, a=self, b=other):
            # g is dead after this closure runs; one parent may keep it.
            a._accumulate(g, own=True)
            b._accumulate(g)

        return Tensor._make(out_data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g, a=self):
            a._accumulate(-g, own=True)

        return Tensor._make(-self.data, (self,), backward)

    def __sub__(self, other):
        other = self._coerce(other)
        out_data = self.data - other.data

        def backward(g, a=self, b=other):
            a._accumulate(g, own=True)
            b._accumulate(-g, own=True)

        return Tensor._make(out_data, (self, other), backward)

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        other = self._coerce(other)
        out_data = self.data * other.data

        def backward(g, a=self, b=other):
            a._accumulate(g * b.data, own=True)
            b._accumulate(g * a.data, own=True)

        return Tensor._make(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        out_data = self.data / other.data

        def backward(g, a=self, b=other):
            a._accumulate(g / b.data, own=True)
            b._accumulate(-g * a.data / (b.data * b.data), own=True)

        return Tensor._make(out_data, (self, other), backward)

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out_data = self.data ** exponent

        def backward(g, a=self, n=exponent):
            a._accumulate(g * n * a.data ** (n - 1), own=True)

        return Tensor._make(out_data, (self,), backward)

    def __matmul__(self, other):
        other = self._coerce(other)
        if self.data.shape[-1] != other.data.shape[-2]:
            raise ValueError(
                f"matmul inner dims mismatch: {self.data.shape} @ {other.data.shape}"
            )
        out_data = self.data @ other.data

        def backward(g, a=self, b=other):
            if b.data.ndim == 1:
                a._accumulate(np.outer(g, b.data) if a.data.ndim == 2 else g * b.data, own=True)
                b._accumulate(a.data.T @ g if a.data.ndim == 2 else a.data * g, own=True)
                return
            ga = g @ np.swapaxes(b.data, -1, -2)
            gb = np.swapaxes(a.data, -1, -2) @ g
            a._accumulate(ga, own=True)
            b._accumulate(gb, own=True)

        return Tensor._make(out_data, (self, other), backward)

    # ---- elementwise nonlinearities ---------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def backward(g, a=self, o=out_data):
            a._accumulate(g * o, own=True)

        return Tensor._make(out_data, (self,), backward)

    def log(self):
        def backward(g, a=self):
            a._accumulate(g / a.data, own=True)

        return Tensor._make(np.log(self.data), (self,), backward)

    def tanh(self):
        out_data = np.tanh(self.data)

        def backward(g, a=self, o=out_data):
            a._accumulate(g * (1.0 - o * o), own=True)

        return Tensor._make(out_data, (self,), backward)

    def relu(self):
        out_data = np.maximum(self.data, 0)

        def backward(g, a=self):
            a._accumulate(g * (a.data > 0), own=True)

        return Tensor._make(out_data, (self,), backward)

    def sigmoid(self):
        out_data = 1.0 / (1.0 + np.exp(-self.data))

        def backward(g, a=self, o=out_data):
            a._accumulate(g * o * (1.0 - o), own=True)

        return Tensor._make(out_data, (self,), backward)

    def gelu(self):
        """Gaussian error linear unit, tanh approximation."""
        c = np.asarray(0.7978845608028654, dtype=self.data.dtype)  # sqrt(2/pi)
        k = np.asarray(0.044715, dtype=self.data.dtype)
        x = self.data
        inner = np.tanh(c * (x + k * x * x * x))
        out_data = 0.5 * x * (1.0 + inner)

        def backward(g, a=self, t=inner, c=c, k=k):
            x = a.data
            local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * k * x * x)
            a._accumulate(g * local, own=True)

        return Tensor._make(out_data, (self,), backward)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def backward(g, a=self, o=out_data):
            a._accumulate(g * 0.5 / o, own=True)

        return Tensor._make(out_data, (self,), backward)

    # ---- reductions and shape ops -----------------------------------------

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g, a=self, ax=axis, kd=keepdims):
            if ax is not None and not kd:
                g = np.expand_dims(g, ax)
            a._accumulate(np.broadcast_to(g, a.data.shape))

        return Tensor._make(np.asarray(out_data, dtype=self.dtype), (self,), backward)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = 1
            for ax in axes:
                count *= self.data.shape[ax]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_data = self.data.reshape(shape)

        def backward(g, a=self):
            a._accumulate(g.reshape(a.data.shape), own=True)

        return Tensor._make(out_data, (self,), backward)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = np.argsort(axes)
        out_data = np.ascontiguousarray(self.data.transpose(axes))

        def backward(g, a=self, inv=tuple(inverse)):
            a._accumulate(g.transpose(inv), own=True)

        return Tensor._make(out_data, (self,), backward)

    def take(self, indices, axis=0):
        """Gather along one axis; backward scatter-adds into the source."""
        indices = np.asarray(indices)
        out_data = np.take(self.data, indices, axis=axis)

        # np.add.at needs the gathered axes leading when idx is n-d: move the
        # gather axis (and the idx dims that replaced it) to the front.
        def backward(g, a=self, idx=indices, ax=axis):
            if not a.requires_grad:
                return
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            buf = np.moveaxis(a.grad, ax, 0)
            g_moved = np.moveaxis(g, tuple(range(ax, ax + idx.ndim)), tuple(range(idx.ndim)))
            np.add.at(buf, idx, g_moved)

        return Tensor._make(out_data, (self,), backward)

    def unfold(self, axis: int, kernel: int, stride: int = 1):
        """Extract sliding windows along one axis.

        The window dimension of length `kernel` is inserted right after
        `axis`, whose extent shrinks to (len - kernel) // stride + 1.
        Backward runs one strided slice-add per window offset, which is
        far cheaper than a general scatter for this banded pattern.
        """
        if axis < 0:
            axis += self.data.ndim
        xm = np.moveaxis(self.data, axis, 0)
        t_len = xm.shape[0]
        if kernel > t_len:
            raise ValueError(f"unfold kernel {kernel} exceeds axis length {t_len}")
        t_out = (t_len - kernel) // stride + 1
        windows = np.lib.stride_tricks.as_strided(
            xm,
            shape=(t_out, kernel) + xm.shape[1:],
            strides=(xm.strides[0] * stride, xm.strides[0]) + xm.strides[1:],
        )
        out_data = np.ascontiguousarray(
            np.moveaxis(windows, (0, 1), (axis, axis + 1))
        )

        def backward(g, a=self, ax=axis, k=kernel, s=stride, t_out=t_out):
            if not a.requires_grad:
                return
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            buf = np.moveaxis(a.grad, ax, 0)
            gm = np.moveaxis(g, (ax, ax + 1), (0, 1))
            span = (t_out - 1) * s + 1
            for j in range(k):
                buf[j:j + span:s] += gm[:, j]

        return Tensor._make(out_data, (self,), backward)

    def pad_axis0(self, before: int, after: int):
        """Zero-pad along the first axis."""
        width = [(before, after)] + [(0, 0)] * (self.data.ndim - 1)
        out_data = np.pad(self.data, width)

        def backward(g, a=self, b=before):
            a._accumulate(g[b:b + a.data.shape[0]], own=True)

        return Tensor._make(out_data, (self,), backward)

    def slice_axis0(self, start: int, stop: int, step: int = 1):
        out_data = np.ascontiguousarray(self.data[start:stop:step])

        def backward(g, a=self, sl=slice(start, stop, step)):
            if not a.requires_grad:
                return
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[sl] += g

        return Tensor._make(out_data, (self,), backward)

    # ---- elementwise min/max against tensors or constants ------------------

    def maximum(self, other):
        other = self._coerce(other)
        out_data = np.maximum(self.data, other.data)

        def backward(g, a=self, b=other):
            take_a = a.data >= b.data
            a._accumulate(g * take_a, own=True)
            b._accumulate(g * ~take_a, own=True)

        return Tensor._make(out_data, (self, other), backward)

    def minimum(self, other):
        other = self._coerce(other)
        out_data = np.minimum(self.data, other.data)

        def backward(g, a=self, b=other):
            take_a = a.data <= b.data
            a._accumulate(g * take_a, own=True)
            b._accumulate(g * ~take_a, own=True)

        return Tensor._make(out_data, (self, other), backward)

    # ---- backward pass -----------------------------------------------------

    def backward(self):
        """Reverse-mode sweep from a scalar loss.

        Gradients accumulate into .grad buffers; call zero_grad on leaves
        between steps.
        """
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        if self.grad is None:
            self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def parameter(data, dtype=np.float32) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype)


def constant(data, dtype=np.float32) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)
