"""Reverse-mode autodiff on numpy arrays.

Every primitive the depth network needs lives here: conv2d, batch norm,
ReLU, 2x2 max pooling, nearest 2x upsampling, elementwise arithmetic,
feature concatenation and the reductions used by the loss. Each op
records a backward closure on its output; ``Tensor.backward()`` replays
the recorded ops in reverse topological order, accumulating each
tensor's gradient exactly once per consumer.

Compute defaults to float32. For gradient verification, build the same
graph from float64 arrays; every op preserves the dtype of its inputs.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ShapeError

_FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable recording of backward closures inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A numpy array plus the bookkeeping needed for backpropagation.

    ``data`` is the value, ``grad`` (filled in by ``backward``) has the
    same shape, ``requires_grad`` marks trainable leaves. Non-leaf
    tensors carry references to their parents and a closure that routes
    an incoming gradient to them.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad += grad

    def backward(self):
        """Backpropagate from a scalar: fills ``grad`` on every tensor
        with ``requires_grad`` that this value depends on."""
        if self.data.size != 1:
            raise ShapeError(
                f"backward: loss must be scalar, got shape {self.data.shape}"
            )
        topo = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
                # intermediate grads are only needed transiently
                if node is not self:
                    node.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__


def _toposort(root: Tensor):
    """Iterative DFS postorder; recursion would overflow on deep stacks."""
    topo = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return topo


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents, backward) -> Tensor:
    """Wrap op output; record the closure only when grads can flow."""
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _require_4d(x: Tensor, op: str, name: str = "input"):
    if x.data.ndim != 4:
        raise ShapeError(f"{op}: {name} must be 4-axis (b, f, h, w), got {x.data.ndim} axes")


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: shapes {a.data.shape} and {b.data.shape} differ")

    def backward(grad):
        if a.requires_grad:
            a._accumulate(grad)
        if b.requires_grad:
            b._accumulate(grad)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub: shapes {a.data.shape} and {b.data.shape} differ")

    def backward(grad):
        if a.requires_grad:
            a._accumulate(grad)
        if b.requires_grad:
            b._accumulate(-grad)

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: shapes {a.data.shape} and {b.data.shape} differ")

    def backward(grad):
        if a.requires_grad:
            a._accumulate(grad * b.data)
        if b.requires_grad:
            b._accumulate(grad * a.data)

    return _make(a.data * b.data, (a, b), backward)


def scale(x, factor: float) -> Tensor:
    x = _as_tensor(x)
    factor = float(factor)

    def backward(grad):
        if x.requires_grad:
            x._accumulate(grad * factor)

    return _make(x.data * factor, (x,), backward)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    positive = x.data > 0

    def backward(grad):
        if x.requires_grad:
            x._accumulate(grad * positive)

    return _make(np.maximum(x.data, 0), (x,), backward)


def concat_features(tensors) -> Tensor:
    """Concatenate along the feature axis (axis 1)."""
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat_features: need at least one tensor")
    for t in tensors:
        _require_4d(t, "concat_features")
    ref = tensors[0].data.shape
    for i, t in enumerate(tensors[1:], start=1):
        s = t.data.shape
        if (s[0], s[2], s[3]) != (ref[0], ref[2], ref[3]):
            raise ShapeError(
                f"concat_features: tensor {i} has non-feature extents {s} vs {ref} "
                "(axes 0, 2, 3 must match)"
            )
    widths = [t.data.shape[1] for t in tensors]
    offsets = np.cumsum([0] + widths)

    def backward(grad):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t._accumulate(grad[:, lo:hi])

    return _make(np.concatenate([t.data for t in tensors], axis=1), tensors, backward)


def tsum(x) -> Tensor:
    """Full reduction to a scalar."""
    x = _as_tensor(x)

    def backward(grad):
        if x.requires_grad:
            x._accumulate(np.full_like(x.data, grad))

    return _make(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), backward)


def tmean(x) -> Tensor:
    """Full-mean reduction to a scalar."""
    x = _as_tensor(x)
    n = x.data.size

    def backward(grad):
        if x.requires_grad:
            x._accumulate(np.full_like(x.data, grad / n))

    return _make(np.asarray(x.data.mean(), dtype=x.data.dtype), (x,), backward)


# ---------------------------------------------------------------------------
# spatial ops
# ---------------------------------------------------------------------------

def _conv_windows(padded: np.ndarray, k: int, stride: int, h_out: int, w_out: int):
    """Strided view (b, f_in, k, k, h_out, w_out) over a padded input."""
    b, c = padded.shape[:2]
    s0, s1, s2, s3 = padded.strides
    return as_strided(
        padded,
        shape=(b, c, k, k, h_out, w_out),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride),
    )


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation with square kernels.

    ``x`` is (b, f_in, H, W), ``weight`` is (f_out, f_in, k, k), ``bias``
    is (f_out,) or None. Output spatial extent is
    floor((H + 2*padding - k) / stride) + 1.
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    bias = _as_tensor(bias) if bias is not None else None
    _require_4d(x, "conv2d")
    if weight.data.ndim != 4:
        raise ShapeError(f"conv2d: weight must be 4-axis (f_out, f_in, k, k), got {weight.data.ndim} axes")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be positive, got {stride}")
    if padding < 0:
        raise ShapeError(f"conv2d: padding must be non-negative, got {padding}")
    b, c, h, w = x.data.shape
    f_out, f_in, k, k2 = weight.data.shape
    if k != k2:
        raise ShapeError(f"conv2d: kernel must be square, got {k}x{k2} (weight axes 2, 3)")
    if c != f_in:
        raise ShapeError(f"conv2d: input has {c} features but weight expects {f_in} (axis 1)")
    if bias is not None and bias.data.shape != (f_out,):
        raise ShapeError(f"conv2d: bias shape {bias.data.shape} != ({f_out},) (axis 0)")
    if k > h + 2 * padding or k > w + 2 * padding:
        raise ShapeError(
            f"conv2d: kernel {k} exceeds padded spatial extent "
            f"({h + 2 * padding}, {w + 2 * padding}) (axes 2, 3)"
        )

    if padding:
        padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        padded = x.data
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    windows = _conv_windows(padded, k, stride, h_out, w_out)
    # one GEMM per sample: keeps each sample's result independent of the
    # batch it rides in (BLAS blocking is geometry-dependent)
    out = np.empty((b, f_out, h_out, w_out), dtype=x.data.dtype)
    for n in range(b):
        o = np.tensordot(windows[n], weight.data, axes=((0, 1, 2), (1, 2, 3)))
        out[n] = o.transpose(2, 0, 1)
    if bias is not None:
        out += bias.data[None, :, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(grad):
        if bias is not None and bias.requires_grad:
            bias._accumulate(grad.sum(axis=(0, 2, 3)))
        if weight.requires_grad:
            # (b,f_out,ho,wo) x (b,c,k,k,ho,wo) -> (f_out,c,k,k)
            dw = np.tensordot(grad, windows, axes=((0, 2, 3), (0, 4, 5)))
            weight._accumulate(dw)
        if x.requires_grad:
            dpad = np.zeros_like(padded)
            wd = weight.data
            for i in range(k):
                hi = i + stride * h_out
                for j in range(k):
                    wj = j + stride * w_out
                    # (b,f_out,ho,wo) x (f_out,c) -> (b,ho,wo,c)
                    contrib = np.tensordot(grad, wd[:, :, i, j], axes=((1,), (0,)))
                    dpad[:, :, i:hi:stride, j:wj:stride] += contrib.transpose(0, 3, 1, 2)
            if padding:
                dx = dpad[:, :, padding:padding + h, padding:padding + w]
            else:
                dx = dpad
            x._accumulate(dx)

    return _make(out, parents, backward)


def batch_norm(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-feature batch normalization over (batch, height, width).

    In training mode the batch statistics normalize and the running
    estimates are updated in place by exponential moving average (the
    running variance uses the unbiased batch variance). In eval mode the
    running estimates normalize; fresh ones are (mean 0, var 1).
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    _require_4d(x, "batch_norm")
    f = x.data.shape[1]
    if gamma.data.shape != (f,):
        raise ShapeError(f"batch_norm: gamma shape {gamma.data.shape} != ({f},) (axis 1 feature count)")
    if beta.data.shape != (f,):
        raise ShapeError(f"batch_norm: beta shape {beta.data.shape} != ({f},) (axis 1 feature count)")
    if eps <= 0:
        raise ShapeError(f"batch_norm: eps must be positive, got {eps}")

    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        n = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        unbiased = var * (n / (n - 1)) if n > 1 else var
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mean = running_mean.astype(x.data.dtype)
        var = running_var.astype(x.data.dtype)

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(grad):
        if beta.requires_grad:
            beta._accumulate(grad.sum(axis=(0, 2, 3)))
        if gamma.requires_grad:
            gamma._accumulate((grad * xhat).sum(axis=(0, 2, 3)))
        if x.requires_grad:
            g = gamma.data[None, :, None, None]
            if training:
                n = grad.shape[0] * grad.shape[2] * grad.shape[3]
                dxhat = grad * g
                mean_dxhat = dxhat.mean(axis=(0, 2, 3), keepdims=True)
                mean_dxhat_xhat = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
                dx = inv[None, :, None, None] * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
                del n
            else:
                dx = grad * g * inv[None, :, None, None]
            x._accumulate(dx)

    return _make(out, (x, gamma, beta), backward)


def max_pool2d(x) -> Tensor:
    """2x2 max pooling with stride 2; ties go to the first element."""
    x = _as_tensor(x)
    _require_4d(x, "max_pool2d")
    b, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2d: spatial extents ({h}, {w}) must be even (axes 2, 3)")
    ho, wo = h // 2, w // 2
    win = x.data.reshape(b, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(grad):
        if x.requires_grad:
            dwin = np.zeros((b, c, ho, wo, 4), dtype=grad.dtype)
            np.put_along_axis(dwin, idx[..., None], grad[..., None], axis=-1)
            dx = dwin.reshape(b, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
            x._accumulate(dx)

    return _make(np.ascontiguousarray(out), (x,), backward)


def upsample_nearest2x(x) -> Tensor:
    """Double both spatial extents, replicating each value into a 2x2 block."""
    x = _as_tensor(x)
    _require_4d(x, "upsample_nearest2x")
    b, c, h, w = x.data.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(grad):
        if x.requires_grad:
            dx = grad.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5))
            x._accumulate(dx)

    return _make(out, (x,), backward)
