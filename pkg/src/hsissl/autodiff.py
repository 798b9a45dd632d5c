"""Dense tensors with reverse-mode differentiation.

A minimal numpy-backed engine: each operation computes its result eagerly
and, when any input requires gradients, records a closure that routes the
upstream gradient to its parents. ``Tensor.backward()`` topologically
sorts the recorded graph and applies each closure exactly once, so a
tensor feeding several consumers accumulates the sum of branch gradients.

Operations keep the dtype of their inputs: the training path runs in
float32, gradient checks build float64 graphs.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import DegenerateBatchError, DimensionError, LabelError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / probes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense array plus an optional gradient accumulation buffer."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward_fn = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __float__(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    # -- arithmetic sugar ----------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def sqrt(self):
        return sqrt(self)

    def relu(self):
        return relu(self)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self):
        return transpose(self)

    def flatten(self):
        return flatten(self)

    # -- backward ------------------------------------------------------

    def backward(self):
        """Populate ``grad`` on every requires_grad ancestor of this scalar."""
        if self.data.size != 1:
            raise DimensionError(
                f"backward() requires a scalar tensor, got shape {self.shape}"
            )
        if not self.requires_grad:
            return
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)


def _result(data, parents, backward_fn):
    """Wrap forward output, recording the graph only when needed."""
    live = tuple(p for p in parents if isinstance(p, Tensor) and p.requires_grad)
    out = Tensor(data)
    if _grad_enabled and live:
        out.requires_grad = True
        out._parents = live
        out._backward_fn = backward_fn
    return out


def _accum(t, g):
    if not (isinstance(t, Tensor) and t.requires_grad):
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def _raw(x, like_dtype):
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=like_dtype)


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise and linear algebra -------------------------------------


def add(a, b):
    ad = _raw(a, getattr(b, "dtype", np.float64))
    bd = _raw(b, ad.dtype)
    out = ad + bd

    def backward(g):
        _accum(a, _unbroadcast(g, ad.shape))
        _accum(b, _unbroadcast(g, bd.shape))

    return _result(out, (a, b), backward)


def sub(a, b):
    ad = _raw(a, getattr(b, "dtype", np.float64))
    bd = _raw(b, ad.dtype)
    out = ad - bd

    def backward(g):
        _accum(a, _unbroadcast(g, ad.shape))
        _accum(b, _unbroadcast(-g, bd.shape))

    return _result(out, (a, b), backward)


def mul(a, b):
    ad = _raw(a, getattr(b, "dtype", np.float64))
    bd = _raw(b, ad.dtype)
    out = ad * bd

    def backward(g):
        _accum(a, _unbroadcast(g * bd, ad.shape))
        _accum(b, _unbroadcast(g * ad, bd.shape))

    return _result(out, (a, b), backward)


def div(a, b):
    ad = _raw(a, getattr(b, "dtype", np.float64))
    bd = _raw(b, ad.dtype)
    out = ad / bd

    def backward(g):
        _accum(a, _unbroadcast(g / bd, ad.shape))
        _accum(b, _unbroadcast(-g * ad / (bd * bd), bd.shape))

    return _result(out, (a, b), backward)


def power(a, exponent: float):
    ad = a.data
    out = ad**exponent

    def backward(g):
        _accum(a, g * exponent * ad ** (exponent - 1))

    return _result(out, (a,), backward)


def sqrt(a):
    out = np.sqrt(a.data)

    def backward(g):
        _accum(a, g * 0.5 / out)

    return _result(out, (a,), backward)


def relu(a):
    mask = a.data > 0
    out = np.maximum(a.data, 0)

    def backward(g):
        _accum(a, g * mask)

    return _result(out, (a,), backward)


def matmul(a, b):
    ad = _raw(a, getattr(b, "dtype", np.float64))
    bd = _raw(b, ad.dtype)
    if ad.ndim != 2 or bd.ndim != 2:
        raise DimensionError("matmul expects two rank-2 tensors")
    if ad.shape[1] != bd.shape[0]:
        raise DimensionError(
            f"matmul inner extents disagree: {ad.shape} x {bd.shape}"
        )
    out = ad @ bd

    def backward(g):
        _accum(a, g @ bd.T)
        _accum(b, ad.T @ g)

    return _result(out, (a, b), backward)


def transpose(a):
    if a.ndim != 2:
        raise DimensionError("transpose expects a rank-2 tensor")
    out = a.data.T

    def backward(g):
        _accum(a, g.T)

    return _result(out, (a,), backward)


def reshape(a, shape):
    in_shape = a.shape
    out = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(in_shape))

    return _result(out, (a,), backward)


def flatten(a):
    """Collapse all but the leading (batch) axis."""
    return reshape(a, (a.shape[0], -1))


def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def _expand_reduced(g, in_shape, axes, keepdims):
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, in_shape)


def tensor_sum(a, axis=None, keepdims=False):
    axes = _normalize_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        _accum(a, _expand_reduced(g, a.shape, axes, keepdims))

    return _result(out, (a,), backward)


def tensor_mean(a, axis=None, keepdims=False):
    axes = _normalize_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        _accum(a, _expand_reduced(g / count, a.shape, axes, keepdims))

    return _result(out, (a,), backward)


# -- convolutions --------------------------------------------------------


def _conv_extent(in_extent, kernel, stride, padding):
    span = in_extent + 2 * padding - kernel
    if span < 0:
        raise DimensionError(
            f"kernel extent {kernel} exceeds padded input {in_extent + 2 * padding}"
        )
    if span % stride != 0:
        raise DimensionError(
            f"non-integral output extent: ({in_extent} + 2*{padding} - {kernel}) "
            f"not divisible by stride {stride}"
        )
    return span // stride + 1


def conv2d(x, kernel, stride: int = 1, padding: int = 0):
    """Cross-correlation of (B, Cin, H, W) with (Cout, Cin, KH, KW)."""
    xd, wd = x.data, kernel.data
    if xd.ndim != 4 or wd.ndim != 4:
        raise DimensionError("conv2d expects rank-4 input and kernel")
    batch, cin, h, w = xd.shape
    cout, cin_k, kh, kw = wd.shape
    if cin != cin_k:
        raise DimensionError(f"input channels {cin} != kernel channels {cin_k}")
    oh = _conv_extent(h, kh, stride, padding)
    ow = _conv_extent(w, kw, stride, padding)

    if padding:
        xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = xd
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (B, Cin, OH, OW, KH, KW)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        batch * oh * ow, cin * kh * kw
    )
    wf = wd.reshape(cout, -1)
    out = (cols @ wf.T).reshape(batch, oh, ow, cout).transpose(0, 3, 1, 2)

    def backward(g):
        gf = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(
            batch * oh * ow, cout
        )
        if kernel.requires_grad:
            _accum(kernel, (gf.T @ cols).reshape(wd.shape))
        if x.requires_grad:
            dcols = (gf @ wf).reshape(batch, oh, ow, cin, kh, kw)
            dcols = dcols.transpose(0, 3, 4, 5, 1, 2)  # (B, Cin, KH, KW, OH, OW)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[
                        :, :, i : i + stride * oh : stride, j : j + stride * ow : stride
                    ] += dcols[:, :, i, j]
            if padding:
                dxp = dxp[:, :, padding : padding + h, padding : padding + w]
            _accum(x, dxp)

    return _result(out, (x, kernel), backward)


def conv1d(x, kernel, stride: int = 1, padding: int = 0):
    """Cross-correlation of (B, Cin, L) with (Cout, Cin, KL)."""
    xd, wd = x.data, kernel.data
    if xd.ndim != 3 or wd.ndim != 3:
        raise DimensionError("conv1d expects rank-3 input and kernel")
    batch, cin, length = xd.shape
    cout, cin_k, kl = wd.shape
    if cin != cin_k:
        raise DimensionError(f"input channels {cin} != kernel channels {cin_k}")
    ol = _conv_extent(length, kl, stride, padding)

    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
    win = np.lib.stride_tricks.sliding_window_view(xp, kl, axis=2)[:, :, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(
        batch * ol, cin * kl
    )
    wf = wd.reshape(cout, -1)
    out = (cols @ wf.T).reshape(batch, ol, cout).transpose(0, 2, 1)

    def backward(g):
        gf = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(batch * ol, cout)
        if kernel.requires_grad:
            _accum(kernel, (gf.T @ cols).reshape(wd.shape))
        if x.requires_grad:
            dcols = (gf @ wf).reshape(batch, ol, cin, kl).transpose(0, 2, 3, 1)
            dxp = np.zeros_like(xp)
            for i in range(kl):
                dxp[:, :, i : i + stride * ol : stride] += dcols[:, :, i]
            if padding:
                dxp = dxp[:, :, padding : padding + length]
            _accum(x, dxp)

    return _result(out, (x, kernel), backward)


# -- normalization and pooling -------------------------------------------


def batch_norm(
    x,
    gamma,
    beta,
    running_mean,
    running_var,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
):
    """Per-feature standardization with learnable scale/shift.

    Features live on axis 1 (axis 1 of (B, F) inputs, the channel axis of
    (B, C, L) / (B, C, H, W) inputs); statistics reduce over the remaining
    axes. In training mode batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place with the given momentum.
    """
    xd = x.data
    if xd.ndim < 2:
        raise DimensionError("batch_norm expects at least rank-2 input")
    if training and xd.shape[0] < 2:
        raise DegenerateBatchError(
            "batch normalization needs a batch of at least 2 in training mode"
        )
    axes = (0,) + tuple(range(2, xd.ndim))
    bshape = (1, xd.shape[1]) + (1,) * (xd.ndim - 2)

    if training:
        mean = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean
        var = running_var

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean.reshape(bshape)) * inv.reshape(bshape)
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def backward(g):
        _accum(gamma, (g * xhat).sum(axis=axes))
        _accum(beta, g.sum(axis=axes))
        if not x.requires_grad:
            return
        dxhat = g * gamma.data.reshape(bshape)
        if training:
            n = xd.size // xd.shape[1]
            s1 = dxhat.sum(axis=axes, keepdims=True)
            s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
            dx = inv.reshape(bshape) / n * (n * dxhat - s1 - xhat * s2)
        else:
            dx = dxhat * inv.reshape(bshape)
        _accum(x, dx)

    return _result(out, (x, gamma, beta), backward)


def global_average_pool(x):
    """Mean over all axes past the channel axis: (B, C, ...) -> (B, C)."""
    if x.ndim < 3:
        raise DimensionError("global_average_pool expects rank >= 3 input")
    axes = tuple(range(2, x.ndim))
    count = int(np.prod([x.shape[ax] for ax in axes]))
    out = x.data.mean(axis=axes)

    def backward(g):
        _accum(
            x,
            np.broadcast_to(
                g.reshape(g.shape + (1,) * len(axes)), x.shape
            )
            / count,
        )

    return _result(out, (x,), backward)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of integer ``labels`` under ``logits`` rows.

    Numerically stabilized by per-row max subtraction.
    """
    ld = logits.data
    if ld.ndim != 2:
        raise DimensionError("softmax_cross_entropy expects (batch, classes) logits")
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != ld.shape[0]:
        raise DimensionError("labels must be a vector matching the batch size")
    num_classes = ld.shape[1]
    if labels.min() < 0 or labels.max() >= num_classes:
        raise LabelError(
            f"labels must lie in [0, {num_classes}); got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    batch = ld.shape[0]
    shifted = ld - ld.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    z = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(z)
    loss = -log_probs[np.arange(batch), labels].mean()

    def backward(g):
        grad = exp / z
        grad[np.arange(batch), labels] -= 1.0
        _accum(logits, g * grad / batch)

    return _result(np.asarray(loss, dtype=ld.dtype), (logits,), backward)
