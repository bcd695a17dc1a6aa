"""Reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Tensor` wraps an ``np.float64`` array together with an optional
gradient buffer and the closure needed to propagate adjoints to its
parents.  The graph is built eagerly by the ops below and traversed once,
in reverse topological order, by :meth:`Tensor.backward`.

Conventions (fixed, relied on by the rest of the package):

* all arithmetic is float64; inputs are coerced on construction
* ``backward()`` must start from a scalar (size-1) root
* a second ``backward()`` without ``zero_grad()`` accumulates into the
  existing ``.grad`` buffers (deterministically); callers that want fresh
  gradients must reset explicitly
* gradient recording can be suspended with ``no_grad()``; inside the
  context the ops compute values only
* 1-D convolution uses the cross-correlation convention (no kernel flip)
  with symmetric zero padding
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "concat",
    "conv1d",
    "avgpool1d",
    "dropout",
    "logsumexp",
]

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._saved = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._saved
        return False


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _make(data, parents, vjp):
        """Result node; records the closure only when it can matter."""
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._vjp = vjp
        return out

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64)
        else:
            self.grad += grad

    def backward(self):
        """Reverse pass from a scalar root.

        Leaf gradients accumulate across repeated calls (one fresh pass
        is added each time); interior-node gradients are reset at the
        start of every pass.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar root, got shape {self.data.shape}"
            )
        # iterative topological sort (graphs can be deep)
        topo, visited, stack = [], set(), [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        for node in topo:
            if node._vjp is not None:
                node.grad = None
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._vjp is not None:
                node._vjp(node.grad)

    # -- helpers -------------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = _lift(other)
        a, b = self, other

        def vjp(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.data.shape))

        return Tensor._make(a.data + b.data, (a, b), vjp)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def vjp(g):
            if a.requires_grad:
                a._accumulate(-g)

        return Tensor._make(-a.data, (a,), vjp)

    def __sub__(self, other):
        return self + (-_lift(other))

    def __rsub__(self, other):
        return _lift(other) + (-self)

    def __mul__(self, other):
        other = _lift(other)
        a, b = self, other

        def vjp(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))

        return Tensor._make(a.data * b.data, (a, b), vjp)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _lift(other)
        a, b = self, other

        def vjp(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

        return Tensor._make(a.data / b.data, (a, b), vjp)

    def __rtruediv__(self, other):
        return _lift(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only constant exponents are supported")
        a, c = self, float(exponent)

        def vjp(g):
            if a.requires_grad:
                a._accumulate(g * c * a.data ** (c - 1.0))

        return Tensor._make(a.data**c, (a,), vjp)

    def __matmul__(self, other):
        other = _lift(other)
        a, b = self, other
        if a.data.ndim != 2 or b.data.ndim != 2:
            raise ValueError(
                f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}"
            )

        def vjp(g):
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ g)

        return Tensor._make(a.data @ b.data, (a, b), vjp)

    # -- elementwise nonlinearities -------------------------------------------

    def relu(self):
        a = self
        out_data = np.maximum(a.data, 0.0)

        def vjp(g):
            if a.requires_grad:
                a._accumulate(g * (a.data > 0.0))

        return Tensor._make(out_data, (a,), vjp)

    def tanh(self):
        a = self
        t = np.tanh(a.data)

        def vjp(g):
            if a.requires_grad:
                a._accumulate(g * (1.0 - t * t))

        return Tensor._make(t, (a,), vjp)

    def exp(self):
        a = self
        e = np.exp(a.data)

        def vjp(g):
            if a.requires_grad:
                a._accumulate(g * e)

        return Tensor._make(e, (a,), vjp)

    def log(self):
        a = self

        def vjp(g):
            if a.requires_grad:
                a._accumulate(g / a.data)

        return Tensor._make(np.log(a.data), (a,), vjp)

    def sigmoid(self):
        a = self
        # stable in both tails
        s = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                     np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))

        def vjp(g):
            if a.requires_grad:
                a._accumulate(g * s * (1.0 - s))

        return Tensor._make(s, (a,), vjp)

    def clip(self, lo, hi):
        """Hard clamp; gradient passes only strictly inside (lo, hi)."""
        a = self
        inside = (a.data > lo) & (a.data < hi)

        def vjp(g):
            if a.requires_grad:
                a._accumulate(g * inside)

        return Tensor._make(np.clip(a.data, lo, hi), (a,), vjp)

    # -- reductions / shaping --------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self

        def vjp(g):
            if not a.requires_grad:
                return
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.data.shape))
                return
            gg = g
            if not keepdims:
                gg = np.expand_dims(gg, axis)
            a._accumulate(np.broadcast_to(gg, a.data.shape))

        return Tensor._make(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        a = self
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]

        def vjp(g):
            if a.requires_grad:
                a._accumulate(g.reshape(a.data.shape))

        return Tensor._make(a.data.reshape(shape), (a,), vjp)

    @property
    def T(self):
        a = self

        def vjp(g):
            if a.requires_grad:
                a._accumulate(g.T)

        return Tensor._make(a.data.T, (a,), vjp)

    def __getitem__(self, key):
        a = self

        def vjp(g):
            if a.requires_grad:
                buf = np.zeros_like(a.data)
                np.add.at(buf, key, g)
                a._accumulate(buf)

        return Tensor._make(a.data[key], (a,), vjp)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(tensors, axis):
    tensors = [_lift(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return Tensor._make(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp
    )


def logsumexp(x, axis=-1):
    """log(sum(exp(x))) along `axis`; gradient is the softmax."""
    x = _lift(x)
    m = x.data.max(axis=axis, keepdims=True)
    out_data = np.squeeze(m, axis=axis) + np.log(
        np.exp(x.data - m).sum(axis=axis)
    )
    soft = np.exp(x.data - np.expand_dims(out_data, axis))

    def vjp(g):
        if x.requires_grad:
            x._accumulate(np.expand_dims(g, axis) * soft)

    return Tensor._make(out_data, (x,), vjp)


# -- network primitives ----------------------------------------------------------


def _im2col(xp, l_out, k, stride):
    """(B, C, Lp) -> (B, C*k, l_out) column matrix via contiguous copies."""
    b_sz, c, _ = xp.shape
    cols = np.empty((b_sz, c * k, l_out))
    for i in range(c):
        for j in range(k):
            cols[:, i * k + j, :] = xp[:, i, j : j + l_out * stride : stride]
    return cols


def _col2im(gcols, xp_shape, l_out, k, stride):
    """Adjoint of :func:`_im2col`: scatter-add columns back to (B, C, Lp)."""
    gxp = np.zeros(xp_shape)
    c = xp_shape[1]
    for i in range(c):
        for j in range(k):
            gxp[:, i, j : j + l_out * stride : stride] += gcols[:, i * k + j, :]
    return gxp


def conv1d(x, weight, bias, stride=1, padding=0):
    """Batched 1-D cross-correlation.

    Parameters
    ----------
    x : Tensor, shape (channels_in, length) or (batch, channels_in, length)
    weight : Tensor, shape (channels_out, channels_in, k)
    bias : Tensor, shape (channels_out,)
    stride : positive int
    padding : symmetric zero padding, non-negative int

    Returns a Tensor of shape (..., channels_out, out_length) with
    ``out_length = (length + 2*padding - k)//stride + 1``.
    """
    x, weight, bias = _lift(x), _lift(weight), _lift(bias)
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    if padding < 0:
        raise ValueError(f"padding must be non-negative, got {padding}")
    single = x.data.ndim == 2
    xd = x.data[None] if single else x.data
    if xd.ndim != 3:
        raise ValueError(f"conv1d input must be 2-D or 3-D, got shape {x.data.shape}")
    if weight.data.ndim != 3:
        raise ValueError(f"kernel must be 3-D, got shape {weight.data.shape}")
    b_sz, c_in, length = xd.shape
    c_out, c_in_w, k = weight.data.shape
    if c_in_w != c_in:
        raise ValueError(
            f"kernel expects {c_in_w} input channels, input has {c_in}"
        )
    if bias.data.shape != (c_out,):
        raise ValueError(
            f"bias must have shape ({c_out},), got {bias.data.shape}"
        )
    if length + 2 * padding < k:
        raise ValueError(
            f"input length {length} with padding {padding} is shorter than kernel {k}"
        )
    l_out = (length + 2 * padding - k) // stride + 1
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding)))
    # Large stride-1 kernels go through FFT (identical cross-correlation,
    # far less memory traffic than materializing patch columns).
    if stride == 1 and k >= 16 and l_out >= 128:
        out_data, vjp = _conv_fft(x, weight, bias, xp, k, l_out, padding,
                                  length, single)
    else:
        out_data, vjp = _conv_im2col(x, weight, bias, xp, k, l_out, stride,
                                     padding, length, single)
    out_data += bias.data[:, None]
    return Tensor._make(out_data[0] if single else out_data, (x, weight, bias), vjp)


def _conv_im2col(x, weight, bias, xp, k, l_out, stride, padding, length, single):
    c_out, c_in = weight.data.shape[:2]
    cols = _im2col(xp, l_out, k, stride)  # (B, cin*k, l_out)
    w2d = weight.data.reshape(c_out, c_in * k)
    out_data = np.matmul(w2d, cols)

    def vjp(g):
        gb = g[None] if single else g
        if weight.requires_grad:
            gw = np.matmul(gb, cols.transpose(0, 2, 1)).sum(axis=0)
            weight._accumulate(gw.reshape(c_out, c_in, k))
        if bias.requires_grad:
            bias._accumulate(gb.sum(axis=(0, 2)))
        if x.requires_grad:
            gcols = np.matmul(w2d.T, gb)
            gxp = _col2im(gcols, xp.shape, l_out, k, stride)
            gx = gxp[:, :, padding : padding + length]
            x._accumulate(gx[0] if single else gx)

    return out_data, vjp


def _conv_fft(x, weight, bias, xp, k, l_out, padding, length, single):
    """Stride-1 correlation via length-Lp circular FFT.

    The circular wrap of the linear convolution only touches the first
    k - 1 output positions, which are discarded, so the result is exact
    up to FFT rounding.
    """
    lp = xp.shape[2]
    xf = np.fft.rfft(xp, axis=-1)
    wf = np.fft.rfft(weight.data[:, :, ::-1], n=lp, axis=-1)
    out_data = np.fft.irfft(
        np.einsum("bif,oif->bof", xf, wf), n=lp, axis=-1
    )[:, :, k - 1 :]

    def vjp(g):
        gb = g[None] if single else g
        gf = np.fft.rfft(gb, n=lp, axis=-1)
        if weight.requires_grad:
            xg = np.einsum("bif,bof->oif", xf, np.conj(gf))
            gw = np.fft.irfft(xg, n=lp, axis=-1)[:, :, :k]
            weight._accumulate(gw)
        if bias.requires_grad:
            bias._accumulate(gb.sum(axis=(0, 2)))
        if x.requires_grad:
            wf_fwd = np.fft.rfft(weight.data, n=lp, axis=-1)
            gxp = np.fft.irfft(
                np.einsum("bof,oif->bif", gf, wf_fwd), n=lp, axis=-1
            )
            gx = gxp[:, :, padding : padding + length]
            x._accumulate(gx[0] if single else gx)

    return out_data, vjp


def avgpool1d(x, window):
    """Non-overlapping average pooling; a trailing remainder is discarded."""
    x = _lift(x)
    if window < 1:
        raise ValueError(f"pooling window must be >= 1, got {window}")
    single = x.data.ndim == 2
    xd = x.data[None] if single else x.data
    b_sz, c, length = xd.shape
    l_out = length // window
    if l_out == 0:
        raise ValueError(
            f"pooling window {window} larger than input length {length}"
        )
    out_data = xd[:, :, : l_out * window].reshape(b_sz, c, l_out, window).mean(axis=-1)

    def vjp(g):
        gb = g[None] if single else g
        if x.requires_grad:
            gx = np.zeros_like(xd)
            gx[:, :, : l_out * window] = np.repeat(gb / window, window, axis=-1)
            x._accumulate(gx[0] if single else gx)

    return Tensor._make(out_data[0] if single else out_data, (x,), vjp)


def dropout(x, rate, training, rng=None):
    """Inverted dropout: kept units are scaled by 1/(1-rate) in training
    mode; evaluation mode is the identity. Consumes exactly one uniform
    array from `rng` per training-mode call."""
    x = _lift(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout requires an rng stream")
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return x * Tensor(mask)
