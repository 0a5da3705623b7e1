"""A small reverse-mode autodiff over numpy arrays.

Only what the receiver needs: broadcasting arithmetic, reductions, reshapes,
2-D convolution (NCHW, stride 1, zero padding), ReLU, a logistic BCE and the
max-log demapper. Gradients accumulate in the dtype of the values, so a
float64 graph gives float64 gradients (used by the gradient checks).
"""

import numpy as np
from scipy.special import expit
from numpy.lib.stride_tricks import sliding_window_view


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, parents=(), backward=None):
        self.value = np.asarray(value)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def backward(self, grad=None):
        backward(self, grad)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, fn):
    req = any(p.requires_grad for p in parents)
    return Tensor(value, req, parents if req else (), fn if req else None)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(i, keepdims=True)
    return g


def _acc(t, g):
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def backward(root, grad=None):
    """Reverse pass from ``root``; parameters not reached keep ``grad = None``."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    if grad is None:
        if root.value.size != 1:
            raise ValueError("backward needs an explicit gradient for non-scalar outputs")
        grad = np.ones_like(root.value)
    root.grad = np.asarray(grad, dtype=root.value.dtype)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def fn(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, _unbroadcast(g, b.shape))
    return _node(a.value + b.value, (a, b), fn)


def neg(a):
    return _node(-a.value, (a,), lambda g: _acc(a, -g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def fn(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g * b.value, a.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(g * a.value, b.shape))
    return _node(a.value * b.value, (a, b), fn)


def relu(a):
    mask = a.value > 0
    return _node(np.where(mask, a.value, 0), (a,), lambda g: _acc(a, g * mask))


def square(a):
    return _node(a.value * a.value, (a,), lambda g: _acc(a, 2 * g * a.value))


# ---------------------------------------------------------------- shape ops

def reshape(a, shape):
    return _node(a.value.reshape(shape), (a,), lambda g: _acc(a, g.reshape(a.shape)))


def transpose(a, axes):
    inv = np.argsort(axes)
    return _node(a.value.transpose(axes), (a,), lambda g: _acc(a, g.transpose(inv)))


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def fn(g):
        for t, part in zip(tensors, np.split(g, sizes, axis=axis)):
            _acc(t, part)
    return _node(np.concatenate([t.value for t in tensors], axis=axis), tuple(tensors), fn)


def take(a, index, axis):
    """Gather along ``axis`` with an integer index array."""
    index = np.asarray(index)

    def fn(g):
        out = np.zeros_like(a.value)
        sl = [slice(None)] * a.value.ndim
        sl[axis] = index
        np.add.at(out, tuple(sl), g)
        _acc(a, out)
    return _node(np.take(a.value, index, axis=axis), (a,), fn)


def getitem(a, key):
    def fn(g):
        out = np.zeros_like(a.value)
        out[key] = g
        _acc(a, out)
    return _node(a.value[key], (a,), fn)


# ---------------------------------------------------------------- reductions

def sum_(a, axis=None, keepdims=False):
    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _acc(a, np.broadcast_to(g, a.shape).copy())
    return _node(a.value.sum(axis=axis, keepdims=keepdims), (a,), fn)


def mean(a, axis=None, keepdims=False):
    n = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def fn(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape))
    return _node(a.value @ b.value, (a, b), fn)


# ---------------------------------------------------------------- convolution

def _pad_hw(x, ph, pw):
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def conv2d(x, w, b=None):
    """Same-size 2-D convolution (cross-correlation); x (N, C, H, W), w (O, C, kh, kw)."""
    x, w = as_tensor(x), as_tensor(w)
    o, c, kh, kw = w.shape
    if x.shape[1] != c:
        raise ValueError(f"conv2d expects {c} input channels, got {x.shape[1]}")
    ph, pw = kh // 2, kw // 2
    cols = sliding_window_view(_pad_hw(x.value, ph, pw), (kh, kw), axis=(2, 3))  # N C H W kh kw
    y = np.tensordot(cols, w.value, axes=([1, 4, 5], [1, 2, 3]))  # N H W O
    y = y.transpose(0, 3, 1, 2)
    parents = (x, w)
    if b is not None:
        b = as_tensor(b)
        y = y + b.value[None, :, None, None]
        parents = (x, w, b)

    def fn(g):
        if w.requires_grad:
            _acc(w, np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3])))
        if b is not None and b.requires_grad:
            _acc(b, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gp = sliding_window_view(_pad_hw(g, kh - 1 - ph, kw - 1 - pw), (kh, kw), axis=(2, 3))
            wf = w.value[:, :, ::-1, ::-1]
            dx = np.tensordot(gp, wf, axes=([1, 4, 5], [0, 2, 3]))  # N H W C
            _acc(x, dx.transpose(0, 3, 1, 2))
    return _node(np.ascontiguousarray(y), parents, fn)


# ---------------------------------------------------------------- losses and demapping

def bce_with_llr(llr, target_bits):
    """Mean binary cross-entropy of bits given LLR = log P(0)/P(1)."""
    llr = as_tensor(llr)
    t = np.asarray(target_bits)
    if t.shape != llr.shape:
        from .errors import LengthMismatch
        raise LengthMismatch(f"{llr.shape} LLRs vs {t.shape} targets")
    s = 1.0 - 2.0 * t.astype(llr.value.dtype)  # +1 for bit 0
    x = s * llr.value
    loss = np.mean(np.logaddexp(0, -x))

    def fn(g):
        # d/dx softplus(-x) = -sigmoid(-x)
        sig = expit(-x)
        _acc(llr, g * (-sig * s) / x.size)
    return _node(np.asarray(loss, dtype=llr.value.dtype), (llr,), fn)


def maxlog(z_re, z_im, g, noise_var, levels, label_bits):
    """Max-log LLRs from matched-filter statistics, differentiable in z and g.

    ``levels`` are the PAM amplitudes of one axis and ``label_bits`` their
    (n_levels, m) Gray labels. Output has a trailing axis of 2m bits ordered
    I0, Q0, I1, Q1, ... (MSB first on each axis, interleaved as in QAM).
    ``noise_var`` broadcasts against ``g`` and is not differentiated.
    """
    z_re, z_im, g = as_tensor(z_re), as_tensor(z_im), as_tensor(g)
    m = label_bits.shape[1]
    nv = np.asarray(noise_var)[..., None]
    gv = g.value[..., None]
    lv = levels.astype(g.value.dtype)
    outs, picks = [], []
    for comp in (z_re.value, z_im.value):
        metric = gv * lv ** 2 - 2.0 * comp[..., None] * lv
        cols, sel = [], []
        for i in range(m):
            m1 = np.where(label_bits[:, i], metric, np.inf)
            m0 = np.where(label_bits[:, i], np.inf, metric)
            a1 = lv[np.argmin(m1, -1)]
            a0 = lv[np.argmin(m0, -1)]
            cols.append((m1.min(-1) - m0.min(-1)))
            sel.append((a1, a0))
        outs.append(cols)
        picks.append(sel)
    llr = np.stack([outs[ax][i] for i in range(m) for ax in (0, 1)], axis=-1) / nv

    def fn(gr):
        gr = gr / nv
        dzr = np.zeros_like(z_re.value)
        dzi = np.zeros_like(z_im.value)
        dg = np.zeros_like(g.value)
        for i in range(m):
            for ax, dz in ((0, dzr), (1, dzi)):
                a1, a0 = picks[ax][i]
                gi = gr[..., 2 * i + ax]
                dz += gi * (-2 * a1 + 2 * a0)
                dg += gi * (a1 ** 2 - a0 ** 2)
        _acc(z_re, dzr)
        _acc(z_im, dzi)
        _acc(g, dg)
    return _node(llr, (z_re, z_im, g), fn)


# ---------------------------------------------------------------- optimiser

class Adam:
    """Adaptive-moment optimiser over a flat parameter vector."""

    def __init__(self, n_params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params, grad, learning_rate):
        """Returns the updated parameter vector; ``params`` is not modified."""
        from .errors import ShapeMismatch
        if params.shape != grad.shape or params.shape != self.m.shape:
            raise ShapeMismatch(f"params {params.shape}, grad {grad.shape}, state {self.m.shape}")
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return (params - learning_rate * mhat / (np.sqrt(vhat) + self.eps)).astype(params.dtype)
