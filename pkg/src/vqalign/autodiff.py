"""Reverse-mode automatic differentiation over dense float64 arrays.

A small dynamically-recorded graph: every operation returns a new
:class:`Tensor` holding the forward value and, when gradients are enabled,
a closure that accumulates gradients into its parents. ``backward`` walks
the graph once from a scalar root. There is no broadcasting magic beyond
what numpy itself does; reductions over broadcast axes happen in the
backward closures.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import NumericError, ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / finite differences)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _expit(x):
    # numerically stable logistic
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (undo numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array plus an optional gradient and graph bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw")

    def __init__(self, data, requires_grad=False, _parents=(), _bw=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._bw = _bw

    # -- introspection ----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- backward ---------------------------------------------------------
    def backward(self):
        """Accumulate gradients of this scalar into every reachable ancestor."""
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar root, got shape {self.shape}")
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
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._bw is not None and node.grad is not None:
                node._bw(node.grad)

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        out = _node(self.data + other.data, (self, other))
        if out._parents:

            def bw(g):
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g, self.data.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(g, other.data.shape))

            out._bw = bw
        return out

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __neg__(self):
        out = _node(-self.data, (self,))
        if out._parents:
            out._bw = lambda g: self._accumulate(-g)
        return out

    def __mul__(self, other):
        other = as_tensor(other)
        out = _node(self.data * other.data, (self, other))
        if out._parents:

            def bw(g):
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g * other.data, self.data.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(g * self.data, other.data.shape))

            out._bw = bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out = _node(self.data / other.data, (self, other))
        if out._parents:

            def bw(g):
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g / other.data, self.data.shape))
                if other.requires_grad:
                    other._accumulate(
                        _unbroadcast(-g * self.data / other.data**2, other.data.shape)
                    )

            out._bw = bw
        return out

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __getitem__(self, key):
        out = _node(self.data[key], (self,))
        if out._parents:

            def bw(g):
                full = np.zeros_like(self.data)
                full[key] += g
                self._accumulate(full)

            out._bw = bw
        return out

    # -- shaping ----------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _node(self.data.reshape(shape), (self,))
        if out._parents:
            out._bw = lambda g: self._accumulate(g.reshape(self.data.shape))
        return out

    # -- reductions -------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        out = _node(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out._parents:

            def bw(g):
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(g, self.data.shape).copy())

            out._bw = bw
        return out

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        else:
            n = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- elementwise functions --------------------------------------------
    def exp(self):
        val = np.exp(self.data)
        out = _node(val, (self,))
        if out._parents:
            out._bw = lambda g: self._accumulate(g * val)
        return out

    def sigmoid(self):
        val = _expit(self.data)
        out = _node(val, (self,))
        if out._parents:
            out._bw = lambda g: self._accumulate(g * val * (1.0 - val))
        return out

    def tanh(self):
        val = np.tanh(self.data)
        out = _node(val, (self,))
        if out._parents:
            out._bw = lambda g: self._accumulate(g * (1.0 - val * val))
        return out

    def sqrt(self):
        val = np.sqrt(self.data)
        out = _node(val, (self,))
        if out._parents:
            out._bw = lambda g: self._accumulate(g * 0.5 / val)
        return out

    def abs(self):
        out = _node(np.abs(self.data), (self,))
        if out._parents:
            out._bw = lambda g: self._accumulate(g * np.sign(self.data))
        return out

    def relu(self):
        out = _node(np.maximum(self.data, 0.0), (self,))
        if out._parents:
            out._bw = lambda g: self._accumulate(g * (self.data > 0.0))
        return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents):
    """Result tensor; keeps parent links only when a gradient can flow."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        t = Tensor(data, requires_grad=True, _parents=tuple(parents))
    else:
        t = Tensor(data)
    return t


# -- linear algebra -------------------------------------------------------


def affine(x, W, b):
    """``y = x @ W.T + b`` along the last axis of ``x``.

    ``x`` has shape [..., n], ``W`` [m, n], ``b`` [m]; result is [..., m].
    """
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if W.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise ShapeError(f"affine: x {x.shape} incompatible with W {W.shape}")
    if b.shape != (W.shape[0],):
        raise ShapeError(f"affine: b {b.shape} incompatible with W {W.shape}")
    out = _node(x.data @ W.data.T + b.data, (x, W, b))
    if out._parents:

        def bw(g):
            if x.requires_grad:
                x._accumulate(g @ W.data)
            if W.requires_grad:
                g2 = g.reshape(-1, g.shape[-1])
                x2 = x.data.reshape(-1, x.data.shape[-1])
                W._accumulate(g2.T @ x2)
            if b.requires_grad:
                b._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))

        out._bw = bw
    return out


def matmul_t(x, W):
    """``x @ W.T`` without a bias term."""
    x, W = as_tensor(x), as_tensor(W)
    if W.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise ShapeError(f"matmul_t: x {x.shape} incompatible with W {W.shape}")
    out = _node(x.data @ W.data.T, (x, W))
    if out._parents:

        def bw(g):
            if x.requires_grad:
                x._accumulate(g @ W.data)
            if W.requires_grad:
                g2 = g.reshape(-1, g.shape[-1])
                x2 = x.data.reshape(-1, x.data.shape[-1])
                W._accumulate(g2.T @ x2)

        out._bw = bw
    return out


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = _node(np.stack([t.data for t in tensors], axis=axis), tuple(tensors))
    if out._parents:

        def bw(g):
            pieces = np.split(g, len(tensors), axis=axis)
            for t, piece in zip(tensors, pieces):
                if t.requires_grad:
                    t._accumulate(np.squeeze(piece, axis=axis))

        out._bw = bw
    return out


def gather_last(x, idx):
    """Index the last axis of ``x`` with an integer array ``idx``.

    For ``x`` of shape [..., T] and ``idx`` of shape [T, W] the result is
    [..., T, W]; the backward pass scatter-adds (window positions overlap).
    """
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    out = _node(x.data[..., idx], (x,))
    if out._parents:

        def bw(g):
            full = np.zeros_like(x.data)
            if x.data.ndim == 1:
                np.add.at(full, idx, g)
            elif x.data.ndim == 2:
                rows = np.arange(x.data.shape[0])[:, None, None]
                np.add.at(full, (rows, idx[None]), g)
            else:
                raise ShapeError(f"gather_last supports 1-D or 2-D inputs, got {x.shape}")
            x._accumulate(full)

        out._bw = bw
    return out


def masked_min_last(x, valid):
    """Minimum over the last axis restricted to ``valid`` positions.

    Subgradient convention: the entire gradient goes to the minimiser with
    the lowest index (numpy argmin tie-breaking). Every slice must contain
    at least one valid entry.
    """
    x = as_tensor(x)
    valid = np.asarray(valid, dtype=bool)
    screened = np.where(valid, x.data, np.inf)
    arg = np.argmin(screened, axis=-1)
    val = np.take_along_axis(screened, arg[..., None], axis=-1)[..., 0]
    if not np.isfinite(val).all():
        raise NumericError("masked_min_last: a slice has no valid entries")
    out = _node(val, (x,))
    if out._parents:

        def bw(g):
            full = np.zeros_like(x.data)
            np.put_along_axis(full, arg[..., None], g[..., None], axis=-1)
            x._accumulate(full)

        out._bw = bw
    return out


# -- gated recurrent unit -------------------------------------------------


class GRUParams:
    """Weights for one GRU layer.

    Gates: z = sigmoid(W_xz x + W_hz h + b_z), r likewise; candidate
    n = tanh(W_xn x + b_xn + r * (W_hn h + b_hn)); h' = z*h + (1-z)*n.
    """

    __slots__ = (
        "W_xz", "W_hz", "b_z",
        "W_xr", "W_hr", "b_r",
        "W_xn", "b_xn", "W_hn", "b_hn",
    )

    def __init__(self, W_xz, W_hz, b_z, W_xr, W_hr, b_r, W_xn, b_xn, W_hn, b_hn):
        self.W_xz, self.W_hz, self.b_z = W_xz, W_hz, b_z
        self.W_xr, self.W_hr, self.b_r = W_xr, W_hr, b_r
        self.W_xn, self.b_xn = W_xn, b_xn
        self.W_hn, self.b_hn = W_hn, b_hn

    @property
    def input_dim(self):
        return self.W_xz.shape[1]

    @property
    def hidden_dim(self):
        return self.W_hz.shape[0]

    def named_tensors(self):
        return [(name, getattr(self, name)) for name in self.__slots__]


def gru_cell(x, h_prev, p: GRUParams):
    """One GRU step; ``x`` is [..., n_in], ``h_prev`` is [..., n_h]."""
    x, h_prev = as_tensor(x), as_tensor(h_prev)
    if x.shape[-1] != p.input_dim:
        raise ShapeError(f"gru_cell: x {x.shape} does not match input dim {p.input_dim}")
    if h_prev.shape[-1] != p.hidden_dim:
        raise ShapeError(
            f"gru_cell: h_prev {h_prev.shape} does not match hidden dim {p.hidden_dim}"
        )
    z = (affine(x, p.W_xz, p.b_z) + matmul_t(h_prev, p.W_hz)).sigmoid()
    r = (affine(x, p.W_xr, p.b_r) + matmul_t(h_prev, p.W_hr)).sigmoid()
    n = (affine(x, p.W_xn, p.b_xn) + r * affine(h_prev, p.W_hn, p.b_hn)).tanh()
    return z * h_prev + (1.0 - z) * n


def seq_gru(xs, h0, p: GRUParams):
    """Unrolled GRU over time.

    ``xs`` is [T, n_in] or [B, T, n_in]; returns hidden states of shape
    [T, n_h] or [B, T, n_h]. ``h0`` defaults to zeros. The three input-side
    affine maps are applied to the whole sequence up front.
    """
    xs = as_tensor(xs)
    if xs.ndim not in (2, 3):
        raise ShapeError(f"seq_gru expects [T,n_in] or [B,T,n_in], got {xs.shape}")
    t_axis = xs.ndim - 2
    steps = xs.shape[t_axis]
    if steps < 1:
        raise ShapeError("seq_gru: empty sequence")
    if h0 is None:
        h_shape = xs.shape[:t_axis] + (p.hidden_dim,)
        h = Tensor(np.zeros(h_shape))
    else:
        h = as_tensor(h0)
    xz = affine(xs, p.W_xz, p.b_z)
    xr = affine(xs, p.W_xr, p.b_r)
    xn = affine(xs, p.W_xn, p.b_xn)
    taker = (lambda s, t: s[t]) if t_axis == 0 else (lambda s, t: s[:, t])
    outs = []
    for t in range(steps):
        z = (taker(xz, t) + matmul_t(h, p.W_hz)).sigmoid()
        r = (taker(xr, t) + matmul_t(h, p.W_hr)).sigmoid()
        n = (taker(xn, t) + r * affine(h, p.W_hn, p.b_hn)).tanh()
        h = z * h + (1.0 - z) * n
        outs.append(h)
    return stack(outs, axis=t_axis)


# -- gradient checking ----------------------------------------------------


def grad_check(f, inputs, eps=1e-5):
    """Compare analytic gradients of scalar ``f(*inputs)`` to central differences.

    Returns the maximum over all input entries of
    ``|analytic - numeric| / max(1, |numeric|)``.
    """
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = f(*inputs)
    if out.size != 1:
        raise ShapeError(f"grad_check target must be scalar, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise NumericError("grad_check: function value is not finite")
    out.backward()
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs
    ]

    worst = 0.0
    with no_grad():
        for t, ga in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            gflat = ga.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = float(f(*inputs).data)
                flat[i] = orig - eps
                fm = float(f(*inputs).data)
                flat[i] = orig
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    raise NumericError("grad_check: perturbed evaluation is not finite")
                numeric = (fp - fm) / (2.0 * eps)
                err = abs(gflat[i] - numeric) / max(1.0, abs(numeric))
                worst = max(worst, err)
    return worst
