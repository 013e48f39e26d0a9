"""Dense float64 tensors with reverse-mode automatic differentiation.

Minimal graph engine: every operation returns a new Tensor that remembers
its parents and a vector-Jacobian-product closure. `backward` walks the
recorded graph once in reverse topological order and accumulates exact
gradients into every tensor with requires_grad set. All arithmetic is
double precision and deterministic.
"""

from __future__ import annotations

import numpy as np

Array = np.ndarray

NEG_INF = float("-inf")


class Tensor:
    """N-dimensional float64 value participating in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "name")

    def __init__(self, data, requires_grad: bool = False, parents=(), vjp=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self._parents = parents
        self._vjp = vjp
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    # Operator sugar; mixed operands must already be Tensors.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data, name: str | None = None) -> Tensor:
    """A learnable leaf tensor."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _node(data: Array, parents: tuple[Tensor, ...], vjp) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, vjp=vjp)
    return Tensor(data)


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(out, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _node(out, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _node(out, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python float (not part of the graph)."""
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,))


def shift(a: Tensor, c: float) -> Tensor:
    """Add a python float (not part of the graph)."""
    return _node(a.data + float(c), (a,), lambda g: (g,))


def cmul(a: Tensor, arr) -> Tensor:
    """Multiply by a constant array (e.g. a validity mask)."""
    arr = np.asarray(arr, dtype=np.float64)
    return _node(a.data * arr, (a,), lambda g: (_unbroadcast(g * arr, a.data.shape),))


def square(a: Tensor) -> Tensor:
    return _node(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def silu(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = a.data * s

    def vjp(g):
        return (g * s * (1.0 + a.data * (1.0 - s)),)

    return _node(out, (a,), vjp)


# ---------------------------------------------------------------------------
# reductions and reshaping
# ---------------------------------------------------------------------------


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _node(out, (a,), vjp)


def mean_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        n = a.data.shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape) / n,)

    return _node(out, (a,), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.data.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def transpose2d(a: Tensor) -> Tensor:
    return _node(a.data.T.copy(), (a,), lambda g: (g.T.copy(),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.array_split(g, splits, axis=axis))

    return _node(out, tuple(tensors), vjp)


def rows(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice along axis 0."""
    out = a.data[start:stop]

    def vjp(g):
        gx = np.zeros_like(a.data)
        gx[start:stop] = g
        return (gx,)

    return _node(out, (a,), vjp)


def gather_rows(a: Tensor, idx) -> Tensor:
    """Row lookup: out[i] = a[idx[i]]. Used for embeddings and expansion."""
    idx = np.asarray(idx, dtype=np.intp)
    out = a.data[idx]

    def vjp(g):
        gx = np.zeros_like(a.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _node(out, (a,), vjp)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    out = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _node(out, (a, b), vjp)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b). Weights stored (fan_in, fan_out)."""
    y = matmul(x, w)
    return add(y, b) if b is not None else y


# ---------------------------------------------------------------------------
# normalization and activations over sequences
# ---------------------------------------------------------------------------

RMS_EPS = 1e-6


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    # fully masked slices are rejected upstream; m is finite here
    e = np.exp(x - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (out * g).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _node(out, (a,), vjp)


def rms_norm(a: Tensor, gain: Tensor, eps: float = RMS_EPS) -> Tensor:
    """Scale each last-axis slice to unit RMS, then multiply by gain."""
    x = a.data
    if x.shape[-1] == 0:
        raise ValueError("rms_norm: zero-length last axis")
    if gain.data.shape != (x.shape[-1],):
        raise ValueError("rms_norm: gain must match last axis")
    d = x.shape[-1]
    ms = (x * x).mean(axis=-1, keepdims=True) + eps
    r = np.sqrt(ms)
    u = x / r
    out = u * gain.data

    def vjp(g):
        gg = g * gain.data
        gx = gg / r - x * ((gg * x).sum(axis=-1, keepdims=True) / (d * ms * r))
        ggain = _unbroadcast(g * u, gain.data.shape)
        return gx, ggain

    return _node(out, (a, gain), vjp)


def depthwise_conv1d(x: Tensor, kernels: Tensor) -> Tensor:
    """Per-channel 1-D cross-correlation with zero padding, length preserved.

    x is (channels, length), kernels (channels, k) with odd k; output column j
    mixes input columns j-k//2 .. j+k//2 of the same channel only.
    """
    xd, kd = x.data, kernels.data
    if xd.ndim != 2 or kd.ndim != 2:
        raise ValueError("depthwise_conv1d expects 2-D inputs")
    c, length = xd.shape
    ck, k = kd.shape
    if ck != c:
        raise ValueError("depthwise_conv1d: channel counts differ")
    if k % 2 == 0:
        raise ValueError("depthwise_conv1d: kernel width must be odd")
    pad = k // 2
    xp = np.zeros((c, length + 2 * pad))
    xp[:, pad:pad + length] = xd
    out = np.zeros((c, length))
    for t in range(k):
        out += kd[:, t:t + 1] * xp[:, t:t + length]

    def vjp(g):
        gxp = np.zeros_like(xp)
        gk = np.zeros_like(kd)
        for t in range(k):
            gxp[:, t:t + length] += kd[:, t:t + 1] * g
            gk[:, t] = (g * xp[:, t:t + length]).sum(axis=1)
        return gxp[:, pad:pad + length], gk

    return _node(out, (x, kernels), vjp)


def row_l2norm(a: Tensor) -> Tensor:
    """Euclidean norm of each row; subgradient 0 at the origin."""
    x = a.data
    n = np.sqrt((x * x).sum(axis=-1))

    def vjp(g):
        safe = np.where(n > 0.0, n, 1.0)
        return (x * (g / safe)[..., None] * (n > 0.0)[..., None],)

    return _node(n, (a,), vjp)


# ---------------------------------------------------------------------------
# attention primitives (fused per call to keep graphs small)
# ---------------------------------------------------------------------------


def attention(q: Tensor, k: Tensor, v: Tensor, key_bias: Array | None = None) -> Tensor:
    """softmax(q kᵀ/√d + key_bias) v for one head over rows=positions."""
    qd, kd, vd = q.data, k.data, v.data
    sc = 1.0 / np.sqrt(qd.shape[-1])
    logits = (qd @ kd.T) * sc
    if key_bias is not None:
        if not np.isfinite(key_bias).any():
            raise ValueError("attention: mask excludes every position")
        logits = logits + key_bias[None, :]
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    w = e / e.sum(axis=1, keepdims=True)
    out = w @ vd

    def vjp(g):
        gw = g @ vd.T
        gl = w * (gw - (w * gw).sum(axis=1, keepdims=True))
        return gl @ kd * sc, gl.T @ qd * sc, w.T @ g

    return _node(out, (q, k, v), vjp)


def segment_attention_mean(q: Tensor, k: Tensor, v: Tensor, bounds) -> Tensor:
    """Independent self-attention inside each (start, stop) segment, then
    mean over the segment. Returns one row per segment."""
    qd, kd, vd = q.data, k.data, v.data
    d = qd.shape[-1]
    sc = 1.0 / np.sqrt(d)
    weights = []
    out = np.zeros((len(bounds), d))
    for m, (s, e) in enumerate(bounds):
        if e <= s:
            raise ValueError("segment_attention_mean: empty segment")
        logits = (qd[s:e] @ kd[s:e].T) * sc
        mx = logits.max(axis=1, keepdims=True)
        ex = np.exp(logits - mx)
        w = ex / ex.sum(axis=1, keepdims=True)
        weights.append(w)
        out[m] = (w @ vd[s:e]).mean(axis=0)

    def vjp(g):
        gq = np.zeros_like(qd)
        gk = np.zeros_like(kd)
        gv = np.zeros_like(vd)
        for m, (s, e) in enumerate(bounds):
            w = weights[m]
            go = np.broadcast_to(g[m] / (e - s), (e - s, d))
            gw = go @ vd[s:e].T
            gl = w * (gw - (w * gw).sum(axis=1, keepdims=True))
            gq[s:e] += gl @ kd[s:e] * sc
            gk[s:e] += gl.T @ qd[s:e] * sc
            gv[s:e] += w.T @ go
        return gq, gk, gv

    return _node(out, (q, k, v), vjp)


def rope(x: Tensor, positions) -> Tensor:
    """Rotate feature pairs of each row by position-dependent angles.

    Pair i of a row at position m is rotated by m * 10000^(-2i/d); the map
    is an isometry and encodes relative offsets in q·k products.
    """
    xd = x.data
    d = xd.shape[-1]
    if d % 2 != 0:
        raise ValueError("rope: feature dimension must be even")
    pos = np.asarray(positions, dtype=np.float64)
    theta = 10000.0 ** (-2.0 * np.arange(d // 2) / d)
    ang = pos[:, None] * theta[None, :]
    c, s = np.cos(ang), np.sin(ang)
    out = np.empty_like(xd)
    xe, xo = xd[:, 0::2], xd[:, 1::2]
    out[:, 0::2] = xe * c - xo * s
    out[:, 1::2] = xe * s + xo * c

    def vjp(g):
        ge, go = g[:, 0::2], g[:, 1::2]
        gx = np.empty_like(xd)
        gx[:, 0::2] = ge * c + go * s
        gx[:, 1::2] = -ge * s + go * c
        return (gx,)

    return _node(out, (x,), vjp)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    onstack: set[int] = set()
    stack: list[tuple[Tensor, int]] = [(root, 0)]
    while stack:
        node, i = stack.pop()
        if i == 0:
            nid = id(node)
            if nid in visited:
                continue
            if nid in onstack:
                raise ValueError("graph contains a cycle")
            onstack.add(nid)
        if i < len(node._parents):
            stack.append((node, i + 1))
            p = node._parents[i]
            if p.requires_grad and id(p) not in visited:
                stack.append((p, 0))
        else:
            nid = id(node)
            onstack.discard(nid)
            visited.add(nid)
            order.append(node)
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into .grad of every requires_grad tensor."""
    if loss.data.size != 1:
        raise ValueError("backward expects a scalar loss")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    seed = np.ones_like(loss.data)
    loss.grad = seed if loss.grad is None else loss.grad + seed
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        for p, g in zip(node._parents, grads):
            if not p.requires_grad or g is None:
                continue
            g = np.asarray(g, dtype=np.float64)
            if p.grad is None:
                p.grad = g.reshape(p.data.shape).copy()
            else:
                p.grad += g.reshape(p.data.shape)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# finite differences (test oracle, also used by the gradient checker)
# ---------------------------------------------------------------------------


def finite_difference(f, x: Array, step: float = 1e-5) -> Array:
    """Central finite-difference gradient of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * step)
    return g


def fd_directional(f, x: Array, direction: Array, step: float = 1e-5) -> float:
    """Central finite-difference derivative of f along a direction."""
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(direction, dtype=np.float64)
    xp = x + step * v
    xm = x - step * v
    return (f(xp) - f(xm)) / (2.0 * step)
