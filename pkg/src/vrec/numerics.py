"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything downstream (backbone, verifiers, training) is built from the
operator set in this module. Arrays are row-major float64 throughout;
there is no broadcasting except scalar-with-tensor, so shape mismatches
fail loudly instead of silently expanding.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Rng",
    "add_rowvec",
    "cols",
    "concat",
    "confidence",
    "element",
    "embedding_lookup",
    "entropy",
    "colvec",
    "gelu",
    "grad_check",
    "layer_norm",
    "log",
    "exp",
    "log_softmax",
    "matmul",
    "relu",
    "row",
    "rows",
    "softmax",
]


class Tensor:
    """A float64 array plus an optional reverse-mode graph node.

    ``requires_grad=True`` marks a leaf parameter: ``backward`` accumulates
    d(loss)/d(leaf) into ``.grad``. Tensors produced by operators carry a
    vector-Jacobian closure and propagate instead of accumulating.
    """

    __slots__ = ("data", "grad", "requires_grad", "_children", "_vjp", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._children: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple] | None = None
        self._op = ""

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def tracked(self) -> bool:
        return self.requires_grad or self._vjp is not None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return _add(self, other)

    def __radd__(self, other):
        return _add(self, other)

    def __mul__(self, other):
        return _mul(self, other)

    def __rmul__(self, other):
        return _mul(self, other)

    def __neg__(self):
        return _mul(self, -1.0)

    def __sub__(self, other):
        return _add(self, _neg_operand(other))

    def __rsub__(self, other):
        return _add(-self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def transpose(self) -> "Tensor":
        if self.data.ndim != 2:
            raise ValueError(f"transpose expects a matrix, got shape {self.data.shape}")
        out = _node(self.data.T.copy(), (self,), "transpose")
        if out._vjp is not None or _any_tracked((self,)):
            _set_vjp(out, (self,), lambda g: (g.T,))
        return out

    def reshape(self, *shape) -> "Tensor":
        old = self.data.shape
        out = _node(self.data.reshape(shape), (self,), "reshape")
        if _any_tracked((self,)):
            _set_vjp(out, (self,), lambda g: (g.reshape(old),))
        return out

    def sum(self, axis: int | None = None) -> "Tensor":
        return _reduce(self, axis, mean=False)

    def mean(self, axis: int | None = None) -> "Tensor":
        return _reduce(self, axis, mean=True)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every tracked leaf's ``.grad``.

        ``self`` must be a scalar (size 1). Repeated calls without a grad
        reset keep accumulating.
        """
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.data.shape}")
        topo = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
            if node._vjp is None:
                continue
            for child, cg in zip(node._children, node._vjp(g)):
                if cg is None or not child.tracked():
                    continue
                prev = grads.get(id(child))
                grads[id(child)] = cg if prev is None else prev + cg


def _topo_order(root: Tensor) -> list[Tensor]:
    # Iterative DFS; graphs from unrolled reasoning loops overflow Python's
    # recursion limit.
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for child in node._children:
            if id(child) not in visited and child.tracked():
                stack.append((child, False))
    return order


def _node(data: np.ndarray, children: tuple[Tensor, ...], op: str) -> Tensor:
    out = Tensor(data)
    out._children = tuple(c for c in children if c.tracked())
    out._op = op
    return out


def _set_vjp(out: Tensor, children: tuple[Tensor, ...], vjp_all) -> None:
    # vjp_all is written against the full child tuple; remap onto the
    # tracked subset actually stored on the node.
    tracked_idx = [i for i, c in enumerate(children) if c.tracked()]
    if not tracked_idx:
        return
    if len(tracked_idx) == len(children):
        out._vjp = vjp_all
    else:
        def vjp(g, _idx=tuple(tracked_idx), _all=vjp_all):
            full = _all(g)
            return tuple(full[i] for i in _idx)
        out._vjp = vjp


def _any_tracked(ts: Sequence[Tensor]) -> bool:
    return any(t.tracked() for t in ts)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _neg_operand(x):
    if isinstance(x, Tensor):
        return -x
    return -np.asarray(x, dtype=np.float64)


def _is_scalar(t: Tensor) -> bool:
    return t.data.size == 1


def _add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b)
    if a.data.shape != b.data.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ValueError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")
    out = _node(a.data + b.data, (a, b), "add")
    if _any_tracked((a, b)):
        def vjp(g):
            ga = g if a.data.shape == g.shape else np.asarray(g.sum()).reshape(a.data.shape)
            gb = g if b.data.shape == g.shape else np.asarray(g.sum()).reshape(b.data.shape)
            return (ga, gb)
        _set_vjp(out, (a, b), vjp)
    return out


def _mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b)
    if a.data.shape != b.data.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ValueError(f"mul: shape mismatch {a.data.shape} vs {b.data.shape}")
    out = _node(a.data * b.data, (a, b), "mul")
    if _any_tracked((a, b)):
        ad, bd = a.data, b.data
        def vjp(g):
            ga = g * bd
            gb = g * ad
            if ga.shape != ad.shape:
                ga = np.asarray(ga.sum()).reshape(ad.shape)
            if gb.shape != bd.shape:
                gb = np.asarray(gb.sum()).reshape(bd.shape)
            return (ga, gb)
        _set_vjp(out, (a, b), vjp)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 2D@2D, 2D@1D and 1D@2D operands."""
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise ValueError(f"matmul: shape mismatch {ad.shape} @ {bd.shape}")
        out = _node(ad @ bd, (a, b), "matmul")
        if _any_tracked((a, b)):
            _set_vjp(out, (a, b), lambda g: (g @ bd.T, ad.T @ g))
        return out
    if ad.ndim == 2 and bd.ndim == 1:
        if ad.shape[1] != bd.shape[0]:
            raise ValueError(f"matmul: shape mismatch {ad.shape} @ {bd.shape}")
        out = _node(ad @ bd, (a, b), "matmul")
        if _any_tracked((a, b)):
            _set_vjp(out, (a, b), lambda g: (np.outer(g, bd), ad.T @ g))
        return out
    if ad.ndim == 1 and bd.ndim == 2:
        if ad.shape[0] != bd.shape[0]:
            raise ValueError(f"matmul: shape mismatch {ad.shape} @ {bd.shape}")
        out = _node(ad @ bd, (a, b), "matmul")
        if _any_tracked((a, b)):
            _set_vjp(out, (a, b), lambda g: (bd @ g, np.outer(ad, g)))
        return out
    raise ValueError(f"matmul: unsupported ranks {ad.ndim} @ {bd.ndim}")


def add_rowvec(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-d vector to every row of a (T, d) matrix (explicit, not broadcast)."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"add_rowvec: shape mismatch {x.data.shape} + {b.data.shape}")
    out = _node(x.data + b.data[None, :], (x, b), "add_rowvec")
    if _any_tracked((x, b)):
        _set_vjp(out, (x, b), lambda g: (g, g.sum(axis=0)))
    return out


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of a (V, d) table by integer index; gradient scatters back."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError(f"embedding_lookup: ids must be 1-D, got shape {idx.shape}")
    if table.data.ndim != 2:
        raise ValueError(f"embedding_lookup: table must be 2-D, got shape {table.data.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ValueError(f"embedding_lookup: index out of range for table of {table.data.shape[0]} rows")
    out = _node(table.data[idx].copy(), (table,), "embedding_lookup")
    if table.tracked():
        def vjp(g):
            gt = np.zeros_like(table.data)
            np.add.at(gt, idx, g)
            return (gt,)
        _set_vjp(out, (table,), vjp)
    return out


def row(x: Tensor, i: int) -> Tensor:
    """Extract row i of a matrix as a 1-D vector."""
    if x.data.ndim != 2:
        raise ValueError(f"row: expected matrix, got shape {x.data.shape}")
    out = _node(x.data[i].copy(), (x,), "row")
    if x.tracked():
        def vjp(g):
            gx = np.zeros_like(x.data)
            gx[i] = g
            return (gx,)
        _set_vjp(out, (x,), vjp)
    return out


def rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous row slice of a matrix."""
    if x.data.ndim != 2:
        raise ValueError(f"rows: expected matrix, got shape {x.data.shape}")
    out = _node(x.data[start:stop].copy(), (x,), "rows")
    if x.tracked():
        def vjp(g):
            gx = np.zeros_like(x.data)
            gx[start:stop] = g
            return (gx,)
        _set_vjp(out, (x,), vjp)
    return out


def cols(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous column slice of a matrix."""
    if x.data.ndim != 2:
        raise ValueError(f"cols: expected matrix, got shape {x.data.shape}")
    out = _node(x.data[:, start:stop].copy(), (x,), "cols")
    if x.tracked():
        def vjp(g):
            gx = np.zeros_like(x.data)
            gx[:, start:stop] = g
            return (gx,)
        _set_vjp(out, (x,), vjp)
    return out


def colvec(x: Tensor, j: int) -> Tensor:
    """Extract column j of a matrix as a 1-D vector (bitwise copy of the stored column)."""
    if x.data.ndim != 2:
        raise ValueError(f"colvec: expected matrix, got shape {x.data.shape}")
    out = _node(x.data[:, j].copy(), (x,), "colvec")
    if x.tracked():
        def vjp(g):
            gx = np.zeros_like(x.data)
            gx[:, j] = g
            return (gx,)
        _set_vjp(out, (x,), vjp)
    return out


def element(x: Tensor, i: int) -> Tensor:
    """Extract element i of a vector as a scalar tensor."""
    if x.data.ndim != 1:
        raise ValueError(f"element: expected vector, got shape {x.data.shape}")
    out = _node(np.asarray(x.data[i]), (x,), "element")
    if x.tracked():
        def vjp(g):
            gx = np.zeros_like(x.data)
            gx[i] = g
            return (gx,)
        _set_vjp(out, (x,), vjp)
    return out


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ValueError("concat: empty input")
    data = np.concatenate([p.data for p in parts], axis=axis)
    out = _node(data, tuple(parts), "concat")
    if _any_tracked(parts):
        sizes = [p.data.shape[axis] for p in parts]
        splits = np.cumsum(sizes)[:-1]
        def vjp(g):
            return tuple(np.split(g, splits, axis=axis))
        _set_vjp(out, tuple(parts), vjp)
    return out


def _reduce(x: Tensor, axis: int | None, mean: bool) -> Tensor:
    if mean:
        data = x.data.mean(axis=axis)
        denom = x.data.size if axis is None else x.data.shape[axis]
    else:
        data = x.data.sum(axis=axis)
        denom = 1
    out = _node(np.asarray(data), (x,), "mean" if mean else "sum")
    if x.tracked():
        shape = x.data.shape
        def vjp(g):
            if axis is None:
                gx = np.full(shape, float(g) / denom)
            else:
                gx = np.expand_dims(g, axis) / denom
                gx = np.broadcast_to(gx, shape).copy()
            return (gx,)
        _set_vjp(out, (x,), vjp)
    return out


def log(x: Tensor) -> Tensor:
    out = _node(np.log(x.data), (x,), "log")
    if x.tracked():
        _set_vjp(out, (x,), lambda g: (g / x.data,))
    return out


def exp(x: Tensor) -> Tensor:
    out = _node(np.exp(x.data), (x,), "exp")
    if x.tracked():
        od = out.data
        _set_vjp(out, (x,), lambda g: (g * od,))
    return out


def relu(x: Tensor) -> Tensor:
    out = _node(np.maximum(x.data, 0.0), (x,), "relu")
    if x.tracked():
        mask = (x.data > 0.0).astype(np.float64)
        _set_vjp(out, (x,), lambda g: (g * mask,))
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximation GELU."""
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd**3)
    tanh = np.tanh(inner)
    out = _node(0.5 * xd * (1.0 + tanh), (x,), "gelu")
    if x.tracked():
        sech2 = 1.0 - tanh**2
        deriv = 0.5 * (1.0 + tanh) + 0.5 * xd * sech2 * _GELU_C * (1.0 + 3 * 0.044715 * xd**2)
        _set_vjp(out, (x,), lambda g: (g * deriv,))
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    shifted = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = _node(s, (x,), "softmax")
    if x.tracked():
        def vjp(g):
            dot = (g * s).sum(axis=axis, keepdims=True)
            return (s * (g - dot),)
        _set_vjp(out, (x,), vjp)
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    m = xd.max(axis=axis, keepdims=True)
    shifted = xd - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = _node(shifted - lse, (x,), "log_softmax")
    if x.tracked():
        s = np.exp(out.data)
        def vjp(g):
            return (g - s * g.sum(axis=axis, keepdims=True),)
        _set_vjp(out, (x,), vjp)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    xd = x.data
    d = xd.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ValueError(f"layer_norm: gain/bias must have shape ({d},)")
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    out = _node(xhat * gain.data + bias.data, (x, gain, bias), "layer_norm")
    if _any_tracked((x, gain, bias)):
        gd = gain.data
        def vjp(g):
            gxhat = g * gd
            # standard layernorm backward over the last axis
            dx = inv / d * (d * gxhat - gxhat.sum(axis=-1, keepdims=True)
                            - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True))
            axes = tuple(range(xd.ndim - 1))
            ggain = (g * xhat).sum(axis=axes) if axes else g * xhat
            gbias = g.sum(axis=axes) if axes else g.copy()
            return (dx, ggain, gbias)
        _set_vjp(out, (x, gain, bias), vjp)
    return out


def entropy(p: Tensor) -> Tensor:
    """Shannon entropy of a 1-D distribution in nats; 0*log(0) counts as 0."""
    pd = p.data
    if pd.ndim != 1:
        raise ValueError(f"entropy: expected 1-D distribution, got shape {pd.shape}")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pd > 0.0, pd * np.log(np.where(pd > 0.0, pd, 1.0)), 0.0)
    out = _node(np.asarray(-terms.sum()), (p,), "entropy")
    if p.tracked():
        # gradient -(log p + 1); softmax upstream keeps p strictly positive
        safe = np.maximum(pd, 1e-300)
        _set_vjp(out, (p,), lambda g: (float(g) * -(np.log(safe) + 1.0),))
    return out


def confidence(f: Tensor, eps: float = 1e-6) -> Tensor:
    """Confidence c = min(1, 1 / max(f, eps)) for a scalar entropy value f."""
    if f.data.size != 1:
        raise ValueError("confidence: expected a scalar")
    fv = float(f.data)
    c = min(1.0, 1.0 / max(fv, eps))
    out = _node(np.asarray(np.float64(c)), (f,), "confidence")
    if f.tracked():
        deriv = -1.0 / (fv * fv) if fv > 1.0 else 0.0
        _set_vjp(out, (f,), lambda g: (np.asarray(float(g) * deriv).reshape(f.data.shape),))
    return out


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` must be a deterministic closure over ``params`` returning a scalar
    tensor. Relative error is |ad - fd| / (|fd| + 1e-12), maximized over every
    element of every parameter.
    """
    for p in params:
        p.zero_grad()
    loss = f()
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    worst = 0.0
    for p, ad in zip(params, analytic):
        flat = p.data.reshape(-1)
        ad_flat = ad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            down = f().item()
            flat[i] = orig
            fd = (up - down) / (2.0 * h)
            err = abs(ad_flat[i] - fd) / (abs(fd) + 1e-12)
            if err > worst:
                worst = err
    for p in params:
        p.zero_grad()
    return worst


class Rng:
    """Counter-based deterministic random stream keyed by (seed, stream_id).

    Built on the Philox bit generator, so identical keys reproduce identical
    sequences on every platform.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def spawn(self, stream_id: int) -> "Rng":
        """Fresh independent stream under the same seed."""
        return Rng(self.seed, stream_id)

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        return self._gen.standard_normal(shape) * std

    def uniform(self, shape=None) -> np.ndarray:
        return self._gen.random(shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice_weighted(self, weights: np.ndarray) -> int:
        """Index draw proportional to non-negative weights."""
        total = float(weights.sum())
        u = self._gen.random() * total
        return int(np.searchsorted(np.cumsum(weights), u, side="right").clip(0, len(weights) - 1))
