"""Dense-tensor reverse-mode autodiff on numpy arrays.

Operations run eagerly; when a :class:`Tape` is active on the current
thread and an input requires gradients, the op also records a backward
rule.  :func:`backward` replays the tape in reverse, accumulating
gradients into every leaf (summing across reuse); leaves never touched by
the root get zero gradient.

Scope is exactly what recurrent sequence models need: matmul, elementwise
arithmetic, bias add, sigmoid/tanh/relu, concat and slice on the last
axis, embedding-row gather (single rows or fused 2-D slot lookup),
softmax, log, full-sum, scalar scale, and a fused softmax cross-entropy.
Everything is 2-D-first; there is no general broadcasting beyond the bias
add, so shape bugs fail loudly instead of silently broadcasting.

Precision is carried by the arrays themselves: training code uses
float32, gradient checks run the identical code paths at float64.
Non-finite values are rejected when leaf tensors are created and when
gradients land in leaves; intermediate activations are only scanned when
``strict_finite`` is enabled (tests do; the training loop relies on the
loss/gradient checks instead).
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import DataError, NumericError


class ShapeMismatch(NumericError):
    pass


class NotScalarRoot(NumericError):
    pass


class NonFiniteValue(NumericError):
    pass


class TargetOutOfRange(DataError):
    pass


FLOAT_DTYPES = (np.float32, np.float64)

# When True, every op output is scanned for NaN/Inf (slow; tests enable it).
strict_finite = False


class Tensor:
    """A dense float array plus the flags the tape needs.

    ``grad`` is populated by :func:`backward` for leaves with
    ``requires_grad``; it always matches ``data``'s shape and dtype.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None,
                 dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue(f"tensor {name or ''} contains NaN or Inf at creation")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        """Internal fast path for op outputs; skips the finiteness scan."""
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.name = None
        if strict_finite and not np.all(np.isfinite(arr)):
            raise NonFiniteValue("op produced NaN or Inf")
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


class TapeNode:
    __slots__ = ("out", "parents", "bw")

    def __init__(self, out: Tensor, parents: tuple, bw: Callable):
        self.out = out
        self.parents = parents
        self.bw = bw


_tls = threading.local()


def _stack() -> list:
    stack = getattr(_tls, "tapes", None)
    if stack is None:
        stack = []
        _tls.tapes = stack
    return stack


def _active() -> Optional["Tape"]:
    stack = _stack()
    return stack[-1] if stack else None


class Tape:
    """Records ops in execution order; reverse order is a valid topo order.

    Use as a context manager; tapes nest per thread, the innermost one
    records.  A tape must stay on the thread that recorded it.
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _stack().pop()
        if popped is not self:
            raise RuntimeError("tape context exited out of order")

    def __len__(self) -> int:
        return len(self.nodes)


def _record(out: Tensor, parents: tuple, bw: Callable) -> Tensor:
    tape = _active()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.nodes.append(TapeNode(out, parents, bw))
    return out


def backward(tape: Tape, root: Tensor) -> None:
    """Propagate d(root)/d(leaf) into ``leaf.grad`` for every tape leaf.

    Leaves are tensors that appear as parents but were not produced by any
    recorded op.  Unreachable leaves receive zeros.  Raises
    :class:`NotScalarRoot` unless ``root`` holds exactly one value, and
    :class:`NonFiniteValue` if the root or any leaf gradient is non-finite.
    """
    if root.data.size != 1:
        raise NotScalarRoot(f"backward root must be scalar, got shape {root.data.shape}")
    if not np.isfinite(root.data.reshape(-1)[0]):
        raise NonFiniteValue("backward root is NaN or Inf")

    produced = {id(n.out) for n in tape.nodes}
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}

    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        parent_grads = node.bw(g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            slot = grads.get(id(p))
            if slot is None:
                grads[id(p)] = pg
            else:
                slot += pg

    for node in tape.nodes:
        for p in node.parents:
            if p.requires_grad and id(p) not in produced:
                g = grads.get(id(p))
                if g is None:
                    g = np.zeros_like(p.data)
                elif not np.all(np.isfinite(g)):
                    raise NonFiniteValue(f"gradient of {p.name or 'leaf'} is NaN or Inf")
                p.grad = g


# ------------------------------------------------------------------ helpers

def _need_2d(t: Tensor, op: str) -> None:
    if t.data.ndim != 2:
        raise ShapeMismatch(f"{op} needs 2-D input, got {t.data.shape}")


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"{op} shapes differ: {a.data.shape} vs {b.data.shape}")


# --------------------------------------------------------------- primitives

def matmul(a: Tensor, b: Tensor) -> Tensor:
    _need_2d(a, "matmul")
    _need_2d(b, "matmul")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    out = Tensor._wrap(a.data @ b.data)

    def bw(g, a=a, b=b):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)

    return _record(out, (a, b), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    out = Tensor._wrap(a.data + b.data)

    def bw(g):
        return (g, g)

    return _record(out, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    out = Tensor._wrap(a.data - b.data)

    def bw(g):
        return (g, -g)

    return _record(out, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    out = Tensor._wrap(a.data * b.data)

    def bw(g, a=a, b=b):
        return (g * b.data if a.requires_grad else None,
                g * a.data if b.requires_grad else None)

    return _record(out, (a, b), bw)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-broadcast bias: (m, n) + (n,)."""
    _need_2d(x, "add_bias")
    if b.data.ndim != 1 or b.data.shape[0] != x.data.shape[1]:
        raise ShapeMismatch(f"add_bias: {x.data.shape} + {b.data.shape}")
    out = Tensor._wrap(x.data + b.data)

    def bw(g):
        return (g, g.sum(axis=0))

    return _record(out, (x, b), bw)


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)
    out = Tensor._wrap(s)

    def bw(g, s=s):
        return (g * s * (1.0 - s),)

    return _record(out, (x,), bw)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    out = Tensor._wrap(t)

    def bw(g, t=t):
        return (g * (1.0 - t * t),)

    return _record(out, (x,), bw)


def relu(x: Tensor) -> Tensor:
    out = Tensor._wrap(np.maximum(x.data, 0.0))

    def bw(g, x=x):
        return (g * (x.data > 0.0),)

    return _record(out, (x,), bw)


def concat_last(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeMismatch("concat_last of zero tensors")
    lead = parts[0].data.shape[:-1]
    for p in parts[1:]:
        if p.data.shape[:-1] != lead:
            raise ShapeMismatch(
                f"concat_last leading dims differ: {parts[0].data.shape} vs {p.data.shape}")
    out = Tensor._wrap(np.concatenate([p.data for p in parts], axis=-1))
    widths = [p.data.shape[-1] for p in parts]
    splits = np.cumsum(widths)[:-1]

    def bw(g, splits=splits, parts=tuple(parts)):
        pieces = np.split(g, splits, axis=-1)
        return tuple(piece if p.requires_grad else None
                     for piece, p in zip(pieces, parts))

    return _record(out, tuple(parts), bw)


def rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows of a (V, D) table by a 1-D integer index array."""
    _need_2d(table, "rows")
    idx = np.asarray(indices)
    if idx.ndim != 1:
        raise ShapeMismatch(f"rows needs 1-D indices, got {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise TargetOutOfRange(f"row index outside [0, {table.data.shape[0]})")
    out = Tensor._wrap(table.data[idx])

    def bw(g, table=table, idx=idx):
        dt = np.zeros_like(table.data)
        np.add.at(dt, idx, g)
        return (dt,)

    return _record(out, (table,), bw)


def embed_slots(table: Tensor, indices: np.ndarray) -> Tensor:
    """Gather a (B, S) index grid from a (V, D) table into (B, S*D).

    One tape entry for a whole batch of slot embeddings; equivalent to S
    row-gathers concatenated along the last axis.
    """
    _need_2d(table, "embed_slots")
    idx = np.asarray(indices)
    if idx.ndim != 2:
        raise ShapeMismatch(f"embed_slots needs 2-D indices, got {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise TargetOutOfRange(f"slot index outside [0, {table.data.shape[0]})")
    bsz, nslot = idx.shape
    dim = table.data.shape[1]
    out = Tensor._wrap(table.data[idx].reshape(bsz, nslot * dim))

    def bw(g, table=table, idx=idx, bsz=bsz, nslot=nslot, dim=dim):
        dt = np.zeros_like(table.data)
        np.add.at(dt, idx.reshape(-1), g.reshape(bsz * nslot, dim))
        return (dt,)

    return _record(out, (table,), bw)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along axis 0; trailing dims must agree."""
    if not parts:
        raise ShapeMismatch("concat_rows of zero tensors")
    trail = parts[0].data.shape[1:]
    for p in parts[1:]:
        if p.data.shape[1:] != trail:
            raise ShapeMismatch(
                f"concat_rows trailing dims differ: {parts[0].data.shape} vs {p.data.shape}")
    out = Tensor._wrap(np.concatenate([p.data for p in parts], axis=0))
    splits = np.cumsum([p.data.shape[0] for p in parts])[:-1]

    def bw(g, splits=splits, parts=tuple(parts)):
        pieces = np.split(g, splits, axis=0)
        return tuple(piece if p.requires_grad else None
                     for piece, p in zip(pieces, parts))

    return _record(out, tuple(parts), bw)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous row range x[start:stop]; gradient zero-pads the rest."""
    n = x.data.shape[0]
    if not (0 <= start <= stop <= n):
        raise ShapeMismatch(f"slice_rows [{start}:{stop}] outside {n} rows")
    out = Tensor._wrap(x.data[start:stop])

    def bw(g, x=x, start=start, stop=stop):
        dx = np.zeros_like(x.data)
        dx[start:stop] = g
        return (dx,)

    return _record(out, (x,), bw)


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    width = x.data.shape[-1]
    if not (0 <= start <= stop <= width):
        raise ShapeMismatch(f"slice_last [{start}:{stop}] outside width {width}")
    out = Tensor._wrap(np.ascontiguousarray(x.data[..., start:stop]))

    def bw(g, x=x, start=start, stop=stop):
        dx = np.zeros_like(x.data)
        dx[..., start:stop] = g
        return (dx,)

    return _record(out, (x,), bw)


def softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis, shift-stabilized."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor._wrap(s)

    def bw(g, s=s):
        inner = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - inner),)

    return _record(out, (x,), bw)


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = np.log(x.data)
    out = Tensor._wrap(out_data)

    def bw(g, x=x):
        return (g / x.data,)

    return _record(out, (x,), bw)


def tsum(x: Tensor) -> Tensor:
    """Full reduction to a scalar tensor."""
    out = Tensor._wrap(np.asarray(x.data.sum(), dtype=x.data.dtype))

    def bw(g, x=x):
        return (np.full_like(x.data, float(g)),)

    return _record(out, (x,), bw)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor._wrap(x.data * c)

    def bw(g, c=c):
        return (g * c,)

    return _record(out, (x,), bw)


def softmax_cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """Weighted sum of per-row cross-entropies, as one fused scalar op.

    ``targets`` is an integer array of shape (B,) (or a scalar for a
    single row); row i contributes ``-weights[i] * log softmax(row_i)[t_i]``.
    ``weights`` defaults to all-ones; masked batching passes 0/1 flags
    folded with any mean normalization.  Gradient w.r.t. logits is
    ``weights[:, None] * (softmax - one_hot)``.
    """
    data = logits.data
    squeeze = data.ndim == 1
    if squeeze:
        data = data[None, :]
    if data.ndim != 2:
        raise ShapeMismatch(f"softmax_cross_entropy needs (B, K) logits, got {logits.data.shape}")
    bsz, k = data.shape
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if t.shape != (bsz,):
        raise ShapeMismatch(f"targets shape {t.shape} does not match batch {bsz}")
    if t.size and (t.min() < 0 or t.max() >= k):
        raise TargetOutOfRange(f"target outside [0, {k})")
    if weights is None:
        w = np.ones(bsz, dtype=data.dtype)
    else:
        w = np.asarray(weights, dtype=data.dtype)
        if w.shape != (bsz,):
            raise ShapeMismatch(f"weights shape {w.shape} does not match batch {bsz}")

    m = data.max(axis=1, keepdims=True)
    z = data - m
    ez = np.exp(z)
    sez = ez.sum(axis=1)
    # per-row loss: logsumexp(row) - row[target]
    losses = np.log(sez) + m[:, 0] - data[np.arange(bsz), t]
    out = Tensor._wrap(np.asarray((losses * w).sum(), dtype=data.dtype))

    def bw(g, logits=logits, ez=ez, sez=sez, t=t, w=w, bsz=bsz, squeeze=squeeze):
        soft = ez / sez[:, None]
        soft[np.arange(bsz), t] -= 1.0
        soft *= (w * float(g))[:, None]
        return (soft[0] if squeeze else soft,)

    return _record(out, (logits,), bw)


def cross_entropy_values(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-row -log softmax(logits)[target] without tape involvement.

    Shared by likelihood scoring so scored values agree bit-for-bit with
    the training loss computed on the same rows.
    """
    data = np.asarray(logits)
    t = np.asarray(targets, dtype=np.int64)
    m = data.max(axis=1, keepdims=True)
    z = data - m
    sez = np.exp(z).sum(axis=1)
    return np.log(sez) + m[:, 0] - data[np.arange(data.shape[0]), t]


def finite_difference_check(f: Callable[[], Tensor], params: Sequence[Tensor],
                            eps: float = 1e-5,
                            max_coords_per_param: Optional[int] = None,
                            rng: Optional[np.random.Generator] = None,
                            floor: float = 1e-8) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` rebuilds the scalar loss from ``params`` on every call.  The
    analytic gradient comes from one taped run; numeric derivatives
    perturb each coordinate in place (all of them, or a seeded sample of
    ``max_coords_per_param`` per tensor so big models stay checkable).
    Relative error per coordinate is |a - n| / max(floor, |a| + |n|).
    ``floor`` sets the gradient magnitude below which agreement counts as
    absolute rather than relative; central differences carry round-off
    noise of about |loss| * ulp / eps, so set floor well above that or
    near-zero coordinates report pure noise as error.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if floor <= 0:
        raise ValueError("floor must be positive")
    with Tape() as tape:
        root = f()
    backward(tape, root)
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]

    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        aflat = a.reshape(-1)
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = range(n)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            fp = f().item()
            flat[c] = orig - eps
            fm = f().item()
            flat[c] = orig
            num = (fp - fm) / (2.0 * eps)
            err = abs(aflat[c] - num) / max(floor, abs(aflat[c]) + abs(num))
            worst = max(worst, float(err))
    return worst
