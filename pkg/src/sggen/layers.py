"""Layers on top of the autodiff engine: embeddings, linear, MLP, GRU stacks.

Everything is batch-first 2-D: inputs are (B, in), hidden states (B, H).
Parameters are plain leaf tensors grouped in small dataclasses; each group
knows how to enumerate its tensors under a dotted name prefix so the
optimizer and the checkpoint writer see one flat name -> tensor map.

GRU gate math (Cho-style, reset gate inside the hidden candidate term):

    z = sigmoid(W_z x + U_z h + b_z)
    r = sigmoid(W_r x + U_r h + b_r)
    n = tanh(W_n x + r * (U_n h + b_n))
    h' = (1 - z) * n + z * h

The three input-side matrices are stored fused as ``w`` with column blocks
[z | r | n] (likewise ``u`` for the hidden side), so a cell costs two
matmuls.  ``bg`` holds (b_z, b_r) and ``bn`` holds b_n, which enters
inside the reset product.

Initialization: recurrent weights uniform(-1/sqrt(H), 1/sqrt(H)), affine
weights uniform(-1/sqrt(fan_in), ...), embedding tables
uniform(-1/sqrt(dim), ...), all biases zero; every draw comes from the
caller's seeded generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ShapeMismatch,
    TargetOutOfRange,
    Tensor,
    add,
    add_bias,
    matmul,
    mul,
    relu,
    rows,
    sigmoid,
    slice_last,
    sub,
    tanh,
)


class IndexOutOfRange(TargetOutOfRange):
    pass


def _uniform(rng: np.random.Generator, shape, bound: float, dtype) -> Tensor:
    data = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


# ------------------------------------------------------------------ embedding

@dataclass
class Embedding:
    """Lookup table of shape (num_entries, dim); rows cover every category
    index plus whatever reserved tokens the caller allocates above them."""

    table: Tensor

    @property
    def num_entries(self) -> int:
        return self.table.data.shape[0]

    @property
    def dim(self) -> int:
        return self.table.data.shape[1]

    def named(self, prefix: str):
        return [(f"{prefix}.table", self.table)]


def init_embedding(rng: np.random.Generator, num_entries: int, dim: int,
                   dtype=np.float32) -> Embedding:
    return Embedding(_uniform(rng, (num_entries, dim), 1.0 / np.sqrt(dim), dtype))


def embed(e: Embedding, index) -> Tensor:
    """Rows of the table for an int or 1-D index array; output (n, dim).

    Gradient scatters into the looked-up rows only, accumulating across
    repeats.
    """
    idx = np.atleast_1d(np.asarray(index, dtype=np.int64))
    if idx.size and (idx.min() < 0 or idx.max() >= e.num_entries):
        raise IndexOutOfRange(f"embedding index outside [0, {e.num_entries})")
    return rows(e.table, idx)


# --------------------------------------------------------------------- linear

@dataclass
class Linear:
    w: Tensor  # (fan_in, out)
    b: Tensor  # (out,)

    def named(self, prefix: str):
        return [(f"{prefix}.w", self.w), (f"{prefix}.b", self.b)]


def init_linear(rng: np.random.Generator, fan_in: int, out: int,
                dtype=np.float32) -> Linear:
    w = _uniform(rng, (fan_in, out), 1.0 / np.sqrt(fan_in), dtype)
    b = Tensor(np.zeros(out, dtype=dtype), requires_grad=True)
    return Linear(w, b)


def linear_forward(lin: Linear, x: Tensor) -> Tensor:
    return add_bias(matmul(x, lin.w), lin.b)


# ------------------------------------------------------------------------ mlp

@dataclass
class Mlp:
    """Two affine layers with a ReLU between them."""

    fc1: Linear
    fc2: Linear

    def named(self, prefix: str):
        return self.fc1.named(f"{prefix}.fc1") + self.fc2.named(f"{prefix}.fc2")


def init_mlp(rng: np.random.Generator, fan_in: int, hidden: int, out: int,
             dtype=np.float32) -> Mlp:
    if hidden <= 0:
        raise ShapeMismatch("mlp hidden width must be positive")
    return Mlp(init_linear(rng, fan_in, hidden, dtype),
               init_linear(rng, hidden, out, dtype))


def mlp_forward(m: Mlp, x: Tensor) -> Tensor:
    return linear_forward(m.fc2, relu(linear_forward(m.fc1, x)))


# ------------------------------------------------------------------------ gru

@dataclass
class GruLayerParams:
    w: Tensor   # (input_dim, 3H), column blocks [z | r | n]
    u: Tensor   # (H, 3H), same block order
    bg: Tensor  # (2H,) = (b_z, b_r)
    bn: Tensor  # (H,)  = b_n, applied inside the reset product

    @property
    def hidden_size(self) -> int:
        return self.u.data.shape[0]

    def named(self, prefix: str):
        return [(f"{prefix}.w", self.w), (f"{prefix}.u", self.u),
                (f"{prefix}.bg", self.bg), (f"{prefix}.bn", self.bn)]


@dataclass
class GruStack:
    """L stacked cells; layer l consumes layer l-1's output."""

    layers: list[GruLayerParams]

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def hidden_size(self) -> int:
        return self.layers[0].hidden_size

    def named(self, prefix: str):
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(layer.named(f"{prefix}.l{i}"))
        return out


def init_gru_stack(rng: np.random.Generator, input_dim: int, hidden: int,
                   num_layers: int, dtype=np.float32) -> GruStack:
    bound = 1.0 / np.sqrt(hidden)
    layers = []
    fan = input_dim
    for _ in range(num_layers):
        layers.append(GruLayerParams(
            w=_uniform(rng, (fan, 3 * hidden), bound, dtype),
            u=_uniform(rng, (hidden, 3 * hidden), bound, dtype),
            bg=Tensor(np.zeros(2 * hidden, dtype=dtype), requires_grad=True),
            bn=Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True),
        ))
        fan = hidden
    return GruStack(layers)


def gru_cell(x: Tensor, h: Tensor, p: GruLayerParams) -> Tensor:
    """One cell update on a batch: x (B, in), h (B, H) -> (B, H)."""
    hs = p.hidden_size
    if x.data.ndim != 2 or h.data.shape != (x.data.shape[0], hs):
        raise ShapeMismatch(f"gru_cell: x {x.data.shape}, h {h.data.shape}, H={hs}")
    gx = matmul(x, p.w)
    gh = matmul(h, p.u)
    gates = sigmoid(add_bias(add(slice_last(gx, 0, 2 * hs),
                                 slice_last(gh, 0, 2 * hs)), p.bg))
    z = slice_last(gates, 0, hs)
    r = slice_last(gates, hs, 2 * hs)
    n = tanh(add(slice_last(gx, 2 * hs, 3 * hs),
                 mul(r, add_bias(slice_last(gh, 2 * hs, 3 * hs), p.bn))))
    # (1 - z) * n + z * h, written as n + z * (h - n)
    return add(n, mul(z, sub(h, n)))


def zero_state(stack: GruStack, batch: int, dtype=np.float32) -> list[Tensor]:
    return [Tensor(np.zeros((batch, stack.hidden_size), dtype=dtype))
            for _ in stack.layers]


def gru_stack_step(stack: GruStack, x: Tensor, hidden: list[Tensor]):
    """Advance all layers one step; returns (top output, new states)."""
    if len(hidden) != stack.num_layers:
        raise ShapeMismatch(f"need {stack.num_layers} hidden states, got {len(hidden)}")
    new_states = []
    inp = x
    for layer, h in zip(stack.layers, hidden):
        inp = gru_cell(inp, h, layer)
        new_states.append(inp)
    return inp, new_states
