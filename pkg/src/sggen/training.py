"""Training loop: Adam on the teacher-forced loss with a staircase
learning-rate decay.

Reproducibility is structural: the RNG for epoch e, batch b is derived as
``default_rng([seed, e, b])``, so any step's batch indices and ordering
draws can be regenerated without replaying the run.  Resuming from a
checkpoint therefore needs only the (epoch, batch, step) counters plus
the Adam moments, all of which ride in the checkpoint.

Each optimizer step clips the global gradient norm (default 5.0), logs
(step, loss, lr, grad norm, seconds) as one JSON line, and skips the
parameter update on non-finite gradients rather than poisoning the model.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from .autodiff import Tape, Tensor, backward
from .errors import DataError, NumericError
from .graphs import OrderingScheme, SceneGraph, encode_sequence, order_nodes
from .model import (
    EmptyDataset,
    ModelParams,
    estimate_first_node_prior,
    forward_loss,
    save_checkpoint,
    score_nll_batch,
)


class NonFiniteGradient(NumericError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Schedule and optimizer settings.

    The plain constructor carries the reference-scale defaults (300
    epochs of 256 batches of 256); :meth:`desk` is the small profile that
    finishes on one workstation core.
    """

    epochs: int = 300
    batches_per_epoch: int = 256
    batch_size: int = 256
    lr0: float = 0.001
    decay: float = 0.95
    decay_every: int = 1710
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 5.0
    seed: int = 0
    ordering: OrderingScheme = field(default_factory=OrderingScheme)
    checkpoint_every: int = 0   # steps; 0 = only at the end

    def __post_init__(self):
        if min(self.epochs, self.batches_per_epoch, self.batch_size,
               self.decay_every) <= 0:
            raise DataError("all schedule sizes must be positive")
        if not 0.0 < self.decay <= 1.0:
            raise DataError("decay must lie in (0, 1]")

    @staticmethod
    def desk(**overrides) -> "TrainConfig":
        base = dict(epochs=50, batches_per_epoch=64, batch_size=32)
        base.update(overrides)
        return TrainConfig(**base)

    @staticmethod
    def full(**overrides) -> "TrainConfig":
        return TrainConfig(**overrides)

    def to_json(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.to_json() if isinstance(v, OrderingScheme) else v
        return out


@dataclass
class TrainLog:
    """Per-step records plus per-epoch validation summaries."""

    steps: list[dict] = field(default_factory=list)
    validation: list[dict] = field(default_factory=list)

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.steps:
                fh.write(json.dumps(rec) + "\n")
            for rec in self.validation:
                fh.write(json.dumps({"kind": "validation", **rec}) + "\n")

    @staticmethod
    def read_jsonl(path) -> "TrainLog":
        log = TrainLog()
        with open(path) as fh:
            for line in fh:
                rec = json.loads(line)
                if rec.get("kind") == "validation":
                    rec.pop("kind")
                    log.validation.append(rec)
                else:
                    log.steps.append(rec)
        return log


def lr_at(cfg: TrainConfig, step: int) -> float:
    """Staircase: lr0 * decay^(step // decay_every)."""
    if step < 0:
        raise DataError("step must be nonnegative")
    return cfg.lr0 * cfg.decay ** (step // cfg.decay_every)


@dataclass
class AdamState:
    """First/second moments per parameter name plus the update counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @staticmethod
    def fresh(named: dict[str, Tensor]) -> "AdamState":
        return AdamState(
            m={k: np.zeros_like(t.data) for k, t in named.items()},
            v={k: np.zeros_like(t.data) for k, t in named.items()},
            t=0,
        )

    def to_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for k, arr in self.m.items():
            out[f"m.{k}"] = arr
        for k, arr in self.v.items():
            out[f"v.{k}"] = arr
        return out

    @staticmethod
    def from_tensors(tensors: dict[str, np.ndarray], t: int) -> "AdamState":
        m = {k[2:]: arr for k, arr in tensors.items() if k.startswith("m.")}
        v = {k[2:]: arr for k, arr in tensors.items() if k.startswith("v.")}
        return AdamState(m=m, v=v, t=t)


def adam_step(named: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, cfg: TrainConfig) -> float:
    """One Adam update in place; returns the pre-clip global gradient norm.

    The global norm is computed over all parameters jointly and the
    gradients are rescaled to ``cfg.clip_norm`` when they exceed it.
    Raises :class:`NonFiniteGradient` (without touching the parameters)
    if any gradient value is NaN/Inf.
    """
    sq = 0.0
    for name in named:
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"gradient of {name} is not finite")
        sq += float(np.vdot(g, g))
    norm = float(np.sqrt(sq))
    scale = 1.0
    if cfg.clip_norm > 0 and norm > cfg.clip_norm:
        scale = cfg.clip_norm / norm

    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t
    for name, tensor in named.items():
        g = grads[name] * scale
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        update = (m / bias1) / (np.sqrt(v / bias2) + cfg.adam_eps)
        tensor.data -= (lr * update).astype(tensor.data.dtype, copy=False)
    return norm


def batch_rng(seed: int, epoch: int, batch: int) -> np.random.Generator:
    """The canonical stream for one batch; resume re-derives it exactly."""
    return np.random.default_rng([seed, epoch, batch])


def draw_batch(graphs: Sequence[SceneGraph], cfg: TrainConfig,
               scheme: OrderingScheme, vocab, epoch: int, batch: int):
    """Sample batch_size graphs uniformly with replacement and encode each
    under a fresh ordering draw from the batch stream."""
    rng = batch_rng(cfg.seed, epoch, batch)
    idx = rng.integers(0, len(graphs), size=cfg.batch_size)
    seqs = []
    for i in idx:
        g = graphs[int(i)]
        order = order_nodes(g, scheme, rng)
        seqs.append(encode_sequence(g, order, vocab))
    return seqs


def train(params: ModelParams, graphs: Sequence[SceneGraph], cfg: TrainConfig,
          val_graphs: Optional[Sequence[SceneGraph]] = None,
          log_path=None, checkpoint_path=None,
          resume: Optional[dict] = None,
          opt_tensors: Optional[dict[str, np.ndarray]] = None,
          quiet: bool = True) -> tuple[ModelParams, TrainLog]:
    """Run the schedule; returns the trained model and its log.

    ``resume`` is a train_state dict from a checkpoint ({"epoch", "batch",
    "step", "adam_t"}) and ``opt_tensors`` the matching moment arrays; the
    loop continues from exactly that (epoch, batch).  The first-node prior
    is estimated from the training set (under cfg.ordering) if unset.
    The model's ordering field is stamped so scoring defaults match.
    """
    if not graphs:
        raise EmptyDataset("training needs at least one graph")
    named = params.named_tensors()
    scheme = cfg.ordering
    params.ordering = scheme
    if params.first_node_prior is None:
        params.first_node_prior = estimate_first_node_prior(
            graphs, scheme, params.vocab)

    if resume is not None:
        adam = AdamState.from_tensors(opt_tensors or {}, int(resume["adam_t"]))
        if set(adam.m) != set(named) or set(adam.v) != set(named):
            raise DataError("resume checkpoint lacks optimizer moments")
        start_epoch = int(resume["epoch"])
        start_batch = int(resume["batch"])
        step = int(resume["step"])
    else:
        adam = AdamState.fresh(named)
        start_epoch, start_batch, step = 0, 0, 0

    log = TrainLog()
    log_fh = open(log_path, "w" if resume is None else "a") if log_path else None

    def emit(rec: dict, validation: bool = False) -> None:
        (log.validation if validation else log.steps).append(rec)
        if log_fh:
            out = {"kind": "validation", **rec} if validation else rec
            log_fh.write(json.dumps(out) + "\n")
            log_fh.flush()

    def save(epoch, batch):
        if checkpoint_path:
            save_checkpoint(
                checkpoint_path, params,
                train_state={"epoch": epoch, "batch": batch, "step": step,
                             "adam_t": adam.t, "config": cfg.to_json()},
                opt_state=adam.to_tensors())

    try:
        for epoch in range(start_epoch, cfg.epochs):
            first = start_batch if epoch == start_epoch else 0
            for b in range(first, cfg.batches_per_epoch):
                seqs = draw_batch(graphs, cfg, scheme, params.vocab, epoch, b)
                t0 = time.perf_counter()
                with Tape() as tape:
                    loss = forward_loss(params, seqs)
                backward(tape, loss)
                grads = {name: t.grad for name, t in named.items()}
                lr = lr_at(cfg, step)
                rec = {"step": step, "epoch": epoch, "batch": b,
                       "loss": float(loss.item()), "lr": lr}
                try:
                    rec["grad_norm"] = adam_step(named, grads, adam, lr, cfg)
                except NonFiniteGradient as exc:
                    rec["skipped"] = str(exc)
                rec["seconds"] = round(time.perf_counter() - t0, 6)
                step += 1
                emit(rec)
                if not quiet and step % 50 == 0:
                    print(f"step {step} loss {rec['loss']:.4f} lr {lr:.6f}")
                if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                    save(epoch if b + 1 < cfg.batches_per_epoch else epoch + 1,
                         (b + 1) % cfg.batches_per_epoch)
            if val_graphs:
                vr = np.random.default_rng([cfg.seed, epoch, cfg.batches_per_epoch])
                nll = score_nll_batch(params, val_graphs, rng=vr)
                finite = nll[np.isfinite(nll)]
                emit({"epoch": epoch, "step": step,
                      "val_nll": float(finite.mean()) if finite.size else None,
                      "val_count": int(finite.size)}, validation=True)
        save(cfg.epochs, 0)
    finally:
        if log_fh:
            log_fh.close()
    return params, log
