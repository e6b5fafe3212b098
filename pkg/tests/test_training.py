import json

import numpy as np
import pytest

import sggen.autodiff as ad
from sggen.autodiff import Tensor
from sggen.errors import DataError
from sggen.graphs import OrderingScheme, OrderKind, SceneGraph
from sggen.model import ModelConfig, forward_loss, init_model, load_checkpoint
from sggen.training import (
    AdamState,
    NonFiniteGradient,
    TrainConfig,
    TrainLog,
    adam_step,
    batch_rng,
    draw_batch,
    lr_at,
    train,
)

from conftest import random_graph

SMALL = ModelConfig(max_nodes=8, node_embed_dim=8, edge_embed_dim=4,
                    hidden_size=16, num_layers=2, mlp_hidden=16)


@pytest.fixture
def dataset(small_vocab):
    rng = np.random.default_rng(5)
    return [random_graph(rng, small_vocab.num_objects,
                         small_vocab.num_relations) for _ in range(10)]


def fresh_state(value=1.0):
    named = {"w": Tensor(np.array([[value]]))}
    return named, AdamState.fresh(named)


# ---------------------------------------------------------------- schedule

def test_learning_rate_staircase_values():
    cfg = TrainConfig()
    assert lr_at(cfg, 0) == pytest.approx(0.001, rel=1e-12)
    assert lr_at(cfg, 1709) == pytest.approx(0.001, rel=1e-12)
    assert lr_at(cfg, 1710) == pytest.approx(0.00095, rel=1e-12)
    assert lr_at(cfg, 3420) == pytest.approx(0.0009025, rel=1e-12)


def test_learning_rate_rejects_negative_step():
    with pytest.raises(DataError):
        lr_at(TrainConfig(), -1)


def test_config_validation():
    with pytest.raises(DataError):
        TrainConfig(epochs=0)
    with pytest.raises(DataError):
        TrainConfig(batch_size=-1)
    with pytest.raises(DataError):
        TrainConfig(decay=0.0)
    with pytest.raises(DataError):
        TrainConfig(decay=1.5)


def test_desk_profile_sizes():
    cfg = TrainConfig.desk()
    assert (cfg.epochs, cfg.batches_per_epoch, cfg.batch_size) == (50, 64, 32)
    assert TrainConfig.desk(batch_size=4).batch_size == 4
    ref = TrainConfig.full()
    assert (ref.epochs, ref.batches_per_epoch, ref.batch_size) == (300, 256, 256)


# ---------------------------------------------------------------- adam

def test_adam_first_step_moves_by_learning_rate():
    # m-hat = v-hat = 1 at t=1 for any constant gradient, so the update
    # magnitude is lr up to the epsilon in the denominator.
    named, state = fresh_state(1.0)
    grads = {"w": np.array([[1.0]])}
    norm = adam_step(named, grads, state, lr=0.5, cfg=TrainConfig())
    assert norm == pytest.approx(1.0, rel=1e-12)
    assert named["w"].data[0, 0] == pytest.approx(0.5, abs=1e-7)
    assert state.t == 1


def test_adam_zero_gradient_is_identity():
    named, state = fresh_state(3.25)
    adam_step(named, {"w": np.zeros((1, 1))}, state, lr=0.5, cfg=TrainConfig())
    assert named["w"].data[0, 0] == 3.25
    assert state.t == 1


def test_adam_nonfinite_gradient_leaves_state_untouched():
    named, state = fresh_state(2.0)
    with pytest.raises(NonFiniteGradient):
        adam_step(named, {"w": np.array([[np.nan]])}, state, lr=0.5,
                  cfg=TrainConfig())
    assert named["w"].data[0, 0] == 2.0
    assert state.t == 0
    assert state.m["w"][0, 0] == 0.0


def test_gradient_clipping_matches_prescaled_gradient():
    g = np.array([[30.0, 40.0]])          # norm 50, clipped by 0.1
    named_a, state_a = fresh_state()
    named_a["w"] = Tensor(np.array([[1.0, 1.0]]))
    state_a = AdamState.fresh(named_a)
    norm = adam_step(named_a, {"w": g.copy()}, state_a, lr=0.1,
                     cfg=TrainConfig(clip_norm=5.0))
    assert norm == pytest.approx(50.0, rel=1e-12)

    named_b = {"w": Tensor(np.array([[1.0, 1.0]]))}
    state_b = AdamState.fresh(named_b)
    adam_step(named_b, {"w": g * 0.1}, state_b, lr=0.1,
              cfg=TrainConfig(clip_norm=0.0))
    np.testing.assert_array_equal(named_a["w"].data, named_b["w"].data)


def test_adam_state_tensor_round_trip():
    named = {"a.w": Tensor(np.ones((2, 3))), "b": Tensor(np.ones((1, 1)))}
    state = AdamState.fresh(named)
    state.m["a.w"][:] = 7.0
    state.t = 4
    packed = state.to_tensors()
    assert set(packed) == {"m.a.w", "m.b", "v.a.w", "v.b"}
    back = AdamState.from_tensors(packed, t=4)
    np.testing.assert_array_equal(back.m["a.w"], state.m["a.w"])
    assert back.t == 4


# ---------------------------------------------------------------- batches

def test_batch_draw_is_reproducible(small_vocab, dataset):
    cfg = TrainConfig(batch_size=6, seed=11)
    scheme = OrderingScheme()
    a = draw_batch(dataset, cfg, scheme, small_vocab, epoch=2, batch=3)
    b = draw_batch(dataset, cfg, scheme, small_vocab, epoch=2, batch=3)
    assert a == b
    c = draw_batch(dataset, cfg, scheme, small_vocab, epoch=2, batch=4)
    assert a != c


def test_batch_rng_streams_are_distinct():
    x = batch_rng(0, 0, 0).integers(0, 1 << 30, size=4)
    y = batch_rng(0, 0, 1).integers(0, 1 << 30, size=4)
    z = batch_rng(0, 1, 0).integers(0, 1 << 30, size=4)
    assert not np.array_equal(x, y) and not np.array_equal(x, z)


def test_orderings_are_redrawn_per_appearance(small_vocab):
    # One edgeless graph with distinct labels repeated across the batch:
    # random orderings must vary between appearances.
    g = SceneGraph(nodes=(0, 1, 2, 3), edges=frozenset())
    cfg = TrainConfig(batch_size=12, seed=0)
    scheme = OrderingScheme(kind=OrderKind.RANDOM)
    seqs = draw_batch([g], cfg, scheme, small_vocab, epoch=0, batch=0)
    assert len({s.node_seq for s in seqs}) > 1


# ---------------------------------------------------------------- train loop

def tiny_setup(small_vocab, dataset, **cfg_kw):
    params = init_model(SMALL, small_vocab, seed=7)
    defaults = dict(epochs=2, batches_per_epoch=3, batch_size=4, seed=3)
    defaults.update(cfg_kw)
    return params, TrainConfig(**defaults)


def test_training_is_deterministic(small_vocab, dataset):
    losses = []
    for _ in range(2):
        params, cfg = tiny_setup(small_vocab, dataset)
        _, log = train(params, dataset, cfg)
        losses.append([r["loss"] for r in log.steps])
    assert losses[0] == losses[1]


def test_log_records_schedule_and_monotone_steps(small_vocab, dataset):
    params, cfg = tiny_setup(small_vocab, dataset, decay_every=3)
    _, log = train(params, dataset, cfg)
    steps = [r["step"] for r in log.steps]
    assert steps == sorted(set(steps)) == list(range(6))
    assert [r["lr"] for r in log.steps] == [0.001] * 3 + [0.00095] * 3
    for r in log.steps:
        assert r["seconds"] >= 0.0
        assert np.isfinite(r["loss"]) and np.isfinite(r["grad_norm"])


def test_validation_records_per_epoch(small_vocab, dataset):
    params, cfg = tiny_setup(small_vocab, dataset)
    _, log = train(params, dataset, cfg, val_graphs=dataset[:4])
    assert len(log.validation) == cfg.epochs
    for rec in log.validation:
        assert rec["val_count"] == 4
        assert np.isfinite(rec["val_nll"])


def test_train_sets_prior_and_ordering(small_vocab, dataset):
    params, cfg = tiny_setup(small_vocab, dataset)
    assert params.first_node_prior is None
    train(params, dataset, cfg)
    assert params.first_node_prior is not None
    assert params.ordering == cfg.ordering


def test_log_jsonl_round_trip(tmp_path, small_vocab, dataset):
    params, cfg = tiny_setup(small_vocab, dataset)
    path = tmp_path / "log.jsonl"
    _, log = train(params, dataset, cfg, val_graphs=dataset[:2],
                   log_path=path)
    with open(path) as fh:
        lines = [json.loads(l) for l in fh]
    assert len(lines) == len(log.steps) + len(log.validation)
    back = TrainLog.read_jsonl(path)
    assert back.steps == log.steps
    assert back.validation == log.validation


def test_resume_reproduces_interrupted_run(tmp_path, small_vocab, dataset):
    full_params, cfg3 = tiny_setup(small_vocab, dataset, epochs=3)
    _, full_log = train(full_params, dataset, cfg3)

    part_params, cfg1 = tiny_setup(small_vocab, dataset, epochs=1)
    ckpt = tmp_path / "mid.ckpt"
    train(part_params, dataset, cfg1, checkpoint_path=ckpt)

    loaded, meta, opt = load_checkpoint(ckpt)
    state = meta["train_state"]
    assert state["step"] == cfg1.batches_per_epoch
    _, resumed_log = train(loaded, dataset, cfg3, resume=state,
                           opt_tensors=opt)

    tail = [r["loss"] for r in full_log.steps[state["step"]:]]
    resumed = [r["loss"] for r in resumed_log.steps]
    assert len(resumed) == len(tail)
    assert resumed[0] == pytest.approx(tail[0], abs=1e-6)
    np.testing.assert_allclose(resumed, tail, rtol=1e-6)
    assert [r["step"] for r in resumed_log.steps] == list(
        range(state["step"], len(full_log.steps)))


def test_resume_requires_moments(small_vocab, dataset):
    params, cfg = tiny_setup(small_vocab, dataset)
    with pytest.raises(DataError):
        train(params, dataset, cfg,
              resume={"epoch": 0, "batch": 1, "step": 1, "adam_t": 1},
              opt_tensors={})


def test_periodic_checkpoint_restores_exact_loss(tmp_path, small_vocab, dataset):
    params, cfg = tiny_setup(small_vocab, dataset, checkpoint_every=4)
    ckpt = tmp_path / "periodic.ckpt"
    train(params, dataset, cfg, checkpoint_path=ckpt)
    loaded, meta, opt = load_checkpoint(ckpt)
    # Final save wins; its forward loss must match bit for bit.
    seqs = draw_batch(dataset, cfg, cfg.ordering, small_vocab, 0, 0)
    a = forward_loss(params, seqs).item()
    b = forward_loss(loaded, seqs).item()
    assert a == b
    assert meta["train_state"]["epoch"] == cfg.epochs
    assert set(opt) == {f"{p}.{n}" for p in ("m", "v")
                        for n in params.named_tensors()}


def test_loss_halves_on_small_dataset(small_vocab, dataset):
    params = init_model(SMALL, small_vocab, seed=1)
    cfg = TrainConfig(epochs=5, batches_per_epoch=100, batch_size=8,
                      lr0=0.003, seed=2)
    _, log = train(params, dataset, cfg)
    first = log.steps[0]["loss"]
    final = min(r["loss"] for r in log.steps[-20:])
    assert final <= 0.5 * first, (first, final)


def test_empty_dataset_rejected(small_vocab):
    params = init_model(SMALL, small_vocab, seed=0)
    with pytest.raises(DataError):
        train(params, [], TrainConfig())
