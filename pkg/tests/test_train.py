import math

import numpy as np
import pytest

import rit.train as train_module
from rit.config import TrainConfig, rng_for
from rit.errors import ContractError, TrainingError, WeightFileError
from rit.model import RadarInstanceTransformer, compute_loss, forward, predict, predict_offset
from rit.numerics import GradTape, Tensor, backward, set_checked
from rit.pointcloud import Scan, SequenceWindow, synth_scene
from rit.train import (
    SGD,
    AdamW,
    build_model,
    collect_windows,
    evaluate,
    get_optimizer,
    load_checkpoint,
    lr_at,
    save_checkpoint,
    train,
)


def _sequences(cfg):
    return [synth_scene(cfg.synth, rng_for(cfg.seed, "data"))]


def _params(model):
    return {name: p.data.copy() for name, p in model.named_parameters()}


# ---------------------------------------------------------------------------
# Schedule and optimisers
# ---------------------------------------------------------------------------
def test_step_decay_schedule():
    cfg = TrainConfig(epochs=10, lr=1.0, milestones=[0.6, 0.8], lr_decay=10.0)
    assert [lr_at(e, cfg) for e in (0, 5, 6, 7, 8, 9)] == pytest.approx([1.0, 1.0, 0.1, 0.1, 0.01, 0.01])


def test_get_optimizer():
    assert get_optimizer("adamw") is AdamW
    assert get_optimizer("sgd") is SGD
    with pytest.raises(ContractError):
        get_optimizer("lbfgs")


def test_sgd_momentum_update():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    opt = SGD([p], TrainConfig(momentum=0.5, weight_decay=0.0))
    p.grad = np.array([1.0, -1.0])
    opt.step(0.1)
    np.testing.assert_allclose(p.data, [0.9, 2.1])
    opt.step(0.1)
    np.testing.assert_allclose(p.data, [0.9 - 0.15, 2.1 + 0.15])


def test_adamw_first_step_moves_by_lr():
    p = Tensor(np.array([0.0, 0.0]), requires_grad=True)
    opt = AdamW([p], TrainConfig(weight_decay=0.0))
    p.grad = np.array([3.0, -0.5])
    opt.step(0.01)
    np.testing.assert_allclose(p.data, [-0.01, 0.01], rtol=1e-6)


def test_adamw_decay_is_decoupled():
    p = Tensor(np.array([2.0]), requires_grad=True)
    opt = AdamW([p], TrainConfig(weight_decay=0.1))
    p.grad = np.zeros(1)
    opt.step(0.5)
    np.testing.assert_allclose(p.data, [2.0 - 0.5 * 0.1 * 2.0])


# ---------------------------------------------------------------------------
# Forward and inference
# ---------------------------------------------------------------------------
def test_forward_shapes(tiny_cfg):
    model = build_model(tiny_cfg)
    window = collect_windows(_sequences(tiny_cfg), tiny_cfg.model.T)[2]
    out = forward(model, window)
    n = window.current.n
    assert out.xb.shape == (n, tiny_cfg.backbone.widths[0])
    assert out.probs.shape == (n, 2)
    assert out.local.shape == (n, tiny_cfg.head.k_similarity)
    np.testing.assert_allclose(out.probs.data.sum(axis=1), 1.0)


def test_parameter_names_are_prefixed(tiny_cfg):
    names = [name for name, _ in build_model(tiny_cfg).named_parameters()]
    assert names
    assert all(name.split(".")[0] in ("safe", "backbone", "head") for name in names)


def test_predict_empty_scan(tiny_cfg):
    model = build_model(tiny_cfg)
    result = predict(model, SequenceWindow(Scan.empty()))
    assert result.n == 0


def test_predicted_ids_are_contiguous(tiny_cfg):
    model = build_model(tiny_cfg)
    head = model.head.mos.layers[-1].linear
    head.weight.data[:] = 0.0
    head.bias.data[:] = [0.0, 1.0]
    window = collect_windows(_sequences(tiny_cfg), tiny_cfg.model.T)[1]
    result = predict(model, window)
    assert result.moving.all()
    ids = np.unique(result.instance)
    np.testing.assert_array_equal(ids, np.arange(len(ids)))


def test_predict_offset_needs_offset_head(tiny_cfg):
    model = build_model(tiny_cfg)
    window = collect_windows(_sequences(tiny_cfg), tiny_cfg.model.T)[0]
    with pytest.raises(ContractError):
        predict_offset(model, window, 3.5)


def test_offset_variant(tiny_cfg):
    tiny_cfg.head.offset_head = True
    model = build_model(tiny_cfg)
    windows = collect_windows(_sequences(tiny_cfg), tiny_cfg.model.T)
    _, parts = compute_loss(model, windows[1])
    assert "offset" in parts
    report, preds = evaluate(model, windows[:2], method="offset")
    assert report.scans == 2
    assert len(preds) == 2


def test_loss_parts(tiny_cfg):
    model = build_model(tiny_cfg)
    window = collect_windows(_sequences(tiny_cfg), tiny_cfg.model.T)[3]
    with GradTape():
        total, parts = compute_loss(model, window, teacher_forcing=True)
    assert {"semantic", "local", "global"} <= set(parts)
    assert math.isfinite(total.item())
    assert total.item() == pytest.approx(sum(parts.values()))


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------
def test_zero_learning_rate_leaves_parameters(tiny_cfg):
    tiny_cfg.train.lr = 0.0
    tiny_cfg.train.epochs = 1
    before = _params(build_model(tiny_cfg))
    model, result = train(tiny_cfg, _sequences(tiny_cfg))
    after = _params(model)
    assert result.epochs_run == 1
    assert before.keys() == after.keys()
    for name in before:
        np.testing.assert_array_equal(before[name], after[name])


def test_gradient_step_lowers_loss(tiny_cfg):
    tiny_cfg.head.global_rows = "gt"
    tiny_cfg.train.momentum = 0.0
    tiny_cfg.train.weight_decay = 0.0
    model = build_model(tiny_cfg)
    window = collect_windows(_sequences(tiny_cfg), tiny_cfg.model.T)[2]
    opt = SGD(model.parameters(), tiny_cfg.train)

    model.zero_grad()
    with GradTape():
        loss, _ = compute_loss(model, window)
        before = loss.item()
        backward(loss)
    opt.step(1e-4)
    with GradTape():
        after, _ = compute_loss(model, window)
    assert after.item() < before


def test_training_history_is_finite(tiny_cfg):
    _, result = train(tiny_cfg, _sequences(tiny_cfg))
    assert result.epochs_run == tiny_cfg.train.epochs
    assert all(math.isfinite(v) for v in result.history)
    assert {"semantic", "local"} <= set(result.parts[0])


def test_resume_is_bit_exact(tiny_cfg_factory, tmp_path):
    cfg = tiny_cfg_factory()
    cfg.train.epochs = 2
    seqs = _sequences(cfg)
    full, _ = train(cfg, seqs)

    ckpt = tmp_path / "half.ritw"
    train(cfg, seqs, out_path=ckpt, until=1)
    fresh = tiny_cfg_factory()
    fresh.train.epochs = 2
    resumed, result = train(fresh, seqs, resume=ckpt)
    assert result.epochs_run == 1

    a, b = full.state_dict(), resumed.state_dict()
    assert a.keys() == b.keys()
    for name in a:
        np.testing.assert_array_equal(a[name], b[name], err_msg=name)


def test_non_finite_loss_stops_training(tiny_cfg, monkeypatch):
    set_checked(False)

    def poisoned(model, window, training=True, teacher_forcing=False):
        return Tensor(np.nan), {"semantic": float("nan")}

    monkeypatch.setattr(train_module, "compute_loss", poisoned)
    with pytest.raises(TrainingError):
        train(tiny_cfg, _sequences(tiny_cfg))


def test_no_windows_is_an_error(tiny_cfg):
    with pytest.raises(ContractError):
        train(tiny_cfg, [])


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------
def test_checkpoint_round_trip(tiny_cfg, tmp_path):
    model = build_model(tiny_cfg)
    opt = AdamW(model.parameters(), tiny_cfg.train)
    opt.steps = 4
    path = save_checkpoint(tmp_path / "m.ritw", model, opt, epoch=3)

    other = RadarInstanceTransformer(tiny_cfg, np.random.default_rng(99))
    other_opt = AdamW(other.parameters(), tiny_cfg.train)
    assert load_checkpoint(path, other, other_opt) == 3
    assert other_opt.steps == 4
    for name, value in model.state_dict().items():
        np.testing.assert_array_equal(other.state_dict()[name], value)


def test_checkpoint_without_model_tensors(tiny_cfg, tmp_path):
    from rit.numerics import save_weights

    path = save_weights(tmp_path / "empty.ritw", {"meta.epoch": np.array([1.0])})
    with pytest.raises(WeightFileError):
        load_checkpoint(path, build_model(tiny_cfg))


def test_weight_names_are_canonical(tiny_cfg):
    names = {name for name, _ in build_model(tiny_cfg).named_parameters()}
    assert {"safe.wq.weight", "safe.wk.weight", "safe.wv.weight", "head.wq.weight", "head.mos.layers.0.linear.weight"} <= names
    assert not any(name.startswith("safe.attn.") for name in names)
