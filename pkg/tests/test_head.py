import math

import numpy as np
import pytest

from rit.config import HeadConfig
from rit.errors import DimensionError
from rit.head import (
    HeadParams,
    bce_loss,
    build_targets,
    focal_tversky_loss,
    global_rows,
    global_similarity,
    instance_centres,
    local_similarity,
    mos_from_logits,
    mos_predict,
    offset_forward,
    offset_loss,
    symmetrize,
)
from rit.numerics import Tensor
from rit.sampling import NeighborIndex, knn


def _head(rng, dim=4, **flags):
    return HeadParams(dim, HeadConfig(k_similarity=3, **flags), rng)


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


# ---------------------------------------------------------------------------
# Moving / static
# ---------------------------------------------------------------------------
def test_equal_logits_stay_static():
    probs, moving = mos_from_logits(Tensor([[0.3, 0.3]]))
    assert not moving[0]
    np.testing.assert_allclose(probs.data, [[0.5, 0.5]])


def test_confident_moving():
    probs, moving = mos_from_logits(Tensor([[-10.0, 10.0]]))
    assert moving[0]
    assert probs.data[0, 1] > 0.9999


def test_mos_probabilities_sum_to_one(rng):
    head = _head(rng)
    probs, moving = mos_predict(head, Tensor(rng.normal(size=(9, 4))), training=True)
    np.testing.assert_allclose(probs.data.sum(axis=1), 1.0, atol=1e-12)
    assert moving.shape == (9,)


# ---------------------------------------------------------------------------
# Similarities
# ---------------------------------------------------------------------------
def test_local_similarity_zero_weights_is_half(rng):
    head = _head(rng)
    for lin in (head.wq, head.wk, head.wr):
        lin.weight.data[:] = 0.0
        lin.bias.data[:] = 0.0
    pts = rng.normal(size=(6, 3))
    s = local_similarity(head, Tensor(rng.normal(size=(6, 4))), pts, knn(pts, pts, 3))
    np.testing.assert_array_equal(s.data, np.full((6, 3), 0.5))


def test_local_similarity_orthogonal_embeddings(rng):
    head = _head(rng, dim=2)
    head.wq.weight.data = np.eye(2)
    head.wk.weight.data = np.eye(2)
    head.wq.bias.data[:] = 0.0
    head.wk.bias.data[:] = 0.0
    head.wr.weight.data[:] = 0.0
    head.wr.bias.data[:] = 0.0
    xb = Tensor([[1.0, 0.0], [0.0, 1.0]])
    nb = NeighborIndex(np.array([[1], [0]]), 2)
    s = local_similarity(head, xb, np.zeros((2, 3)), nb)
    np.testing.assert_array_equal(s.data, [[0.5], [0.5]])


def test_local_similarity_matches_loop(rng):
    head = _head(rng)
    pts = rng.normal(size=(5, 3))
    x = rng.normal(size=(5, 4))
    nb = knn(pts, pts, 3)
    s = local_similarity(head, Tensor(x), pts, nb).data
    q = x @ head.wq.weight.data + head.wq.bias.data
    k = x @ head.wk.weight.data + head.wk.bias.data
    for i in range(5):
        for j, src in enumerate(nb.indices[i]):
            pos = max(0.0, float((pts[i] - pts[src]) @ head.wr.weight.data[:, 0] + head.wr.bias.data[0]))
            assert s[i, j] == pytest.approx(_sig(float(q[i] @ k[src]) + pos), abs=1e-12)


def test_global_similarity_degenerate_sizes(rng):
    head = _head(rng)
    xb = Tensor(rng.normal(size=(4, 4)))
    assert global_similarity(head, xb, np.zeros(4, dtype=bool)).shape == (0, 0)
    one = global_similarity(head, xb, np.array([False, True, False, False]))
    assert one.shape == (1, 1)


def test_global_similarity_matches_loop(rng):
    head = _head(rng)
    x = rng.normal(size=(6, 4))
    mask = np.array([True, False, True, True, False, True])
    s = global_similarity(head, Tensor(x), mask).data
    rows = np.flatnonzero(mask)
    q = x @ head.wq.weight.data + head.wq.bias.data
    k = x @ head.wk.weight.data + head.wk.bias.data
    for a, i in enumerate(rows):
        for b, j in enumerate(rows):
            assert s[a, b] == pytest.approx(_sig(float(q[i] @ k[j])), abs=1e-12)


def test_global_similarity_identical_rows_constant(rng):
    head = _head(rng)
    x = np.tile(rng.normal(size=4), (3, 1))
    s = global_similarity(head, Tensor(x), np.ones(3, dtype=bool)).data
    np.testing.assert_allclose(s, s[0, 0])


def test_global_positional_term_is_optional(rng):
    head = _head(rng, global_positional_encoding=True)
    x = Tensor(rng.normal(size=(3, 4)))
    pts = rng.normal(size=(3, 3))
    mask = np.ones(3, dtype=bool)
    with_pos = global_similarity(head, x, mask, pts).data
    without = global_similarity(head, x, mask).data
    assert (with_pos >= without - 1e-15).all()


def test_symmetrize(rng):
    s = rng.uniform(size=(4, 4))
    out = symmetrize(Tensor(s))
    np.testing.assert_allclose(out, out.T)
    np.testing.assert_allclose(out + out.T, s + s.T)


# ---------------------------------------------------------------------------
# Targets
# ---------------------------------------------------------------------------
def test_targets_all_static():
    nb = NeighborIndex(np.array([[0, 1], [1, 0], [2, 1]]), 3)
    t = build_targets(nb, np.zeros(3, bool), np.full(3, -1), np.zeros(3, bool))
    assert not t.local.any()
    assert t.global_.shape == (0, 0)


def test_targets_class_mode_marks_static_pairs():
    nb = NeighborIndex(np.array([[0, 1], [1, 0]]), 2)
    t = build_targets(nb, np.zeros(2, bool), np.full(2, -1), np.zeros(2, bool), static_mode="class")
    np.testing.assert_array_equal(t.local, np.ones((2, 2)))


def test_targets_single_instance_self_inclusive():
    moving = np.array([True, True, True, False])
    instance = np.array([0, 0, 0, -1])
    nb = NeighborIndex(np.array([[0, 1, 3], [1, 2, 0], [2, 0, 3], [3, 2, 1]]), 4)
    t = build_targets(nb, moving, instance, moving)
    np.testing.assert_array_equal(t.local, [[1, 1, 0], [1, 1, 1], [1, 1, 0], [0, 0, 0]])
    np.testing.assert_array_equal(t.global_, np.ones((3, 3)))


def test_targets_false_positive_row_is_zero():
    gt_moving = np.array([True, True, False])
    instance = np.array([4, 4, -1])
    rows = np.array([True, True, True])
    nb = NeighborIndex(np.array([[0], [1], [2]]), 3)
    t = build_targets(nb, gt_moving, instance, rows)
    np.testing.assert_array_equal(t.global_[2], 0.0)
    np.testing.assert_array_equal(t.global_[:, 2], 0.0)
    np.testing.assert_array_equal(t.global_[:2, :2], np.ones((2, 2)))


def test_global_rows_modes():
    pred = np.array([True, False, False])
    gt = np.array([False, True, False])
    np.testing.assert_array_equal(global_rows(pred, gt), pred)
    np.testing.assert_array_equal(global_rows(pred, gt, mode="gt"), gt)
    np.testing.assert_array_equal(global_rows(pred, gt, teacher_forcing=True), [True, True, False])


def test_instance_centres():
    pts = np.array([[0.0, 0, 0], [2.0, 0, 0], [5.0, 5, 0]])
    centres = instance_centres(pts, [True, True, False], [1, 1, -1])
    np.testing.assert_array_equal(centres, [[1.0, 0, 0], [1.0, 0, 0], [0.0, 0, 0]])


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------
def test_bce_at_half_is_ln2():
    for t in (0.0, 1.0):
        assert bce_loss(Tensor(np.full((2, 3), 0.5)), np.full((2, 3), t)).item() == pytest.approx(math.log(2.0))


def test_bce_perfect_prediction_near_zero():
    t = np.array([[0.0, 1.0, 1.0]])
    assert bce_loss(Tensor(t), t).item() < 1e-6


def test_bce_matches_formula(rng):
    p = rng.uniform(0.05, 0.95, size=(4, 5))
    t = rng.integers(0, 2, size=(4, 5)).astype(float)
    expected = -np.mean(t * np.log(p) + (1 - t) * np.log(1 - p))
    assert bce_loss(Tensor(p), t).item() == pytest.approx(expected, rel=1e-12)


def test_bce_empty_and_mismatch():
    assert bce_loss(Tensor(np.zeros((0, 0))), np.zeros((0, 0))).item() == 0.0
    with pytest.raises(DimensionError):
        bce_loss(Tensor(np.zeros((2, 2))), np.zeros((2, 3)))


def test_focal_tversky_perfect_and_wrong():
    targets = np.array([0, 1, 1, 0])
    perfect = np.eye(2)[targets]
    assert focal_tversky_loss(Tensor(perfect), targets).item() < 1e-6
    wrong = np.eye(2)[1 - targets]
    assert focal_tversky_loss(Tensor(wrong), targets).item() == pytest.approx(2.0, abs=1e-5)


def test_focal_tversky_soft_case():
    probs = np.array([[0.8, 0.2], [0.3, 0.7], [0.6, 0.4]])
    targets = np.array([0, 1, 1])
    onehot = np.eye(2)[targets]
    alpha, beta, gamma, smooth = 0.7, 0.3, 4.0 / 3.0, 1e-6
    expected = 0.0
    for c in range(2):
        tp = np.sum(probs[:, c] * onehot[:, c])
        fn = np.sum((1 - probs[:, c]) * onehot[:, c])
        fp = np.sum(probs[:, c] * (1 - onehot[:, c]))
        ti = (tp + smooth) / (tp + alpha * fn + beta * fp + smooth)
        expected += (1 - ti) ** (1 / gamma)
    assert focal_tversky_loss(Tensor(probs), targets).item() == pytest.approx(expected, rel=1e-12)


def test_focal_tversky_accepts_one_hot(rng):
    probs = rng.dirichlet([1.0, 1.0], size=5)
    labels = rng.integers(0, 2, size=5)
    a = focal_tversky_loss(Tensor(probs), labels).item()
    b = focal_tversky_loss(Tensor(probs), np.eye(2)[labels]).item()
    assert a == b


def test_offset_loss_examples(rng):
    pts = rng.normal(size=(4, 3))
    centres = rng.normal(size=(4, 3))
    assert offset_loss(Tensor(centres - pts), centres, pts).item() == pytest.approx(0.0, abs=1e-12)
    pts = np.zeros((3, 3))
    centres = np.tile([1.0, 1.0, 0.0], (3, 1))
    assert offset_loss(Tensor(np.zeros((3, 3))), centres, pts).item() == pytest.approx(2.0)


def test_offset_loss_matches_hand_sum(rng):
    o, c, p = rng.normal(size=(5, 3)), rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    mask = np.array([True, False, True, True, False])
    expected = np.abs(o - (c - p))[mask].sum() / 3
    assert offset_loss(Tensor(o), c, p, mask).item() == pytest.approx(expected, rel=1e-12)
    assert offset_loss(Tensor(o), c, p, np.zeros(5, bool)).item() == 0.0


def test_offset_forward_shape(rng):
    head = _head(rng, offset_head=True)
    out = offset_forward(head, Tensor(rng.normal(size=(6, 4))), rng.normal(size=(6, 3)), training=True)
    assert out.shape == (6, 3)
