"""Moving-object head, attentive instance similarity, targets and losses."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .attention import relative_positions
from .config import HeadConfig
from .errors import DimensionError
from .numerics import (
    MLP,
    LinearLayer,
    Module,
    Tensor,
    as_tensor,
    clip,
    concat,
    linear_forward,
    log,
    mlp_forward,
    power,
    relu,
    reshape,
    sigmoid,
    softmax_axis,
    take,
    tmean,
    tabs,
    transpose,
    tsum,
)
from .sampling import NeighborIndex, sample_and_group

logger = logging.getLogger(__name__)


class HeadParams(Module):
    def __init__(self, dim: int, cfg: HeadConfig, rng: np.random.Generator) -> None:
        self.dim = dim
        self.k = cfg.k_similarity
        self.mos = MLP.build([dim, dim, 2], rng, norm="batch")
        self.wq = LinearLayer(dim, dim, rng)
        self.wk = LinearLayer(dim, dim, rng)
        self.wr = LinearLayer(3, 1, rng)
        self.wr_global = LinearLayer(3, 1, rng) if cfg.global_positional_encoding else None
        self.offset = MLP.build([dim + 3, dim, 3], rng, norm="batch") if cfg.offset_head else None


# ---------------------------------------------------------------------------
# Moving / static
# ---------------------------------------------------------------------------
def mos_logits(head: HeadParams, xb, training: bool = False) -> Tensor:
    return mlp_forward(xb, head.mos.layers, training)


def mos_from_logits(logits) -> tuple[Tensor, np.ndarray]:
    """Row softmax and the moving mask; equal logits stay static."""
    logits = as_tensor(logits)
    probs = softmax_axis(logits, axis=-1)
    return probs, logits.data[:, 1] > logits.data[:, 0]


def mos_predict(head: HeadParams, xb, training: bool = False) -> tuple[Tensor, np.ndarray]:
    return mos_from_logits(mos_logits(head, xb, training))


# ---------------------------------------------------------------------------
# Similarities
# ---------------------------------------------------------------------------
def _encode(head: HeadParams, xb) -> tuple[Tensor, Tensor]:
    xb = as_tensor(xb)
    if xb.shape[-1] != head.dim:
        raise DimensionError(f"head expects width {head.dim}, got {xb.shape}")
    return linear_forward(xb, head.wq), linear_forward(xb, head.wk)


def local_similarity(head: HeadParams, xb, pts, neighbors: NeighborIndex) -> Tensor:
    """sigmoid(q_i · k_j + relu(w_r · (p_i - p_j))) over each point's neighbours."""
    q, k = _encode(head, xb)
    n, kk = neighbors.indices.shape
    dots = tsum(reshape(q, (n, 1, head.dim)) * sample_and_group(k, neighbors), axis=2)
    pos = relu(linear_forward(relative_positions(pts, pts, neighbors), head.wr))
    return sigmoid(dots + reshape(pos, (n, kk)))


def global_similarity(head: HeadParams, xb, moving_mask, pts=None) -> Tensor:
    """sigmoid(Q Kᵀ) restricted to the rows flagged in ``moving_mask``."""
    q, k = _encode(head, xb)
    rows = np.flatnonzero(np.asarray(moving_mask, dtype=bool))
    qm, km = take(q, rows), take(k, rows)
    logits = qm @ transpose(km)
    if head.wr_global is not None and pts is not None:
        p = np.asarray(pts, dtype=np.float64)[rows]
        rel = Tensor(p[:, None, :] - p[None, :, :])
        pos = relu(linear_forward(rel, head.wr_global))
        logits = logits + reshape(pos, (len(rows), len(rows)))
    return sigmoid(logits)


def symmetrize(s) -> np.ndarray:
    s = np.asarray(s.data if isinstance(s, Tensor) else s, dtype=np.float64)
    return 0.5 * (s + s.T)


def offset_forward(head: HeadParams, xb, pts, training: bool = False) -> Tensor:
    """Per-point vector towards the instance centre."""
    xb = as_tensor(xb)
    return mlp_forward(concat([xb, Tensor(np.asarray(pts, dtype=np.float64))], axis=-1), head.offset.layers, training)


# ---------------------------------------------------------------------------
# Targets
# ---------------------------------------------------------------------------
@dataclass
class SimilarityTargets:
    local: np.ndarray
    global_: np.ndarray
    rows: np.ndarray


def global_rows(pred_moving, gt_moving, mode: str = "predicted", teacher_forcing: bool = False) -> np.ndarray:
    pred_moving = np.asarray(pred_moving, dtype=bool)
    gt_moving = np.asarray(gt_moving, dtype=bool)
    if teacher_forcing:
        return pred_moving | gt_moving
    return gt_moving if mode == "gt" else pred_moving


def build_targets(
    neighbors: NeighborIndex,
    gt_moving,
    gt_instance,
    rows_mask,
    static_mode: str = "zero",
) -> SimilarityTargets:
    """Pairwise same-instance targets for local neighbourhoods and the global rows.

    Static endpoints never match in the global matrix. Locally, static pairs
    are 0 unless ``static_mode == "class"``, which marks static-static pairs 1.
    """
    gt_moving = np.asarray(gt_moving, dtype=bool)
    gt_instance = np.asarray(gt_instance, dtype=np.int64)
    nb = neighbors.indices
    both_moving = gt_moving[:, None] & gt_moving[nb]
    local = (both_moving & (gt_instance[:, None] == gt_instance[nb])).astype(np.float64)
    if static_mode == "class":
        local[~gt_moving[:, None] & ~gt_moving[nb]] = 1.0

    rows = np.flatnonzero(np.asarray(rows_mask, dtype=bool))
    mv, inst = gt_moving[rows], gt_instance[rows]
    glob = (mv[:, None] & mv[None, :] & (inst[:, None] == inst[None, :])).astype(np.float64)
    return SimilarityTargets(local=local, global_=glob, rows=rows)


def instance_centres(pts, gt_moving, gt_instance) -> np.ndarray:
    """Per-point mean coordinate of the point's instance; static rows are zero."""
    pts = np.asarray(pts, dtype=np.float64)
    centres = np.zeros_like(pts)
    gt_instance = np.asarray(gt_instance)
    for inst in np.unique(gt_instance[np.asarray(gt_moving, dtype=bool)]):
        sel = gt_instance == inst
        centres[sel] = pts[sel].mean(axis=0)
    return centres


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------
def bce_loss(pred, target, clamp: float = 1e-7) -> Tensor:
    """Mean binary cross-entropy with probabilities clamped to [clamp, 1 - clamp]."""
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} and target {target.shape} differ")
    if pred.size == 0:
        return Tensor(0.0)
    p = clip(pred, clamp, 1.0 - clamp)
    ll = log(p) * target + log(1.0 - p) * (1.0 - target)
    return -tmean(ll)


def focal_tversky_loss(
    probs,
    targets,
    alpha: float = 0.7,
    beta: float = 0.3,
    gamma: float = 4.0 / 3.0,
    smooth: float = 1e-6,
) -> Tensor:
    """Σ_c (1 - TI_c)^(1/γ) with TI = TP / (TP + α·FN + β·FP) on soft counts.

    ``targets`` is either an (N,) class-index vector or an (N, C) one-hot matrix.
    """
    probs = as_tensor(probs)
    targets = np.asarray(targets)
    if targets.ndim == 1:
        targets = np.eye(probs.shape[1])[targets.astype(np.int64)]
    if targets.shape != probs.shape:
        raise DimensionError(f"probabilities {probs.shape} and targets {targets.shape} differ")
    tp = tsum(probs * targets, axis=0)
    fn = tsum((1.0 - probs) * targets, axis=0)
    fp = tsum(probs * (1.0 - targets), axis=0)
    ti = (tp + smooth) / (tp + fn * alpha + fp * beta + smooth)
    return tsum(power(clip(1.0 - ti, 1e-12, 1.0), 1.0 / gamma))


def offset_loss(offsets, centres, pts, mask=None) -> Tensor:
    """(1/N) Σ ||o_i - (c_i - p_i)||_1 over the rows selected by ``mask``."""
    offsets = as_tensor(offsets)
    target = np.asarray(centres, dtype=np.float64) - np.asarray(pts, dtype=np.float64)
    if mask is not None:
        rows = np.flatnonzero(np.asarray(mask, dtype=bool))
        offsets, target = take(offsets, rows), target[rows]
    if offsets.shape != target.shape:
        raise DimensionError(f"offsets {offsets.shape} and targets {target.shape} differ")
    if offsets.shape[0] == 0:
        return Tensor(0.0)
    return tsum(tabs(offsets - target)) * (1.0 / offsets.shape[0])
