"""The full network: temporal encoder → backbone → head, plus inference and losses."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .attention import SafeModule, safe_forward
from .backbone import Backbone, backbone_forward
from .config import PipelineConfig
from .errors import ContractError
from .head import (
    HeadParams,
    bce_loss,
    build_targets,
    focal_tversky_loss,
    global_rows,
    global_similarity,
    instance_centres,
    local_similarity,
    mos_from_logits,
    mos_logits,
    offset_forward,
    offset_loss,
)
from .metrics import PanopticResult, cluster_components
from .numerics import Module, Tensor, no_grad
from .partition import assign_instances
from .pointcloud import NO_INSTANCE, SequenceWindow, prepare_window
from .sampling import NeighborIndex, knn

logger = logging.getLogger(__name__)


class RadarInstanceTransformer(Module):
    """Parameter names start with ``safe.``, ``backbone.`` or ``head.``."""

    def __init__(self, cfg: PipelineConfig, rng: np.random.Generator) -> None:
        cfg.validate()
        self._cfg = cfg
        m = cfg.model
        self.safe = SafeModule(m.d1, m.d2, m.k_local, m.T, rng, m.weight_mlp)
        self.backbone = Backbone(cfg.backbone, rng, m.weight_mlp)
        self.head = HeadParams(cfg.backbone.widths[0], cfg.head, rng)

    @property
    def cfg(self) -> PipelineConfig:
        return self._cfg


@dataclass
class ForwardOutput:
    points: np.ndarray
    xb: Tensor
    logits: Tensor
    probs: Tensor
    moving: np.ndarray
    neighbors: NeighborIndex | None = None
    local: Tensor | None = None
    offsets: Tensor | None = None


def forward(model: RadarInstanceTransformer, window: SequenceWindow, training: bool = False) -> ForwardOutput:
    cfg = model.cfg
    window = prepare_window(window, cfg.model.T, align=cfg.model.align_poses)
    pts = window.current.xyz
    x = safe_forward(model.safe, window, training)
    xb = backbone_forward(model.backbone, x, pts, training)
    logits = mos_logits(model.head, xb, training)
    probs, moving = mos_from_logits(logits)
    out = ForwardOutput(pts, xb, logits, probs, moving)
    if len(pts) and (cfg.head.use_local_similarity or training):
        out.neighbors = knn(pts, pts, cfg.head.k_similarity)
        if cfg.head.use_local_similarity:
            out.local = local_similarity(model.head, xb, pts, out.neighbors)
    if model.head.offset is not None:
        out.offsets = offset_forward(model.head, xb, pts, training)
    return out


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------
def predict(model: RadarInstanceTransformer, window: SequenceWindow, radius: float | None = None) -> PanopticResult:
    """Moving mask from the head, instance ids from modularity partitioning."""
    cfg = model.cfg
    r = cfg.partition.radius if radius is None else radius
    with no_grad():
        out = forward(model, window, training=False)
        instance = np.full(len(out.points), NO_INSTANCE, dtype=np.int64)
        if out.moving.any():
            s_glob = None
            if cfg.head.use_global_similarity:
                s_glob = global_similarity(model.head, out.xb, out.moving, out.points).data
            part = assign_instances(out.points[out.moving], s_glob, r, cfg.partition)
            instance[out.moving] = part.assignment
    return PanopticResult(out.moving, instance)


def predict_offset(model: RadarInstanceTransformer, window: SequenceWindow, cluster_r: float) -> PanopticResult:
    """Predicted-moving points shifted by their offsets, then grouped by radius components."""
    if model.head.offset is None:
        raise ContractError("offset prediction needs a model built with head.offset_head = true")
    with no_grad():
        out = forward(model, window, training=False)
    instance = np.full(len(out.points), NO_INSTANCE, dtype=np.int64)
    shifted = out.points + out.offsets.data
    instance[out.moving] = cluster_components(shifted[out.moving], cluster_r)
    return PanopticResult(out.moving, instance)


# ---------------------------------------------------------------------------
# Training objective
# ---------------------------------------------------------------------------
def compute_loss(
    model: RadarInstanceTransformer,
    window: SequenceWindow,
    training: bool = True,
    teacher_forcing: bool = False,
) -> tuple[Tensor, dict[str, float]]:
    """focal Tversky + λ_loc·BCE(local) + λ_glob·BCE(global) [+ λ_off·L1(offsets)]."""
    cfg = model.cfg
    hc, tc = cfg.head, cfg.train
    out = forward(model, window, training)
    scan = window.current
    gt_moving, gt_instance = scan.moving, scan.instance

    total = focal_tversky_loss(
        out.probs,
        gt_moving.astype(np.int64),
        hc.tversky_alpha,
        hc.tversky_beta,
        hc.tversky_gamma,
        hc.tversky_smooth,
    )
    parts = {"semantic": total.item()}
    if scan.n == 0:
        return total, parts

    rows = global_rows(out.moving, gt_moving, hc.global_rows, teacher_forcing)
    targets = build_targets(out.neighbors, gt_moving, gt_instance, rows, hc.local_static_targets)
    if out.local is not None:
        loss = bce_loss(out.local, targets.local, hc.prob_clamp)
        parts["local"] = loss.item()
        total = total + loss * tc.lambda_local
    if hc.use_global_similarity and len(targets.rows):
        s_glob = global_similarity(model.head, out.xb, rows, out.points)
        loss = bce_loss(s_glob, targets.global_, hc.prob_clamp)
        parts["global"] = loss.item()
        total = total + loss * tc.lambda_global
    if out.offsets is not None:
        centres = instance_centres(out.points, gt_moving, gt_instance)
        loss = offset_loss(out.offsets, centres, out.points, gt_moving)
        parts["offset"] = loss.item()
        total = total + loss * tc.lambda_offset
    return total, parts
