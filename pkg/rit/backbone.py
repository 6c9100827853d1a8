"""Full-resolution transformer backbone: every input point keeps a feature row."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .attention import TransformerBlock, block_forward
from .config import BackboneConfig
from .errors import DimensionError
from .numerics import LinearLayer, Module, NormLayer, Tensor, as_tensor, linear_forward, norm_forward
from .sampling import fps, idw_interpolate, knn, maxpool_group, sample_and_group

logger = logging.getLogger(__name__)


@dataclass
class StageState:
    points: np.ndarray
    features: Tensor
    parent_index: np.ndarray | None = None  # rows of the finer stage these points came from

    @property
    def n(self) -> int:
        return len(self.points)


class DownLayer(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator) -> None:
        self.linear = LinearLayer(d_in, d_out, rng)
        self.norm = NormLayer(d_out, "layer")


class UpLayer(Module):
    """Coarse path D_{L+1}→D_L and fine path D_L→D_L, each followed by layer-norm."""

    def __init__(self, d_fine: int, d_coarse: int, rng: np.random.Generator) -> None:
        self.coarse_linear = LinearLayer(d_coarse, d_fine, rng)
        self.coarse_norm = NormLayer(d_fine, "layer")
        self.fine_linear = LinearLayer(d_fine, d_fine, rng)
        self.fine_norm = NormLayer(d_fine, "layer")


class Stage(Module):
    def __init__(self, dim: int, n_blocks: int, k: int, rng: np.random.Generator, ffn_ratio: int, weight_mlp: bool) -> None:
        self.blocks = [TransformerBlock(dim, k, rng, ffn_ratio, weight_mlp) for _ in range(n_blocks)]


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator, weight_mlp: bool = True) -> None:
        cfg.validate()
        self.cfg = cfg
        widths = cfg.widths
        pre, post = cfg.s1_blocks
        self.s1_pre = [TransformerBlock(widths[0], cfg.k_attn, rng, cfg.ffn_ratio, weight_mlp) for _ in range(pre)]
        self.down = [DownLayer(a, b, rng) for a, b in zip(widths, widths[1:])]
        self.stages = [
            Stage(w, n, cfg.k_attn, rng, cfg.ffn_ratio, weight_mlp) for w, n in zip(widths[1:], cfg.blocks[1:])
        ]
        self.up = [UpLayer(a, b, rng) for a, b in zip(widths, widths[1:])]
        self.s1_post = [TransformerBlock(widths[0], cfg.k_attn, rng, cfg.ffn_ratio, weight_mlp) for _ in range(post)]

    @property
    def width(self) -> int:
        return self.cfg.widths[0]


def downsample(layer: DownLayer, stage: StageState, cfg: BackboneConfig, training: bool = False) -> StageState:
    """FPS to ceil(N/factor) points, then max-pool linear+LN features over k neighbours."""
    m = max(1, math.ceil(stage.n / cfg.downsample_factor))
    idx = fps(stage.points, m, seed_index=0)
    centres = stage.points[idx]
    nbrs = knn(centres, stage.points, cfg.k_down)
    h = norm_forward(linear_forward(stage.features, layer.linear), layer.norm, training)
    return StageState(centres, maxpool_group(sample_and_group(h, nbrs)), idx)


def upsample(layer: UpLayer, coarse: StageState, fine: StageState, k: int = 3, training: bool = False) -> Tensor:
    c = norm_forward(linear_forward(coarse.features, layer.coarse_linear), layer.coarse_norm, training)
    f = norm_forward(linear_forward(fine.features, layer.fine_linear), layer.fine_norm, training)
    return f + idw_interpolate(coarse.points, c, fine.points, k)


def _run_blocks(blocks: list[TransformerBlock], feats: Tensor, pts: np.ndarray, k: int, training: bool) -> Tensor:
    if not blocks:
        return feats
    nbrs = knn(pts, pts, k)
    for block in blocks:
        feats = block_forward(block, feats, pts, nbrs, training)
    return feats


def backbone_forward(backbone: Backbone, feats, pts, training: bool = False) -> Tensor:
    """N×D_S1 features for N input points.

    S1 runs its first blocks, the encoder halves the cloud stage by stage,
    the decoder walks back up and the result is added onto S1 before its
    remaining blocks.
    """
    cfg = backbone.cfg
    feats = as_tensor(feats)
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    if feats.shape != (len(pts), backbone.width):
        raise DimensionError(f"backbone expects ({len(pts)}, {backbone.width}) features, got {feats.shape}")
    if len(pts) == 0:
        return feats

    x = _run_blocks(backbone.s1_pre, feats, pts, cfg.k_attn, training)
    states = [StageState(pts, x)]
    for layer, stage in zip(backbone.down, backbone.stages):
        nxt = downsample(layer, states[-1], cfg, training)
        nxt.features = _run_blocks(stage.blocks, nxt.features, nxt.points, cfg.k_attn, training)
        states.append(nxt)
    logger.debug("Stage sizes: %s", [s.n for s in states])

    if len(states) > 1:
        y = states[-1].features
        for level in range(len(states) - 2, -1, -1):
            coarse = StageState(states[level + 1].points, y)
            y = upsample(backbone.up[level], coarse, states[level], cfg.interp_k, training)
        x = x + y
    return _run_blocks(backbone.s1_post, x, pts, cfg.k_attn, training)
