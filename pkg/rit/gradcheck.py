"""Finite-difference checks for every parameterised layer and loss, at miniature sizes."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .attention import SafeModule, TransformerBlock, VectorAttentionLayer, block_forward, safe_forward, vector_attention
from .backbone import Backbone, backbone_forward
from .config import BackboneConfig, HeadConfig
from .head import (
    HeadParams,
    bce_loss,
    focal_tversky_loss,
    global_similarity,
    local_similarity,
    mos_from_logits,
    mos_logits,
    offset_loss,
)
from .numerics import MLP, LinearLayer, NormLayer, Tensor, fd_check, linear_forward, norm_forward, sigmoid, tsum
from .pointcloud import Scan, SequenceWindow
from .sampling import knn

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-4

Objective = Callable[[], Tensor]


def _projection(rng: np.random.Generator, shape) -> np.ndarray:
    """Fixed random weights that turn a tensor output into a scalar objective."""
    return rng.normal(size=shape)


def _points(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.uniform(-3.0, 3.0, size=(n, 3))


def _randomize_norms(module, rng: np.random.Generator) -> None:
    """Draw every norm gamma and beta; with beta at zero, neighbourhoods whose
    offsets average to zero sit exactly on the ReLU kink."""
    for name, p in module.named_parameters():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            p.data = rng.uniform(0.5, 1.5, size=p.shape)
        elif leaf == "beta":
            p.data = rng.normal(size=p.shape)


class GradCheck:
    """Base class – ``build`` returns the scalar objective and the tensors to perturb."""

    name: str = "base"
    h: float = 1e-6
    sample: int | None = None  # coordinates perturbed per seed, None for all

    def build(self, rng: np.random.Generator) -> tuple[Objective, list[Tensor]]:
        raise NotImplementedError


class LinearCheck(GradCheck):
    name = "linear"

    def build(self, rng):
        layer = LinearLayer(4, 3, rng)
        x = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        w = _projection(rng, (5, 3))
        return lambda: tsum(linear_forward(x, layer) * w), [layer.weight, layer.bias, x]


class LayerNormCheck(GradCheck):
    name = "layer_norm"

    def build(self, rng):
        norm = NormLayer(4, "layer")
        norm.gamma.data = rng.normal(size=4)
        norm.beta.data = rng.normal(size=4)
        x = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        w = _projection(rng, (5, 4))
        return lambda: tsum(norm_forward(x, norm) * w), [norm.gamma, norm.beta, x]


class BatchNormCheck(GradCheck):
    name = "batch_norm"

    def build(self, rng):
        norm = NormLayer(3, "batch")
        norm.gamma.data = rng.normal(size=3)
        x = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
        w = _projection(rng, (6, 3))
        return lambda: tsum(norm_forward(x, norm, training=True) * w), [norm.gamma, norm.beta, x]


class MLPCheck(GradCheck):
    name = "mlp"

    def build(self, rng):
        mlp = MLP.build([3, 4, 2], rng, norm="batch")
        _randomize_norms(mlp, rng)
        x = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
        w = _projection(rng, (6, 2))
        return lambda: tsum(mlp(x, training=True) * w), mlp.parameters() + [x]


class VectorAttentionCheck(GradCheck):
    name = "vector_attention"
    sample = 16

    def build(self, rng):
        layer = VectorAttentionLayer(3, 3, 2, rng)
        _randomize_norms(layer, rng)
        pts = _points(rng, 4)
        x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        nbrs = knn(pts, pts, 2)
        w = _projection(rng, (4, 3))
        return lambda: tsum(vector_attention(layer, x, x, pts, pts, nbrs, training=True) * w), layer.parameters() + [x]


class TransformerBlockCheck(GradCheck):
    name = "transformer_block"
    sample = 16

    def build(self, rng):
        block = TransformerBlock(3, 3, rng)
        _randomize_norms(block, rng)
        pts = _points(rng, 5)
        x = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        nbrs = knn(pts, pts, 3)
        w = _projection(rng, (5, 3))
        return lambda: tsum(block_forward(block, x, pts, nbrs, training=True) * w), block.parameters() + [x]


class SafeCheck(GradCheck):
    name = "safe"
    sample = 16

    def build(self, rng):
        module = SafeModule(3, 4, 3, 1, rng)
        _randomize_norms(module, rng)

        def scan(n):
            return Scan(
                xyz=_points(rng, n),
                rcs=rng.normal(size=n),
                doppler=rng.normal(size=n),
                moving=np.zeros(n, dtype=bool),
                instance=np.full(n, -1),
            )

        window = SequenceWindow(scan(5), [scan(6)], aligned=True)
        w = _projection(rng, (5, 7))
        return lambda: tsum(safe_forward(module, window, training=True) * w), module.parameters()


class BackboneCheck(GradCheck):
    name = "backbone"
    sample = 16

    def build(self, rng):
        cfg = BackboneConfig(widths=[4, 8], blocks=[1, 1], k_attn=3, k_down=3, s1_pre_fusion=1)
        backbone = Backbone(cfg, rng)
        _randomize_norms(backbone, rng)
        pts = _points(rng, 6)
        x = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
        w = _projection(rng, (6, 4))
        params = [p for name, p in backbone.named_parameters() if not name.startswith("s1_pre")]
        return lambda: tsum(backbone_forward(backbone, x, pts, training=True) * w), params + [x]


def _head(rng: np.random.Generator, **flags) -> HeadParams:
    return HeadParams(4, HeadConfig(k_similarity=3, **flags), rng)


def similarity_parameters(head: HeadParams) -> list[Tensor]:
    """Query, key and positional-encoding weights and biases."""
    return [p for name, p in head.named_parameters() if name.startswith(("wq.", "wk.", "wr.", "wr_global."))]


class MosCheck(GradCheck):
    name = "mos_head"

    def build(self, rng):
        head = _head(rng)
        _randomize_norms(head, rng)
        xb = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
        targets = rng.integers(0, 2, size=6)

        def objective():
            probs, _ = mos_from_logits(mos_logits(head, xb, training=True))
            return focal_tversky_loss(probs, targets)

        return objective, head.mos.parameters() + [xb]


class LocalSimilarityCheck(GradCheck):
    name = "local_similarity"

    def build(self, rng):
        head = _head(rng)
        pts = _points(rng, 5)
        xb = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        nbrs = knn(pts, pts, 3)
        target = rng.integers(0, 2, size=(5, 3)).astype(np.float64)
        return lambda: bce_loss(local_similarity(head, xb, pts, nbrs), target), similarity_parameters(head) + [xb]


class GlobalSimilarityCheck(GradCheck):
    name = "global_similarity"

    def build(self, rng):
        head = _head(rng, global_positional_encoding=True)
        pts = _points(rng, 5)
        xb = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        mask = np.array([True, False, True, True, False])
        target = rng.integers(0, 2, size=(3, 3)).astype(np.float64)
        return lambda: bce_loss(global_similarity(head, xb, mask, pts), target), similarity_parameters(head) + [xb]


class BceCheck(GradCheck):
    name = "bce_loss"

    def build(self, rng):
        logits = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        target = rng.integers(0, 2, size=(4, 3)).astype(np.float64)
        return lambda: bce_loss(sigmoid(logits), target), [logits]


class FocalTverskyCheck(GradCheck):
    name = "focal_tversky_loss"

    def build(self, rng):
        logits = Tensor(rng.normal(size=(7, 2)), requires_grad=True)
        targets = rng.integers(0, 2, size=7)
        return lambda: focal_tversky_loss(mos_from_logits(logits)[0], targets), [logits]


class OffsetLossCheck(GradCheck):
    name = "offset_loss"

    def build(self, rng):
        offsets = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        centres = rng.normal(size=(5, 3))
        pts = rng.normal(size=(5, 3))
        return lambda: offset_loss(offsets, centres, pts), [offsets]


ALL_GRADCHECKS: list[type[GradCheck]] = [
    LinearCheck,
    LayerNormCheck,
    BatchNormCheck,
    MLPCheck,
    VectorAttentionCheck,
    TransformerBlockCheck,
    SafeCheck,
    BackboneCheck,
    MosCheck,
    LocalSimilarityCheck,
    GlobalSimilarityCheck,
    BceCheck,
    FocalTverskyCheck,
    OffsetLossCheck,
]


@dataclass
class GradCheckResult:
    name: str
    max_error: float
    seeds: int
    passed: bool
    error: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "max_error": self.max_error,
            "seeds": self.seeds,
            "passed": self.passed,
            "error": self.error,
        }


def run_case(
    check: GradCheck,
    seeds: range | list[int],
    tol: float = DEFAULT_TOL,
    analytic_hook: Callable[[np.ndarray], np.ndarray] | None = None,
) -> GradCheckResult:
    worst = 0.0
    for seed in seeds:
        f, params = check.build(np.random.default_rng(seed))
        coords = np.random.default_rng([seed, 1])
        worst = max(worst, fd_check(f, params, h=check.h, analytic_hook=analytic_hook, sample=check.sample, rng=coords))
    return GradCheckResult(check.name, worst, len(seeds), bool(worst < tol))


def run_all(
    seeds: int = 3,
    tol: float = DEFAULT_TOL,
    only: list[str] | None = None,
    analytic_hook: Callable[[np.ndarray], np.ndarray] | None = None,
) -> list[GradCheckResult]:
    """Run every registered case; a case that raises is recorded as failed."""
    results = []
    for check_cls in ALL_GRADCHECKS:
        check = check_cls()
        if only and check.name not in only:
            continue
        try:
            result = run_case(check, range(seeds), tol, analytic_hook)
        except Exception as exc:
            logger.error("  ✗ %s raised: %s", check.name, exc)
            result = GradCheckResult(check.name, float("inf"), seeds, False, str(exc))
        logger.info("  %-20s max rel err %.2e  %s", check.name, result.max_error, "ok" if result.passed else "FAIL")
        results.append(result)
    return results


def format_table(results: list[GradCheckResult]) -> str:
    lines = [f"{'layer':<22}{'max rel err':>14}{'seeds':>7}  status"]
    for r in results:
        lines.append(f"{r.name:<22}{r.max_error:>14.3e}{r.seeds:>7}  {'pass' if r.passed else 'FAIL'}")
    return "\n".join(lines)
