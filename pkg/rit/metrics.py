"""Panoptic evaluation of moving instance segmentation, plus the Doppler threshold baseline.

Static is scored as a single "stuff" segment per scan, moving as "things"
matched one-to-one at point-set IoU > 0.5. Counts accumulate over every
scan added to a :class:`PanopticEvaluator` before any ratio is taken.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ContractError, DimensionError
from .partition import canonical_labels
from .pointcloud import NO_INSTANCE, Scan
from .sampling import radius_neighbors

logger = logging.getLogger(__name__)

STATIC_CLASS = 0
MOVING_CLASS = 1
MATCH_IOU = 0.5


@dataclass
class PanopticResult:
    """Per-point moving flag and instance id (-1 on static points)."""

    moving: np.ndarray
    instance: np.ndarray

    def __post_init__(self) -> None:
        self.moving = np.asarray(self.moving, dtype=bool).reshape(-1)
        self.instance = np.asarray(self.instance, dtype=np.int64).reshape(-1)
        if self.moving.shape != self.instance.shape:
            raise DimensionError("moving flags and instance ids differ in length")
        if np.any((self.instance >= 0) != self.moving):
            raise ContractError("instance id present iff point is moving")

    @property
    def n(self) -> int:
        return len(self.moving)

    @classmethod
    def from_scan(cls, scan: Scan) -> "PanopticResult":
        return cls(scan.moving.copy(), scan.instance.copy())

    @classmethod
    def all_static(cls, n: int) -> "PanopticResult":
        return cls(np.zeros(n, dtype=bool), np.full(n, NO_INSTANCE))

    def to_dict(self) -> dict:
        return {
            "labels": ["moving" if m else "static" for m in self.moving],
            "instances": [int(i) if i >= 0 else None for i in self.instance],
        }

    @staticmethod
    def from_dict(data: dict) -> "PanopticResult":
        moving = [label == "moving" for label in data["labels"]]
        instance = [NO_INSTANCE if i is None else int(i) for i in data["instances"]]
        return PanopticResult(moving, instance)


# ---------------------------------------------------------------------------
# Semantic IoU
# ---------------------------------------------------------------------------
def iou_semantic(pred_moving, gt_moving, cls: int = MOVING_CLASS) -> float | None:
    """100·TP/(TP+FP+FN) for one class, None when the class is absent on both sides."""
    pred = np.asarray(pred_moving, dtype=bool)
    gt = np.asarray(gt_moving, dtype=bool)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    if cls == STATIC_CLASS:
        pred, gt = ~pred, ~gt
    tp = int((pred & gt).sum())
    union = int((pred | gt).sum())
    if union == 0:
        return None
    return 100.0 * tp / union


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------
@dataclass
class EvalReport:
    pq: float = 0.0
    sq: float = 0.0
    rq: float = 0.0
    miou: float = 0.0
    pq_mov: float = 0.0
    sq_mov: float = 0.0
    rq_mov: float = 0.0
    iou_mov: float | None = None
    pq_stat: float = 0.0
    sq_stat: float = 0.0
    rq_stat: float = 0.0
    iou_stat: float | None = None
    tp: list = field(default_factory=lambda: [0, 0])
    fp: list = field(default_factory=lambda: [0, 0])
    fn: list = field(default_factory=lambda: [0, 0])
    scans: int = 0
    moving_empty: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(data: dict) -> "EvalReport":
        known = {k: v for k, v in data.items() if k in EvalReport.__dataclass_fields__}
        return EvalReport(**known)

    COLUMNS = (
        ("PQ", "pq"),
        ("mIoU", "miou"),
        ("SQ", "sq"),
        ("RQ", "rq"),
        ("PQ^mov", "pq_mov"),
        ("SQ^mov", "sq_mov"),
        ("RQ^mov", "rq_mov"),
        ("IoU^mov", "iou_mov"),
        ("PQ^stat", "pq_stat"),
        ("SQ^stat", "sq_stat"),
        ("RQ^stat", "rq_stat"),
        ("IoU^stat", "iou_stat"),
    )

    def table(self, name: str = "") -> str:
        """Fixed-width two-line table."""
        head = f"{'method':<16}" + "".join(f"{title:>9}" for title, _ in self.COLUMNS)
        cells = []
        for _, attr in self.COLUMNS:
            value = getattr(self, attr)
            cells.append(f"{'-':>9}" if value is None else f"{value:>9.1f}")
        row = f"{name[:16]:<16}" + "".join(cells)
        return head + "\n" + row


def _quality(tp: int, fp: int, fn: int, iou_sum: float) -> tuple[float, float, float]:
    """(PQ, SQ, RQ) in percent; an empty class scores 100."""
    if tp + fp + fn == 0:
        return 100.0, 100.0, 100.0
    sq = iou_sum / tp if tp else 0.0
    rq = tp / (tp + 0.5 * fp + 0.5 * fn)
    return 100.0 * sq * rq, 100.0 * sq, 100.0 * rq


# ---------------------------------------------------------------------------
# Accumulating evaluator
# ---------------------------------------------------------------------------
class PanopticEvaluator:
    """Accumulates confusion counts and per-class TP/FP/FN/IoU sums across scans."""

    def __init__(self) -> None:
        self.reset()

    def reset(self) -> None:
        self.conf = np.zeros((2, 2), dtype=np.int64)  # rows prediction, cols ground truth
        self.pan_tp = np.zeros(2, dtype=np.int64)
        self.pan_fp = np.zeros(2, dtype=np.int64)
        self.pan_fn = np.zeros(2, dtype=np.int64)
        self.pan_iou = np.zeros(2, dtype=np.float64)
        self.evaluated: list[str] = []

    def merge(self, other: "PanopticEvaluator") -> None:
        self.conf += other.conf
        self.pan_tp += other.pan_tp
        self.pan_fp += other.pan_fp
        self.pan_fn += other.pan_fn
        self.pan_iou += other.pan_iou
        self.evaluated += other.evaluated

    def add_scan(self, pred: PanopticResult, gt: PanopticResult, name: str = "") -> None:
        if pred.n != gt.n:
            raise DimensionError(f"{name or 'scan'}: prediction has {pred.n} points, ground truth {gt.n}")
        np.add.at(self.conf, (pred.moving.astype(np.int64), gt.moving.astype(np.int64)), 1)
        self._add_stuff(~pred.moving, ~gt.moving)
        self._add_things(pred, gt)
        self.evaluated.append(name)

    def _add_stuff(self, pred_seg: np.ndarray, gt_seg: np.ndarray) -> None:
        has_pred, has_gt = bool(pred_seg.any()), bool(gt_seg.any())
        if has_pred and has_gt:
            iou = (pred_seg & gt_seg).sum() / (pred_seg | gt_seg).sum()
            if iou > MATCH_IOU:
                self.pan_tp[STATIC_CLASS] += 1
                self.pan_iou[STATIC_CLASS] += iou
                return
        self.pan_fp[STATIC_CLASS] += int(has_pred)
        self.pan_fn[STATIC_CLASS] += int(has_gt)

    def _add_things(self, pred: PanopticResult, gt: PanopticResult) -> None:
        pred_ids = np.unique(pred.instance[pred.moving])
        gt_ids = np.unique(gt.instance[gt.moving])
        if len(pred_ids) == 0 or len(gt_ids) == 0:
            self.pan_fp[MOVING_CLASS] += len(pred_ids)
            self.pan_fn[MOVING_CLASS] += len(gt_ids)
            return
        pred_masks = pred.instance[None, :] == pred_ids[:, None]
        gt_masks = gt.instance[None, :] == gt_ids[:, None]
        inter = pred_masks.astype(np.int64) @ gt_masks.T.astype(np.int64)
        union = pred_masks.sum(axis=1)[:, None] + gt_masks.sum(axis=1)[None, :] - inter
        iou = inter / union
        matched = iou > MATCH_IOU
        # IoU > 0.5 admits at most one partner per row and column
        if (matched.sum(axis=0) > 1).any() or (matched.sum(axis=1) > 1).any():
            raise ContractError(f"instance matching is not one-to-one at IoU threshold {MATCH_IOU}")
        tp = int(matched.sum())
        self.pan_tp[MOVING_CLASS] += tp
        self.pan_iou[MOVING_CLASS] += float(iou[matched].sum())
        self.pan_fp[MOVING_CLASS] += len(pred_ids) - tp
        self.pan_fn[MOVING_CLASS] += len(gt_ids) - tp

    def iou(self, cls: int) -> float | None:
        tp = self.conf[cls, cls]
        union = self.conf[cls, :].sum() + self.conf[:, cls].sum() - tp
        return None if union == 0 else 100.0 * tp / union

    def report(self) -> EvalReport:
        pq_s, sq_s, rq_s = _quality(*self._counts(STATIC_CLASS))
        pq_m, sq_m, rq_m = _quality(*self._counts(MOVING_CLASS))
        iou_s, iou_m = self.iou(STATIC_CLASS), self.iou(MOVING_CLASS)
        ious = [v for v in (iou_s, iou_m) if v is not None]
        moving_empty = int(self.pan_tp[1] + self.pan_fp[1] + self.pan_fn[1]) == 0
        if moving_empty:
            logger.info("No moving instances in prediction or ground truth; PQ^mov reported as 100")
        return EvalReport(
            pq=(pq_s + pq_m) / 2.0,
            sq=(sq_s + sq_m) / 2.0,
            rq=(rq_s + rq_m) / 2.0,
            miou=float(np.mean(ious)) if ious else 0.0,
            pq_mov=pq_m,
            sq_mov=sq_m,
            rq_mov=rq_m,
            iou_mov=iou_m,
            pq_stat=pq_s,
            sq_stat=sq_s,
            rq_stat=rq_s,
            iou_stat=iou_s,
            tp=self.pan_tp.tolist(),
            fp=self.pan_fp.tolist(),
            fn=self.pan_fn.tolist(),
            scans=len(self.evaluated),
            moving_empty=moving_empty,
        )

    def _counts(self, cls: int) -> tuple[int, int, int, float]:
        return int(self.pan_tp[cls]), int(self.pan_fp[cls]), int(self.pan_fn[cls]), float(self.pan_iou[cls])


def panoptic_eval(pred: PanopticResult | list, gt: PanopticResult | list) -> EvalReport:
    """Evaluate one scan, or a list of scans accumulated together."""
    preds = pred if isinstance(pred, list) else [pred]
    gts = gt if isinstance(gt, list) else [gt]
    if len(preds) != len(gts):
        raise ContractError(f"{len(preds)} predictions for {len(gts)} ground-truth scans")
    evaluator = PanopticEvaluator()
    for i, (p, g) in enumerate(zip(preds, gts)):
        evaluator.add_scan(p, g, name=str(i))
    return evaluator.report()


# ---------------------------------------------------------------------------
# Threshold baseline
# ---------------------------------------------------------------------------
def cluster_components(points, r: float) -> np.ndarray:
    """Connected components of the radius graph, canonically labelled."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    pairs = radius_neighbors(points, r)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    return canonical_labels(labels)


def threshold_baseline(scan: Scan, v_t: float = 0.92, cluster_r: float = 3.5) -> PanopticResult:
    """|v| > v_t is moving; moving points are grouped by radius-graph components."""
    moving = np.abs(scan.doppler) > v_t
    instance = np.full(scan.n, NO_INSTANCE, dtype=np.int64)
    instance[moving] = cluster_components(scan.xyz[moving], cluster_r)
    return PanopticResult(moving, instance)
