"""Optimisers, step-decay schedule, checkpoints and the training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PipelineConfig, TrainConfig, rng_for
from .errors import ContractError, TrainingError, WeightFileError
from .metrics import EvalReport, PanopticEvaluator, PanopticResult
from .model import RadarInstanceTransformer, compute_loss, predict, predict_offset
from .numerics import GradTape, Tensor, backward, load_weights, save_weights
from .pointcloud import RadarSequence, SequenceWindow, augment_window, prepare_window

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Optimisers
# ---------------------------------------------------------------------------
class Optimizer:
    """Base class – subclasses update ``params`` in place from their ``.grad``."""

    name: str = "base"

    def __init__(self, params: list[Tensor], cfg: TrainConfig) -> None:
        self.params = params
        self.cfg = cfg
        self.steps = 0

    def step(self, lr: float) -> None:
        raise NotImplementedError

    def state_tensors(self) -> dict[str, np.ndarray]:
        return {"steps": np.array([float(self.steps)])}

    def load_state_tensors(self, state: dict[str, np.ndarray]) -> None:
        self.steps = int(state["steps"][0])


class SGD(Optimizer):
    """Heavy-ball momentum with L2 weight decay folded into the gradient."""

    name = "sgd"

    def __init__(self, params: list[Tensor], cfg: TrainConfig) -> None:
        super().__init__(params, cfg)
        self.velocity = [np.zeros_like(p.data) for p in params]

    def step(self, lr: float) -> None:
        mu, wd = self.cfg.momentum, self.cfg.weight_decay
        for p, v in zip(self.params, self.velocity):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if wd:
                g = g + wd * p.data
            v *= mu
            v += g
            p.data = p.data - lr * v
        self.steps += 1

    def state_tensors(self) -> dict[str, np.ndarray]:
        state = super().state_tensors()
        state.update({f"velocity.{i}": v for i, v in enumerate(self.velocity)})
        return state

    def load_state_tensors(self, state: dict[str, np.ndarray]) -> None:
        super().load_state_tensors(state)
        self.velocity = [state[f"velocity.{i}"].copy() for i in range(len(self.params))]


class AdamW(Optimizer):
    """Adam moments with decoupled weight decay."""

    name = "adamw"

    def __init__(self, params: list[Tensor], cfg: TrainConfig) -> None:
        super().__init__(params, cfg)
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self, lr: float) -> None:
        b1, b2 = self.cfg.betas
        eps, wd = self.cfg.adam_eps, self.cfg.weight_decay
        self.steps += 1
        c1 = 1.0 - b1**self.steps
        c2 = 1.0 - b2**self.steps
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + eps) + wd * p.data
            p.data = p.data - lr * update

    def state_tensors(self) -> dict[str, np.ndarray]:
        state = super().state_tensors()
        state.update({f"m.{i}": a for i, a in enumerate(self.m)})
        state.update({f"v.{i}": a for i, a in enumerate(self.v)})
        return state

    def load_state_tensors(self, state: dict[str, np.ndarray]) -> None:
        super().load_state_tensors(state)
        self.m = [state[f"m.{i}"].copy() for i in range(len(self.params))]
        self.v = [state[f"v.{i}"].copy() for i in range(len(self.params))]


OPTIMIZERS: list[type[Optimizer]] = [AdamW, SGD]


def get_optimizer(name: str) -> type[Optimizer]:
    for cls in OPTIMIZERS:
        if cls.name == name:
            return cls
    raise ContractError(f"unknown optimizer {name!r}; choose from {[c.name for c in OPTIMIZERS]}")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Initial rate divided by ``lr_decay`` at every milestone already reached."""
    drops = sum(1 for frac in cfg.milestones if epoch >= math.floor(frac * cfg.epochs))
    return cfg.lr / (cfg.lr_decay**drops)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------
def save_checkpoint(path: str | Path, model: RadarInstanceTransformer, optimizer: Optimizer | None, epoch: int) -> Path:
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    if optimizer is not None:
        tensors.update({f"optim.{k}": v for k, v in optimizer.state_tensors().items()})
    tensors["meta.epoch"] = np.array([float(epoch)])
    return save_weights(path, tensors)


def load_checkpoint(
    path: str | Path, model: RadarInstanceTransformer, optimizer: Optimizer | None = None
) -> int:
    """Restore weights (and optimiser moments when given); returns the completed epoch count."""
    tensors = load_weights(path)
    weights = {k[len("model.") :]: v for k, v in tensors.items() if k.startswith("model.")}
    if not weights:
        raise WeightFileError(f"{path}: no model tensors")
    model.load_state_dict(weights)
    if optimizer is not None:
        state = {k[len("optim.") :]: v for k, v in tensors.items() if k.startswith("optim.")}
        if state:
            optimizer.load_state_tensors(state)
    epoch = tensors.get("meta.epoch")
    return int(epoch[0]) if epoch is not None else 0


def build_model(cfg: PipelineConfig) -> RadarInstanceTransformer:
    return RadarInstanceTransformer(cfg, rng_for(cfg.seed, "init"))


# ---------------------------------------------------------------------------
# Loop
# ---------------------------------------------------------------------------
@dataclass
class TrainResult:
    history: list[float] = field(default_factory=list)
    parts: list[dict] = field(default_factory=list)
    epochs_run: int = 0


def collect_windows(sequences: list[RadarSequence], T: int) -> list[SequenceWindow]:
    return [w for seq in sequences for w in seq.windows(T)]


def _chunks(order: np.ndarray, size: int):
    for start in range(0, len(order), size):
        yield order[start : start + size]


def train_epoch(
    model: RadarInstanceTransformer,
    optimizer: Optimizer,
    windows: list[SequenceWindow],
    epoch: int,
) -> tuple[float, dict[str, float]]:
    """One pass over ``windows`` in a per-epoch shuffled order; returns the mean loss."""
    cfg = model.cfg
    tc = cfg.train
    order = rng_for(cfg.seed, "shuffle", epoch).permutation(len(windows))
    aug_rng = rng_for(cfg.seed, "augment", epoch)
    lr = lr_at(epoch, tc)
    teacher_forcing = epoch < cfg.head.teacher_forcing_epochs
    total, sums, count = 0.0, {}, 0

    for b, batch in enumerate(_chunks(order, max(1, tc.batch_size))):
        model.zero_grad()
        with GradTape():
            batch_loss = None
            for idx in batch:
                window = prepare_window(windows[idx], cfg.model.T, align=cfg.model.align_poses)
                if tc.augment:
                    window = augment_window(window, aug_rng)
                loss, parts = compute_loss(model, window, training=True, teacher_forcing=teacher_forcing)
                for key, value in parts.items():
                    sums[key] = sums.get(key, 0.0) + value
                batch_loss = loss if batch_loss is None else batch_loss + loss
            batch_loss = batch_loss * (1.0 / len(batch))
            value = batch_loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch {b}")
            backward(batch_loss)
        optimizer.step(lr)
        total += value * len(batch)
        count += len(batch)

    return total / max(count, 1), {k: v / max(count, 1) for k, v in sums.items()}


def train(
    cfg: PipelineConfig,
    sequences: list[RadarSequence],
    out_path: str | Path | None = None,
    resume: str | Path | None = None,
    model: RadarInstanceTransformer | None = None,
    until: int | None = None,
) -> tuple[RadarInstanceTransformer, TrainResult]:
    """Train up to epoch ``until`` (default ``cfg.train.epochs``), resuming from a checkpoint when given."""
    model = model or build_model(cfg)
    optimizer = get_optimizer(cfg.train.optimizer)(model.parameters(), cfg.train)
    start = load_checkpoint(resume, model, optimizer) if resume else 0
    windows = collect_windows(sequences, cfg.model.T)
    if not windows:
        raise ContractError("no training windows")
    stop = cfg.train.epochs if until is None else min(until, cfg.train.epochs)
    logger.info(
        "Training %d parameters on %d windows for epochs %d..%d",
        sum(p.size for p in model.parameters()),
        len(windows),
        start,
        stop - 1,
    )

    result = TrainResult()
    for epoch in range(start, stop):
        loss, parts = train_epoch(model, optimizer, windows, epoch)
        result.history.append(loss)
        result.parts.append(parts)
        result.epochs_run += 1
        logger.info(
            "epoch %3d  lr %.2e  loss %.5f  (%s)",
            epoch,
            lr_at(epoch, cfg.train),
            loss,
            ", ".join(f"{k} {v:.4f}" for k, v in sorted(parts.items())),
        )
        if out_path is not None:
            save_checkpoint(out_path, model, optimizer, epoch + 1)
    return model, result


def evaluate(
    model: RadarInstanceTransformer,
    windows: list[SequenceWindow],
    method: str = "modularity",
    cluster_r: float = 3.5,
) -> tuple[EvalReport, list[PanopticResult]]:
    """Predict every window and score against its ground truth."""
    evaluator = PanopticEvaluator()
    preds = []
    for i, window in enumerate(windows):
        if method == "offset":
            pred = predict_offset(model, window, cluster_r)
        else:
            pred = predict(model, window)
        preds.append(pred)
        evaluator.add_scan(pred, PanopticResult.from_scan(window.current), name=str(i))
    return evaluator.report(), preds
