"""Configuration for the rit pipeline – all defaults in one place."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ContractError

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------
PROJECT_ROOT = Path(__file__).resolve().parent.parent
DATA_DIR = PROJECT_ROOT / "data"
RUNS_DIR = PROJECT_ROOT / "runs"

# ---------------------------------------------------------------------------
# Randomness – one seed, named sub-streams
# ---------------------------------------------------------------------------
SEED_ENV_VAR = "RIT_SEED"
DEFAULT_SEED = 7
RNG_STREAMS = {
    "data": 0,
    "init": 1,
    "augment": 2,
    "shuffle": 3,
    "partition": 4,
}

# ---------------------------------------------------------------------------
# Input layout
# ---------------------------------------------------------------------------
INPUT_FEATURES = ("x", "y", "z", "rcs", "v")
PAD_POINTS = 1024  # points in a zero-feature padding scan

# ---------------------------------------------------------------------------
# Section defaults
# ---------------------------------------------------------------------------
SYNTH_DEFAULTS = {
    "n_sequences": 4,
    "n_frames": 16,
    "n_instances": 3,
    "points_per_instance": [2, 10],
    "static_points": 120,
    "noise_fraction": 0.1,
    "speed_range": [1.0, 8.0],
    "tangential_fraction": 0.25,
    "fov": 50.0,
    "instance_extent": 2.0,
    "ego_speed": 2.0,
    "frame_dt": 0.1,
    "static_doppler_std": 0.05,
    "clutter_max_speed": 3.0,
    "pose_noise": 0.0,
    "seed": 0,
}

MODEL_DEFAULTS = {
    "T": 2,
    "d1": 16,
    "d2": 32,
    "k_local": 12,
    "align_poses": True,
    "weight_mlp": True,
}

BACKBONE_DEFAULTS = {
    "widths": [48, 96, 192, 384],
    "blocks": [6, 4, 2, 1],
    "downsample_factor": 2,
    "k_attn": 12,
    "k_down": 12,
    "interp_k": 3,
    "s1_pre_fusion": 4,
    "top_level": True,
    "ffn_ratio": 1,
}

HEAD_DEFAULTS = {
    "k_similarity": 12,
    "use_local_similarity": True,
    "use_global_similarity": True,
    "global_positional_encoding": False,
    "local_static_targets": "zero",  # "zero" | "class"
    "global_rows": "predicted",  # "predicted" | "gt"
    "teacher_forcing_epochs": 5,
    "offset_head": False,
    "prob_clamp": 1e-7,
    "tversky_alpha": 0.7,
    "tversky_beta": 0.3,
    "tversky_gamma": 4.0 / 3.0,
    "tversky_smooth": 1e-6,
}

TRAIN_DEFAULTS = {
    "epochs": 30,
    "batch_size": 8,
    "optimizer": "adamw",  # "adamw" | "sgd"
    "lr": 1e-3,
    "momentum": 0.9,
    "weight_decay": 0.01,
    "betas": [0.9, 0.999],
    "adam_eps": 1e-8,
    "milestones": [0.6, 0.8],
    "lr_decay": 10.0,
    "lambda_local": 1.0,
    "lambda_global": 1.0,
    "lambda_offset": 1.0,
    "augment": True,
}

PARTITION_DEFAULTS = {
    "radius": 7.0,
    "power_tol": 1e-10,
    "power_max_iter": 10_000,
    "exhaustive_limit": 12,
    "refine": True,
    "restart_limit": 12,  # graphs up to this size get perturbation restarts
}

BASELINE_DEFAULTS = {
    "v_threshold": 0.92,
    "cluster_radius": 3.5,
    "method": "threshold",  # "threshold" | "offset"
}


# ---------------------------------------------------------------------------
# Typed views
# ---------------------------------------------------------------------------
def _section(defaults: dict):
    return field(default_factory=lambda: _copy(defaults))


def _copy(value):
    return json.loads(json.dumps(value))


@dataclass
class SyntheticSceneConfig:
    n_sequences: int = SYNTH_DEFAULTS["n_sequences"]
    n_frames: int = SYNTH_DEFAULTS["n_frames"]
    n_instances: int = SYNTH_DEFAULTS["n_instances"]
    points_per_instance: list = _section(SYNTH_DEFAULTS["points_per_instance"])
    static_points: int = SYNTH_DEFAULTS["static_points"]
    noise_fraction: float = SYNTH_DEFAULTS["noise_fraction"]
    speed_range: list = _section(SYNTH_DEFAULTS["speed_range"])
    tangential_fraction: float = SYNTH_DEFAULTS["tangential_fraction"]
    fov: float = SYNTH_DEFAULTS["fov"]
    instance_extent: float = SYNTH_DEFAULTS["instance_extent"]
    ego_speed: float = SYNTH_DEFAULTS["ego_speed"]
    frame_dt: float = SYNTH_DEFAULTS["frame_dt"]
    static_doppler_std: float = SYNTH_DEFAULTS["static_doppler_std"]
    clutter_max_speed: float = SYNTH_DEFAULTS["clutter_max_speed"]
    pose_noise: float = SYNTH_DEFAULTS["pose_noise"]
    seed: int = SYNTH_DEFAULTS["seed"]

    def validate(self) -> None:
        lo, hi = self.points_per_instance
        if min(self.n_instances, self.static_points, lo, self.n_frames, self.n_sequences) < 0 or hi < lo:
            raise ContractError("synthetic counts must be non-negative with min <= max")
        if min(self.speed_range) < 0 or self.speed_range[1] < self.speed_range[0]:
            raise ContractError("speed range must be non-negative and ordered")
        if not 0.0 <= self.noise_fraction <= 1.0:
            raise ContractError("noise_fraction must lie in [0, 1]")


@dataclass
class ModelConfig:
    T: int = MODEL_DEFAULTS["T"]
    d1: int = MODEL_DEFAULTS["d1"]
    d2: int = MODEL_DEFAULTS["d2"]
    k_local: int = MODEL_DEFAULTS["k_local"]
    align_poses: bool = MODEL_DEFAULTS["align_poses"]
    weight_mlp: bool = MODEL_DEFAULTS["weight_mlp"]


@dataclass
class BackboneConfig:
    widths: list = _section(BACKBONE_DEFAULTS["widths"])
    blocks: list = _section(BACKBONE_DEFAULTS["blocks"])
    downsample_factor: int = BACKBONE_DEFAULTS["downsample_factor"]
    k_attn: int = BACKBONE_DEFAULTS["k_attn"]
    k_down: int = BACKBONE_DEFAULTS["k_down"]
    interp_k: int = BACKBONE_DEFAULTS["interp_k"]
    s1_pre_fusion: int = BACKBONE_DEFAULTS["s1_pre_fusion"]
    top_level: bool = BACKBONE_DEFAULTS["top_level"]
    ffn_ratio: int = BACKBONE_DEFAULTS["ffn_ratio"]

    def validate(self) -> None:
        if len(self.widths) != len(self.blocks) or not self.widths:
            raise ContractError("backbone widths and blocks must have equal non-zero length")
        for a, b in zip(self.widths, self.widths[1:]):
            if b != 2 * a:
                raise ContractError(f"stage widths must double, got {self.widths}")
        if any(n < 0 for n in self.blocks) or min(self.blocks[1:], default=1) < 1:
            raise ContractError("lower stages need at least one block")
        if not 0 <= self.s1_pre_fusion <= self.blocks[0]:
            raise ContractError("s1_pre_fusion must lie within the S1 block count")

    @property
    def s1_blocks(self) -> tuple[int, int]:
        """(before fusion, after fusion) block counts of the full-resolution stage."""
        if not self.top_level:
            return 0, 0
        return self.s1_pre_fusion, self.blocks[0] - self.s1_pre_fusion


@dataclass
class HeadConfig:
    k_similarity: int = HEAD_DEFAULTS["k_similarity"]
    use_local_similarity: bool = HEAD_DEFAULTS["use_local_similarity"]
    use_global_similarity: bool = HEAD_DEFAULTS["use_global_similarity"]
    global_positional_encoding: bool = HEAD_DEFAULTS["global_positional_encoding"]
    local_static_targets: str = HEAD_DEFAULTS["local_static_targets"]
    global_rows: str = HEAD_DEFAULTS["global_rows"]
    teacher_forcing_epochs: int = HEAD_DEFAULTS["teacher_forcing_epochs"]
    offset_head: bool = HEAD_DEFAULTS["offset_head"]
    prob_clamp: float = HEAD_DEFAULTS["prob_clamp"]
    tversky_alpha: float = HEAD_DEFAULTS["tversky_alpha"]
    tversky_beta: float = HEAD_DEFAULTS["tversky_beta"]
    tversky_gamma: float = HEAD_DEFAULTS["tversky_gamma"]
    tversky_smooth: float = HEAD_DEFAULTS["tversky_smooth"]


@dataclass
class TrainConfig:
    epochs: int = TRAIN_DEFAULTS["epochs"]
    batch_size: int = TRAIN_DEFAULTS["batch_size"]
    optimizer: str = TRAIN_DEFAULTS["optimizer"]
    lr: float = TRAIN_DEFAULTS["lr"]
    momentum: float = TRAIN_DEFAULTS["momentum"]
    weight_decay: float = TRAIN_DEFAULTS["weight_decay"]
    betas: list = _section(TRAIN_DEFAULTS["betas"])
    adam_eps: float = TRAIN_DEFAULTS["adam_eps"]
    milestones: list = _section(TRAIN_DEFAULTS["milestones"])
    lr_decay: float = TRAIN_DEFAULTS["lr_decay"]
    lambda_local: float = TRAIN_DEFAULTS["lambda_local"]
    lambda_global: float = TRAIN_DEFAULTS["lambda_global"]
    lambda_offset: float = TRAIN_DEFAULTS["lambda_offset"]
    augment: bool = TRAIN_DEFAULTS["augment"]


@dataclass
class PartitionConfig:
    radius: float = PARTITION_DEFAULTS["radius"]
    power_tol: float = PARTITION_DEFAULTS["power_tol"]
    power_max_iter: int = PARTITION_DEFAULTS["power_max_iter"]
    exhaustive_limit: int = PARTITION_DEFAULTS["exhaustive_limit"]
    refine: bool = PARTITION_DEFAULTS["refine"]
    restart_limit: int = PARTITION_DEFAULTS["restart_limit"]

    def validate(self) -> None:
        if not 0 <= self.exhaustive_limit <= 12:
            raise ContractError("exhaustive_limit must lie in [0, 12]")
        if self.radius <= 0:
            raise ContractError("partition radius must be positive")
        if self.restart_limit < 0:
            raise ContractError("restart_limit must be non-negative")


@dataclass
class BaselineConfig:
    v_threshold: float = BASELINE_DEFAULTS["v_threshold"]
    cluster_radius: float = BASELINE_DEFAULTS["cluster_radius"]
    method: str = BASELINE_DEFAULTS["method"]


_SECTIONS = {
    "model": ModelConfig,
    "backbone": BackboneConfig,
    "head": HeadConfig,
    "train": TrainConfig,
    "synth": SyntheticSceneConfig,
    "partition": PartitionConfig,
    "baseline": BaselineConfig,
}


@dataclass
class PipelineConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SyntheticSceneConfig = field(default_factory=SyntheticSceneConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    seed: int = DEFAULT_SEED

    # ------------------------------------------------------------------
    # Serialisation helpers
    # ------------------------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(data: dict) -> "PipelineConfig":
        cfg = PipelineConfig()
        for key, value in data.items():
            if key == "seed":
                cfg.seed = int(value)
                continue
            if key not in _SECTIONS:
                raise ContractError(f"unknown config section {key!r}")
            section = getattr(cfg, key)
            known = {f.name for f in fields(section)}
            for name, item in value.items():
                if name not in known:
                    raise ContractError(f"unknown config field {key}.{name}")
                setattr(section, name, _copy(item))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        self.backbone.validate()
        self.synth.validate()
        self.partition.validate()
        if self.backbone.widths[0] != self.model.d1 + self.model.d2:
            raise ContractError(
                f"S1 width {self.backbone.widths[0]} must equal d1+d2 = {self.model.d1 + self.model.d2}"
            )
        if self.model.T < 0:
            raise ContractError("T must be non-negative")

    def override(self, dotted: str, value) -> None:
        """Set ``section.field`` (or ``seed``) from a CLI flag."""
        if dotted == "seed":
            self.seed = int(value)
            return
        section_name, _, name = dotted.partition(".")
        section = getattr(self, section_name, None)
        if section is None or name not in {f.name for f in fields(section)}:
            raise ContractError(f"unknown config field {dotted!r}")
        setattr(section, name, value)


def load_config(path: str | Path) -> PipelineConfig:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return PipelineConfig.from_dict(data)


def save_config(cfg: PipelineConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg.to_dict(), indent=2), encoding="utf-8")
    return path


def resolve_seed(cfg: PipelineConfig) -> int:
    """``RIT_SEED`` in the environment wins over the configured seed."""
    val = os.environ.get(SEED_ENV_VAR, "").strip()
    if val:
        try:
            cfg.seed = int(val)
        except ValueError as exc:
            raise ContractError(f"${SEED_ENV_VAR} must be an integer, got {val!r}") from exc
        logger.info("Using seed %d from $%s", cfg.seed, SEED_ENV_VAR)
    return cfg.seed


def rng_for(seed: int, stream: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng([seed, RNG_STREAMS[stream], *extra])


def miniature_config(seed: int = DEFAULT_SEED) -> PipelineConfig:
    """Desk-scale model: widths 16/32/64/128, blocks 2/2/1/1."""
    cfg = PipelineConfig(seed=seed)
    cfg.model.d1, cfg.model.d2 = 6, 10
    cfg.backbone.widths = [16, 32, 64, 128]
    cfg.backbone.blocks = [2, 2, 1, 1]
    cfg.backbone.s1_pre_fusion = 1
    return cfg
