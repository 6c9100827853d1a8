"""Radar scans, sequence windows, alignment, padding, augmentation and synthetic scenes."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .config import PAD_POINTS, SyntheticSceneConfig
from .errors import ContractError, PoseError
from .numerics import Tensor

logger = logging.getLogger(__name__)

STATIC = "static"
MOVING = "moving"
LABELS = (STATIC, MOVING)
NO_INSTANCE = -1


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------
@dataclass
class RadarPoint:
    """One detection: position (m), RCS (dBsm), compensated Doppler (m/s)."""

    x: float
    y: float
    z: float = 0.0
    rcs: float = 0.0
    v: float = 0.0
    label: str = STATIC
    instance: int | None = None

    def __post_init__(self) -> None:
        if self.label not in LABELS:
            raise ContractError(f"label must be one of {LABELS}, got {self.label!r}")
        if (self.instance is not None) != (self.label == MOVING):
            raise ContractError("instance id is required for moving points and forbidden for static ones")
        if self.instance is not None and self.instance < 0:
            raise ContractError("instance ids are non-negative")
        if not all(math.isfinite(c) for c in (self.x, self.y, self.z)):
            raise ContractError("point coordinates must be finite")

    def to_dict(self) -> dict:
        return {
            "x": self.x,
            "y": self.y,
            "z": self.z,
            "rcs": self.rcs,
            "v": self.v,
            "label": self.label,
            "instance": self.instance,
        }

    @staticmethod
    def from_dict(data: dict) -> "RadarPoint":
        instance = data.get("instance")
        return RadarPoint(
            x=float(data["x"]),
            y=float(data["y"]),
            z=float(data.get("z", 0.0)),
            rcs=float(data.get("rcs", 0.0)),
            v=float(data.get("v", 0.0)),
            label=data.get("label", STATIC),
            instance=None if instance is None else int(instance),
        )


def validate_pose(pose: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (4, 4) or not np.isfinite(pose).all():
        raise PoseError(f"pose must be a finite 4x4 matrix, got shape {pose.shape}")
    if not np.allclose(pose[3], (0.0, 0.0, 0.0, 1.0), atol=tol):
        raise PoseError(f"pose bottom row must be (0,0,0,1), got {pose[3]}")
    rot = pose[:3, :3]
    if not np.allclose(rot @ rot.T, np.eye(3), atol=tol):
        raise PoseError("pose rotation block is not orthonormal")
    return pose


@dataclass
class Scan:
    """Columnar point cloud of one radar frame plus its world-from-sensor pose."""

    xyz: np.ndarray
    rcs: np.ndarray
    doppler: np.ndarray
    moving: np.ndarray
    instance: np.ndarray
    timestamp: float = 0.0
    pose: np.ndarray = field(default_factory=lambda: np.eye(4))
    padded: bool = False
    frame_id: str = ""

    def __post_init__(self) -> None:
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        n = self.xyz.shape[0]
        self.rcs = np.asarray(self.rcs, dtype=np.float64).reshape(n)
        self.doppler = np.asarray(self.doppler, dtype=np.float64).reshape(n)
        self.moving = np.asarray(self.moving, dtype=bool).reshape(n)
        self.instance = np.asarray(self.instance, dtype=np.int64).reshape(n)
        self.pose = validate_pose(self.pose)
        if not np.isfinite(self.xyz).all():
            raise ContractError("scan coordinates must be finite")
        if np.any((self.instance >= 0) != self.moving):
            raise ContractError("instance id present iff point is moving")

    @property
    def n(self) -> int:
        return self.xyz.shape[0]

    @property
    def points(self) -> list[RadarPoint]:
        return [
            RadarPoint(
                x=float(p[0]),
                y=float(p[1]),
                z=float(p[2]),
                rcs=float(r),
                v=float(v),
                label=MOVING if m else STATIC,
                instance=int(i) if m else None,
            )
            for p, r, v, m, i in zip(self.xyz, self.rcs, self.doppler, self.moving, self.instance)
        ]

    @classmethod
    def from_points(cls, points: list[RadarPoint], **kwargs) -> "Scan":
        return cls(
            xyz=[(p.x, p.y, p.z) for p in points],
            rcs=[p.rcs for p in points],
            doppler=[p.v for p in points],
            moving=[p.label == MOVING for p in points],
            instance=[NO_INSTANCE if p.instance is None else p.instance for p in points],
            **kwargs,
        )

    @classmethod
    def empty(cls, **kwargs) -> "Scan":
        return cls(xyz=np.zeros((0, 3)), rcs=[], doppler=[], moving=[], instance=[], **kwargs)

    def with_xyz(self, xyz: np.ndarray) -> "Scan":
        return replace(self, xyz=np.asarray(xyz, dtype=np.float64))


@dataclass
class SequenceWindow:
    """The current scan and its T previous scans, oldest first."""

    current: Scan
    previous: list[Scan] = field(default_factory=list)
    aligned: bool = False

    def previous_xyz(self) -> np.ndarray:
        if not self.previous:
            return np.zeros((0, 3))
        return np.concatenate([s.xyz for s in self.previous])

    def previous_features(self) -> np.ndarray:
        if not self.previous:
            return np.zeros((0, 5))
        return np.concatenate([feature_matrix(s).data for s in self.previous])


@dataclass
class RadarSequence:
    sequence_id: str
    scans: list[Scan]

    def windows(self, T: int) -> list[SequenceWindow]:
        return [
            SequenceWindow(current=scan, previous=self.scans[max(0, t - T) : t])
            for t, scan in enumerate(self.scans)
        ]


# ---------------------------------------------------------------------------
# Window preparation
# ---------------------------------------------------------------------------
def relative_transform(pose_current: np.ndarray, pose_previous: np.ndarray) -> np.ndarray:
    """current-from-previous = (pose_current)^-1 · pose_previous."""
    pose_current = validate_pose(pose_current)
    pose_previous = validate_pose(pose_previous)
    if abs(np.linalg.det(pose_current)) < 1e-12:
        raise PoseError("current pose is not invertible")
    return np.linalg.inv(pose_current) @ pose_previous


def transform_points(xyz: np.ndarray, transform: np.ndarray) -> np.ndarray:
    return xyz @ transform[:3, :3].T + transform[:3, 3]


def align_previous(window: SequenceWindow) -> SequenceWindow:
    """Express every real previous scan in the current sensor frame."""
    if window.aligned:
        return window
    aligned = []
    for scan in window.previous:
        if scan.padded:
            aligned.append(scan)
            continue
        h = relative_transform(window.current.pose, scan.pose)
        aligned.append(replace(scan, xyz=transform_points(scan.xyz, h), pose=window.current.pose.copy()))
    return SequenceWindow(current=window.current, previous=aligned, aligned=True)


def pad_scan(reference: Scan, n_points: int = PAD_POINTS) -> Scan:
    """Zero-feature scan at the sensor origin, every point static."""
    return Scan(
        xyz=np.zeros((n_points, 3)),
        rcs=np.zeros(n_points),
        doppler=np.zeros(n_points),
        moving=np.zeros(n_points, dtype=bool),
        instance=np.full(n_points, NO_INSTANCE),
        timestamp=reference.timestamp,
        pose=reference.pose.copy(),
        padded=True,
        frame_id="pad",
    )


def pad_previous(window: SequenceWindow, T: int) -> SequenceWindow:
    """Fill the oldest positions with padding scans until T previous scans exist."""
    if len(window.previous) > T:
        raise ContractError(f"window holds {len(window.previous)} previous scans, more than T={T}")
    missing = T - len(window.previous)
    if missing == 0:
        return window
    pads = [pad_scan(window.current) for _ in range(missing)]
    return SequenceWindow(current=window.current, previous=pads + list(window.previous), aligned=window.aligned)


def prepare_window(window: SequenceWindow, T: int, align: bool = True) -> SequenceWindow:
    window = pad_previous(window, T)
    if align:
        return align_previous(window)
    return SequenceWindow(current=window.current, previous=window.previous, aligned=True)


def feature_matrix(scan: Scan) -> Tensor:
    """Rows (x, y, z, σ, v) in scan order."""
    return Tensor(np.column_stack([scan.xyz, scan.rcs, scan.doppler]).reshape(scan.n, 5))


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------
FLIPS = ("x", None, "y")


@dataclass
class AugmentDraw:
    scale: float = 1.0
    shift: np.ndarray = field(default_factory=lambda: np.zeros(3))
    flip: str | None = None  # "x" negates y, "y" negates x
    jitter_std: float = 0.0


def draw_augmentation(rng: np.random.Generator, jitter_var: float = 0.01) -> AugmentDraw:
    shift = np.zeros(3)
    shift[:2] = rng.uniform(-0.1, 0.1, size=2)
    return AugmentDraw(
        scale=float(rng.uniform(0.95, 1.05)),
        shift=shift,
        flip=FLIPS[int(rng.integers(len(FLIPS)))],
        jitter_std=math.sqrt(jitter_var),
    )


def apply_augmentation(scan: Scan, draw: AugmentDraw, rng: np.random.Generator) -> Scan:
    """Flip, scale, shift, then jitter; labels and instance ids untouched."""
    if scan.padded:
        return scan
    xyz = scan.xyz.copy()
    if draw.flip == "x":
        xyz[:, 1] = -xyz[:, 1]
    elif draw.flip == "y":
        xyz[:, 0] = -xyz[:, 0]
    xyz = xyz * draw.scale + draw.shift
    if draw.jitter_std > 0:
        # radar scans are planar, z stays put
        xyz[:, :2] += rng.normal(0.0, draw.jitter_std, size=(scan.n, 2))
    return scan.with_xyz(xyz)


def augment(scan: Scan, rng: np.random.Generator) -> Scan:
    return apply_augmentation(scan, draw_augmentation(rng), rng)


def augment_window(window: SequenceWindow, rng: np.random.Generator) -> SequenceWindow:
    """One geometric draw shared by every scan of the window."""
    draw = draw_augmentation(rng)
    return SequenceWindow(
        current=apply_augmentation(window.current, draw, rng),
        previous=[apply_augmentation(s, draw, rng) for s in window.previous],
        aligned=window.aligned,
    )


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------
@dataclass
class InstanceSpec:
    """World-frame start centre and constant velocity of one mover."""

    center: np.ndarray
    velocity: np.ndarray
    points: tuple[int, int] = (4, 4)
    extent: float = 2.0


def _random_instances(cfg: SyntheticSceneConfig, rng: np.random.Generator) -> list[InstanceSpec]:
    specs = []
    for _ in range(cfg.n_instances):
        radius = rng.uniform(5.0, 0.8 * cfg.fov)
        bearing = rng.uniform(-math.pi, math.pi)
        center = radius * np.array([math.cos(bearing), math.sin(bearing)])
        speed = rng.uniform(*cfg.speed_range)
        if rng.random() < cfg.tangential_fraction:
            heading = bearing + math.pi / 2 * (1 if rng.random() < 0.5 else -1)
        else:
            heading = rng.uniform(-math.pi, math.pi)
        velocity = speed * np.array([math.cos(heading), math.sin(heading)])
        specs.append(InstanceSpec(center, velocity, tuple(cfg.points_per_instance), cfg.instance_extent))
    return specs


def _ego_pose(x: float, yaw: float = 0.0, dy: float = 0.0) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    pose = np.eye(4)
    pose[:2, :2] = [[c, -s], [s, c]]
    pose[0, 3] = x
    pose[1, 3] = dy
    return pose


def synth_scene(
    cfg: SyntheticSceneConfig,
    rng: np.random.Generator | None = None,
    instances: list[InstanceSpec] | None = None,
    sequence_id: str = "seq_0000",
) -> RadarSequence:
    """Generate one sequence of single-sensor scans with ground truth.

    Moving instances are coherent clusters translating at constant velocity;
    their Doppler is the radial component of that velocity as seen from the
    sensor. Static landmarks carry near-zero Doppler except a fresh
    ``noise_fraction`` per frame that receives clutter up to
    ``clutter_max_speed``.
    """
    cfg.validate()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    specs = instances if instances is not None else _random_instances(cfg, rng)

    travel = cfg.ego_speed * cfg.frame_dt * cfg.n_frames
    landmarks = np.column_stack(
        [
            rng.uniform(-cfg.fov, cfg.fov + travel, cfg.static_points),
            rng.uniform(-cfg.fov, cfg.fov, cfg.static_points),
        ]
    )
    landmark_rcs = rng.normal(5.0, 5.0, cfg.static_points)

    scans: list[Scan] = []
    for f in range(cfg.n_frames):
        t = f * cfg.frame_dt
        sensor = np.array([cfg.ego_speed * t, 0.0])
        true_pose = _ego_pose(sensor[0])

        # static landmarks inside the field of view, ~80% detection rate
        rel = landmarks - sensor
        seen = (np.abs(rel) <= cfg.fov).all(axis=1) & (rng.random(cfg.static_points) < 0.8)
        s_xy = landmarks[seen]
        s_dop = rng.normal(0.0, cfg.static_doppler_std, len(s_xy))
        clutter = rng.random(len(s_xy)) < cfg.noise_fraction
        s_dop[clutter] = rng.uniform(-cfg.clutter_max_speed, cfg.clutter_max_speed, int(clutter.sum()))

        xy_parts = [s_xy]
        dop_parts = [s_dop]
        rcs_parts = [landmark_rcs[seen]]
        inst_parts = [np.full(len(s_xy), NO_INSTANCE)]
        for inst_id, spec in enumerate(specs):
            lo, hi = spec.points
            count = int(rng.integers(lo, hi + 1))
            centre = np.asarray(spec.center, dtype=np.float64) + np.asarray(spec.velocity) * t
            pts = centre + rng.uniform(-spec.extent / 2, spec.extent / 2, size=(count, 2))
            los = pts - sensor
            dist = np.linalg.norm(los, axis=1, keepdims=True)
            unit = los / np.maximum(dist, 1e-9)
            dop = unit @ np.asarray(spec.velocity, dtype=np.float64)
            dop = dop + rng.normal(0.0, cfg.static_doppler_std, count)
            xy_parts.append(pts)
            dop_parts.append(dop)
            rcs_parts.append(rng.normal(10.0, 5.0, count))
            inst_parts.append(np.full(count, inst_id))

        xy = np.concatenate(xy_parts)
        order = rng.permutation(len(xy))
        world = np.column_stack([xy, np.zeros(len(xy))])[order]
        sensor_xyz = transform_points(world, np.linalg.inv(true_pose))
        instance_ids = np.concatenate(inst_parts)[order]

        reported = true_pose
        if cfg.pose_noise > 0:
            reported = _ego_pose(
                sensor[0] + rng.normal(0.0, cfg.pose_noise),
                yaw=rng.normal(0.0, cfg.pose_noise * 0.01),
                dy=rng.normal(0.0, cfg.pose_noise),
            )
        scans.append(
            Scan(
                xyz=sensor_xyz,
                rcs=np.concatenate(rcs_parts)[order],
                doppler=np.concatenate(dop_parts)[order],
                moving=instance_ids >= 0,
                instance=instance_ids,
                timestamp=t,
                pose=reported,
                frame_id=f"{f:04d}",
            )
        )
    return RadarSequence(sequence_id=sequence_id, scans=scans)


def scene_statistics(sequences: list[RadarSequence]) -> dict:
    """Histograms of instances per scan and points per instance, plus clutter share."""
    per_scan: Counter = Counter()
    per_instance: Counter = Counter()
    fast = fast_static = 0
    n_points = n_moving = 0
    for seq in sequences:
        for scan in seq.scans:
            ids, counts = np.unique(scan.instance[scan.moving], return_counts=True)
            per_scan[len(ids)] += 1
            per_instance.update(int(c) for c in counts)
            quick = np.abs(scan.doppler) > 0.1
            fast += int(quick.sum())
            fast_static += int((quick & ~scan.moving).sum())
            n_points += scan.n
            n_moving += int(scan.moving.sum())
    return {
        "scans": sum(per_scan.values()),
        "points": n_points,
        "moving_points": n_moving,
        "instances_per_scan": dict(sorted(per_scan.items())),
        "points_per_instance": dict(sorted(per_instance.items())),
        "fast_points_static_share": fast_static / fast if fast else 0.0,
    }
