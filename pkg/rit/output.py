"""Data output – sequence files, prediction files, index, reports and partitions.

Sequence layout::

    <data_dir>/<sequence_id>/meta.json          {"sequence_id", "T", "frames": [...]}
    <data_dir>/<sequence_id>/frame_0000.jsonl   header line, then one point per line

The header line of a frame file is ``{"frame", "timestamp", "pose"}`` with the
pose as 16 row-major floats; point lines are :meth:`RadarPoint.to_dict`.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError, MissingFramesError
from .metrics import EvalReport, PanopticResult
from .partition import Partition, WeightedGraph
from .pointcloud import RadarPoint, RadarSequence, Scan

logger = logging.getLogger(__name__)

META_FILE = "meta.json"
INDEX_FILE = "index.json"


def _dump(payload) -> str:
    return json.dumps(payload, ensure_ascii=False, indent=2)


def frame_file(frame_id: str) -> str:
    return f"frame_{frame_id}.jsonl"


# ---------------------------------------------------------------------------
# Sequences
# ---------------------------------------------------------------------------
def save_sequence(seq: RadarSequence, data_dir: str | Path, T: int = 2) -> Path:
    """Write ``seq`` under ``data_dir/<sequence_id>/``."""
    seq_dir = Path(data_dir) / seq.sequence_id
    seq_dir.mkdir(parents=True, exist_ok=True)
    for scan in seq.scans:
        header = {"frame": scan.frame_id, "timestamp": scan.timestamp, "pose": scan.pose.reshape(-1).tolist()}
        lines = [json.dumps(header)] + [json.dumps(p.to_dict()) for p in scan.points]
        (seq_dir / frame_file(scan.frame_id)).write_text("\n".join(lines) + "\n", encoding="utf-8")
    meta = {"sequence_id": seq.sequence_id, "T": T, "frames": [s.frame_id for s in seq.scans]}
    (seq_dir / META_FILE).write_text(_dump(meta), encoding="utf-8")
    logger.info("Saved %d frames → %s", len(seq.scans), seq_dir)
    return seq_dir


def _parse_line(path: Path, lineno: int, text: str) -> dict:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(path, lineno, f"invalid JSON ({exc.msg})") from exc
    if not isinstance(data, dict):
        raise FormatError(path, lineno, "expected a JSON object")
    return data


def load_scan(path: str | Path) -> Scan:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FormatError(path, None, str(exc)) from exc
    if not lines:
        raise FormatError(path, 1, "missing header line")
    header = _parse_line(path, 1, lines[0])
    try:
        pose = np.asarray(header["pose"], dtype=np.float64).reshape(4, 4)
        timestamp = float(header.get("timestamp", 0.0))
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(path, 1, f"bad header: {exc}") from exc

    points = []
    for lineno, text in enumerate(lines[1:], start=2):
        if not text.strip():
            continue
        data = _parse_line(path, lineno, text)
        try:
            points.append(RadarPoint.from_dict(data))
        except (KeyError, ValueError, TypeError, ContractError) as exc:
            raise FormatError(path, lineno, f"bad point: {exc}") from exc
    try:
        return Scan.from_points(points, timestamp=timestamp, pose=pose, frame_id=str(header.get("frame", path.stem)))
    except ContractError as exc:
        raise FormatError(path, 1, str(exc)) from exc


def load_sequence(seq_dir: str | Path) -> RadarSequence:
    seq_dir = Path(seq_dir)
    meta_path = seq_dir / META_FILE
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        frames = [str(f) for f in meta["frames"]]
    except OSError as exc:
        raise FormatError(meta_path, None, str(exc)) from exc
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(meta_path, 1, f"bad metadata: {exc}") from exc
    scans = [load_scan(seq_dir / frame_file(f)) for f in frames]
    return RadarSequence(sequence_id=str(meta.get("sequence_id", seq_dir.name)), scans=scans)


def load_dataset(data_dir: str | Path) -> list[RadarSequence]:
    """Every sequence directory (one holding ``meta.json``) under ``data_dir``, sorted by name."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise FormatError(data_dir, None, "not a directory")
    dirs = sorted(p for p in data_dir.iterdir() if (p / META_FILE).is_file())
    sequences = [load_sequence(d) for d in dirs]
    logger.info("Loaded %d sequences (%d scans) from %s", len(sequences), sum(len(s.scans) for s in sequences), data_dir)
    return sequences


# ---------------------------------------------------------------------------
# Predictions
# ---------------------------------------------------------------------------
def frame_key(sequence_id: str, frame_id: str) -> str:
    return f"{sequence_id}/{frame_id}"


def save_predictions(results: dict[str, PanopticResult], out_dir: str | Path) -> Path:
    """One ``<seq>/frame_<id>.json`` per scan, plus ``index.json``."""
    out_dir = Path(out_dir)
    for key, result in sorted(results.items()):
        seq, frame = key.split("/", 1)
        path = out_dir / seq / f"frame_{frame}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(_dump(result.to_dict()), encoding="utf-8")
    logger.info("Saved %d prediction files → %s", len(results), out_dir)
    return update_index(out_dir)


def update_index(out_dir: str | Path) -> Path:
    """Regenerate ``index.json`` with the list of available frames."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = sorted(
        f"{p.parent.name}/{p.stem[len('frame_'):]}" for p in out_dir.glob("*/frame_*.json")
    )
    index = {"available_frames": frames, "total_frames": len(frames)}
    index_path = out_dir / INDEX_FILE
    index_path.write_text(_dump(index), encoding="utf-8")
    logger.info("Index updated: %d frames available", len(frames))
    return index_path


def load_predictions(pred_dir: str | Path) -> dict[str, PanopticResult]:
    pred_dir = Path(pred_dir)
    results = {}
    for path in sorted(pred_dir.glob("*/frame_*.json")):
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
            result = PanopticResult.from_dict(data)
        except json.JSONDecodeError as exc:
            raise FormatError(path, exc.lineno, exc.msg) from exc
        except (KeyError, TypeError, ValueError, ContractError) as exc:
            raise FormatError(path, None, f"bad prediction: {exc}") from exc
        results[frame_key(path.parent.name, path.stem[len("frame_") :])] = result
    return results


def ground_truth(sequences: list[RadarSequence]) -> dict[str, PanopticResult]:
    return {
        frame_key(seq.sequence_id, scan.frame_id): PanopticResult.from_scan(scan)
        for seq in sequences
        for scan in seq.scans
    }


def match_frames(pred: dict, gt: dict) -> list[str]:
    """Keys present on both sides, or :class:`MissingFramesError` listing the gaps."""
    missing_pred = sorted(set(gt) - set(pred))
    missing_gt = sorted(set(pred) - set(gt))
    if missing_pred or missing_gt:
        raise MissingFramesError(missing_pred, missing_gt)
    return sorted(gt)


# ---------------------------------------------------------------------------
# Reports, graphs, partitions
# ---------------------------------------------------------------------------
def save_report(report: EvalReport, out_dir: str | Path, name: str = "") -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    txt_path = out_dir / "report.txt"
    json_path.write_text(_dump(report.to_dict()), encoding="utf-8")
    txt_path.write_text(report.table(name) + "\n", encoding="utf-8")
    logger.info("Saved report → %s", json_path)
    return json_path, txt_path


def load_graph(path: str | Path) -> WeightedGraph:
    """Graph file: ``{"n": int, "edges": [[i, j, w], ...]}``."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise FormatError(path, None, str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise FormatError(path, exc.lineno, exc.msg) from exc
    try:
        return WeightedGraph.from_edges(int(data["n"]), data.get("edges", []))
    except (KeyError, TypeError, ValueError, ContractError) as exc:
        raise FormatError(path, None, f"bad graph: {exc}") from exc


def save_partition(partition: Partition, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_dump(partition.to_records()), encoding="utf-8")
    logger.info("Saved partition of %d nodes (%d communities) → %s", len(partition.assignment), partition.count, path)
    return path


def write_json(payload, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_dump(payload), encoding="utf-8")
    return path
