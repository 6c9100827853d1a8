"""End-to-end synthetic benchmark; slow, run with RIT_SLOW=1."""

import pytest

from rit.config import miniature_config, rng_for
from rit.metrics import PanopticEvaluator, PanopticResult, threshold_baseline
from rit.pointcloud import synth_scene
from rit.train import collect_windows, evaluate, train

pytestmark = pytest.mark.slow

TRAIN_SEQUENCES = 32  # 32 x 16 frames = 512 windows
TEST_WINDOWS = 100


def _sequences(cfg, count, offset):
    return [
        synth_scene(cfg.synth, rng_for(cfg.seed, "data", offset + i), sequence_id=f"seq_{offset + i:04d}")
        for i in range(count)
    ]


def _benchmark_config(T=2):
    cfg = miniature_config(seed=2024)
    cfg.model.T = T
    cfg.train.epochs = 20
    cfg.synth.tangential_fraction = 0.25
    cfg.synth.noise_fraction = 0.1
    return cfg


def _held_out(cfg):
    windows = collect_windows(_sequences(cfg, 7, 10_000), cfg.model.T)
    return windows[:TEST_WINDOWS]


def _baseline_report(cfg, windows):
    evaluator = PanopticEvaluator()
    for i, window in enumerate(windows):
        scan = window.current
        pred = threshold_baseline(scan, cfg.baseline.v_threshold, cfg.baseline.cluster_radius)
        evaluator.add_scan(pred, PanopticResult.from_scan(scan), str(i))
    return evaluator.report()


def _trained_report(cfg, windows):
    model, _ = train(cfg, _sequences(cfg, TRAIN_SEQUENCES, 0))
    report, _ = evaluate(model, windows)
    return report


def test_learned_model_beats_threshold_baseline():
    cfg = _benchmark_config()
    windows = _held_out(cfg)
    baseline = _baseline_report(cfg, windows)
    learned = _trained_report(cfg, windows)
    print("\n" + baseline.table("threshold") + "\n" + learned.table("rit").splitlines()[1])
    assert learned.pq_mov >= baseline.pq_mov + 10.0
    assert learned.iou_stat >= 95.0


def test_previous_scans_help():
    with_history = _benchmark_config(T=2)
    without = _benchmark_config(T=0)
    windows_t2 = _held_out(with_history)
    windows_t0 = _held_out(without)
    assert _trained_report(with_history, windows_t2).pq_mov > _trained_report(without, windows_t0).pq_mov
