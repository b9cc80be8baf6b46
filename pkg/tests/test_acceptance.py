"""Full-size synthetic runs; select with `pytest -m slow`."""

import time

import numpy as np
import pytest

from blursim import (PlanarScene, TrajectoryParams, generate_sequence, load_dataset,
                     make_noise_texture, streak_length, synth_trajectory)
from camera import PinholeCamera
from evaluation import compute_ate, endpoint_errors, frame_drop_rate
from tracker import TrackerConfig, track_sequence

pytestmark = pytest.mark.slow

SCENE_DEPTH = 2.0
CAMERA = PinholeCamera(500.0, 500.0, 319.5, 239.5, 640, 480)


@pytest.fixture(scope="module")
def scene():
    return PlanarScene(make_noise_texture(1024, seed=7), SCENE_DEPTH, 0.004)


def make_shake(root, scene, n_frames, amplitude, rot_amplitude):
    params = TrajectoryParams(n_frames=n_frames, amplitude=amplitude, frequency=2.0,
                              rot_amplitude=rot_amplitude)
    frames = synth_trajectory("sinusoidal_shake", params)
    generate_sequence(scene, CAMERA, frames, 64, str(root))
    streaks = [streak_length(scene, CAMERA, f) for f in frames]
    return load_dataset(str(root)), streaks


@pytest.fixture(scope="module")
def shake(tmp_path_factory, scene):
    return make_shake(tmp_path_factory.mktemp("shake"), scene, 100, 0.1, 0.02)


@pytest.fixture(scope="module")
def runs(shake):
    ds, _ = shake
    cfg = TrackerConfig()
    seconds = {}
    results = {}
    for mode in ("mba", "blur-naive"):
        started = time.perf_counter()
        results[mode] = track_sequence(ds, cfg, mode=mode)
        seconds[mode] = time.perf_counter() - started
    return results, seconds


def test_sequence_has_visible_blur(shake):
    _, streaks = shake
    assert 3.0 < np.mean(streaks) < 20.0


def test_blur_aware_tracking_recovers_groundtruth(shake, runs):
    ds, _ = shake
    seq = runs[0]["mba"]
    assert frame_drop_rate(seq.results, len(seq.results)) == 0.0

    errors = endpoint_errors(seq.endpoints, ds.groundtruth)
    good = (errors["rotation_deg"] < 0.2) & (errors["translation_m"] < 0.01 * SCENE_DEPTH)
    assert good.mean() >= 0.95

    gt = ds.groundtruth.positions()
    extent = np.max(np.linalg.norm(gt - gt.mean(axis=0), axis=1)) * 2
    assert compute_ate(seq.trajectory, ds.groundtruth).rmse < 0.005 * extent


def test_blur_aware_run_fits_in_five_minutes(runs):
    assert runs[1]["mba"] < 300.0


def test_ignoring_exposure_degrades_accuracy(shake, runs):
    ds, _ = shake
    mba = compute_ate(runs[0]["mba"].trajectory, ds.groundtruth).rmse
    naive = compute_ate(runs[0]["blur-naive"].trajectory, ds.groundtruth).rmse
    assert naive >= 3.0 * mba


def test_longer_streaks_hurt_only_the_blur_naive_tracker(tmp_path_factory, scene):
    # mean streak is about 40 px per meter of amplitude at 2 Hz, 20 ms, fx 500, 2 m
    cfg = TrackerConfig()
    ate = {"mba": [], "blur-naive": []}
    for amplitude, (lo, hi) in ((0.075, (2.0, 5.0)), (0.25, (7.0, 14.0)), (0.5, (14.0, 28.0))):
        ds, streaks = make_shake(tmp_path_factory.mktemp("trend"), scene, 40, amplitude, 0.0)
        assert lo < np.mean(streaks) < hi
        for mode in ate:
            seq = track_sequence(ds, cfg, mode=mode)
            ate[mode].append(compute_ate(seq.trajectory, ds.groundtruth).rmse)
    assert ate["mba"][-1] < 2.0 * ate["mba"][0]
    assert ate["blur-naive"][-1] > 3.0 * ate["blur-naive"][0]
