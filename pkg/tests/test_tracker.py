import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.ndimage import map_coordinates
from scipy.optimize import least_squares

from blursim import (FrameSpec, TrajectoryParams, generate_sequence, load_dataset,
                     render_blurred, render_depth, render_sharp, synth_trajectory)
from camera import PinholeCamera, backproject_depth_many, warp_depth_many
from errors import ConfigInvalid, DimensionMismatch, TooFewKeypoints
from evaluation import endpoint_errors, read_report
from imgproc import GrayImage, build_pyramid, save_pgm
from lie import LocalTrajectory, Pose, pose_error, se3_exp
from tracker import (Keypoints, LevelData, Residuals, SolveMode, TrackerConfig, TrackStatus,
                     cold_start, evaluate_residuals, huber_cost, huber_weights,
                     initial_keyframe_pose, make_keyframe, orient_like, patch_offsets,
                     predict_motion, round_half_away, sample_keypoints, select_anchors,
                     streak_pixels, synthesize_reblurred, track, track_sequence, track_sharp,
                     write_report)


def translation(x=0.0, y=0.0, z=0.0):
    return Pose(np.array([1.0, 0.0, 0.0, 0.0]), np.array([x, y, z]))


@pytest.fixture(scope="module")
def keyframe(scene, cam, small_cfg):
    image = render_sharp(scene, cam, Pose.identity())
    return make_keyframe(image, render_depth(scene, cam, Pose.identity()), cam,
                         Pose.identity(), small_cfg)


@pytest.fixture
def ramp_image():
    u, _ = np.meshgrid(np.arange(64.0), np.arange(64.0))
    return GrayImage(0.1 + 0.01 * u)


# --------------------------------------------------------------------------
# Configuration and small helpers
# --------------------------------------------------------------------------

def test_default_config_is_valid():
    cfg = TrackerConfig()
    assert cfg.validate() is cfg
    assert (cfg.patch_size, cfg.n_virtual, cfg.pyramid_levels) == (9, 8, 4)


@pytest.mark.parametrize("changes", [
    {"patch_size": 4},
    {"n_virtual": 0},
    {"huber_delta": 0.0},
    {"lm_lambda_factor": 1.0},
    {"min_valid_residual_fraction": 1.5},
    {"keypoint_count": 3},
])
def test_invalid_config(changes):
    with pytest.raises(ConfigInvalid):
        TrackerConfig(**changes).validate()


def test_huber():
    r = np.array([-0.1, -0.01, 0.0, 0.02, 0.06])
    np.testing.assert_allclose(huber_weights(r, 0.03), [0.3, 1.0, 1.0, 1.0, 0.5])
    np.testing.assert_allclose(huber_cost(r, 0.03),
                               [0.03 * (0.1 - 0.015), 0.5e-4, 0.0, 2e-4, 0.03 * (0.06 - 0.015)])
    # continuous at the threshold
    assert huber_cost(np.array([0.03]), 0.03)[0] == pytest.approx(0.5 * 0.03 ** 2)


def test_round_half_away_from_zero():
    np.testing.assert_array_equal(round_half_away(np.array([-1.5, -0.5, 0.5, 1.5, 2.4, -2.6])),
                                  [-2.0, -1.0, 1.0, 2.0, 2.0, -3.0])


def test_patch_offsets():
    offsets = patch_offsets(3)
    assert offsets.shape == (9, 2)
    assert [0.0, 0.0] in offsets.tolist()
    assert offsets.min() == -1.0 and offsets.max() == 1.0


def test_residual_statistics():
    res = Residuals(np.array([0.1, 0.3, 0.0, -0.2]), np.array([True, True, False, True]), None)
    assert res.valid_fraction(0.25) == pytest.approx(0.5)
    assert res.cost(1.0) == pytest.approx((0.005 + 0.045 + 0.02) / 3)
    nothing = Residuals(np.zeros(3), np.zeros(3, dtype=bool), None)
    assert nothing.cost(0.03) == math.inf
    assert nothing.valid_fraction(0.25) == 0.0


# --------------------------------------------------------------------------
# Keypoints and keyframes
# --------------------------------------------------------------------------

def test_flat_image_has_no_keypoints():
    with pytest.raises(TooFewKeypoints):
        sample_keypoints(GrayImage(np.full((64, 64), 0.5)), np.ones((64, 64)), 100, 4)


def test_keypoints_sit_on_the_edge_of_a_disc():
    u, v = np.meshgrid(np.arange(64.0), np.arange(64.0))
    disc = GrayImage(np.where(np.hypot(u - 32, v - 32) <= 20, 0.9, 0.1))
    kps = sample_keypoints(disc, np.ones((64, 64)), 16, 4)

    radius = np.hypot(kps.uv[:, 0] - 32, kps.uv[:, 1] - 32)
    assert len(kps) >= 8
    assert np.all(np.abs(radius - 20) <= 2.0)
    cells = {(int(x) // 16, int(y) // 16) for x, y in kps.uv}
    assert len(cells) == len(kps)
    assert not cells & {(0, 0), (0, 3), (3, 0), (3, 3)}
    np.testing.assert_array_equal(kps.depth, 1.0)


def test_keypoint_count_stays_below_target(scene, cam):
    image = render_sharp(scene, cam, Pose.identity())
    kps = sample_keypoints(image, np.full(image.shape, 2.0), 100, 4)
    assert 8 <= len(kps) <= 100
    margin = 4 + 2
    assert kps.uv.min() >= margin
    assert kps.uv.max() <= 127 - margin


def test_keypoints_need_positive_depth(scene, cam):
    image = render_sharp(scene, cam, Pose.identity())
    with pytest.raises(TooFewKeypoints):
        sample_keypoints(image, np.full(image.shape, np.nan), 100, 4)
    with pytest.raises(DimensionMismatch):
        sample_keypoints(image, np.ones((10, 10)), 100, 4)


def test_invalid_depth_drops_the_cell_instead_of_a_weaker_pixel():
    u, v = np.meshgrid(np.arange(64.0), np.arange(64.0))
    disc = GrayImage(np.where(np.hypot(u - 32, v - 32) <= 20, 0.9, 0.1))
    depth = np.ones((64, 64))
    kps = sample_keypoints(disc, depth, 16, 4)
    x, y = kps.uv[0].astype(int)
    depth[y, x] = np.nan
    fewer = sample_keypoints(disc, depth, 16, 4)
    assert len(fewer) == len(kps) - 1
    np.testing.assert_array_equal(fewer.uv, kps.uv[1:])


def test_keypoints_at_coarser_level():
    kps = Keypoints(np.array([[0.0, 0.0], [9.5, 3.0]]), np.ones(2))
    np.testing.assert_allclose(kps.at_level(1), [[-0.25, -0.25], [4.5, 1.25]])


def test_keyframe_depth_noise(scene, cam, small_cfg):
    image = render_sharp(scene, cam, Pose.identity())
    depth = render_depth(scene, cam, Pose.identity())
    with pytest.raises(ConfigInvalid):
        make_keyframe(image, depth, cam, Pose.identity(), small_cfg, depth_noise=0.1)
    noisy = make_keyframe(image, depth, cam, Pose.identity(), small_cfg,
                          rng=np.random.default_rng(0), depth_noise=0.1)
    assert np.all(noisy.keypoints.depth > 0)
    assert not np.allclose(noisy.keypoints.depth, 2.0)
    assert len(noisy.pyramid) == len(noisy.cameras) == small_cfg.pyramid_levels


def test_keyframe_camera_mismatch(scene, small_cfg):
    cam = PinholeCamera(100.0, 100.0, 31.5, 31.5, 64, 64)
    image = GrayImage(np.zeros((48, 48)))
    with pytest.raises(DimensionMismatch):
        make_keyframe(image, np.ones((48, 48)), cam, Pose.identity(), small_cfg)


# --------------------------------------------------------------------------
# Re-blurred synthesis
# --------------------------------------------------------------------------

def test_reblur_of_static_trajectory_is_the_reference(ramp_image):
    cam = PinholeCamera(50.0, 50.0, 31.5, 31.5, 64, 64)
    value = synthesize_reblurred(ramp_image, cam, LocalTrajectory.static(Pose.identity()),
                                 (20.0, 30.0), 2.0, 1)
    assert value == pytest.approx(0.1 + 0.01 * 20.0, abs=1e-9)


def test_reblur_of_symmetric_sweep_on_a_ramp(ramp_image):
    cam = PinholeCamera(50.0, 50.0, 31.5, 31.5, 64, 64)
    traj = LocalTrajectory(translation(x=-0.08), translation(x=0.08), 0.02)
    value = synthesize_reblurred(ramp_image, cam, traj, (30.0, 30.0), 2.0, 9)
    assert value == pytest.approx(0.1 + 0.01 * 30.0, abs=1e-9)


def test_reblur_outside_reference_is_none(ramp_image):
    cam = PinholeCamera(50.0, 50.0, 31.5, 31.5, 64, 64)
    traj = LocalTrajectory(translation(x=-0.2), translation(x=-0.2), 0.02)
    assert synthesize_reblurred(ramp_image, cam, traj, (0.0, 10.0), 2.0, 4) is None


def test_reblur_needs_enough_virtual_poses(ramp_image):
    cam = PinholeCamera(50.0, 50.0, 31.5, 31.5, 64, 64)
    traj = LocalTrajectory(Pose.identity(), translation(x=0.01), 0.02)
    for n in (0, 1):
        with pytest.raises(ConfigInvalid):
            synthesize_reblurred(ramp_image, cam, traj, (30.0, 30.0), 2.0, n)


# --------------------------------------------------------------------------
# Single-frame tracking
# --------------------------------------------------------------------------

def test_identical_frames_converge_in_place(scene, cam, keyframe, small_cfg):
    current = build_pyramid(render_sharp(scene, cam, Pose.identity()), small_cfg.pyramid_levels)
    for exposure in (0.0, 0.02):
        start = LocalTrajectory(Pose.identity(), Pose.identity(), exposure)
        result = track(keyframe, current, exposure, start, small_cfg)
        assert result.status is TrackStatus.CONVERGED
        assert result.valid_fraction > 0.9
        assert len(result.iterations) == small_cfg.pyramid_levels
        for pose in (result.trajectory.start, result.trajectory.end):
            angle, dist = pose_error(pose, Pose.identity())
            assert dist < 1e-4 and angle < 1e-4


def test_tied_mode_keeps_one_pose(scene, cam, keyframe, small_cfg):
    current = build_pyramid(render_sharp(scene, cam, Pose.identity()), small_cfg.pyramid_levels)
    result = track(keyframe, current, 0.0,
                   LocalTrajectory(Pose.identity(), translation(x=0.01), 0.02), small_cfg)
    assert result.trajectory.exposure == 0.0
    assert result.trajectory.start is result.trajectory.end


def test_pyramid_depth_mismatch(scene, cam, keyframe, small_cfg):
    current = build_pyramid(render_sharp(scene, cam, Pose.identity()), 1)
    with pytest.raises(DimensionMismatch):
        track_sharp(keyframe, current, Pose.identity(), small_cfg)


def test_invalid_config_rejected_by_tracker(scene, cam, keyframe):
    current = build_pyramid(render_sharp(scene, cam, Pose.identity()), 2)
    with pytest.raises(ConfigInvalid):
        track_sharp(keyframe, current, Pose.identity(),
                    TrackerConfig(pyramid_levels=2, keypoint_count=64, patch_size=4))
    with pytest.raises(ConfigInvalid):
        track(keyframe, current, 0.02, LocalTrajectory.static(Pose.identity()),
              TrackerConfig(pyramid_levels=2, keypoint_count=64, n_virtual=1))


def test_sharp_alignment_recovers_offset(scene, cam, keyframe, small_cfg):
    truth = se3_exp(np.array([0.0, 0.0, np.radians(0.5), 0.02, 0.0, 0.0]))
    current = build_pyramid(render_sharp(scene, cam, truth), small_cfg.pyramid_levels)
    result = track_sharp(keyframe, current, Pose.identity(), small_cfg)
    assert result.status is not TrackStatus.DROPPED
    angle, dist = pose_error(result.trajectory.start, truth)
    assert dist < 0.004
    assert np.degrees(angle) < 0.1


def test_blur_aware_alignment_recovers_endpoints(scene, cam):
    cfg = TrackerConfig(pyramid_levels=2, keypoint_count=64, n_virtual=8)
    kf = make_keyframe(render_sharp(scene, cam, Pose.identity()),
                       render_depth(scene, cam, Pose.identity()), cam, Pose.identity(), cfg)
    gt = LocalTrajectory(translation(x=-0.03), translation(x=0.03), 0.02)
    blurred = render_blurred(scene, cam, FrameSpec(0.0, 0.02, gt), n=8)
    init = LocalTrajectory(translation(x=-0.02), translation(x=0.02), 0.02)

    result = track(kf, build_pyramid(blurred, cfg.pyramid_levels), 0.02, init, cfg)
    assert result.status is not TrackStatus.DROPPED
    assert pose_error(result.trajectory.start, gt.start)[1] < 0.01
    assert pose_error(result.trajectory.end, gt.end)[1] < 0.01
    for costs in result.cost_history:
        assert all(b <= a for a, b in zip(costs, costs[1:]))


def plane_depth_reference(ref, cur, cam, pix, depth, pose):
    """Residuals cur(x) - ref(warp(x)) with the plane's current-frame depth and a depth warp."""
    rays = backproject_depth_many(cam, pix, 1.0)
    z = (depth - pose.t[2]) / (rays @ pose.rotation[2])
    uv, in_front = warp_depth_many(cam, pix, z, pose)
    h, w = ref.shape
    ok = (in_front & (z > 0) & (uv[:, 0] >= 1) & (uv[:, 0] <= w - 2)
          & (uv[:, 1] >= 1) & (uv[:, 1] <= h - 2)
          & (pix[:, 0] >= 0) & (pix[:, 0] <= w - 1) & (pix[:, 1] >= 0) & (pix[:, 1] <= h - 1))
    inside = np.clip(pix, 0, [w - 1, h - 1]).astype(int)
    observed = cur.pixels[inside[:, 1], inside[:, 0]]
    predicted = map_coordinates(ref.pixels, [uv[:, 1], uv[:, 0]], order=1, mode="nearest")
    return np.where(ok, observed - predicted, 0.0), ok, uv


@pytest.fixture(scope="module")
def zero_exposure_case(scene, cam, keyframe, small_cfg):
    truth = translation(x=0.01, y=-0.005)
    blurred = render_blurred(scene, cam, FrameSpec(0.0, 0.02, LocalTrajectory(
        Pose.identity(), truth, 0.02)), n=8)
    current = build_pyramid(blurred, small_cfg.pyramid_levels)
    init = LocalTrajectory(Pose.identity(), translation(x=0.004), 0.02)
    result = track(keyframe, current, 0.0, init, small_cfg)
    level = LevelData(keyframe.pyramid[0], current[0], keyframe.cameras[0],
                      keyframe.keypoints.at_level(0), keyframe.keypoints.depth,
                      patch_offsets(small_cfg.patch_size))
    anchors = select_anchors(level, result.trajectory, SolveMode.TIED)
    pix = (anchors[0][:, None, :] + level.offsets[None]).reshape(-1, 2)
    depth = np.repeat(level.depth, len(level.offsets))
    return init, result, level, anchors, pix, depth


def test_zero_exposure_residuals_match_a_depth_warp(zero_exposure_case):
    _, result, level, anchors, pix, depth = zero_exposure_case
    for pose in (Pose.identity(), result.trajectory.start):
        res = evaluate_residuals(level, LocalTrajectory.static(pose), 1, SolveMode.TIED,
                                 anchors=anchors)
        r, ok, _ = plane_depth_reference(level.ref, level.cur, level.cam, pix, depth, pose)
        assert ok.mean() > 0.9
        np.testing.assert_array_equal(res.valid, ok & np.repeat(anchors[1], len(level.offsets)))
        np.testing.assert_allclose(res.r[res.valid], r[res.valid], atol=1e-9)
        assert res.jacobian.shape == (len(pix), 6)


def test_zero_exposure_jacobian_matches_the_warp_geometry(zero_exposure_case):
    _, result, level, anchors, pix, depth = zero_exposure_case
    pose = result.trajectory.start
    res = evaluate_residuals(level, LocalTrajectory.static(pose), 1, SolveMode.TIED,
                             anchors=anchors)
    _, ok, uv = plane_depth_reference(level.ref, level.cur, level.cam, pix, depth, pose)

    def ref_at(du, dv):
        return map_coordinates(level.ref.pixels, [uv[:, 1] + dv, uv[:, 0] + du], order=1,
                               mode="nearest")

    gu = 0.5 * (ref_at(1.0, 0.0) - ref_at(-1.0, 0.0))
    gv = 0.5 * (ref_at(0.0, 1.0) - ref_at(0.0, -1.0))
    expected = np.zeros((len(pix), 6))
    h = 1e-6
    for k in range(6):
        e = np.zeros(6)
        e[k] = h
        _, _, plus = plane_depth_reference(level.ref, level.cur, level.cam, pix, depth,
                                           se3_exp(e) @ pose)
        _, _, minus = plane_depth_reference(level.ref, level.cur, level.cam, pix, depth,
                                            se3_exp(-e) @ pose)
        duv = (plus - minus) / (2 * h)
        expected[:, k] = -(gu * duv[:, 0] + gv * duv[:, 1])
    valid = res.valid & ok
    np.testing.assert_allclose(res.jacobian[valid], expected[valid], rtol=1e-5, atol=1e-6)


def test_zero_exposure_converges_where_a_reference_solver_does(zero_exposure_case, small_cfg):
    init, result, level, anchors, pix, depth = zero_exposure_case

    def residuals(x):
        r, _, _ = plane_depth_reference(level.ref, level.cur, level.cam, pix, depth,
                                        se3_exp(x) @ init.start)
        return r

    solution = least_squares(residuals, np.zeros(6), loss="huber", f_scale=small_cfg.huber_delta)
    angle, dist = pose_error(se3_exp(solution.x) @ init.start, result.trajectory.start)
    assert dist < 2e-3
    assert np.degrees(angle) < 0.05


def test_forced_zero_exposure_is_the_sharp_aligner(zero_exposure_case, keyframe, small_cfg):
    init, forced, level, _, _, _ = zero_exposure_case
    current = build_pyramid(level.cur, small_cfg.pyramid_levels)
    sharp = track_sharp(keyframe, current, init.start, small_cfg)
    np.testing.assert_array_equal(forced.trajectory.start.matrix(), sharp.trajectory.start.matrix())
    assert forced.cost == sharp.cost
    assert forced.modes == (SolveMode.TIED, SolveMode.TIED)


def test_warm_start_is_no_worse_than_a_cold_one(scene, cam, keyframe, small_cfg):
    gt = LocalTrajectory(translation(x=-0.02, y=0.01), translation(x=0.02, y=0.0), 0.02)
    current = build_pyramid(render_blurred(scene, cam, FrameSpec(0.0, 0.02, gt), n=16),
                            small_cfg.pyramid_levels)
    warm = track(keyframe, current, 0.02, gt, small_cfg)
    cold = track(keyframe, current, 0.02, LocalTrajectory.static(Pose.identity(), 0.02),
                 small_cfg)
    assert warm.status is not TrackStatus.DROPPED
    assert warm.cost <= cold.cost + 1e-12


def test_streak_of_a_sideways_sweep(cam, keyframe):
    level = LevelData(keyframe.pyramid[0], keyframe.pyramid[0], cam,
                      keyframe.keypoints.at_level(0), keyframe.keypoints.depth, patch_offsets(3))
    sweep = LocalTrajectory(translation(x=-0.03), translation(x=0.03), 0.02)
    # fx * 0.06 m / 2 m
    assert streak_pixels(level, sweep) == pytest.approx(3.0, abs=1e-9)
    assert streak_pixels(level, LocalTrajectory.static(Pose.identity(), 0.02)) == 0.0


def test_short_streak_levels_only_shift(scene, cam, keyframe, small_cfg):
    current = build_pyramid(render_sharp(scene, cam, Pose.identity()), small_cfg.pyramid_levels)
    small = LocalTrajectory(translation(x=-0.001), translation(x=0.001), 0.02)
    result = track(keyframe, current, 0.02, small, small_cfg)
    assert result.modes == (SolveMode.SHIFT, SolveMode.FULL)

    wide = LocalTrajectory(translation(x=-0.05), translation(x=0.05), 0.02)
    result = track(keyframe, current, 0.02, wide, small_cfg)
    assert result.modes[0] is SolveMode.FULL


def test_shift_keeps_the_relative_motion(cam, keyframe):
    level = LevelData(keyframe.pyramid[1], keyframe.pyramid[1], keyframe.cameras[1],
                      keyframe.keypoints.at_level(1), keyframe.keypoints.depth, patch_offsets(3))
    traj = LocalTrajectory(translation(x=-0.01), translation(x=0.01, y=0.002), 0.02)
    res = evaluate_residuals(level, traj, 4, SolveMode.SHIFT)
    assert res.jacobian.shape == (len(res.r), 6)
    full = evaluate_residuals(level, traj, 4, SolveMode.FULL)
    np.testing.assert_allclose(res.jacobian, full.jacobian[:, :6] + full.jacobian[:, 6:],
                               atol=1e-12)


def test_cost_is_blind_to_time_reversal(scene, cam, keyframe):
    gt = LocalTrajectory(translation(x=-0.03), translation(x=0.03), 0.02)
    blurred = render_blurred(scene, cam, FrameSpec(0.0, 0.02, gt), n=8)
    level = LevelData(keyframe.pyramid[0], blurred, cam, keyframe.keypoints.at_level(0),
                      keyframe.keypoints.depth, patch_offsets(9))
    reversed_ = LocalTrajectory(gt.end, gt.start, gt.exposure)
    forward = evaluate_residuals(level, gt, 8, SolveMode.FULL, jacobian=False).cost(0.03)
    backward = evaluate_residuals(level, reversed_, 8, SolveMode.FULL, jacobian=False).cost(0.03)
    assert forward == pytest.approx(backward, rel=1e-9)


def test_orientation_follows_the_reference():
    reference = LocalTrajectory(translation(x=-0.03), translation(x=0.03), 0.02)
    flipped = LocalTrajectory(translation(x=0.028), translation(x=-0.031), 0.02)
    oriented = orient_like(flipped, reference, 2.0)
    assert oriented.start is flipped.end and oriented.end is flipped.start
    assert orient_like(reference, reference, 2.0) is reference
    # a motionless reference cannot choose
    assert orient_like(flipped, LocalTrajectory.static(Pose.identity(), 0.02), 2.0) is flipped


def test_cold_start_spreads_the_frame_velocity(scene, cam, keyframe, small_cfg):
    period = 1.0 / 27.0

    def blurred_at(t0):
        frame = FrameSpec(t0, 0.02, LocalTrajectory(translation(x=t0 - 0.01),
                                                    translation(x=t0 + 0.01), 0.02))
        return build_pyramid(render_blurred(scene, cam, frame, n=16), small_cfg.pyramid_levels)

    first = blurred_at(0.0)
    init = cold_start(keyframe, first, blurred_at(period), 0.02, period, small_cfg)
    assert init.exposure == 0.02
    assert init.start.t[0] < init.end.t[0]
    assert abs(init.start.t[0] + 0.01) < 0.004
    assert abs(init.end.t[0] - 0.01) < 0.004

    alone = cold_start(keyframe, first, None, 0.02, 0.0, small_cfg)
    assert alone.start is alone.end
    assert pose_error(alone.start, Pose.identity())[1] < 0.003


def test_black_frame_is_dropped(keyframe, small_cfg, cam):
    black = build_pyramid(GrayImage(np.zeros((cam.height, cam.width))), small_cfg.pyramid_levels)
    result = track_sharp(keyframe, black, Pose.identity(), small_cfg)
    assert result.status is TrackStatus.DROPPED
    assert result.valid_fraction < small_cfg.min_valid_residual_fraction


# --------------------------------------------------------------------------
# Motion model
# --------------------------------------------------------------------------

def test_prediction_without_history():
    assert predict_motion([], 1.0) is None
    still = LocalTrajectory.static(translation(x=1.0))
    assert predict_motion([(0.0, still)], 1.0) is still


def test_single_entry_carries_its_exposure_twist():
    only = LocalTrajectory(translation(x=1.0), translation(x=1.1), 0.02)
    predicted = predict_motion([(0.0, only)], 0.04)
    np.testing.assert_allclose(predicted.start.t, [1.2, 0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(predicted.end.t, [1.3, 0.0, 0.0], atol=1e-12)
    assert predicted.exposure == 0.02


def test_constant_twist_extrapolation():
    history = [(0.0, LocalTrajectory(translation(x=0.0), translation(x=0.1), 0.02)),
               (1.0, LocalTrajectory(translation(x=1.0), translation(x=1.1), 0.02))]
    predicted = predict_motion(history, 2.0)
    np.testing.assert_allclose(predicted.start.t, [2.0, 0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(predicted.end.t, [2.1, 0.0, 0.0], atol=1e-12)


def test_prediction_is_gauge_invariant(rng):
    def random_pose():
        return se3_exp(np.concatenate((0.3 * rng.standard_normal(3), rng.standard_normal(3))))

    history = [(0.0, LocalTrajectory(random_pose(), random_pose(), 0.02)),
               (0.5, LocalTrajectory(random_pose(), random_pose(), 0.02))]
    g = random_pose()
    moved = [(t, traj.left_multiplied(g)) for t, traj in history]
    a = predict_motion(history, 0.8).left_multiplied(g)
    b = predict_motion(moved, 0.8)
    np.testing.assert_allclose(a.start.matrix(), b.start.matrix(), atol=1e-9)
    np.testing.assert_allclose(a.end.matrix(), b.end.matrix(), atol=1e-9)


# --------------------------------------------------------------------------
# Sequences
# --------------------------------------------------------------------------

SEQ_CAMERA = PinholeCamera(80.0, 80.0, 47.5, 47.5, 96, 96)


def make_dataset(root, scene, velocity=(0.0, 0.0, 0.0), n_frames=3):
    frames = synth_trajectory("constant_velocity",
                              TrajectoryParams(n_frames=n_frames, velocity=velocity))
    generate_sequence(scene, SEQ_CAMERA, frames, 4, str(root))
    return load_dataset(str(root))


def test_first_keyframe_takes_groundtruth_pose(tmp_path, scene):
    ds = make_dataset(tmp_path, scene, velocity=(0.5, 0.0, 0.0), n_frames=1)
    np.testing.assert_allclose(initial_keyframe_pose(ds).t, [0.005, 0.0, 0.0], atol=1e-9)


def test_static_sequence(tmp_path, scene, small_cfg):
    result = track_sequence(make_dataset(tmp_path, scene), small_cfg)
    assert len(result.results) == 3
    assert all(r.status is not TrackStatus.DROPPED for r in result.results)
    assert result.keyframes == (0,)
    assert len(result.trajectory) == 3
    assert np.abs(result.trajectory.positions()).max() < 1e-3
    np.testing.assert_allclose(result.timestamps, np.arange(3) / 27.0 + 0.01, atol=1e-9)


def test_black_frame_in_sequence_is_dropped(tmp_path, scene, small_cfg):
    ds = make_dataset(tmp_path, scene)
    save_pgm(str(tmp_path / "blurred" / "000001.pgm"), GrayImage(np.zeros((96, 96))))
    result = track_sequence(ds, small_cfg)
    statuses = [r.status for r in result.results]
    assert statuses[1] is TrackStatus.DROPPED
    assert TrackStatus.DROPPED not in (statuses[0], statuses[2])
    assert len(result.trajectory) == 2


def test_forced_zero_exposure_equals_blur_naive(tmp_path, scene, small_cfg):
    ds = make_dataset(tmp_path, scene, velocity=(0.3, 0.0, 0.0))
    forced = track_sequence(ds, small_cfg, mode="mba", force_zero_exposure=True)
    naive = track_sequence(ds, small_cfg, mode="blur-naive")
    np.testing.assert_array_equal(forced.trajectory.positions(), naive.trajectory.positions())
    assert [r.status for r in forced.results] == [r.status for r in naive.results]


def test_provided_depth_needs_a_directory(tmp_path, scene, small_cfg):
    ds = make_dataset(tmp_path, scene, n_frames=1)
    with pytest.raises(ConfigInvalid):
        track_sequence(ds, small_cfg, depth_source="provided")


def test_report_round_trip(tmp_path, scene, small_cfg):
    ds = make_dataset(tmp_path / "seq", scene)
    result = track_sequence(ds, small_cfg)
    path = str(tmp_path / "report.txt")
    write_report(path, result.timestamps, result.results)
    report = read_report(path)
    assert len(report) == 3
    assert list(report["status"]) == [r.status.value for r in result.results]
    assert report["iterations"][0].count(",") == small_cfg.pyramid_levels - 1
    np.testing.assert_allclose(report["timestamp"], result.timestamps, atol=1e-9)


@pytest.fixture(scope="module")
def sweep(tmp_path_factory, scene):
    # 80 px * 4 m/s * 0.02 s / 2 m = 3.2 px streaks
    root = tmp_path_factory.mktemp("sweep")
    frames = synth_trajectory("constant_velocity",
                              TrajectoryParams(n_frames=6, velocity=(4.0, 0.0, 0.0)))
    generate_sequence(scene, SEQ_CAMERA, frames, 16, str(root))
    return load_dataset(str(root))


def test_blur_aware_sequence_recovers_the_exposure(sweep, small_cfg):
    mba = track_sequence(sweep, small_cfg, mode="mba")
    naive = track_sequence(sweep, small_cfg, mode="blur-naive")
    assert all(r.status is not TrackStatus.DROPPED for r in mba.results)

    mba_err = endpoint_errors(mba.endpoints, sweep.groundtruth)["translation_m"]
    naive_err = endpoint_errors(naive.endpoints, sweep.groundtruth)["translation_m"]
    assert len(mba_err) == 12
    # half the 8 cm exposure sweep
    assert naive_err.min() > 0.03
    assert mba_err.max() < 0.02
    for result in mba.results:
        assert result.trajectory.start.t[0] < result.trajectory.end.t[0]


def test_relative_trajectories_ignore_the_world_frame(sweep, small_cfg):
    g = se3_exp(np.array([0.2, -0.1, 0.3, 1.0, -2.0, 0.5]))
    moved = replace(sweep, groundtruth=sweep.groundtruth.transformed(g.rotation, g.t))
    assert pose_error(initial_keyframe_pose(moved), g @ initial_keyframe_pose(sweep))[1] < 1e-9

    a = track_sequence(sweep, small_cfg)
    b = track_sequence(moved, small_cfg)
    assert a.keyframes == b.keyframes
    for x, y in zip(a.results, b.results):
        for p, q in ((x.trajectory.start, y.trajectory.start), (x.trajectory.end, y.trajectory.end)):
            np.testing.assert_allclose(p.matrix(), q.matrix(), atol=1e-6)
