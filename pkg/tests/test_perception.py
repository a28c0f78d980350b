import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from videoguide.errors import ConfigurationError, ProtocolError, TrackingLost
from videoguide.geometry import DepthMap, Pose6D, TriMesh, backproject, chamfer, mask_iou, nearest_distances
from videoguide.imagination import GuidanceVideo, NoiseModel, OracleTake, OracleVideoProvider, VideoSample, VideoScore
from videoguide.perception import (OracleContacts, OracleDepth, OracleHand, OracleSegmenter, PoseObjective,
                                   background_depth, complete_depth, detect_affordance, estimate_pose,
                                   extract_contacts, track_masks, track_poses, select_keyframes)
from videoguide.render import colorize, rasterize
from videoguide.sim import ObjectSpec, SceneConfig, SimState
from videoguide.taskfile import load_task

from conftest import cube_scene, small_camera

WALL = ObjectSpec(9, "wall", TriMesh.box([4, 4, 0.1]), Pose6D([0, 0, 2]), foreground=False)


def desk(gap=None):
    """Actuator cube in front of a wall; optional target cube ``gap`` to its right."""
    objs = [ObjectSpec(1, "pusher", TriMesh.box([0.2] * 3), Pose6D([0, 0, 1]), actuator=True), WALL]
    if gap is not None:
        objs.append(ObjectSpec(2, "block", TriMesh.box([0.2] * 3), Pose6D([0.2 + gap, 0, 1]), target=True))
    else:
        objs[0] = ObjectSpec(1, "pusher", objs[0].shape, objs[0].initial_pose, actuator=True, target=True)
    return SceneConfig(tuple(objs), small_camera(256, 300.0), (0.0, 0.0, 0.0))


def scripted_video(scene, pose_at, n=40, start=0, end=35, stride=5, tips=None):
    """Kinematic oracle video: ``pose_at(f)`` places the actuator at frame ``f``."""
    s0 = SimState.initial(scene)
    b = s0.body_ids.index(scene.actuator.id)
    states = []
    for f in range(n):
        arrays = s0.mutable_arrays()
        p = pose_at(f)
        arrays[0][b], arrays[1][b] = p.position, p.orientation
        states.append(s0.with_arrays(arrays, 0.05 * f))
    obs = [rasterize(s, scene) for s in states]
    masks = {o.id: tuple(ob.seg.mask(o.id) for ob in obs) for o in scene.foreground}
    take = OracleTake("demo", {}, tuple(states), tuple(o.depth for o in obs), tuple(o.seg for o in obs), masks,
                      tuple(s.pose(scene.actuator.id) for s in states), start, end, tips)
    sample = VideoSample(tuple(colorize(o.depth, o.seg) for o in obs), "p", "oracle", 0, 0, take)
    return GuidanceVideo(sample, VideoScore(15)).with_keyframes(range(0, n, stride), start, end)


def slide(dx=0.1, frames=35):
    return lambda f: Pose6D([dx * min(f, frames) / frames, 0, 1])


class Bounds:
    def __init__(self, start, end):
        self.bounds = (start, end)

    def keyframe_bounds(self, sample, kfs):
        return self.bounds


@pytest.fixture(scope="module")
def hammer():
    return load_task("hammer-peg")


@pytest.fixture(scope="module")
def noisy_hammer(hammer):
    prov = OracleVideoProvider(hammer.scene, hammer.script(), NoiseModel(1.0), hammer.segment_duration)
    s = prov.generate("p", None, 1, seed=0, offset=1)[0]
    return select_keyframes(GuidanceVideo(s, VideoScore(15)), Bounds(s.oracle.start, s.oracle.end), 5)


# -- masks ------------------------------------------------------------------


def test_track_masks_noise_free_equals_truth():
    scene = desk(0.3)
    video = scripted_video(scene, slide())
    init = rasterize(SimState.initial(scene), scene)
    tracks = track_masks(video, init, scene, OracleSegmenter())
    take = video.sample.oracle
    for oid, t in tracks.items():
        for f in range(40):
            assert np.array_equal(t.masks[f], take.labels_map[f].mask(oid))


def test_noisy_masks_keep_iou_on_wide_objects(hammer, noisy_hammer):
    take = noisy_hammer.sample.oracle
    init = rasterize(SimState.initial(hammer.scene), hammer.scene)
    tracks = track_masks(noisy_hammer, init, hammer.scene, OracleSegmenter())
    checked = 0
    for oid, t in tracks.items():
        for f in range(len(t)):
            truth = take.labels_map[f].mask(oid)
            cols = np.nonzero(truth.any(axis=0))[0]
            rows = np.nonzero(truth.any(axis=1))[0]
            if len(cols) and min(np.ptp(cols), np.ptp(rows)) + 1 >= 20:
                assert mask_iou(t.masks[f], truth) >= 0.7
                checked += 1
    assert checked > 0


def test_track_masks_object_missing_at_start():
    scene = desk(0.3)
    video = scripted_video(scene, slide())
    init = rasterize(SimState.initial(scene), scene, include=[1, 9])
    with pytest.raises(ConfigurationError):
        track_masks(video, init, scene, OracleSegmenter())


# -- depth ------------------------------------------------------------------


class GarbageDepth:
    def depth(self, video):
        rng = np.random.default_rng(0)
        h, w = video.sample.frames[0].shape[:2]
        return [DepthMap(rng.uniform(0.1, 9, (h, w)).astype(np.float32), rng.random((h, w)) > 0.3)
                for _ in video.sample.frames]


@pytest.mark.parametrize("provider", [OracleDepth(), GarbageDepth()])
def test_background_pixels_copied_bitwise(provider):
    scene = desk(0.3)
    video = scripted_video(scene, slide())
    tracks = track_masks(video, rasterize(SimState.initial(scene), scene), scene, OracleSegmenter())
    d0 = background_depth(scene)
    out = complete_depth(video, tracks, d0, provider)
    for f, d in enumerate(out.frames):
        fg = tracks[1].masks[f] | tracks[2].masks[f]
        assert np.array_equal(d.values[~fg], d0.values[~fg])
        assert np.array_equal(d.valid[~fg], d0.valid[~fg])


def test_noise_free_foreground_depth_is_rendered_depth():
    scene = desk(0.3)
    video = scripted_video(scene, slide())
    tracks = track_masks(video, rasterize(SimState.initial(scene), scene), scene, OracleSegmenter())
    out = complete_depth(video, tracks, background_depth(scene), OracleDepth())
    take = video.sample.oracle
    for f in (0, 20, 39):
        fg = tracks[1].masks[f]
        assert np.array_equal(out.frames[f].values[fg], take.depth[f].values[fg])


@pytest.mark.parametrize("align", [False, True])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_depth_noise_cloud_error_bound(hammer, align, seed):
    # depth scale noise only: exact masks, no pose jitter
    noise = NoiseModel(1.0, mask_radius=0.0, position_sigma=0.0, rotation_sigma_deg=0.0)
    prov = OracleVideoProvider(hammer.scene, hammer.script(), noise, hammer.segment_duration)
    video = GuidanceVideo(prov.generate("p", None, 1, seed=seed, offset=1)[0], VideoScore(15))
    scene, take = hammer.scene, video.sample.oracle
    init = rasterize(SimState.initial(scene), scene)
    tracks = track_masks(video, init, scene, OracleSegmenter())
    out = complete_depth(video, tracks, background_depth(scene), OracleDepth(), align=align)
    act = scene.actuator.id
    for f in range(0, len(video.sample), 5):
        truth = backproject(rasterize(take.states[f], scene).depth,
                            take.labels_map[f].mask(act), None, scene.camera)
        est = backproject(out.frames[f], tracks[act].masks[f], None, scene.camera)
        mean_depth = float(np.mean(scene.camera.world_to_camera(truth.points)[:, 2]))
        assert chamfer(est, truth) <= 0.05 * mean_depth


# -- pose estimation --------------------------------------------------------


def _observe(scene, pose):
    s0 = SimState.initial(scene)
    arrays = s0.mutable_arrays()
    arrays[0][0], arrays[1][0] = pose.position, pose.orientation
    return rasterize(s0.with_arrays(arrays, 0.0), scene)


def test_estimate_pose_fixed_point():
    scene = cube_scene()
    truth = Pose6D.from_rotvec([0.05, -0.02, 2.0], [0.1, 0.2, 0.05])
    obs = _observe(scene, truth)
    pose, r = estimate_pose(scene.actuator.shape, obs.depth, obs.seg, scene.camera, truth, label=1)
    assert pose.translation_error(truth) < 1e-6 and pose.rotation_error(truth) < 1e-6
    assert r < 1e-6


@pytest.mark.parametrize("axis", [(1, 0, 0), (0, 1, 0), (1, 1, 1)])
def test_estimate_pose_recovers_perturbation(axis):
    scene = cube_scene()
    truth = Pose6D.from_rotvec([0, 0, 2.0], [0.2, 0.1, -0.15])
    obs = _observe(scene, truth)
    u = np.asarray(axis, float) / np.linalg.norm(axis)
    rot = Pose6D.from_rotvec([0, 0, 0], u[::-1] * math.radians(10))
    init = Pose6D(truth.position + 0.03 * u, rot.compose(truth).orientation)
    assert init.translation_error(truth) == pytest.approx(0.03)
    pose, r = estimate_pose(scene.actuator.shape, obs.depth, obs.seg, scene.camera, init, label=1, seed=3)
    assert pose.translation_error(truth) <= 0.005
    assert math.degrees(pose.rotation_error(truth)) <= 2.0


@pytest.mark.parametrize("shift", [0.01, 0.05, 0.2])
def test_estimate_pose_never_worse_than_init(shift):
    scene = cube_scene()
    obs = _observe(scene, Pose6D([0, 0, 2.0]))
    init = Pose6D([shift, -shift, 2.0 + shift])
    obj = PoseObjective(scene.actuator.shape, obs.depth, obs.seg.mask(1), scene.camera)
    _, r = estimate_pose(scene.actuator.shape, obs.depth, obs.seg, scene.camera, init, label=1, budget=60)
    assert r <= obj.loss(init)


def test_estimate_pose_empty_mask():
    scene = cube_scene()
    obs = _observe(scene, Pose6D([0, 0, 2.0]))
    with pytest.raises(TrackingLost):
        estimate_pose(scene.actuator.shape, obs.depth, np.zeros(obs.depth.shape, bool), scene.camera,
                      Pose6D([0, 0, 2.0]))


# -- pose tracking ----------------------------------------------------------


def _track(scene, video):
    init = rasterize(SimState.initial(scene), scene)
    masks = track_masks(video, init, scene, OracleSegmenter())
    depths = complete_depth(video, masks, background_depth(scene), OracleDepth())
    return track_poses(video, masks, depths, scene, objects=[scene.actuator.id])[scene.actuator.id]


def test_static_object_constant_track():
    scene = desk()
    track = _track(scene, scripted_video(scene, lambda f: Pose6D([0, 0, 1])))
    for p in track.poses:
        assert p.translation_error(Pose6D([0, 0, 1])) < 1e-6
        assert p.rotation_error(Pose6D([0, 0, 1])) < 1e-6


def test_sliding_actuator_tracked_closely():
    scene = desk()
    video = scripted_video(scene, slide(0.1, 35))
    track = _track(scene, video)
    assert len(track.keyframes) == 8
    xs = [p.position[0] for p in track.poses]
    assert all(b >= a for a, b in zip(xs, xs[1:]))
    assert abs(xs[-1] - 0.1) <= 0.01
    take = video.sample.oracle
    for k, p in zip(track.keyframes, track.poses):
        assert p.translation_error(take.actuator_poses[k]) <= 0.005
        assert math.degrees(p.rotation_error(take.actuator_poses[k])) <= 2.0


def test_noisy_hammer_endpoint(hammer, noisy_hammer):
    track = _track(hammer.scene, noisy_hammer)
    end = noisy_hammer.end
    truth = noisy_hammer.sample.oracle.states[end].pose(hammer.scene.actuator.id)
    assert track.pose_at(end).translation_error(truth) <= 0.02
    assert math.degrees(track.pose_at(end).rotation_error(truth)) <= 5.0


# -- keyframes --------------------------------------------------------------


def test_uniform_keyframes():
    video = scripted_video(desk(), lambda f: Pose6D([0, 0, 1]))
    out = select_keyframes(video, Bounds(0, 35), 5)
    assert out.keyframes == tuple(range(0, 40, 5))


def test_retained_keyframes_within_bounds():
    video = scripted_video(desk(), lambda f: Pose6D([0, 0, 1]))
    out = select_keyframes(video, Bounds(5, 35), 5)
    assert out.retained == (5, 10, 15, 20, 25, 30, 35)


def test_end_before_start():
    video = scripted_video(desk(), lambda f: Pose6D([0, 0, 1]))
    with pytest.raises(ProtocolError):
        select_keyframes(video, Bounds(30, 10), 5)


_static = None


@given(st.integers(1, 12), st.integers(0, 39), st.integers(0, 39))
def test_keyframes_sorted_unique_in_range(stride, a, b):
    global _static
    if _static is None:
        _static = scripted_video(desk(), lambda f: Pose6D([0, 0, 1]))
    out = select_keyframes(_static, Bounds(min(a, b), max(a, b)), stride)
    kfs = out.retained
    assert list(kfs) == sorted(set(kfs))
    assert all(0 <= k < 40 for k in kfs) and len(kfs) >= 1


# -- contacts and affordance ------------------------------------------------


def test_contact_turns_on_after_approach():
    scene = desk(gap=0.1)
    video = scripted_video(scene, slide(0.1, 10))  # touches from frame 20 onward
    sched = extract_contacts(video, scene, OracleContacts())
    table = sched.table()[:, 0]
    assert list(table) == [k >= 10 for k in sched.keyframes]


def test_far_apart_never_in_contact():
    scene = desk(gap=1.0)
    sched = extract_contacts(scripted_video(scene, slide(0.1)), scene, OracleContacts())
    assert not sched.table().any()


def test_self_pair_excluded():
    scene = desk()
    sched = extract_contacts(scripted_video(scene, slide(0.1)), scene, OracleContacts())
    assert sched.pairs == ()


def test_affordance_follows_hand_label(hammer):
    s = OracleVideoProvider(hammer.scene, hammer.script(), NoiseModel(0.0), hammer.segment_duration) \
        .generate("p", None, 1, seed=0, offset=1)[0]
    scene, take = hammer.scene, s.oracle
    video = GuidanceVideo(s, VideoScore(15))
    f, act = take.start, scene.actuator.id
    tips = OracleHand(scene).fingertips(video, f, scene.camera)
    assert len(tips) > 0
    region = detect_affordance(f, take.masks[act][f], take.depth[f], scene.camera, tips)
    assert not region.is_empty
    r, c = region.pixels.mean(axis=0)
    assert np.hypot(c - tips[:, 0].mean(), r - tips[:, 1].mean()) <= 6
    surface = take.states[f].pose(act).apply(scene.actuator.shape.sample_surface(4000, np.random.default_rng(0)))
    assert nearest_distances(region.points, surface).max() <= 0.02


def test_no_hand_gives_empty_region():
    scene = desk()
    video = scripted_video(scene, slide())
    tips = OracleHand(scene).fingertips(video, 0, scene.camera)
    take = video.sample.oracle
    assert detect_affordance(0, take.masks[1][0], take.depth[0], scene.camera, tips).is_empty


def test_fingertips_off_actuator_give_empty_region():
    scene = desk()
    take = scripted_video(scene, slide()).sample.oracle
    region = detect_affordance(0, take.masks[1][0], take.depth[0], scene.camera, np.array([[2.0, 2.0]]))
    assert region.is_empty
