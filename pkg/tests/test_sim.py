import numpy as np
import pytest

from videoguide.errors import ConfigurationError
from videoguide.geometry import Pose6D, TriMesh
from videoguide.sim import (FREE_GRANULAR, ObjectSpec, ParticleBlob, SceneConfig, SimState, Trajectory, contacts,
                            rollout, rollout_states, step)

from conftest import cube_scene, small_camera


def two_cubes(gap, eps=0.01):
    a = ObjectSpec(1, "a", TriMesh.box([1, 1, 1]), Pose6D([0, 0, 0]), actuator=True)
    b = ObjectSpec(2, "b", TriMesh.box([1, 1, 1]), Pose6D([1 + gap, 0, 0]), target=True)
    return SceneConfig((a, b), small_camera(), (0, 0, 0), contact_epsilon=eps)


def test_scene_validation():
    cam = small_camera()
    box = TriMesh.box([0.1] * 3)
    with pytest.raises(ConfigurationError):
        ObjectSpec(1, "bg", box, foreground=False, actuator=True)
    with pytest.raises(ConfigurationError):
        SceneConfig((ObjectSpec(1, "a", box, target=True),), cam)
    with pytest.raises(ConfigurationError):
        SceneConfig((ObjectSpec(1, "a", box, actuator=True),), cam)
    assert ObjectSpec(1, "a", box).mass == 0.1
    # actuator may also be the target
    SceneConfig((ObjectSpec(1, "a", box, actuator=True, target=True),), cam)


def test_hold_pose_without_gravity_is_a_fixed_point():
    scene = cube_scene()
    s0 = SimState.initial(scene)
    s = s0
    for _ in range(20):
        s = step(s, scene.actuator.initial_pose, scene)
    assert np.abs(s.pos - s0.pos).max() < 1e-9
    assert np.abs(s.quat - s0.quat).max() < 1e-9


def falling_particle_scene():
    act = ObjectSpec(1, "pusher", TriMesh.box([0.05] * 3), Pose6D([2.0, 0, 0.5]), actuator=True)
    drop = ObjectSpec(2, "drop", ParticleBlob([[0, 0, 0]], 0.01, FREE_GRANULAR), Pose6D([0, 0, 1.0]), target=True)
    table = ObjectSpec(3, "table", TriMesh.box([1, 1, 0.1]), Pose6D([0, 0, -0.05]), foreground=False)
    return SceneConfig((act, drop, table), small_camera(), (0, 0, -9.8), 0.01, 0.005)


def test_particle_falls_ballistically_then_rests():
    scene = falling_particle_scene()
    s = SimState.initial(scene)
    hold = scene.actuator.initial_pose
    dt, g = scene.timestep, 9.8
    for n in range(1, 101):
        s = step(s, hold, scene)
        t = n * dt
        z = s.particles(2)[0, 2]
        exact = 1.0 - 0.5 * g * t * t
        if exact > 0.05:
            assert abs(z - exact) <= g * dt * t + 1e-9  # first-order integrator bound
    assert abs(s.particles(2)[0, 2] - 0.01) < scene.contact_epsilon
    assert np.linalg.norm(s.pvel) < 0.05


def _arrival(dist):
    scene = cube_scene(size=0.1)
    a = scene.actuator.initial_pose
    b = Pose6D(a.position + [dist, 0, 0])
    s = SimState.initial(scene)
    budget = int(np.ceil(dist / scene.max_speed * 1.5 / scene.timestep))
    for _ in range(budget):
        s = step(s, b, scene)
    return s.pose(1).translation_error(b)


def test_actuator_reaches_target_under_speed_clamp():
    assert _arrival(2.0) < 1e-3


@pytest.mark.xfail(strict=True, reason="kp=100 critically damped needs ~0.66 s to settle to 1 mm, "
                                       "longer than 1.5*dist/vmax for short moves")
def test_actuator_short_move_within_time_bound():
    assert _arrival(0.5) < 1e-3


def test_identical_waypoints_keep_initial_state():
    scene = cube_scene()
    p0 = scene.actuator.initial_pose
    states = rollout_states(scene, Trajectory(waypoints=(p0,) * 4), [0, 1, 2, 3])
    s0 = SimState.initial(scene)
    for s in states:
        assert np.abs(s.pos - s0.pos).max() < 1e-9


def push_scene():
    pusher = ObjectSpec(1, "pusher", TriMesh.box([0.04, 0.05, 0.03]), Pose6D([-0.10, 0, 0.0235]), actuator=True)
    box = ObjectSpec(2, "box", TriMesh.box([0.05] * 3), Pose6D([-0.03, 0, 0.025]), target=True)
    table = ObjectSpec(3, "table", TriMesh.box([0.6, 0.6, 0.04]), Pose6D([0, 0, -0.02]), foreground=False)
    return SceneConfig((pusher, box, table), small_camera(), contact_epsilon=0.005)


def test_scripted_push_moves_box_forward():
    scene = push_scene()
    wps = tuple(Pose6D([x, 0, 0.0235]) for x in (-0.07, -0.04, -0.01, 0.01))
    traj = Trajectory(waypoints=wps)
    end = rollout_states(scene, traj, [3])[0]
    assert end.pose(2).position[0] - (-0.03) > scene.contact_epsilon


def test_rollout_is_deterministic():
    scene = push_scene()
    wps = tuple(Pose6D([x, 0, 0.0235]) for x in (-0.07, -0.04, -0.01, 0.01))
    traj = Trajectory(waypoints=wps)
    a = rollout(scene, traj, [1, 3])
    b = rollout(scene, traj, [1, 3])
    for (sa, oa), (sb, ob) in zip(a, b):
        assert sa.equals(sb)
        assert oa.depth == ob.depth and oa.seg == ob.seg


@pytest.mark.parametrize("gap,expected", [(1.0, False), (-0.2, True), (0.005, True), (0.02, False)])
def test_contact_examples(gap, expected):
    scene = two_cubes(gap)
    assert contacts(SimState.initial(scene), scene)[1, 2] is expected


def test_trajectory_validation():
    with pytest.raises(ConfigurationError):
        Trajectory(waypoints=(Pose6D.identity(),))
    with pytest.raises(ConfigurationError):
        Trajectory(velocities=[[0, 0, np.nan], [0, 0, 0]])
    t = Trajectory(waypoints=(Pose6D.identity(), Pose6D([1, 0, 0])))
    assert Trajectory.from_dict(t.to_dict()).equals(t)


def wall_scene():
    act = ObjectSpec(1, "pusher", TriMesh.box([0.05] * 3), Pose6D([-1, 0, 0]), actuator=True)
    box = ObjectSpec(2, "box", TriMesh.box([0.05] * 3), Pose6D([0, 0, 0]), target=True)
    wall = ObjectSpec(3, "wall", TriMesh.box([0.1, 0.5, 0.5]), Pose6D([0.2, 0, 0]), fixed=True)
    return SceneConfig((act, box, wall), small_camera(), (0, 0, 0))


def _launched(scene, speed):
    s = SimState.initial(scene)
    arrays = s.mutable_arrays()
    arrays[2][s.body_ids.index(2)] = [speed, 0, 0]
    return s.with_arrays(arrays, 0.0)


def test_no_tunneling_through_wall():
    scene = wall_scene()
    s = _launched(scene, scene.max_speed)
    for _ in range(100):
        s = step(s, scene.actuator.initial_pose, scene)
    # box right face must stay left of the wall's far face
    assert s.pose(2).position[0] + 0.025 < 0.25
    assert s.pose(2).position[0] <= 0.125 + 1e-3


def test_kinetic_energy_non_increasing_without_actuation_or_gravity():
    scene = wall_scene()
    s = _launched(scene, 0.8)
    prev = s.kinetic_energy(scene)
    for _ in range(60):
        s = step(s, scene.actuator.initial_pose, scene)
        e = s.kinetic_energy(scene)
        assert e <= prev + 1e-12
        prev = e


def test_contact_symmetry():
    scene = two_cubes(0.004)
    s = SimState.initial(scene)
    assert contacts(s, scene, [(1, 2)])[1, 2] == contacts(s, scene, [(2, 1)])[2, 1]
