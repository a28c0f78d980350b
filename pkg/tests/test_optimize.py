import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from videoguide.cma import CmaConfig
from videoguide.errors import ConfigurationError, OptimizationFailed
from videoguide.geometry import Pose6D
from videoguide.optimize import (DIVERGED_COST, TrajectoryCodec, evaluate, inverse_pd, optimize_trajectory,
                                 read_log, zero_init)
from videoguide.sim import Trajectory
from videoguide.supervision import CostWeights
from videoguide.taskfile import load_task

from test_supervision import oracle_bundle


@pytest.fixture(scope="module")
def push():
    task = load_task("push-box")
    return task, oracle_bundle(task)


def _rigid(n, rng):
    return Trajectory(waypoints=tuple(Pose6D.from_rotvec(rng.normal(size=3), rng.normal(size=3) * 0.5)
                                      for _ in range(n)))


def test_codec_dimension_and_zero():
    base = _rigid(8, np.random.default_rng(0))
    codec = TrajectoryCodec(base)
    assert codec.dim == 48
    back = codec.decode(np.zeros(48))
    assert all(a.translation_error(b) == 0 and a.rotation_error(b) < 1e-12
               for a, b in zip(back.waypoints, base.waypoints))
    parts = TrajectoryCodec(Trajectory(velocities=np.ones((7, 3))))
    assert parts.dim == 21 and np.array_equal(parts.decode(np.zeros(21)).velocities, np.ones((7, 3)))


@given(st.integers(0, 2 ** 32 - 1))
def test_codec_round_trip(seed):
    rng = np.random.default_rng(seed)
    base, other = _rigid(5, rng), _rigid(5, rng)
    codec = TrajectoryCodec(base)
    back = codec.decode(codec.encode(other))
    for a, b in zip(back.waypoints, other.waypoints):
        assert a.translation_error(b) < 1e-9 and a.rotation_error(b) < 1e-9
    x = rng.normal(size=codec.dim) * 0.3
    assert np.allclose(codec.encode(codec.decode(x)), x, atol=1e-9)


def test_codec_dimension_mismatch():
    codec = TrajectoryCodec(_rigid(3, np.random.default_rng(1)))
    with pytest.raises(ConfigurationError):
        codec.decode(np.zeros(17))
    with pytest.raises(ConfigurationError):
        codec.encode(_rigid(4, np.random.default_rng(2)))


def test_sigma0_blocks():
    s = TrajectoryCodec(_rigid(2, np.random.default_rng(0))).sigma0()
    assert np.allclose(s[:6], [0.02] * 3 + [math.radians(5)] * 3)
    assert np.allclose(TrajectoryCodec(Trajectory(velocities=np.zeros((2, 3)))).sigma0(), 0.05)


def test_full_budget_from_ground_truth(push, tmp_path):
    task, bundle = push
    gt = task.script().success_variant.trajectory
    res = optimize_trajectory(task.scene, bundle, gt, CostWeights(**task.weights), CmaConfig(128, 5, seed=3))
    assert res.evaluations == 640
    assert res.cost <= res.init_cost
    assert res.terms.act_iou <= 1e-6 and res.terms.tar_iou <= 1e-6
    assert all(b <= a for a, b in zip(res.best_per_iteration, res.best_per_iteration[1:]))
    res.write_log(tmp_path / "log.tsv")
    rows = read_log(tmp_path / "log.tsv")
    assert len(rows) == 640 and rows[0]["iteration"] == 0 and rows[0]["candidate"] == 0
    assert [r["cost"] for r in rows] == [h.cost for h in res.history]


def test_small_run_deterministic(push):
    task, bundle = push
    init = zero_init(task.scene, len(bundle.keyframes), task.segment_duration)
    runs = [optimize_trajectory(task.scene, bundle, init, config=CmaConfig(6, 2, seed=5)) for _ in range(2)]
    assert [h.cost for h in runs[0].history] == [h.cost for h in runs[1].history]
    assert np.array_equal(TrajectoryCodec(init).encode(runs[0].trajectory),
                          TrajectoryCodec(init).encode(runs[1].trajectory))


def test_ablation_modes(push):
    task, bundle = push
    gt = task.script().success_variant.trajectory
    noinit = optimize_trajectory(task.scene, bundle, gt, config=CmaConfig(4, 1), ablate="no-init")
    hold = zero_init(task.scene, len(bundle.keyframes), task.segment_duration)
    assert noinit.init_cost == evaluate(task.scene, hold, bundle, CostWeights()).total
    nocontact = optimize_trajectory(task.scene, bundle, gt, config=CmaConfig(4, 1), ablate="no-contact")
    assert nocontact.terms.contact == 0.0
    with pytest.raises(ConfigurationError):
        optimize_trajectory(task.scene, bundle, gt, config=CmaConfig(4, 1), ablate="no-bogus")


def test_wrong_waypoint_count(push):
    task, bundle = push
    with pytest.raises(ConfigurationError):
        optimize_trajectory(task.scene, bundle, zero_init(task.scene, 3, 0.5), config=CmaConfig(4, 1))


def test_all_diverged(push, monkeypatch):
    import videoguide.optimize as opt
    task, bundle = push
    monkeypatch.setattr(opt, "evaluate", lambda *a, **k: None)
    with pytest.raises(OptimizationFailed):
        optimize_trajectory(task.scene, bundle, None, config=CmaConfig(4, 2))
    assert DIVERGED_COST == 10.0


def test_inverse_pd_reaches_reachable_targets(push):
    task, _ = push
    gt = task.script().success_variant.trajectory
    from videoguide.supervision import simulate
    reached = [s.pose(task.scene.actuator.id) for s in simulate(task.scene, gt).states]
    init = inverse_pd(task.scene, reached, task.segment_duration)
    again = [s.pose(task.scene.actuator.id) for s in simulate(task.scene, init).states]
    assert max(a.translation_error(b) for a, b in zip(again, reached)) < 2e-3
