"""Waypoint trajectory optimization with CMA-ES.

The search vector is an increment about an initialization trajectory:
per rigid waypoint three position and three axis-angle coordinates, per
particle segment three velocity coordinates.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .cma import CmaConfig, CmaState, cma_ask, cma_init, cma_tell
from .errors import ConfigurationError, OptimizationFailed, SimulationDiverged
from .geometry import Pose6D, quat_conj, quat_from_rotvec, quat_mul, quat_to_rotvec
from .perception import PoseTrack
from .sim import SceneConfig, SimState, Trajectory, _advance, segment_steps
from .supervision import CostBreakdown, CostWeights, SupervisionBundle, cost_terms, simulate

log = logging.getLogger(__name__)

SIGMA_POSITION = 0.02
SIGMA_ROTATION = math.radians(5.0)
SIGMA_VELOCITY = 0.05
DIVERGED_COST = 10.0
ABLATIONS = ("no-init", "no-contact")

__all__ = ["Trajectory", "TrajectoryCodec", "CmaConfig", "CmaState", "cma_ask", "cma_tell", "inverse_pd",
           "particle_init", "zero_init", "tracked_init", "EvalRecord", "OptimizationResult", "evaluate",
           "optimize_trajectory", "DIVERGED_COST"]


# ---------------------------------------------------------------------------
# encoding


@dataclass(frozen=True, eq=False)
class TrajectoryCodec:
    """Maps trajectories to increments about ``base`` and back."""

    base: Trajectory

    @property
    def per_waypoint(self) -> int:
        return 3 if self.base.is_particle else 6

    @property
    def dim(self) -> int:
        return self.per_waypoint * len(self.base)

    def sigma0(self) -> np.ndarray:
        if self.base.is_particle:
            return np.full(self.dim, SIGMA_VELOCITY)
        block = [SIGMA_POSITION] * 3 + [SIGMA_ROTATION] * 3
        return np.tile(block, len(self.base))

    def encode(self, traj: Trajectory) -> np.ndarray:
        if traj.is_particle != self.base.is_particle or len(traj) != len(self.base):
            raise ConfigurationError("trajectory shape differs from the codec's base trajectory")
        if traj.is_particle:
            return (traj.velocities - self.base.velocities).reshape(-1).copy()
        out = []
        for w, b in zip(traj.waypoints, self.base.waypoints):
            dq = quat_mul(w.orientation, quat_conj(b.orientation))
            out.append(np.concatenate([w.position - b.position, quat_to_rotvec(dq)]))
        return np.concatenate(out)

    def decode(self, x) -> Trajectory:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape != (self.dim,):
            raise ConfigurationError(f"search vector has {x.size} coordinates, expected {self.dim}")
        seg = self.base.segment_duration
        if self.base.is_particle:
            return Trajectory(velocities=self.base.velocities + x.reshape(-1, 3), segment_duration=seg)
        xs = x.reshape(-1, 6)
        wps = tuple(Pose6D(b.position + d[:3], quat_mul(quat_from_rotvec(d[3:]), b.orientation))
                    for b, d in zip(self.base.waypoints, xs))
        return Trajectory(waypoints=wps, segment_duration=seg)


# ---------------------------------------------------------------------------
# initialization


def zero_init(scene: SceneConfig, n: int, segment_duration: float) -> Trajectory:
    """No-motion initialization: hold the actuator's initial pose (or zero velocity)."""
    act = scene.actuator
    if act.is_rigid:
        return Trajectory(waypoints=(act.initial_pose,) * n, segment_duration=segment_duration)
    return Trajectory(velocities=np.zeros((n, 3)), segment_duration=segment_duration)


def inverse_pd(scene: SceneConfig, targets: Sequence[Pose6D], segment_duration: float,
               iterations: int = 40, patience: int = 3, max_offset: float = 0.05,
               max_angle: float = math.radians(30.0)) -> Trajectory:
    """Waypoints under which the simulated actuator ends each segment at ``targets``.

    The controller lags its command (speed limits, damping, contact
    loads), so commanding the observed poses directly would undershoot.
    Each segment solves ``w <- w + (target - reached(w))`` in the full
    scene, starting from the state the previous segment actually reached.
    Iteration stops once the error is zero or has not improved for
    ``patience`` rounds. Corrections are capped at ``max_offset`` /
    ``max_angle`` from the target so unreachable (e.g. penetrating)
    targets cannot run away.
    """
    act = scene.actuator
    if not act.is_rigid:
        raise ConfigurationError("inverse_pd needs a rigid actuator")
    nseg = segment_steps(scene, segment_duration)
    arrays = SimState.initial(scene).mutable_arrays()
    arr = scene.arrays
    b = int(np.flatnonzero(np.asarray(arr.body_ids) == act.id)[0])
    mode = arr.act_mode
    axis = np.asarray(arr.act_axis, dtype=np.float64)
    out = []
    for k, tgt in enumerate(targets):
        w, best, best_err, best_arrays = tgt, tgt, math.inf, None
        stale = 0
        for _ in range(iterations):
            trial = [a.copy() for a in arrays]
            try:
                _advance(scene, trial, w, nseg, k * nseg)
            except SimulationDiverged:
                break
            dp = tgt.position - trial[0][b]
            dr = quat_to_rotvec(quat_mul(tgt.orientation, quat_conj(trial[1][b])))
            # jointed actuators can only absorb the on-axis part of the error
            if mode == 1:
                dp, dr = axis * (dp @ axis), np.zeros(3)
            elif mode == 2:
                dp, dr = np.zeros(3), axis * (dr @ axis)
            err = float(np.linalg.norm(dp) + np.linalg.norm(dr))
            if err < best_err:
                best, best_err, best_arrays = w, err, trial
                stale = 0
            else:
                stale += 1
            if err == 0.0 or stale >= patience:
                break
            off = w.position + dp - tgt.position
            rot = quat_to_rotvec(quat_mul(quat_from_rotvec(dr), quat_mul(w.orientation, quat_conj(tgt.orientation))))
            n_off, n_rot = np.linalg.norm(off), np.linalg.norm(rot)
            if n_off > max_offset:
                off *= max_offset / n_off
            if n_rot > max_angle:
                rot *= max_angle / n_rot
            w = Pose6D(tgt.position + off, quat_mul(quat_from_rotvec(rot), tgt.orientation))
        if best_arrays is None:
            raise OptimizationFailed(f"simulation diverged while initializing segment {k}")
        out.append(best)
        arrays = best_arrays
    return Trajectory(waypoints=tuple(out), segment_duration=segment_duration)


def particle_init(scene: SceneConfig, keypoints: np.ndarray, segment_duration: float) -> Trajectory:
    """Velocities carrying the grasped particles along the hand keypoints, one per segment."""
    act = scene.actuator
    if act.is_rigid:
        raise ConfigurationError("particle_init needs a particle actuator")
    kp = np.asarray(keypoints, dtype=np.float64).reshape(-1, 3)
    start = act.initial_pose.apply(act.shape.particles[list(act.shape.actuated)]).mean(axis=0)
    pts = np.vstack([start, kp])
    return Trajectory(velocities=np.diff(pts, axis=0) / segment_duration, segment_duration=segment_duration)


def tracked_init(scene: SceneConfig, segment_duration: float, poses: PoseTrack | None = None,
                 keypoints: np.ndarray | None = None) -> Trajectory:
    """Initialization from perception: tracked actuator poses, or hand keypoints for particle actuators."""
    if scene.actuator.is_rigid:
        if poses is None:
            raise ConfigurationError("a rigid actuator needs a pose track for initialization")
        return inverse_pd(scene, poses.poses, segment_duration)
    if keypoints is None:
        raise ConfigurationError("a particle actuator needs hand keypoints for initialization")
    return particle_init(scene, keypoints, segment_duration)


# ---------------------------------------------------------------------------
# optimization


@dataclass(frozen=True)
class EvalRecord:
    iteration: int
    candidate: int
    cost: float
    terms: CostBreakdown | None  # None when the rollout diverged

    @property
    def diverged(self) -> bool:
        return self.terms is None


@dataclass
class OptimizationResult:
    trajectory: Trajectory
    cost: float
    terms: CostBreakdown | None
    init_cost: float
    history: list[EvalRecord] = field(default_factory=list)
    best_per_iteration: list[float] = field(default_factory=list)

    @property
    def evaluations(self) -> int:
        return len(self.history)

    def write_log(self, path: str | Path) -> None:
        """One tab-separated row per evaluation."""
        cols = ["act_iou", "tar_iou", "act_cd", "tar_cd", "contact"]
        with open(path, "w", newline="") as f:
            w = csv.writer(f, delimiter="\t", lineterminator="\n")
            w.writerow(["iteration", "candidate", "cost", *cols, "diverged"])
            for r in self.history:
                t = r.terms.to_dict() if r.terms else {}
                w.writerow([r.iteration, r.candidate, repr(r.cost), *[repr(t.get(c, math.nan)) for c in cols],
                            int(r.diverged)])


def read_log(path: str | Path) -> list[dict]:
    with open(path, newline="") as f:
        return [{k: float(v) if k not in ("iteration", "candidate", "diverged") else int(v) for k, v in row.items()}
                for row in csv.DictReader(f, delimiter="\t")]


def evaluate(scene: SceneConfig, traj: Trajectory, bundle: SupervisionBundle,
             weights: CostWeights) -> CostBreakdown | None:
    """Cost terms of one rollout, or None when the simulation diverged."""
    try:
        record = simulate(scene, traj, len(bundle.keyframes))
    except SimulationDiverged as exc:
        log.debug("rollout diverged: %s", exc)
        return None
    return cost_terms(record, bundle, scene, weights)


def optimize_trajectory(scene: SceneConfig, bundle: SupervisionBundle, init: Trajectory | None,
                        weights: CostWeights | None = None, config: CmaConfig | None = None,
                        segment_duration: float = 0.5, ablate: str | None = None, jobs: int = 1,
                        progress: Callable[[int, float], None] | None = None) -> OptimizationResult:
    """CMA-ES over waypoint increments; returns the best trajectory ever evaluated.

    ``init`` seeds the distribution mean and is evaluated as the first
    candidate of the first generation. ``ablate="no-init"`` replaces it by
    a motionless trajectory; ``ablate="no-contact"`` zeroes ``w_contact``.
    """
    weights = weights or CostWeights()
    config = config or CmaConfig()
    if ablate is not None and ablate not in ABLATIONS:
        raise ConfigurationError(f"unknown ablation {ablate!r}; choose from {ABLATIONS}")
    if jobs < 1:
        raise ConfigurationError("jobs must be at least 1")
    n = len(bundle.keyframes)
    if ablate == "no-init" or init is None:
        init = zero_init(scene, n, segment_duration)
    if ablate == "no-contact":
        weights = weights.without_contact()
    if len(init) != n:
        raise ConfigurationError(f"initialization has {len(init)} waypoints, supervision has {n} keyframes")

    codec = TrajectoryCodec(init)
    cfg = CmaConfig(config.population, config.iterations, tuple(codec.sigma0()), config.seed)
    state = cma_init(np.zeros(codec.dim), cfg)
    result = OptimizationResult(init, math.inf, None, math.nan)
    pool = ThreadPoolExecutor(max_workers=jobs) if jobs > 1 else None

    def run(x):
        try:
            traj = codec.decode(x)
        except ConfigurationError:
            return None, None
        return traj, evaluate(scene, traj, bundle, weights)

    try:
        for it in range(cfg.iterations):
            X = cma_ask(state, cfg)
            if it == 0:
                X[0] = 0.0
            outs = list(pool.map(run, X)) if pool else [run(x) for x in X]
            costs = []
            for i, (traj, terms) in enumerate(outs):
                c = terms.total if terms is not None else DIVERGED_COST
                costs.append(c)
                result.history.append(EvalRecord(it, i, c, terms))
                if it == 0 and i == 0:
                    result.init_cost = c
                if terms is not None and c < result.cost:
                    result.trajectory, result.cost, result.terms = traj, c, terms
            cma_tell(state, X, costs)
            result.best_per_iteration.append(result.cost)
            if progress:
                progress(it, result.cost)
    finally:
        if pool:
            pool.shutdown()
    if result.terms is None:
        raise OptimizationFailed("every candidate rollout diverged",
                                 {"evaluations": result.evaluations, "population": cfg.population,
                                  "iterations": cfg.iterations})
    return result
