"""Supervision signals extracted from a guidance video, and the cost of a
simulated rollout against them."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, NoAffordance
from .geometry import CameraModel, PointCloud, Pose6D, SegMask, backproject, chamfer, mask_iou, quat_from_matrix
from .perception import AffordanceRegion, ContactSchedule, DepthTrack, MaskTrack
from .render import FrameObservation
from .sim import ContactMatrix, SceneConfig, SimState, Trajectory, contacts, rollout

D_MAX = 1.0


@dataclass(frozen=True)
class CostWeights:
    w_act_iou: float = 1.0
    w_tar_iou: float = 2.0
    w_act_cd: float = 5.0
    w_tar_cd: float = 10.0
    w_contact: float = 2.0

    def __post_init__(self):
        vals = [getattr(self, f.name) for f in fields(self)]
        if any(not math.isfinite(v) or v < 0 for v in vals):
            raise ConfigurationError("cost weights must be finite and non-negative")
        if not any(v > 0 for v in vals):
            raise ConfigurationError("at least one cost weight must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> CostWeights:
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown cost weights {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def scaled(self, factor: float) -> CostWeights:
        return CostWeights(**{k: v * factor for k, v in self.to_dict().items()})

    def without_contact(self) -> CostWeights:
        d = self.to_dict()
        d["w_contact"] = 0.0
        return CostWeights(**d)


@dataclass(frozen=True, eq=False)
class SupervisionBundle:
    """Everything the optimizer compares a rollout against.

    ``keyframes`` are the retained video frame indices; waypoint ``i`` of a
    trajectory ends at ``keyframes[i]``.
    """

    keyframes: tuple[int, ...]
    actuator_id: int
    target_id: int
    actuator_masks: tuple[np.ndarray, ...]
    target_mask: np.ndarray
    actuator_cloud: PointCloud
    target_cloud: PointCloud
    contacts: ContactSchedule
    affordance: AffordanceRegion

    def __post_init__(self):
        if len(self.keyframes) < 2:
            raise ConfigurationError("supervision needs at least two keyframes")
        if len(self.actuator_masks) != len(self.keyframes):
            raise ConfigurationError("actuator masks must cover every keyframe")
        if tuple(self.contacts.keyframes) != tuple(self.keyframes):
            raise ConfigurationError("contact schedule keyframes differ from the bundle keyframes")

    @property
    def end(self) -> int:
        return self.keyframes[-1]

    def without_contacts(self) -> SupervisionBundle:
        sched = ContactSchedule(self.contacts.keyframes,
                                tuple(ContactMatrix(m.pairs, np.zeros(len(m.pairs), bool))
                                      for m in self.contacts.matrices))
        return SupervisionBundle(self.keyframes, self.actuator_id, self.target_id, self.actuator_masks,
                                 self.target_mask, self.actuator_cloud, self.target_cloud, sched, self.affordance)

    # -- directory format --------------------------------------------------

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for k, m in zip(self.keyframes, self.actuator_masks):
            SegMask(m.astype(np.uint16) * np.uint16(self.actuator_id)).save(d / f"actuator_{k:04d}.segm")
        SegMask(self.target_mask.astype(np.uint16) * np.uint16(self.target_id)).save(d / "target_final.segm")
        self.actuator_cloud.save_xyz(d / "actuator_final.xyz")
        self.target_cloud.save_xyz(d / "target_final.xyz")
        meta = {
            "keyframes": list(self.keyframes),
            "actuator_id": self.actuator_id,
            "target_id": self.target_id,
            "contacts": {"pairs": [list(p) for p in self.contacts.pairs],
                         "table": self.contacts.table().astype(int).tolist()},
            "affordance": {"frame": self.affordance.frame, "pixels": self.affordance.pixels.tolist(),
                           "points": self.affordance.points.tolist(),
                           "fingertips": np.asarray(self.affordance.fingertips).tolist(),
                           "camera_center": None if self.affordance.camera_center is None
                           else np.asarray(self.affordance.camera_center).tolist()},
        }
        (d / "bundle.json").write_text(json.dumps(meta, indent=1))

    @classmethod
    def load(cls, directory: str | Path) -> SupervisionBundle:
        d = Path(directory)
        meta_path = d / "bundle.json"
        if not meta_path.exists():
            raise ConfigurationError(f"no supervision bundle in {d}")
        meta = json.loads(meta_path.read_text())
        kfs = tuple(int(k) for k in meta["keyframes"])
        act = tuple(SegMask.load(d / f"actuator_{k:04d}.segm").labels > 0 for k in kfs)
        tar = SegMask.load(d / "target_final.segm").labels > 0
        pairs = [tuple(p) for p in meta["contacts"]["pairs"]]
        table = np.asarray(meta["contacts"]["table"], bool).reshape(len(kfs), len(pairs))
        sched = ContactSchedule(kfs, tuple(ContactMatrix(pairs, row) for row in table))
        a = meta["affordance"]
        cc = a.get("camera_center")
        aff = AffordanceRegion(np.asarray(a["pixels"], np.int64).reshape(-1, 2),
                               np.asarray(a["points"], float).reshape(-1, 3),
                               np.asarray(a["fingertips"], float).reshape(-1, 2), int(a["frame"]),
                               None if cc is None else np.asarray(cc, float))
        return cls(kfs, int(meta["actuator_id"]), int(meta["target_id"]), act, tar,
                   PointCloud.load_xyz(d / "actuator_final.xyz"), PointCloud.load_xyz(d / "target_final.xyz"),
                   sched, aff)


def build_bundle(scene: SceneConfig, keyframes: Sequence[int], masks: dict[int, MaskTrack], depths: DepthTrack,
                 schedule: ContactSchedule, affordance: AffordanceRegion) -> SupervisionBundle:
    kfs = tuple(int(k) for k in keyframes)
    act, tar = scene.actuator, _target(scene)
    end = kfs[-1]
    cam = scene.camera
    return SupervisionBundle(
        kfs, act.id, tar.id,
        tuple(np.asarray(masks[act.id].masks[k], bool) for k in kfs),
        np.asarray(masks[tar.id].masks[end], bool),
        backproject(depths.frames[end], masks[act.id].masks[end], None, cam),
        backproject(depths.frames[end], masks[tar.id].masks[end], None, cam),
        schedule, affordance)


def _target(scene: SceneConfig):
    tars = scene.targets
    if not tars:
        raise ConfigurationError("scene declares no target object")
    return tars[0]


# ---------------------------------------------------------------------------
# rollouts and cost terms


@dataclass(frozen=True, eq=False)
class RolloutRecord:
    """Simulated states and renders at each keyframe of a bundle."""

    states: tuple[SimState, ...]
    observations: tuple[FrameObservation, ...]

    def __len__(self) -> int:
        return len(self.states)

    @property
    def final(self) -> FrameObservation:
        return self.observations[-1]


def simulate(scene: SceneConfig, traj: Trajectory, n_keyframes: int | None = None,
             camera: CameraModel | None = None) -> RolloutRecord:
    """Roll ``traj`` out and render the end of every segment."""
    n = len(traj) if n_keyframes is None else n_keyframes
    pairs = rollout(scene, traj, list(range(n)), camera=camera)
    return RolloutRecord(tuple(s for s, _ in pairs), tuple(o for _, o in pairs))


def _check(record: RolloutRecord, bundle: SupervisionBundle) -> None:
    if len(record) != len(bundle.keyframes):
        raise ConfigurationError(f"rollout has {len(record)} keyframes, supervision has {len(bundle.keyframes)}")


def actuator_mask_cost(record: RolloutRecord, bundle: SupervisionBundle) -> float:
    _check(record, bundle)
    return float(np.mean([1.0 - mask_iou(obs.seg.mask(bundle.actuator_id), m)
                          for obs, m in zip(record.observations, bundle.actuator_masks)]))


def target_mask_cost(final: FrameObservation, bundle: SupervisionBundle) -> float:
    return 1.0 - mask_iou(final.seg.mask(bundle.target_id), bundle.target_mask)


def pointcloud_cost(final: FrameObservation, bundle: SupervisionBundle, which: str) -> float:
    if which == "actuator":
        oid, ref = bundle.actuator_id, bundle.actuator_cloud
    elif which == "target":
        oid, ref = bundle.target_id, bundle.target_cloud
    else:
        raise ConfigurationError(f"which must be 'actuator' or 'target', got {which!r}")
    sim = backproject(final.depth, final.seg, oid, final.camera)
    if sim.is_empty or ref.is_empty:
        return D_MAX
    return chamfer(sim, ref)


def contact_cost(states: Sequence[SimState], schedule: ContactSchedule, scene: SceneConfig) -> float:
    """Fraction of required (keyframe, pair) contacts the rollout misses.

    Entries scheduled as no-contact never add cost.
    """
    if len(states) != len(schedule.keyframes):
        raise ConfigurationError("contact cost needs one state per scheduled keyframe")
    table = schedule.table()
    required = int(table.sum())
    missed = 0
    for state, row, mat in zip(states, table, schedule.matrices):
        if not row.any():
            continue
        sim = contacts(state, scene, mat.pairs).values
        missed += int(np.sum(row & ~sim))
    return missed / required if required else 0.0


@dataclass(frozen=True)
class CostBreakdown:
    act_iou: float
    tar_iou: float
    act_cd: float
    tar_cd: float
    contact: float
    total: float

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def cost_terms(record: RolloutRecord, bundle: SupervisionBundle, scene: SceneConfig,
               weights: CostWeights) -> CostBreakdown:
    _check(record, bundle)
    a = actuator_mask_cost(record, bundle) if weights.w_act_iou else 0.0
    t = target_mask_cost(record.final, bundle) if weights.w_tar_iou else 0.0
    ac = pointcloud_cost(record.final, bundle, "actuator") if weights.w_act_cd else 0.0
    tc = pointcloud_cost(record.final, bundle, "target") if weights.w_tar_cd else 0.0
    c = contact_cost(record.states, bundle.contacts, scene) if weights.w_contact else 0.0
    total = (weights.w_act_iou * a + weights.w_tar_iou * t + weights.w_act_cd * ac + weights.w_tar_cd * tc
             + weights.w_contact * c)
    return CostBreakdown(a, t, ac, tc, c, float(total))


def total_cost(record: RolloutRecord, bundle: SupervisionBundle, scene: SceneConfig,
               weights: CostWeights | None = None) -> float:
    return cost_terms(record, bundle, scene, weights or CostWeights()).total


# ---------------------------------------------------------------------------
# grasp sampling


def _frame_from_axis(z: np.ndarray) -> np.ndarray:
    z = z / np.linalg.norm(z)
    helper = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = np.cross(helper, z)
    x /= np.linalg.norm(x)
    return np.stack([x, np.cross(z, x), z], axis=1)


def sample_grasp(affordance: AffordanceRegion, rng: np.random.Generator | None = None,
                 neighbors: int = 12) -> Pose6D:
    """Grasp pose at a uniformly drawn region point; its z axis is the approach direction.

    The approach is the local surface normal (PCA over nearby region points)
    oriented away from the camera, i.e. into the surface. With fewer than
    three points the viewing ray is used.
    """
    if affordance.is_empty:
        raise NoAffordance("affordance region is empty; no grasp can be sampled")
    rng = rng or np.random.default_rng(0)
    pts = affordance.points
    p = pts[int(rng.integers(len(pts)))]
    view = p - (affordance.camera_center if affordance.camera_center is not None else np.zeros(3))
    if len(pts) >= 3:
        near = pts[np.argsort(np.linalg.norm(pts - p, axis=1))[:neighbors]]
        centered = near - near.mean(axis=0)
        _, s, vt = np.linalg.svd(centered, full_matrices=False)
        axis = vt[-1] if s[-1] < 0.5 * s[0] or len(near) < 3 else view
    else:
        axis = view
    if np.linalg.norm(axis) < 1e-12:
        axis = np.array([0.0, 0.0, -1.0])
    if axis @ view < 0:
        axis = -axis
    return Pose6D(p, quat_from_matrix(_frame_from_axis(np.asarray(axis, float))))
