"""Task files: YAML documents (``.task``) declaring a desk scene, the
waypoint schedule, cost weights and a ground-truth success predicate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from matplotlib.path import Path as PolyPath

from .errors import ConfigurationError
from .geometry import CameraModel, Pose6D, TriMesh
from .sim import COHESIVE_ELASTIC, FREE_GRANULAR, Joint, ObjectSpec, ParticleBlob, SceneConfig, SimState

TASK_DIR = Path(__file__).parent / "tasks"

DEFAULT_WEIGHTS = {"w_act_iou": 1.0, "w_tar_iou": 2.0, "w_act_cd": 5.0, "w_tar_cd": 10.0, "w_contact": 2.0}


def builtin_tasks() -> dict[str, Path]:
    return {p.stem.replace("_", "-"): p for p in sorted(TASK_DIR.glob("*.task"))}


def resolve_task(name_or_path: str | Path) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    tasks = builtin_tasks()
    key = p.stem.replace("_", "-") if p.suffix == ".task" else str(name_or_path)
    if key in tasks and p.parent == Path("."):
        return tasks[key]
    raise ConfigurationError(f"task file not found: {name_or_path}")


# ---------------------------------------------------------------------------
# success predicates


@dataclass(frozen=True)
class SuccessPredicate:
    kind: str
    params: dict

    def evaluate(self, state: SimState, scene: SceneConfig) -> tuple[bool, float]:
        """Return (success, metric). The metric's meaning depends on ``kind``."""
        p = self.params
        obj = scene.by_name(p["object"])
        if self.kind == "near-goal":
            pos = state.pose(obj.id).position
            d = float(np.linalg.norm(pos[:2] - np.asarray(p["goal"], float)[:2]))
            return d <= p["tolerance"], d
        if self.kind == "top-below":
            top = float(state.pose(obj.id).apply(obj.shape.vertices)[:, 2].max())
            return top <= p["height"], top
        if self.kind == "particles-in-box":
            pts = state.particles(obj.id)
            lo, hi = np.asarray(p["min"], float), np.asarray(p["max"], float)
            frac = float(np.mean(np.all((pts >= lo) & (pts <= hi), axis=1)))
            return frac >= p["fraction"], frac
        if self.kind == "band-encloses":
            ring = PolyPath(state.particles(obj.id)[:, :2])
            inside = [ring.contains_point(state.pose(scene.by_name(n).id).position[:2]) for n in p["posts"]]
            return all(inside), float(sum(inside))
        if self.kind == "hinge-angle":
            q0 = scene.object(obj.id).initial_pose
            rel = state.pose(obj.id).compose(q0.inverse())
            axis = np.asarray(obj.joint.axis if obj.joint else p["axis"], float)
            q = rel.orientation
            ang = 2.0 * math.atan2(float(q[1:] @ axis), float(q[0]))
            return math.degrees(ang) >= p["min_angle_deg"], math.degrees(ang)
        raise ConfigurationError(f"unknown success predicate {self.kind!r}")


# ---------------------------------------------------------------------------
# task


@dataclass(frozen=True, eq=False)
class Task:
    name: str
    description: str
    scene: SceneConfig
    segment_duration: float
    waypoints: int
    weights: dict
    success: SuccessPredicate | None
    script_path: Path | None
    path: Path | None = None
    providers: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def script(self):
        from .imagination import OracleScript

        if self.script_path is None:
            raise ConfigurationError(f"task {self.name!r} ships no oracle script")
        return OracleScript.load(self.script_path, self)


def _vec(v, n, what) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).reshape(-1)
    if a.shape != (n,) or not np.all(np.isfinite(a)):
        raise ConfigurationError(f"{what}: expected {n} finite numbers, got {v!r}")
    return a


def parse_pose(v) -> Pose6D:
    if v is None:
        return Pose6D.identity()
    if isinstance(v, dict):
        pos = _vec(v.get("position", [0, 0, 0]), 3, "position")
        if "rotvec_deg" in v:
            return Pose6D.from_rotvec(pos, np.radians(_vec(v["rotvec_deg"], 3, "rotvec_deg")))
        return Pose6D(pos, _vec(v.get("orientation", [1, 0, 0, 0]), 4, "orientation"))
    try:
        return Pose6D.from_list(v)
    except (ValueError, TypeError) as exc:
        raise ConfigurationError(f"bad pose {v!r}: {exc}") from None


def _mesh(d: dict, base: Path) -> TriMesh:
    if "box" in d:
        return TriMesh.box(_vec(d["box"], 3, "box"))
    if "boxes" in d:
        return TriMesh.boxes([(_vec(s, 3, "box size"), _vec(c, 3, "box center")) for s, c in d["boxes"]])
    path = base / d["mesh"]
    if not path.exists():
        raise ConfigurationError(f"mesh file not found: {path}")
    return TriMesh.load_obj(path)


def _blob(d: dict) -> ParticleBlob:
    r = float(d["radius"])
    if "grid" in d:
        g = d["grid"]
        counts = [int(c) for c in g["counts"]]
        sp = float(g.get("spacing", 2 * r))
        axes = [(np.arange(c) - (c - 1) / 2) * sp for c in counts]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
    elif "ring" in d:
        g = d["ring"]
        n = int(g["count"])
        th = 2 * np.pi * np.arange(n) / n
        pts = np.stack([g["radius"] * np.cos(th), g["radius"] * np.sin(th), np.zeros(n)], -1)
    elif "points" in d:
        pts = np.asarray(d["points"], float)
    else:
        raise ConfigurationError("blob needs one of grid, ring or points")
    return ParticleBlob(pts, r, d.get("behavior", FREE_GRANULAR), tuple(d.get("actuated", ())),
                        float(d.get("stiffness", 20.0)), float(d.get("damping", 0.05)),
                        int(d.get("neighbors", 2)))


def _object(d: dict, base: Path) -> ObjectSpec:
    try:
        shape = _blob(d["blob"]) if "blob" in d else _mesh(d, base)
        joint = None
        if "joint" in d:
            j = d["joint"]
            lim = j.get("limits", [-math.inf, math.inf])
            if j.get("limits_deg"):
                lim = np.radians(j["limits_deg"]).tolist()
            joint = Joint(j["kind"], tuple(_vec(j["axis"], 3, "joint axis")), (float(lim[0]), float(lim[1])),
                          tuple(_vec(j.get("pivot", [0, 0, 0]), 3, "joint pivot")))
        default_mass = 0.05 if "blob" in d else 0.1
        return ObjectSpec(int(d["id"]), str(d["name"]), shape, parse_pose(d.get("pose")),
                          foreground=bool(d.get("foreground", True)), actuator=bool(d.get("actuator", False)),
                          target=bool(d.get("target", False)), mass=float(d.get("mass", default_mass)),
                          fixed=bool(d.get("fixed", False)), joint=joint, hold=bool(d.get("hold", False)))
    except KeyError as exc:
        raise ConfigurationError(f"object entry missing field {exc}") from None


def _camera(d: dict) -> CameraModel:
    if "fx" in d:
        return CameraModel(d["fx"], d["fy"], d["cx"], d["cy"], int(d["width"]), int(d["height"]),
                           Pose6D.from_list(d.get("extrinsic", [0, 0, 0])))
    return CameraModel.look_at(d["eye"], d["target"], float(d.get("fov_deg", 50.0)),
                               int(d.get("width", 256)), int(d.get("height", 256)))


def parse_task(doc: dict, base: Path = Path("."), path: Path | None = None) -> Task:
    if not isinstance(doc, dict):
        raise ConfigurationError("task file must be a mapping")
    try:
        objects = tuple(_object(o, base) for o in doc["objects"])
        scene = SceneConfig(objects, _camera(doc["camera"]),
                            tuple(_vec(doc.get("gravity", [0, 0, -9.8]), 3, "gravity")),
                            float(doc.get("timestep", 0.01)), float(doc.get("contact_epsilon", 0.01)),
                            **{k: v for k, v in doc.get("solver", {}).items()})
        weights = dict(DEFAULT_WEIGHTS)
        for k, v in (doc.get("weights") or {}).items():
            if k not in weights:
                raise ConfigurationError(f"unknown cost weight {k!r}")
            weights[k] = float(v)
        succ = doc.get("success")
        success = SuccessPredicate(succ["kind"], {k: v for k, v in succ.items() if k != "kind"}) if succ else None
        script = base / doc["script"] if doc.get("script") else None
        return Task(str(doc["name"]), str(doc.get("description", "")), scene,
                    float(doc.get("segment_duration", 0.5)), int(doc.get("waypoints", 8)), weights, success,
                    script, path, dict(doc.get("providers") or {}), doc)
    except KeyError as exc:
        raise ConfigurationError(f"task file missing field {exc}") from None
    except TypeError as exc:
        raise ConfigurationError(f"malformed task file: {exc}") from None


def load_task(path: str | Path) -> Task:
    p = resolve_task(path)
    try:
        doc = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{p}: invalid YAML: {exc}") from None
    return parse_task(doc, p.parent, p)
