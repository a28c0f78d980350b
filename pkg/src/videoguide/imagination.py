"""Guidance-video generation and vetting.

Providers produce candidate videos; a rubric verifier scores them out of
15 and rejection sampling keeps the best candidate scoring above 12. The
oracle provider renders scripted demonstrations from a task's ``.script``
file and corrupts them with a seeded noise model, so the whole pipeline
runs offline.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import yaml
from scipy import ndimage

from .errors import AllRejected, ConfigurationError, ProtocolError
from .geometry import DepthMap, Pose6D, SegMask, quat_from_rotvec, quat_mul
from .render import FrameObservation, colorize, rasterize
from .taskfile import parse_pose
from .sim import SceneConfig, SimState, Trajectory, contacts, segment_steps, simulate_timeline

ACCEPT_THRESHOLD = 12
DEFAULT_CANDIDATES = 4

RUBRIC = """You are grading a short video that should demonstrate a manipulation task.
Task description: {description}
Score three criteria:
  match_description: 2-6 points. Does the motion shown match the description?
  hand_motion: 1-3 points. Is the hand motion physically plausible and continuous?
  goal_reached: 2-6 points. Is the described goal visibly achieved by the last frame?
If any object that was not present in the first frame appears later, answer
"new_object: yes" and give the minimum score.
Finish with a single line "score: x/15" where x is the sum."""


# ---------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class VideoScore:
    """Rubric outcome. Component scores may be ``None`` when a remote verifier
    reports only the total."""

    total: int
    match_description: int | None = None
    hand_motion: int | None = None
    goal_reached: int | None = None
    new_object_detected: bool = False

    def __post_init__(self):
        if self.new_object_detected:
            object.__setattr__(self, "total", 5)
            object.__setattr__(self, "match_description", 2)
            object.__setattr__(self, "hand_motion", 1)
            object.__setattr__(self, "goal_reached", 2)
        parts = (self.match_description, self.hand_motion, self.goal_reached)
        if any(p is not None for p in parts):
            if any(p is None for p in parts):
                raise ProtocolError("partial rubric components")
            if not (2 <= self.match_description <= 6 and 1 <= self.hand_motion <= 3 and 2 <= self.goal_reached <= 6):
                raise ProtocolError(f"rubric component out of range: {parts}")
            if sum(parts) != self.total:
                raise ProtocolError(f"rubric components {parts} do not sum to {self.total}")
        if not 5 <= self.total <= 15:
            raise ProtocolError(f"rubric total {self.total} outside 5..15")

    @classmethod
    def from_components(cls, match: int, hand: int, goal: int, new_object: bool = False) -> VideoScore:
        return cls(match + hand + goal, match, hand, goal, new_object)

    @property
    def accepted(self) -> bool:
        return self.total > ACCEPT_THRESHOLD

    def to_dict(self) -> dict:
        return {"total": self.total, "match_description": self.match_description, "hand_motion": self.hand_motion,
                "goal_reached": self.goal_reached, "new_object_detected": self.new_object_detected}


@dataclass(frozen=True, eq=False)
class OracleTake:
    """Ground truth behind an oracle video: clean states and noisy observations."""

    variant: str
    labels: dict
    states: tuple[SimState, ...]
    depth: tuple[DepthMap, ...]
    labels_map: tuple[SegMask, ...]
    masks: dict  # object id -> tuple of bool arrays, one per frame
    actuator_poses: tuple  # per frame, the (jittered) actuator pose or blob keypoint
    start: int
    end: int
    fingertips: np.ndarray | None  # actuator-frame points, or None without a hand


@dataclass(frozen=True, eq=False)
class VideoSample:
    frames: tuple[np.ndarray, ...]
    prompt: str
    provider: str
    seed: int
    index: int = 0
    oracle: OracleTake | None = None

    def __post_init__(self):
        if len(self.frames) < 2:
            raise ConfigurationError("a video needs at least two frames")
        shapes = {f.shape for f in self.frames}
        if len(shapes) != 1:
            raise ConfigurationError("video frames must share one resolution")

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True, eq=False)
class GuidanceVideo:
    sample: VideoSample
    score: VideoScore
    keyframes: tuple[int, ...] | None = None
    start: int | None = None
    end: int | None = None

    def __post_init__(self):
        if not self.score.accepted:
            raise ConfigurationError("guidance video must score above the acceptance threshold")
        if self.keyframes is not None:
            if self.start is None or self.end is None or self.start > self.end:
                raise ConfigurationError("keyframe bounds must satisfy start <= end")
            if self.start not in self.keyframes or self.end not in self.keyframes:
                raise ConfigurationError("start and end must be keyframes")

    def with_keyframes(self, keyframes, start, end) -> GuidanceVideo:
        return GuidanceVideo(self.sample, self.score, tuple(keyframes), start, end)

    @property
    def retained(self) -> tuple[int, ...]:
        return tuple(k for k in self.keyframes if self.start <= k <= self.end)


# ---------------------------------------------------------------------------
# noise model


@dataclass(frozen=True)
class NoiseModel:
    """Seeded corruption applied to oracle renders; ``level`` scales every term."""

    level: float = 1.0
    depth_scale: float = 0.05
    mask_radius: float = 2.0
    position_sigma: float = 0.005
    rotation_sigma_deg: float = 2.0

    def __post_init__(self):
        if self.level < 0 or not math.isfinite(self.level):
            raise ConfigurationError("noise level must be finite and non-negative")

    @property
    def max_radius(self) -> int:
        return int(round(self.mask_radius * self.level))

    def to_dict(self) -> dict:
        return {"level": self.level, "depth_scale": self.depth_scale, "mask_radius": self.mask_radius,
                "position_sigma": self.position_sigma, "rotation_sigma_deg": self.rotation_sigma_deg}


def morph(mask: np.ndarray, radius: int, dilate: bool) -> np.ndarray:
    if radius <= 0 or not mask.any():
        return mask.copy()
    st = ndimage.generate_binary_structure(2, 1)
    op = ndimage.binary_dilation if dilate else ndimage.binary_erosion
    return op(mask, structure=st, iterations=radius)


def derive_seed(*parts) -> int:
    h = hashlib.sha256("/".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:4], "little")


# ---------------------------------------------------------------------------
# oracle scripts


@dataclass(frozen=True, eq=False)
class ScriptVariant:
    name: str
    labels: dict
    trajectory: Trajectory | None
    new_object: bool = False


@dataclass(frozen=True, eq=False)
class OracleScript:
    """Per-task demonstration script: waypoints, rubric labels and keyframe labels."""

    task_name: str
    frames: int
    stride: int
    start: int
    end: int
    variants: dict
    candidates: tuple[str, ...]
    fingertips: np.ndarray | None = None
    path: Path | None = None

    @classmethod
    def load(cls, path, task=None) -> OracleScript:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"oracle script not found: {path}")
        doc = yaml.safe_load(path.read_text())
        return cls.parse(doc, task, path)

    @classmethod
    def parse(cls, doc: dict, task=None, path=None) -> OracleScript:
        try:
            seg = task.segment_duration if task else float(doc.get("segment_duration", 0.5))
            variants = {}
            raw = doc["variants"]
            for name, v in raw.items():
                base = raw.get(v["base"], {}) if "base" in v else {}
                merged = {**base, **v}
                traj = None
                if "waypoints" in merged:
                    traj = Trajectory(waypoints=tuple(parse_pose(w) for w in merged["waypoints"]),
                                      segment_duration=seg)
                elif "velocities" in merged:
                    traj = Trajectory(velocities=np.asarray(merged["velocities"], float), segment_duration=seg)
                labels = dict(merged.get("labels", {}))
                if merged.get("new_object"):
                    labels["new_object"] = True
                variants[name] = ScriptVariant(name, labels, traj, bool(merged.get("new_object", False)))
            cands = tuple(doc.get("candidates", list(variants)))
            for c in cands:
                if c not in variants:
                    raise ConfigurationError(f"candidate {c!r} names no script variant")
            tips = doc.get("fingertips")
            return cls(doc.get("task", task.name if task else ""), int(doc["frames"]), int(doc["stride"]),
                       int(doc["start"]), int(doc["end"]), variants, cands,
                       None if tips is None else np.asarray(tips, float).reshape(-1, 3), path)
        except KeyError as exc:
            raise ConfigurationError(f"oracle script missing field {exc}") from None

    @property
    def success_variant(self) -> ScriptVariant:
        for v in self.variants.values():
            if v.labels.get("goal_reached") == 6 and not v.new_object:
                return v
        raise ConfigurationError("script declares no success variant")

    def frame_steps(self, scene: SceneConfig, segment_duration: float) -> list[int]:
        """Simulation step count at each video frame.

        The start keyframe coincides with the end of the first waypoint
        segment; frames before it are spread over that first segment.
        """
        nseg = segment_steps(scene, segment_duration)
        out = []
        for f in range(self.frames):
            t = max(((f - self.start) / self.stride + 1.0) * nseg, 0.0)
            out.append(int(round(t)))
        return out


def _jitter(pose: Pose6D, rng: np.random.Generator, noise: NoiseModel) -> Pose6D:
    dp = rng.normal(0.0, noise.position_sigma * noise.level, 3)
    dr = rng.normal(0.0, math.radians(noise.rotation_sigma_deg) * noise.level, 3)
    return Pose6D(pose.position + dp, quat_mul(quat_from_rotvec(dr), pose.orientation))


def render_take(scene: SceneConfig, script: OracleScript, variant: ScriptVariant, noise: NoiseModel, seed: int,
                segment_duration: float) -> tuple[OracleTake, list[np.ndarray]]:
    if variant.trajectory is None:
        raise ConfigurationError(f"script variant {variant.name!r} has no trajectory")
    traj = variant.trajectory
    steps = script.frame_steps(scene, segment_duration)
    states = simulate_timeline(scene, traj, steps)
    rng = np.random.default_rng(seed)
    act = scene.actuator
    fg = [o.id for o in scene.foreground]
    depth, seg, colors, poses = [], [], [], []
    masks = {oid: [] for oid in fg}
    for f, st in enumerate(states):
        shown = st
        if act.is_rigid:
            pose = st.pose(act.id)
            if noise.level > 0:
                pose = _jitter(pose, rng, noise)
                b = st.body_ids.index(act.id)
                pos, quat = np.array(st.pos), np.array(st.quat)
                pos[b], quat[b] = pose.position, pose.orientation
                shown = SimState(pos, quat, st.vel, st.angvel, st.ppos, st.pvel, st.time, st.body_ids,
                                 st.blob_slices)
            poses.append(pose)
        else:
            sl = st.blob_slices[act.id]
            ppos = np.array(st.ppos)
            if noise.level > 0:
                ppos[sl] += rng.normal(0.0, noise.position_sigma * noise.level, 3)
                shown = SimState(st.pos, st.quat, st.vel, st.angvel, ppos, st.pvel, st.time, st.body_ids,
                                 st.blob_slices)
            poses.append(ppos[sl][list(act.shape.actuated)].mean(axis=0))
        obs = rasterize(shown, scene, frame_index=f)
        d = obs.depth
        if noise.level > 0:
            eps = rng.uniform(-noise.depth_scale * noise.level, noise.depth_scale * noise.level)
            d = DepthMap((d.values * np.float32(1.0 + eps)).astype(np.float32), d.valid)
        for oid in fg:
            m = obs.seg.mask(oid)
            if noise.max_radius > 0:
                r = int(rng.integers(0, noise.max_radius + 1))
                m = morph(m, r, bool(rng.integers(0, 2)))
            masks[oid].append(m)
        depth.append(d)
        seg.append(obs.seg)
        colors.append(colorize(d, obs.seg))
    take = OracleTake(variant.name, dict(variant.labels), tuple(states), tuple(depth), tuple(seg),
                      {k: tuple(v) for k, v in masks.items()}, tuple(poses), script.start, script.end,
                      script.fingertips)
    return take, colors


# ---------------------------------------------------------------------------
# providers


class VideoProvider(Protocol):
    name: str
    concurrent: bool

    def generate(self, prompt: str, initial_frame: FrameObservation, n: int, seed: int) -> list[VideoSample]:
        ...


class Verifier(Protocol):
    def verify(self, sample: VideoSample, description: str) -> VideoScore:
        ...

    def keyframe_bounds(self, sample: VideoSample, keyframes: Sequence[int]) -> tuple[int, int]:
        ...


class LanguageModel(Protocol):
    def rewrite(self, description: str, scene: SceneConfig) -> str:
        ...


def _names(scene: SceneConfig) -> tuple[str, str]:
    act = scene.actuator.name.replace("_", " ")
    tars = ", ".join(o.name.replace("_", " ") for o in scene.targets)
    return act, tars


class TemplateLanguageModel:
    """Offline stand-in: deterministic template expansion."""

    def rewrite(self, description: str, scene: SceneConfig) -> str:
        act, tars = _names(scene)
        others = [o.name.replace("_", " ") for o in scene.foreground if not o.actuator and not o.target]
        extra = f" Other objects on the desk: {', '.join(others)}." if others else ""
        return (f"A fixed camera looks at a desk. A human hand grasps the {act} and uses it to act on "
                f"the {tars}. {description.strip()}{extra} The camera does not move and no new objects "
                f"enter the scene.")


def rewrite_prompt(task_description: str, scene: SceneConfig, model: LanguageModel | None = None) -> str:
    if not task_description or not task_description.strip():
        raise ConfigurationError("task description must be non-empty")
    return (model or TemplateLanguageModel()).rewrite(task_description, scene)


class OracleVideoProvider:
    """Renders scripted rollouts with seeded noise. Candidates cycle through
    the script's ``candidates`` list."""

    name = "oracle"
    concurrent = True

    def __init__(self, scene: SceneConfig, script: OracleScript, noise: NoiseModel | None = None,
                 segment_duration: float = 0.5):
        self.scene = scene
        self.script = script
        self.noise = noise or NoiseModel(0.0)
        self.segment_duration = segment_duration

    def generate(self, prompt: str, initial_frame: FrameObservation | None, n: int, seed: int = 0,
                 offset: int = 0) -> list[VideoSample]:
        if n < 1:
            raise ConfigurationError("n must be at least 1")
        out = []
        for i in range(offset, offset + n):
            name = self.script.candidates[i % len(self.script.candidates)]
            variant = self.script.variants[name]
            s = derive_seed("video", seed, i)
            take, colors = render_take(self.scene, self.script, variant, self.noise, s, self.segment_duration)
            out.append(VideoSample(tuple(colors), prompt, self.name, s, i, take))
        return out


class OracleVerifier:
    """Scores oracle samples from their script labels."""

    def verify(self, sample: VideoSample, description: str) -> VideoScore:
        if sample.oracle is None:
            raise ConfigurationError("oracle verifier needs oracle samples")
        lab = sample.oracle.labels
        variant_new = bool(lab.get("new_object", False))
        return VideoScore.from_components(int(lab.get("match_description", 2)), int(lab.get("hand_motion", 1)),
                                          int(lab.get("goal_reached", 2)), variant_new)

    def keyframe_bounds(self, sample: VideoSample, keyframes) -> tuple[int, int]:
        return sample.oracle.start, sample.oracle.end


_TOTAL = re.compile(r"(\d+)\s*/\s*15\b")
_PART = {"match_description": re.compile(r"match[_ ]description\D{0,20}?(\d)\s*/\s*6"),
         "hand_motion": re.compile(r"hand[_ ]motion\D{0,20}?(\d)\s*/\s*3"),
         "goal_reached": re.compile(r"goal[_ ]reached\D{0,20}?(\d)\s*/\s*6")}
_NEW = re.compile(r"new[_ ]object[^\n:]*:\s*(yes|true)", re.I)


def parse_rubric_reply(text: str) -> VideoScore:
    """Extract the final ``x/15`` total (and components when all three are present)."""
    if not isinstance(text, str):
        raise ProtocolError("verifier reply is not text", raw=repr(text))
    if _NEW.search(text):
        return VideoScore(5, new_object_detected=True)
    totals = _TOTAL.findall(text)
    if not totals:
        raise ProtocolError("verifier reply carries no x/15 score", raw=text)
    total = int(totals[-1])
    parts = {k: p.findall(text) for k, p in _PART.items()}
    try:
        if all(parts.values()):
            vals = {k: int(v[-1]) for k, v in parts.items()}
            if sum(vals.values()) == total:
                return VideoScore(total, **vals)
        return VideoScore(total)
    except ProtocolError as exc:
        raise ProtocolError(str(exc), raw=text) from None


def generate(provider: VideoProvider, prompt: str, initial_frame: FrameObservation, n: int = DEFAULT_CANDIDATES,
             seed: int = 0) -> list[VideoSample]:
    if n < 1:
        raise ConfigurationError("n must be at least 1")
    samples = provider.generate(prompt, initial_frame, n, seed)
    if len(samples) != n:
        raise ProtocolError(f"provider returned {len(samples)} samples, expected {n}")
    return samples


def verify(sample: VideoSample, description: str, verifier: Verifier) -> VideoScore:
    return verifier.verify(sample, description)


def select(scored: Sequence[tuple[VideoSample, VideoScore]]) -> GuidanceVideo:
    """Highest total above the threshold; ties go to the earliest generated."""
    if not scored:
        raise ConfigurationError("select needs at least one sample")
    best = None
    for sample, score in scored:
        if not score.accepted:
            continue
        if best is None or score.total > best[1].total:
            best = (sample, score)
    if best is None:
        scores = [s.total for _, s in scored]
        raise AllRejected(f"no candidate scored above {ACCEPT_THRESHOLD} (scores {scores}); sample more videos",
                          scores)
    return GuidanceVideo(*best)


@dataclass(frozen=True)
class VerifierMetrics:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int


def confusion_metrics(predicted: Sequence[bool], actual: Sequence[bool]) -> VerifierMetrics:
    p = np.asarray(predicted, bool)
    a = np.asarray(actual, bool)
    if p.size == 0 or p.shape != a.shape:
        raise ConfigurationError("need equally sized, non-empty label sets")
    tp = int(np.sum(p & a))
    fp = int(np.sum(p & ~a))
    fn = int(np.sum(~p & a))
    tn = int(np.sum(~p & ~a))
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return VerifierMetrics(prec, rec, f1, tp, fp, fn, tn)


def verifier_metrics(labeled: Sequence[tuple[VideoSample, bool]], verifier: Verifier,
                     description: str = "") -> VerifierMetrics:
    """Precision, recall and F1 of the accept decision against usability labels."""
    if not labeled:
        raise ConfigurationError("verifier_metrics needs a non-empty labeled set")
    pred = [verifier.verify(s, description).accepted for s, _ in labeled]
    return confusion_metrics(pred, [bool(u) for _, u in labeled])


@dataclass
class SelectionLog:
    rounds: list = field(default_factory=list)  # per round: list of score dicts

    @property
    def rejected(self) -> int:
        return sum(1 for r in self.rounds for s in r if s["total"] <= ACCEPT_THRESHOLD)


def rejection_sample(provider: VideoProvider, verifier: Verifier, prompt: str, description: str,
                     initial_frame: FrameObservation, n: int = DEFAULT_CANDIDATES, seed: int = 0,
                     max_rounds: int = 3, log: SelectionLog | None = None) -> GuidanceVideo:
    """Generate, verify and select, drawing fresh candidates while every one is rejected."""
    log = log if log is not None else SelectionLog()
    scored: list = []
    for r in range(max_rounds):
        if isinstance(provider, OracleVideoProvider):
            batch = provider.generate(prompt, initial_frame, n, seed, offset=r * n)
        else:
            batch = generate(provider, prompt, initial_frame, n, derive_seed(seed, r))
        round_scores = [(s, verifier.verify(s, description)) for s in batch]
        log.rounds.append([dict(sc.to_dict(), index=s.index) for s, sc in round_scores])
        scored.extend(round_scores)
        try:
            return select(scored)
        except AllRejected:
            continue
    return select(scored)


def contact_labels(take: OracleTake, scene: SceneConfig, frames: Sequence[int]) -> list:
    """Contact matrices of the clean script states at the given frames."""
    return [contacts(take.states[f], scene) for f in frames]
