"""End-to-end orchestration with cached, inspectable stages.

A run directory holds the artifacts shared by every variant of one
(task, provider, seed, noise) combination, plus one sub-directory per
variant::

    out/
      video/            selected guidance video (PNG frames) and meta.json
      bundle/           supervision bundle
      tracks.json       tracked actuator poses or hand keypoints
      init.json         initial trajectory
      full/             (or no-init/, no-contact/)
        trajectory.json
        cost_log.tsv
        result.json
        end.dpth  end.segm  end.png
        manifest.json

Ablation runs pointed at the same ``out`` with ``resume=True`` reuse the
shared perception artifacts instead of recomputing them.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .cma import CmaConfig
from .errors import ConfigurationError, VideoGuideError
from .geometry import Pose6D
from .imagination import (DEFAULT_CANDIDATES, GuidanceVideo, NoiseModel, OracleVerifier, OracleVideoProvider,
                          SelectionLog, VideoSample, VideoScore, rejection_sample, rewrite_prompt)
from .optimize import ABLATIONS, OptimizationResult, optimize_trajectory, read_log, tracked_init
from .perception import (AffordanceRegion, PoseTrack, Providers, background_depth, complete_depth,
                         detect_affordance, extract_contacts, select_keyframes, track_masks, track_poses)
from .render import rasterize
from .sim import SimState, Trajectory, segment_steps, simulate_timeline
from .supervision import CostWeights, SupervisionBundle, build_bundle
from .taskfile import Task, load_task

log = logging.getLogger(__name__)

STAGES = ("imagine", "perceive", "initialize", "optimize", "execute")
MANIFEST_VERSION = 1
ROLES = ("video", "verifier", "llm", "segmentation", "depth", "hand", "contacts")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


@dataclass
class RunManifest:
    task: str
    task_path: str
    variant: str
    providers: dict
    flags: dict
    seeds: dict = field(default_factory=dict)
    stages: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    checksums: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    selection: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    timestamps: dict = field(default_factory=dict)
    status: str = "running"
    error: dict | None = None
    root: str = ""
    version: int = MANIFEST_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    def without_timestamps(self) -> dict:
        """Everything except wall-clock data; equal across deterministic reruns."""
        d = self.to_dict()
        d.pop("timestamps")
        d.pop("root")
        return d

    def save(self, path: str | Path) -> None:
        _write_json(Path(path), self.to_dict())

    @classmethod
    def load(cls, path: str | Path) -> RunManifest:
        p = Path(path)
        if p.is_dir():
            p = p / "manifest.json"
        try:
            doc = json.loads(p.read_text())
        except FileNotFoundError:
            raise ConfigurationError(f"manifest not found: {p}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{p}: invalid manifest: {exc}") from None
        known = {f for f in cls.__dataclass_fields__}
        m = cls(**{k: v for k, v in doc.items() if k in known})
        if not m.root:
            m.root = str(p.parent)
        return m

    def path(self, key: str) -> Path | None:
        rel = self.artifacts.get(key)
        return None if rel is None else Path(self.root) / rel

    def missing_artifacts(self) -> list[str]:
        return [k for k in self.artifacts if not self.path(k).exists()]


class StageFailed(VideoGuideError):
    """Wraps an error raised inside a stage; ``exit_code`` follows the cause."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)


# ---------------------------------------------------------------------------
# providers


@dataclass
class ProviderSet:
    video: object
    verifier: object
    llm: object | None
    perception: Providers
    descriptors: dict

    @property
    def offline(self) -> bool:
        return all(d["kind"] == "oracle" for d in self.descriptors.values())


def build_providers(task: Task, kind: str, noise: float) -> ProviderSet:
    """Oracle providers for everything, or remote adapters where the task allows.

    In remote mode a task file may pin a role to ``{kind: oracle}``, or name
    the environment variable holding its URL with ``endpoint``.
    """
    from . import remote as R

    if kind not in ("oracle", "remote"):
        raise ConfigurationError(f"unknown provider {kind!r}; choose oracle or remote")
    scene = task.scene
    desc = {}
    for role in ROLES:
        d = dict(task.providers.get(role) or {})
        d["kind"] = "oracle" if kind == "oracle" else d.get("kind", "remote")
        if d["kind"] not in ("oracle", "remote"):
            raise ConfigurationError(f"provider {role}: unknown kind {d['kind']!r}")
        if d["kind"] == "remote":
            d.setdefault("endpoint", R.ENDPOINTS[R.ROLE_SERVICE[role]])
        desc[role] = d
    noise_model = NoiseModel(noise)
    desc["video"]["noise"] = noise_model.to_dict() if desc["video"]["kind"] == "oracle" else None
    if desc["video"]["kind"] == "remote" and any(desc[r]["kind"] == "oracle" for r in ROLES[1:] if r != "llm"):
        raise ConfigurationError("oracle perception needs oracle video; make every role remote")
    oracle = Providers.oracle(scene)
    remote = {"video": R.RemoteVideoProvider, "verifier": R.RemoteVerifier, "llm": R.RemoteLanguageModel,
              "segmentation": R.RemoteSegmenter, "depth": R.RemoteDepth, "hand": R.RemoteHand,
              "contacts": R.RemoteContacts}
    local = {"video": lambda: OracleVideoProvider(scene, task.script(), noise_model, task.segment_duration),
             "verifier": OracleVerifier, "llm": lambda: None, "segmentation": lambda: oracle.segmentation,
             "depth": lambda: oracle.depth, "hand": lambda: oracle.hand, "contacts": lambda: oracle.contacts}
    made = {}
    for role, d in desc.items():
        if d["kind"] == "oracle":
            made[role] = local[role]()
        else:
            client = R.JsonClient.from_env(R.ROLE_SERVICE[role], var=d["endpoint"])
            made[role] = remote[role](client)
    return ProviderSet(made["video"], made["verifier"], made["llm"],
                       Providers(made["segmentation"], made["depth"], made["hand"], made["contacts"]), desc)


# ---------------------------------------------------------------------------
# video artifacts


def _save_png(path: Path, rgb: np.ndarray) -> None:
    import matplotlib.image as mpimg

    mpimg.imsave(path, np.asarray(rgb, np.uint8))


def _load_png(path: Path) -> np.ndarray:
    import matplotlib.image as mpimg

    a = mpimg.imread(path)
    if a.dtype != np.uint8:
        a = np.round(a * 255).astype(np.uint8)
    return a[..., :3]


def save_video(video: GuidanceVideo, directory: Path, selection: SelectionLog) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(video.sample.frames):
        _save_png(directory / f"frame_{i:03d}.png", f)
    _write_json(directory / "meta.json", {
        "prompt": video.sample.prompt, "provider": video.sample.provider, "seed": video.sample.seed,
        "index": video.sample.index, "frames": len(video.sample),
        "score": video.score.to_dict(), "keyframes": list(video.keyframes), "start": video.start,
        "end": video.end, "selection": selection.rounds})


def load_video(directory: Path) -> GuidanceVideo:
    meta = json.loads((directory / "meta.json").read_text())
    frames = tuple(_load_png(directory / f"frame_{i:03d}.png") for i in range(meta["frames"]))
    s = meta["score"]
    score = VideoScore(s["total"], s.get("match_description"), s.get("hand_motion"), s.get("goal_reached"),
                       s.get("new_object_detected", False))
    sample = VideoSample(frames, meta["prompt"], meta["provider"], meta["seed"], meta["index"])
    return GuidanceVideo(sample, score, tuple(meta["keyframes"]), meta["start"], meta["end"])


# ---------------------------------------------------------------------------
# stages


@dataclass
class Perception:
    """Outputs of the imagine and perceive stages that later stages consume."""

    bundle: SupervisionBundle
    poses: PoseTrack | None
    keypoints: np.ndarray | None


def imagine(task: Task, providers: ProviderSet, seed: int, n: int = DEFAULT_CANDIDATES):
    scene = task.scene
    prompt = rewrite_prompt(task.description, scene, providers.llm)
    init = rasterize(SimState.initial(scene), scene, color=True)
    selection = SelectionLog()
    video = rejection_sample(providers.video, providers.verifier, prompt, task.description, init, n=n, seed=seed,
                             log=selection)
    stride = None
    if isinstance(providers.video, OracleVideoProvider):
        stride = providers.video.script.stride
    video = select_keyframes(video, providers.verifier, stride=stride)
    return video, init, selection


def perceive(task: Task, video: GuidanceVideo, init, providers: ProviderSet, seed: int) -> Perception:
    scene = task.scene
    p = providers.perception
    masks = track_masks(video, init, scene, p.segmentation, seed=seed)
    depths = complete_depth(video, masks, background_depth(scene), p.depth)
    kfs = video.retained
    schedule = extract_contacts(video, scene, p.contacts, kfs)
    act = scene.actuator
    poses = keypoints = None
    if act.is_rigid:
        tips = p.hand.fingertips(video, video.start, scene.camera)
        aff = detect_affordance(video.start, masks[act.id].masks[video.start], depths.frames[video.start],
                                scene.camera, tips)
        poses = track_poses(video, masks, depths, scene, objects=[act.id], seed=seed)[act.id]
    else:
        aff = AffordanceRegion.empty(video.start)
        keypoints = np.asarray(p.hand.keypoints_3d(video, kfs), float)
    return Perception(build_bundle(scene, kfs, masks, depths, schedule, aff), poses, keypoints)


def _save_tracks(path: Path, per: Perception) -> None:
    doc = {}
    if per.poses is not None:
        doc["poses"] = {"object_id": per.poses.object_id, "keyframes": list(per.poses.keyframes),
                        "poses": [p.as_list() for p in per.poses.poses],
                        "residuals": [float(r) for r in per.poses.residuals],
                        "reliable": [bool(r) for r in per.poses.reliable]}
    if per.keypoints is not None:
        doc["keypoints"] = per.keypoints.tolist()
    _write_json(path, doc)


def _load_tracks(path: Path) -> tuple[PoseTrack | None, np.ndarray | None]:
    doc = json.loads(path.read_text())
    poses = None
    if "poses" in doc:
        d = doc["poses"]
        poses = PoseTrack(d["object_id"], tuple(d["keyframes"]), tuple(Pose6D.from_list(p) for p in d["poses"]),
                          tuple(d["residuals"]), tuple(d["reliable"]))
    kp = np.asarray(doc["keypoints"], float) if "keypoints" in doc else None
    return poses, kp


def execute(task: Task, traj: Trajectory) -> SimState:
    """State at the end of the last waypoint segment."""
    nseg = segment_steps(task.scene, traj.segment_duration)
    return simulate_timeline(task.scene, traj, [len(traj) * nseg])[-1]


# ---------------------------------------------------------------------------
# run


class _Runner:
    def __init__(self, manifest: RunManifest, out: Path, variant_dir: Path, resume: bool):
        self.m = manifest
        self.out = out
        self.vdir = variant_dir
        self.resume = resume

    def rel(self, p: Path) -> str:
        return str(Path(p).relative_to(self.out))

    def record(self, key: str, p: Path, checksum: bool = False) -> None:
        self.m.artifacts[key] = self.rel(p)
        if checksum:
            self.m.checksums[key] = _sha256(p)

    def stage(self, name: str, outputs: list[Path], fn: Callable):
        """Run ``fn`` unless resuming with every output already present."""
        cached = self.resume and outputs and all(p.exists() for p in outputs)
        self.m.timestamps[f"{name}_started"] = _now()
        t0 = time.perf_counter()
        try:
            value = fn(cached)
        except Exception as exc:
            self.m.stages[name] = {"status": "failed", "cached": bool(cached)}
            self.m.error = {"stage": name, "type": type(exc).__name__, "message": str(exc)}
            self.m.status = "failed"
            self.m.timestamps[f"{name}_seconds"] = round(time.perf_counter() - t0, 3)
            self.m.save(self.vdir / "manifest.json")
            raise StageFailed(name, exc) from exc
        self.m.stages[name] = {"status": "cached" if cached else "done", "cached": bool(cached)}
        self.m.timestamps[f"{name}_seconds"] = round(time.perf_counter() - t0, 3)
        log.info("stage %s %s", name, "reused" if cached else "done")
        return value


def run(task: str | Path | Task, provider: str = "oracle", seed: int = 0, out: str | Path = "runs/run",
        resume: bool = False, jobs: int = 1, ablate: str | None = None, noise: float = 1.0,
        population: int = 128, iterations: int = 5, candidates: int = DEFAULT_CANDIDATES,
        progress: Callable[[int, float], None] | None = None) -> RunManifest:
    """Imagine, perceive, initialize, optimize and execute one task; returns the saved manifest."""
    if ablate is not None and ablate not in ABLATIONS:
        raise ConfigurationError(f"unknown ablation {ablate!r}; choose from {ABLATIONS}")
    if noise < 0:
        raise ConfigurationError("noise level must be non-negative")
    if not isinstance(task, Task):
        task = load_task(task)
    providers = build_providers(task, provider, noise)
    out = Path(out)
    variant = ablate or "full"
    vdir = out / variant
    vdir.mkdir(parents=True, exist_ok=True)
    weights = CostWeights.from_dict(task.weights)
    if ablate == "no-contact":
        weights = weights.without_contact()
    m = RunManifest(task.name, str(task.path) if task.path else "", variant, providers.descriptors,
                    {"provider": provider, "seed": seed, "resume": resume, "jobs": jobs, "ablate": ablate,
                     "noise": noise, "population": population, "iterations": iterations,
                     "candidates": candidates},
                    seeds={"video": seed, "prompts": seed, "poses": seed, "cma": seed},
                    weights=weights.to_dict(), root=str(out))
    m.timestamps["created"] = _now()
    r = _Runner(m, out, vdir, resume)
    scene = task.scene
    video_dir, bundle_dir = out / "video", out / "bundle"
    tracks_path, init_path = out / "tracks.json", out / "init.json"
    state: dict = {}

    def get_video():
        # oracle perception needs the in-memory ground truth, so regenerate (deterministically)
        if "video" not in state:
            if r.resume and (video_dir / "meta.json").exists() and not isinstance(providers.video,
                                                                                   OracleVideoProvider):
                state["video"] = load_video(video_dir)
                state["init"] = rasterize(SimState.initial(scene), scene, color=True)
            else:
                state["video"], state["init"], sel = imagine(task, providers, seed, candidates)
                state["selection"] = sel
        return state["video"]

    def s_imagine(cached):
        if not cached:
            get_video()
            save_video(state["video"], video_dir, state["selection"])
        meta = json.loads((video_dir / "meta.json").read_text())
        m.selection = meta["selection"]
        m.seeds["selected_sample"] = meta["seed"]
        m.metrics["video_score"] = meta["score"]["total"]
        m.metrics["rejected_videos"] = sum(1 for rd in meta["selection"] for s in rd if s["total"] <= 12)
        m.metrics["keyframes"] = [k for k in meta["keyframes"] if meta["start"] <= k <= meta["end"]]
        r.record("video", video_dir)
        r.record("video_meta", video_dir / "meta.json", checksum=True)

    r.stage("imagine", [video_dir / "meta.json"], s_imagine)

    def s_perceive(cached):
        if cached:
            bundle = SupervisionBundle.load(bundle_dir)
        else:
            per = perceive(task, get_video(), state["init"], providers, seed)
            per.bundle.save(bundle_dir)
            _save_tracks(tracks_path, per)
            bundle = per.bundle
        r.record("bundle", bundle_dir)
        r.record("bundle_meta", bundle_dir / "bundle.json", checksum=True)
        r.record("tracks", tracks_path, checksum=True)
        return bundle

    bundle = r.stage("perceive", [bundle_dir / "bundle.json", tracks_path], s_perceive)

    def s_initialize(cached):
        if not cached:
            poses, kp = _load_tracks(tracks_path)
            traj = tracked_init(scene, task.segment_duration, poses=poses, keypoints=kp)
            _write_json(init_path, traj.to_dict())
        r.record("init", init_path, checksum=True)
        return Trajectory.from_dict(json.loads(init_path.read_text()))

    init = r.stage("initialize", [init_path], s_initialize)

    traj_path, log_path, res_path = vdir / "trajectory.json", vdir / "cost_log.tsv", vdir / "result.json"

    def s_optimize(cached):
        if not cached:
            res = optimize_trajectory(scene, bundle, init, weights, CmaConfig(population, iterations, seed=seed),
                                      task.segment_duration, ablate=ablate, jobs=jobs, progress=progress)
            _write_json(traj_path, res.trajectory.to_dict())
            res.write_log(log_path)
            _write_json(res_path, _result_doc(res))
        r.record("trajectory", traj_path, checksum=True)
        r.record("cost_log", log_path, checksum=True)
        r.record("result", res_path)
        doc = json.loads(res_path.read_text())
        m.metrics.update({"cost": doc["cost"], "init_cost": doc["init_cost"], "terms": doc["terms"],
                          "evaluations": doc["evaluations"], "diverged": doc["diverged"]})
        return Trajectory.from_dict(json.loads(traj_path.read_text()))

    traj = r.stage("optimize", [traj_path, log_path, res_path], s_optimize)

    end = {"depth": vdir / "end.dpth", "seg": vdir / "end.segm", "color": vdir / "end.png"}

    def s_execute(cached):
        final = execute(task, traj)
        if not cached:
            obs = rasterize(final, scene, color=True)
            obs.depth.save(end["depth"])
            obs.seg.save(end["seg"])
            _save_png(end["color"], obs.color)
        for k, p in end.items():
            r.record(f"end_{k}", p)
        if task.success is not None:
            ok, metric = task.success.evaluate(final, scene)
            m.metrics["success"] = bool(ok)
            m.metrics["success_metric"] = float(metric)
            m.metrics["success_kind"] = task.success.kind

    r.stage("execute", list(end.values()), s_execute)
    m.status = "complete"
    m.timestamps["finished"] = _now()
    m.save(vdir / "manifest.json")
    return m


def _result_doc(res: OptimizationResult) -> dict:
    return {"cost": res.cost, "init_cost": res.init_cost,
            "terms": res.terms.to_dict() if res.terms else None,
            "evaluations": res.evaluations, "diverged": sum(r.diverged for r in res.history),
            "best_per_iteration": res.best_per_iteration}


# ---------------------------------------------------------------------------
# report


TERMS = ("act_iou", "tar_iou", "act_cd", "tar_cd", "contact")


def _fmt(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.4g}"
    return str(v)


def report(manifests, out: str | Path | None = None) -> str:
    """Text summary of one or more runs, plus plots written under ``out``.

    Missing stages or artifacts are listed as gaps rather than raising.
    """
    ms = [m if isinstance(m, RunManifest) else RunManifest.load(m) for m in
          (manifests if isinstance(manifests, (list, tuple)) else [manifests])]
    if not ms:
        raise ConfigurationError("report needs at least one manifest")
    out = Path(out) if out is not None else Path(ms[0].root) / ms[0].variant / "report"
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, m in enumerate(ms):
        name = f"{m.task}/{m.variant}"
        lines.append(f"== run {i + 1}: {name} (seed {m.flags.get('seed')}, provider {m.flags.get('provider')}, "
                     f"noise {m.flags.get('noise')}) status {m.status}")
        gaps = [s for s in STAGES if m.stages.get(s, {}).get("status") not in ("done", "cached")]
        gaps += [f"artifact {k}" for k in m.missing_artifacts()]
        if m.error:
            lines.append(f"   error in stage {m.error['stage']}: {m.error['type']}: {m.error['message']}")
        if gaps:
            lines.append(f"   GAPS: {', '.join(gaps)}")
        sel = m.selection or []
        scores = [s["total"] for rd in sel for s in rd]
        lines.append(f"   videos scored {scores}; rejected {sum(1 for s in scores if s <= 12)}")
        mt = m.metrics
        lines.append(f"   cost {_fmt(mt.get('cost'))} (init {_fmt(mt.get('init_cost'))}) over "
                     f"{_fmt(mt.get('evaluations'))} rollouts, {_fmt(mt.get('diverged'))} diverged")
        terms = mt.get("terms") or {}
        w = m.weights
        for t in TERMS:
            lines.append(f"     {t:8s} {_fmt(terms.get(t))}  (weight {_fmt(w.get('w_' + t))})")
        lines.append(f"   success {_fmt(mt.get('success'))} ({mt.get('success_kind', 'no predicate')} "
                     f"{_fmt(mt.get('success_metric'))})")
        tag = f"{i + 1}_{m.task}_{m.variant}"
        lines += _plots(m, out, tag)
    if len(ms) > 1:
        lines.append("")
        lines.append(comparison_table(ms))
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text)
    return text


def comparison_table(ms) -> str:
    cols = [f"{m.task}/{m.variant}/s{m.flags.get('seed')}" for m in ms]
    rows = [("cost", "cost"), ("init cost", "init_cost"), ("success", "success"),
            ("metric", "success_metric"), ("video score", "video_score"), ("rejected", "rejected_videos")]
    width = max(12, *(len(c) for c in cols))
    head = "metric".ljust(12) + "".join(c.rjust(width + 2) for c in cols)
    body = [head, "-" * len(head)]
    for label, key in rows:
        body.append(label.ljust(12) + "".join(_fmt(m.metrics.get(key)).rjust(width + 2) for m in ms))
    for t in TERMS:
        body.append(t.ljust(12) + "".join(_fmt((m.metrics.get("terms") or {}).get(t)).rjust(width + 2)
                                          for m in ms))
    return "\n".join(body)


def _plots(m: RunManifest, out: Path, tag: str) -> list[str]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .geometry import DepthMap, SegMask

    notes = []
    log_path = m.path("cost_log")
    if log_path is not None and log_path.exists():
        rows = read_log(log_path)
        cost = np.array([r["cost"] for r in rows])
        fig, ax = plt.subplots(1, 2, figsize=(10, 3.5))
        ax[0].plot(cost, ".", ms=2, alpha=0.4, label="candidate")
        ax[0].plot(np.minimum.accumulate(cost), "-", label="best so far")
        ax[0].set_xlabel("evaluation")
        ax[0].set_ylabel("cost")
        ax[0].legend()
        best = int(np.argmin(cost))
        vals = [rows[best][t] for t in TERMS]
        ax[1].bar(TERMS, [0 if math.isnan(v) else v for v in vals])
        ax[1].set_title("terms of the best rollout")
        fig.tight_layout()
        fig.savefig(out / f"{tag}_cost.png", dpi=100)
        plt.close(fig)
        notes.append(f"   plot {out / f'{tag}_cost.png'}")
    else:
        notes.append("   GAP: no cost log, cost plot skipped")
    dp, sp = m.path("end_depth"), m.path("end_seg")
    if dp is not None and sp is not None and dp.exists() and sp.exists():
        fig, ax = plt.subplots(1, 2, figsize=(8, 4))
        ax[0].imshow(DepthMap.load(dp).values, cmap="viridis")
        ax[0].set_title("end depth")
        ax[1].imshow(SegMask.load(sp).labels, cmap="tab10", interpolation="nearest")
        ax[1].set_title("end segmentation")
        for a in ax:
            a.axis("off")
        fig.tight_layout()
        fig.savefig(out / f"{tag}_end.png", dpi=100)
        plt.close(fig)
        notes.append(f"   plot {out / f'{tag}_end.png'}")
    else:
        notes.append("   GAP: no end frame")
    return notes
