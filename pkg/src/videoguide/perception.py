"""Structured state from a guidance video: masks, completed depth, 6-DoF
poses by render-and-compare, keyframes, contact schedules and grasp
affordances."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy import ndimage
from scipy.optimize import least_squares

from .cma import CmaConfig, cma_ask, cma_init, cma_tell
from .errors import ConfigurationError, ProtocolError, TrackingLost
from .geometry import (CameraModel, DepthMap, PointCloud, Pose6D, SegMask, TriMesh, backproject,
                       backproject_pixels, mask_iou, project_points, quat_conj, quat_from_rotvec, quat_mul)
from .imagination import GuidanceVideo, derive_seed
from .render import FrameObservation, Roi, rasterize, render_mesh
from .sim import ContactMatrix, SceneConfig, SimState, contact_pairs, contacts

W_SIL = 1.0
W_DEPTH = 10.0  # per meter
POSE_SIGMA = (0.02, 0.02, 0.02, math.radians(10), math.radians(10), math.radians(10))
POSE_BUDGET = 400
POSE_STAGES = (1.0, 1 / 8, 1 / 64)  # CMA step scales; each stage gets an equal share of the budget
EMPTY_DEPTH_TERM = 1.0
OCCLUSION_FRACTION = 0.25
UNRELIABLE_LOSS = 0.1
CONVERGED = 1e-6  # float32 depth rounding leaves about 5e-7 at an exact fit
AFFORDANCE_RADIUS = 6  # px at 256x256
PROMPT_POINTS = 8


# ---------------------------------------------------------------------------
# tracks


@dataclass(frozen=True, eq=False)
class MaskTrack:
    object_id: int
    masks: tuple[np.ndarray, ...]

    def __len__(self) -> int:
        return len(self.masks)

    def area(self, f: int) -> int:
        return int(np.count_nonzero(self.masks[f]))


@dataclass(frozen=True, eq=False)
class DepthTrack:
    frames: tuple[DepthMap, ...]
    background: DepthMap

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True, eq=False)
class PoseTrack:
    object_id: int
    keyframes: tuple[int, ...]
    poses: tuple[Pose6D, ...]
    residuals: tuple[float, ...]
    reliable: tuple[bool, ...]

    def __post_init__(self):
        if any(not math.isfinite(r) or r < 0 for r in self.residuals):
            raise ConfigurationError("pose residuals must be finite and non-negative")

    def pose_at(self, keyframe: int) -> Pose6D:
        return self.poses[self.keyframes.index(keyframe)]


@dataclass(frozen=True, eq=False)
class ContactSchedule:
    keyframes: tuple[int, ...]
    matrices: tuple[ContactMatrix, ...]

    @property
    def pairs(self) -> tuple:
        return self.matrices[0].pairs if self.matrices else ()

    def table(self) -> np.ndarray:
        """(keyframes, pairs) boolean array."""
        if not self.matrices:
            return np.zeros((0, 0), bool)
        return np.stack([m.values for m in self.matrices])


@dataclass(frozen=True, eq=False)
class AffordanceRegion:
    pixels: np.ndarray  # (N, 2) rows, cols on the start keyframe
    points: np.ndarray  # (N, 3) world
    fingertips: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    frame: int = 0
    camera_center: np.ndarray | None = None

    @property
    def is_empty(self) -> bool:
        return len(self.pixels) == 0

    @classmethod
    def empty(cls, frame: int = 0) -> AffordanceRegion:
        return cls(np.zeros((0, 2), np.int64), np.zeros((0, 3)), np.zeros((0, 2)), frame)


# ---------------------------------------------------------------------------
# provider contracts


class SegmentationProvider(Protocol):
    def track(self, video: GuidanceVideo, prompts: dict[int, np.ndarray]) -> dict[int, list[np.ndarray]]:
        """Per object id, one boolean mask per frame, seeded by prompt pixels (rows, cols)."""


class DepthProvider(Protocol):
    def depth(self, video: GuidanceVideo) -> list[DepthMap]:
        ...


class HandProvider(Protocol):
    def fingertips(self, video: GuidanceVideo, frame: int, cam: CameraModel) -> np.ndarray:
        """(K, 2) fingertip pixels (u, v); empty when no hand is visible."""

    def keypoints_3d(self, video: GuidanceVideo, frames: Sequence[int]) -> np.ndarray:
        """(len(frames), 3) world position of the grasping hand."""


class ContactProvider(Protocol):
    def contacts(self, video: GuidanceVideo, frames: Sequence[int], scene: SceneConfig) -> list[ContactMatrix]:
        ...


def _take(video: GuidanceVideo):
    if video.sample.oracle is None:
        raise ConfigurationError("oracle providers need an oracle-generated video")
    return video.sample.oracle


class OracleSegmenter:
    def track(self, video, prompts):
        take = _take(video)
        out = {}
        for oid in prompts:
            if oid not in take.masks:
                raise ConfigurationError(f"object {oid} is not tracked by the oracle")
            out[oid] = list(take.masks[oid])
        return out


class OracleDepth:
    def depth(self, video):
        return list(_take(video).depth)


class OracleHand:
    def __init__(self, scene: SceneConfig):
        self.scene = scene

    def _points(self, take, f):
        act = self.scene.actuator
        if act.is_rigid:
            if take.fingertips is None:
                return np.zeros((0, 3))
            return take.actuator_poses[f].apply(take.fingertips)
        return np.asarray(take.actuator_poses[f], float).reshape(1, 3)

    def fingertips(self, video, frame, cam):
        take = _take(video)
        pts = self._points(take, frame)
        if len(pts) == 0:
            return np.zeros((0, 2))
        return project_points(pts, cam)[:, :2]

    def keypoints_3d(self, video, frames):
        take = _take(video)
        return np.array([self._points(take, f).mean(axis=0) for f in frames])


class OracleContacts:
    def contacts(self, video, frames, scene):
        take = _take(video)
        return [contacts(take.states[f], scene) for f in frames]


@dataclass
class Providers:
    segmentation: SegmentationProvider
    depth: DepthProvider
    hand: HandProvider
    contacts: ContactProvider

    @classmethod
    def oracle(cls, scene: SceneConfig) -> Providers:
        return cls(OracleSegmenter(), OracleDepth(), OracleHand(scene), OracleContacts())


# ---------------------------------------------------------------------------
# masks and depth


def prompt_points(mask: np.ndarray, n: int, seed: int) -> np.ndarray:
    rows, cols = np.nonzero(mask)
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(rows), size=min(n, len(rows)), replace=False)
    return np.stack([rows[idx], cols[idx]], axis=1)


def track_masks(video: GuidanceVideo, init: FrameObservation, scene: SceneConfig,
                provider: SegmentationProvider, seed: int = 0) -> dict[int, MaskTrack]:
    """Track every foreground object from prompts sampled inside its initial mask."""
    prompts = {}
    for o in scene.foreground:
        m = init.seg.mask(o.id)
        if not m.any():
            raise ConfigurationError(f"object {o.name!r} is absent from the initial segmentation")
        prompts[o.id] = prompt_points(m, PROMPT_POINTS, derive_seed("prompt", seed, o.id))
    raw = provider.track(video, prompts)
    n = len(video.sample)
    tracks = {}
    for oid, frames in raw.items():
        frames = [np.asarray(m, bool) for m in frames]
        if len(frames) != n:
            raise ProtocolError(f"mask track for object {oid} has {len(frames)} frames, expected {n}")
        tracks[oid] = MaskTrack(oid, tuple(frames))
    return tracks


def background_depth(scene: SceneConfig) -> DepthMap:
    """Initial-state render of background objects only."""
    state = SimState.initial(scene)
    return rasterize(state, scene, include=[o.id for o in scene.background]).depth


def depth_scale(depth: DepthMap, reference: DepthMap, exclude: np.ndarray, margin: int = 3) -> float:
    """Median ratio of ``depth`` to ``reference`` on pixels away from ``exclude``; 1.0 without support."""
    keep = ~ndimage.binary_dilation(exclude, iterations=margin) if margin else ~exclude
    keep &= depth.valid & reference.valid
    if keep.sum() < 16:
        return 1.0
    r = float(np.median(depth.values[keep].astype(np.float64) / reference.values[keep]))
    return r if np.isfinite(r) and r > 0 else 1.0


def complete_depth(video: GuidanceVideo, masks: dict[int, MaskTrack], init_background: DepthMap,
                   provider: DepthProvider, align: bool = True) -> DepthTrack:
    """Provider depth on foreground pixels; background pixels copied from the initial render.

    With ``align`` each frame is first rescaled so its visible background
    agrees with the known initial background depth.
    """
    frames = provider.depth(video)
    if len(frames) != len(video.sample):
        raise ProtocolError("depth provider returned the wrong number of frames")
    bg_vals, bg_valid = init_background.values, init_background.valid
    out = []
    for f, d in enumerate(frames):
        if d.shape != init_background.shape:
            raise ProtocolError("depth provider changed resolution")
        fg = np.zeros(d.shape, bool)
        for t in masks.values():
            fg |= t.masks[f]
        fg_vals = d.values
        if align:
            scale = depth_scale(d, init_background, fg)
            if scale != 1.0:
                fg_vals = (d.values / scale).astype(np.float32)
        vals = np.where(fg, fg_vals, bg_vals).astype(np.float32)
        valid = np.where(fg, d.valid, bg_valid)
        out.append(DepthMap(vals, valid))
    return DepthTrack(tuple(out), init_background)


# ---------------------------------------------------------------------------
# pose estimation


def _perturb(init: Pose6D, x: np.ndarray) -> Pose6D:
    return Pose6D(init.position + x[:3], quat_mul(quat_from_rotvec(x[3:6]), init.orientation))


class PoseObjective:
    """Silhouette plus depth alignment of one mesh against an observation.

    ``ignore`` marks pixels owned by other objects; they count for neither
    mask, so occluders do not bias the fit. ``background`` is the static
    background depth: rendered pixels behind it are hidden.
    """

    def __init__(self, shape: TriMesh, depth: DepthMap, mask: np.ndarray, cam: CameraModel,
                 ignore: np.ndarray | None = None, background: DepthMap | None = None, margin: int = 40,
                 w_sil: float = W_SIL, w_d: float = W_DEPTH):
        mask = np.asarray(mask, bool)
        if not mask.any():
            raise TrackingLost("observed mask is empty")
        self.shape, self.cam = shape, cam
        self.roi = Roi.around(mask, margin)
        rs, cs = self.roi.slices
        self.mask = mask[rs, cs]
        self.obs = depth.values[rs, cs].astype(np.float64)
        self.valid = depth.valid[rs, cs]
        self.keep = ~np.asarray(ignore, bool)[rs, cs] if ignore is not None else np.ones_like(self.mask)
        self.keep |= self.mask
        if background is not None:
            self.bg = np.where(background.valid[rs, cs], background.values[rs, cs].astype(np.float64), np.inf)
        else:
            self.bg = np.full(self.mask.shape, np.inf)
        self.w_sil, self.w_d = w_sil, w_d
        self.evaluations = 0

    def render(self, pose: Pose6D):
        d, m = render_mesh(self.shape, pose, self.cam, self.roi)
        return d, m & self.keep & (d < self.bg)

    def loss(self, pose: Pose6D) -> float:
        self.evaluations += 1
        d, m = self.render(pose)
        sil = 1.0 - mask_iou(m, self.mask)
        both = m & self.mask & self.valid
        dep = float(np.mean(np.abs(d[both] - self.obs[both]))) if both.any() else EMPTY_DEPTH_TERM
        return self.w_sil * sil + self.w_d * dep


def _centroid_shift(obj: PoseObjective, pose: Pose6D) -> np.ndarray | None:
    """Translation moving the rendered visible-surface centroid onto the observed one."""
    d, m = obj.render(pose)
    seen = obj.mask & obj.valid
    if not m.any() or not seen.any():
        return None
    r0, c0 = obj.roi.row0, obj.roi.col0
    rr, cc = np.nonzero(m)
    ro, co = np.nonzero(seen)
    a = backproject_pixels(rr + r0, cc + c0, d[rr, cc], obj.cam).mean(axis=0)
    b = backproject_pixels(ro + r0, co + c0, obj.obs[ro, co], obj.cam).mean(axis=0)
    return b - a


ICP_SAMPLES = 6000


def _surface_index(shape: TriMesh):
    """Dense area-weighted surface samples with face normals, cached on the mesh."""
    cached = shape.__dict__.get("_icp_index")
    if cached is None:
        from scipy.spatial import cKDTree

        v, t = shape.vertices, shape.triangles
        a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        cr = np.cross(b - a, c - a)
        area = 0.5 * np.linalg.norm(cr, axis=1)
        rng = np.random.default_rng(0)
        idx = rng.choice(len(t), size=ICP_SAMPLES, p=area / area.sum())
        r1, r2 = np.sqrt(rng.random(ICP_SAMPLES)), rng.random(ICP_SAMPLES)
        pts = ((1 - r1)[:, None] * a[idx] + (r1 * (1 - r2))[:, None] * b[idx] + (r1 * r2)[:, None] * c[idx])
        nrm = cr[idx] / np.maximum(np.linalg.norm(cr[idx], axis=1, keepdims=True), 1e-300)
        cached = (cKDTree(pts), pts, nrm)
        shape.__dict__["_icp_index"] = cached
    return cached


def _icp(obj: PoseObjective, pose: Pose6D, iters: int = 30) -> Pose6D:
    """Point-to-plane ICP of the observed surface points onto the mesh."""
    seen = obj.mask & obj.valid
    if np.count_nonzero(seen) < 12:
        return pose
    rr, cc = np.nonzero(seen)
    world = backproject_pixels(rr + obj.roi.row0, cc + obj.roi.col0, obj.obs[rr, cc], obj.cam)
    tree, samples, normals = _surface_index(obj.shape)
    inv = pose.inverse()
    local = inv.apply(world)
    G = Pose6D.identity()  # accumulated correction in the object frame
    for _ in range(iters):
        dist, j = tree.query(local)
        keep = dist <= max(3.0 * float(np.median(dist)), 1e-4)
        p, s_, n = local[keep], samples[j[keep]], normals[j[keep]]
        A = np.hstack([np.cross(p, n), n])
        b = -np.einsum("ij,ij->i", p - s_, n)
        x, *_ = np.linalg.lstsq(A, b, rcond=None)
        step = Pose6D(x[3:], quat_from_rotvec(x[:3]))
        G = step.compose(G)
        local = step.apply(local)
        if np.linalg.norm(x) < 1e-9:
            break
    # local = G(pose^-1(world)), so the refined pose is pose o G^-1
    return pose.compose(G.inverse())


def _polish(obj: PoseObjective, pose: Pose6D, miss: float = 0.05, reg: float = 1e-3) -> Pose6D:
    """Levenberg-Marquardt on per-pixel depth residuals over the observed mask interior."""
    from scipy import ndimage

    inner = ndimage.binary_erosion(obj.mask, iterations=1) & obj.valid
    if np.count_nonzero(inner) < 12:
        return pose

    def resid(x):
        d, _ = render_mesh(obj.shape, _perturb(pose, x), obj.cam, obj.roi)
        r = d[inner] - obj.obs[inner]
        # a faint pull toward the start pins directions depth cannot see
        return np.concatenate([np.where(np.isfinite(r), r, miss), reg * x])

    try:
        sol = least_squares(resid, np.zeros(6), method="lm", x_scale=np.array([0.01] * 3 + [0.1] * 3),
                            diff_step=1e-7, max_nfev=200)
    except ValueError:
        return pose
    return _perturb(pose, sol.x)


def _compass(obj: PoseObjective, pose: Pose6D, f: float, evals: int = 150, step=(1e-3, math.radians(0.5)),
             min_step: float = 1e-3) -> tuple[Pose6D, float]:
    """Coordinate pattern search on the increment; halves the step when no probe improves."""
    h = np.array([step[0]] * 3 + [step[1]] * 3)
    x = np.zeros(6)
    used = 0
    while used < evals and f > 0.0 and h[0] > step[0] * min_step:
        improved = False
        for i in range(6):
            for sgn in (1.0, -1.0):
                y = x.copy()
                y[i] += sgn * h[i]
                fy = obj.loss(_perturb(pose, y))
                used += 1
                if fy < f:
                    x, f, improved = y, fy, True
                    break
            if used >= evals:
                break
        if not improved:
            h *= 0.5
    return _perturb(pose, x), f


def _cma_stage(obj: PoseObjective, center: Pose6D, center_f: float, sigma, evals: int,
               seed: int) -> tuple[Pose6D, float]:
    """Local CMA-ES about ``center``; returns the best of ``center`` and every sample."""
    cfg = CmaConfig(population=10, iterations=max(1, evals // 10), sigma0=tuple(sigma), seed=seed)
    state = cma_init(np.zeros(6), cfg)
    best_x, best_f = None, center_f
    for _ in range(cfg.iterations):
        if best_f <= 0.0:
            break
        X = cma_ask(state, cfg)
        cma_tell(state, X, [obj.loss(_perturb(center, x)) for x in X])
        if state.best_f < best_f:
            best_f, best_x = state.best_f, state.best_x.copy()
    return (center if best_x is None else _perturb(center, best_x)), best_f


def estimate_pose(shape: TriMesh, depth: DepthMap, mask: SegMask | np.ndarray, cam: CameraModel, init: Pose6D,
                  label: int | None = None, ignore: np.ndarray | None = None,
                  background: DepthMap | None = None, budget: int = POSE_BUDGET,
                  seed: int = 0, polish: bool = True) -> tuple[Pose6D, float]:
    """Render-and-compare pose fit about ``init``.

    Search is a local CMA-ES over a 6-D increment (position, axis-angle),
    restarted about the incumbent at successively smaller initial steps.
    A centroid-matching translation seeds the search, and a depth
    least-squares polish refines the incumbent between stages. Returns the
    best pose seen and its loss, which never exceeds the loss at ``init``.
    """
    m = mask.mask(label) if isinstance(mask, SegMask) else np.asarray(mask, bool)
    if m.shape != depth.shape or m.shape != cam.shape:
        raise ConfigurationError("depth, mask and camera resolutions differ")
    if not m.any():
        raise TrackingLost("observed mask is empty")
    obj = PoseObjective(shape, depth, m, cam, ignore, background)
    best, best_f = init, obj.loss(init)

    def consider(pose, f=None):
        nonlocal best, best_f
        f = obj.loss(pose) if f is None else f
        if f < best_f:
            best, best_f = pose, f

    def refine():
        if polish and best_f > CONVERGED:
            consider(_polish(obj, best))

    shift = _centroid_shift(obj, init) if best_f > CONVERGED else None
    if shift is not None:
        consider(_perturb(init, np.concatenate([shift, np.zeros(3)])))
    if best_f > CONVERGED:
        consider(_icp(obj, best))
    refine()
    sigma = np.asarray(POSE_SIGMA)
    share = (budget - 2) // len(POSE_STAGES)
    for k, scale in enumerate(POSE_STAGES):
        if best_f <= CONVERGED:
            break
        consider(*_cma_stage(obj, best, best_f, sigma * scale, share, derive_seed("pose-cma", seed, k)))
        refine()
    if best_f > CONVERGED:
        consider(*_compass(obj, best, best_f))
        refine()
    return best, float(best_f)


def others_mask(masks: dict[int, MaskTrack], oid: int, f: int) -> np.ndarray:
    out = None
    for k, t in masks.items():
        if k == oid:
            continue
        out = t.masks[f].copy() if out is None else out | t.masks[f]
    return out if out is not None else np.zeros_like(masks[oid].masks[f])


def _extrapolate(prev2: Pose6D, prev: Pose6D) -> Pose6D:
    """Constant-velocity prediction: repeat the last inter-keyframe motion."""
    dq = quat_mul(prev.orientation, quat_conj(prev2.orientation))
    return Pose6D(2 * prev.position - prev2.position, quat_mul(dq, prev.orientation))


def track_poses(video: GuidanceVideo, masks: dict[int, MaskTrack], depths: DepthTrack, scene: SceneConfig,
                objects: Sequence[int] | None = None, keyframes: Sequence[int] | None = None,
                seed: int = 0) -> dict[int, PoseTrack]:
    """Chain ``estimate_pose`` over keyframes, starting from the known initial pose.

    Each keyframe starts from the better (by loss) of the previous estimate
    and a constant-velocity extrapolation. A keyframe whose mask shrinks
    below a quarter of its frame-0 area is flagged unreliable; it holds the
    previous pose unless its own fit is good (loss at most
    ``UNRELIABLE_LOSS``), which keeps edge-on views of unoccluded objects.
    """
    kfs = list(keyframes if keyframes is not None else video.retained)
    ids = list(objects) if objects is not None else [o.id for o in scene.foreground if o.is_rigid]
    cam = scene.camera
    out = {}
    for oid in ids:
        obj = scene.object(oid)
        if not obj.is_rigid:
            raise ConfigurationError(f"pose tracking needs a rigid object, {obj.name!r} is a particle blob")
        track = masks[oid]
        area0 = max(track.area(0), 1)
        hist = [obj.initial_pose]
        prev_res = 0.0
        poses, res, rel = [], [], []
        for k in kfs:
            m = track.masks[k]
            small = track.area(k) < OCCLUSION_FRACTION * area0
            if not m.any():
                poses.append(hist[-1])
                res.append(prev_res)
                rel.append(False)
                continue
            ignore = others_mask(masks, oid, k)
            init = hist[-1]
            if len(hist) >= 2:
                probe = PoseObjective(obj.shape, depths.frames[k], m, cam, ignore, depths.background)
                guess = _extrapolate(hist[-2], hist[-1])
                if probe.loss(guess) < probe.loss(init):
                    init = guess
            try:
                pose, r = estimate_pose(obj.shape, depths.frames[k], m, cam, init, ignore=ignore,
                                        background=depths.background, seed=derive_seed("pose", seed, oid, k))
            except TrackingLost as exc:
                raise TrackingLost(f"object {obj.name!r}: {exc}", keyframe=k) from None
            if small and r > UNRELIABLE_LOSS:
                poses.append(hist[-1])
                res.append(prev_res)
                rel.append(False)
                continue
            poses.append(pose)
            res.append(r)
            rel.append(not small)
            hist.append(pose)
            prev_res = r
        out[oid] = PoseTrack(oid, tuple(kfs), tuple(poses), tuple(res), tuple(rel))
    return out


# ---------------------------------------------------------------------------
# keyframes, contacts, affordance


def default_stride(n_frames: int) -> int:
    return max(1, n_frames // 8)


def select_keyframes(video: GuidanceVideo, verifier, stride: int | None = None) -> GuidanceVideo:
    """Uniform keyframes plus start/end bounds from the verifier, snapped to the grid."""
    n = len(video.sample)
    stride = default_stride(n) if stride is None else int(stride)
    if stride < 1:
        raise ConfigurationError("keyframe stride must be at least 1")
    kfs = tuple(range(0, n, stride))
    start, end = verifier.keyframe_bounds(video.sample, kfs)
    if start > end:
        raise ProtocolError(f"keyframe start {start} is after end {end}")
    snap = lambda f: min(kfs, key=lambda k: (abs(k - f), k))  # noqa: E731
    start, end = snap(int(start)), snap(int(end))
    if start > end:
        raise ProtocolError("keyframe bounds collapse after snapping")
    return video.with_keyframes(kfs, start, end)


def extract_contacts(video: GuidanceVideo, scene: SceneConfig, provider: ContactProvider,
                     keyframes: Sequence[int] | None = None) -> ContactSchedule:
    kfs = tuple(keyframes if keyframes is not None else video.retained)
    mats = provider.contacts(video, kfs, scene)
    pairs = tuple(contact_pairs(scene))
    fixed = []
    for m in mats:
        d = m.as_dict()
        fixed.append(ContactMatrix(pairs, [d.get(p, d.get(p[::-1], False)) for p in pairs]))
    return ContactSchedule(kfs, tuple(fixed))


def detect_affordance(frame: int, actuator_mask: np.ndarray, depth: DepthMap, cam: CameraModel,
                      fingertips: np.ndarray, radius: float = AFFORDANCE_RADIUS) -> AffordanceRegion:
    """Pixels within ``radius`` of any fingertip, restricted to the actuator mask, and their 3-D points."""
    tips = np.asarray(fingertips, float).reshape(-1, 2)
    if len(tips) == 0:
        return AffordanceRegion.empty(frame)
    h, w = actuator_mask.shape
    rr, cc = np.mgrid[0:h, 0:w]
    near = np.zeros((h, w), bool)
    for u, v in tips:
        near |= (cc - u) ** 2 + (rr - v) ** 2 <= radius * radius
    region = near & np.asarray(actuator_mask, bool) & depth.valid
    rows, cols = np.nonzero(region)
    pts = backproject_pixels(rows, cols, depth.values[rows, cols], cam) if len(rows) else np.zeros((0, 3))
    center = cam.camera_to_world(np.zeros((1, 3)))[0]
    return AffordanceRegion(np.stack([rows, cols], 1).astype(np.int64), pts, tips, frame, center)


def final_cloud(depths: DepthTrack, track: MaskTrack, frame: int, cam: CameraModel) -> PointCloud:
    return backproject(depths.frames[frame], track.masks[frame], None, cam)
