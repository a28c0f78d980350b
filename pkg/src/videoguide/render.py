"""Depth and label rasterizer for scene states."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from . import _kernels as K
from .errors import ConfigurationError
from .geometry import CameraModel, DepthMap, Pose6D, SegMask, TriMesh


@dataclass(frozen=True, eq=False)
class FrameObservation:
    depth: DepthMap
    seg: SegMask
    camera: CameraModel
    frame_index: int = 0
    color: np.ndarray | None = None

    def __post_init__(self):
        shape = self.camera.shape
        if self.depth.values.shape != shape or self.seg.labels.shape != shape:
            raise ConfigurationError("observation resolution must equal the camera resolution")

    def with_index(self, frame_index: int) -> FrameObservation:
        return FrameObservation(self.depth, self.seg, self.camera, frame_index, self.color)


@dataclass(frozen=True)
class Roi:
    """Pixel window: rows ``row0:row0+height``, cols ``col0:col0+width``."""

    row0: int
    col0: int
    height: int
    width: int

    @classmethod
    def full(cls, cam: CameraModel) -> Roi:
        return cls(0, 0, cam.height, cam.width)

    @classmethod
    def around(cls, mask: np.ndarray, margin: int) -> Roi:
        rows = np.flatnonzero(mask.any(axis=1))
        cols = np.flatnonzero(mask.any(axis=0))
        h, w = mask.shape
        r0 = max(int(rows[0]) - margin, 0)
        c0 = max(int(cols[0]) - margin, 0)
        r1 = min(int(rows[-1]) + margin + 1, h)
        c1 = min(int(cols[-1]) + margin + 1, w)
        return cls(r0, c0, r1 - r0, c1 - c0)

    @property
    def slices(self):
        return slice(self.row0, self.row0 + self.height), slice(self.col0, self.col0 + self.width)


class _RenderGeometry:
    """Concatenated rigid meshes and particle labels for one scene."""

    def __init__(self, scene):
        rigid = scene.rigid_objects
        verts, tris, labels, body_of_vertex = [], [], [], []
        off = 0
        for b, o in enumerate(rigid):
            mesh: TriMesh = o.shape
            verts.append(mesh.vertices)
            tris.append(mesh.triangles + off)
            labels.append(np.full(len(mesh.triangles), o.id, dtype=np.int32))
            body_of_vertex.append(np.full(len(mesh.vertices), b))
            off += len(mesh.vertices)
        self.verts = np.concatenate(verts) if verts else np.zeros((0, 3))
        self.tris = np.concatenate(tris) if tris else np.zeros((0, 3), dtype=np.int64)
        self.tri_label = np.concatenate(labels) if labels else np.zeros(0, dtype=np.int32)
        self.body_of_vertex = np.concatenate(body_of_vertex) if body_of_vertex else np.zeros(0, dtype=np.int64)
        plab = []
        for o in scene.blobs:
            plab += [o.id] * len(o.shape.particles)
        self.p_label = np.array(plab, dtype=np.int32)


_GEOMETRY_CACHE_ATTR = "_render_geometry"


def _geometry(scene) -> _RenderGeometry:
    g = scene.__dict__.get(_GEOMETRY_CACHE_ATTR)
    if g is None:
        g = _RenderGeometry(scene)
        scene.__dict__[_GEOMETRY_CACHE_ATTR] = g
    return g


def _quat_mats(quat: np.ndarray) -> np.ndarray:
    w, x, y, z = quat[:, 0], quat[:, 1], quat[:, 2], quat[:, 3]
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], -2)


def raster_arrays(tri_world: np.ndarray, tri_label: np.ndarray, sph_world: np.ndarray, sph_rad: np.ndarray,
                  sph_label: np.ndarray, cam: CameraModel, roi: Roi | None = None):
    """Low-level entry: world-frame triangles (M,3,3) and spheres to (depth, label) arrays.

    Depth is ``inf`` and label 0 where nothing was drawn.
    """
    roi = roi or Roi.full(cam)
    R = cam.extrinsic.rotation
    t = cam.extrinsic.position
    tri_cam = np.ascontiguousarray(tri_world.reshape(-1, 3) @ R.T + t).reshape(-1, 3, 3)
    sph_cam = np.ascontiguousarray(sph_world.reshape(-1, 3) @ R.T + t)
    depth = np.full((roi.height, roi.width), np.inf)
    label = np.zeros((roi.height, roi.width), dtype=np.int32)
    K.raster(tri_cam, np.ascontiguousarray(tri_label, dtype=np.int32), sph_cam,
             np.ascontiguousarray(sph_rad, dtype=np.float64), np.ascontiguousarray(sph_label, dtype=np.int32),
             cam.fx, cam.fy, cam.cx, cam.cy, roi.row0, roi.col0, depth, label)
    return depth, label


def render_mesh(mesh: TriMesh, pose: Pose6D, cam: CameraModel, roi: Roi | None = None, label: int = 1):
    """Render one mesh alone; returns (depth with inf background, bool mask)."""
    tri = pose.apply(mesh.vertices)[mesh.triangles]
    depth, lab = raster_arrays(tri, np.full(len(tri), label), np.zeros((0, 3)), np.zeros(0),
                               np.zeros(0), cam, roi)
    return depth, lab == label


def scene_world_geometry(state, scene, include: Iterable[int] | None = None):
    g = _geometry(scene)
    rot = _quat_mats(np.asarray(state.quat).reshape(-1, 4))
    pos = np.asarray(state.pos).reshape(-1, 3)
    b = g.body_of_vertex
    vw = np.einsum("nij,nj->ni", rot[b], g.verts) + pos[b] if len(b) else np.zeros((0, 3))
    tri = vw[g.tris]
    tl = g.tri_label
    sph, srad, slab = np.asarray(state.ppos).reshape(-1, 3), scene.arrays.prad, g.p_label
    if include is not None:
        keep = np.array(sorted(set(include)), dtype=np.int32)
        tm = np.isin(tl, keep)
        sm = np.isin(slab, keep)
        tri, tl, sph, srad, slab = tri[tm], tl[tm], sph[sm], srad[sm], slab[sm]
    return tri, tl, sph, srad, slab


def rasterize(state, scene, cam: CameraModel | None = None, frame_index: int = 0,
              include: Iterable[int] | None = None, color: bool = False) -> FrameObservation:
    """Render depth and labels of a scene state (optionally only ``include`` ids)."""
    cam = cam or scene.camera
    depth, label = raster_arrays(*scene_world_geometry(state, scene, include), cam)
    valid = np.isfinite(depth)
    dm = DepthMap(np.where(valid, depth, 0.0).astype(np.float32), valid)
    seg = SegMask(label.astype(np.uint16))
    rgb = colorize(dm, seg) if color else None
    return FrameObservation(dm, seg, cam, frame_index, rgb)


def empty_observation(cam: CameraModel, frame_index: int = 0) -> FrameObservation:
    return FrameObservation(DepthMap.empty(cam.height, cam.width), SegMask.empty(cam.height, cam.width), cam,
                            frame_index)


_PALETTE = np.array([
    [230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200], [245, 130, 48], [145, 30, 180],
    [70, 240, 240], [240, 50, 230], [210, 245, 60], [250, 190, 212], [0, 128, 128], [170, 110, 40],
], dtype=np.float64)


def colorize(depth: DepthMap, seg: SegMask) -> np.ndarray:
    """Flat label colors shaded by depth; a debugging stand-in for a photo."""
    lab = seg.labels.astype(np.int64)
    rgb = np.full(lab.shape + (3,), 24.0)
    fg = lab > 0
    if fg.any():
        base = _PALETTE[(lab[fg] - 1) % len(_PALETTE)]
        d = depth.values[fg].astype(np.float64)
        lo, hi = d.min(), d.max()
        shade = 1.0 - 0.5 * ((d - lo) / (hi - lo) if hi > lo else np.zeros_like(d))
        rgb[fg] = base * shade[:, None]
    return rgb.round().astype(np.uint8)


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w = rgb.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(np.ascontiguousarray(rgb[..., :3]).tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ConfigurationError(f"{path}: not a binary PPM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h * 3], dtype=np.uint8).reshape(h, w, 3).copy()
