"""Spatial value types (poses, cameras, depth/label images, clouds, meshes)
and the metric kernels every other module builds on.

Conventions: meters and radians; quaternions are (w, x, y, z); the camera
frame is x right, y down, z forward; pixel (row i, col j) has its center at
image coordinates (u, v) = (j, i).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigurationError, DomainError

# ---------------------------------------------------------------------------
# quaternion helpers


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError(f"cannot normalize quaternion {q}")
    q = q / n
    # canonical hemisphere keeps equality checks stable
    return -q if q[0] < 0 else q


def quat_mul(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


def quat_from_rotvec(rv) -> np.ndarray:
    rv = np.asarray(rv, dtype=np.float64)
    angle = np.linalg.norm(rv)
    if angle < 1e-12:
        # second-order expansion keeps tiny increments exact enough for round trips
        q = np.array([1.0 - angle * angle / 8.0, *(0.5 * rv)])
        return q / np.linalg.norm(q)
    axis = rv / angle
    return np.array([np.cos(angle / 2), *(np.sin(angle / 2) * axis)])


def quat_to_rotvec(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q[0] < 0:
        q = -q
    v = q[1:]
    s = np.linalg.norm(v)
    if s < 1e-12:
        return 2.0 * v
    angle = 2.0 * np.arctan2(s, q[0])
    return v / s * angle


def quat_angle(a, b) -> float:
    """Rotation angle (radians) between two unit quaternions."""
    rel = quat_mul(np.asarray(a, float), quat_conj(b))
    return 2.0 * math.atan2(float(np.linalg.norm(rel[1:])), abs(float(rel[0])))


# ---------------------------------------------------------------------------
# value types


@dataclass(frozen=True)
class Pose6D:
    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        p = np.array(self.position, dtype=np.float64).reshape(3)
        q = quat_normalize(np.array(self.orientation, dtype=np.float64).reshape(4))
        p.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)

    @classmethod
    def identity(cls) -> Pose6D:
        return cls(np.zeros(3))

    @classmethod
    def from_rotvec(cls, position, rotvec) -> Pose6D:
        return cls(position, quat_from_rotvec(rotvec))

    @classmethod
    def from_matrix(cls, m) -> Pose6D:
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, 3], quat_from_matrix(m[:3, :3]))

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    @property
    def rotvec(self) -> np.ndarray:
        return quat_to_rotvec(self.orientation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.position
        return m

    def compose(self, other: Pose6D) -> Pose6D:
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        q = quat_mul(self.orientation, other.orientation)
        p = self.rotation @ other.position + self.position
        return Pose6D(p, q)

    __matmul__ = compose

    def inverse(self) -> Pose6D:
        qi = quat_conj(self.orientation)
        return Pose6D(-(quat_to_matrix(qi) @ self.position), qi)

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.position

    def translation_error(self, other: Pose6D) -> float:
        return float(np.linalg.norm(self.position - other.position))

    def rotation_error(self, other: Pose6D) -> float:
        return quat_angle(self.orientation, other.orientation)

    def as_list(self) -> list[float]:
        return [*map(float, self.position), *map(float, self.orientation)]

    @classmethod
    def from_list(cls, values) -> Pose6D:
        values = list(values)
        if len(values) == 3:
            return cls(values)
        if len(values) == 7:
            return cls(values[:3], values[3:])
        raise ConfigurationError(f"pose needs 3 or 7 numbers, got {len(values)}")


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsic: Pose6D = field(default_factory=Pose6D.identity)  # world -> camera

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigurationError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigurationError("principal point must lie inside the image")

    @classmethod
    def look_at(cls, eye, target, fov_deg: float = 50.0, width: int = 256, height: int = 256,
                up=(0.0, 0.0, 1.0)) -> CameraModel:
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, up)
        if np.linalg.norm(right) < 1e-9:  # looking along ``up``
            right = np.cross(fwd, (0.0, 1.0, 0.0))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd])
        f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
        ext = Pose6D(-(rot @ eye), quat_from_matrix(rot))
        return cls(f, f, width / 2.0, height / 2.0, width, height, ext)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def intrinsic_matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return self.extrinsic.inverse().position

    def world_to_camera(self, points) -> np.ndarray:
        return self.extrinsic.apply(points)

    def camera_to_world(self, points) -> np.ndarray:
        return self.extrinsic.inverse().apply(points)

    def pixel_footprint(self, depth: float) -> float:
        """Metric size of one pixel at ``depth`` meters."""
        return depth / min(self.fx, self.fy)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height,
                "extrinsic": self.extrinsic.as_list()}


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


_HEADER = struct.Struct("<4sIII")


def _write_raster(path, magic: bytes, arr: np.ndarray, dtype: str) -> None:
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, w, h, 0))
        fh.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def _read_raster(path, magic: bytes, dtype: str) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ConfigurationError(f"{path}: truncated header")
    got, w, h, _ = _HEADER.unpack_from(data)
    if got != magic:
        raise ConfigurationError(f"{path}: bad magic {got!r}, expected {magic!r}")
    body = np.frombuffer(data, dtype=dtype, offset=_HEADER.size)
    if body.size != w * h:
        raise ConfigurationError(f"{path}: expected {w * h} values, found {body.size}")
    return body.reshape(h, w)


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Camera-z depth image. Invalid pixels carry ``valid == False``; their
    stored value is meaningless and never read by the metrics."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float32)
        ok = np.array(self.valid, dtype=bool)
        if v.shape != ok.shape or v.ndim != 2:
            raise ConfigurationError("depth values and validity mask must be equal 2-D shapes")
        ok &= np.isfinite(v) & (v > 0)
        v = np.where(ok, v, np.float32(0.0)).astype(np.float32)
        object.__setattr__(self, "values", _freeze(v))
        object.__setattr__(self, "valid", _freeze(ok))

    @classmethod
    def from_array(cls, arr) -> DepthMap:
        """Build from an array where NaN / non-positive marks invalid."""
        arr = np.asarray(arr, dtype=np.float32)
        return cls(arr, np.isfinite(arr) & (arr > 0))

    @classmethod
    def empty(cls, height: int, width: int) -> DepthMap:
        return cls(np.zeros((height, width), np.float32), np.zeros((height, width), bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def to_array(self) -> np.ndarray:
        """Depth with NaN at invalid pixels."""
        return np.where(self.valid, self.values, np.float32(np.nan))

    def __eq__(self, other) -> bool:
        if not isinstance(other, DepthMap):
            return NotImplemented
        return (np.array_equal(self.valid, other.valid)
                and np.array_equal(self.values[self.valid], other.values[other.valid]))

    def save(self, path) -> None:
        _write_raster(path, b"DPTH", self.to_array(), "<f4")

    @classmethod
    def load(cls, path) -> DepthMap:
        return cls.from_array(_read_raster(path, b"DPTH", "<f4").astype(np.float32))


@dataclass(frozen=True, eq=False)
class SegMask:
    """Per-pixel object id; 0 is "no object"."""

    labels: np.ndarray

    def __post_init__(self):
        lab = np.array(self.labels)
        if lab.ndim != 2:
            raise ConfigurationError("label map must be 2-D")
        if lab.size and (lab.min() < 0 or lab.max() > 65535):
            raise ConfigurationError("labels must fit in u16")
        object.__setattr__(self, "labels", _freeze(lab.astype(np.uint16)))

    @classmethod
    def empty(cls, height: int, width: int) -> SegMask:
        return cls(np.zeros((height, width), np.uint16))

    @classmethod
    def from_bool(cls, mask, label: int) -> SegMask:
        return cls(np.where(np.asarray(mask, bool), label, 0))

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def mask(self, label: int) -> np.ndarray:
        return self.labels == label

    def present_labels(self) -> set[int]:
        return set(int(x) for x in np.unique(self.labels)) - {0}

    def __eq__(self, other) -> bool:
        if not isinstance(other, SegMask):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)

    def save(self, path) -> None:
        _write_raster(path, b"SEGM", self.labels, "<u2")

    @classmethod
    def load(cls, path) -> SegMask:
        return cls(_read_raster(path, b"SEGM", "<u2").astype(np.uint16))


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise DomainError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", _freeze(pts))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def is_empty(self) -> bool:
        return len(self.points) == 0

    def transformed(self, pose: Pose6D) -> PointCloud:
        return PointCloud(pose.apply(self.points))

    def save_xyz(self, path) -> None:
        np.savetxt(path, self.points, fmt="%.9g")

    @classmethod
    def load_xyz(cls, path) -> PointCloud:
        text = Path(path).read_text().strip()
        if not text:
            return cls(np.zeros((0, 3)))
        return cls(np.loadtxt(path, ndmin=2))


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Triangle mesh in the object frame. Each connected component must be
    convex: contact queries treat a mesh as a union of convex pieces."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ConfigurationError("triangle index out of range")
        if t.size:
            a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
            area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
            t = t[area > 1e-14]
        object.__setattr__(self, "vertices", _freeze(v))
        object.__setattr__(self, "triangles", _freeze(t))

    @classmethod
    def box(cls, size, center=(0.0, 0.0, 0.0)) -> TriMesh:
        return cls.boxes([(size, center)])

    @classmethod
    def boxes(cls, parts) -> TriMesh:
        """Union of axis-aligned boxes given as ``[(size, center), ...]``."""
        verts, tris = [], []
        corner = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)])
        # outward-facing (counter-clockwise seen from outside)
        faces = [(0, 1, 3), (0, 3, 2), (4, 6, 7), (4, 7, 5), (0, 4, 5), (0, 5, 1),
                 (2, 3, 7), (2, 7, 6), (0, 2, 6), (0, 6, 4), (1, 5, 7), (1, 7, 3)]
        for size, center in parts:
            base = len(verts) * 8
            verts.append(corner * np.asarray(size, float) + np.asarray(center, float))
            tris.extend([(a + base, b + base, c + base) for a, b, c in faces])
        return cls(np.concatenate(verts), np.array(tris)).oriented()

    @classmethod
    def load_obj(cls, path) -> TriMesh:
        verts, tris = [], []
        for line in Path(path).read_text().splitlines():
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                for k in range(1, len(idx) - 1):
                    tris.append((idx[0], idx[k], idx[k + 1]))
        if not verts or not tris:
            raise ConfigurationError(f"{path}: no geometry")
        return cls(np.array(verts), np.array(tris)).oriented()

    def save_obj(self, path) -> None:
        lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in self.vertices]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in self.triangles]
        Path(path).write_text("\n".join(lines) + "\n")

    def components(self) -> np.ndarray:
        """Connected-component id per triangle (shared vertex indices)."""
        parent = np.arange(len(self.vertices))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for a, b, c in self.triangles:
            for u in (b, c):
                ra, ru = find(a), find(u)
                if ra != ru:
                    parent[max(ra, ru)] = min(ra, ru)
        roots = np.array([find(t[0]) for t in self.triangles])
        _, comp = np.unique(roots, return_inverse=True)
        return comp.astype(np.int64)

    def oriented(self) -> TriMesh:
        """Flip triangles so every face normal points away from its component's centroid."""
        comp = self.components()
        tris = self.triangles.copy()
        for c in np.unique(comp):
            sel = np.where(comp == c)[0]
            centroid = self.vertices[np.unique(tris[sel])].mean(axis=0)
            for k in sel:
                a, b, cc = self.vertices[tris[k]]
                n = np.cross(b - a, cc - a)
                if np.dot(n, (a + b + cc) / 3 - centroid) < 0:
                    tris[k] = tris[k][[0, 2, 1]]
        return TriMesh(self.vertices, tris)

    def surface_samples(self) -> np.ndarray:
        """Vertices, plus unique edge midpoints when the mesh has fewer than 64 vertices."""
        used = np.unique(self.triangles)
        pts = self.vertices[used]
        if len(used) < 64:
            edges = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
                                    self.triangles[:, [2, 0]]])
            edges = np.unique(np.sort(edges, axis=1), axis=0)
            mids = 0.5 * (self.vertices[edges[:, 0]] + self.vertices[edges[:, 1]])
            pts = np.concatenate([pts, mids])
        return pts

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Area-weighted uniform samples on the surface."""
        v, t = self.vertices, self.triangles
        a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
        idx = rng.choice(len(t), size=n, p=area / area.sum())
        r1, r2 = rng.random(n), rng.random(n)
        s = np.sqrt(r1)
        return ((1 - s)[:, None] * a[idx] + (s * (1 - r2))[:, None] * b[idx]
                + (s * r2)[:, None] * c[idx])


# ---------------------------------------------------------------------------
# operations


class Projection(NamedTuple):
    u: float
    v: float
    depth: float
    in_frustum: bool


def project(point, cam: CameraModel) -> Projection:
    """Pinhole projection of one world point; out-of-frustum is a value, not an error."""
    pc = cam.world_to_camera(np.asarray(point, dtype=np.float64).reshape(1, 3))[0]
    z = float(pc[2])
    if z <= 0.0:
        return Projection(float("nan"), float("nan"), z, False)
    u = cam.fx * pc[0] / z + cam.cx
    v = cam.fy * pc[1] / z + cam.cy
    inside = -0.5 <= u < cam.width - 0.5 and -0.5 <= v < cam.height - 0.5
    return Projection(float(u), float(v), z, bool(inside))


def project_points(points, cam: CameraModel) -> np.ndarray:
    """Vectorized projection: (N, 3) world points -> (N, 3) of (u, v, depth)."""
    pc = cam.world_to_camera(points)
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * pc[:, 0] / z + cam.cx
        v = cam.fy * pc[:, 1] / z + cam.cy
    return np.stack([u, v, z], axis=1)


def pixel_rays(rows, cols, cam: CameraModel) -> np.ndarray:
    """Camera-frame rays with unit z through the given pixel centers."""
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    return np.stack([(cols - cam.cx) / cam.fx, (rows - cam.cy) / cam.fy, np.ones_like(rows)], axis=-1)


def backproject_pixels(rows, cols, z, cam: CameraModel) -> np.ndarray:
    pc = pixel_rays(rows, cols, cam) * np.asarray(z, dtype=np.float64)[..., None]
    return cam.camera_to_world(pc.reshape(-1, 3))


def backproject(depth: DepthMap, mask: SegMask | np.ndarray, label: int | None, cam: CameraModel) -> PointCloud:
    """One world point per valid pixel of ``mask`` carrying ``label``.

    ``mask`` may also be a boolean array, in which case ``label`` is ignored.
    """
    sel = mask.mask(label) if isinstance(mask, SegMask) else np.asarray(mask, bool)
    if sel.shape != depth.shape:
        raise ConfigurationError(f"depth {depth.shape} and mask {sel.shape} differ in resolution")
    if depth.shape != cam.shape:
        raise ConfigurationError(f"depth {depth.shape} does not match camera {cam.shape}")
    sel = sel & depth.valid
    rows, cols = np.nonzero(sel)
    if len(rows) == 0:
        return PointCloud(np.zeros((0, 3)))
    return PointCloud(backproject_pixels(rows, cols, depth.values[rows, cols], cam))


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """IoU of two boolean masks; 1.0 when both are empty."""
    if a.shape != b.shape:
        raise ConfigurationError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def iou(a: SegMask, b: SegMask, label: int) -> float:
    if a.shape != b.shape:
        raise ConfigurationError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return mask_iou(a.mask(label), b.mask(label))


def nearest_distances(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Distance from every point of ``src`` to its nearest neighbour in ``dst``."""
    d, _ = cKDTree(dst).query(src, k=1)
    return d


def chamfer(a: PointCloud | np.ndarray, b: PointCloud | np.ndarray) -> float:
    """Symmetric mean nearest-neighbour distance (not squared), halved."""
    pa = a.points if isinstance(a, PointCloud) else np.asarray(a, dtype=np.float64)
    pb = b.points if isinstance(b, PointCloud) else np.asarray(b, dtype=np.float64)
    if len(pa) == 0 or len(pb) == 0:
        raise DomainError("chamfer distance of an empty cloud is undefined")
    ab = nearest_distances(pa, pb).mean()
    ba = nearest_distances(pb, pa).mean()
    return float(0.5 * (ab + ba))
