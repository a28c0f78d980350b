"""Desk-scale simulator.

The actuator is kinematic and follows waypoints through a critically damped
PD law; passive rigid bodies and particles respond through contacts solved
with projected Gauss-Seidel on velocities plus a split-impulse position
correction. Particle blobs are either free granular material or
cohesive-elastic (springs along initial nearest-neighbour links).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np

from . import _kernels as K
from .errors import ConfigurationError, SimulationDiverged
from .geometry import CameraModel, Pose6D, TriMesh

FREE_GRANULAR = "free-granular"
COHESIVE_ELASTIC = "cohesive-elastic"

DEFAULT_RIGID_MASS = 0.1


@dataclass(frozen=True, eq=False)
class ParticleBlob:
    particles: np.ndarray  # object frame
    radius: float
    behavior: str = FREE_GRANULAR
    actuated: tuple[int, ...] = ()
    stiffness: float = 20.0  # N/m per link, cohesive-elastic only
    damping: float = 0.05  # N s/m per link
    neighbors: int = 2

    def __post_init__(self):
        pts = np.array(self.particles, dtype=np.float64).reshape(-1, 3)
        if len(pts) < 1:
            raise ConfigurationError("a particle blob needs at least one particle")
        if self.behavior not in (FREE_GRANULAR, COHESIVE_ELASTIC):
            raise ConfigurationError(f"unknown particle behavior {self.behavior!r}")
        if self.radius <= 0:
            raise ConfigurationError("particle radius must be positive")
        act = tuple(int(i) for i in self.actuated)
        if any(i < 0 or i >= len(pts) for i in act):
            raise ConfigurationError("actuated particle index out of range")
        pts.flags.writeable = False
        object.__setattr__(self, "particles", pts)
        object.__setattr__(self, "actuated", act)

    def links(self) -> np.ndarray:
        """Initial nearest-neighbour links (unique, sorted pairs)."""
        if self.behavior != COHESIVE_ELASTIC or len(self.particles) < 2:
            return np.zeros((0, 2), dtype=np.int64)
        d = np.linalg.norm(self.particles[:, None] - self.particles[None], axis=-1)
        np.fill_diagonal(d, np.inf)
        k = min(self.neighbors, len(self.particles) - 1)
        nn = np.argsort(d, axis=1, kind="stable")[:, :k]
        pairs = {(min(i, j), max(i, j)) for i in range(len(nn)) for j in nn[i]}
        return np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)


@dataclass(frozen=True)
class Joint:
    """Single-DoF constraint in world coordinates.

    Passive objects support ``prismatic``; actuators support both kinds.
    ``limits`` are offsets (meters) or angles (radians) from the initial pose.
    """

    kind: str
    axis: tuple[float, float, float]
    limits: tuple[float, float] = (-math.inf, math.inf)
    pivot: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("prismatic", "hinge"):
            raise ConfigurationError(f"unknown joint kind {self.kind!r}")
        a = np.asarray(self.axis, float)
        object.__setattr__(self, "axis", tuple(a / np.linalg.norm(a)))
        if self.limits[0] > self.limits[1]:
            raise ConfigurationError("joint limits must be ordered")


@dataclass(frozen=True, eq=False)
class ObjectSpec:
    id: int
    name: str
    shape: TriMesh | ParticleBlob
    initial_pose: Pose6D = field(default_factory=Pose6D.identity)
    foreground: bool = True
    actuator: bool = False
    target: bool = False
    mass: float = DEFAULT_RIGID_MASS
    fixed: bool = False  # foreground but immovable (posts, anchored blocks)
    joint: Joint | None = None
    hold: bool = False  # joint friction: no drift between contact pushes

    def __post_init__(self):
        if self.id <= 0 or self.id > 65535:
            raise ConfigurationError(f"object id must be in 1..65535, got {self.id}")
        if not self.foreground and (self.actuator or self.target):
            raise ConfigurationError(f"background object {self.name!r} cannot be actuator or target")
        if self.mass <= 0:
            raise ConfigurationError(f"object {self.name!r} needs positive mass")

    @property
    def is_rigid(self) -> bool:
        return isinstance(self.shape, TriMesh)


@dataclass(frozen=True, eq=False)
class SceneConfig:
    objects: tuple[ObjectSpec, ...]
    camera: CameraModel
    gravity: tuple[float, float, float] = (0.0, 0.0, -9.8)
    timestep: float = 0.01
    contact_epsilon: float = 0.01
    # controller and solver constants
    kp: float = 100.0
    max_speed: float = 1.0
    max_angular_speed: float = math.pi
    baumgarte: float = 0.2
    slop: float = 5e-4
    friction: float = 0.5  # Coulomb coefficient
    solver_iterations: int = 8

    def __post_init__(self):
        objs = tuple(self.objects)
        object.__setattr__(self, "objects", objs)
        ids = [o.id for o in objs]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("object ids must be unique")
        if not 0 < self.timestep <= 0.05:
            raise ConfigurationError("timestep must lie in (0, 0.05]")
        if self.contact_epsilon <= 0:
            raise ConfigurationError("contact_epsilon must be positive")
        acts = [o for o in objs if o.actuator]
        if len(acts) != 1:
            raise ConfigurationError(f"exactly one actuator object is supported, found {len(acts)}")
        if not any(o.target for o in objs):
            raise ConfigurationError("at least one target object is required")
        act = acts[0]
        if not act.is_rigid and not act.shape.actuated:
            raise ConfigurationError("a particle actuator must declare its actuated subset")
        for o in objs:
            if o.joint is not None and not o.is_rigid:
                raise ConfigurationError("joints apply to rigid objects only")
            if o.joint is not None and not o.actuator and o.joint.kind != "prismatic":
                raise ConfigurationError("passive joints must be prismatic")

    @property
    def kd(self) -> float:
        return 2.0 * math.sqrt(self.kp)

    def object(self, oid: int) -> ObjectSpec:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)

    def by_name(self, name: str) -> ObjectSpec:
        for o in self.objects:
            if o.name == name:
                return o
        raise KeyError(name)

    @property
    def actuator(self) -> ObjectSpec:
        return next(o for o in self.objects if o.actuator)

    @property
    def targets(self) -> list[ObjectSpec]:
        return [o for o in self.objects if o.target]

    @property
    def foreground(self) -> list[ObjectSpec]:
        return [o for o in self.objects if o.foreground]

    @property
    def background(self) -> list[ObjectSpec]:
        return [o for o in self.objects if not o.foreground]

    @property
    def rigid_objects(self) -> list[ObjectSpec]:
        return [o for o in self.objects if o.is_rigid]

    @property
    def blobs(self) -> list[ObjectSpec]:
        return [o for o in self.objects if not o.is_rigid]

    def with_objects(self, objects) -> SceneConfig:
        return replace(self, objects=tuple(objects))

    @cached_property
    def arrays(self) -> _SceneArrays:
        return _SceneArrays.build(self)


class _SceneArrays:
    """Flattened static scene data consumed by the compiled kernels.

    Rigid bodies follow scene order; particles are concatenated blob by
    blob. Geometry is stored per convex component: triangle vertices,
    outward normals and plane offsets, plus a bounding sphere.
    """

    @classmethod
    def build(cls, scene: SceneConfig) -> _SceneArrays:
        self = cls()
        rigid = scene.rigid_objects
        blobs = scene.blobs
        self.body_ids = np.array([o.id for o in rigid], dtype=np.int64)
        self.blob_ids = np.array([o.id for o in blobs], dtype=np.int64)
        nb = len(rigid)
        self.kind = np.zeros(nb, dtype=np.int64)
        self.inv_mass = np.zeros(nb)
        self.inv_inertia = np.zeros(nb)
        self.lin_axis = np.zeros((nb, 3))
        self.lin_mode = np.zeros(nb, dtype=np.int64)
        self.hold = np.zeros(nb, dtype=np.bool_)
        self.rest_pos = np.zeros((nb, 3))
        self.lin_limits = np.zeros((nb, 2))
        self.b_radius = np.zeros(nb)
        s_start, samples = [0], []
        c_start, c_center, c_radius, c_tstart = [0], [], [], [0]
        t_v, t_n, t_d = [], [], []
        for b, o in enumerate(rigid):
            mesh: TriMesh = o.shape
            if not o.foreground or o.fixed:
                self.kind[b] = K.KIND_STATIC
            elif o.actuator:
                self.kind[b] = K.KIND_KINEMATIC
            else:
                self.kind[b] = K.KIND_DYNAMIC
                self.inv_mass[b] = 1.0 / o.mass
                lo, hi = mesh.bounds()
                ext = hi - lo
                # isotropic inertia: mean of the bounding box's principal moments
                self.inv_inertia[b] = 1.0 / (o.mass * float(ext @ ext) / 18.0)
                if o.joint is not None:
                    self.lin_mode[b] = 1
                    self.lin_axis[b] = o.joint.axis
                    self.lin_limits[b] = o.joint.limits
                self.hold[b] = o.hold
            self.rest_pos[b] = o.initial_pose.position
            self.b_radius[b] = float(np.linalg.norm(mesh.vertices, axis=1).max())
            samples.append(mesh.surface_samples())
            s_start.append(s_start[-1] + len(samples[-1]))
            comp = mesh.components()
            for c in np.unique(comp):
                tri = mesh.triangles[comp == c]
                tv = mesh.vertices[tri]
                n = np.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0])
                n /= np.linalg.norm(n, axis=1, keepdims=True)
                pts = mesh.vertices[np.unique(tri)]
                center = pts.mean(axis=0)
                t_v.append(tv)
                t_n.append(n)
                t_d.append(np.einsum("ij,ij->i", n, tv[:, 0]))
                c_center.append(center)
                c_radius.append(float(np.linalg.norm(pts - center, axis=1).max()))
                c_tstart.append(c_tstart[-1] + len(tri))
            c_start.append(len(c_center))
        self.s_start = np.array(s_start, dtype=np.int64)
        self.s_local = np.concatenate(samples) if samples else np.zeros((0, 3))
        self.c_start = np.array(c_start, dtype=np.int64)
        self.c_center = np.array(c_center).reshape(-1, 3)
        self.c_radius = np.array(c_radius, dtype=np.float64)
        self.c_tstart = np.array(c_tstart, dtype=np.int64)
        self.t_v = np.concatenate(t_v) if t_v else np.zeros((0, 3, 3))
        self.t_n = np.concatenate(t_n) if t_n else np.zeros((0, 3))
        self.t_d = np.concatenate(t_d) if t_d else np.zeros(0)

        prad, pinv, pact, pblob = [], [], [], []
        l_i, l_j, l_rest, l_k, l_c = [], [], [], [], []
        self.blob_slices = {}
        offset = 0
        for bi, o in enumerate(blobs):
            blob: ParticleBlob = o.shape
            n = len(blob.particles)
            world = o.initial_pose.apply(blob.particles)
            prad += [blob.radius] * n
            pinv += [n / o.mass] * n
            act = np.zeros(n, dtype=bool)
            act[list(blob.actuated)] = bool(o.actuator)
            pact += list(act)
            pblob += [bi] * n
            for i, j in blob.links():
                l_i.append(offset + i)
                l_j.append(offset + j)
                l_rest.append(float(np.linalg.norm(world[i] - world[j])))
                l_k.append(blob.stiffness)
                l_c.append(blob.damping)
            self.blob_slices[o.id] = slice(offset, offset + n)
            offset += n
        self.prad = np.array(prad, dtype=np.float64)
        self.pinv_mass = np.array(pinv, dtype=np.float64)
        self.pact = np.array(pact, dtype=np.bool_)
        self.p_blob = np.array(pblob, dtype=np.int64)
        self.l_i = np.array(l_i, dtype=np.int64)
        self.l_j = np.array(l_j, dtype=np.int64)
        self.l_rest = np.array(l_rest, dtype=np.float64)
        self.l_k = np.array(l_k, dtype=np.float64)
        self.l_c = np.array(l_c, dtype=np.float64)

        act = scene.actuator
        self.act_particles = not act.is_rigid
        self.act_body = -1 if self.act_particles else int(np.where(self.body_ids == act.id)[0][0])
        self.act_mode = 0
        self.act_axis = np.array([0.0, 0.0, 1.0])
        self.act_pivot = np.zeros(3)
        self.act_limits = np.array([-np.inf, np.inf])
        if act.joint is not None:
            self.act_mode = 1 if act.joint.kind == "prismatic" else 2
            self.act_axis = np.array(act.joint.axis)
            self.act_pivot = np.array(act.joint.pivot, dtype=np.float64)
            self.act_limits = np.array(act.joint.limits, dtype=np.float64)
        self.act_p0 = np.array(act.initial_pose.position)
        self.act_q0 = np.array(act.initial_pose.orientation)
        self.gravity = np.array(scene.gravity, dtype=np.float64)
        self.body_index = {int(i): k for k, i in enumerate(self.body_ids)}
        self.blob_index = {int(i): k for k, i in enumerate(self.blob_ids)}
        return self


@dataclass(frozen=True, eq=False)
class SimState:
    """Positions and velocities of every dynamic entity at one instant."""

    pos: np.ndarray
    quat: np.ndarray
    vel: np.ndarray
    angvel: np.ndarray
    ppos: np.ndarray
    pvel: np.ndarray
    time: float = 0.0
    body_ids: tuple[int, ...] = ()
    blob_slices: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("pos", "quat", "vel", "angvel", "ppos", "pvel"):
            a = np.array(getattr(self, name), dtype=np.float64)
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @classmethod
    def initial(cls, scene: SceneConfig) -> SimState:
        arr = scene.arrays
        rigid = scene.rigid_objects
        pos = np.array([o.initial_pose.position for o in rigid]).reshape(-1, 3)
        quat = np.array([o.initial_pose.orientation for o in rigid]).reshape(-1, 4)
        ppos = np.concatenate([o.initial_pose.apply(o.shape.particles) for o in scene.blobs]) \
            if scene.blobs else np.zeros((0, 3))
        return cls(pos, quat, np.zeros_like(pos), np.zeros_like(pos), ppos, np.zeros_like(ppos), 0.0,
                   tuple(int(i) for i in arr.body_ids), dict(arr.blob_slices))

    def pose(self, oid: int) -> Pose6D:
        b = self.body_ids.index(oid)
        return Pose6D(self.pos[b], self.quat[b])

    def particles(self, oid: int) -> np.ndarray:
        return self.ppos[self.blob_slices[oid]]

    def mutable_arrays(self):
        return [np.array(a) for a in (self.pos, self.quat, self.vel, self.angvel, self.ppos, self.pvel)]

    def with_arrays(self, arrays, time: float) -> SimState:
        return SimState(*arrays, time=time, body_ids=self.body_ids, blob_slices=self.blob_slices)

    def kinetic_energy(self, scene: SceneConfig) -> float:
        arr = scene.arrays
        e = 0.0
        dyn = arr.kind == K.KIND_DYNAMIC
        for b in np.where(dyn)[0]:
            m = 1.0 / arr.inv_mass[b]
            e += 0.5 * m * float(self.vel[b] @ self.vel[b])
            e += 0.5 / arr.inv_inertia[b] * float(self.angvel[b] @ self.angvel[b])
        free = ~arr.pact
        if free.any():
            e += 0.5 * float(np.sum((1.0 / arr.pinv_mass[free]) * np.sum(self.pvel[free] ** 2, axis=1)))
        return e

    def equals(self, other: SimState) -> bool:
        """Bitwise equality of every state array."""
        return all(np.array_equal(getattr(self, n), getattr(other, n))
                   for n in ("pos", "quat", "vel", "angvel", "ppos", "pvel"))


# ---------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Actuator waypoints: poses for a rigid actuator, or one velocity per
    segment for a particle actuator."""

    waypoints: tuple[Pose6D, ...] | None = None
    velocities: np.ndarray | None = None
    segment_duration: float = 0.5

    def __post_init__(self):
        if (self.waypoints is None) == (self.velocities is None):
            raise ConfigurationError("a trajectory holds either poses or particle velocities")
        if self.waypoints is not None:
            wps = tuple(self.waypoints)
            object.__setattr__(self, "waypoints", wps)
        else:
            v = np.array(self.velocities, dtype=np.float64).reshape(-1, 3)
            if not np.all(np.isfinite(v)):
                raise ConfigurationError("trajectory velocities must be finite")
            v.flags.writeable = False
            object.__setattr__(self, "velocities", v)
        if len(self) < 2:
            raise ConfigurationError("a trajectory needs at least two waypoints")
        if self.segment_duration <= 0:
            raise ConfigurationError("segment duration must be positive")

    def __len__(self) -> int:
        return len(self.waypoints) if self.waypoints is not None else len(self.velocities)

    @property
    def is_particle(self) -> bool:
        return self.velocities is not None

    def command(self, i: int):
        return self.velocities[i] if self.is_particle else self.waypoints[i]

    def extended(self, extra: int) -> Trajectory:
        """Append ``extra`` hold segments (last pose, or zero velocity)."""
        if extra <= 0:
            return self
        if self.is_particle:
            v = np.concatenate([self.velocities, np.zeros((extra, 3))])
            return Trajectory(velocities=v, segment_duration=self.segment_duration)
        return Trajectory(waypoints=self.waypoints + (self.waypoints[-1],) * extra,
                          segment_duration=self.segment_duration)

    def to_dict(self) -> dict:
        d = {"segment_duration": self.segment_duration}
        if self.is_particle:
            d["velocities"] = self.velocities.tolist()
        else:
            d["waypoints"] = [w.as_list() for w in self.waypoints]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Trajectory:
        if "velocities" in d:
            return cls(velocities=np.array(d["velocities"]), segment_duration=d["segment_duration"])
        return cls(waypoints=tuple(Pose6D.from_list(w) for w in d["waypoints"]),
                   segment_duration=d["segment_duration"])

    def equals(self, other: Trajectory) -> bool:
        if self.is_particle != other.is_particle or len(self) != len(other):
            return False
        if self.is_particle:
            return np.array_equal(self.velocities, other.velocities)
        return all(np.array_equal(a.position, b.position) and np.array_equal(a.orientation, b.orientation)
                   for a, b in zip(self.waypoints, other.waypoints))


# ---------------------------------------------------------------------------
# stepping


_IDENTITY_Q = np.array([1.0, 0.0, 0.0, 0.0])


def _command_arrays(arr: _SceneArrays, command):
    if isinstance(command, Pose6D):
        if arr.act_particles:
            raise ConfigurationError("particle actuator needs a velocity command")
        return np.array(command.position), np.array(command.orientation), np.zeros(3)
    v = np.asarray(command, dtype=np.float64).reshape(3)
    if not arr.act_particles:
        raise ConfigurationError("rigid actuator needs a pose command")
    return np.zeros(3), _IDENTITY_Q.copy(), v


def _advance(scene: SceneConfig, arrays, command, nsteps: int, step_offset: int = 0):
    arr = scene.arrays
    tgt_p, tgt_q, tgt_v = _command_arrays(arr, command)
    if not (np.all(np.isfinite(tgt_p)) and np.all(np.isfinite(tgt_q)) and np.all(np.isfinite(tgt_v))):
        raise ConfigurationError("actuator command must be finite")
    pos, quat, vel, angvel, ppos, pvel = arrays
    bad = K.simulate(
        pos, quat, vel, angvel, ppos, pvel, nsteps,
        arr.kind, arr.inv_mass, arr.inv_inertia, arr.lin_axis, arr.lin_mode, arr.hold, arr.rest_pos,
        arr.lin_limits, arr.s_start, arr.s_local, arr.b_radius, arr.c_start, arr.c_center, arr.c_radius,
        arr.c_tstart, arr.t_v, arr.t_n, arr.t_d,
        arr.prad, arr.pinv_mass, arr.pact, arr.l_i, arr.l_j, arr.l_rest, arr.l_k, arr.l_c,
        arr.act_body, arr.act_mode, arr.act_axis, arr.act_pivot, arr.act_limits, arr.act_p0, arr.act_q0,
        tgt_p, tgt_q, tgt_v,
        arr.gravity, scene.timestep, scene.kp, scene.kd, scene.max_speed, scene.max_angular_speed,
        scene.baumgarte, scene.slop, scene.friction, scene.solver_iterations)
    if bad >= 0:
        nb = len(arr.body_ids)
        if bad < nb:
            oid = int(arr.body_ids[bad])
        else:
            oid = int(arr.blob_ids[arr.p_blob[bad - nb]])
        raise SimulationDiverged(f"non-finite state for object {oid}", object_id=oid, step_index=step_offset)


def step(state: SimState, command, scene: SceneConfig) -> SimState:
    """One timestep toward ``command`` (a Pose6D or a particle velocity)."""
    arrays = state.mutable_arrays()
    _advance(scene, arrays, command, 1, int(round(state.time / scene.timestep)))
    return state.with_arrays(arrays, state.time + scene.timestep)


def segment_steps(scene: SceneConfig, segment_duration: float) -> int:
    n = segment_duration / scene.timestep
    steps = int(round(n))
    if steps < 1 or abs(n - steps) > 1e-6:
        raise ConfigurationError("segment duration must be a whole number of timesteps")
    return steps


def simulate_timeline(scene: SceneConfig, traj: Trajectory, record_steps: Sequence[int],
                      state: SimState | None = None) -> list[SimState]:
    """Run ``traj`` segment by segment and snapshot after the given global step counts.

    Step counts beyond the trajectory end keep holding the last command.
    """
    nseg = segment_steps(scene, traj.segment_duration)
    record_steps = sorted(int(s) for s in record_steps)
    if state is None:
        state = SimState.initial(scene)
    arrays = state.mutable_arrays()
    out: list[SimState] = []
    done = 0
    hold = traj.extended(1).command(len(traj)) if record_steps and record_steps[-1] > nseg * len(traj) else None
    for target in record_steps:
        while done < target:
            seg = done // nseg
            cmd = traj.command(seg) if seg < len(traj) else hold
            n = min(target, (seg + 1) * nseg) - done
            _advance(scene, arrays, cmd, n, done)
            done += n
        out.append(state.with_arrays([a.copy() for a in arrays], state.time + done * scene.timestep))
    return out


def rollout_states(scene: SceneConfig, traj: Trajectory, record_at: Sequence[int]) -> list[SimState]:
    """States at the end of each waypoint segment listed in ``record_at``."""
    if len(traj) < 2:
        raise ConfigurationError("trajectory needs at least two waypoints")
    rec = list(record_at)
    if rec != sorted(rec):
        raise ConfigurationError("record_at must be sorted")
    if rec and (rec[0] < 0 or rec[-1] >= len(traj)):
        raise ConfigurationError("record_at index outside the trajectory")
    nseg = segment_steps(scene, traj.segment_duration)
    try:
        return simulate_timeline(scene, traj, [(i + 1) * nseg for i in rec])
    except SimulationDiverged as exc:
        exc.step_index = exc.step_index
        raise


def rollout(scene: SceneConfig, traj: Trajectory, record_at: Sequence[int], seed: int = 0,
            camera: CameraModel | None = None):
    """Simulate ``traj`` and render at the recorded waypoint indices.

    Returns ``[(SimState, FrameObservation), ...]``. The simulator has no
    stochastic component, so ``seed`` only documents the determinism
    contract.
    """
    from .render import rasterize

    states = rollout_states(scene, traj, record_at)
    cam = camera or scene.camera
    return [(s, rasterize(s, scene, cam, frame_index=i)) for s, i in zip(states, record_at)]


# ---------------------------------------------------------------------------
# contacts


@dataclass(frozen=True, eq=False)
class ContactMatrix:
    """Contact flags for ordered (foreground, target) pairs at one instant."""

    pairs: tuple[tuple[int, int], ...]
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=bool).reshape(len(self.pairs))
        v.flags.writeable = False
        object.__setattr__(self, "pairs", tuple((int(a), int(b)) for a, b in self.pairs))
        object.__setattr__(self, "values", v)

    def __getitem__(self, pair) -> bool:
        a, b = pair
        for (x, y), v in zip(self.pairs, self.values):
            if (x, y) == (a, b) or (x, y) == (b, a):
                return bool(v)
        raise KeyError(pair)

    def as_dict(self) -> dict[tuple[int, int], bool]:
        return {p: bool(v) for p, v in zip(self.pairs, self.values)}


def contact_pairs(scene: SceneConfig) -> list[tuple[int, int]]:
    """Ordered (foreground, target) pairs, self pairs excluded."""
    return [(f.id, t.id) for t in scene.targets for f in scene.foreground if f.id != t.id]


def separations(state: SimState, scene: SceneConfig, pairs, cutoff: float = np.inf) -> np.ndarray:
    """Minimum surface separation (m, negative when overlapping) for object pairs."""
    arr = scene.arrays
    kinds, index = [], []
    ids = []
    for a, b in pairs:
        ids += [a, b]
    lookup = {}
    for oid in dict.fromkeys(ids):
        lookup[oid] = len(kinds)
        if oid in arr.body_index:
            kinds.append(0)
            index.append(arr.body_index[oid])
        else:
            kinds.append(1)
            index.append(arr.blob_index[oid])
    pa = np.array([[lookup[a], lookup[b]] for a, b in pairs], dtype=np.int64).reshape(-1, 2)
    return K.min_separation(np.ascontiguousarray(state.pos), np.ascontiguousarray(state.quat),
                            np.ascontiguousarray(state.ppos), arr.prad, arr.p_blob, arr.s_start, arr.s_local,
                            arr.b_radius, arr.c_start, arr.c_center, arr.c_radius, arr.c_tstart, arr.t_v,
                            arr.t_n, arr.t_d, np.array(kinds, dtype=np.int64),
                            np.array(index, dtype=np.int64), pa, float(cutoff))


def contacts(state: SimState, scene: SceneConfig, pairs=None) -> ContactMatrix:
    pairs = contact_pairs(scene) if pairs is None else list(pairs)
    if not pairs:
        return ContactMatrix((), np.zeros(0, bool))
    sep = separations(state, scene, pairs, cutoff=scene.contact_epsilon)
    return ContactMatrix(tuple(pairs), sep < scene.contact_epsilon)
