"""Quasi-static two-bin world.

Every resting object sits in a stable pose (one full face on the support
surface).  Actions are instantaneous and deterministic given the world's own
generator; each successful action appends a replayable record to
``WorldState.history``.
"""

from __future__ import annotations

import copy
import enum
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geom import (
    CuboidModel,
    Face,
    Pose,
    axis_angle_matrix,
    face_up_of,
    rot_z,
)

SNAPSHOT_VERSION = 1
CONTACT_TOL = 1e-9
SEPARATION_SLOP = 1e-7


class WorldError(Exception):
    """An action was rejected; the world is left unchanged."""


class PickError(WorldError):
    pass


class PushError(WorldError):
    pass


class ToppleError(WorldError):
    pass


class PileGenerationError(WorldError):
    pass


# ---------------------------------------------------------------------------
# static scene description
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Bin:
    """Open box; ``pose`` is the center of the interior floor (axis aligned)."""

    pose: Pose
    interior_dims: tuple[float, float, float]
    wall_compliance: float = 0.002
    wall_thickness: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "interior_dims", tuple(float(d) for d in self.interior_dims))
        if min(self.interior_dims) <= 0:
            raise ValueError("bin interior dims must be positive")
        if self.wall_compliance < 0:
            raise ValueError("wall compliance must be non-negative")
        if not np.allclose(self.pose.rotation, np.eye(3), atol=1e-12):
            raise ValueError("bins must be axis aligned")

    @property
    def floor_z(self) -> float:
        return self.pose.position[2]

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.pose.position[:2]) - np.asarray(self.interior_dims[:2]) / 2

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.pose.position[:2]) + np.asarray(self.interior_dims[:2]) / 2

    @property
    def center_xy(self) -> np.ndarray:
        return np.asarray(self.pose.position[:2])

    def contains_xy(self, xy, margin: float = 0.0) -> bool:
        xy = np.asarray(xy)
        return bool(np.all(xy >= self.lo - margin) and np.all(xy <= self.hi + margin))

    def boxes(self) -> list[tuple[np.ndarray, Pose]]:
        """Floor slab and four walls as (half extents, pose)."""
        cx, cy, z0 = self.pose.position
        lx, ly, lz = self.interior_dims
        w = self.wall_thickness
        out = [(np.array([lx / 2 + w, ly / 2 + w, w / 2]), Pose((cx, cy, z0 - w / 2)))]
        for sx in (-1, 1):
            out.append((np.array([w / 2, ly / 2 + w, lz / 2]), Pose((cx + sx * (lx / 2 + w / 2), cy, z0 + lz / 2))))
        for sy in (-1, 1):
            out.append((np.array([lx / 2, w / 2, lz / 2]), Pose((cx, cy + sy * (ly / 2 + w / 2), z0 + lz / 2))))
        return out


@dataclass(frozen=True)
class ReachableRegion:
    inner_radius: float = 0.40
    outer_radius: float = 0.70
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not 0 < self.inner_radius < self.outer_radius:
            raise ValueError("need 0 < inner_radius < outer_radius")

    def contains(self, xy) -> bool:
        r = float(np.hypot(*(np.asarray(xy[:2]) - np.asarray(self.center))))
        return self.inner_radius <= r <= self.outer_radius


@dataclass(frozen=True)
class CameraModel:
    pose: Pose
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_noise_sigma: float = 0.0

    def __post_init__(self):
        if min(self.fx, self.fy, self.cx, self.cy) <= 0:
            raise ValueError("camera intrinsics must be positive")
        if self.width < 32 or self.height < 32:
            raise ValueError("camera resolution must be at least 32x32")
        if self.depth_noise_sigma < 0:
            raise ValueError("depth noise sigma must be non-negative")

    @classmethod
    def overhead(cls, bin: Bin, height: float = 0.6, width: int = 200, rows: int = 160,
                 focal: float = 200.0, depth_noise_sigma: float = 0.0) -> CameraModel:
        """Camera looking straight down at the bin center from ``height`` above its floor."""
        cx, cy, z0 = bin.pose.position
        pose = Pose.from_matrix(np.diag([1.0, -1.0, -1.0]), (cx, cy, z0 + height))
        return cls(pose, focal, focal, width / 2.0, rows / 2.0, width, rows, depth_noise_sigma)


@dataclass(frozen=True)
class WorldParams:
    k_drop: float = 0.15
    approach_tol: float = math.radians(15.0)
    descent_clearance: float = 0.005
    descent_height: float = 0.5
    push_substep: float = 0.001


# ---------------------------------------------------------------------------
# stable poses
# ---------------------------------------------------------------------------

_FACE_UP_ROT = {
    Face.PZ: np.eye(3),
    Face.NZ: axis_angle_matrix((1, 0, 0), math.pi),
    Face.PX: axis_angle_matrix((0, 1, 0), -math.pi / 2),
    Face.NX: axis_angle_matrix((0, 1, 0), math.pi / 2),
    Face.PY: axis_angle_matrix((1, 0, 0), math.pi / 2),
    Face.NY: axis_angle_matrix((1, 0, 0), -math.pi / 2),
}
for _f, _m in _FACE_UP_ROT.items():
    _m[np.abs(_m) < 1e-15] = 0.0
    _m[:] = np.round(_m)


def face_up_rotation(face: Face) -> np.ndarray:
    """Canonical rotation putting model ``face`` up with zero yaw."""
    return _FACE_UP_ROT[Face(face)].copy()


def _wrap(angle: float) -> float:
    a = math.remainder(angle, 2 * math.pi)
    return math.pi if a == -math.pi else a


def stable_rotation(face: Face, yaw: float) -> np.ndarray:
    return rot_z(yaw) @ face_up_rotation(face)


def snap_rotation(rotation) -> tuple[Face, float]:
    """Nearest stable orientation: (face pointing up, yaw)."""
    r = np.asarray(rotation)
    face = face_up_of(r)
    m = r @ face_up_rotation(face).T
    yaw = math.atan2(m[1, 0] - m[0, 1], m[0, 0] + m[1, 1])
    return face, _wrap(yaw)


@dataclass(frozen=True)
class StablePose:
    face_up: Face
    yaw: float
    planar_position: tuple[float, float]
    support_height: float

    def to_pose(self, model: CuboidModel) -> Pose:
        face = Face(self.face_up)
        z = self.support_height + model.dims[face.axis] / 2.0
        x, y = self.planar_position
        return Pose.from_matrix(stable_rotation(face, self.yaw), (x, y, z))

    @classmethod
    def from_pose(cls, model: CuboidModel, pose: Pose, tol: float = 1e-6) -> StablePose:
        r = pose.rotation
        face = face_up_of(r)
        if abs(float(r[2, :] @ face.vector) - 1.0) > tol:
            raise ValueError("pose is not a stable resting pose")
        _, yaw = snap_rotation(r)
        x, y, z = pose.position
        return cls(face, yaw, (x, y), z - model.dims[face.axis] / 2.0)


def is_stable(model: CuboidModel, pose: Pose, tol: float = 1e-9) -> bool:
    try:
        sp = StablePose.from_pose(model, pose, tol=tol)
    except ValueError:
        return False
    return sp.to_pose(model).allclose(pose, atol=tol)


def snap_pose(model: CuboidModel, pose: Pose) -> Pose:
    face, yaw = snap_rotation(pose.rotation)
    return Pose.from_matrix(stable_rotation(face, yaw), pose.position)


# ---------------------------------------------------------------------------
# world state
# ---------------------------------------------------------------------------


class Status(str, enum.Enum):
    RESTING = "resting"
    HELD = "held"
    TRANSFERRED = "transferred"


@dataclass(frozen=True)
class ObjectState:
    id: int
    pose: Pose
    status: Status = Status.RESTING


@dataclass
class WorldState:
    model: CuboidModel
    source: Bin
    goal: Bin
    objects: list[ObjectState]
    rng: np.random.Generator
    reachable: ReachableRegion = field(default_factory=ReachableRegion)
    params: WorldParams = field(default_factory=WorldParams)
    held: int | None = None
    attach_offset: tuple[float, float, float] | None = None
    history: list[dict] = field(default_factory=list)

    @property
    def bins(self) -> tuple[Bin, Bin]:
        return self.source, self.goal

    def copy(self) -> WorldState:
        return replace(
            self,
            objects=list(self.objects),
            rng=copy.deepcopy(self.rng),
            history=list(self.history),
        )

    def obj(self, oid: int) -> ObjectState:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(f"unknown object id {oid}")

    def _set(self, oid: int, **changes) -> None:
        for i, o in enumerate(self.objects):
            if o.id == oid:
                self.objects[i] = replace(o, **changes)
                return
        raise KeyError(f"unknown object id {oid}")

    def resting(self) -> list[ObjectState]:
        return [o for o in self.objects if o.status != Status.HELD]

    def bin_of(self, xy) -> Bin:
        for b in self.bins:
            if b.contains_xy(xy, margin=b.wall_compliance + 1e-6):
                return b
        return min(self.bins, key=lambda b: float(np.linalg.norm(np.asarray(xy[:2]) - b.center_xy)))

    def in_bin(self, b: Bin) -> list[ObjectState]:
        return [o for o in self.resting() if self.bin_of(o.pose.position[:2]) is b]

    def in_goal(self) -> list[ObjectState]:
        return [o for o in self.resting() if self.bin_of(o.pose.position[:2]) is self.goal]


# ---------------------------------------------------------------------------
# box geometry for stable objects
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Slab:
    """Vertical prism of an axis-upright object: rectangle footprint and z interval."""

    center: np.ndarray
    axes: np.ndarray  # 2x2, rows are unit in-plane axes
    half: np.ndarray  # 2
    bottom: float
    top: float

    def moved(self, xy) -> Slab:
        return Slab(np.asarray(xy, dtype=float), self.axes, self.half, self.bottom, self.top)

    def aabb_half(self) -> np.ndarray:
        return np.abs(self.axes.T) @ self.half

    def contains_xy(self, xy, tol: float = 0.0) -> bool:
        d = self.axes @ (np.asarray(xy) - self.center)
        return bool(np.all(np.abs(d) <= self.half + tol))

    def corners(self) -> np.ndarray:
        s = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
        return self.center + (s * self.half) @ self.axes


def slab_of(model: CuboidModel, pose: Pose) -> Slab:
    r = pose.rotation
    face = face_up_of(r)
    u, v = [a for a in range(3) if a != face.axis]
    axes = np.array([r[:2, u], r[:2, v]])
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    h = model.half
    z = pose.position[2]
    return Slab(np.asarray(pose.position[:2]), axes, np.array([h[u], h[v]]), z - h[face.axis], z + h[face.axis])


def z_overlap(a: Slab, b: Slab) -> float:
    return min(a.top, b.top) - max(a.bottom, b.bottom)


def rect_mtv(a: Slab, b: Slab) -> np.ndarray | None:
    """Minimum translation moving ``b`` out of ``a`` (2D SAT), or None if separated."""
    best = None
    best_depth = math.inf
    d = b.center - a.center
    for n in (*a.axes, *b.axes):
        ra = float(np.sum(a.half * np.abs(a.axes @ n)))
        rb = float(np.sum(b.half * np.abs(b.axes @ n)))
        dist = float(d @ n)
        depth = ra + rb - abs(dist)
        if depth <= CONTACT_TOL:
            return None
        if depth < best_depth:
            best_depth = depth
            best = n * (depth if dist >= 0 else -depth)
    return best


def slab_penetration(a: Slab, b: Slab) -> float:
    """Interpenetration depth of two slabs (0 when separated)."""
    if z_overlap(a, b) <= CONTACT_TOL:
        return 0.0
    m = rect_mtv(a, b)
    if m is None:
        return 0.0
    return min(float(np.linalg.norm(m)), z_overlap(a, b))


def wall_penetration(s: Slab, b: Bin) -> float:
    h = s.aabb_half()
    lo = s.center - h
    hi = s.center + h
    return float(max(0.0, *(b.lo - lo), *(hi - b.hi)))


def _clamp_into(s: Slab, b: Bin) -> np.ndarray:
    h = s.aabb_half()
    lo = b.lo + h
    hi = b.hi - h
    c = s.center.copy()
    for i in range(2):
        if lo[i] <= hi[i]:
            c[i] = min(max(c[i], lo[i]), hi[i])
        else:
            c[i] = b.center_xy[i]
    return c


def _with_slab_z(pose: Pose, model: CuboidModel, bottom: float) -> Pose:
    face = face_up_of(pose.rotation)
    x, y, _ = pose.position
    return pose.with_position((x, y, bottom + model.dims[face.axis] / 2.0))


def _support_bottom(world: WorldState, s: Slab, b: Bin, exclude: set[int], ceiling: float = math.inf) -> float:
    z = b.floor_z
    for o in world.resting():
        if o.id in exclude:
            continue
        t = slab_of(world.model, o.pose)
        if t.top <= ceiling + 1e-9 and t.contains_xy(s.center):
            z = max(z, t.top)
    return z


def _colliders(world: WorldState, s: Slab, exclude: set[int], positions: dict | None = None) -> list[tuple[int, Slab]]:
    out = []
    for o in world.resting():
        if o.id in exclude:
            continue
        t = slab_of(world.model, o.pose)
        if positions is not None and o.id in positions:
            t = t.moved(positions[o.id])
        if z_overlap(s, t) > CONTACT_TOL and rect_mtv(t, s) is not None:
            out.append((o.id, t))
    return out


def _settle(world: WorldState, oid: int, pose: Pose, slide: bool = True, clamp: bool = True) -> Pose | None:
    """Drop ``pose`` onto its support in the bin below it, sliding off neighbors.

    Returns None when ``slide`` is False and the settled pose collides.
    """
    model = world.model
    exclude = {oid}
    s = slab_of(model, pose)
    b = world.bin_of(s.center)
    for _ in range(64):
        if clamp:
            s = s.moved(_clamp_into(s, b))
        bottom = _support_bottom(world, s, b, exclude)
        s = Slab(s.center, s.axes, s.half, bottom, bottom + (s.top - s.bottom))
        hits = _colliders(world, s, exclude)
        if not hits:
            return _with_slab_z(pose.with_position((*s.center, 0.0)), model, bottom)
        if not slide:
            return None
        mtvs = [rect_mtv(t, s) for _, t in hits]
        k = int(np.argmax([np.linalg.norm(m) for m in mtvs]))
        m = mtvs[k]
        s = s.moved(s.center + m + SEPARATION_SLOP * m / np.linalg.norm(m))
    # crowded: stack on top of whatever it still overlaps
    for _ in range(len(world.objects) + 1):
        hits = _colliders(world, s, exclude)
        if not hits:
            break
        bottom = max(t.top for _, t in hits)
        s = Slab(s.center, s.axes, s.half, bottom, bottom + (s.top - s.bottom))
    return _with_slab_z(pose.with_position((*s.center, 0.0)), model, s.bottom)


def _restabilize(world: WorldState, b: Bin) -> None:
    """Let objects whose support moved away drop onto what is below them."""
    objs = sorted(world.in_bin(b), key=lambda o: (slab_of(world.model, o.pose).bottom, o.id))
    for o in objs:
        o = world.obj(o.id)
        s = slab_of(world.model, o.pose)
        bottom = _support_bottom(world, s, b, {o.id}, ceiling=s.bottom)
        if bottom < s.bottom - 1e-12:
            pose = _with_slab_z(o.pose, world.model, bottom)
            s2 = slab_of(world.model, pose)
            if _colliders(world, s2, {o.id}):
                pose = _settle(world, o.id, pose, slide=True, clamp=True)
            world._set(o.id, pose=pose)


def _status_for(world: WorldState, pose: Pose) -> Status:
    return Status.TRANSFERRED if world.bin_of(pose.position[:2]) is world.goal else Status.RESTING


# ---------------------------------------------------------------------------
# pile generation
# ---------------------------------------------------------------------------


def generate_pile(seed: int, n: int, model: CuboidModel, bin: Bin, goal: Bin | None = None,
                  reachable: ReachableRegion | None = None, params: WorldParams | None = None,
                  faces=None, max_attempts: int = 2000) -> WorldState:
    """Drop ``n`` objects at random stable poses into ``bin`` (rejection sampled)."""
    if n < 0:
        raise ValueError("object count must be non-negative")
    if n * model.volume > 0.8 * float(np.prod(bin.interior_dims)):
        raise ValueError("pile does not fit: n * object volume exceeds 80% of the bin interior")
    faces = [Face(f) for f in (faces or list(Face))]
    if goal is None:
        goal = bin
    world = WorldState(
        model=model,
        source=bin,
        goal=goal,
        objects=[],
        rng=np.random.default_rng(seed),
        reachable=reachable or ReachableRegion(),
        params=params or WorldParams(),
    )
    rng = world.rng
    for oid in range(n):
        for _ in range(max_attempts):
            face = faces[int(rng.integers(len(faces)))]
            yaw = float(rng.uniform(-math.pi, math.pi))
            rot = stable_rotation(face, yaw)
            s = slab_of(model, Pose.from_matrix(rot))
            h = s.aabb_half()
            lo, hi = bin.lo + h, bin.hi - h
            if np.any(lo > hi):
                continue
            xy = rng.uniform(lo, hi)
            s = s.moved(xy)
            bottom = _support_bottom(world, s, bin, set())
            s = Slab(s.center, s.axes, s.half, bottom, bottom + (s.top - s.bottom))
            if s.top > bin.floor_z + bin.interior_dims[2]:
                continue
            if _colliders(world, s, set()):
                continue
            pose = _with_slab_z(Pose.from_matrix(rot, (xy[0], xy[1], 0.0)), model, bottom)
            world.objects.append(ObjectState(oid, pose, Status.RESTING))
            break
        else:
            raise PileGenerationError(f"could not place object {oid} after {max_attempts} attempts")
    return world


# ---------------------------------------------------------------------------
# picking
# ---------------------------------------------------------------------------


def _segment_box_hit(p0, p1, half, pose: Pose) -> bool:
    r = pose.rotation
    a = (np.asarray(p0) - pose.t) @ r
    d = (np.asarray(p1) - np.asarray(p0)) @ r
    t0, t1 = 0.0, 1.0
    for i in range(3):
        if abs(d[i]) < 1e-15:
            if abs(a[i]) > half[i]:
                return False
            continue
        u = (-half[i] - a[i]) / d[i]
        v = (half[i] - a[i]) / d[i]
        if u > v:
            u, v = v, u
        t0, t1 = max(t0, u), min(t1, v)
        if t0 > t1:
            return False
    return True


def pick_infeasibility(world: WorldState, object_id: int, pick_point, approach=(0.0, 0.0, -1.0)) -> str | None:
    """Reason a top-down pick is infeasible, or None when it is feasible."""
    o = world.obj(object_id)
    if o.status == Status.HELD:
        return "object is held"
    a = np.asarray(approach, dtype=float)
    a = a / np.linalg.norm(a)
    if math.acos(max(-1.0, min(1.0, -a[2]))) > world.params.approach_tol + 1e-12:
        return "approach not top-down"
    p = np.asarray(pick_point, dtype=float)
    if not world.reachable.contains(p[:2]):
        return "pick point outside reachable region"
    top = p + np.array([0.0, 0.0, world.params.descent_height])
    pad = world.params.descent_clearance
    for other in world.resting():
        if other.id == object_id:
            continue
        if _segment_box_hit(p, top, world.model.half + pad, other.pose):
            return f"descent obstructed by object {other.id}"
    return None


def is_pick_feasible(world: WorldState, object_id: int, pick_point, approach=(0.0, 0.0, -1.0)) -> bool:
    return pick_infeasibility(world, object_id, pick_point, approach) is None


def _first_hit_down(world: WorldState, xy, z_from: float):
    """First resting object hit by a vertical ray at ``xy``: (id, hit point) or None."""
    o_ray = np.array([xy[0], xy[1], z_from])
    d = np.array([0.0, 0.0, -1.0])
    best = None
    for o in world.resting():
        t = _ray_box(o_ray[None], d[None], world.model.half, o.pose)
        if np.isfinite(t[0][0]) and (best is None or t[0][0] < best[0]):
            best = (t[0][0], o.id, t[1][0])
    if best is None:
        return None
    return best[1], o_ray + best[0] * d, best[2]


def apply_pick(world: WorldState, object_id: int, pick_point, approach=(0.0, 0.0, -1.0)) -> WorldState:
    if world.held is not None:
        raise PickError("already holding")
    reason = pick_infeasibility(world, object_id, pick_point, approach)
    if reason is not None:
        raise PickError(reason)
    p = np.asarray(pick_point, dtype=float)
    hit = _first_hit_down(world, p[:2], p[2] + world.params.descent_height)
    if hit is None or hit[0] != object_id or hit[2][2] < 0.5:
        raise PickError("no suction contact")
    o = world.obj(object_id)
    new = world.copy()
    contact = hit[1]
    offset = o.pose.inverse().transform_points(contact[None])[0]
    new._set(object_id, status=Status.HELD)
    new.held = object_id
    new.attach_offset = tuple(float(c) for c in offset)
    _restabilize(new, world.bin_of(o.pose.position[:2]))
    new.history.append({"action": "pick", "object_id": object_id, "pick_point": [float(c) for c in p],
                        "approach": [float(c) for c in approach]})
    return new


def apply_carry(world: WorldState, pose: Pose) -> WorldState:
    """Move the held object to ``pose`` (orientation snapped upright); no contact physics."""
    if world.held is None:
        raise WorldError("nothing held")
    new = world.copy()
    new._set(world.held, pose=snap_pose(world.model, pose))
    new.history.append({"action": "carry", "pose": _pose_json(pose)})
    return new


def drop_scatter_sigma(params: WorldParams, drop_height: float) -> float:
    return params.k_drop * drop_height


def apply_release(world: WorldState, drop_pose: Pose, drop_height: float, tumble: bool = False) -> WorldState:
    """Release the held object above ``drop_pose``; it lands in the nearest stable pose.

    With ``tumble`` the landing face and yaw are redrawn, as for an object
    tossed back into a pile.
    """
    if world.held is None:
        raise WorldError("nothing held")
    if drop_height < 0:
        raise ValueError("drop height must be non-negative")
    new = world.copy()
    oid = world.held
    face, yaw = snap_rotation(drop_pose.rotation)
    if tumble:
        face = list(Face)[int(new.rng.integers(6))]
        yaw = float(new.rng.uniform(-math.pi, math.pi))
    sigma = drop_scatter_sigma(world.params, drop_height)
    noise = new.rng.normal(0.0, 1.0, 2) * sigma
    x, y, z = drop_pose.position
    pose = Pose.from_matrix(stable_rotation(face, yaw), (x + noise[0], y + noise[1], z))
    new._set(oid, status=Status.RESTING)
    new.held = None
    new.attach_offset = None
    pose = _settle(new, oid, pose, slide=True, clamp=True)
    new._set(oid, pose=pose, status=_status_for(new, pose))
    new.history.append({"action": "release", "pose": _pose_json(drop_pose), "drop_height": float(drop_height),
                        "tumble": bool(tumble)})
    return new


# ---------------------------------------------------------------------------
# pushing
# ---------------------------------------------------------------------------


def _push_step(world: WorldState, b: Bin, slabs: dict[int, Slab], pusher: int, delta: np.ndarray):
    pos = {k: s.center.copy() for k, s in slabs.items()}
    pos[pusher] = pos[pusher] + delta
    queue = [pusher]
    visits = 0
    while queue and visits < 20 * len(slabs) + 20:
        a = queue.pop(0)
        visits += 1
        sa = slabs[a].moved(pos[a])
        for k in sorted(slabs):
            if k == a or k == pusher:
                continue
            sk = slabs[k].moved(pos[k])
            if z_overlap(sa, sk) <= CONTACT_TOL:
                continue
            m = rect_mtv(sa, sk)
            if m is None:
                continue
            pos[k] = pos[k] + m
            queue.append(k)
    for k, p in pos.items():
        if np.array_equal(p, slabs[k].center):
            continue
        if wall_penetration(slabs[k].moved(p), b) > b.wall_compliance + 1e-12:
            return None
    return pos


def apply_push(world: WorldState, object_id: int, direction, distance: float) -> WorldState:
    """Push an object along ``direction``; neighbors in contact are shoved along.

    Walls yield by at most their compliance; beyond that the push stops.
    """
    if distance < 0:
        raise ValueError("push distance must be non-negative")
    o = world.obj(object_id)
    d = np.asarray(direction, dtype=float)[:2]
    d = d / np.linalg.norm(d)
    start = np.asarray(o.pose.position[:2])
    if not (world.reachable.contains(start) and world.reachable.contains(start + d * distance)):
        raise PushError("unreachable push line")
    new = world.copy()
    if distance == 0:
        return new
    b = world.bin_of(start)
    members = [x for x in world.objects if x.id == object_id or (x.status != Status.HELD and world.bin_of(x.pose.position[:2]) is b)]
    slabs = {x.id: slab_of(world.model, x.pose) for x in members}
    remaining = float(distance)
    sub = world.params.push_substep
    while remaining > 1e-15:
        s = min(sub, remaining)
        pos = _push_step(world, b, slabs, object_id, d * s)
        if pos is None:
            lo, hi = 0.0, s
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if _push_step(world, b, slabs, object_id, d * mid) is None:
                    hi = mid
                else:
                    lo = mid
            pos = _push_step(world, b, slabs, object_id, d * lo)
            remaining = 0.0
        else:
            remaining -= s
        slabs = {k: slabs[k].moved(pos[k]) for k in slabs}
    for k, s in slabs.items():
        p = new.obj(k).pose
        if not np.array_equal(s.center, np.asarray(p.position[:2])):
            new._set(k, pose=p.with_position((s.center[0], s.center[1], p.position[2])))
    _restabilize(new, b)
    for x in new.objects:
        if x.status != Status.HELD:
            new._set(x.id, status=_status_for(new, x.pose))
    new.history.append({"action": "push", "object_id": object_id, "direction": [float(c) for c in d],
                        "distance": float(distance)})
    return new


# ---------------------------------------------------------------------------
# toppling
# ---------------------------------------------------------------------------


def topple_rotation(rotation, lateral_direction) -> tuple[np.ndarray, Face]:
    """Roll an upright orientation a quarter turn over the bottom edge facing ``lateral_direction``.

    Returns the new rotation and the model face that ends up on top, which
    is the side face pointing against the lateral motion.
    """
    r = np.asarray(rotation)
    up = face_up_of(r)
    d = np.asarray(lateral_direction, dtype=float)[:2]
    d = d / np.linalg.norm(d)
    best = None
    for f in Face:
        if not f.is_adjacent(up):
            continue
        w = r @ f.vector
        score = float(-(d @ w[:2]))
        if best is None or score > best[0] + 1e-12:
            best = (score, f, w)
    _, face, w = best
    u = -w.copy()
    u[2] = 0.0
    u /= np.linalg.norm(u)
    axis = np.cross([0.0, 0.0, 1.0], u)
    new = axis_angle_matrix(axis, math.pi / 2) @ r
    f2, yaw = snap_rotation(new)
    assert f2 == face
    return stable_rotation(face, yaw), face


def apply_topple(world: WorldState, object_id: int, lateral_direction, place_xy=None) -> WorldState:
    """Set the held object down at ``place_xy`` and roll it in ``lateral_direction``."""
    if world.held != object_id:
        raise ToppleError("object is not held")
    o = world.obj(object_id)
    model = world.model
    start = snap_pose(model, o.pose)
    up = face_up_of(start.rotation)
    rot, face = topple_rotation(start.rotation, lateral_direction)
    w = start.rotation @ face.vector
    u = -w[:2] / np.linalg.norm(w[:2])
    place = np.asarray(place_xy if place_xy is not None else start.position[:2], dtype=float)
    shift = model.dims[face.axis] / 2.0 + model.dims[up.axis] / 2.0
    xy = place + u * shift
    new = world.copy()
    new._set(object_id, status=Status.RESTING)
    new.held = None
    new.attach_offset = None
    pose = Pose.from_matrix(rot, (xy[0], xy[1], 0.0))
    b = new.bin_of(xy)
    if wall_penetration(slab_of(model, pose), b) > 1e-12:
        raise ToppleError("insufficient clearance")
    settled = _settle(new, object_id, pose, slide=False, clamp=False)
    if settled is None:
        raise ToppleError("insufficient clearance")
    new._set(object_id, pose=settled, status=_status_for(new, settled))
    new.history.append({"action": "topple", "object_id": object_id,
                        "lateral_direction": [float(c) for c in np.asarray(lateral_direction)[:2]],
                        "place_xy": [float(c) for c in place]})
    return new


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def _ray_box(origins, dirs, half, pose: Pose):
    """Entry distance and world normal of rays against a box (inf where missed)."""
    r = pose.rotation
    o = (np.asarray(origins) - pose.t) @ r
    d = np.asarray(dirs) @ r
    half = np.asarray(half)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-half - o) * inv
        t2 = (half - o) * inv
    tlo = np.fmin(t1, t2)
    thi = np.fmax(t1, t2)
    # rays parallel to a slab: inside -> unbounded, outside -> miss
    par = d == 0
    inside = np.abs(o) <= half
    tlo = np.where(par, np.where(inside, -np.inf, np.inf), tlo)
    thi = np.where(par, np.where(inside, np.inf, -np.inf), thi)
    tmin = tlo.max(axis=1)
    tmax = thi.min(axis=1)
    hit = (tmax >= tmin) & (tmin > 0)
    axis = np.argmax(tlo, axis=1)
    n_local = np.zeros_like(o)
    rows = np.arange(len(o))
    n_local[rows, axis] = -np.sign(d[rows, axis])
    normals = n_local @ r.T
    t = np.where(hit, tmin, np.inf)
    return t, normals


def _pixels_covering(camera: CameraModel, half, pose: Pose) -> np.ndarray | None:
    """Flat pixel indices whose rays may hit the box (conservative), or None if off-screen."""
    corners = pose.transform_points(np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]) * half)
    local = (corners - camera.pose.t) @ camera.pose.rotation
    if np.any(local[:, 2] <= 1e-9):
        u0, u1, v0, v1 = 0, camera.width - 1, 0, camera.height - 1
    else:
        u = camera.fx * local[:, 0] / local[:, 2] + camera.cx
        v = camera.fy * local[:, 1] / local[:, 2] + camera.cy
        u0 = max(0, int(math.floor(u.min())) - 1)
        u1 = min(camera.width - 1, int(math.ceil(u.max())) + 1)
        v0 = max(0, int(math.floor(v.min())) - 1)
        v1 = min(camera.height - 1, int(math.ceil(v.max())) + 1)
        if u0 > u1 or v0 > v1:
            return None
    vv, uu = np.mgrid[v0:v1 + 1, u0:u1 + 1]
    return (vv * camera.width + uu).ravel()


@dataclass
class PointCloud:
    points: np.ndarray
    normals: np.ndarray
    labels: np.ndarray
    pixels: np.ndarray
    shape: tuple[int, int] = (0, 0)

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, mask) -> PointCloud:
        return PointCloud(self.points[mask], self.normals[mask], self.labels[mask], self.pixels[mask], self.shape)

    @classmethod
    def from_points(cls, points, normals=None, labels=None) -> PointCloud:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        n = len(pts)
        normals = np.tile([0.0, 0.0, 1.0], (n, 1)) if normals is None else np.asarray(normals, dtype=float)
        labels = -np.ones(n, dtype=int) if labels is None else np.asarray(labels, dtype=int)
        return cls(pts, normals, labels, np.zeros((n, 2), dtype=int))


def render_point_cloud(world: WorldState, camera: CameraModel, seed: int, include_bins: bool = True) -> PointCloud:
    """Ray-cast every pixel against object and bin boxes with z-buffering.

    Labels are object ids; bin and floor points get -1.  Depth noise is
    applied along the optical axis.
    """
    us, vs = np.meshgrid(np.arange(camera.width), np.arange(camera.height))
    us = us.ravel()
    vs = vs.ravel()
    d_cam = np.stack([(us + 0.5 - camera.cx) / camera.fx, (vs + 0.5 - camera.cy) / camera.fy, np.ones(us.size)], axis=1)
    d_cam /= np.linalg.norm(d_cam, axis=1, keepdims=True)
    rc = camera.pose.rotation
    dirs = d_cam @ rc.T
    origin = camera.pose.t
    boxes = [(world.model.half, o.pose, o.id) for o in world.resting()]
    if include_bins:
        for b in world.bins:
            boxes += [(h, p, -1) for h, p in b.boxes()]
    best_t = np.full(len(dirs), np.inf)
    normals = np.zeros_like(dirs)
    labels = np.full(len(dirs), -1, dtype=int)
    for half, pose, label in boxes:
        rows = _pixels_covering(camera, half, pose)
        if rows is None:
            continue
        t, n = _ray_box(np.broadcast_to(origin, (len(rows), 3)), dirs[rows], half, pose)
        closer = t < best_t[rows]
        sel = rows[closer]
        best_t[sel] = t[closer]
        normals[sel] = n[closer]
        labels[sel] = label
    hit = np.isfinite(best_t)
    depth = best_t[hit] * d_cam[hit, 2]
    if camera.depth_noise_sigma > 0:
        rng = np.random.default_rng(seed)
        depth = depth + rng.normal(0.0, camera.depth_noise_sigma, depth.shape)
    pts = origin + dirs[hit] * (depth / d_cam[hit, 2])[:, None]
    pixels = np.stack([vs[hit], us[hit]], axis=1)
    return PointCloud(pts, normals[hit], labels[hit], pixels, (camera.height, camera.width))


def write_ply(cloud: PointCloud, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(cloud)}\n")
        for name in ("x", "y", "z", "nx", "ny", "nz"):
            fh.write(f"property float {name}\n")
        fh.write("property int label\nend_header\n")
        for p, n, lab in zip(cloud.points, cloud.normals, cloud.labels):
            fh.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {n[0]:.6f} {n[1]:.6f} {n[2]:.6f} {int(lab)}\n")


def read_ply(path) -> PointCloud:
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    end = lines.index("end_header")
    n = next(int(line.split()[2]) for line in lines[:end] if line.startswith("element vertex"))
    rows = [line.split() for line in lines[end + 1:end + 1 + n]]
    arr = np.array([[float(v) for v in r[:6]] for r in rows]).reshape(-1, 6)
    labels = np.array([int(r[6]) for r in rows], dtype=int)
    return PointCloud(arr[:, :3], arr[:, 3:6], labels, np.zeros((n, 2), dtype=int))


# ---------------------------------------------------------------------------
# snapshots and replay
# ---------------------------------------------------------------------------


def _pose_json(p: Pose) -> dict:
    return {"position": [float(c) for c in p.position], "orientation": [float(c) for c in p.orientation]}


def _pose_from(d: dict) -> Pose:
    return Pose(tuple(d["position"]), tuple(d["orientation"]))


def _bin_json(b: Bin) -> dict:
    return {"pose": _pose_json(b.pose), "interior_dims": list(b.interior_dims),
            "wall_compliance": b.wall_compliance, "wall_thickness": b.wall_thickness}


def _bin_from(d: dict) -> Bin:
    return Bin(_pose_from(d["pose"]), tuple(d["interior_dims"]), d["wall_compliance"], d["wall_thickness"])


def snapshot(world: WorldState) -> str:
    """Versioned, key-sorted JSON text of the full world state (history excluded)."""
    doc = {
        "format": "packsim-world",
        "version": SNAPSHOT_VERSION,
        "model": {"dims": list(world.model.dims), "pitch": world.model.pitch},
        "source": _bin_json(world.source),
        "goal": _bin_json(world.goal),
        "reachable": {"inner_radius": world.reachable.inner_radius, "outer_radius": world.reachable.outer_radius,
                      "center": list(world.reachable.center)},
        "params": {k: getattr(world.params, k) for k in WorldParams.__dataclass_fields__},
        "objects": [{"id": o.id, "pose": _pose_json(o.pose), "status": o.status.value} for o in world.objects],
        "held": world.held,
        "attach_offset": None if world.attach_offset is None else list(world.attach_offset),
        "rng": world.rng.bit_generator.state,
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def load_snapshot(text: str) -> WorldState:
    doc = json.loads(text)
    if doc.get("format") != "packsim-world":
        raise ValueError("not a world snapshot")
    if doc.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"snapshot version {doc.get('version')} != supported {SNAPSHOT_VERSION}")
    rng = np.random.Generator(getattr(np.random, doc["rng"]["bit_generator"])())
    rng.bit_generator.state = doc["rng"]
    r = doc["reachable"]
    return WorldState(
        model=CuboidModel.from_dims(doc["model"]["dims"], doc["model"]["pitch"]),
        source=_bin_from(doc["source"]),
        goal=_bin_from(doc["goal"]),
        objects=[ObjectState(o["id"], _pose_from(o["pose"]), Status(o["status"])) for o in doc["objects"]],
        rng=rng,
        reachable=ReachableRegion(r["inner_radius"], r["outer_radius"], tuple(r["center"])),
        params=WorldParams(**doc["params"]),
        held=doc["held"],
        attach_offset=None if doc["attach_offset"] is None else tuple(doc["attach_offset"]),
    )


def apply_action(world: WorldState, record: dict) -> WorldState:
    """Re-apply one history record."""
    kind = record["action"]
    if kind == "pick":
        return apply_pick(world, record["object_id"], record["pick_point"], record["approach"])
    if kind == "carry":
        return apply_carry(world, _pose_from(record["pose"]))
    if kind == "release":
        return apply_release(world, _pose_from(record["pose"]), record["drop_height"], record["tumble"])
    if kind == "push":
        return apply_push(world, record["object_id"], record["direction"], record["distance"])
    if kind == "topple":
        return apply_topple(world, record["object_id"], record["lateral_direction"], record["place_xy"])
    raise ValueError(f"unknown action {kind!r}")


def max_interpenetration(world: WorldState) -> float:
    """Largest pairwise slab penetration among resting objects."""
    slabs = [slab_of(world.model, o.pose) for o in world.resting()]
    worst = 0.0
    for i in range(len(slabs)):
        for j in range(i + 1, len(slabs)):
            worst = max(worst, slab_penetration(slabs[i], slabs[j]))
    return worst
