"""Pose algebra, cuboid models, symmetry-aware pose distance and packing metrics."""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

SYMMETRY_DIM_TOL = 1e-6


# ---------------------------------------------------------------------------
# quaternions, (w, x, y, z) order
# ---------------------------------------------------------------------------


def quat_mul(a, b) -> tuple[float, float, float, float]:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def quat_normalize(q) -> tuple[float, float, float, float]:
    n = math.sqrt(sum(c * c for c in q))
    if n == 0.0:
        raise ValueError("zero quaternion")
    return tuple(float(c) / n for c in q)


def quat_from_axis_angle(axis, angle: float) -> tuple[float, float, float, float]:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    s = math.sin(angle / 2.0)
    return (math.cos(angle / 2.0), float(axis[0] * s), float(axis[1] * s), float(axis[2] * s))


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m) -> tuple[float, float, float, float]:
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = (0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = ((m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = ((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s)
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = ((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s)
    q = quat_normalize(q)
    # canonical hemisphere keeps serialized poses stable
    if q[0] < 0:
        q = tuple(-c for c in q)
    return q


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    return quat_to_matrix(quat_from_axis_angle(axis, angle))


@dataclass(frozen=True)
class Pose:
    """Rigid transform: ``x_world = R(orientation) @ x_local + position``."""

    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    orientation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(c) for c in self.position))
        q = tuple(float(c) for c in self.orientation)
        n = math.sqrt(sum(c * c for c in q))
        if abs(n - 1.0) > 1e-9:
            q = quat_normalize(q)
        object.__setattr__(self, "orientation", q)

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @classmethod
    def from_matrix(cls, rotation, position=(0.0, 0.0, 0.0)) -> Pose:
        return cls(tuple(np.asarray(position, dtype=float)), matrix_to_quat(rotation))

    @classmethod
    def from_xyz_yaw(cls, x: float, y: float, z: float, yaw: float = 0.0) -> Pose:
        return cls((x, y, z), quat_from_axis_angle((0, 0, 1), yaw))

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    @property
    def t(self) -> np.ndarray:
        return np.array(self.position)

    def compose(self, other: Pose) -> Pose:
        pos = self.rotation @ np.asarray(other.position) + np.asarray(self.position)
        q = quat_mul(self.orientation, other.orientation)
        return Pose(tuple(pos), quat_normalize(q))

    __matmul__ = compose

    def inverse(self) -> Pose:
        w, x, y, z = self.orientation
        qi = (w, -x, -y, -z)
        pos = -(quat_to_matrix(qi) @ np.asarray(self.position))
        return Pose(tuple(pos), qi)

    def transform_points(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return pts @ self.rotation.T + np.asarray(self.position)

    def translated(self, delta) -> Pose:
        return Pose(tuple(np.asarray(self.position) + np.asarray(delta, dtype=float)), self.orientation)

    def with_position(self, position) -> Pose:
        return Pose(tuple(position), self.orientation)

    def allclose(self, other: Pose, atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.position, other.position, atol=atol)
            and np.allclose(self.rotation, other.rotation, atol=atol)
        )


# ---------------------------------------------------------------------------
# faces of a cuboid
# ---------------------------------------------------------------------------


class Face(str, enum.Enum):
    PX = "+X"
    NX = "-X"
    PY = "+Y"
    NY = "-Y"
    PZ = "+Z"
    NZ = "-Z"

    @property
    def axis(self) -> int:
        return "XYZ".index(self.value[1])

    @property
    def sign(self) -> float:
        return 1.0 if self.value[0] == "+" else -1.0

    @property
    def vector(self) -> np.ndarray:
        v = np.zeros(3)
        v[self.axis] = self.sign
        return v

    @property
    def opposite(self) -> Face:
        return Face(("-" if self.sign > 0 else "+") + self.value[1])

    def is_adjacent(self, other: Face) -> bool:
        return self.axis != other.axis

    @classmethod
    def from_vector(cls, v) -> Face:
        v = np.asarray(v, dtype=float)
        i = int(np.argmax(np.abs(v)))
        return cls(("+" if v[i] > 0 else "-") + "XYZ"[i])


def face_up_of(rotation) -> Face:
    """Model face whose outward normal points most nearly world-up."""
    return Face.from_vector(np.asarray(rotation)[2, :])


# ---------------------------------------------------------------------------
# cuboid model
# ---------------------------------------------------------------------------


def _axis_rotations() -> list[np.ndarray]:
    mats = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            m = np.zeros((3, 3))
            for row, col in enumerate(perm):
                m[row, col] = signs[row]
            if np.linalg.det(m) > 0:
                mats.append(m)
    return mats


_AXIS_ROTATIONS = _axis_rotations()


def cuboid_symmetry_group(dims, tol: float = SYMMETRY_DIM_TOL) -> list[tuple[float, float, float, float]]:
    """Proper rotations mapping a centered box of extents ``dims`` onto itself."""
    dims = np.asarray(dims, dtype=float)
    group = []
    for m in _AXIS_ROTATIONS:
        if np.all(np.abs(np.abs(m) @ dims - dims) <= tol):
            group.append(matrix_to_quat(m))
    # identity first
    group.sort(key=lambda q: (-q[0], q[1:]))
    return group


def _face_grid(dims, face: Face, pitch: float) -> np.ndarray:
    h = np.asarray(dims, dtype=float) / 2.0
    u_ax, v_ax = [a for a in range(3) if a != face.axis]
    nu = max(1, int(round(dims[u_ax] / pitch)))
    nv = max(1, int(round(dims[v_ax] / pitch)))
    us = np.linspace(-h[u_ax], h[u_ax], nu + 1)
    vs = np.linspace(-h[v_ax], h[v_ax], nv + 1)
    # mirror exactly so the sample set is closed under the box symmetries
    us = 0.5 * (us - us[::-1])
    vs = 0.5 * (vs - vs[::-1])
    uu, vv = np.meshgrid(us, vs, indexing="ij")
    pts = np.zeros((uu.size, 3))
    pts[:, u_ax] = uu.ravel()
    pts[:, v_ax] = vv.ravel()
    pts[:, face.axis] = face.sign * h[face.axis]
    center = np.zeros((1, 3))
    center[0, face.axis] = face.sign * h[face.axis]
    return np.vstack([pts, center])


@dataclass(frozen=True, eq=False)
class CuboidModel:
    dims: tuple[float, float, float]
    points: np.ndarray = field(repr=False)
    pick_scores: np.ndarray = field(repr=False)
    symmetry_group: list = field(repr=False)
    face_samples: dict = field(repr=False)
    pitch: float = 0.01

    @classmethod
    def from_dims(cls, dims, pitch: float = 0.01) -> CuboidModel:
        dims = tuple(float(d) for d in dims)
        if len(dims) != 3 or min(dims) <= 0:
            raise ValueError(f"cuboid dims must be three positive extents, got {dims}")
        keyed: dict[tuple, int] = {}
        pts: list[np.ndarray] = []
        faces: dict[Face, list[int]] = {}
        for face in Face:
            idx = []
            for p in _face_grid(dims, face, pitch):
                key = tuple(np.round(p, 12))
                if key not in keyed:
                    keyed[key] = len(pts)
                    pts.append(p)
                if keyed[key] not in idx:
                    idx.append(keyed[key])
            faces[face] = idx
        points = np.array(pts)
        points.setflags(write=False)
        scores = np.linalg.norm(points, axis=1)
        scores.setflags(write=False)
        face_samples = {f: np.array(sorted(i), dtype=int) for f, i in faces.items()}
        return cls(dims, points, scores, cuboid_symmetry_group(dims), face_samples, pitch)

    @property
    def half(self) -> np.ndarray:
        return np.asarray(self.dims) / 2.0

    @property
    def volume(self) -> float:
        return float(np.prod(self.dims))

    @property
    def corners(self) -> np.ndarray:
        h = self.half
        return np.array(list(itertools.product(*[(-a, a) for a in h])))

    def surface_samples(self) -> list[tuple[np.ndarray, float]]:
        return [(p, float(s)) for p, s in zip(self.points, self.pick_scores)]

    def face_points(self, face: Face) -> tuple[np.ndarray, np.ndarray]:
        idx = self.face_samples[Face(face)]
        return self.points[idx], self.pick_scores[idx]

    def face_extents(self, face: Face) -> tuple[float, float]:
        """Full extents of ``face`` along its two in-plane model axes (ascending axis order)."""
        u, v = [a for a in range(3) if a != Face(face).axis]
        return self.dims[u], self.dims[v]


# ---------------------------------------------------------------------------
# distance and goal predicate
# ---------------------------------------------------------------------------


def pose_distance_symmetric(model: CuboidModel, p1: Pose, p2: Pose) -> float:
    """Mean sample displacement between two poses, minimised over the box symmetries."""
    a = p1.transform_points(model.points)
    best = math.inf
    for s in model.symmetry_group:
        b = p2.compose(Pose((0.0, 0.0, 0.0), s)).transform_points(model.points)
        d = float(np.mean(np.linalg.norm(a - b, axis=1)))
        best = min(best, d)
    return best


@dataclass(frozen=True)
class Arrangement:
    targets: tuple
    labeled: bool = False
    epsilon: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    def __len__(self) -> int:
        return len(self.targets)


def max_bipartite_matching(adj: list[list[int]], n_right: int) -> int:
    """Size of a maximum matching via augmenting paths; ``adj[i]`` lists the right nodes of left node i."""
    match_right = [-1] * n_right

    def augment(u: int, seen: list[bool]) -> bool:
        for v in adj[u]:
            if seen[v]:
                continue
            seen[v] = True
            if match_right[v] < 0 or augment(match_right[v], seen):
                match_right[v] = u
                return True
        return False

    size = 0
    for u in range(len(adj)):
        if augment(u, [False] * n_right):
            size += 1
    return size


def satisfies_goal(arr: Arrangement, model: CuboidModel, placed) -> bool:
    placed = list(placed)
    targets = arr.targets
    if arr.labeled:
        if len(placed) < len(targets):
            return False
        return all(
            pose_distance_symmetric(model, placed[j], t) < arr.epsilon for j, t in enumerate(targets)
        )
    if len(placed) < len(targets):
        return False
    adj = [
        [i for i, p in enumerate(placed) if pose_distance_symmetric(model, p, t) < arr.epsilon]
        for t in targets
    ]
    return max_bipartite_matching(adj, len(placed)) == len(targets)


def expand_model(model: CuboidModel, eps: float) -> CuboidModel:
    if eps < 0:
        raise ValueError(f"expansion must be non-negative, got {eps}")
    return CuboidModel.from_dims(tuple(d + 2.0 * eps for d in model.dims), model.pitch)


# ---------------------------------------------------------------------------
# boxes and voxels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AABB:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(c) for c in self.lo))
        object.__setattr__(self, "hi", tuple(float(c) for c in self.hi))
        if any(h < l for l, h in zip(self.lo, self.hi)):
            raise ValueError("AABB hi must not be below lo")

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.hi) - np.asarray(self.lo)


def points_in_box(points, half, pose: Pose, pad: float = 0.0) -> np.ndarray:
    """Boolean mask of points inside the (closed) box of half-extents ``half`` placed at ``pose``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    local = (pts - np.asarray(pose.position)) @ pose.rotation
    return np.all(np.abs(local) <= np.asarray(half) + pad, axis=1)


@dataclass
class VoxelGrid:
    origin: np.ndarray
    resolution: float
    counts: tuple[int, int, int]
    occupancy: np.ndarray

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("voxel resolution must be positive")
        if self.occupancy.size != int(np.prod(self.counts)):
            raise ValueError("occupancy length does not match voxel counts")

    def centers(self) -> np.ndarray:
        idx = np.indices(self.counts).reshape(3, -1).T
        return np.asarray(self.origin) + (idx + 0.5) * self.resolution

    @property
    def occupied_fraction(self) -> float:
        return float(np.count_nonzero(self.occupancy)) / self.occupancy.size


def voxelize(target_volume: AABB, occupiers, resolution: float) -> VoxelGrid:
    if resolution <= 0:
        raise ValueError(f"voxel resolution must be positive, got {resolution}")
    ext = target_volume.extent
    counts = tuple(int(math.floor(e / resolution + 1e-9)) for e in ext)
    if min(counts) < 1:
        raise ValueError("resolution exceeds a target-volume extent")
    grid = VoxelGrid(np.asarray(target_volume.lo), resolution, counts, np.zeros(int(np.prod(counts)), dtype=bool))
    centers = grid.centers()
    for model, pose in occupiers:
        grid.occupancy |= points_in_box(centers, model.half, pose)
    return grid


def voxel_unoccupied_fraction(target_volume: AABB, occupiers, resolution: float) -> float:
    grid = voxelize(target_volume, occupiers, resolution)
    return 1.0 - grid.occupied_fraction


# ---------------------------------------------------------------------------
# support-plane helpers
# ---------------------------------------------------------------------------


def project_to_support_plane(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v[..., :2].copy()


def polygon_exterior_distance(xy, polygon) -> np.ndarray:
    """Distance from each 2D point to a convex polygon (0 inside or on the boundary)."""
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    poly = np.asarray(polygon, dtype=float)
    a = poly
    b = np.roll(poly, -1, axis=0)
    e = b - a
    # orientation independent inside test
    area2 = np.sum(a[:, 0] * b[:, 1] - b[:, 0] * a[:, 1])
    sgn = 1.0 if area2 > 0 else -1.0
    rel = xy[:, None, :] - a[None, :, :]
    cross = e[None, :, 0] * rel[..., 1] - e[None, :, 1] * rel[..., 0]
    inside = np.all(sgn * cross >= 0, axis=1)
    t = np.clip(np.einsum("nkj,kj->nk", rel, e) / np.einsum("kj,kj->k", e, e), 0.0, 1.0)
    closest = a[None] + t[..., None] * e[None]
    d = np.linalg.norm(xy[:, None, :] - closest, axis=2)
    dist = d.min(axis=1)
    dist[inside] = 0.0
    return dist


def polygon_closest_point(xy, polygon) -> np.ndarray:
    xy = np.asarray(xy, dtype=float)
    poly = np.asarray(polygon, dtype=float)
    a = poly
    e = np.roll(poly, -1, axis=0) - a
    t = np.clip(((xy - a) * e).sum(1) / (e * e).sum(1), 0.0, 1.0)
    closest = a + t[:, None] * e
    return closest[np.argmin(np.linalg.norm(closest - xy, axis=1))]


def footprint_pivots(cloud_points, footprint, tol: float = 1e-9) -> np.ndarray:
    """Points whose horizontal projection falls outside ``footprint``, farthest first."""
    pts = np.asarray(cloud_points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return pts
    dist = polygon_exterior_distance(project_to_support_plane(pts), footprint)
    out = np.nonzero(dist > tol)[0]
    order = out[np.argsort(-dist[out], kind="stable")]
    return pts[order]
