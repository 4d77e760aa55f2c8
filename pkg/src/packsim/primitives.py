"""Robustness primitives: toppling, adaptive pushing and fine correction.

The planners read point clouds and return plans; only ``correction_loop``
touches a world, and it does so through ``world.apply_push``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull

from .geom import (
    Arrangement,
    CuboidModel,
    Face,
    Pose,
    face_up_of,
    points_in_box,
    polygon_closest_point,
    polygon_exterior_distance,
)
from .world import (
    Bin,
    CameraModel,
    PointCloud,
    PushError,
    WorldState,
    apply_push,
    render_point_cloud,
    slab_of,
    snap_pose,
    topple_rotation,
)


class PlanningError(Exception):
    pass


class NoTopplePlane(PlanningError):
    def __init__(self, msg: str = "no toppling plane"):
        super().__init__(msg)


class PushPlanDiverged(PlanningError):
    """Raised at ``max_iters``; keeps the per-iteration displacements and last pose for diagnosis."""

    def __init__(self, msg: str = "push planning diverged", displacements=(), last_pose=None):
        super().__init__(msg)
        self.displacements = list(displacements)
        self.last_pose = last_pose


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# toppling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ToppleConfig:
    clearance_factor: float = 1.2
    flat_tol: float = 0.005
    cell: float = 0.005
    candidate_step: float = 0.01
    footprint_margin: float = 0.005


@dataclass(frozen=True)
class TopplePlan:
    place_pose: Pose
    lateral_direction: np.ndarray
    expected_face_up: Face
    clearance_radius: float = 0.0


def _height_map(points, lo, hi, cell):
    n = np.maximum(np.ceil((hi - lo) / cell - 1e-9).astype(int), 1)
    total = np.zeros((n[0], n[1]))
    count = np.zeros((n[0], n[1]))
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    ij = np.floor((pts[:, :2] - lo) / cell).astype(int)
    ok = np.all((ij >= 0) & (ij < n), axis=1)
    # cell mean rather than max: depth noise would bias a max upward
    np.add.at(total, (ij[ok, 0], ij[ok, 1]), pts[ok, 2])
    np.add.at(count, (ij[ok, 0], ij[ok, 1]), 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        hmap = np.where(count > 0, total / count, np.nan)
    return hmap


def plan_topple(cloud: PointCloud | np.ndarray, model: CuboidModel, held_pose: Pose, desired_face_up: Face,
                config: ToppleConfig = ToppleConfig(), region=None) -> TopplePlan:
    """Find a flat, empty patch and the lateral motion that rolls the held object onto ``desired_face_up``.

    ``held_pose`` is the (estimated) pose of the object as it hangs from the
    cup; the motion direction follows the roll rule of ``world.apply_topple``.
    """
    desired = Face(desired_face_up)
    start = snap_pose(model, held_pose)
    current = face_up_of(start.rotation)
    if not desired.is_adjacent(current):
        raise ValueError(f"{desired.value} is not adjacent to the current top face {current.value}")
    w = start.rotation @ desired.vector
    d = -w[:2] / np.linalg.norm(w[:2])
    new_rot, face = topple_rotation(start.rotation, d)
    assert face == desired
    shift = model.dims[desired.axis] / 2.0 + model.dims[current.axis] / 2.0

    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float).reshape(-1, 3)
    if region is None:
        if len(pts) == 0:
            raise NoTopplePlane()
        lo, hi = pts[:, :2].min(axis=0), pts[:, :2].max(axis=0)
    else:
        lo, hi = np.asarray(region[0], dtype=float), np.asarray(region[1], dtype=float)
    cell = config.cell
    hmap = _height_map(pts, lo, hi, cell)
    nx, ny = hmap.shape
    centers_x = lo[0] + (np.arange(nx) + 0.5) * cell
    centers_y = lo[1] + (np.arange(ny) + 0.5) * cell
    u, v = [a for a in range(3) if a != desired.axis]
    area = model.dims[u] * model.dims[v]
    r_req = math.sqrt(config.clearance_factor * area / math.pi)
    stride = max(1, int(round(config.candidate_step / cell)))
    mid = 0.5 * (lo + hi)

    levels: dict[int, np.ndarray] = {}
    cands = []
    for i in range(0, nx, stride):
        for j in range(0, ny, stride):
            z0 = hmap[i, j]
            if np.isnan(z0):
                continue
            key = int(round(z0 / config.flat_tol))
            if key not in levels:
                obstacle = np.isnan(hmap) | (np.abs(hmap - key * config.flat_tol) > config.flat_tol)
                padded = np.pad(obstacle, 1, constant_values=True)
                levels[key] = ndimage.distance_transform_edt(~padded)[1:-1, 1:-1] * cell - 0.5 * cell
            clear = float(levels[key][i, j])
            c = np.array([centers_x[i], centers_y[j]])
            cands.append((-clear, float(np.linalg.norm(c - mid)), i, j, key, c))
    cands.sort(key=lambda t: t[:4])
    gx, gy = np.meshgrid(centers_x, centers_y, indexing="ij")
    grid_xy = np.stack([gx.ravel(), gy.ravel()], axis=1)
    for neg_clear, _, i, j, key, c in cands:
        if -neg_clear < r_req:
            break
        z0 = key * config.flat_tol
        place = c - d * shift
        final = Pose.from_matrix(new_rot, (c[0], c[1], 0.0))
        before = start.with_position((place[0], place[1], 0.0))
        obstacle = np.isnan(hmap) | (np.abs(hmap - z0) > config.flat_tol)
        ok = True
        for pose in (before, final):
            s = slab_of(model, pose)
            local = (grid_xy - s.center) @ s.axes.T
            inside = np.all(np.abs(local) <= s.half + config.footprint_margin, axis=1)
            # footprint reaching beyond the mapped region counts as blocked
            if np.any(np.abs(s.corners() - mid) > (hi - lo) / 2 + 1e-12):
                ok = False
                break
            if np.any(obstacle.ravel()[inside]):
                ok = False
                break
        if ok:
            height = model.dims[current.axis]
            place_pose = start.with_position((place[0], place[1], z0 + height / 2.0))
            return TopplePlan(place_pose, d, desired, -neg_clear)
    raise NoTopplePlane()


# ---------------------------------------------------------------------------
# adaptive pushing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PushPlan:
    pre_push_pose: Pose
    approach_height: float
    push_path: list
    iterations_used: int
    displacements: list = field(default_factory=list, repr=False)

    @property
    def push_vector(self) -> np.ndarray:
        return np.asarray(self.push_path[-1].position) - np.asarray(self.pre_push_pose.position)


def collision_points(points, model: CuboidModel, pose: Pose, eps: float) -> np.ndarray:
    """Indices of cloud points inside the model grown by ``2 * eps`` along each dimension."""
    return np.nonzero(points_in_box(points, model.half, pose, pad=eps))[0]


def displacement_vector(points, model: CuboidModel, pose: Pose, eps: float) -> tuple[np.ndarray, int]:
    """Sum of (model center - collision point) over all collision points, and their count."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    idx = collision_points(pts, model, pose, eps)
    vec = np.asarray(pose.position)[None, :] - pts[idx]
    # exact summation: independent of point order
    return np.array([math.fsum(vec[:, k]) for k in range(3)]), len(idx)


def adaptive_push_plan(cloud, model: CuboidModel, target: Pose, eps: float, step: float = 0.005,
                       max_iters: int = 200, approach_height: float = 0.05, bounds=None) -> PushPlan:
    """Retreat the grown model from cloud collisions until it is free.

    Motion is planar: each iteration moves the model by ``step`` along the
    horizontal unit displacement.  When collisions cancel out exactly, the
    model escapes away from the nearest side of ``bounds`` (lo_xy, hi_xy).
    """
    if eps <= 0 or step <= 0:
        raise ValueError("eps and step must be positive")
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float).reshape(-1, 3)
    pose = target
    history = []
    iters = 0
    while True:
        disp, n = displacement_vector(pts, model, pose, eps)
        if n == 0:
            break
        if iters >= max_iters:
            raise PushPlanDiverged(displacements=history, last_pose=pose)
        history.append(disp)
        horiz = disp[:2]
        norm = float(np.hypot(*horiz))
        if norm < 1e-12:
            horiz = _escape_direction(np.asarray(pose.position[:2]), bounds)
        else:
            horiz = horiz / norm
        pose = pose.translated((horiz[0] * step, horiz[1] * step, 0.0))
        iters += 1
    above = pose.translated((0.0, 0.0, approach_height))
    path = [above, pose]
    length = float(np.linalg.norm(np.asarray(target.position) - np.asarray(pose.position)))
    n_seg = max(1, int(math.ceil(length / 0.01)))
    for k in range(1, n_seg + 1):
        a = k / n_seg
        p = (1 - a) * np.asarray(pose.position) + a * np.asarray(target.position)
        path.append(target.with_position(p))
    path[-1] = target
    return PushPlan(pose, approach_height, path, iters, history)


def _escape_direction(xy, bounds) -> np.ndarray:
    if bounds is None:
        return np.array([1.0, 0.0])
    lo, hi = np.asarray(bounds[0], dtype=float), np.asarray(bounds[1], dtype=float)
    gaps = [xy[0] - lo[0], hi[0] - xy[0], xy[1] - lo[1], hi[1] - xy[1]]
    k = int(np.argmin(gaps))
    return [np.array([1.0, 0.0]), np.array([-1.0, 0.0]), np.array([0.0, 1.0]), np.array([0.0, -1.0])][k]


# ---------------------------------------------------------------------------
# fine correction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CorrectionTolerances:
    normal_tol: float = math.radians(3.0)
    footprint_tol: float = 0.003
    max_correction: float = 0.03
    normal_gain: float | None = None  # default: half the placed object height


@dataclass(frozen=True)
class CorrectiveAction:
    kind: str  # "normal_push" | "footprint_pull"
    object_region: np.ndarray = field(repr=False)
    direction: np.ndarray = field(default_factory=lambda: np.zeros(2))
    distance: float = 0.0
    pivot: np.ndarray | None = None
    target_index: int = -1


def goal_footprint(goal: Arrangement, model: CuboidModel) -> np.ndarray:
    """Convex outline (CCW) of all target footprints."""
    corners = np.vstack([slab_of(model, t).corners() for t in goal.targets])
    hull = ConvexHull(corners)
    return corners[hull.vertices]


def filter_object_points(cloud: PointCloud, bin: Bin, z_margin: float = 0.008, xy_margin: float = 0.004) -> PointCloud:
    """Drop floor and wall points using the known bin geometry."""
    pts = cloud.points
    inside = np.all((pts[:, :2] >= bin.lo + xy_margin) & (pts[:, :2] <= bin.hi - xy_margin), axis=1)
    return cloud.subset(inside & (pts[:, 2] > bin.floor_z + z_margin))


def correction_scan(cloud: PointCloud, goal: Arrangement, model: CuboidModel,
                    tol: CorrectionTolerances = CorrectionTolerances()) -> list[CorrectiveAction]:
    """Compare object points against the goal and list corrective pushes, most urgent first.

    Tilted tops come first (pushed along their projected normal), then
    objects sticking out of the goal footprint (pulled back inside).
    """
    if len(cloud) == 0 or len(goal) == 0:
        return []
    pts, nrm = cloud.points, cloud.normals
    centers = np.array([t.position[:2] for t in goal.targets])
    owner = np.argmin(np.linalg.norm(pts[:, None, :2] - centers[None], axis=2), axis=1)
    height = model.dims[face_up_of(goal.targets[0].rotation).axis]
    gain = tol.normal_gain if tol.normal_gain is not None else 0.5 * height
    polygon = goal_footprint(goal, model)
    ext = polygon_exterior_distance(pts[:, :2], polygon)

    pushes, pulls = [], []
    for j in range(len(goal)):
        sel = np.nonzero(owner == j)[0]
        if len(sel) == 0:
            continue
        up = sel[nrm[sel, 2] > 0.5]
        if len(up):
            n = nrm[up].mean(axis=0)
            n /= np.linalg.norm(n)
            tilt = math.acos(min(1.0, n[2]))
            if tilt > tol.normal_tol:
                lateral = n[:2] / np.linalg.norm(n[:2])
                dist = min(gain * math.asin(min(1.0, float(np.hypot(*n[:2])))), tol.max_correction)
                pushes.append((tilt, j, CorrectiveAction("normal_push", pts[up], lateral, dist,
                                                         pts[up].mean(axis=0), j)))
                continue
        out = sel[ext[sel] > tol.footprint_tol]
        if len(out):
            k = out[np.argmax(ext[out])]
            p = pts[k]
            inward = polygon_closest_point(p[:2], polygon) - p[:2]
            inward /= np.linalg.norm(inward)
            dist = min(float(ext[k]), tol.max_correction)
            pulls.append((float(ext[k]), j, CorrectiveAction("footprint_pull", pts[sel], inward, dist, p, j)))
    pushes.sort(key=lambda t: (-t[0], t[1]))
    pulls.sort(key=lambda t: (-t[0], t[1]))
    return [a for _, _, a in pushes] + [a for _, _, a in pulls]


@dataclass
class CorrectionResult:
    world: WorldState
    actions_taken: int
    timed_out: bool
    log: list = field(default_factory=list)


def _object_at(world: WorldState, point, pad: float = 0.003) -> int | None:
    best = None
    for o in world.in_goal():
        if points_in_box(np.asarray(point)[None], world.model.half, o.pose, pad=pad)[0]:
            d = float(np.linalg.norm(np.asarray(o.pose.position) - point))
            if best is None or d < best[0]:
                best = (d, o.id)
    return None if best is None else best[1]


def correction_loop(world: WorldState, camera: CameraModel, goal: Arrangement,
                    tol: CorrectionTolerances = CorrectionTolerances(), timeout: int = 30,
                    seed: int = 0, on_cloud=None) -> CorrectionResult:
    """Render, scan, apply the first corrective push; repeat until clean or ``timeout`` actions.

    A push that fails to reduce the summed correction distance is undone and
    its object is left alone afterwards, so opposing pulls cannot ping-pong.
    """
    count = 0
    log = []
    it = 0
    skip: set[int] = set()
    prev = None
    while True:
        cloud = render_point_cloud(world, camera, derive_seed(seed, it))
        it += 1
        if on_cloud is not None:
            on_cloud(cloud)
        actions = correction_scan(filter_object_points(cloud, world.goal), goal, world.model, tol)
        score = math.fsum(a.distance for a in actions)
        if prev is not None and score >= prev[1] - 1e-4:
            world, score, actions = prev[0], prev[1], prev[2]
            skip.add(prev[3])
        prev = None
        chosen = None
        for act in actions:
            oid = _object_at(world, act.pivot)
            if oid is not None and oid not in skip:
                chosen = (act, oid)
                break
        if chosen is None:
            return CorrectionResult(world, count, False, log)
        if count >= timeout:
            return CorrectionResult(world, count, True, log)
        act, oid = chosen
        count += 1
        log.append(act)
        try:
            moved = apply_push(world, oid, act.direction, act.distance)
        except PushError:
            skip.add(oid)
            continue
        prev = (world, score, actions, oid)
        world = moved
