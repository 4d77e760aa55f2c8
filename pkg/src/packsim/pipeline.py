"""Pick / topple / place / correct episode loop and the five ablation variants."""

from __future__ import annotations

import enum
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .geom import (
    AABB,
    Arrangement,
    CuboidModel,
    Face,
    Pose,
    satisfies_goal,
    voxel_unoccupied_fraction,
)
from .perception import (
    PoseNoiseConfig,
    SegNoiseConfig,
    estimate_pose,
    local_graspable_point,
    order_candidates,
    segment_instances,
    select_pick_point,
)
from .primitives import (
    CorrectionTolerances,
    NoTopplePlane,
    PushPlanDiverged,
    ToppleConfig,
    adaptive_push_plan,
    correction_loop,
    correction_scan,
    derive_seed,
    filter_object_points,
    plan_topple,
)
from .world import (
    Bin,
    CameraModel,
    PickError,
    PushError,
    ReachableRegion,
    ToppleError,
    WorldParams,
    WorldState,
    apply_carry,
    apply_pick,
    apply_push,
    apply_release,
    apply_topple,
    generate_pile,
    is_pick_feasible,
    render_point_cloud,
    slab_of,
    snapshot,
    stable_rotation,
)


class Variant(str, enum.Enum):
    V1 = "V1"
    V2 = "V2"
    V3 = "V3"
    V4 = "V4"
    V5 = "V5"

    @property
    def correction(self) -> bool:
        return self is Variant.V1

    @property
    def push_to_place(self) -> bool:
        return self in (Variant.V1, Variant.V2)

    @property
    def toppling(self) -> bool:
        return self in (Variant.V1, Variant.V2, Variant.V3)

    @property
    def pose_estimation(self) -> bool:
        return self is not Variant.V5


@dataclass(frozen=True)
class SceneConfig:
    object_dims: tuple[float, float, float] = (0.09, 0.06, 0.03)
    sample_pitch: float = 0.01
    source: Bin = Bin(Pose((0.0, 0.55, 0.0)), (0.35, 0.25, 0.15))
    goal: Bin = Bin(Pose((0.0, -0.55, 0.0)), (0.33, 0.24, 0.10))
    reachable: ReachableRegion = ReachableRegion()
    camera_height: float = 0.6
    camera_focal_px: float = 200.0
    camera_width_px: int = 200
    camera_height_px: int = 160
    pile_faces: tuple[str, ...] = tuple(f.value for f in Face)
    world: WorldParams = WorldParams()

    def model(self) -> CuboidModel:
        return CuboidModel.from_dims(self.object_dims, self.sample_pitch)

    def camera(self, bin: Bin, depth_sigma: float) -> CameraModel:
        return CameraModel.overhead(bin, self.camera_height, self.camera_width_px, self.camera_height_px,
                                    self.camera_focal_px, depth_sigma)


@dataclass(frozen=True)
class PipelineConfig:
    variant: Variant = Variant.V1
    epsilon: float = 0.01
    correction_timeout: int = 30
    seg_noise: SegNoiseConfig = SegNoiseConfig()
    pose_noise: PoseNoiseConfig = PoseNoiseConfig()
    depth_sigma: float = 0.002
    grid: tuple[int, int, int] = (3, 3, 1)
    cup_radius: float = 0.01
    seeds: tuple[int, ...] = tuple(range(10))
    scene: SceneConfig = SceneConfig()
    n_objects: int | None = None
    drop_height: float = 0.05
    drop_back_height: float = 0.10
    push_step: float = 0.005
    push_max_iters: int = 200
    topple: ToppleConfig = ToppleConfig()
    correction: CorrectionTolerances = CorrectionTolerances()
    voxel_resolution: float = 0.005
    max_cycles: int | None = None
    perception_retries: int = 3
    batch_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.correction_timeout < 0:
            raise ValueError("correction_timeout must be non-negative")
        if min(self.grid) < 1:
            raise ValueError("grid entries must be >= 1")

    @property
    def object_count(self) -> int:
        return self.n_objects if self.n_objects is not None else int(np.prod(self.grid))

    @classmethod
    def noise_free(cls, **kw) -> PipelineConfig:
        base = dict(seg_noise=SegNoiseConfig.zero(), pose_noise=PoseNoiseConfig.zero(), depth_sigma=0.0)
        base.update(kw)
        cfg = cls(**base)
        world = replace(cfg.scene.world, k_drop=0.0)
        return replace(cfg, scene=replace(cfg.scene, world=world))


REPORT_FIELDS = (
    "transfers_succeeded",
    "transfers_attempted",
    "pick_attempts",
    "topple_count",
    "correction_count",
    "unoccupied_fraction",
    "goal_satisfied",
    "failure_reason",
)


@dataclass
class EpisodeReport:
    transfers_succeeded: int = 0
    transfers_attempted: int = 0
    pick_attempts: int = 0
    topple_count: int = 0
    correction_count: int = 0
    unoccupied_fraction: float = 1.0
    goal_satisfied: bool = False
    failure_reason: str | None = None
    wall_time: float = 0.0
    correction_timed_out: bool = False
    sensing_steps: int = 0

    @property
    def picks_per_transfer(self) -> float:
        return self.pick_attempts / self.transfers_attempted if self.transfers_attempted else math.inf


@dataclass
class EpisodeTrace:
    initial_snapshot: str = ""
    world: WorldState | None = None
    arrangement: Arrangement | None = None
    clouds: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# goal
# ---------------------------------------------------------------------------


def placement_face(model: CuboidModel) -> Face:
    """Face pointing up when the object rests on its largest face."""
    return Face("+" + "XYZ"[int(np.argmin(model.dims))])


def goal_arrangement(bin: Bin, model: CuboidModel, grid, epsilon: float = 0.01) -> Arrangement:
    """Row-major grid of targets on the largest face, centered in ``bin``; layers stack upward."""
    rows, cols, layers = (int(g) for g in grid)
    face = placement_face(model)
    rot = stable_rotation(face, 0.0)
    horiz = np.abs(rot[:2, :]) @ np.asarray(model.dims)
    if horiz[1] > horiz[0]:
        rot = stable_rotation(face, math.pi / 2)
        horiz = horiz[::-1]
    dx, dy = horiz
    h = model.dims[face.axis]
    width, depth, height = cols * dx, rows * dy, layers * h
    lx, ly, lz = bin.interior_dims
    if width > lx + 1e-12 or depth > ly + 1e-12 or height > lz + 1e-12:
        raise ValueError(f"grid {rows}x{cols}x{layers} does not fit the bin interior")
    cx, cy, z0 = bin.pose.position
    targets = []
    for k in range(layers):
        for r in range(rows):
            for c in range(cols):
                x = cx - width / 2 + (c + 0.5) * dx
                y = cy - depth / 2 + (r + 0.5) * dy
                z = z0 + k * h + h / 2
                targets.append(Pose.from_matrix(rot, (x, y, z)))
    return Arrangement(tuple(targets), labeled=False, epsilon=epsilon)


def target_volume(arr: Arrangement, model: CuboidModel) -> AABB:
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for t in arr.targets:
        s = slab_of(model, t)
        c = s.corners()
        lo = np.minimum(lo, [*c.min(axis=0), s.bottom])
        hi = np.maximum(hi, [*c.max(axis=0), s.top])
    return AABB(tuple(lo), tuple(hi))


# ---------------------------------------------------------------------------
# episode
# ---------------------------------------------------------------------------


def episode_seed(batch_seed: int, variant: Variant, seed: int) -> int:
    return derive_seed(batch_seed, int(Variant(variant).value[1:]), seed)


class _Episode:
    def __init__(self, cfg: PipelineConfig, seed: int, keep_clouds: bool):
        self.cfg = cfg
        self.v = cfg.variant
        self.seed = seed
        self.base_seed = episode_seed(cfg.batch_seed, cfg.variant, seed)
        self.counter = 0
        sc = cfg.scene
        self.model = sc.model()
        self.cam_src = sc.camera(sc.source, cfg.depth_sigma)
        self.cam_goal = sc.camera(sc.goal, cfg.depth_sigma)
        self.arr = goal_arrangement(sc.goal, self.model, cfg.grid, cfg.epsilon)
        self.place_faces = {placement_face(self.model), placement_face(self.model).opposite}
        self.world = generate_pile(seed, cfg.object_count, self.model, sc.source, sc.goal, sc.reachable,
                                   sc.world, faces=[Face(f) for f in sc.pile_faces])
        self.report = EpisodeReport()
        self.trace = EpisodeTrace(initial_snapshot=snapshot(self.world), arrangement=self.arr)
        self.keep_clouds = keep_clouds
        self.rng = np.random.default_rng(derive_seed(self.base_seed, 0xD509))

    def next_seed(self) -> int:
        self.counter += 1
        return derive_seed(self.base_seed, self.counter)

    def sense(self, camera: CameraModel):
        cloud = render_point_cloud(self.world, camera, self.next_seed())
        self._saw(cloud)
        return cloud

    def _saw(self, cloud):
        self.report.sensing_steps += 1
        if self.keep_clouds:
            self.trace.clouds.append(cloud)

    # -- picking ------------------------------------------------------------

    def choose_pick(self, cloud):
        segs = order_candidates(segment_instances(cloud, self.cfg.seg_noise, self.next_seed()))
        if not segs:
            return None, False
        fallback = None
        in_source = {o.id for o in self.world.in_bin(self.world.source)}
        for seg in segs:
            oid = seg.estimated_object
            if oid is None or oid not in in_source:
                continue
            if not self.v.pose_estimation:
                cand = local_graspable_point(cloud, seg, self.cfg.cup_radius)
                if cand is not None and is_pick_feasible(self.world, oid, cand.pick_point):
                    return (oid, cand, None), True
                continue
            est = estimate_pose(seg, self.model, self.world.obj(oid).pose, self.cfg.pose_noise, self.next_seed())
            mask = np.ones(len(cloud), dtype=bool)
            mask[seg.point_indices] = False
            near = np.linalg.norm(cloud.points[:, :2] - np.asarray(est.pose.position[:2]), axis=1) < 0.12
            cand = select_pick_point(seg, est, self.model, self.cfg.cup_radius, cloud.points[mask & near])
            if cand is None or not is_pick_feasible(self.world, oid, cand.pick_point):
                continue
            if est.face_up in self.place_faces:
                return (oid, cand, est), True
            if fallback is None:
                fallback = (oid, cand, est)
        return fallback, False

    def drop_back(self):
        src = self.world.source
        held = self.world.obj(self.world.held).pose
        xy = self.rng.uniform(src.lo + 0.05, src.hi - 0.05)
        drop = held.with_position((xy[0], xy[1], src.floor_z + 0.05))
        self.world = apply_release(self.world, drop, self.cfg.drop_back_height, tumble=True)

    def topple(self, est_pose: Pose) -> bool:
        cloud = self.sense(self.cam_src)
        true_pose = self.world.obj(self.world.held).pose
        src = self.world.source
        for face in sorted(self.place_faces, key=lambda f: f.value, reverse=True):
            if not face.is_adjacent(Face.from_vector(est_pose.rotation[2, :])):
                continue
            try:
                plan = plan_topple(cloud, self.model, est_pose, face, self.cfg.topple, region=(src.lo, src.hi))
            except NoTopplePlane:
                continue
            rel = est_pose.inverse() @ true_pose
            place = (plan.place_pose @ rel).position[:2]
            try:
                self.world = apply_topple(self.world, self.world.held, plan.lateral_direction, place)
            except ToppleError:
                continue
            self.report.topple_count += 1
            return True
        return False

    # -- placing -------------------------------------------------------------

    def place(self, oid: int, est_pose: Pose | None, pick_point):
        cfg = self.cfg
        target = self.arr.targets[self.next_target]
        true_pose = self.world.obj(oid).pose
        if est_pose is None:
            shift = np.asarray(target.position[:2]) - np.asarray(pick_point[:2])
            drop = true_pose.translated((shift[0], shift[1], 0.0))
            self.world = apply_release(self.world, drop, cfg.drop_height)
            return
        rel = est_pose.inverse() @ true_pose
        if self.v.push_to_place:
            cloud = self.sense(self.cam_goal)
            bottom = slab_of(self.model, target).bottom
            pts = cloud.points[cloud.points[:, 2] > bottom + 0.008]
            try:
                plan = adaptive_push_plan(pts, self.model, target, cfg.epsilon, cfg.push_step, cfg.push_max_iters,
                                          bounds=(self.world.goal.lo, self.world.goal.hi))
            except PushPlanDiverged:
                plan = None
            if plan is not None:
                self.world = apply_carry(self.world, plan.pre_push_pose @ rel)
                vec = plan.push_vector[:2]
                dist = float(np.hypot(*vec))
                if dist > 0:
                    try:
                        self.world = apply_push(self.world, oid, vec / dist, dist)
                    except PushError:
                        pass
                self.world = apply_release(self.world, self.world.obj(oid).pose, 0.0)
                return
        self.world = apply_release(self.world, target @ rel, cfg.drop_height)

    # -- main loop ------------------------------------------------------------

    def run(self) -> tuple[EpisodeReport, EpisodeTrace]:
        t0 = time.perf_counter()
        cfg, rep = self.cfg, self.report
        n_targets = min(len(self.arr), cfg.object_count)
        self.next_target = 0
        max_cycles = cfg.max_cycles if cfg.max_cycles is not None else 8 * cfg.object_count + 20
        cycles = 0
        stuck = 0
        while self.next_target < n_targets:
            if not self.world.in_bin(self.world.source):
                rep.failure_reason = "source bin empty"
                break
            if cycles >= max_cycles:
                rep.failure_reason = "cycle limit"
                break
            cycles += 1
            cloud = self.sense(self.cam_src)
            choice, face_ok = self.choose_pick(cloud)
            if choice is None or (not face_ok and not self.v.toppling and self.v.pose_estimation):
                # re-sense a few times before giving up; each view draws fresh noise
                stuck += 1
                if stuck > cfg.perception_retries:
                    rep.failure_reason = "no feasible pick"
                    break
                continue
            stuck = 0
            oid, cand, est = choice
            rep.pick_attempts += 1
            try:
                self.world = apply_pick(self.world, oid, cand.pick_point)
            except PickError:
                continue
            held_est = None
            if self.v.pose_estimation:
                held_est = estimate_pose(None, self.model, self.world.obj(oid).pose, cfg.pose_noise,
                                         self.next_seed())
                if held_est.face_up not in self.place_faces:
                    if not (self.v.toppling and self.topple(held_est.pose)):
                        self.drop_back()
                    continue
            self.place(oid, None if held_est is None else held_est.pose, cand.pick_point)
            rep.transfers_attempted += 1
            self.next_target += 1

        goal_cloud = self.sense(self.cam_goal)
        correction_scan(filter_object_points(goal_cloud, self.world.goal), self.arr, self.model, cfg.correction)
        if self.v.correction and self.next_target > 0:
            res = correction_loop(self.world, self.cam_goal, self.arr, cfg.correction, cfg.correction_timeout,
                                  self.next_seed(), on_cloud=self._saw)
            self.world = res.world
            rep.correction_count = res.actions_taken
            rep.correction_timed_out = res.timed_out

        placed = [o.pose for o in self.world.in_goal()]
        rep.transfers_succeeded = min(len(placed), cfg.object_count)
        vol = target_volume(self.arr, self.model)
        rep.unoccupied_fraction = voxel_unoccupied_fraction(vol, [(self.model, p) for p in placed],
                                                            cfg.voxel_resolution)
        rep.goal_satisfied = satisfies_goal(self.arr, self.model, placed)
        rep.wall_time = time.perf_counter() - t0
        self.trace.world = self.world
        return rep, self.trace


def simulate_episode(config: PipelineConfig, seed: int, keep_clouds: bool = False) -> tuple[EpisodeReport, EpisodeTrace]:
    return _Episode(config, seed, keep_clouds).run()


def run_episode(config: PipelineConfig, seed: int) -> EpisodeReport:
    return simulate_episode(config, seed)[0]


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------

NUMERIC_FIELDS = (
    "transfers_succeeded",
    "transfers_attempted",
    "pick_attempts",
    "topple_count",
    "correction_count",
    "unoccupied_fraction",
    "goal_satisfied",
)


def aggregate(reports) -> dict[str, tuple[float, float]]:
    """Mean and population sd of every numeric report field (booleans as 0/1)."""
    out = {}
    for name in NUMERIC_FIELDS:
        vals = [float(getattr(r, name)) for r in reports]
        out[name] = (math.fsum(vals) / len(vals), statistics.pstdev(vals) if len(vals) > 1 else 0.0)
    return out


@dataclass
class BatchResult:
    reports: list[EpisodeReport]
    seeds: list[int]
    aggregate: dict[str, tuple[float, float]]


def _run_one(args):
    cfg, seed = args
    return run_episode(cfg, seed)


def run_batch(config: PipelineConfig, seeds=None, workers: int = 1) -> BatchResult:
    seeds = list(config.seeds if seeds is None else seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    jobs = [(config, s) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            reports = list(ex.map(_run_one, jobs))
    else:
        reports = [_run_one(j) for j in jobs]
    return BatchResult(reports, seeds, aggregate(reports))


def report_dict(report: EpisodeReport) -> dict:
    return {f.name: getattr(report, f.name) for f in fields(report)}
