"""Simulated sensing: degraded instance segmentation, noisy pose estimates, pick-point selection.

Segmentation starts from the renderer's ground-truth labels and degrades
them; pose estimates perturb the true pose.  Nothing here solves a
registration problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geom import CuboidModel, Face, Pose, axis_angle_matrix, face_up_of, rot_z
from .world import PointCloud

TOP_FACE_TOL = math.radians(15.0)


@dataclass(frozen=True)
class SegNoiseConfig:
    erosion_px: int = 1
    label_swap_rate: float = 0.02
    confidence_mean: float = 0.9
    confidence_sigma: float = 0.05
    min_pixels: int = 50
    min_confidence: float = 0.5

    @classmethod
    def zero(cls, **kw) -> SegNoiseConfig:
        base = dict(erosion_px=0, label_swap_rate=0.0, confidence_mean=1.0, confidence_sigma=0.0)
        base.update(kw)
        return cls(**base)


@dataclass(frozen=True)
class PoseNoiseConfig:
    translation_sigma: float = 0.003
    yaw_sigma: float = math.radians(2.0)
    face_confusion: float = 0.1

    @classmethod
    def zero(cls) -> PoseNoiseConfig:
        return cls(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Segment:
    point_indices: np.ndarray
    confidence: float
    mean_z: float
    estimated_object: int | None = None

    def __post_init__(self):
        if len(self.point_indices) == 0:
            raise ValueError("segment must be non-empty")

    @property
    def size(self) -> int:
        return len(self.point_indices)

    @classmethod
    def from_cloud(cls, cloud: PointCloud, indices, confidence: float = 1.0, estimated_object=None) -> Segment:
        idx = np.asarray(indices, dtype=int)
        return cls(idx, float(confidence), float(cloud.points[idx, 2].mean()), estimated_object)


@dataclass(frozen=True)
class PoseEstimate:
    pose: Pose
    translation_sigma: float = 0.0
    yaw_sigma: float = 0.0
    face_confusion: float = 0.0

    @property
    def face_up(self) -> Face:
        return face_up_of(self.pose.rotation)


@dataclass(frozen=True)
class PickCandidate:
    object_segment: Segment | None
    pick_point: np.ndarray
    surface_normal: np.ndarray
    planar_patch_radius: float
    score: float


# ---------------------------------------------------------------------------
# segmentation
# ---------------------------------------------------------------------------


def segment_instances(cloud: PointCloud, noise: SegNoiseConfig, seed: int) -> list[Segment]:
    """Degrade the ground-truth label partition and drop small or unconfident segments."""
    rng = np.random.default_rng(seed)
    labels = cloud.labels.copy()
    ids = sorted(int(i) for i in np.unique(labels) if i >= 0)
    if not ids:
        return []
    keep = labels >= 0
    if noise.erosion_px > 0 and cloud.shape != (0, 0):
        h, w = cloud.shape
        img = np.full((h, w), -1, dtype=int)
        img[cloud.pixels[:, 0], cloud.pixels[:, 1]] = labels
        for i in ids:
            mask = img == i
            core = ndimage.binary_erosion(mask, iterations=noise.erosion_px)
            eroded = mask & ~core
            drop = eroded[cloud.pixels[:, 0], cloud.pixels[:, 1]] & (labels == i)
            keep &= ~drop
    if noise.label_swap_rate > 0 and len(ids) > 1:
        swap = rng.random(len(labels)) < noise.label_swap_rate
        swap &= keep
        picks = rng.integers(len(ids) - 1, size=len(labels))
        for k in np.nonzero(swap)[0]:
            others = [i for i in ids if i != labels[k]]
            labels[k] = others[picks[k]]
    segments = []
    for i in ids:
        idx = np.nonzero(keep & (labels == i))[0]
        conf = float(np.clip(noise.confidence_mean + noise.confidence_sigma * rng.standard_normal(), 0.0, 1.0))
        if len(idx) == 0 or len(idx) < noise.min_pixels or conf < noise.min_confidence:
            continue
        truth = cloud.labels[idx]
        truth = truth[truth >= 0]
        owner = int(np.bincount(truth).argmax()) if len(truth) else None
        segments.append(Segment(idx, conf, float(cloud.points[idx, 2].mean()), owner))
    return segments


def order_candidates(segments) -> list[Segment]:
    """Highest mean Z first; ties by larger segment, then lower object id."""

    def key(s: Segment):
        oid = s.estimated_object if s.estimated_object is not None else 1 << 30
        return (-s.mean_z, -s.size, oid)

    return sorted(segments, key=key)


# ---------------------------------------------------------------------------
# pose estimation
# ---------------------------------------------------------------------------


def estimate_pose(segment: Segment | None, model: CuboidModel, world_truth: Pose,
                  noise: PoseNoiseConfig, seed: int) -> PoseEstimate:
    """Perturb the true pose: optional flip to an adjacent face, Gaussian yaw and translation."""
    if segment is not None and segment.size == 0:
        raise ValueError("segment must be non-empty")
    rng = np.random.default_rng(seed)
    # fixed draw order keeps estimates comparable across noise levels
    flip = rng.random() < noise.face_confusion
    flip_choice = int(rng.integers(4))
    dyaw = rng.standard_normal() * noise.yaw_sigma
    dt = rng.standard_normal(3) * noise.translation_sigma
    r = world_truth.rotation
    if flip:
        axis, sign = [((1, 0, 0), 1), ((1, 0, 0), -1), ((0, 1, 0), 1), ((0, 1, 0), -1)][flip_choice]
        r = axis_angle_matrix(axis, sign * math.pi / 2) @ r
    r = rot_z(dyaw) @ r
    pose = Pose.from_matrix(r, np.asarray(world_truth.position) + dt)
    return PoseEstimate(pose, noise.translation_sigma, noise.yaw_sigma, noise.face_confusion)


# ---------------------------------------------------------------------------
# pick point selection
# ---------------------------------------------------------------------------


def top_face(pose: Pose, tol: float = TOP_FACE_TOL) -> Face | None:
    r = pose.rotation
    face = face_up_of(r)
    if float(r[:, face.axis][2] * face.sign) >= math.cos(tol):
        return face
    return None


def patch_radii(model: CuboidModel, pose: Pose, face: Face, occluders=None, occluder_margin: float = 0.005) -> np.ndarray:
    """Clear-disc radius at each sample of ``face``: distance to the face edges and to occluding points above it."""
    face = Face(face)
    pts, _ = model.face_points(face)
    u, v = [a for a in range(3) if a != face.axis]
    h = model.half
    radius = np.minimum(h[u] - np.abs(pts[:, u]), h[v] - np.abs(pts[:, v]))
    if occluders is not None and len(occluders):
        occ = np.asarray(occluders, dtype=float).reshape(-1, 3)
        local = pose.inverse().transform_points(occ)
        above = local[:, face.axis] * face.sign > h[face.axis] + occluder_margin
        local = local[above]
        if len(local):
            diff = pts[:, None, [u, v]] - local[None, :, [u, v]]
            dist = np.linalg.norm(diff, axis=2).min(axis=1)
            radius = np.minimum(radius, dist)
    return np.maximum(radius, 0.0)


def select_pick_point(segment: Segment | None, estimate: PoseEstimate, model: CuboidModel, cup_radius: float,
                      occluders=None) -> PickCandidate | None:
    """Lowest-score sample on the estimated top face whose clear patch fits the suction cup.

    Samples are visited outward from the best score, so the first one whose
    patch clears ``cup_radius`` is the answer.  Returns None when the top
    face is not upward enough or no patch fits.
    """
    face = top_face(estimate.pose)
    if face is None:
        return None
    pts, scores = model.face_points(face)
    radii = patch_radii(model, estimate.pose, face, occluders)
    order = np.lexsort((np.arange(len(scores)), -radii, np.round(scores, 12)))
    for k in order:
        if radii[k] >= cup_radius:
            world_pt = estimate.pose.transform_points(pts[k][None])[0]
            normal = estimate.pose.rotation @ face.vector
            return PickCandidate(segment, world_pt, normal, float(radii[k]), float(scores[k]))
    return None


def local_graspable_point(cloud: PointCloud, segment: Segment, cup_radius: float,
                          normal_tol: float = TOP_FACE_TOL, layer_tol: float = 0.005) -> PickCandidate | None:
    """Pose-free pick: the upward-facing point of the segment's top layer nearest that layer's centroid."""
    idx = segment.point_indices
    pts = cloud.points[idx]
    nrm = cloud.normals[idx]
    up = nrm[:, 2] >= math.cos(normal_tol)
    if not np.any(up):
        return None
    top = pts[up]
    top = top[top[:, 2] >= top[:, 2].max() - layer_tol]
    c = top.mean(axis=0)
    k = int(np.argmin(np.linalg.norm(top[:, :2] - c[:2], axis=1)))
    span = np.ptp(top[:, :2], axis=0)
    radius = float(min(span) / 2.0)
    if radius < cup_radius:
        return None
    return PickCandidate(segment, top[k], np.array([0.0, 0.0, 1.0]), radius, float(np.linalg.norm(top[k] - c)))
