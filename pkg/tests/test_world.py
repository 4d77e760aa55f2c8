import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import goal_xy, make_world, resting_pose, source_xy
from packsim.geom import CuboidModel, Face, Pose
from packsim.pipeline import SceneConfig
from packsim.world import (
    CameraModel,
    PickError,
    PushError,
    Slab,
    ToppleError,
    WorldParams,
    apply_action,
    apply_carry,
    apply_pick,
    apply_push,
    apply_release,
    apply_topple,
    generate_pile,
    is_stable,
    load_snapshot,
    max_interpenetration,
    pick_infeasibility,
    read_ply,
    rect_mtv,
    render_point_cloud,
    slab_of,
    snap_rotation,
    snapshot,
    stable_rotation,
    topple_rotation,
    wall_penetration,
    write_ply,
)

SC = SceneConfig()


def sat_overlap(a: Slab, b: Slab) -> bool:
    """Independent 2D separating-axis oracle over the corner sets."""
    ca, cb = a.corners(), b.corners()
    for poly in (ca, cb):
        for i in range(4):
            e = poly[(i + 1) % 4] - poly[i]
            n = np.array([-e[1], e[0]])
            pa, pb = ca @ n, cb @ n
            if pa.max() <= pb.min() + 1e-9 or pb.max() <= pa.min() + 1e-9:
                return False
    return True


slab_args = st.tuples(st.floats(-0.1, 0.1), st.floats(-0.1, 0.1), st.floats(-math.pi, math.pi))


@settings(max_examples=150, deadline=None)
@given(slab_args, slab_args)
def test_mtv_agrees_with_sat_and_separates(a, b):
    m = CuboidModel.from_dims((0.09, 0.06, 0.03), pitch=0.03)
    sa = slab_of(m, resting_pose(m, a[0], a[1], yaw=a[2]))
    sb = slab_of(m, resting_pose(m, b[0], b[1], yaw=b[2]))
    mtv = rect_mtv(sa, sb)
    if mtv is None:
        return
    assert sat_overlap(sa, sb)
    moved = sb.moved(sb.center + mtv * (1 + 1e-6))
    assert not sat_overlap(sa, moved)


@pytest.mark.parametrize("face", list(Face))
def test_stable_rotation_round_trip(face):
    f, yaw = snap_rotation(stable_rotation(face, 0.7))
    assert f is face
    assert np.allclose(stable_rotation(f, yaw), stable_rotation(face, 0.7), atol=1e-9)


def test_pile_is_valid_and_deterministic(soap):
    w1 = generate_pile(3, 9, soap, SC.source, SC.goal, SC.reachable)
    w2 = generate_pile(3, 9, soap, SC.source, SC.goal, SC.reachable)
    assert snapshot(w1) == snapshot(w2)
    assert max_interpenetration(w1) == 0.0
    for o in w1.objects:
        assert is_stable(soap, o.pose)
        assert wall_penetration(slab_of(soap, o.pose), SC.source) <= 1e-12


def test_pile_respects_face_list(soap):
    w = generate_pile(1, 9, soap, SC.source, faces=[Face.PX, Face.NX])
    for o in w.objects:
        assert snap_rotation(o.pose.rotation)[0] in (Face.PX, Face.NX)


def test_pile_too_big(soap):
    with pytest.raises(ValueError):
        generate_pile(0, 500, soap, SC.source)


def test_pick_then_release_moves_object(soap):
    w = make_world(soap, [resting_pose(soap, *source_xy())], params=WorldParams(k_drop=0.0))
    top = np.array([*source_xy(), soap.dims[2]])
    w = apply_pick(w, 0, top)
    assert w.held == 0
    with pytest.raises(PickError, match="already holding"):
        apply_pick(w, 0, top)
    w = apply_release(w, resting_pose(soap, *goal_xy()), 0.05)
    o = w.obj(0)
    assert np.allclose(o.pose.position, (*goal_xy(), 0.015))
    assert w.in_goal()[0].id == 0


def test_pick_errors(soap):
    x, y = source_xy()
    below = resting_pose(soap, x, y)
    above = resting_pose(soap, x, y, bottom=0.03)
    w = make_world(soap, [below, above])
    assert "obstructed" in pick_infeasibility(w, 0, (x, y, 0.03))
    with pytest.raises(PickError, match="reachable"):
        apply_pick(w, 1, (0.0, 0.0, 0.06))
    # side of the object: nothing under the cup
    with pytest.raises(PickError, match="no suction contact"):
        apply_pick(w, 1, (x + 0.2, y, 0.06))


def test_pick_lets_stack_fall(soap):
    x, y = source_xy()
    w = make_world(soap, [resting_pose(soap, x, y), resting_pose(soap, x, y, bottom=0.03),
                          resting_pose(soap, x + 0.1, y)])
    w = apply_pick(w, 1, (x, y, 0.06))
    w = apply_release(w, resting_pose(soap, *goal_xy()), 0.0)
    w = apply_pick(w, 0, (x, y, 0.03))
    assert w.obj(2).pose.position[2] == pytest.approx(0.015)


def test_release_scatter_is_seeded(soap):
    def run(seed):
        w = make_world(soap, [resting_pose(soap, *source_xy())], seed=seed)
        w = apply_pick(w, 0, (*source_xy(), 0.03))
        return apply_release(w, resting_pose(soap, *goal_xy()), 0.05).obj(0).pose

    assert run(4).allclose(run(4))
    assert not run(4).allclose(run(5))


def test_release_slides_off_neighbor(soap):
    gx, gy = goal_xy()
    w = make_world(soap, [resting_pose(soap, gx, gy), resting_pose(soap, *source_xy())],
                   params=WorldParams(k_drop=0.0))
    w = apply_pick(w, 1, (*source_xy(), 0.03))
    w = apply_release(w, resting_pose(soap, gx + 0.05, gy), 0.0)
    assert max_interpenetration(w) <= 1e-9
    assert w.obj(1).pose.position[2] == pytest.approx(0.015)


def test_push_free_space(soap):
    gx, gy = goal_xy()
    w = make_world(soap, [resting_pose(soap, gx, gy)])
    w2 = apply_push(w, 0, (1.0, 0.0), 0.02)
    assert w2.obj(0).pose.position[0] == pytest.approx(gx + 0.02)
    assert w.obj(0).pose.position[0] == gx
    assert snapshot(apply_push(w, 0, (1.0, 0.0), 0.0)) == snapshot(w)


def test_push_shoves_neighbor(soap):
    gx, gy = goal_xy()
    w = make_world(soap, [resting_pose(soap, gx - 0.09, gy), resting_pose(soap, gx, gy)])
    w = apply_push(w, 0, (1.0, 0.0), 0.01)
    assert w.obj(1).pose.position[0] == pytest.approx(gx + 0.01, abs=1e-6)
    assert max_interpenetration(w) < 1e-6


def test_push_stops_at_wall_compliance(soap):
    b = SC.goal
    x = b.hi[0] - 0.045 - 0.005
    w = make_world(soap, [resting_pose(soap, x, b.center_xy[1])])
    w = apply_push(w, 0, (1.0, 0.0), 0.05)
    pen = wall_penetration(slab_of(soap, w.obj(0).pose), b)
    assert pen == pytest.approx(b.wall_compliance, abs=1e-9)


def test_push_unreachable(soap):
    w = make_world(soap, [resting_pose(soap, *goal_xy())])
    with pytest.raises(PushError, match="unreachable"):
        apply_push(w, 0, (0.0, 1.0), 0.5)


@pytest.mark.parametrize("face", list(Face))
@pytest.mark.parametrize("d", [(1, 0), (0, 1), (-1, 0), (0, -1)])
def test_topple_rotation_oracle(face, d):
    r = stable_rotation(face, 0.0)
    new, top = topple_rotation(r, d)
    # rolling forward brings the side facing backwards to the top
    back = Face.from_vector(r.T @ np.array([-d[0], -d[1], 0.0]))
    assert top is back
    assert np.allclose(new @ top.vector, [0, 0, 1], atol=1e-9)


def test_apply_topple_clearance(soap):
    b = SC.source
    x, y = b.hi[0] - 0.05, b.center_xy[1]
    held = Pose.from_matrix(stable_rotation(Face.PX, 0.0), (x, y, 0.3))
    w = make_world(soap, [held])
    w.held, w.attach_offset = 0, (0.045, 0.0, 0.0)
    w._set(0, status=w.objects[0].status.__class__("held"))
    # rolling toward the wall would put the box into it
    with pytest.raises(ToppleError, match="clearance"):
        apply_topple(w, 0, (1.0, 0.0), (x, y))
    w2 = apply_topple(w, 0, (-1.0, 0.0), (x, y))
    assert snap_rotation(w2.obj(0).pose.rotation)[0].is_adjacent(Face.PX)
    assert w2.held is None


def test_render_single_box_depth_and_occlusion(soap):
    gx, gy = goal_xy()
    w = make_world(soap, [resting_pose(soap, gx, gy), resting_pose(soap, gx, gy, bottom=0.03)])
    cam = CameraModel.overhead(SC.goal)
    cloud = render_point_cloud(w, cam, 0)
    on = cloud.labels >= 0
    # only the upper box is visible from above
    assert set(cloud.labels[on]) == {1}
    assert np.allclose(cloud.points[on, 2], 0.06, atol=1e-9)
    floor = cloud.labels == -1
    assert np.all(cloud.points[floor, 2] <= 0.1 + 1e-9)
    assert np.all(np.abs(np.linalg.norm(cloud.normals, axis=1) - 1) < 1e-9)


def test_render_noise_along_optical_axis(soap):
    w = make_world(soap, [resting_pose(soap, *goal_xy())])
    clean = render_point_cloud(w, CameraModel.overhead(SC.goal), 0)
    noisy = render_point_cloud(w, CameraModel.overhead(SC.goal, depth_noise_sigma=0.002), 0)
    assert np.array_equal(clean.pixels, noisy.pixels)
    ray = clean.points - CameraModel.overhead(SC.goal).pose.t
    delta = noisy.points - clean.points
    cross = np.linalg.norm(np.cross(ray, delta), axis=1) / np.linalg.norm(ray, axis=1)
    assert cross.max() < 1e-9
    assert 0.0015 < np.std(delta[:, 2]) < 0.0025


def test_ply_round_trip(tmp_path, soap):
    w = make_world(soap, [resting_pose(soap, *goal_xy())])
    cloud = render_point_cloud(w, CameraModel.overhead(SC.goal), 0)
    write_ply(cloud, tmp_path / "c.ply")
    head = (tmp_path / "c.ply").read_text().splitlines()[:3]
    assert head[2] == f"element vertex {len(cloud)}"
    back = read_ply(tmp_path / "c.ply")
    assert np.allclose(back.points, cloud.points, atol=1e-6)
    assert np.array_equal(back.labels, cloud.labels)


def test_snapshot_round_trip_and_replay(soap):
    w0 = generate_pile(2, 5, soap, SC.source, SC.goal, SC.reachable)
    text = snapshot(w0)
    assert snapshot(load_snapshot(text)) == text
    w = w0
    for o in sorted(w0.objects, key=lambda o: -o.pose.position[2]):
        try:
            w = apply_pick(w, o.id, o.pose.position + np.array([0, 0, soap.dims[snap_rotation(o.pose.rotation)[0].axis] / 2]))
        except PickError:
            continue
        w = apply_carry(w, resting_pose(soap, *goal_xy()))
        w = apply_release(w, resting_pose(soap, *goal_xy()), 0.05)
        break
    r = load_snapshot(text)
    for rec in w.history:
        r = apply_action(r, rec)
    assert snapshot(r) == snapshot(w)


def test_snapshot_version_mismatch(soap):
    text = snapshot(make_world(soap, []))
    with pytest.raises(ValueError, match="version"):
        load_snapshot(text.replace('"version": 1', '"version": 99'))
