import numpy as np
import pytest

from dersim import shapes
from dersim.errors import UnsupportedPair


def random_pose(rng):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    return shapes.pose_from_quaternion(q, rng.uniform(-0.5, 0.5, 3))


def sample_shape_points(shape, rng, n):
    """Rejection-free samples on/inside a shape, world frame."""
    if shape.kind == "sphere":
        v = rng.standard_normal((n, 3))
        v /= np.linalg.norm(v, axis=1)[:, None]
        r = shape.radius * rng.uniform(0, 1, n) ** (1 / 3)
        return shape.pose.translation + v * r[:, None]
    if shape.kind == "capsule":
        a, b = shape.capsule_segment()
        t = rng.uniform(0, 1, n)[:, None]
        axis_pts = a + t * (b - a)
        v = rng.standard_normal((n, 3))
        v /= np.linalg.norm(v, axis=1)[:, None]
        r = shape.radius * rng.uniform(0, 1, n) ** (1 / 3)
        return axis_pts + v * r[:, None]
    if shape.kind == "box":
        local = rng.uniform(-1, 1, (n, 3)) * shape.half_extents
        return shape.pose.transform(local)
    raise ValueError(shape.kind)


def test_sphere_on_halfspace_by_hand():
    s = shapes.sphere(1.0, center=(0, 0, 0.8))
    ground = shapes.halfspace()
    hits = shapes.point_contact_query(s, ground)
    assert len(hits) == 1
    c = hits[0]
    assert c.phi == pytest.approx(-0.2, abs=1e-12)
    assert np.allclose(c.normal, [0, 0, 1])
    # witness at mid-penetration: sphere surface lowest point is -0.2, plane 0
    assert c.position[2] == pytest.approx(-0.1, abs=1e-12)


def test_separated_spheres_no_contact():
    a = shapes.sphere(1.0, center=(0, 0, 0))
    b = shapes.sphere(1.0, center=(3.0, 0, 0))
    assert shapes.point_contact_query(a, b) == []


def test_sphere_sphere_normal_direction():
    a = shapes.sphere(1.0, center=(0, 0, 1.5))
    b = shapes.sphere(1.0, center=(0, 0, 0))
    c = shapes.point_contact_query(a, b)[0]
    # normal points from b into a
    assert np.allclose(c.normal, [0, 0, 1])
    assert c.phi == pytest.approx(-0.5)


def test_capsule_capsule_crossed():
    a = shapes.capsule_between([-1, 0, 0.15], [1, 0, 0.15], 0.1)
    b = shapes.capsule_between([0, -1, 0], [0, 1, 0], 0.1)
    c = shapes.point_contact_query(a, b)[0]
    assert c.phi == pytest.approx(0.15 - 0.2, abs=1e-12)
    assert np.allclose(c.normal, [0, 0, 1], atol=1e-12)


def test_swapped_pair_flips_normal_keeps_phi():
    rng = np.random.default_rng(2)
    a = shapes.capsule_between([-1, 0, 0.1], [1, 0.3, 0.2], 0.12)
    b = shapes.sphere(0.2, center=(0.1, 0.1, 0.25))
    ab = shapes.point_contact_query(a, b, id_a=0, id_b=1)
    ba = shapes.point_contact_query(b, a, id_a=1, id_b=0)
    assert len(ab) == len(ba) == 1
    assert ab[0].phi == pytest.approx(ba[0].phi, rel=1e-12)
    assert np.allclose(ab[0].normal, -ba[0].normal, atol=1e-12)


@pytest.mark.parametrize("seed", range(8))
def test_capsule_box_distance_vs_sampling_oracle(seed):
    rng = np.random.default_rng(300 + seed)
    cap = shapes.capsule(rng.uniform(0.05, 0.2), rng.uniform(0.2, 0.6),
                         pose=random_pose(rng))
    bx = shapes.box(rng.uniform(0.1, 0.5, 3), pose=random_pose(rng))
    hits = shapes.point_contact_query(cap, bx, margin=np.inf)
    phi = hits[0].phi

    # rejection-sampling distance estimate between the two solids
    pts_a = sample_shape_points(cap, rng, 6000)
    pts_b = sample_shape_points(bx, rng, 6000)
    # surface-to-surface signed distance approximated by minimum over point
    # pairs is poor; instead measure axis-to-box distance directly
    a0, a1 = cap.capsule_segment()
    t = rng.uniform(0, 1, 20000)
    axis_pts = a0 + t[:, None] * (a1 - a0)
    local = (axis_pts - bx.pose.translation) @ bx.pose.rotation
    dmin = np.inf
    for p in local:
        d, _, _ = shapes.point_box_distance(p, bx.half_extents)
        dmin = min(dmin, d)
    expect = dmin - cap.radius
    assert phi == pytest.approx(expect, abs=1e-3)


def test_capsule_halfspace_lying_gives_two_contacts():
    cap = shapes.capsule_between([-0.5, 0, 0.05], [0.5, 0, 0.05], 0.1)
    hits = shapes.point_contact_query(cap, shapes.halfspace())
    assert len(hits) == 2
    for c in hits:
        assert c.phi == pytest.approx(-0.05)


def test_capsule_halfspace_tilted_gives_deepest():
    cap = shapes.capsule_between([-0.5, 0, 0.3], [0.5, 0, 0.08], 0.1)
    hits = shapes.point_contact_query(cap, shapes.halfspace())
    assert len(hits) == 1
    assert hits[0].phi == pytest.approx(-0.02)
    assert hits[0].position[0] == pytest.approx(0.5)


def test_box_halfspace_vertices():
    bx = shapes.box([0.1, 0.2, 0.05],
                    pose=shapes.Pose(translation=np.array([0, 0, 0.04])))
    hits = shapes.point_contact_query(bx, shapes.halfspace())
    assert len(hits) == 4
    for c in hits:
        assert c.phi == pytest.approx(-0.01)


def test_box_box_deepest_vertex():
    a = shapes.box([0.1, 0.1, 0.1], pose=shapes.Pose(translation=np.array([0, 0, 0.18])))
    b = shapes.box([0.5, 0.5, 0.1])
    hits = shapes.point_contact_query(a, b)
    assert len(hits) == 1
    assert hits[0].phi == pytest.approx(-0.02)
    assert np.allclose(hits[0].normal, [0, 0, 1])


def test_unsupported_pair_raises():
    a = shapes.halfspace()
    b = shapes.halfspace()
    with pytest.raises(UnsupportedPair):
        shapes.point_contact_query(a, b)


def test_sphere_box_face_and_corner():
    bx = shapes.box([0.5, 0.5, 0.5])
    s = shapes.sphere(0.25, center=(0, 0, 0.7))
    c = shapes.point_contact_query(s, bx)[0]
    assert c.phi == pytest.approx(-0.05)
    assert np.allclose(c.normal, [0, 0, 1])
    s2 = shapes.sphere(0.25, center=(0.6, 0.6, 0.6))
    c2 = shapes.point_contact_query(s2, bx, margin=np.inf)[0]
    assert c2.phi == pytest.approx(np.sqrt(3 * 0.1**2) - 0.25)


def test_aabb_contains_shape_samples():
    rng = np.random.default_rng(9)
    for make in (lambda: shapes.sphere(0.3, center=rng.uniform(-1, 1, 3)),
                 lambda: shapes.capsule(0.2, 0.5, pose=random_pose(rng)),
                 lambda: shapes.box(rng.uniform(0.1, 0.4, 3), pose=random_pose(rng))):
        shp = make()
        lo, hi = shp.aabb()
        pts = sample_shape_points(shp, rng, 500)
        assert np.all(pts >= lo - 1e-9) and np.all(pts <= hi + 1e-9)
