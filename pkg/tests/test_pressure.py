import numpy as np
import pytest

from dersim import pressure, shapes
from dersim.errors import DegenerateGradient, ResolutionTooCoarse
from dersim.shapes import Pose


def test_sphere_mesh_pressure_construction():
    body = pressure.sphere_pressure_body(0.5, 1e5, resolution=1)
    boundary = body.boundary_vertex_mask()
    assert np.all(body.pressures[boundary] == 0.0)
    interior = ~boundary
    assert interior.sum() == 1
    assert body.pressures[interior] == pytest.approx(1e5)


def test_capsule_mesh_axis_pressure():
    body = pressure.capsule_pressure_body(0.1, 0.5, 2e4, resolution=3)
    boundary = body.boundary_vertex_mask()
    assert np.all(body.pressures[boundary] == 0.0)
    on_axis = (np.abs(body.vertices[:, 0]) < 1e-12) & (np.abs(body.vertices[:, 1]) < 1e-12)
    interior_axis = on_axis & ~boundary
    assert np.all(body.pressures[interior_axis] == 2e4)
    assert interior_axis.sum() >= 1


def test_capsule_too_coarse():
    # a two-station axis has no interior vertex to carry the peak pressure
    with pytest.raises(ResolutionTooCoarse):
        pressure.capsule_pressure_body(0.1, 0.5, 1.0, resolution=1)


def test_box_mesh_watertight_positive():
    body = pressure.box_pressure_body([0.3, 0.2, 0.1], 5e4, resolution=2)
    boundary = body.boundary_vertex_mask()
    assert np.all(body.pressures[boundary] == 0.0)
    assert body.pressures[0] == pytest.approx(5e4)
    # all tets positively oriented after construction
    v = body.vertices[body.tets]
    vol6 = np.einsum("ij,ij->i", np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]),
                     v[:, 3] - v[:, 0])
    assert np.all(vol6 > 0)
    # volumes sum to the box volume
    assert vol6.sum() / 6.0 == pytest.approx(8 * 0.3 * 0.2 * 0.1, rel=1e-9)


def test_linear_field_reproduces_vertex_values():
    body = pressure.sphere_pressure_body(0.4, 1e5, resolution=1)
    grads, offs = pressure.linear_fields(body)
    verts = body.world_vertices()
    for k in (0, 5, 17):
        tet = body.tets[k]
        for vi in tet:
            val = grads[k] @ verts[vi] + offs[k]
            assert val == pytest.approx(body.pressures[vi], abs=1e-6)


def test_patch_formulas_by_hand():
    # polygon data A = 0.01 m^2, p = 100 Pa, g = 1e4 Pa/m
    c = shapes.ContactPoint(0, 1, np.zeros(3), np.array([0, 0, 1.0]),
                            phi=-100 / 1e4, area=0.01, pressure=100.0,
                            pressure_gradient=1e4)
    assert c.area * c.pressure == pytest.approx(1.0)        # f_n = 1 N
    assert c.stiffness == pytest.approx(100.0)              # k = 100 N/m
    assert c.phi == pytest.approx(-0.01)


def test_identical_coincident_fields_degenerate():
    a = pressure.sphere_pressure_body(0.3, 1e5, resolution=1)
    b = pressure.sphere_pressure_body(0.3, 1e5, resolution=1)
    with pytest.raises(DegenerateGradient):
        pressure.patch_contact_query(a, b)


def test_sphere_on_slab_patch_basics():
    radius = 0.05
    depth = 0.002
    sph = pressure.sphere_pressure_body(radius, 1e7, resolution=2)
    sph.pose = Pose(translation=np.array([0.0, 0.0, radius - depth]))
    slab = pressure.slab_pressure_body(1e7, extent=0.5, thickness=0.05)
    contacts = pressure.patch_contact_query(sph, slab, id_a=0, id_b=1)
    assert contacts
    for c in contacts:
        assert c.phi <= 0.0
        assert c.pressure_gradient > 0.0
        # normal points from the slab (B) into the sphere (A): up
        assert c.normal[2] > 0.5
        assert np.linalg.norm(c.normal) == pytest.approx(1.0, abs=1e-12)


def test_sphere_on_slab_force_matches_series_spring_model():
    # axisymmetric overlap: total force = g_eff * pi * R * depth^2.  The
    # faceted sphere underestimates the overlap, so the mesh must be fine
    # enough that the facet sagitta is small against the depth.
    radius = 0.05
    depth = 0.006
    p_max = 1e7
    sph = pressure.sphere_pressure_body(radius, p_max, resolution=4)
    sph.pose = Pose(translation=np.array([0.0, 0.0, radius - depth]))
    slab = pressure.slab_pressure_body(p_max, extent=0.3, thickness=0.06)
    contacts = pressure.patch_contact_query(sph, slab)
    total = sum(c.area * c.pressure for c in contacts)
    g_sphere = p_max / radius
    g_slab = p_max / 0.03           # half thickness
    g_eff = g_sphere * g_slab / (g_sphere + g_slab)
    # column model: p(r) = g_eff * overlap(r), integrated over the exact
    # spherical-cap overlap profile
    expect = g_eff * np.pi * ((depth - radius) * (2 * radius * depth - depth**2)
                              + (2.0 / 3.0) * (radius**3 - (radius - depth)**3))
    assert total == pytest.approx(expect, rel=0.05)


def test_patch_converges_to_point_contact():
    # deepest-polygon phi approaches the point-contact phi as the mesh refines
    radius = 0.05
    depth = 0.003
    errors = []
    for order in (2, 3, 4):
        sph = pressure.sphere_pressure_body(radius, 1e7, resolution=order)
        sph.pose = Pose(translation=np.array([0.0, 0.0, radius - depth]))
        slab = pressure.slab_pressure_body(1e7, extent=0.3, thickness=0.06)
        contacts = pressure.patch_contact_query(sph, slab)
        phi_min = min(c.phi for c in contacts)
        errors.append(abs(phi_min - (-depth)))
        # aggregate normal matches the point-contact normal
        n = sum(c.area * c.normal for c in contacts)
        n /= np.linalg.norm(n)
        assert np.allclose(n, [0, 0, 1], atol=0.05)
    assert errors[1] <= 0.6 * errors[0]
    assert errors[2] <= 0.6 * errors[1]


def test_swap_order_negates_normal_preserves_data():
    radius = 0.04
    sph = pressure.sphere_pressure_body(radius, 2e6, resolution=1)
    sph.pose = Pose(translation=np.array([0.0, 0.0, radius - 0.002]))
    slab = pressure.slab_pressure_body(3e6, extent=0.3, thickness=0.04)
    ab = pressure.patch_contact_query(sph, slab, id_a=0, id_b=1)
    ba = pressure.patch_contact_query(slab, sph, id_a=1, id_b=0)
    assert len(ab) == len(ba)
    key = lambda c: (round(c.position[0], 9), round(c.position[1], 9),
                     round(c.position[2], 9))
    for ca, cb in zip(sorted(ab, key=key), sorted(ba, key=key)):
        assert np.allclose(ca.normal, -cb.normal, atol=1e-9)
        assert ca.phi == pytest.approx(cb.phi, rel=1e-9)
        assert ca.area == pytest.approx(cb.area, rel=1e-9)
        assert ca.pressure == pytest.approx(cb.pressure, rel=1e-6)
        assert ca.pressure_gradient == pytest.approx(cb.pressure_gradient, rel=1e-9)


def test_dump_patches_roundtrip(tmp_path):
    radius = 0.04
    sph = pressure.sphere_pressure_body(radius, 2e6, resolution=1)
    sph.pose = Pose(translation=np.array([0.0, 0.0, radius - 0.002]))
    slab = pressure.slab_pressure_body(3e6, extent=0.3, thickness=0.04)
    contacts = pressure.patch_contact_query(sph, slab, keep_polygons=True)
    path = tmp_path / "patches.txt"
    pressure.dump_patches(contacts, path)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == len(contacts)
    first = lines[0].split()
    assert first[0] == "0" and first[1] == "1"
    n = np.array(first[2:5], dtype=float)
    assert np.linalg.norm(n) == pytest.approx(1.0, abs=1e-6)
    assert (len(first) - 6) % 3 == 0
