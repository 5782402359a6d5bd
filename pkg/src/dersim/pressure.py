"""Pressure-field patch contact.

Bodies are tetrahedral meshes carrying a per-vertex pressure that is zero on
the boundary and maximal along the centerline/center.  Two overlapping bodies
meet on the locus where their (piecewise linear) pressure fields are equal;
per overlapping tet pair that locus is a plane clipped to the tet-tet
intersection, producing a polygon treated as one equivalent point contact.

Per polygon the emitted data follow the spring-in-series picture: with body
slopes ``g_a = grad(p_a) . n`` and ``g_b = -grad(p_b) . n`` along the contact
normal, the effective gradient is ``g = g_a g_b / (g_a + g_b)``, the normal
stiffness ``k = A g``, the force ``f = A p``, and the equivalent signed
distance ``phi = -p / g``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGradient, ResolutionTooCoarse
from .shapes import ContactPoint, Pose

_MIN_AREA = 1e-14
_MIN_GRADIENT = 1e-12


@dataclass
class PressureBody:
    """Tet mesh with a linear-per-tet pressure field, plus a world pose."""

    vertices: np.ndarray      # (m, 3) local frame
    tets: np.ndarray          # (k, 4) int
    pressures: np.ndarray     # (m,)
    p_max: float
    pose: Pose = field(default_factory=Pose)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.tets = np.asarray(self.tets, dtype=int)
        self.pressures = np.asarray(self.pressures, dtype=float)
        if np.any(self.pressures < 0.0):
            raise ValueError("pressures must be nonnegative")
        self._fix_orientation()

    def _fix_orientation(self):
        v = self.vertices[self.tets]
        vol6 = np.einsum("ij,ij->i", np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]),
                         v[:, 3] - v[:, 0])
        flip = vol6 < 0.0
        if np.any(flip):
            t = self.tets.copy()
            t[flip, 2], t[flip, 3] = self.tets[flip, 3], self.tets[flip, 2]
            self.tets = t

    def world_vertices(self):
        return self.pose.transform(self.vertices)

    def boundary_vertex_mask(self):
        """Vertices on the boundary = vertices of faces owned by a single tet."""
        faces = {}
        for tet in self.tets:
            for f in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
                key = tuple(sorted(tet[list(f)]))
                faces[key] = faces.get(key, 0) + 1
        mask = np.zeros(len(self.vertices), dtype=bool)
        for key, count in faces.items():
            if count == 1:
                mask[list(key)] = True
        return mask


# ---------------------------------------------------------------------------
# primitive meshers


def _icosphere(order):
    phi = (1 + 5**0.5) / 2
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=float)
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    tris = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (11, 10, 2), (5, 11, 4), (1, 5, 9), (7, 1, 8), (10, 7, 6),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (9, 8, 1), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7),
    ]
    verts = list(verts)
    cache = {}

    def midpoint(i, j):
        key = (min(i, j), max(i, j))
        if key in cache:
            return cache[key]
        m = verts[i] + verts[j]
        m = m / np.linalg.norm(m)
        verts.append(m)
        cache[key] = len(verts) - 1
        return cache[key]

    for _ in range(order):
        new_tris = []
        for a, b, c in tris:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_tris += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        tris = new_tris
    return np.array(verts), np.array(tris, dtype=int)


def sphere_pressure_body(radius, p_max, resolution=2, center=(0, 0, 0)):
    """Icosphere surface coned to the center vertex, pressure peak at center."""
    surf, tris = _icosphere(max(0, resolution))
    verts = np.vstack([surf * radius, [[0.0, 0.0, 0.0]]])
    center_idx = len(verts) - 1
    tets = np.hstack([tris, np.full((len(tris), 1), center_idx, dtype=int)])
    p = np.zeros(len(verts))
    p[center_idx] = p_max
    body = PressureBody(verts, tets, p, p_max,
                        Pose(translation=np.asarray(center, dtype=float)))
    return body


def capsule_pressure_body(radius, half_length, p_max, resolution=2, pose=None):
    """Cylinder-of-wedges mesh for a rod segment: rings of surface vertices
    around interior axis vertices carrying the peak pressure.

    Flat end caps (a cylinder stands in for the capsule volume); the cap-center
    vertices lie on the boundary, so the axis needs at least one interior
    station.
    """
    n_axial = max(2, resolution + 1)          # stations along the axis
    n_circ = max(6, 4 * resolution)
    z = np.linspace(-half_length, half_length, n_axial)
    ang = np.linspace(0.0, 2 * np.pi, n_circ, endpoint=False)
    ring = np.stack([np.cos(ang), np.sin(ang)], axis=1) * radius

    verts = []
    axis_idx = []
    ring_idx = np.empty((n_axial, n_circ), dtype=int)
    for i, zi in enumerate(z):
        axis_idx.append(len(verts))
        verts.append([0.0, 0.0, zi])
        for j in range(n_circ):
            ring_idx[i, j] = len(verts)
            verts.append([ring[j, 0], ring[j, 1], zi])
    verts = np.array(verts)

    tets = []
    for i in range(n_axial - 1):
        a0, a1 = axis_idx[i], axis_idx[i + 1]
        for j in range(n_circ):
            j1 = (j + 1) % n_circ
            r00, r01 = ring_idx[i, j], ring_idx[i, j1]
            r10, r11 = ring_idx[i + 1, j], ring_idx[i + 1, j1]
            # wedge = pyramid from a0 onto the outer quad plus a tet closing
            # onto the axis segment; faces on the z-planes become the caps
            tets += [(a0, r00, r01, r11), (a0, r00, r11, r10),
                     (a0, r10, r11, a1)]
    tets = np.array(tets, dtype=int)

    p = np.zeros(len(verts))
    interior_axis = axis_idx[1:-1]
    if not interior_axis:
        raise ResolutionTooCoarse("capsule mesh has no interior axis vertex")
    p[interior_axis] = p_max
    return PressureBody(verts, tets, p, p_max, pose or Pose())


def box_pressure_body(half_extents, p_max, resolution=1, pose=None):
    """Box faces subdivided into a grid, coned to the centroid."""
    h = np.asarray(half_extents, dtype=float)
    res = max(1, resolution)
    verts = [[0.0, 0.0, 0.0]]
    vert_index = {}

    def vid(p):
        key = tuple(np.round(p, 12))
        if key not in vert_index:
            vert_index[key] = len(verts)
            verts.append(list(p))
        return vert_index[key]

    tets = []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            u_axis, v_axis = [a for a in range(3) if a != axis]
            us = np.linspace(-h[u_axis], h[u_axis], res + 1)
            vs = np.linspace(-h[v_axis], h[v_axis], res + 1)
            for iu in range(res):
                for iv in range(res):
                    quad = []
                    for du, dv in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        p = np.zeros(3)
                        p[axis] = sign * h[axis]
                        p[u_axis] = us[iu + du]
                        p[v_axis] = vs[iv + dv]
                        quad.append(vid(p))
                    tets.append((0, quad[0], quad[1], quad[2]))
                    tets.append((0, quad[0], quad[2], quad[3]))
    verts = np.array(verts)
    p = np.zeros(len(verts))
    p[0] = p_max
    return PressureBody(verts, np.array(tets, dtype=int), p, p_max, pose or Pose())


def slab_pressure_body(p_max, extent=2.0, thickness=0.1, resolution=1, pose=None):
    """Ground slab standing in for a halfspace: a wide, thin pressure box whose
    top face is the halfspace boundary (local z = 0)."""
    body = box_pressure_body([extent, extent, 0.5 * thickness], p_max, resolution)
    body.vertices[:, 2] -= 0.5 * thickness
    body.pose = pose or Pose()
    return body


def build_pressure_body(shape, p_max, resolution=2, **kwargs):
    """Pressure body matching a collision shape (same pose object)."""
    if shape.kind == "sphere":
        body = sphere_pressure_body(shape.radius, p_max, resolution)
    elif shape.kind == "capsule":
        body = capsule_pressure_body(shape.radius, shape.half_length, p_max,
                                     resolution)
    elif shape.kind == "box":
        body = box_pressure_body(shape.half_extents, p_max, resolution)
    elif shape.kind == "halfspace":
        body = slab_pressure_body(p_max, resolution=resolution, **kwargs)
    else:
        raise ValueError(f"no pressure mesh for {shape.kind}")
    body.pose = shape.pose
    return body


# ---------------------------------------------------------------------------
# field evaluation


def linear_fields(body):
    """Per-tet affine pressure ``p(x) = g . x + c`` in world coordinates.

    Returns (gradients (k,3), offsets (k,)).
    """
    verts = body.world_vertices()
    v = verts[body.tets]                      # (k, 4, 3)
    p = body.pressures[body.tets]             # (k, 4)
    mats = np.concatenate([v, np.ones((len(v), 4, 1))], axis=2)  # (k,4,4)
    coeff = np.linalg.solve(mats, p[:, :, None])[:, :, 0]
    return coeff[:, :3], coeff[:, 3]


def _tet_aabbs(verts, tets):
    v = verts[tets]
    return v.min(axis=1), v.max(axis=1)


def _tet_face_planes(v):
    """Inward halfspace planes (normal, offset) for one tet: n.x >= o inside."""
    planes = []
    faces = ((1, 2, 3, 0), (0, 2, 3, 1), (0, 1, 3, 2), (0, 1, 2, 3))
    for a, b, c, d in faces:
        n = np.cross(v[b] - v[a], v[c] - v[a])
        norm = np.linalg.norm(n)
        if norm < 1e-30:
            continue
        n = n / norm
        o = n @ v[a]
        if n @ v[d] < o:       # orient inward (toward the opposite vertex)
            n, o = -n, -o
        planes.append((n, o))
    return planes


def _clip_polygon(poly, normal, offset):
    """Sutherland-Hodgman clip of a 3D polygon against n.x >= offset."""
    if len(poly) == 0:
        return poly
    dist = poly @ normal - offset
    keep = dist >= -1e-14
    if np.all(keep):
        return poly
    if not np.any(keep):
        return poly[:0]
    out = []
    m = len(poly)
    for i in range(m):
        j = (i + 1) % m
        if keep[i]:
            out.append(poly[i])
        if keep[i] != keep[j]:
            t = dist[i] / (dist[i] - dist[j])
            out.append(poly[i] + t * (poly[j] - poly[i]))
    return np.array(out)


def _polygon_area_centroid(poly):
    v0 = poly[0]
    cross = np.cross(poly[1:-1] - v0, poly[2:] - v0)
    tri_areas = 0.5 * np.linalg.norm(cross, axis=1)
    area = tri_areas.sum()
    if area <= 0.0:
        return 0.0, v0
    tri_centroids = (v0 + poly[1:-1] + poly[2:]) / 3.0
    centroid = (tri_areas[:, None] * tri_centroids).sum(axis=0) / area
    return float(area), centroid


def _point_in_tet(p, v):
    for n, o in _tet_face_planes(v):
        if p @ n < o - 1e-12:
            return False
    return True


def patch_contact_query(body_a, body_b, id_a=0, id_b=1, keep_polygons=False):
    """Equal-pressure contact polygons between two pressure bodies.

    Each overlapping tet pair contributes at most one polygon; polygons with
    area below 1e-14 m^2 or zero equilibrium pressure are dropped.  Raises
    DegenerateGradient when the pressure-difference field is constant inside
    an overlapping pair.
    """
    verts_a = body_a.world_vertices()
    verts_b = body_b.world_vertices()
    grad_a, off_a = linear_fields(body_a)
    grad_b, off_b = linear_fields(body_b)

    lo_a, hi_a = _tet_aabbs(verts_a, body_a.tets)
    lo_b, hi_b = _tet_aabbs(verts_b, body_b.tets)
    overlap = np.all(
        (lo_a[:, None, :] <= hi_b[None, :, :]) & (lo_b[None, :, :] <= hi_a[:, None, :]),
        axis=2)
    pairs = np.argwhere(overlap)

    contacts = []
    for ia, ib in pairs:
        g = grad_a[ia] - grad_b[ib]
        c = off_a[ia] - off_b[ib]
        gnorm = np.linalg.norm(g)
        va = verts_a[body_a.tets[ia]]
        vb = verts_b[body_b.tets[ib]]
        if gnorm < _MIN_GRADIENT:
            # constant difference field: degenerate only if the tets overlap
            probe = np.vstack([va, vb, [va.mean(axis=0)], [vb.mean(axis=0)]])
            if any(_point_in_tet(p, vb) for p in probe[:5]) or \
               any(_point_in_tet(p, va) for p in probe[4:]):
                raise DegenerateGradient(
                    "pressure-difference gradient below 1e-12 Pa/m in an "
                    "overlapping tet pair")
            continue
        normal = g / gnorm

        # seed quad spanning the equal-pressure plane around the pair
        center = 0.5 * (va.mean(axis=0) + vb.mean(axis=0))
        center = center - normal * ((center @ g + c) / gnorm)
        size = 2.0 * max(np.linalg.norm(va - center, axis=1).max(),
                         np.linalg.norm(vb - center, axis=1).max())
        u = np.array([1.0, 0.0, 0.0])
        if abs(normal[0]) > 0.9:
            u = np.array([0.0, 1.0, 0.0])
        u = u - normal * (u @ normal)
        u /= np.linalg.norm(u)
        w = np.cross(normal, u)
        poly = np.array([center + size * (su * u + sw * w)
                         for su, sw in ((-1, -1), (1, -1), (1, 1), (-1, 1))])

        for v in (va, vb):
            for pn, po in _tet_face_planes(v):
                poly = _clip_polygon(poly, pn, po)
                if len(poly) < 3:
                    break
            if len(poly) < 3:
                break
        if len(poly) < 3:
            continue

        area, centroid = _polygon_area_centroid(poly)
        if area < _MIN_AREA:
            continue
        pressure = float(grad_a[ia] @ centroid + off_a[ia])
        if pressure <= 0.0:
            continue
        slope_a = float(grad_a[ia] @ normal)
        slope_b = float(-grad_b[ib] @ normal)
        if slope_a <= 0.0 or slope_b <= 0.0:
            continue
        g_eff = slope_a * slope_b / (slope_a + slope_b)
        contacts.append(ContactPoint(
            body_a=id_a, body_b=id_b, position=centroid, normal=normal.copy(),
            phi=-pressure / g_eff, area=area, pressure=pressure,
            pressure_gradient=g_eff,
            polygon=poly.copy() if keep_polygons else None,
            feature_a=("tet", int(ia)), feature_b=("tet", int(ib)),
        ))

    contacts.sort(key=lambda cp: (cp.feature_a[1], cp.feature_b[1]))
    return contacts


def dump_patches(contacts, path):
    """Write contact polygons as a line-based polygon soup for plotting.

    One polygon per line: body ids, normal, area, then the vertex coordinates.
    """
    with open(path, "w") as fh:
        for c in contacts:
            if c.polygon is None:
                continue
            fields = [str(c.body_a), str(c.body_b)]
            fields += [f"{x:.9g}" for x in c.normal]
            fields.append(f"{c.area:.9g}")
            fields += [f"{x:.9g}" for x in c.polygon.ravel()]
            fh.write(" ".join(fields) + "\n")
