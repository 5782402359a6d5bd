"""Contact pipeline on top of the geometry layer.

Builds collision shapes from rod edges and rigid bodies, enumerates candidate
pairs with an axis-sweep broad phase (excluding neighboring segments of the
same filament), runs the point or patch narrow phase, and assembles the
contact Jacobian mapping generalized velocity to per-contact relative
velocities expressed in local contact frames (normal along z).
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse

from . import pressure as pressmod
from . import shapes as shapesmod


def combine_friction(mu_a, mu_b):
    if mu_a <= 0.0 or mu_b <= 0.0:
        return 0.0
    return 2.0 * mu_a * mu_b / (mu_a + mu_b)


def rod_edge_shape(entity, edge):
    """Collision primitive for one rod edge: capsule for circular sections,
    box aligned with the material frame for rectangular ones."""
    state = entity.state
    p0 = state.nodes[edge]
    p1 = state.nodes[edge + 1]
    section = entity.params.cross_section
    if section.kind == "circular":
        return shapesmod.capsule_between(p0, p1, section.radius)
    t = p1 - p0
    length = np.linalg.norm(t)
    t = t / length
    gam = state.edge_angles[edge]
    m1 = np.cos(gam) * state.ref_dir1[edge] + np.sin(gam) * state.ref_dir2[edge]
    m2 = np.cross(t, m1)
    rot = np.stack([t, m1, m2], axis=1)
    half = np.array([0.5 * length, 0.5 * section.width, 0.5 * section.height])
    return shapesmod.Shape("box", shapesmod.Pose(rot, 0.5 * (p0 + p1)),
                           half_extents=half)


def collision_shapes(system):
    """All collision primitives with their owners.

    Owners are ("rod", rod_index, edge_index) or ("body", body_index).
    """
    shapes = []
    owners = []
    for i, r in enumerate(system.rods):
        for e in range(r.state.num_edges):
            shapes.append(rod_edge_shape(r, e))
            owners.append(("rod", i, e))
    for j, b in enumerate(system.bodies):
        shapes.append(b.shape)
        owners.append(("body", j))
    return shapes, owners


def _pair_excluded(owner_a, owner_b, system):
    if owner_a[0] == "body" and owner_b[0] == "body":
        ba = system.bodies[owner_a[1]]
        bb = system.bodies[owner_b[1]]
        return ba.motion != "dynamic" and bb.motion != "dynamic"
    if owner_a[0] == "rod" and owner_b[0] == "rod" and owner_a[1] == owner_b[1]:
        entity = system.rods[owner_a[1]]
        if not entity.self_collision:
            return True
        gap = abs(owner_a[2] - owner_b[2])
        if entity.loop:
            gap = min(gap, entity.state.num_edges - gap)
        return gap <= entity.neighbor_exclusion
    return False


def candidate_pairs(system, margin=0.0, shapes=None, owners=None):
    """Broad-phase candidate pairs: sorted sweep over axis-aligned bounds."""
    if shapes is None:
        shapes, owners = collision_shapes(system)
    n = len(shapes)
    if n < 2:
        return []
    lo = np.empty((n, 3))
    hi = np.empty((n, 3))
    for idx, s in enumerate(shapes):
        lo[idx], hi[idx] = s.aabb(margin=0.5 * margin)
    spans = hi.mean(axis=0) - lo.mean(axis=0)
    axis = int(np.argmax(np.var(0.5 * (lo + hi), axis=0)))
    order = np.argsort(lo[:, axis], kind="stable")
    pairs = []
    for ii in range(n):
        a = order[ii]
        for jj in range(ii + 1, n):
            b = order[jj]
            if lo[b, axis] > hi[a, axis]:
                break
            if np.any(lo[b] > hi[a]) or np.any(lo[a] > hi[b]):
                continue
            pa, pb = (a, b) if a < b else (b, a)
            if _pair_excluded(owners[pa], owners[pb], system):
                continue
            pairs.append((pa, pb))
    pairs.sort()
    return pairs


def point_contacts(system, margin=0.0):
    """Point-contact set over the current entity configuration, sorted."""
    shapes, owners = collision_shapes(system)
    contacts = []
    for a, b in candidate_pairs(system, margin, shapes, owners):
        hits = shapesmod.point_contact_query(shapes[a], shapes[b],
                                             id_a=a, id_b=b, margin=margin)
        mu = _pair_friction(system, owners[a], owners[b])
        for c in hits:
            c.friction = mu
            c.feature_a = owners[a]
            c.feature_b = owners[b]
            contacts.append(c)
    contacts.sort(key=_contact_sort_key)
    return contacts


def _pair_friction(system, owner_a, owner_b):
    def mu_of(owner):
        if owner[0] == "rod":
            return system.rods[owner[1]].friction
        return system.bodies[owner[1]].friction

    table = getattr(system, "friction_overrides", None)
    if table:
        key = frozenset([_owner_name(system, owner_a), _owner_name(system, owner_b)])
        if key in table:
            return table[key]
    return combine_friction(mu_of(owner_a), mu_of(owner_b))


def _owner_name(system, owner):
    if owner[0] == "rod":
        return system.rods[owner[1]].name
    return system.bodies[owner[1]].name


def _contact_sort_key(c):
    return (c.feature_a, c.feature_b,
            round(c.position[0], 12), round(c.position[1], 12),
            round(c.position[2], 12))


# ---------------------------------------------------------------------------
# patch contacts


def _pressure_body_for(system, owner):
    if owner[0] == "body":
        entity = system.bodies[owner[1]]
        cache = getattr(entity, "_pressure_cache", None)
        if cache is None:
            kwargs = {}
            if entity.shape.kind == "halfspace":
                kwargs = {"extent": getattr(entity, "slab_extent", 1.0),
                          "thickness": getattr(entity, "slab_thickness", 0.1)}
            cache = pressmod.build_pressure_body(
                entity.shape, entity.p_max, entity.mesh_resolution, **kwargs)
            entity._pressure_cache = cache
        cache.pose = entity.shape.pose
        return cache
    _, i, e = owner
    entity = system.rods[i]
    shape = rod_edge_shape(entity, e)
    if shape.kind == "capsule":
        body = pressmod.capsule_pressure_body(
            shape.radius, shape.half_length, entity.p_max,
            max(2, entity.mesh_resolution))
    else:
        body = pressmod.box_pressure_body(
            shape.half_extents, entity.p_max, entity.mesh_resolution)
    body.pose = shape.pose
    return body


def patch_contacts(system, keep_polygons=False):
    """Pressure-field patch contacts over all candidate pairs, sorted."""
    shapes, owners = collision_shapes(system)
    contacts = []
    for a, b in candidate_pairs(system, 0.0, shapes, owners):
        body_a = _pressure_body_for(system, owners[a])
        body_b = _pressure_body_for(system, owners[b])
        hits = pressmod.patch_contact_query(body_a, body_b, id_a=a, id_b=b,
                                            keep_polygons=keep_polygons)
        mu = _pair_friction(system, owners[a], owners[b])
        for c in hits:
            c.friction = mu
            c.feature_a = owners[a] + c.feature_a[1:]
            c.feature_b = owners[b] + c.feature_b[1:]
            contacts.append(c)
    contacts.sort(key=_contact_sort_key)
    return contacts


def detect_contacts(system, model="point", margin=0.0, keep_polygons=False):
    if model == "point":
        return point_contacts(system, margin)
    if model == "patch":
        return patch_contacts(system, keep_polygons=keep_polygons)
    raise ValueError(f"unknown contact model {model!r}")


# ---------------------------------------------------------------------------
# contact Jacobian


def contact_frame(normal):
    """Orthonormal contact frame with the normal as the z axis."""
    t1 = np.array([1.0, 0.0, 0.0])
    if abs(normal[0]) > 0.9:
        t1 = np.array([0.0, 1.0, 0.0])
    t1 = t1 - normal * (t1 @ normal)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(normal, t1)
    return np.stack([t1, t2, normal], axis=1)


@dataclass
class ContactJacobian:
    """Sparse map: v_c = J^T v, stacked per contact in local frames."""

    matrix: scipy.sparse.csc_matrix       # (n_v, 3 n_c)
    frames: list                          # world rotation per contact (3x3)
    contacts: list

    @property
    def num_contacts(self):
        return len(self.contacts)

    def relative_velocities(self, v):
        return self.matrix.T @ v


def _owner_rows(system, owner, witness):
    """(dof_indices, weight_vectors) so that velocity of the witness point is
    sum_k weight_k * v[dof_k] (weights are 3-vectors or scalars per dof)."""
    if owner[0] == "rod":
        _, i, e = owner
        state = system.rods[i].state
        x0 = state.nodes[e]
        x1 = state.nodes[e + 1]
        seg = x1 - x0
        denom = float(seg @ seg)
        s = 0.0 if denom == 0.0 else float(np.clip((witness - x0) @ seg / denom, 0.0, 1.0))
        rows = []
        base0 = system.rod_v_offsets[i] + 4 * e
        base1 = system.rod_v_offsets[i] + 4 * (e + 1)
        for k in range(3):
            rows.append((base0 + k, np.eye(3)[k] * (1.0 - s)))
            rows.append((base1 + k, np.eye(3)[k] * s))
        return rows
    j = owner[1]
    entity = system.bodies[j]
    com = entity.shape.pose.translation
    r = witness - com
    off = system.body_v_offsets[j]
    rows = []
    for k in range(3):
        basis = np.zeros(3)
        basis[k] = 1.0
        rows.append((off + k, np.cross(basis, r)))      # omega_k contributes e_k x r
        rows.append((off + 3 + k, basis))               # linear velocity
    return rows


def contact_jacobian(system, contacts):
    """Assemble J (n_v x 3 n_c) with per-contact frames [t1 t2 n]."""
    rows = []
    cols = []
    vals = []
    frames = []
    for ci, c in enumerate(contacts):
        frame = contact_frame(c.normal)
        frames.append(frame)
        for owner, sign in ((c.feature_a, 1.0), (c.feature_b, -1.0)):
            owner_key = owner[:3] if owner[0] == "rod" else owner[:2]
            for dof, weight in _owner_rows(system, owner_key, c.position):
                contrib = sign * (weight @ frame)       # (3,) per contact axis
                for k in range(3):
                    if contrib[k] != 0.0:
                        rows.append(dof)
                        cols.append(3 * ci + k)
                        vals.append(contrib[k])
    mat = scipy.sparse.csc_matrix(
        (vals, (rows, cols)), shape=(system.n_v, 3 * len(contacts)))
    return ContactJacobian(mat, frames, list(contacts))


def stabilization_bias(contacts, dt, scale=1.0):
    """Per-contact bias: tangential zero, normal -phi0/dt (scaled)."""
    vhat = np.zeros(3 * len(contacts))
    for i, c in enumerate(contacts):
        vhat[3 * i + 2] = -scale * c.phi / dt
    return vhat
