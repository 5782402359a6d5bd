"""Discrete elastic rod mechanics.

A rod is a polyline of ``n_n`` nodes joined by ``n_e = n_n - 1`` edges.  Each
edge carries a twist-free reference frame ``(d1, d2, t)`` and a material frame
obtained by rotating the reference frame about the tangent by the edge angle
``gamma``.  The generalized coordinates interleave nodal positions and edge
angles, ``[x_0, gamma_0, x_1, ..., gamma_{n_e-1}, x_{n_n-1}]``, which keeps the
stiffness matrix banded (half bandwidth 10).

Elastic energy is the sum of stretching (per edge), twisting and bending (per
interior node).  Gradient and Hessian are analytic; the formulas for the
curvature/twist derivatives follow the standard discrete-rod results with
averaged material directors, extended with the curvature/edge-angle coupling
terms so that the bending energy's dependence on the edge angles is exact.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AntiparallelTangents, DegenerateEdge

_EDGE_EPS = 1e-12
_CHI_EPS = 1e-9


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class CrossSection:
    """Rod cross-section; either circular (radius) or rectangular (width, height).

    ``width`` extends along the first material director, ``height`` along the
    second.
    """

    kind: str
    radius: float = 0.0
    width: float = 0.0
    height: float = 0.0

    def __post_init__(self):
        if self.kind == "circular":
            if self.radius <= 0.0:
                raise ValueError("circular section needs radius > 0")
        elif self.kind == "rectangular":
            if self.width <= 0.0 or self.height <= 0.0:
                raise ValueError("rectangular section needs width, height > 0")
        else:
            raise ValueError(f"unknown cross-section kind {self.kind!r}")

    @staticmethod
    def circular(radius):
        return CrossSection("circular", radius=radius)

    @staticmethod
    def rectangular(width, height):
        return CrossSection("rectangular", width=width, height=height)

    @property
    def area(self):
        if self.kind == "circular":
            return np.pi * self.radius**2
        return self.width * self.height

    @property
    def second_moment_1(self):
        # resists the curvature component measured against the second director
        if self.kind == "circular":
            return np.pi * self.radius**4 / 4.0
        return self.height * self.width**3 / 12.0

    @property
    def second_moment_2(self):
        if self.kind == "circular":
            return np.pi * self.radius**4 / 4.0
        return self.width * self.height**3 / 12.0

    @property
    def torsion_constant(self):
        if self.kind == "circular":
            return np.pi * self.radius**4 / 2.0
        # Saint-Venant approximation for a solid rectangle
        a = max(self.width, self.height) / 2.0
        b = min(self.width, self.height) / 2.0
        return a * b**3 * (16.0 / 3.0 - 3.36 * (b / a) * (1.0 - b**4 / (12.0 * a**4)))


@dataclass(frozen=True)
class RodParameters:
    """Material and section constants of one rod."""

    youngs_modulus: float
    shear_modulus: float
    cross_section: CrossSection
    density: float
    rayleigh_alpha: float = 0.0
    rayleigh_beta: float = 0.0

    def __post_init__(self):
        if self.youngs_modulus <= 0.0:
            raise ValueError("youngs_modulus must be > 0")
        if self.shear_modulus <= 0.0:
            raise ValueError("shear_modulus must be > 0")
        if self.density <= 0.0:
            raise ValueError("density must be > 0")
        if self.rayleigh_alpha < 0.0 or self.rayleigh_beta < 0.0:
            raise ValueError("Rayleigh coefficients must be >= 0")

    @property
    def stretch_stiffness(self):
        return self.youngs_modulus * self.cross_section.area

    @property
    def bend_stiffness_1(self):
        return self.youngs_modulus * self.cross_section.second_moment_1

    @property
    def bend_stiffness_2(self):
        return self.youngs_modulus * self.cross_section.second_moment_2

    @property
    def twist_stiffness(self):
        return self.shear_modulus * self.cross_section.torsion_constant


# ---------------------------------------------------------------------------
# state


@dataclass
class RodState:
    """Configuration and rest data of one rod.

    ``ref_dir1``/``ref_dir2`` are the reference directors per edge, orthonormal
    with the current tangents.  ``ref_twist`` stores the accumulated signed
    angle between space-transported consecutive directors (unwrapped across
    steps so twist stays continuous through full turns).
    """

    nodes: np.ndarray           # (n_n, 3)
    edge_angles: np.ndarray     # (n_e,)
    ref_dir1: np.ndarray        # (n_e, 3)
    ref_dir2: np.ndarray        # (n_e, 3)
    ref_twist: np.ndarray       # (n_n - 2,)
    rest_edge_lengths: np.ndarray   # (n_e,)
    voronoi_lengths: np.ndarray     # (n_n - 2,)
    rest_curvatures: np.ndarray     # (n_n - 2, 2)
    rest_twists: np.ndarray         # (n_n - 2,)

    @property
    def num_nodes(self):
        return self.nodes.shape[0]

    @property
    def num_edges(self):
        return self.nodes.shape[0] - 1

    @property
    def num_dofs(self):
        return 4 * self.num_nodes - 1

    def tangents(self):
        edges = self.nodes[1:] - self.nodes[:-1]
        lengths = np.linalg.norm(edges, axis=1)
        if np.any(lengths < _EDGE_EPS):
            raise DegenerateEdge("edge length below 1e-12 m")
        return edges / lengths[:, None]

    def copy(self):
        return RodState(
            self.nodes.copy(), self.edge_angles.copy(),
            self.ref_dir1.copy(), self.ref_dir2.copy(), self.ref_twist.copy(),
            self.rest_edge_lengths.copy(), self.voronoi_lengths.copy(),
            self.rest_curvatures.copy(), self.rest_twists.copy(),
        )


def make_rod_state(nodes, edge_angles=None, rest_from_shape=True,
                   rest_edge_lengths=None):
    """Build a rod state from a centerline polyline.

    The reference frame of the first edge is an arbitrary unit vector normal to
    it; subsequent frames follow by parallel transport along the centerline, so
    the initial reference twist is zero.  With ``rest_from_shape`` the built
    shape is stress free; otherwise the rest curvatures/twists are zero (a
    naturally straight rod) while rest lengths still come from the polyline
    unless given explicitly.
    """
    nodes = np.asarray(nodes, dtype=float)
    n = nodes.shape[0]
    if n < 2:
        raise ValueError("a rod needs at least two nodes")
    edges = nodes[1:] - nodes[:-1]
    lengths = np.linalg.norm(edges, axis=1)
    if np.any(lengths < _EDGE_EPS):
        raise DegenerateEdge("degenerate edge in centerline")
    tangents = edges / lengths[:, None]

    d1 = np.empty_like(tangents)
    d1[0] = _any_unit_normal(tangents[0])
    for i in range(1, n - 1):
        d1[i] = _transport_one(d1[i - 1], tangents[i - 1], tangents[i])
    d1 = _orthonormalize(d1, tangents)
    d2 = np.cross(tangents, d1)

    if edge_angles is None:
        edge_angles = np.zeros(n - 1)
    else:
        edge_angles = np.asarray(edge_angles, dtype=float).copy()

    if rest_edge_lengths is None:
        rest_edge_lengths = lengths.copy()
    else:
        rest_edge_lengths = np.asarray(rest_edge_lengths, dtype=float).copy()
    voronoi = 0.5 * (rest_edge_lengths[:-1] + rest_edge_lengths[1:])

    state = RodState(
        nodes=nodes.copy(), edge_angles=edge_angles,
        ref_dir1=d1, ref_dir2=d2, ref_twist=np.zeros(n - 2),
        rest_edge_lengths=rest_edge_lengths, voronoi_lengths=voronoi,
        rest_curvatures=np.zeros((n - 2, 2)), rest_twists=np.zeros(n - 2),
    )
    if rest_from_shape and n > 2:
        cache = compute_frames(state)
        state.rest_curvatures = cache.curvatures.copy()
        state.rest_twists = cache.twists.copy()
    return state


def _any_unit_normal(t):
    ref = np.array([1.0, 0.0, 0.0])
    if abs(t[0]) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    v = np.cross(t, ref)
    return v / np.linalg.norm(v)


def _orthonormalize(d1, tangents):
    d1 = d1 - np.sum(d1 * tangents, axis=1)[:, None] * tangents
    return d1 / np.linalg.norm(d1, axis=1)[:, None]


def _transport_one(v, t0, t1):
    b = np.cross(t0, t1)
    s = np.linalg.norm(b)
    c = float(np.dot(t0, t1))
    if 1.0 + c < _CHI_EPS:
        raise AntiparallelTangents("consecutive tangents are antiparallel")
    if s < 1e-14:
        return v.copy()
    axis = b / s
    return c * v + np.cross(b, v) + axis * np.dot(axis, v) * (1.0 - c)


def parallel_transport(vectors, t_from, t_to):
    """Minimal rotation carrying each row of ``vectors`` from ``t_from`` to ``t_to``."""
    b = np.cross(t_from, t_to)
    s = np.linalg.norm(b, axis=1)
    c = np.sum(t_from * t_to, axis=1)
    if np.any(1.0 + c < _CHI_EPS):
        raise AntiparallelTangents("antiparallel tangents in parallel transport")
    out = vectors.copy()
    ok = s >= 1e-14
    if np.any(ok):
        axis = np.zeros_like(b)
        axis[ok] = b[ok] / s[ok, None]
        dot_av = np.sum(axis * vectors, axis=1)
        rotated = (c[:, None] * vectors + np.cross(b, vectors)
                   + axis * (dot_av * (1.0 - c))[:, None])
        out[ok] = rotated[ok]
    return out


# ---------------------------------------------------------------------------
# kinematics


@dataclass
class RodKinematicsCache:
    """Per-configuration quantities shared by energy/force/Hessian evaluation."""

    edges: np.ndarray          # (n_e, 3)
    lengths: np.ndarray        # (n_e,)
    tangents: np.ndarray       # (n_e, 3)
    mat_dir1: np.ndarray       # (n_e, 3)
    mat_dir2: np.ndarray       # (n_e, 3)
    curvature_binormals: np.ndarray  # (n_i, 3)
    curvatures: np.ndarray     # (n_i, 2)
    turning_angles: np.ndarray  # (n_i,)  signed frame-transport angle
    twists: np.ndarray         # (n_i,)
    chi: np.ndarray            # (n_i,)  1 + t_{i-1} . t_i


def _signed_angle(u, v, axis):
    return np.arctan2(np.sum(np.cross(u, v) * axis, axis=1), np.sum(u * v, axis=1))


def _rotate_about(v, axis, angle):
    c = np.cos(angle)[:, None]
    s = np.sin(angle)[:, None]
    return (c * v + s * np.cross(axis, v)
            + axis * (np.sum(axis * v, axis=1) * (1.0 - np.cos(angle)))[:, None])


def compute_frames(state):
    """Material frames, discrete curvatures, and twists for ``state``.

    The turning angle at each interior node is measured between the
    space-transported first director of the incoming edge and the first
    director of the outgoing edge, unwrapped against the stored reference
    twist so it is continuous across steps.
    """
    edges = state.nodes[1:] - state.nodes[:-1]
    lengths = np.linalg.norm(edges, axis=1)
    if np.any(lengths < _EDGE_EPS):
        raise DegenerateEdge("edge length below 1e-12 m")
    tangents = edges / lengths[:, None]

    te = tangents[:-1]
    tf = tangents[1:]
    chi = 1.0 + np.sum(te * tf, axis=1)
    if np.any(chi < _CHI_EPS):
        raise AntiparallelTangents("1 + t_prev . t_next below 1e-9")

    gam = state.edge_angles
    cg = np.cos(gam)[:, None]
    sg = np.sin(gam)[:, None]
    m1 = cg * state.ref_dir1 + sg * state.ref_dir2
    m2 = -sg * state.ref_dir1 + cg * state.ref_dir2

    kb = 2.0 * np.cross(te, tf) / chi[:, None]
    kap1 = 0.5 * np.sum(kb * (m2[:-1] + m2[1:]), axis=1)
    kap2 = -0.5 * np.sum(kb * (m1[:-1] + m1[1:]), axis=1)

    if state.num_nodes > 2:
        transported = parallel_transport(state.ref_dir1[:-1], te, tf)
        transported = _rotate_about(transported, tf, state.ref_twist)
        beta = state.ref_twist + _signed_angle(transported, state.ref_dir1[1:], tf)
    else:
        beta = np.zeros(0)
    twists = gam[1:] - gam[:-1] + beta

    return RodKinematicsCache(
        edges=edges, lengths=lengths, tangents=tangents,
        mat_dir1=m1, mat_dir2=m2,
        curvature_binormals=kb,
        curvatures=np.stack([kap1, kap2], axis=1),
        turning_angles=beta, twists=twists, chi=chi,
    )


def time_parallel_transport(state, new_nodes):
    """Carry the reference frames of ``state`` onto a new centerline.

    Each first director is rotated by the minimal rotation taking the old edge
    tangent to the new one (no rotation about the new tangent), then
    re-orthonormalized.  Rest data and edge angles are unchanged.
    """
    new_nodes = np.asarray(new_nodes, dtype=float)
    t_old = state.tangents()
    edges = new_nodes[1:] - new_nodes[:-1]
    lengths = np.linalg.norm(edges, axis=1)
    if np.any(lengths < _EDGE_EPS):
        raise DegenerateEdge("degenerate edge after position update")
    t_new = edges / lengths[:, None]
    d1 = parallel_transport(state.ref_dir1, t_old, t_new)
    d1 = _orthonormalize(d1, t_new)
    d2 = np.cross(t_new, d1)
    return replace(state, nodes=new_nodes.copy(), ref_dir1=d1, ref_dir2=d2,
                   ref_twist=state.ref_twist.copy(),
                   edge_angles=state.edge_angles.copy())


def advance_state(state, new_nodes, new_edge_angles):
    """Transport frames to the new configuration and commit the unwrapped twist."""
    new_state = time_parallel_transport(state, new_nodes)
    new_state.edge_angles = np.asarray(new_edge_angles, dtype=float).copy()
    cache = compute_frames(new_state)
    new_state.ref_twist = cache.turning_angles.copy()
    return new_state


# ---------------------------------------------------------------------------
# DoF packing

def pack_dofs(nodes, edge_angles):
    """Interleave positions and edge angles into one DoF vector."""
    n = nodes.shape[0]
    q = np.empty(4 * n - 1)
    idx = np.arange(n)
    q[4 * idx[:, None] + np.arange(3)] = nodes
    q[4 * np.arange(n - 1) + 3] = edge_angles
    return q


def unpack_dofs(q, num_nodes):
    nodes = q[(4 * np.arange(num_nodes))[:, None] + np.arange(3)]
    angles = q[4 * np.arange(num_nodes - 1) + 3]
    return nodes, angles


def node_dofs(i):
    return slice(4 * i, 4 * i + 3)


def edge_dof(j):
    return 4 * j + 3


# ---------------------------------------------------------------------------
# energies


def elastic_energy(state, params, cache=None):
    """Return (stretch, twist, bend) energies in joules."""
    if cache is None:
        cache = compute_frames(state)
    eps = cache.lengths / state.rest_edge_lengths - 1.0
    e_s = 0.5 * params.stretch_stiffness * np.sum(eps**2 * state.rest_edge_lengths)

    if state.num_nodes > 2:
        dtw = cache.twists - state.rest_twists
        e_t = 0.5 * params.twist_stiffness * np.sum(dtw**2 / state.voronoi_lengths)
        dk = cache.curvatures - state.rest_curvatures
        e_b = 0.5 * np.sum(
            (params.bend_stiffness_1 * dk[:, 0]**2
             + params.bend_stiffness_2 * dk[:, 1]**2) / state.voronoi_lengths)
    else:
        e_t = 0.0
        e_b = 0.0
    return float(e_s), float(e_t), float(e_b)


def total_elastic_energy(state, params, cache=None):
    return sum(elastic_energy(state, params, cache))


# ---------------------------------------------------------------------------
# derivative kernels
#
# Per interior node the stencil couples 11 DoFs ordered
#   [x_prev (3), gamma_prev, x_mid (3), gamma_next, x_next (3)].
# All kernels are vectorized over interior nodes.


def _curvature_stencil(state, cache):
    """First derivatives of both curvature components over the 11-DoF stencil."""
    n_i = state.num_nodes - 2
    te = cache.tangents[:-1]
    tf = cache.tangents[1:]
    le = cache.lengths[:-1, None]
    lf = cache.lengths[1:, None]
    chi = cache.chi[:, None]
    kb = cache.curvature_binormals
    m1e, m1f = cache.mat_dir1[:-1], cache.mat_dir1[1:]
    m2e, m2f = cache.mat_dir2[:-1], cache.mat_dir2[1:]
    kap = cache.curvatures

    tilde_t = (te + tf) / chi
    tilde_d1 = (m1e + m1f) / chi
    tilde_d2 = (m2e + m2f) / chi

    dk1_de = (-kap[:, 0:1] * tilde_t + np.cross(tf, tilde_d2)) / le
    dk1_df = (-kap[:, 0:1] * tilde_t - np.cross(te, tilde_d2)) / lf
    dk2_de = (-kap[:, 1:2] * tilde_t - np.cross(tf, tilde_d1)) / le
    dk2_df = (-kap[:, 1:2] * tilde_t + np.cross(te, tilde_d1)) / lf

    # edge-angle derivatives: the material directors rotate with gamma
    dk1_dge = -0.5 * np.sum(kb * m1e, axis=1)
    dk1_dgf = -0.5 * np.sum(kb * m1f, axis=1)
    dk2_dge = -0.5 * np.sum(kb * m2e, axis=1)
    dk2_dgf = -0.5 * np.sum(kb * m2f, axis=1)

    grad1 = np.zeros((n_i, 11))
    grad2 = np.zeros((n_i, 11))
    for g, d_de, d_df, d_ge, d_gf in (
        (grad1, dk1_de, dk1_df, dk1_dge, dk1_dgf),
        (grad2, dk2_de, dk2_df, dk2_dge, dk2_dgf),
    ):
        g[:, 0:3] = -d_de
        g[:, 3] = d_ge
        g[:, 4:7] = d_de - d_df
        g[:, 7] = d_gf
        g[:, 8:11] = d_df
    aux = {
        "tilde_t": tilde_t, "tilde_d1": tilde_d1, "tilde_d2": tilde_d2,
        "dk1_de": dk1_de, "dk1_df": dk1_df, "dk2_de": dk2_de, "dk2_df": dk2_df,
    }
    return grad1, grad2, aux


def _twist_stencil(state, cache):
    """First derivative of the twist over the 11-DoF stencil."""
    n_i = state.num_nodes - 2
    kb = cache.curvature_binormals
    le = cache.lengths[:-1, None]
    lf = cache.lengths[1:, None]
    db_de = 0.5 * kb / le
    db_df = 0.5 * kb / lf
    grad = np.zeros((n_i, 11))
    grad[:, 0:3] = -db_de
    grad[:, 3] = -1.0
    grad[:, 4:7] = db_de - db_df
    grad[:, 7] = 1.0
    grad[:, 8:11] = db_df
    return grad, db_de, db_df


def elastic_gradient(state, params, cache=None):
    """Gradient of the total elastic energy w.r.t. the interleaved DoFs."""
    if cache is None:
        cache = compute_frames(state)
    n = state.num_nodes
    grad = np.zeros(4 * n - 1)

    # stretching
    eps = cache.lengths / state.rest_edge_lengths - 1.0
    f_edge = params.stretch_stiffness * eps[:, None] * cache.tangents
    _scatter_nodes(grad, np.arange(n - 1), -f_edge)
    _scatter_nodes(grad, np.arange(1, n), f_edge)

    if n > 2:
        ei1 = params.bend_stiffness_1
        ei2 = params.bend_stiffness_2
        gj = params.twist_stiffness
        inv_vl = 1.0 / state.voronoi_lengths
        dk = cache.curvatures - state.rest_curvatures
        c1 = ei1 * dk[:, 0] * inv_vl
        c2 = ei2 * dk[:, 1] * inv_vl
        grad1, grad2, _ = _curvature_stencil(state, cache)
        stencil = c1[:, None] * grad1 + c2[:, None] * grad2

        ct = gj * (cache.twists - state.rest_twists) * inv_vl
        tgrad, _, _ = _twist_stencil(state, cache)
        stencil += ct[:, None] * tgrad
        _scatter_stencils(grad, stencil)
    return grad


def _scatter_nodes(grad, node_idx, values):
    dof = (4 * node_idx)[:, None] + np.arange(3)
    np.add.at(grad, dof.ravel(), values.ravel())


_STENCIL_OFFSETS = np.arange(11)


def _stencil_dof_indices(n_interior):
    # interior node i couples DoFs 4(i-1) .. 4(i-1)+10, for i = 1..n_n-2
    base = 4 * np.arange(n_interior)
    return base[:, None] + _STENCIL_OFFSETS


def _scatter_stencils(grad, stencil_values):
    idx = _stencil_dof_indices(stencil_values.shape[0])
    np.add.at(grad, idx.ravel(), stencil_values.ravel())


# ---------------------------------------------------------------------------
# Hessian


def _outer(a, b):
    return a[:, :, None] * b[:, None, :]


def _cross_matrices(v):
    n = v.shape[0]
    m = np.zeros((n, 3, 3))
    m[:, 0, 1] = -v[:, 2]
    m[:, 0, 2] = v[:, 1]
    m[:, 1, 0] = v[:, 2]
    m[:, 1, 2] = -v[:, 0]
    m[:, 2, 0] = -v[:, 1]
    m[:, 2, 1] = v[:, 0]
    return m


def _curvature_hessian_blocks(state, cache, aux):
    """Second derivatives of both curvature components.

    Returns two (n_i, 11, 11) arrays.  The position-position blocks are the
    classical discrete-rod expressions with averaged directors; the blocks
    involving the edge angles follow from rotating the material directors.
    """
    te = cache.tangents[:-1]
    tf = cache.tangents[1:]
    le = cache.lengths[:-1]
    lf = cache.lengths[1:]
    chi = cache.chi
    kb = cache.curvature_binormals
    m1e, m1f = cache.mat_dir1[:-1], cache.mat_dir1[1:]
    m2e, m2f = cache.mat_dir2[:-1], cache.mat_dir2[1:]
    kap1 = cache.curvatures[:, 0]
    kap2 = cache.curvatures[:, 1]
    tilde_t = aux["tilde_t"]
    tilde_d1 = aux["tilde_d1"]
    tilde_d2 = aux["tilde_d2"]

    le2 = (le**2)[:, None, None]
    lf2 = (lf**2)[:, None, None]
    lelf = (le * lf)[:, None, None]
    chi_c = chi[:, None, None]
    k1_c = kap1[:, None, None]
    k2_c = kap2[:, None, None]

    eye = np.eye(3)[None]
    tt = _outer(tilde_t, tilde_t)
    P_te = eye - _outer(te, te)
    P_tf = eye - _outer(tf, tf)
    te_tf = _outer(te, tf)

    tf_x_d2 = np.cross(tf, tilde_d2)
    te_x_d2 = np.cross(te, tilde_d2)
    tf_x_d1 = np.cross(tf, tilde_d1)
    te_x_d1 = np.cross(te, tilde_d1)

    def sym(a, b):
        return _outer(a, b) + _outer(b, a)

    # kappa_1 position blocks; the kb/director term carries the director of the
    # differentiated edge (only that director varies with it)
    d2k1_ee = ((2.0 * k1_c * tt - sym(tf_x_d2, tilde_t)) / le2
               - (k1_c / (chi_c * le2)) * P_te
               + sym(kb, m2e) / (4.0 * le2))
    d2k1_ff = ((2.0 * k1_c * tt + sym(te_x_d2, tilde_t)) / lf2
               - (k1_c / (chi_c * lf2)) * P_tf
               + sym(kb, m2f) / (4.0 * lf2))
    d2k1_ef = (-k1_c / (chi_c * lelf) * (eye + te_tf)
               + (2.0 * k1_c * tt - _outer(tf_x_d2, tilde_t)
                  + _outer(tilde_t, te_x_d2) - _cross_matrices(tilde_d2)) / lelf)

    # kappa_2 position blocks
    d2k2_ee = ((2.0 * k2_c * tt + sym(tf_x_d1, tilde_t)) / le2
               - (k2_c / (chi_c * le2)) * P_te
               - sym(kb, m1e) / (4.0 * le2))
    d2k2_ff = ((2.0 * k2_c * tt - sym(te_x_d1, tilde_t)) / lf2
               - (k2_c / (chi_c * lf2)) * P_tf
               - sym(kb, m1f) / (4.0 * lf2))
    d2k2_ef = (-k2_c / (chi_c * lelf) * (eye + te_tf)
               + (2.0 * k2_c * tt + _outer(tf_x_d1, tilde_t)
                  - _outer(tilde_t, te_x_d1) + _cross_matrices(tilde_d1)) / lelf)

    # mixed position / edge-angle blocks, d(grad_e kappa)/d(gamma)
    le_c = le[:, None]
    lf_c = lf[:, None]
    chi_v = chi[:, None]
    kb_m1e = np.sum(kb * m1e, axis=1)[:, None]
    kb_m1f = np.sum(kb * m1f, axis=1)[:, None]
    kb_m2e = np.sum(kb * m2e, axis=1)[:, None]
    kb_m2f = np.sum(kb * m2f, axis=1)[:, None]

    d2k1_e_ge = (0.5 * kb_m1e * tilde_t - np.cross(tf, m1e) / chi_v) / le_c
    d2k1_e_gf = (0.5 * kb_m1f * tilde_t - np.cross(tf, m1f) / chi_v) / le_c
    d2k1_f_ge = (0.5 * kb_m1e * tilde_t + np.cross(te, m1e) / chi_v) / lf_c
    d2k1_f_gf = (0.5 * kb_m1f * tilde_t + np.cross(te, m1f) / chi_v) / lf_c

    d2k2_e_ge = (0.5 * kb_m2e * tilde_t - np.cross(tf, m2e) / chi_v) / le_c
    d2k2_e_gf = (0.5 * kb_m2f * tilde_t - np.cross(tf, m2f) / chi_v) / le_c
    d2k2_f_ge = (0.5 * kb_m2e * tilde_t + np.cross(te, m2e) / chi_v) / lf_c
    d2k2_f_gf = (0.5 * kb_m2f * tilde_t + np.cross(te, m2f) / chi_v) / lf_c

    # edge-angle second derivatives
    d2k1_gege = -0.5 * kb_m2e[:, 0]
    d2k1_gfgf = -0.5 * kb_m2f[:, 0]
    d2k2_gege = 0.5 * kb_m1e[:, 0]
    d2k2_gfgf = 0.5 * kb_m1f[:, 0]

    n_i = te.shape[0]

    def assemble(dee, dff, def_, de_ge, de_gf, df_ge, df_gf, gege, gfgf):
        h = np.zeros((n_i, 11, 11))
        dfe = np.swapaxes(def_, 1, 2)
        # position-position, mapping e -> (-x0, +x1), f -> (-x1, +x2)
        h[:, 0:3, 0:3] = dee
        h[:, 0:3, 4:7] = -dee + def_
        h[:, 0:3, 8:11] = -def_
        h[:, 4:7, 0:3] = -dee + dfe
        h[:, 4:7, 4:7] = dee - def_ - dfe + dff
        h[:, 4:7, 8:11] = def_ - dff
        h[:, 8:11, 0:3] = -dfe
        h[:, 8:11, 4:7] = dfe - dff
        h[:, 8:11, 8:11] = dff
        # position-angle
        for col, dge, dgf in ((3, de_ge, df_ge), (7, de_gf, df_gf)):
            h[:, 0:3, col] = -dge
            h[:, 4:7, col] = dge - dgf
            h[:, 8:11, col] = dgf
            h[:, col, 0:3] = -dge
            h[:, col, 4:7] = dge - dgf
            h[:, col, 8:11] = dgf
        h[:, 3, 3] = gege
        h[:, 7, 7] = gfgf
        return h

    h1 = assemble(d2k1_ee, d2k1_ff, d2k1_ef, d2k1_e_ge, d2k1_e_gf,
                  d2k1_f_ge, d2k1_f_gf, d2k1_gege, d2k1_gfgf)
    h2 = assemble(d2k2_ee, d2k2_ff, d2k2_ef, d2k2_e_ge, d2k2_e_gf,
                  d2k2_f_ge, d2k2_f_gf, d2k2_gege, d2k2_gfgf)
    return h1, h2


def _twist_hessian_blocks(state, cache):
    """Second derivatives of the twist over the stencil, (n_i, 11, 11)."""
    te = cache.tangents[:-1]
    tf = cache.tangents[1:]
    le = cache.lengths[:-1]
    lf = cache.lengths[1:]
    chi = cache.chi[:, None, None]
    kb = cache.curvature_binormals
    tilde_t = (te + tf) / cache.chi[:, None]

    le2 = (le**2)[:, None, None]
    lf2 = (lf**2)[:, None, None]
    lelf = (le * lf)[:, None, None]

    def sym(a, b):
        return _outer(a, b) + _outer(b, a)

    d2_ee = -0.25 / le2 * sym(kb, te + tilde_t)
    d2_ff = -0.25 / lf2 * sym(kb, tf + tilde_t)
    d2_ef = 0.5 / lelf * (2.0 / chi * _cross_matrices(te) - _outer(kb, tilde_t))
    d2_fe = np.swapaxes(d2_ef, 1, 2)

    n_i = te.shape[0]
    h = np.zeros((n_i, 11, 11))
    h[:, 0:3, 0:3] = d2_ee
    h[:, 0:3, 4:7] = -d2_ee + d2_ef
    h[:, 0:3, 8:11] = -d2_ef
    h[:, 4:7, 0:3] = -d2_ee + d2_fe
    h[:, 4:7, 4:7] = d2_ee - d2_ef - d2_fe + d2_ff
    h[:, 4:7, 8:11] = d2_ef - d2_ff
    h[:, 8:11, 0:3] = -d2_fe
    h[:, 8:11, 4:7] = d2_fe - d2_ff
    h[:, 8:11, 8:11] = d2_ff
    return h


def _stretch_hessian_blocks(state, cache):
    """Per-edge 6x6 stretching Hessian over [x_i, x_{i+1}]."""
    t = cache.tangents
    lengths = cache.lengths
    rest = state.rest_edge_lengths
    eps = lengths / rest - 1.0
    eye = np.eye(3)[None]
    ttT = _outer(t, t)
    hxx = (ttT / rest[:, None, None]
           + (eps / lengths)[:, None, None] * (eye - ttT))
    n_e = t.shape[0]
    h = np.zeros((n_e, 6, 6))
    h[:, 0:3, 0:3] = hxx
    h[:, 0:3, 3:6] = -hxx
    h[:, 3:6, 0:3] = -hxx
    h[:, 3:6, 3:6] = hxx
    return h


def hessian_blocks(state, params, cache=None):
    """Stencil blocks of the elastic Hessian.

    Returns ``(stretch_blocks, node_blocks)`` where ``stretch_blocks`` is
    (n_e, 6, 6) over each edge's node pair and ``node_blocks`` is
    (n_i, 11, 11) over each interior-node stencil.  Either may be empty.
    """
    if cache is None:
        cache = compute_frames(state)
    s_blocks = params.stretch_stiffness * _stretch_hessian_blocks(state, cache)

    n_i = state.num_nodes - 2
    if n_i == 0:
        return s_blocks, np.zeros((0, 11, 11))

    inv_vl = 1.0 / state.voronoi_lengths
    dk = cache.curvatures - state.rest_curvatures
    grad1, grad2, aux = _curvature_stencil(state, cache)
    hk1, hk2 = _curvature_hessian_blocks(state, cache, aux)
    ei1 = params.bend_stiffness_1
    ei2 = params.bend_stiffness_2

    blocks = (ei1 * inv_vl)[:, None, None] * (
        dk[:, 0, None, None] * hk1 + _outer(grad1, grad1))
    blocks += (ei2 * inv_vl)[:, None, None] * (
        dk[:, 1, None, None] * hk2 + _outer(grad2, grad2))

    gj = params.twist_stiffness
    dtw = cache.twists - state.rest_twists
    tgrad, _, _ = _twist_stencil(state, cache)
    ht = _twist_hessian_blocks(state, cache)
    blocks += (gj * inv_vl)[:, None, None] * (
        dtw[:, None, None] * ht + _outer(tgrad, tgrad))

    blocks = 0.5 * (blocks + np.swapaxes(blocks, 1, 2))
    return s_blocks, blocks


HALF_BANDWIDTH = 11


def elastic_hessian(state, params, cache=None):
    """Dense elastic Hessian (symmetric, banded with half bandwidth 10)."""
    n_dof = state.num_dofs
    h = np.zeros((n_dof, n_dof))
    s_blocks, n_blocks = hessian_blocks(state, params, cache)
    n_e = state.num_edges
    for j in range(n_e):
        idx = np.r_[4 * j:4 * j + 3, 4 * (j + 1):4 * (j + 1) + 3]
        h[np.ix_(idx, idx)] += s_blocks[j]
    for k in range(n_blocks.shape[0]):
        idx = np.arange(4 * k, 4 * k + 11)
        h[np.ix_(idx, idx)] += n_blocks[k]
    return h


def lumped_mass(state, params):
    """Diagonal lumped mass vector over the interleaved DoFs.

    Nodal translational masses take half of each incident undeformed edge;
    edge-angle inertias use the polar moment per edge length.
    """
    rho = params.density
    area = params.cross_section.area
    pol = params.cross_section.torsion_constant
    n = state.num_nodes
    m = np.zeros(4 * n - 1)
    half = 0.5 * rho * area * state.rest_edge_lengths
    node_mass = np.zeros(n)
    node_mass[:-1] += half
    node_mass[1:] += half
    for k in range(3):
        m[4 * np.arange(n) + k] = node_mass
    m[4 * np.arange(n - 1) + 3] = rho * pol * state.rest_edge_lengths
    return m
