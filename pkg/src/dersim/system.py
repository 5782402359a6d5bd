"""Coupled rod / rigid-body system: DoF layout, kinematic map, forces.

Generalized velocity layout: each rod contributes its interleaved DoFs
(positions and edge-angle rates), then each rigid body contributes 6 DoFs
(world angular velocity, then linear velocity).  Generalized positions stack
the rod DoFs followed by one (quaternion wxyz, position) block of 7 per body.
Fixed and kinematic bodies, and clamped rod DoFs, are carried in the vectors
but masked as prescribed; the solvers eliminate them with identity rows and
move their velocities to the right-hand side.
"""

from dataclasses import dataclass, field

import numpy as np

from . import rod as rodmod
from .shapes import Pose, pose_from_quaternion

GRAVITY_DEFAULT = np.array([0.0, 0.0, -9.81])


# ---------------------------------------------------------------------------
# quaternions


def quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_rate_matrix(q):
    """4x3 map from world angular velocity to quaternion rate."""
    w, x, y, z = q
    return 0.5 * np.array([
        [-x, -y, -z],
        [w, z, -y],
        [-z, w, x],
        [y, -x, w],
    ])


# ---------------------------------------------------------------------------
# entities


def shape_inertia(shape, mass):
    """Principal body-frame inertia diagonal of a primitive about its center."""
    if shape.kind == "sphere":
        i = 0.4 * mass * shape.radius**2
        return np.array([i, i, i])
    if shape.kind == "capsule":
        # cylinder plus hemispherical caps, axis along local z
        r, h = shape.radius, 2.0 * shape.half_length
        v_cyl = np.pi * r * r * h
        v_sph = 4.0 / 3.0 * np.pi * r**3
        m_cyl = mass * v_cyl / (v_cyl + v_sph)
        m_sph = mass - m_cyl
        iz = 0.5 * m_cyl * r * r + 0.4 * m_sph * r * r
        ix = (m_cyl * (3 * r * r + h * h) / 12.0
              + m_sph * (0.4 * r * r + 0.5 * h * h / 2.0 + 3.0 / 8.0 * r * h))
        return np.array([ix, ix, iz])
    if shape.kind == "box":
        e = 2.0 * shape.half_extents
        return mass / 12.0 * np.array([e[1]**2 + e[2]**2,
                                       e[0]**2 + e[2]**2,
                                       e[0]**2 + e[1]**2])
    raise ValueError(f"no inertia for shape kind {shape.kind}")


def shape_volume(shape):
    if shape.kind == "sphere":
        return 4.0 / 3.0 * np.pi * shape.radius**3
    if shape.kind == "capsule":
        return (np.pi * shape.radius**2 * 2.0 * shape.half_length
                + 4.0 / 3.0 * np.pi * shape.radius**3)
    if shape.kind == "box":
        return float(np.prod(2.0 * shape.half_extents))
    raise ValueError(f"no volume for shape kind {shape.kind}")


@dataclass
class RodEntity:
    name: str
    state: rodmod.RodState
    params: rodmod.RodParameters
    friction: float = 0.5
    self_collision: bool = True
    neighbor_exclusion: int = 1       # same-rod edge pairs |i-j| <= this don't collide
    loop: bool = False                # wrap the exclusion window (closed-gap rings)
    clamped_nodes: list = field(default_factory=list)
    clamped_edges: list = field(default_factory=list)
    p_max: float = 1e7
    mesh_resolution: int = 2


@dataclass
class BodyEntity:
    name: str
    shape: object                     # shapes.Shape; its pose is the live pose
    motion: str = "dynamic"           # dynamic | fixed | kinematic
    mass: float = 1.0
    friction: float = 0.5
    p_max: float = 1e7
    mesh_resolution: int = 2
    kinematic_velocity: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self):
        if self.motion not in ("dynamic", "fixed", "kinematic"):
            raise ValueError(f"bad motion {self.motion!r}")
        self.inertia_body = shape_inertia(self.shape, self.mass)


# ---------------------------------------------------------------------------
# controllers


@dataclass
class PdNodeController:
    """Translational PD tracker on one rod node; the reaction force is the probe."""

    rod_index: int
    node_index: int
    kp: float
    kd: float = 0.0
    target: np.ndarray = field(default_factory=lambda: np.zeros(3))
    target_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    probe: bool = False
    name: str = "pd"

    def target_at(self, t):
        return self.target + t * self.target_velocity

    def force(self, t, x, xdot):
        return (self.kp * (self.target_at(t) - x)
                + self.kd * (self.target_velocity - xdot))


@dataclass
class ForceNodeController:
    """Ramped external force on one rod node."""

    rod_index: int
    node_index: int
    direction: np.ndarray
    f_start: float = 0.0
    f_end: float = 0.0
    ramp_time: float = 1.0
    probe: bool = False
    name: str = "force"

    def magnitude(self, t):
        if self.ramp_time <= 0.0:
            return self.f_end
        s = min(1.0, max(0.0, t / self.ramp_time))
        return self.f_start + (self.f_end - self.f_start) * s

    def force(self, t, x, xdot):
        return self.magnitude(t) * np.asarray(self.direction, dtype=float)


@dataclass
class PdBodyController:
    """Translational PD tracker on a rigid body's center."""

    body_index: int
    kp: float
    kd: float = 0.0
    target: np.ndarray = field(default_factory=lambda: np.zeros(3))
    target_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    probe: bool = False
    name: str = "pd_body"

    def target_at(self, t):
        return self.target + t * self.target_velocity

    def force(self, t, x, xdot):
        return (self.kp * (self.target_at(t) - x)
                + self.kd * (self.target_velocity - xdot))


# ---------------------------------------------------------------------------
# system


@dataclass
class SystemState:
    q: np.ndarray
    v: np.ndarray
    time: float = 0.0

    def copy(self):
        return SystemState(self.q.copy(), self.v.copy(), self.time)


class System:
    """Owns entities, the DoF layout, and force/mass assembly."""

    def __init__(self, rods=(), bodies=(), gravity=GRAVITY_DEFAULT, controllers=()):
        self.rods = list(rods)
        self.bodies = list(bodies)
        self.gravity = np.asarray(gravity, dtype=float)
        self.controllers = list(controllers)

        self.rod_v_offsets = []
        off = 0
        for r in self.rods:
            self.rod_v_offsets.append(off)
            off += r.state.num_dofs
        self.body_v_offsets = []
        for _ in self.bodies:
            self.body_v_offsets.append(off)
            off += 6
        self.n_v = off

        self.rod_q_offsets = list(self.rod_v_offsets)
        qoff = sum(r.state.num_dofs for r in self.rods)
        self.body_q_offsets = []
        for _ in self.bodies:
            self.body_q_offsets.append(qoff)
            qoff += 7
        self.n_q = qoff

        self._mass_rod = [rodmod.lumped_mass(r.state, r.params) for r in self.rods]
        self.free_mask = self._build_free_mask()

    # layout ---------------------------------------------------------------

    def rod_dofs(self, i):
        off = self.rod_v_offsets[i]
        return slice(off, off + self.rods[i].state.num_dofs)

    def rod_node_dofs(self, i, node):
        off = self.rod_v_offsets[i] + 4 * node
        return slice(off, off + 3)

    def rod_edge_dof(self, i, edge):
        return self.rod_v_offsets[i] + 4 * edge + 3

    def body_dofs(self, j):
        off = self.body_v_offsets[j]
        return slice(off, off + 6)

    def _build_free_mask(self):
        mask = np.ones(self.n_v, dtype=bool)
        for i, r in enumerate(self.rods):
            for node in r.clamped_nodes:
                mask[self.rod_node_dofs(i, node)] = False
            for edge in r.clamped_edges:
                mask[self.rod_edge_dof(i, edge)] = False
        for j, b in enumerate(self.bodies):
            if b.motion != "dynamic":
                mask[self.body_dofs(j)] = False
        return mask

    def prescribed_velocity(self):
        """Velocity values on prescribed DoFs (zero except kinematic bodies)."""
        v = np.zeros(self.n_v)
        for j, b in enumerate(self.bodies):
            if b.motion == "kinematic":
                v[self.body_dofs(j)] = b.kinematic_velocity
        return v

    # state packing ----------------------------------------------------------

    def initial_state(self):
        q = np.zeros(self.n_q)
        for i, r in enumerate(self.rods):
            q[self.rod_dofs(i)] = rodmod.pack_dofs(r.state.nodes, r.state.edge_angles)
        for j, b in enumerate(self.bodies):
            off = self.body_q_offsets[j]
            q[off:off + 4] = _rot_to_quat(b.shape.pose.rotation)
            q[off + 4:off + 7] = b.shape.pose.translation
        v = np.zeros(self.n_v)
        v[~self.free_mask] = self.prescribed_velocity()[~self.free_mask]
        return SystemState(q, v, 0.0)

    def rod_state_at(self, i, q):
        """Rod state with frames transported onto the configuration in ``q``."""
        nodes, angles = rodmod.unpack_dofs(q[self.rod_dofs(i)],
                                           self.rods[i].state.num_nodes)
        moved = rodmod.time_parallel_transport(self.rods[i].state, nodes)
        moved.edge_angles = angles
        return moved

    def body_pose_at(self, j, q):
        off = self.body_q_offsets[j]
        return pose_from_quaternion(q[off:off + 4], q[off + 4:off + 7])

    def sync_entities(self, state):
        """Write back the accepted configuration into the live entities."""
        for i, r in enumerate(self.rods):
            nodes, angles = rodmod.unpack_dofs(state.q[self.rod_dofs(i)],
                                               r.state.num_nodes)
            r.state = rodmod.advance_state(r.state, nodes, angles)
        for j, b in enumerate(self.bodies):
            b.shape.pose = self.body_pose_at(j, state.q)

    # kinematic map ----------------------------------------------------------

    def advance_q(self, q0, v, dt):
        """q = q0 + dt * N(q) v with quaternion renormalization."""
        q = q0.copy()
        for i in range(len(self.rods)):
            sl = self.rod_dofs(i)
            q[sl] = q0[sl] + dt * v[sl]
        for j in range(len(self.bodies)):
            qoff = self.body_q_offsets[j]
            voff = self.body_v_offsets[j]
            quat = q0[qoff:qoff + 4]
            omega = v[voff:voff + 3]
            quat_new = quat + dt * (quat_rate_matrix(quat) @ omega)
            q[qoff:qoff + 4] = quat_new / np.linalg.norm(quat_new)
            q[qoff + 4:qoff + 7] = q0[qoff + 4:qoff + 7] + dt * v[voff + 3:voff + 6]
        return q

    # mass -------------------------------------------------------------------

    def rod_mass(self, i):
        return self._mass_rod[i]

    def body_mass_matrix(self, j, q):
        b = self.bodies[j]
        rot = self.body_pose_at(j, q).rotation
        iw = rot @ np.diag(b.inertia_body) @ rot.T
        m = np.zeros((6, 6))
        m[:3, :3] = iw
        m[3:, 3:] = b.mass * np.eye(3)
        return m

    def kinetic_energy(self, state):
        e = 0.0
        for i in range(len(self.rods)):
            v = state.v[self.rod_dofs(i)]
            e += 0.5 * float(v @ (self._mass_rod[i] * v))
        for j in range(len(self.bodies)):
            v = state.v[self.body_dofs(j)]
            e += 0.5 * float(v @ (self.body_mass_matrix(j, state.q) @ v))
        return e

    # forces -------------------------------------------------------------

    def assemble_forces(self, q, v, t, rod_caches=None):
        """Non-contact generalized force k(q, v, t).

        Includes gravity, internal elastic forces, Rayleigh damping
        (stiffness term evaluated at ``q``), rigid-body gyroscopic terms, and
        controller forces.  ``rod_caches`` may carry precomputed per-rod
        (state, frames-cache, gradient, hessian) tuples from the caller.
        """
        k = np.zeros(self.n_v)
        for i, r in enumerate(self.rods):
            sl = self.rod_dofs(i)
            if rod_caches is not None and rod_caches[i] is not None:
                grad, hess_blocks, mass = rod_caches[i]
            else:
                st = self.rod_state_at(i, q)
                cache = rodmod.compute_frames(st)
                grad = rodmod.elastic_gradient(st, r.params, cache)
                hess_blocks = None
                mass = self._mass_rod[i]
            k[sl] -= grad
            vr = v[sl]
            alpha = r.params.rayleigh_alpha
            beta = r.params.rayleigh_beta
            if alpha > 0.0:
                k[sl] -= alpha * self._mass_rod[i] * vr
            if beta > 0.0:
                if hess_blocks is None:
                    st = self.rod_state_at(i, q)
                    hess_blocks = rodmod.hessian_blocks(st, r.params)
                k[sl] -= beta * apply_hessian_blocks(hess_blocks, vr)
            # gravity on translational DoFs
            n = r.state.num_nodes
            node_m = self._mass_rod[i][4 * np.arange(n)]
            gx = np.outer(node_m, self.gravity)
            kk = k[sl]
            kk[(4 * np.arange(n))[:, None] + np.arange(3)] += gx
        for j, b in enumerate(self.bodies):
            if b.motion != "dynamic":
                continue
            off = self.body_v_offsets[j]
            omega = v[off:off + 3]
            rot = self.body_pose_at(j, q).rotation
            iw = rot @ np.diag(b.inertia_body) @ rot.T
            k[off:off + 3] += -np.cross(omega, iw @ omega)
            k[off + 3:off + 6] += b.mass * self.gravity
        for ctl in self.controllers:
            self._apply_controller_force(ctl, q, v, t, k)
        return k

    def controller_dofs(self, ctl):
        if isinstance(ctl, (PdNodeController, ForceNodeController)):
            node = ctl.node_index
            if node < 0:
                node += self.rods[ctl.rod_index].state.num_nodes
            return self.rod_v_offsets[ctl.rod_index] + 4 * node + np.arange(3)
        off = self.body_v_offsets[ctl.body_index]
        return off + 3 + np.arange(3)

    def _apply_controller_force(self, ctl, q, v, t, k):
        dofs = self.controller_dofs(ctl)
        x, xdot = self._site_state(ctl, q, v, dofs)
        k[dofs] += ctl.force(t, x, xdot)

    def _site_state(self, ctl, q, v, dofs):
        if isinstance(ctl, (PdNodeController, ForceNodeController)):
            node = ctl.node_index
            if node < 0:
                node += self.rods[ctl.rod_index].state.num_nodes
            qoff = self.rod_q_offsets[ctl.rod_index] + 4 * node
            return q[qoff:qoff + 3], v[dofs]
        qoff = self.body_q_offsets[ctl.body_index]
        return q[qoff + 4:qoff + 7], v[dofs]

    def controller_forces(self, state):
        """Measured controller forces at a state (probe values for logging)."""
        out = {}
        for ctl in self.controllers:
            dofs = self.controller_dofs(ctl)
            x, xdot = self._site_state(ctl, state.q, state.v, dofs)
            out[ctl.name] = ctl.force(state.time, x, xdot)
        return out

    def linear_momentum(self, state):
        p = np.zeros(3)
        for i, r in enumerate(self.rods):
            n = r.state.num_nodes
            sl = self.rod_dofs(i)
            vv = state.v[sl]
            node_m = self._mass_rod[i][4 * np.arange(n)]
            vel = vv[(4 * np.arange(n))[:, None] + np.arange(3)]
            p += node_m @ vel
        for j, b in enumerate(self.bodies):
            if b.motion == "dynamic":
                off = self.body_v_offsets[j]
                p += b.mass * state.v[off + 3:off + 6]
        return p


def apply_hessian_blocks(blocks, vec):
    """Multiply the stencil-block Hessian by a rod-local vector."""
    s_blocks, n_blocks = blocks
    out = np.zeros_like(vec)
    n_e = s_blocks.shape[0]
    idx6 = np.array([0, 1, 2, 4, 5, 6])
    for e in range(n_e):
        idx = 4 * e + idx6
        out[idx] += s_blocks[e] @ vec[idx]
    for kk in range(n_blocks.shape[0]):
        idx = np.arange(4 * kk, 4 * kk + 11)
        out[idx] += n_blocks[kk] @ vec[idx]
    return out


def _rot_to_quat(rot):
    w = np.sqrt(max(0.0, 1.0 + rot[0, 0] + rot[1, 1] + rot[2, 2])) / 2.0
    if w > 1e-8:
        x = (rot[2, 1] - rot[1, 2]) / (4 * w)
        y = (rot[0, 2] - rot[2, 0]) / (4 * w)
        z = (rot[1, 0] - rot[0, 1]) / (4 * w)
    else:
        k = int(np.argmax(np.diag(rot)))
        i, j = (k + 1) % 3, (k + 2) % 3
        s = np.sqrt(max(0.0, 1.0 + rot[k, k] - rot[i, i] - rot[j, j])) * 2.0
        vals = np.zeros(3)
        vals[k] = s / 4.0
        vals[i] = (rot[i, k] + rot[k, i]) / s
        vals[j] = (rot[j, k] + rot[k, j]) / s
        w = (rot[j, i] - rot[i, j]) / s
        x, y, z = vals
    q = np.array([w, x, y, z])
    return q / np.linalg.norm(q)
