"""Theta-method time stepping: momentum residual, free-motion Newton solve,
and the SPD linearization used by the contact stage.

The momentum residual is ``m(v) = M(q^th) (v - v0) - dt k(q^th, v^th)`` with
``q^th = q0 + th dt N(q0) v^thvq`` resolved in a single fixed-point pass (the
kinematic map is frozen at q0 inside the solve; positions get one corrected
update afterwards).  The velocity Jacobian keeps a fixed block layout: one
banded matrix per rod (half bandwidth 10) and one dense 6x6 block per rigid
body, so the banded "symbolic" structure is built once per topology and
reused across iterations and steps.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import rod as rodmod
from .errors import FactorizationFailure, NewtonDivergence
from .system import (ForceNodeController, PdBodyController, PdNodeController,
                     apply_hessian_blocks)

BANDWIDTH = 10


@dataclass
class StepperConfig:
    dt: float
    theta: float = 1.0
    theta_vq: float = 1.0
    newton_tol: float = 1e-10
    newton_max_iters: int = 50
    reg_floor: float = 1e-12          # A-regularization floor, relative to mean diag
    vhat_scale: float = 1.0           # scale on the -phi/dt stabilization bias
    contact_tol: float = 1e-8
    contact_max_iters: int = 300
    reg_beta: float = 1e-9            # near-rigid R = beta * Delassus scale
    reg_eps_abs: float = 1e-8         # absolute compliance floor

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be > 0")
        if not (0.0 <= self.theta <= 1.0 and 0.0 <= self.theta_vq <= 1.0):
            raise ValueError("theta parameters must lie in [0, 1]")
        if self.newton_tol <= 0.0:
            raise ValueError("newton_tol must be > 0")


class BlockDiagMatrix:
    """Symmetric block-diagonal matrix over the per-entity DoF blocks."""

    def __init__(self, slices, blocks):
        self.slices = slices
        self.blocks = blocks

    @property
    def n(self):
        return max(s.stop for s in self.slices) if self.slices else 0

    def matvec(self, x):
        out = np.zeros_like(x)
        for s, b in zip(self.slices, self.blocks):
            out[s] = b @ x[s]
        return out

    def to_dense(self):
        n = self.n
        a = np.zeros((n, n))
        for s, b in zip(self.slices, self.blocks):
            a[s, s] = b
        return a

    def diagonal(self):
        n = self.n
        d = np.zeros(n)
        for s, b in zip(self.slices, self.blocks):
            d[s] = np.diag(b)
        return d


class _RodJacStructure:
    """Precomputed scatter indices for one rod's banded Jacobian."""

    def __init__(self, n_dofs, n_edges, n_interior):
        self.n = n_dofs
        w = BANDWIDTH
        self.band_shape = (2 * w + 1, n_dofs)
        # interior-node 11x11 stencil blocks
        il = np.arange(11)
        row = w + il[:, None] - il[None, :]
        col = 4 * np.arange(n_interior)[:, None, None] + il[None, None, :]
        self.stencil_flat = (row[None, :, :] * n_dofs + col).ravel()
        # per-edge 6x6 stretch blocks over [x_i, x_{i+1}]
        idx6 = np.array([0, 1, 2, 4, 5, 6])
        row6 = w + idx6[:, None] - idx6[None, :]
        col6 = 4 * np.arange(n_edges)[:, None, None] + idx6[None, None, :]
        self.stretch_flat = (row6[None, :, :] * n_dofs + col6).ravel()
        self.diag_flat = w * n_dofs + np.arange(n_dofs)


class Stepper:
    """Free-motion solver and linearization for one System."""

    def __init__(self, system, config):
        self.system = system
        self.config = config
        self._structures = [
            _RodJacStructure(r.state.num_dofs, r.state.num_edges,
                             r.state.num_nodes - 2)
            for r in system.rods
        ]
        self._bands = [np.zeros(s.band_shape) for s in self._structures]
        self._body_blocks = [np.zeros((6, 6)) for _ in system.bodies]
        free = system.free_mask
        self._pres_local = []
        for i in range(len(system.rods)):
            sl = system.rod_dofs(i)
            self._pres_local.append(np.nonzero(~free[sl])[0])

    def jacobian_structure(self):
        """Index structure of the velocity Jacobian (stable per topology)."""
        return tuple(
            (s.band_shape, s.stencil_flat, s.stretch_flat, s.diag_flat)
            for s in self._structures)

    # ------------------------------------------------------------------
    # residual

    def _blend_inputs(self, state0, v):
        cfg = self.config
        v0 = state0.v
        v_thvq = cfg.theta_vq * v + (1.0 - cfg.theta_vq) * v0
        v_th = cfg.theta * v + (1.0 - cfg.theta) * v0
        q_th = self.system.advance_q(state0.q, v_thvq, cfg.theta * cfg.dt)
        t_eval = state0.time + cfg.theta * cfg.dt
        return q_th, v_th, t_eval

    def _rod_eval(self, q_th):
        """Per-rod (gradient, hessian blocks, lengths cache) at the blended q."""
        out = []
        for i, r in enumerate(self.system.rods):
            st = self.system.rod_state_at(i, q_th)
            cache = rodmod.compute_frames(st)
            grad = rodmod.elastic_gradient(st, r.params, cache)
            blocks = rodmod.hessian_blocks(st, r.params, cache)
            out.append((grad, blocks))
        return out

    def momentum_residual(self, state0, v, rod_evals=None):
        """m(v) and the data shared with the Jacobian assembly."""
        sys = self.system
        cfg = self.config
        q_th, v_th, t_eval = self._blend_inputs(state0, v)
        if rod_evals is None:
            rod_evals = self._rod_eval(q_th)
        k = sys.assemble_forces(q_th, v_th, t_eval,
                                rod_caches=[(g, b, None) for g, b in rod_evals])
        m = np.zeros(sys.n_v)
        dv = v - state0.v
        for i in range(len(sys.rods)):
            sl = sys.rod_dofs(i)
            m[sl] = sys.rod_mass(i) * dv[sl]
        for j, b in enumerate(sys.bodies):
            sl = sys.body_dofs(j)
            m[sl] = sys.body_mass_matrix(j, q_th) @ dv[sl]
        m -= cfg.dt * k
        m[~sys.free_mask] = 0.0
        return m, (q_th, v_th, t_eval, rod_evals)

    def _assemble_jacobian(self, state0, v, shared):
        """dm/dv in the per-block layout; also returns the blended q."""
        sys = self.system
        cfg = self.config
        q_th, v_th, t_eval, rod_evals = shared
        dt = cfg.dt
        c_pos = cfg.theta * dt * (cfg.theta_vq * dt)   # force-position chain
        for i, r in enumerate(sys.rods):
            struct = self._structures[i]
            band = self._bands[i]
            band.fill(0.0)
            flat = band.reshape(-1)
            mass = sys.rod_mass(i)
            alpha = r.params.rayleigh_alpha
            beta = r.params.rayleigh_beta
            flat[struct.diag_flat] += (1.0 + alpha * cfg.theta * dt) * mass
            _, blocks = rod_evals[i]
            scale = cfg.theta * dt * beta + c_pos
            if scale != 0.0:
                s_blocks, n_blocks = blocks
                np.add.at(flat, struct.stretch_flat, (scale * s_blocks).ravel())
                if n_blocks.size:
                    np.add.at(flat, struct.stencil_flat, (scale * n_blocks).ravel())
        for j, b in enumerate(sys.bodies):
            blk = self._body_blocks[j]
            blk[:] = sys.body_mass_matrix(j, q_th)
            if b.motion == "dynamic":
                off = sys.body_v_offsets[j]
                omega = v_th[off:off + 3]
                rot = sys.body_pose_at(j, q_th).rotation
                iw = rot @ np.diag(b.inertia_body) @ rot.T
                dgyro = -_skew(omega) @ iw + _skew(iw @ omega)
                blk[:3, :3] -= dt * cfg.theta * dgyro
        # PD controllers stiffen their DoFs
        for ctl in sys.controllers:
            kp = getattr(ctl, "kp", 0.0)
            kd = getattr(ctl, "kd", 0.0)
            if kp == 0.0 and kd == 0.0:
                continue
            gain = dt * cfg.theta * kd + c_pos * kp
            dofs = sys.controller_dofs(ctl)
            self._add_diagonal(dofs, gain)
        self._apply_prescribed()
        return q_th

    def _add_diagonal(self, dofs, value):
        sys = self.system
        for d in dofs:
            placed = False
            for i in range(len(sys.rods)):
                sl = sys.rod_dofs(i)
                if sl.start <= d < sl.stop:
                    self._bands[i][BANDWIDTH, d - sl.start] += value
                    placed = True
                    break
            if not placed:
                for j in range(len(sys.bodies)):
                    sl = sys.body_dofs(j)
                    if sl.start <= d < sl.stop:
                        self._body_blocks[j][d - sl.start, d - sl.start] += value
                        break

    def _apply_prescribed(self):
        w = BANDWIDTH
        for i, pres in enumerate(self._pres_local):
            if len(pres) == 0:
                continue
            band = self._bands[i]
            n = band.shape[1]
            for p in pres:
                band[:, p] = 0.0
                js = np.arange(max(0, p - w), min(n, p + w + 1))
                band[w + p - js, js] = 0.0
                band[w, p] = 1.0
        for j, b in enumerate(self.system.bodies):
            if b.motion != "dynamic":
                self._body_blocks[j][:] = np.eye(6)

    def _solve_blocks(self, rhs):
        sys = self.system
        out = np.zeros_like(rhs)
        for i in range(len(sys.rods)):
            sl = sys.rod_dofs(i)
            out[sl] = scipy.linalg.solve_banded(
                (BANDWIDTH, BANDWIDTH), self._bands[i], rhs[sl])
        for j in range(len(sys.bodies)):
            sl = sys.body_dofs(j)
            out[sl] = np.linalg.solve(self._body_blocks[j], rhs[sl])
        return out

    # ------------------------------------------------------------------
    # free motion

    def solve_free_motion(self, state0):
        """Next-step velocity ignoring contact: root of the momentum residual.

        Newton iterations with backtracking halving line search; prescribed
        DoFs are pinned to their prescribed velocities throughout.
        """
        sys = self.system
        cfg = self.config
        v = state0.v.copy()
        pres = ~sys.free_mask
        v[pres] = sys.prescribed_velocity()[pres]

        m, shared = self.momentum_residual(state0, v)
        norm = np.max(np.abs(m)) if m.size else 0.0
        iters = 0
        while norm > cfg.newton_tol:
            if iters >= cfg.newton_max_iters:
                raise NewtonDivergence(
                    f"free-motion Newton: {norm:.3e} after {iters} iterations")
            self._assemble_jacobian(state0, v, shared)
            delta = self._solve_blocks(-m)
            delta[pres] = 0.0
            step = 1.0
            while True:
                v_try = v + step * delta
                m_try, shared_try = self.momentum_residual(state0, v_try)
                norm_try = np.max(np.abs(m_try))
                if norm_try <= (1.0 - 0.5 * step) * norm or norm_try <= cfg.newton_tol:
                    break
                step *= 0.5
                if step < 2.0**-20:
                    raise NewtonDivergence(
                        "free-motion Newton line search stalled "
                        f"(residual {norm:.3e})")
            v, m, shared, norm = v_try, m_try, shared_try, norm_try
            iters += 1
        return v, iters

    # ------------------------------------------------------------------
    # linearization

    def linearize_momentum(self, state0, v_star):
        """Symmetric positive definite A = sym(dm/dv) at the free motion,
        with adaptive diagonal regularization per block."""
        m, shared = self.momentum_residual(state0, v_star)
        self._assemble_jacobian(state0, v_star, shared)
        sys = self.system
        slices = []
        blocks = []
        for i in range(len(sys.rods)):
            slices.append(sys.rod_dofs(i))
            blocks.append(_band_to_dense(self._bands[i]))
        for j in range(len(sys.bodies)):
            slices.append(sys.body_dofs(j))
            blocks.append(self._body_blocks[j].copy())
        reg_blocks = []
        for blk in blocks:
            sym = 0.5 * (blk + blk.T)
            reg_blocks.append(_regularize_spd(sym, self.config.reg_floor))
        return BlockDiagMatrix(slices, reg_blocks)

    # ------------------------------------------------------------------
    # position update

    def advance_positions(self, state0, v):
        """q update per the theta rule with one kinematic-map correction."""
        cfg = self.config
        sys = self.system
        v_thvq = cfg.theta_vq * v + (1.0 - cfg.theta_vq) * state0.v
        q_first = sys.advance_q(state0.q, v_thvq, cfg.dt)
        if cfg.theta == 0.0:
            return q_first
        q_blend = _blend_q(sys, state0.q, q_first, cfg.theta)
        return _advance_with_map_at(sys, state0.q, q_blend, v_thvq, cfg.dt)


def _blend_q(system, q0, q1, theta):
    q = theta * q1 + (1.0 - theta) * q0
    for j in range(len(system.bodies)):
        off = system.body_q_offsets[j]
        quat = q[off:off + 4]
        q[off:off + 4] = quat / np.linalg.norm(quat)
    return q


def _advance_with_map_at(system, q0, q_map, v, dt):
    """q = q0 + dt N(q_map) v, quaternions renormalized."""
    q = q0.copy()
    for i in range(len(system.rods)):
        sl = system.rod_dofs(i)
        q[sl] = q0[sl] + dt * v[sl]
    from .system import quat_rate_matrix
    for j in range(len(system.bodies)):
        qoff = system.body_q_offsets[j]
        voff = system.body_v_offsets[j]
        quat_map = q_map[qoff:qoff + 4]
        omega = v[voff:voff + 3]
        quat_new = q0[qoff:qoff + 4] + dt * (quat_rate_matrix(quat_map) @ omega)
        q[qoff:qoff + 4] = quat_new / np.linalg.norm(quat_new)
        q[qoff + 4:qoff + 7] = q0[qoff + 4:qoff + 7] + dt * v[voff + 3:voff + 6]
    return q


def _band_to_dense(band):
    w = BANDWIDTH
    n = band.shape[1]
    a = np.zeros((n, n))
    for r in range(2 * w + 1):
        off = w - r
        d = band[r]
        if off >= 0:
            a[np.arange(n - off), np.arange(off, n)] = d[off:]
        else:
            a[np.arange(-off, n), np.arange(n + off)] = d[:n + off]
    return a


def _regularize_spd(block, floor_rel):
    """Shift the diagonal until Cholesky succeeds with a floor margin."""
    n = block.shape[0]
    if n == 0:
        return block
    scale = float(np.mean(np.abs(np.diag(block))))
    if scale == 0.0:
        scale = 1.0
    floor = floor_rel * scale
    shift = floor
    eye = np.eye(n)
    for _ in range(60):
        try:
            np.linalg.cholesky(block + (shift - floor) * eye)
            return block + shift * eye
        except np.linalg.LinAlgError:
            shift *= 2.0
    raise FactorizationFailure("diagonal regularization failed to reach SPD")


def _skew(v):
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])
