"""Second stage of the solver: DoF partitioning, Schur complement, and the
convex cone-constrained velocity problem.

The problem minimize 0.5 ||v_p - v_p*||^2_{S_p} subject to (v_c - v_hat) in
the dual friction cone is solved through its regularized unconstrained form:
each contact carries a small diagonal compliance R, the impulse is the
R-weighted cone projection of y = R^{-1}(v_hat - v_c), and the objective

    l(v_p) = 0.5 ||v_p - v_p*||^2_{S_p} + 0.5 sum_i gamma_i^T R_i gamma_i

is smooth and strictly convex.  Newton steps with an exact line search give
guaranteed convergence; at the optimum the KKT triple holds exactly for the
compliance-shifted velocity (v_c - v_hat + R lambda), and within O(R) for the
raw one.  Point contacts use a near-rigid R proportional to the Delassus
diagonal; patch contacts use the physical compliance R_n = 1/(dt^2 k) of the
pressure-field stiffness k = A g so a resting body settles at the force
balance f = A p.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import FactorizationFailure, MaxIterations

_TINY = 1e-300


# ---------------------------------------------------------------------------
# data


@dataclass
class ConeProblem:
    s_p: np.ndarray            # (n_p, n_p) SPD
    v_star: np.ndarray         # (n_p,)
    jacobian: np.ndarray       # (n_p, 3 n_c) participating rows, dense
    v_hat: np.ndarray          # (3 n_c,) stabilization bias, tangential zero
    mu: np.ndarray             # (n_c,)
    reg: np.ndarray            # (3 n_c,) diagonal compliance
    offset: np.ndarray = None  # (3 n_c,) prescribed-DoF velocity contribution

    def __post_init__(self):
        if self.offset is None:
            self.offset = np.zeros_like(self.v_hat)
        tang = np.ones(len(self.v_hat), dtype=bool)
        tang[2::3] = False
        if np.any(self.v_hat[tang] != 0.0):
            raise ValueError("stabilization bias must be zero tangentially")

    @property
    def num_contacts(self):
        return len(self.mu)


@dataclass
class SolverResult:
    v_p: np.ndarray
    impulses: np.ndarray
    iterations: int
    momentum_residual: float          # ||S(v-v*) - J lam|| / ||S v*||
    comp_residual: float              # scaled, with the compliance shift
    raw_comp_residual: float          # scaled, raw v_c - v_hat
    impulse_cone_margin: float        # min over contacts, scaled
    velocity_cone_margin: float       # raw slack margin, scaled
    shifted_velocity_cone_margin: float
    converged: bool
    v: np.ndarray = None              # full generalized velocity (set by caller)
    impulse_work: float = 0.0         # lam . (v_c - v_hat), <= 0 at convergence


# ---------------------------------------------------------------------------
# partitioning / Schur complement


def partition_dofs(a_matrix, jac_matrix, free_mask=None):
    """Participating DoFs = free DoFs with any nonzero contact-Jacobian row.

    Returns (participating_idx, nonparticipating_idx), both ascending.
    """
    n = a_matrix.n
    row_counts = np.zeros(n, dtype=bool)
    csr = jac_matrix.tocsr()
    row_nnz = np.diff(csr.indptr)
    row_counts[row_nnz > 0] = True
    if free_mask is not None:
        row_counts &= free_mask
    participating = np.nonzero(row_counts)[0]
    nonparticipating = np.nonzero(~row_counts)[0]
    return participating, nonparticipating


@dataclass
class SchurData:
    s_p: np.ndarray
    participating: np.ndarray
    blocks: list = field(default_factory=list)   # per-block recovery data


def schur_complement(a_matrix, participating):
    """S_p = A_pp - A_pn A_nn^{-1} A_np over the block-diagonal A.

    A never couples different bodies, so the complement splits per block;
    each block's A_nn is factorized once and kept for the recovery pass.
    """
    part_set = np.zeros(a_matrix.n, dtype=bool)
    part_set[participating] = True
    pos_of = np.full(a_matrix.n, -1, dtype=int)
    pos_of[participating] = np.arange(len(participating))

    n_p = len(participating)
    s_p = np.zeros((n_p, n_p))
    blocks = []
    for sl, block in zip(a_matrix.slices, a_matrix.blocks):
        local_part = np.nonzero(part_set[sl])[0]
        if len(local_part) == 0:
            blocks.append((sl, None, None, None, None))
            continue
        local_non = np.nonzero(~part_set[sl])[0]
        app = block[np.ix_(local_part, local_part)]
        if len(local_non):
            apn = block[np.ix_(local_part, local_non)]
            ann = block[np.ix_(local_non, local_non)]
            try:
                chol = scipy.linalg.cho_factor(ann, check_finite=False)
            except scipy.linalg.LinAlgError as exc:
                raise FactorizationFailure(
                    "A_nn block not positive definite; regularization upstream "
                    "was insufficient") from exc
            x = scipy.linalg.cho_solve(chol, apn.T, check_finite=False)
            s_block = app - apn @ x
        else:
            chol = None
            apn = None
            s_block = app
        rows = pos_of[sl.start + local_part]
        s_p[np.ix_(rows, rows)] = s_block
        blocks.append((sl, local_part, local_non, chol, apn))
    return SchurData(s_p=s_p, participating=participating, blocks=blocks)


def recover_nonparticipating(schur_data, v_p, v_star_full):
    """Full velocity: participating set to v_p, the rest from the block solve
    (v_n - v_n*) = -A_nn^{-1} A_np (v_p - v_p*)."""
    v = v_star_full.copy()
    pos_of = {int(g): k for k, g in enumerate(schur_data.participating)}
    for sl, local_part, local_non, chol, apn in schur_data.blocks:
        if local_part is None or len(local_part) == 0:
            continue
        dv_p = np.array([v_p[pos_of[sl.start + lp]]
                         - v_star_full[sl.start + lp] for lp in local_part])
        for k, lp in enumerate(local_part):
            v[sl.start + lp] = v_star_full[sl.start + lp] + dv_p[k]
        if chol is not None and len(local_non):
            dv_n = -scipy.linalg.cho_solve(chol, apn.T @ dv_p, check_finite=False)
            for k, ln in enumerate(local_non):
                v[sl.start + ln] += dv_n[k]
    return v


# ---------------------------------------------------------------------------
# cone projection (weighted by the compliance metric)


def _project_contact(y, mu, mu_hat):
    """Projection of y onto the friction cone in the R metric, plus the
    region tag (0 open, 1 stick, 2 slide)."""
    yt = y[:2]
    yn = y[2]
    nt = np.hypot(yt[0], yt[1])
    if mu < 1e-12:
        if yn <= 0.0:
            return np.zeros(3), 0
        return np.array([0.0, 0.0, yn]), 1
    if nt <= mu * yn:
        return y.copy(), 1
    if mu_hat * nt + yn <= 0.0:
        return np.zeros(3), 0
    gn = (mu_hat * nt + yn) / (1.0 + mu * mu_hat)
    out = np.empty(3)
    out[:2] = mu * gn * yt / nt
    out[2] = gn
    return out, 2


def _contact_hessian(y, gamma, region, mu, mu_hat, rt, rn):
    """G = d(gamma)/d(y) R^{-1} for one contact (3x3, PSD)."""
    g = np.zeros((3, 3))
    if region == 0:
        return g
    if mu < 1e-12:
        g[2, 2] = 1.0 / rn
        return g
    if region == 1:
        g[0, 0] = g[1, 1] = 1.0 / rt
        g[2, 2] = 1.0 / rn
        return g
    yt = y[:2]
    nt = np.hypot(yt[0], yt[1])
    that = yt / nt
    denom = 1.0 + mu * mu_hat
    ttT = np.outer(that, that)
    g[:2, :2] = (mu * gamma[2] / (nt * rt)) * (np.eye(2) - ttT) \
        + (mu * mu_hat / (denom * rt)) * ttT
    g[:2, 2] = mu / (denom * rn) * that
    g[2, :2] = mu / (denom * rn) * that
    g[2, 2] = 1.0 / (denom * rn)
    return g


def _impulses(problem, v_c):
    """Per-contact impulses, regions, and y vectors at a contact velocity."""
    n_c = problem.num_contacts
    gam = np.zeros(3 * n_c)
    regions = np.zeros(n_c, dtype=int)
    ys = np.zeros(3 * n_c)
    for i in range(n_c):
        sl = slice(3 * i, 3 * i + 3)
        r = problem.reg[sl]
        y = (problem.v_hat[sl] - v_c[sl]) / r
        mu = problem.mu[i]
        mu_hat = mu * r[0] / r[2]
        gam[sl], regions[i] = _project_contact(y, mu, mu_hat)
        ys[sl] = y
    return gam, regions, ys


# ---------------------------------------------------------------------------
# main solve


def solve_cone_qp(problem, tol=1e-8, max_iters=300, v_init=None):
    """Newton with exact line search on the regularized contact objective.

    Converges when the momentum residual ||S_p(v_p - v_p*) - J_p lam||,
    relative to ||S_p v_p*||, and the scaled complementarity residual both
    drop below ``tol``.  Raises MaxIterations with the best iterate attached
    if the cap is hit.
    """
    s_p = problem.s_p
    v_star = problem.v_star
    jac = problem.jacobian
    n_p = len(v_star)
    if problem.num_contacts == 0:
        return SolverResult(
            v_p=v_star.copy(), impulses=np.zeros(0), iterations=0,
            momentum_residual=0.0, comp_residual=0.0, raw_comp_residual=0.0,
            impulse_cone_margin=0.0, velocity_cone_margin=0.0,
            shifted_velocity_cone_margin=0.0, converged=True)

    v = v_star.copy() if v_init is None else v_init.copy()
    scale = max(float(np.linalg.norm(s_p @ v_star)), 1e-14)

    def state_at(vp):
        v_c = jac.T @ vp + problem.offset
        gam, regions, ys = _impulses(problem, v_c)
        grad = s_p @ (vp - v_star) - jac @ gam
        return v_c, gam, regions, ys, grad

    v_c, gam, regions, ys, grad = state_at(v)
    iters = 0
    while True:
        mom = float(np.linalg.norm(grad))
        if mom <= tol * scale:
            break
        if iters >= max_iters:
            result = _finalize(problem, v, v_c, gam, iters, mom / scale,
                               converged=False)
            raise MaxIterations(
                f"cone solve: residual {mom / scale:.3e} after {iters} "
                "iterations", result=result)
        hess = s_p.copy()
        for i in range(problem.num_contacts):
            sl = slice(3 * i, 3 * i + 3)
            r = problem.reg[sl]
            mu = problem.mu[i]
            mu_hat = mu * r[0] / r[2]
            g = _contact_hessian(ys[sl], gam[sl], regions[i], mu, mu_hat,
                                 r[0], r[2])
            jc = jac[:, sl]
            hess += jc @ g @ jc.T
        try:
            chol = scipy.linalg.cho_factor(hess, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            raise FactorizationFailure("cone-solve Hessian not SPD") from exc
        delta = -scipy.linalg.cho_solve(chol, grad, check_finite=False)

        alpha = _exact_line_search(problem, v, delta, grad)
        v = v + alpha * delta
        v_c, gam, regions, ys, grad = state_at(v)
        iters += 1

    return _finalize(problem, v, v_c, gam, iters, mom / scale, converged=True)


def _exact_line_search(problem, v, delta, grad):
    """1-D minimization of the convex objective along delta.

    phi'(alpha) is nondecreasing; bracket by doubling, then bisect.
    """
    s_d = problem.s_p @ delta
    a0 = float(delta @ (problem.s_p @ (v - problem.v_star)))
    a1 = float(delta @ s_d)
    jd = problem.jacobian.T @ delta
    vc0 = problem.jacobian.T @ v + problem.offset

    def dphi(alpha):
        gam, _, _ = _impulses(problem, vc0 + alpha * jd)
        return a0 + alpha * a1 - float(jd @ gam)

    lo, hi = 0.0, 1.0
    d_hi = dphi(hi)
    doublings = 0
    while d_hi < 0.0 and doublings < 62:
        lo = hi
        hi *= 2.0
        d_hi = dphi(hi)
        doublings += 1
    if d_hi < 0.0:
        return hi
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if dphi(mid) < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def _finalize(problem, v, v_c, gam, iters, mom_rel, converged):
    n_c = problem.num_contacts
    slack = v_c - problem.v_hat
    shifted = slack + problem.reg * gam
    comp = 0.0
    raw_comp = 0.0
    margin_imp = np.inf
    margin_raw = np.inf
    margin_shift = np.inf
    work = 0.0
    for i in range(n_c):
        sl = slice(3 * i, 3 * i + 3)
        lam = gam[sl]
        mu = problem.mu[i]
        s_raw = slack[sl]
        s_shift = shifted[sl]
        lam_n = np.linalg.norm(lam)
        den = 1.0 + lam_n * np.linalg.norm(s_raw)
        raw_comp = max(raw_comp, abs(float(lam @ s_raw)) / den)
        den_s = 1.0 + lam_n * np.linalg.norm(s_shift)
        comp = max(comp, abs(float(lam @ s_shift)) / den_s)
        work += float(lam @ s_raw)
        margin_imp = min(margin_imp,
                         (mu * lam[2] - np.hypot(lam[0], lam[1])) / (1.0 + lam_n))
        margin_raw = min(margin_raw,
                         (s_raw[2] - mu * np.hypot(s_raw[0], s_raw[1]))
                         / (1.0 + np.linalg.norm(s_raw)))
        margin_shift = min(margin_shift,
                           (s_shift[2] - mu * np.hypot(s_shift[0], s_shift[1]))
                           / (1.0 + np.linalg.norm(s_shift)))
    return SolverResult(
        v_p=v, impulses=gam, iterations=iters, momentum_residual=mom_rel,
        comp_residual=comp, raw_comp_residual=raw_comp,
        impulse_cone_margin=float(margin_imp),
        velocity_cone_margin=float(margin_raw),
        shifted_velocity_cone_margin=float(margin_shift),
        converged=converged, impulse_work=work)


# ---------------------------------------------------------------------------
# problem assembly


def contact_compliance(contacts, jac_dense, s_diag, dt, beta=1e-9,
                       eps_abs=1e-8):
    """Diagonal compliance R per contact axis.

    Near-rigid default R = max(eps_abs, beta w) with w the diagonal Delassus
    scale of the contact; patch contacts get the physical normal compliance
    R_n = 1/(dt^2 A g) of their pressure field.
    """
    n_c = len(contacts)
    reg = np.zeros(3 * n_c)
    for i, c in enumerate(contacts):
        cols = jac_dense[:, 3 * i:3 * i + 3]
        w = float(np.einsum("ik,i,ik->", cols, 1.0 / np.maximum(s_diag, _TINY),
                            cols)) / 3.0
        r_rigid = max(eps_abs, beta * w)
        reg[3 * i] = r_rigid
        reg[3 * i + 1] = r_rigid
        if c.stiffness is not None:
            reg[3 * i + 2] = max(1.0 / (dt * dt * max(c.stiffness, _TINY)),
                                 1e-14 * max(w, _TINY))
        else:
            reg[3 * i + 2] = r_rigid
    return reg


def build_cone_problem(a_matrix, contact_jac, contacts, v_star, dt,
                       free_mask=None, prescribed_velocity=None,
                       vhat_scale=1.0, beta=1e-9, eps_abs=1e-8):
    """Assemble the participating-DoF cone problem from the step data.

    Returns (problem, schur_data).  Prescribed DoFs contribute a constant
    offset to the contact velocities rather than unknowns.
    """
    from .contact import stabilization_bias

    jac = contact_jac.matrix
    participating, _ = partition_dofs(a_matrix, jac, free_mask)
    schur = schur_complement(a_matrix, participating)
    jac_p = np.asarray(jac[participating, :].todense())
    offset = np.zeros(jac.shape[1])
    if prescribed_velocity is not None and free_mask is not None:
        pres = ~free_mask
        if np.any(pres):
            offset = np.asarray(
                jac[pres, :].T @ prescribed_velocity[pres]).ravel()
    v_hat = stabilization_bias(contacts, dt, vhat_scale)
    mu = np.array([c.friction for c in contacts])
    reg = contact_compliance(contacts, jac_p, np.diag(schur.s_p), dt,
                             beta=beta, eps_abs=eps_abs)
    problem = ConeProblem(
        s_p=schur.s_p, v_star=v_star[participating], jacobian=jac_p,
        v_hat=v_hat, mu=mu, reg=reg, offset=offset)
    return problem, schur
