"""Independent verification utilities used by the test suite.

These routines deliberately share no numerical kernels with the modules they
check: differentiation is plain central differencing, and the reference cone
solver is a projected-gradient method on the dual of the contact problem.
They are written for clarity, not speed.
"""

import numpy as np

from .errors import MaxIterations


def fd_gradient(f, q, rel_step=1e-6):
    """Central-difference gradient of a scalar field over the DoF vector ``q``.

    The step for DoF ``j`` is ``rel_step * max(1, |q_j|)``.
    """
    q = np.asarray(q, dtype=float)
    grad = np.zeros_like(q)
    for j in range(q.size):
        h = rel_step * max(1.0, abs(q[j]))
        qp = q.copy()
        qm = q.copy()
        qp[j] += h
        qm[j] -= h
        grad[j] = (f(qp) - f(qm)) / (2.0 * h)
    return grad


def fd_jacobian(f, q, rel_step=1e-6):
    """Central-difference Jacobian of a vector field over ``q``."""
    q = np.asarray(q, dtype=float)
    f0 = np.asarray(f(q), dtype=float)
    jac = np.zeros((f0.size, q.size))
    for j in range(q.size):
        h = rel_step * max(1.0, abs(q[j]))
        qp = q.copy()
        qm = q.copy()
        qp[j] += h
        qm[j] -= h
        jac[:, j] = (np.asarray(f(qp)) - np.asarray(f(qm))) / (2.0 * h)
    return jac


def capstan_ratio(mu, wrap_angle):
    """Classical belt-friction tension ratio ``exp(mu * wrap_angle)``."""
    if mu < 0.0 or wrap_angle < 0.0:
        raise ValueError("mu and wrap_angle must be nonnegative")
    return float(np.exp(mu * wrap_angle))


def _project_cone_euclidean(y, mu):
    """Euclidean projection of one 3-vector onto {||y_t|| <= mu * y_n}."""
    yt = y[:2]
    yn = y[2]
    nt = np.hypot(yt[0], yt[1])
    if nt <= mu * yn:
        return y.copy()
    if mu * nt <= -yn:
        return np.zeros(3)
    gn = (yn + mu * nt) / (1.0 + mu * mu)
    out = np.empty(3)
    out[:2] = mu * gn * yt / nt
    out[2] = gn
    return out


def project_friction_cone(lam, mu):
    """Project stacked impulses (3 per contact) onto the product friction cone."""
    lam = np.asarray(lam, dtype=float)
    out = np.empty_like(lam)
    for i in range(lam.size // 3):
        out[3 * i:3 * i + 3] = _project_cone_euclidean(lam[3 * i:3 * i + 3], mu[i])
    return out


def dense_cone_qp(problem, tol=1e-10, max_iters=2_000_000):
    """Reference solver for the contact velocity problem on small instances.

    Runs projected gradient on the dual variable (the impulses): the dual
    objective gradient is the constraint slack ``v_hat - v_c(lam)``.  Steps
    start at the inverse Lipschitz constant of the dual Hessian and diminish
    whenever progress stalls; iteration ends when the projected-gradient
    fixed-point residual drops below ``tol``.

    Accepts any object with attributes ``s_p`` (SPD matrix), ``v_star``,
    ``jacobian`` (n_p x 3n_c), ``v_hat``, ``offset`` (optional), and ``mu``.
    Returns ``(v_p, lam, iterations)``.
    """
    s_p = np.asarray(problem.s_p, dtype=float)
    v_star = np.asarray(problem.v_star, dtype=float)
    jac = np.asarray(problem.jacobian, dtype=float)
    v_hat = np.asarray(problem.v_hat, dtype=float)
    offset = np.asarray(getattr(problem, "offset", np.zeros_like(v_hat)), dtype=float)
    mu = np.asarray(problem.mu, dtype=float)

    n_c3 = jac.shape[1]
    if n_c3 == 0:
        return v_star.copy(), np.zeros(0), 0

    s_inv_j = np.linalg.solve(s_p, jac)
    delassus = jac.T @ s_inv_j
    bias = jac.T @ v_star + offset - v_hat
    lipschitz = np.linalg.norm(delassus, 2)
    step = 1.0 / max(lipschitz, 1e-300)

    lam = np.zeros(n_c3)
    shrink_at = max(1000, 10 * n_c3)
    best_res = np.inf
    stall = 0
    for it in range(1, max_iters + 1):
        grad = -(delassus @ lam + bias)          # = v_hat - v_c(lam)
        lam_new = project_friction_cone(lam + step * grad, mu)
        res = np.linalg.norm(lam_new - lam) / step
        lam = lam_new
        if res <= tol * (1.0 + np.linalg.norm(lam)):
            v_p = v_star + s_inv_j @ lam
            return v_p, lam, it
        if res < best_res * 0.999999:
            best_res = res
            stall = 0
        else:
            stall += 1
            if stall >= shrink_at:
                step *= 0.5
                stall = 0
    raise MaxIterations(
        f"dense_cone_qp: no convergence in {max_iters} iterations "
        f"(residual {best_res:.3e})",
        result=(v_star + s_inv_j @ lam, lam, max_iters),
    )
