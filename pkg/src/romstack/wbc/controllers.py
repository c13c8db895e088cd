"""Whole-body controllers: TSC-QP, projection inverse dynamics, velocity and position IK."""

from dataclasses import dataclass, field
import warnings

import numpy as np

from romstack.linalg import damped_pinv, null_space, pinv, row_basis
from romstack.wbc.qp import QpInfeasible, QpProblem, solve_qp

CONTROLLER_KINDS = ("TSC-QP", "ID", "VEL-IK", "POS-IK")


@dataclass(frozen=True)
class SolverLimits:
    tau_lb: tuple
    tau_ub: tuple
    qp_max_iter: int = 200
    kkt_tol: float = 1e-8
    damping: float = 1e-6
    sigma_min: float = 1e-4
    ik_eps: float = 1e-6
    ik_max_iter: int = 20
    reg_qdd: float = 1e-8
    reg_tau: float = 1e-6
    reg_f: float = 1e-8
    force_slack: bool = False
    slack_penalty: float = 1e6

    def __post_init__(self):
        lb = np.asarray(self.tau_lb, dtype=float).reshape(-1)
        ub = np.asarray(self.tau_ub, dtype=float).reshape(-1)
        if lb.shape != ub.shape or np.any(lb >= ub):
            raise ValueError("torque limits need tau_lb < tau_ub elementwise")
        object.__setattr__(self, "tau_lb", tuple(lb))
        object.__setattr__(self, "tau_ub", tuple(ub))
        for name in ("kkt_tol", "damping", "sigma_min", "ik_eps", "reg_qdd", "reg_tau", "reg_f"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if self.qp_max_iter < 1 or self.ik_max_iter < 1:
            raise ValueError("iteration caps must be >= 1")

    @classmethod
    def symmetric(cls, m, limit, **kw):
        return cls((-limit,) * m, (limit,) * m, **kw)


@dataclass
class TorqueCommand:
    tau: np.ndarray
    tau_ff: np.ndarray = None
    q_m_des: np.ndarray = None
    v_m_des: np.ndarray = None
    mode: str = "torque"
    qdd: np.ndarray = None
    forces: np.ndarray = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        if not np.all(np.isfinite(self.tau)):
            raise ValueError("non-finite torque command")
        if self.tau_ff is None:
            self.tau_ff = np.zeros_like(self.tau)


def _tau_weight(m, tau_weight):
    return np.ones(m) if tau_weight is None else np.asarray(tau_weight, dtype=float).reshape(m)


def _task_terms(tasks):
    Q = tasks.weights
    e = tasks.reference_acceleration() - tasks.jdot_v
    return Q, e


# --- TSC-QP --------------------------------------------------------------------

def tsc_qp(model, D, H, tasks, constraints, limits, tau_weight=None):
    """Weighted task-acceleration QP over ``(qdd, tau, f)``.

    Subject to ``D qdd + H = B tau + J^T f``, ``J qdd + Jdot v = 0``, the
    contact pyramid on ``f`` and the torque box. ``tau_weight`` scales the
    torque regularization per joint.
    """
    n, m = model.n, model.m
    J, h = constraints.J_hol, constraints.h
    B = model.B
    Q, e = _task_terms(tasks)
    w_tau = _tau_weight(m, tau_weight)
    n_s = constraints.A_grf.shape[0] if (limits.force_slack and h) else 0
    nx = n + m + h + n_s
    iq, it, i_f = slice(0, n), slice(n, n + m), slice(n + m, n + m + h)
    Jy = tasks.J_y
    reg = np.concatenate([
        np.full(n, limits.reg_qdd), limits.reg_tau * w_tau, np.full(h, limits.reg_f),
        np.full(n_s, limits.slack_penalty),
    ])
    # G = F^T F with F = [sqrt(2Q) J_y, 0; sqrt(2 reg)]; the factor keeps the reduction well conditioned
    F = np.vstack([np.zeros((tasks.n_tasks, nx)), np.diag(np.sqrt(2.0 * reg))])
    F[:tasks.n_tasks, iq] = np.sqrt(2.0 * Q)[:, None] * Jy
    G = F.T @ F
    c = np.zeros(nx)
    c[iq] = -2.0 * Jy.T @ (Q * e)
    # redundant sole points (heel and toe x rows) are compressed to an
    # independent set; their Jdot v can disagree at second order in foot pitch rate
    Jr, br, _ = row_basis(J, -constraints.jdot_v) if h else (np.zeros((0, n)), np.zeros(0), 0.0)
    A_eq = np.zeros((n + Jr.shape[0], nx))
    A_eq[:n, iq] = D
    A_eq[:n, it] = -B
    A_eq[:n, i_f] = -J.T
    A_eq[n:, iq] = Jr
    b_eq = np.concatenate([-H, br])
    n_c = constraints.A_grf.shape[0]
    A_in = np.zeros((n_c + 2 * m + n_s, nx))
    A_in[:n_c, i_f] = constraints.A_grf
    if n_s:
        A_in[:n_c, n + m + h:] = -np.eye(n_s)
        A_in[n_c + 2 * m:, n + m + h:] = -np.eye(n_s)
    A_in[n_c:n_c + m, it] = np.eye(m)
    A_in[n_c + m:n_c + 2 * m, it] = -np.eye(m)
    b_in = np.concatenate([constraints.b_grf, limits.tau_ub, -np.asarray(limits.tau_lb), np.zeros(n_s)])
    prob = QpProblem(G, c, A_eq, b_eq, A_in, b_in, G_factor=F)
    res = solve_qp(prob, max_iter=limits.qp_max_iter, tol=limits.kkt_tol)
    x = res.x
    # the active set meets the box to solver tolerance; clip so the bounds hold exactly
    tau = np.clip(x[it], limits.tau_lb, limits.tau_ub)
    info = {
        "active": res.active,
        "n_active": len(res.active),
        "kkt": res.kkt,
        "iterations": res.iterations,
        "dynamics_residual": float(np.abs(D @ x[iq] + H - B @ tau - J.T @ x[i_f]).max(initial=0.0)),
    }
    if n_s:
        info["slack"] = x[n + m + h:]
    return TorqueCommand(tau, qdd=x[iq], forces=x[i_f], info=info)


# --- projection inverse dynamics ----------------------------------------------

def inverse_dynamics(model, D, H, tasks, constraints, limits, tau_weight=None):
    """Equality-only task control by projecting out the contact forces.

    With ``P`` an orthonormal basis of the null space of ``J``, the projected
    dynamics ``P^T (D qdd + H - B tau) = 0`` no longer contain ``f``. Together
    with ``J qdd = -Jdot v`` they constrain ``(qdd, tau)``; the task least
    squares (same weights and regularization as the QP) is solved on that set
    and the forces are recovered as ``f = (J^T)^+ (D qdd + H - B tau)``.
    """
    n, m = model.n, model.m
    J, h = constraints.J_hol, constraints.h
    B = model.B
    Q, e = _task_terms(tasks)
    w_tau = _tau_weight(m, tau_weight)
    P = null_space(J) if h else np.eye(n)
    Jr, br, _ = row_basis(J, -constraints.jdot_v) if h else (np.zeros((0, n)), np.zeros(0), 0.0)
    E = np.block([[P.T @ D, -P.T @ B], [Jr, np.zeros((Jr.shape[0], m))]])
    d = np.concatenate([-P.T @ H, br])
    JTp = pinv(J.T) if h else np.zeros((0, n))
    sq = np.sqrt
    M = np.vstack([
        np.hstack([sq(Q)[:, None] * tasks.J_y, np.zeros((tasks.n_tasks, m))]),
        np.hstack([sq(limits.reg_qdd) * np.eye(n), np.zeros((n, m))]),
        np.hstack([np.zeros((m, n)), np.diag(sq(limits.reg_tau * w_tau))]),
        sq(limits.reg_f) * np.hstack([JTp @ D, -JTp @ B]),
    ])
    g = np.concatenate([sq(Q) * e, np.zeros(n + m), -sq(limits.reg_f) * JTp @ H])
    Er, dr, resid = row_basis(E, d)
    y_p = np.linalg.lstsq(Er, dr, rcond=None)[0]
    Z = null_space(Er)
    MZ = M @ Z
    Minv, damped = damped_pinv(MZ, limits.damping, limits.sigma_min)
    if damped:
        warnings.warn("inverse dynamics: rank-deficient task stack, damped solve used", RuntimeWarning)
    y = y_p + Z @ (Minv @ (g - M @ y_p))
    qdd, tau = y[:n], y[n:]
    f = JTp @ (D @ qdd + H - B @ tau)
    info = {"damped": damped, "projection_rank": P.shape[1], "consistency": resid}
    return TorqueCommand(tau, qdd=qdd, forces=f, info=info)


def gravity_feedforward(model, D, H, constraints, limits=None, tau_weight=None):
    """Support torque for zero generalized acceleration: min-norm ``tau`` with ``B tau + J^T f = H``."""
    n, m = model.n, model.m
    J = constraints.J_hol
    A = np.hstack([model.B, J.T])
    w = np.concatenate([_tau_weight(m, tau_weight), np.full(constraints.h, 1e-2)])
    s = 1.0 / np.sqrt(w)
    sol = np.linalg.lstsq(A * s[None, :], H, rcond=None)[0] * s
    return TorqueCommand(sol[:m], tau_ff=sol[:m].copy(), qdd=np.zeros(n), forces=sol[m:])


# --- inverse kinematics --------------------------------------------------------

@dataclass
class IkResult:
    q_des: np.ndarray
    v_des: np.ndarray
    damped: bool = False
    iterations: int = 0
    converged: bool = True
    residuals: list = field(default_factory=list)


def constrained_task_jacobian(J_y, J_c):
    """``J_y N`` with ``N = I - J_c^+ J_c`` and the projector ``N``."""
    n = J_y.shape[1]
    N = np.eye(n) - pinv(J_c) @ J_c if J_c.shape[0] else np.eye(n)
    return J_y @ N, N


def vel_ik(q_a, y_a, J_y, y_d, dy_d, J_c, limits=None, v_a=None):
    """One constraint-consistent IK step.

    ``q_des = q_a + Jbar^+ (y_d - y_a)`` and ``v_des = Jbar^+ dy_d``. When the
    measured velocity ``v_a`` is given, its component that neither the tasks
    nor the contacts determine (e.g. the passive pendulum direction) is passed
    through instead of being commanded to zero.
    """
    damping = 1e-6 if limits is None else limits.damping
    sigma_min = 1e-4 if limits is None else limits.sigma_min
    Jbar, N = constrained_task_jacobian(J_y, J_c)
    Jp, damped = damped_pinv(Jbar, damping, sigma_min)
    dq = Jp @ (np.asarray(y_d) - np.asarray(y_a))
    v_des = Jp @ np.asarray(dy_d)
    if v_a is not None:
        v_des = v_des + (np.eye(len(q_a)) - Jp @ Jbar) @ (N @ v_a)
    return IkResult(np.asarray(q_a) + dq, v_des, damped)


def pos_ik(q_a, y_d, dy_d, outputs, constraint_jacobian, limits, v_a=None):
    """Newton iteration ``q <- q + Jbar(q)^+ (y_d - y(q))`` with residual halving.

    ``outputs(q) -> (y, J_y)`` and ``constraint_jacobian(q) -> J_c``. A trial
    step that does not reduce the residual is halved (up to 20 times). After the
    loop a velocity IK step at the final iterate supplies ``v_des``.
    """
    q = np.array(q_a, dtype=float)
    y, Jy = outputs(q)
    res = float(np.linalg.norm(y_d - y))
    history = [res]
    k = 0
    damped_any = False
    while res >= limits.ik_eps and k < limits.ik_max_iter:
        Jc = constraint_jacobian(q)
        Jbar, _ = constrained_task_jacobian(Jy, Jc)
        Jp, damped = damped_pinv(Jbar, limits.damping, limits.sigma_min)
        damped_any |= damped
        step = Jp @ (y_d - y)
        alpha = 1.0
        for _ in range(20):
            q_try = q + alpha * step
            y_try, Jy_try = outputs(q_try)
            res_try = float(np.linalg.norm(y_d - y_try))
            if res_try < res:
                break
            alpha *= 0.5
        else:
            break
        q, y, Jy, res = q_try, y_try, Jy_try, res_try
        history.append(res)
        k += 1
    Jc = constraint_jacobian(q)
    vel = vel_ik(q, y, Jy, y, dy_d, Jc, limits, v_a)
    return IkResult(q, vel.v_des, damped_any or vel.damped, k, res < limits.ik_eps, history)


def pd_with_feedforward(kp, kd, q_m_des, v_m_des, q_m, v_m, tau_ff):
    """``tau = tau_ff + Kp (q_des - q) + Kd (v_des - v)`` with diagonal gains."""
    kp = np.asarray(kp, dtype=float)
    kd = np.asarray(kd, dtype=float)
    tau_fb = kp * (np.asarray(q_m_des) - np.asarray(q_m)) + kd * (np.asarray(v_m_des) - np.asarray(v_m))
    tau_ff = np.asarray(tau_ff, dtype=float)
    return TorqueCommand(tau_ff + tau_fb, tau_ff=tau_ff, q_m_des=np.asarray(q_m_des),
                         v_m_des=np.asarray(v_m_des), mode="position-loop")
