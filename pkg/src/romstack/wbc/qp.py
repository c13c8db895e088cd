"""Dense convex QP: equality elimination followed by a dual active-set method.

Problem form::

    min 1/2 x^T G x + c^T x   s.t.   A_eq x = b_eq,   A_in x <= b_in

Equalities are removed by a null-space parametrization ``x = x_p + Z w``; the
inequality-only problem in ``w`` is solved with the Goldfarb-Idnani dual
method, which starts from the unconstrained minimizer and needs no feasible
initial point.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.linalg import LinAlgError

from romstack.linalg import null_space, row_basis


class QpInfeasible(ValueError):
    def __init__(self, msg, index=None):
        super().__init__(msg)
        self.index = index


class QpIterationLimit(RuntimeError):
    def __init__(self, msg, residuals=None):
        super().__init__(msg)
        self.residuals = residuals


@dataclass
class QpProblem:
    G: np.ndarray
    c: np.ndarray
    A_eq: np.ndarray = None
    b_eq: np.ndarray = None
    A_in: np.ndarray = None
    b_in: np.ndarray = None
    G_factor: np.ndarray = None  # optional F with G = F^T F (better-conditioned reduction)

    def __post_init__(self):
        self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
        n = self.G.shape[0]
        if self.G.shape != (n, n):
            raise ValueError("Hessian must be square")
        if not np.allclose(self.G, self.G.T, atol=1e-10 * max(1.0, np.abs(self.G).max())):
            raise ValueError("Hessian must be symmetric")
        self.G = 0.5 * (self.G + self.G.T)
        if self.G_factor is not None:
            self.G_factor = np.asarray(self.G_factor, dtype=float).reshape(-1, n)
        self.c = np.asarray(self.c, dtype=float).reshape(n)
        self.A_eq, self.b_eq = _rows(self.A_eq, self.b_eq, n, "equality")
        self.A_in, self.b_in = _rows(self.A_in, self.b_in, n, "inequality")

    @property
    def n(self):
        return self.G.shape[0]


def _rows(a, b, n, what):
    if a is None:
        return np.zeros((0, n)), np.zeros(0)
    a = np.asarray(a, dtype=float).reshape(-1, n)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"{what} matrix and vector row counts differ")
    return a, b


@dataclass
class QpResult:
    x: np.ndarray
    lam_eq: np.ndarray
    mu_in: np.ndarray
    active: tuple
    iterations: int
    kkt: dict = field(default_factory=dict)


def kkt_residuals(prob, x, lam_eq, mu_in):
    """Stationarity, primal, dual and complementarity residuals (infinity norms)."""
    grad = prob.G @ x + prob.c + prob.A_eq.T @ lam_eq + prob.A_in.T @ mu_in
    slack = prob.A_in @ x - prob.b_in
    return {
        "stationarity": float(np.abs(grad).max(initial=0.0)),
        "primal_eq": float(np.abs(prob.A_eq @ x - prob.b_eq).max(initial=0.0)),
        "primal_in": float(np.maximum(slack, 0.0).max(initial=0.0)),
        "dual": float(np.maximum(-mu_in, 0.0).max(initial=0.0)),
        "complementarity": float(np.abs(mu_in * slack).max(initial=0.0)),
    }


def kkt_scales(prob, x, lam_eq, mu_in):
    """Magnitudes each residual is measured against (at least 1)."""
    ax = np.abs(x)
    stat = max(
        np.abs(prob.G @ x).max(initial=0.0), np.abs(prob.c).max(initial=0.0),
        np.abs(prob.A_eq.T @ lam_eq).max(initial=0.0), np.abs(prob.A_in.T @ mu_in).max(initial=0.0),
    )
    eq = max(np.abs(prob.b_eq).max(initial=0.0), (np.abs(prob.A_eq) @ ax).max(initial=0.0))
    ineq = max(np.abs(prob.b_in).max(initial=0.0), (np.abs(prob.A_in) @ ax).max(initial=0.0))
    dual = np.abs(mu_in).max(initial=0.0)
    return {
        "stationarity": max(1.0, stat),
        "primal_eq": max(1.0, eq),
        "primal_in": max(1.0, ineq),
        "dual": max(1.0, dual),
        "complementarity": max(1.0, dual * ineq),
    }


def solve_qp(prob, max_iter=200, tol=1e-8, check=True):
    """Solve ``prob``; raises :class:`QpInfeasible` or :class:`QpIterationLimit`.

    With ``check`` each KKT residual is verified against ``tol`` times the
    magnitude of the terms it balances; a failure raises ``QpIterationLimit``.
    """
    n = prob.n
    a_r, b_r, resid = row_basis(prob.A_eq, prob.b_eq)
    scale_eq = max(1.0, np.abs(prob.b_eq).max(initial=0.0))
    if resid > 1e-9 * scale_eq:
        raise QpInfeasible(f"equality constraints are inconsistent (residual {resid:.3e})")
    if a_r.shape[0]:
        x_p = np.linalg.lstsq(a_r, b_r, rcond=None)[0]
        Z = null_space(a_r)
    else:
        x_p = np.zeros(n)
        Z = np.eye(n)
    A = prob.A_in @ Z
    b = prob.b_in - prob.A_in @ x_p
    if Z.shape[1] == 0:
        w = np.zeros(0)
        viol = prob.A_in @ x_p - prob.b_in
        if viol.size and viol.max() > tol * max(1.0, np.abs(prob.b_in).max()):
            k = int(np.argmax(viol))
            raise QpInfeasible(f"inequality {k} violated by {viol[k]:.3e} at the unique equality solution", k)
        mu_red = np.zeros(prob.A_in.shape[0])
        active, its = (), 0
    else:
        cw = Z.T @ (prob.G @ x_p + prob.c)
        if prob.G_factor is not None:
            # R from QR of F Z: G_w = R^T R without squaring the condition number
            R = np.linalg.qr(prob.G_factor @ Z, mode="r")
            if R.shape[0] < R.shape[1] or np.any(np.abs(np.diag(R)) == 0.0):
                raise ValueError("reduced Hessian is singular; add regularization")
            Lc = R.T * np.sign(np.diag(R))[None, :]
        else:
            Lc = None
        w, mu_red, active, its = _dual_active_set(Z.T @ prob.G @ Z, cw, A, b, max_iter, tol, Lc)
    x = x_p + Z @ w
    # equality multipliers from stationarity
    rhs = -(prob.G @ x + prob.c + prob.A_in.T @ mu_red)
    if prob.A_eq.shape[0]:
        lam = np.linalg.lstsq(prob.A_eq.T, rhs, rcond=None)[0]
    else:
        lam = np.zeros(0)
    kkt = kkt_residuals(prob, x, lam, mu_red)
    if check:
        scales = kkt_scales(prob, x, lam, mu_red)
        bad = {k: v for k, v in kkt.items() if v > tol * scales[k]}
        if bad:
            raise QpIterationLimit(f"KKT residuals above tolerance: {bad}", kkt)
    return QpResult(x, lam, mu_red, tuple(active), its, kkt)


def _dual_active_set(G, c, A, b, max_iter, tol, Lc=None):
    """Goldfarb-Idnani on ``min 1/2 w^T G w + c^T w`` s.t. ``A w <= b``.

    Returns ``(w, mu, active, iterations)`` with ``mu >= 0`` the inequality
    multipliers (full length, zero for inactive rows).
    """
    m = A.shape[0]
    if Lc is None:
        try:
            Lc = np.linalg.cholesky(G)
        except LinAlgError as exc:
            raise ValueError("reduced Hessian is not positive definite; add regularization") from exc
    Linv = np.linalg.solve(Lc, np.eye(Lc.shape[0]))
    Ginv = Linv.T @ Linv
    w = -(Linv.T @ (Linv @ c))
    mu = np.zeros(m)
    active = []
    row_norm = np.maximum(np.linalg.norm(A, axis=1), 1e-300)
    feas_tol = tol * max(1.0, np.abs(b).max(initial=0.0))
    its = 0
    while True:
        viol = (A @ w - b) / row_norm
        if m == 0:
            break
        cand = np.where(viol > feas_tol, viol, -np.inf)
        cand[active] = -np.inf
        p = int(np.argmax(cand))
        if not np.isfinite(cand[p]):
            break
        u_p = 0.0
        while True:
            its += 1
            if its > max_iter:
                raise QpIterationLimit(f"QP iteration cap {max_iter} reached", {"violation": float(viol.max())})
            n_p = -A[p]  # constraint in ">=" form: -A w >= -b
            if active:
                N = -A[active].T
                GN = Ginv @ N
                M = N.T @ GN
                r = np.linalg.solve(M, GN.T @ n_p)
                z = Ginv @ n_p - GN @ r
            else:
                r = np.zeros(0)
                z = Ginv @ n_p
            # partial (dual) step limit
            t1, k_drop = np.inf, -1
            for i, ri in enumerate(r):
                if ri > 1e-14:
                    ratio = mu[active[i]] / ri
                    if ratio < t1:
                        t1, k_drop = ratio, i
            s_p = n_p @ w + b[p]  # >= 0 when satisfied
            zn = z @ n_p
            # n_p (nearly) dependent on the active rows: only a dual step is possible
            dep = zn <= 1e-11 * (n_p @ Ginv @ n_p)
            t2 = np.inf if dep else -s_p / zn
            if not np.isfinite(t2) and not np.isfinite(t1):
                raise QpInfeasible(f"inequality {p} cannot be satisfied with the active set {active}", p)
            t = min(t1, t2)
            if np.isfinite(t2):
                w = w + t * z
            for i, j in enumerate(active):
                mu[j] -= t * r[i]
            u_p += t
            if t2 <= t1:
                mu[p] = u_p
                active.append(p)
                break
            j = active.pop(k_drop)
            mu[j] = 0.0
    mu = np.maximum(mu, 0.0)
    return w, mu, active, its
