"""Oracle battery run by ``romstack selftest``.

Each check compares an implementation against an independent computation and
passes when the discrepancy is within its tolerance times ``tol_scale``. A tiny
``tol_scale`` makes the checks fail on purpose (used to exercise the failure path).
"""

from dataclasses import asdict, dataclass
import math

import numpy as np

from romstack import planners, rom
from romstack.contact import point_forces_to_wrench, sole_points, wrench_map
from romstack.linalg import expm
from romstack.rigid_body import FootGeometry, Kinematics, bias_forces, load_reference_biped, mass_matrix
from romstack.wbc.qp import QpProblem, kkt_residuals, kkt_scales, solve_qp


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float
    passed: bool


def _check(name, error, tol, tol_scale):
    tol = tol * tol_scale
    return CheckResult(name, float(error), float(tol), bool(error <= tol))


def check_expm(rng, tol_scale):
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 5))
        v = rng.normal(size=(n, n)) + 2.0 * np.eye(n)
        lam = rng.uniform(-2.0, 2.0, size=n)
        a = v @ np.diag(lam) @ np.linalg.inv(v)
        ref = v @ np.diag(np.exp(lam)) @ np.linalg.inv(v)
        worst = max(worst, np.abs(expm(a) - ref).max() / max(1.0, np.abs(ref).max()))
    params = rom.LipParams(0.8)
    for dt in (0.05, 0.35, 1.0):
        ref = rom.ss_transition(params, dt)
        worst = max(worst, np.abs(expm(rom.a_ss(params) * dt) - ref).max() / np.abs(ref).max())
    return _check("expm vs eigendecomposition", worst, 1e-10, tol_scale)


def check_wrench_map(rng, tol_scale):
    geom = FootGeometry(0.05, 0.08, 0.12)
    pts = sole_points(geom)
    W = wrench_map(geom)
    worst = 0.0
    for _ in range(200):
        f = rng.normal(size=6)
        forces = [np.array([f[0], f[1], f[2]]), np.array([f[3], 0.0, f[4]]), np.array([0.0, 0.0, f[5]])]
        ref = point_forces_to_wrench([pts["LF"], pts["RF"], pts["MB"]], forces)
        worst = max(worst, np.abs(W @ f - ref).max())
    return _check("wrench map vs cross products", worst, 1e-12, tol_scale)


def check_dynamics(rng, tol_scale, model):
    worst = 0.0
    for _ in range(20):
        q = rng.normal(size=model.n)
        v = rng.normal(size=model.n)
        D, H = Kinematics(model, q, v).dynamics()
        worst = max(worst, np.abs(D - mass_matrix(model, q)).max(), np.abs(H - bias_forces(model, q, v)).max())
    return _check("projected dynamics vs CRBA/RNEA", worst, 1e-9, tol_scale)


def check_jacobians(rng, tol_scale, model):
    worst = 0.0
    h = 1e-6
    foot = next(iter(model.feet.values()))
    for _ in range(10):
        q = rng.normal(size=model.n)
        v = rng.normal(size=model.n)
        kin = Kinematics(model, q, v)
        kp, km = Kinematics(model, q + h * v), Kinematics(model, q - h * v)
        fd = (kp.point(foot.body, foot.toe) - km.point(foot.body, foot.toe)) / (2 * h)
        worst = max(worst, np.abs(fd - kin.point_jacobian(foot.body, foot.toe)[:2] @ v).max())
        fd = (kp.com() - km.com()) / (2 * h)
        worst = max(worst, np.abs(fd - kin.com_jacobian() @ v).max())
        # Jdot v by differencing J v along the motion
        jp = Kinematics(model, q + h * v).point_jacobian(foot.body, foot.toe)[:2] @ v
        jm = Kinematics(model, q - h * v).point_jacobian(foot.body, foot.toe)[:2] @ v
        worst = max(worst, np.abs((jp - jm) / (2 * h) - kin.jdot_v(foot.body, foot.toe)[:2]).max())
    return _check("Jacobians vs finite differences", worst, 1e-5, tol_scale)


def check_kkt(rng, tol_scale):
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 8))
        m_eq = int(rng.integers(0, n // 2 + 1))
        m_in = int(rng.integers(0, 2 * n))
        F = rng.normal(size=(n, n))
        G = F.T @ F + 1e-3 * np.eye(n)
        x0 = rng.normal(size=n)
        A_eq = rng.normal(size=(m_eq, n))
        A_in = rng.normal(size=(m_in, n))
        prob = QpProblem(G, rng.normal(size=n), A_eq, A_eq @ x0, A_in, A_in @ x0 + rng.uniform(0, 1, m_in))
        res = solve_qp(prob, check=False)
        kkt = kkt_residuals(prob, res.x, res.lam_eq, res.mu_in)
        scales = kkt_scales(prob, res.x, res.lam_eq, res.mu_in)
        worst = max(worst, max(kkt[k] / scales[k] for k in kkt))
    return _check("QP KKT residuals", worst, 1e-8, tol_scale)


def check_deadbeat(tol_scale):
    params = rom.LipParams(0.8)
    timing = rom.GaitTiming(0.35, 0.1)
    worst = 0.0
    for kind in planners.PLANNER_KINDS:
        syn = planners.synthesize(planners.PlannerConfig(kind), params, timing)
        cl = planners.closed_loop(syn.s2s, syn.gain)
        worst = max(worst, float(np.abs(np.linalg.matrix_power(cl, syn.s2s.n)).max()))
    return _check("deadbeat nilpotency", worst, 1e-8, tol_scale)


def run_selftest(seed=0, tol_scale=1.0):
    """Run every check; returns a list of :class:`CheckResult`."""
    if not (tol_scale > 0.0 and math.isfinite(tol_scale)):
        raise ValueError("tol_scale must be positive and finite")
    rng = np.random.default_rng(seed)
    model = load_reference_biped()
    return [
        check_expm(rng, tol_scale),
        check_wrench_map(rng, tol_scale),
        check_dynamics(rng, tol_scale, model),
        check_jacobians(rng, tol_scale, model),
        check_kkt(rng, tol_scale),
        check_deadbeat(tol_scale),
    ]


def summary(results):
    n_pass = sum(r.passed for r in results)
    return {
        "passed": n_pass,
        "failed": len(results) - n_pass,
        "checks": [asdict(r) for r in results],
    }
