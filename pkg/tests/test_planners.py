import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st

from romstack import planners, rom
from romstack.planners import PlannerConfig, VelocityCommand
from romstack.rom import GaitTiming, LipParams, S2SMap

P = LipParams(0.8, 9.81)
T = GaitTiming(0.35, 0.1)


def hlip():
    return rom.s2s_hlip(P, T)


def test_alip_desired_momentum():
    assert planners.alip_desired_momentum(P, 0.0) == 0.0
    assert planners.alip_desired_momentum(LipParams(1.0), 0.5) == 0.5
    assert planners.alip_desired_momentum(P, 0.6) == pytest.approx(2 * planners.alip_desired_momentum(P, 0.3))


def test_alip_zero_state_zero_step():
    assert planners.alip_foot_placement(P, T, (0.0, 0.0), 0.1, 0.0) == 0.0


def _next_preimpact_L(x_now, t_in, u):
    x_pre = rom.ss_flow(P, x_now, T.t_ss - t_in)
    return rom.ss_flow(P, rom.impact_update(x_pre, u), T.t_ss).L


def test_alip_deadbeat_hits_momentum_target():
    x_now, t_in, v = (0.02, 0.25), 0.1, 0.3
    u = planners.alip_foot_placement(P, T, x_now, t_in, v)
    assert _next_preimpact_L(x_now, t_in, u) == pytest.approx(P.z0 * v, abs=1e-12)


def test_alip_alpha_halves_error():
    x_now, t_in, v = (0.05, 0.4), 0.0, 0.2
    L_des = P.z0 * v
    L_hat = rom.predict_preimpact(P, x_now, T.t_ss).L
    u = planners.alip_foot_placement(P, T, x_now, t_in, v, alpha=0.5)
    err_next = _next_preimpact_L(x_now, t_in, u) - L_des
    assert err_next == pytest.approx(0.5 * (L_hat - L_des), abs=1e-12)


def test_alip_errors():
    with pytest.raises(ValueError):
        planners.alip_foot_placement(P, T, (0, 0), T.t_ss + 0.01, 0.0)


def test_fixed_point_zero_and_rollout():
    fp = planners.fixed_point(hlip(), T, 0.0)
    assert fp.u_star == 0.0 and np.all(fp.x_star == 0.0)
    fp = planners.fixed_point(hlip(), T, 0.3)
    assert fp.u_star == pytest.approx(0.135)
    m = hlip()
    assert np.allclose(m.step(fp.x_star, fp.u_star), fp.x_star, atol=1e-10)


def test_fixed_point_dcm_scalar():
    m = rom.s2s_dcm(P, T)
    fp = planners.fixed_point(m, T, 0.4)
    a, b = m.a[0, 0], m.b[0, 0]
    assert fp.x_star[0] == pytest.approx(b * fp.u_star / (1 - a), rel=1e-12)
    assert m.step(fp.x_star, fp.u_star)[0] == pytest.approx(fp.x_star[0], abs=1e-10)


def test_fixed_point_singular_names_eigenvalue():
    with pytest.raises(np.linalg.LinAlgError, match="eigenvalue at 1"):
        planners.fixed_point(rom.s2s_mlip(P, T), T, 0.3)


def test_deadbeat_scalar():
    g = planners.deadbeat_gain(S2SMap(np.array([[2.0]]), np.array([[-1.0]]), "DCM"))
    assert g.k[0, 0] == pytest.approx(2.0)


@pytest.mark.parametrize("kind", ["HLIP", "MLIP", "ALIP"])
def test_deadbeat_nilpotent(kind):
    syn = planners.synthesize(PlannerConfig(kind), P, T)
    cl = planners.closed_loop(syn.s2s, syn.gain)
    assert np.abs(cl @ cl).max() <= 1e-8


def test_deadbeat_uncontrollable():
    m = S2SMap(np.diag([2.0, 3.0]), np.array([1.0, 0.0]), "HLIP")
    with pytest.raises(np.linalg.LinAlgError):
        planners.deadbeat_gain(m)


@pytest.mark.parametrize("kind,n", [("HLIP", 2), ("MLIP", 2), ("DCM", 1)])
def test_deadbeat_rollout_reaches_fixed_point(kind, n, rng):
    syn = planners.synthesize(PlannerConfig(kind), P, T)
    fp = planners.fixed_point(syn.s2s, T, 0.25)
    for _ in range(100):
        x = fp.x_star + rng.normal(scale=0.1, size=syn.s2s.n)
        for _ in range(n):
            u = planners.step_feedback(syn.s2s, fp, syn.gain, x)
            x = syn.s2s.step(x, u)
        assert np.abs(x - fp.x_star).max() <= 1e-8


def test_lqr_matches_scipy_dare():
    m = hlip()
    gain, p = planners.lqr_gain(m, 1.0, 1.0)
    ref = scipy.linalg.solve_discrete_are(m.a, m.b, np.eye(2), np.eye(1))
    assert np.allclose(p, ref, rtol=1e-9)
    assert planners.dare_residual(m, p) <= 1e-9
    k_ref = -np.linalg.solve(np.eye(1) + m.b.T @ ref @ m.b, m.b.T @ ref @ m.a)
    assert np.allclose(gain.k, k_ref, rtol=1e-8)
    assert np.abs(np.linalg.eigvals(planners.closed_loop(m, gain))).max() < 1.0


def test_lqr_scalar_stable_and_deadbeat_limit():
    m = S2SMap(np.array([[1.5]]), np.array([[1.0]]), "DCM")
    g, _ = planners.lqr_gain(m, 1.0, 1.0)
    assert abs(1.5 + g.k[0, 0]) < 1.0
    g_big, _ = planners.lqr_gain(m, 1e8, 1.0)
    assert g_big.k[0, 0] == pytest.approx(planners.deadbeat_gain(m).k[0, 0], rel=1e-6)


def test_lqr_rollout_geometric(rng):
    syn = planners.synthesize(PlannerConfig("HLIP", gain="lqr"), P, T)
    fp = planners.fixed_point(syn.s2s, T, 0.2)
    cl = planners.closed_loop(syn.s2s, syn.gain)
    rho = np.abs(np.linalg.eigvals(cl)).max()
    x = fp.x_star + np.array([0.05, -0.1])
    errs = []
    for _ in range(30):
        errs.append(np.linalg.norm(x - fp.x_star))
        x = syn.s2s.step(x, planners.step_feedback(syn.s2s, fp, syn.gain, x))
    # geometric envelope set by the spectral radius, down to roundoff
    c = np.linalg.cond(np.linalg.eig(cl)[1])
    for k, e in enumerate(errs):
        assert e <= c * rho**k * errs[0] + 1e-12
    assert errs[-1] <= 1e-12


def test_step_feedback_at_fixed_point():
    m = hlip()
    fp = planners.fixed_point(m, T, 0.3)
    g = planners.deadbeat_gain(m)
    assert planners.step_feedback(m, fp, g, fp.x_star) == pytest.approx(fp.u_star, abs=1e-15)
    fp0 = planners.fixed_point(m, T, 0.0)
    assert planners.step_feedback(m, fp0, g, np.zeros(2)) == 0.0
    with pytest.raises(ValueError):
        planners.step_feedback(m, fp, g, np.zeros(3))


def test_lateral_orbit():
    m = hlip()
    fl, fr = planners.lateral_fixed_point(m, T, 0.0, 0.1)
    assert fl.u_star == pytest.approx(-0.1) and fr.u_star == pytest.approx(0.1)
    assert np.allclose(fl.x_star, -fr.x_star, atol=1e-14)
    x = m.step(m.step(fl.x_star, fl.u_star), fr.u_star)
    assert np.allclose(x, fl.x_star, atol=1e-10)
    fl, fr = planners.lateral_fixed_point(m, T, 0.2, 0.1)
    assert fl.u_star + fr.u_star == pytest.approx(2 * 0.2 * T.period)
    fl, fr = planners.lateral_fixed_point(m, T, 0.0, 0.0)
    assert np.all(fl.x_star == 0.0) and fl.u_star == 0.0 == fr.u_star


def test_plan_at_fixed_point_gives_nominal_step():
    cfg = PlannerConfig("HLIP")
    fp = planners.fixed_point(hlip(), T, 0.3)
    out = planners.plan(cfg, P, T, fp.x_star, T.t_ss, VelocityCommand(0.3))
    assert out.u_sw_x == pytest.approx(fp.u_star, abs=1e-12)
    # earlier in the step, from the state that flows into x*
    x_mid = np.linalg.solve(rom.ss_transition(P, 0.2), fp.x_star)
    out = planners.plan(cfg, P, T, x_mid, T.t_ss - 0.2, VelocityCommand(0.3))
    assert out.u_sw_x == pytest.approx(fp.u_star, abs=1e-12)


def test_plan_alip_hlip_agree_at_rest():
    for kind in ("ALIP", "HLIP"):
        out = planners.plan(PlannerConfig(kind), P, T, (0.0, 0.0), 0.1, VelocityCommand(0.0))
        assert out.u_sw_x == 0.0


@pytest.mark.parametrize("kind", planners.PLANNER_KINDS)
def test_plan_replan_consistent(kind):
    cfg = PlannerConfig(kind)
    x0 = np.array([-0.03, 0.2])
    cmd = VelocityCommand(0.25, 0.05, 0.1)
    y0 = np.array([0.02, -0.05])
    a = planners.plan(cfg, P, T, x0, 0.05, cmd, y0)
    b = planners.plan(cfg, P, T, rom.ss_flow(P, x0, 0.1), 0.15, cmd, rom.ss_flow(P, y0, 0.1))
    assert a.u_sw_x == pytest.approx(b.u_sw_x, abs=1e-8)
    assert a.u_sw_y == pytest.approx(b.u_sw_y, abs=1e-8)


def test_plan_deterministic_and_validated():
    cfg = PlannerConfig("MLIP")
    a = planners.plan(cfg, P, T, (0.01, 0.1), 0.1, VelocityCommand(0.2), (0.0, 0.01), "right")
    b = planners.plan(cfg, P, T, (0.01, 0.1), 0.1, VelocityCommand(0.2), (0.0, 0.01), "right")
    assert a.u_sw_x == b.u_sw_x and a.u_sw_y == b.u_sw_y
    with pytest.raises(ValueError):
        planners.plan(cfg, P, T, (0, 0), -0.1, VelocityCommand())
    with pytest.raises(ValueError):
        planners.plan(cfg, P, T, (0, 0), 0.1, VelocityCommand(), stance="middle")
    with pytest.raises(ValueError):
        PlannerConfig("XYZ")
    with pytest.raises(ValueError):
        PlannerConfig(alpha=1.0)
    with pytest.raises(ValueError):
        VelocityCommand(step_width=-0.1)


def test_single_support_equivalence(rng):
    """Without double support, HLIP and MLIP deadbeat sequences coincide; DCM settles xi in one step."""
    t0 = GaitTiming(0.35, 0.0)
    syns = {k: planners.synthesize(PlannerConfig(k), P, t0) for k in ("HLIP", "MLIP", "DCM")}
    fps = {k: planners.fixed_point(s.s2s, t0, 0.3) for k, s in syns.items()}
    for _ in range(20):
        x0 = rng.normal(scale=0.1, size=2)
        seqs = {}
        for k in ("HLIP", "MLIP"):
            x, seq = x0.copy(), []
            for _ in range(4):
                x = syns[k].s2s.step(x, planners.step_feedback(syns[k].s2s, fps[k], syns[k].gain, x))
                seq.append(x)
            seqs[k] = np.array(seq)
        assert np.allclose(seqs["HLIP"], seqs["MLIP"], atol=1e-8)
        xi = np.array([rom.dcm_transform(P, x0)[1]])
        s = syns["DCM"]
        xi1 = s.s2s.step(xi, planners.step_feedback(s.s2s, fps["DCM"], s.gain, xi))
        assert xi1[0] == pytest.approx(fps["DCM"].x_star[0], abs=1e-8)
        # the scalar map is the xi-projection of the H-LIP map
        h = syns["HLIP"].s2s
        u = 0.07
        assert rom.dcm_transform(P, h.step(x0, u))[1] == pytest.approx(s.s2s.step(xi, u)[0], abs=1e-10)


@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(0.0, 0.35))
def test_translation_covariance(p, L, t_in):
    """Placement depends only on stance-relative state: shifting both CoM and stance cancels."""
    cfg = PlannerConfig("HLIP")
    shift = 3.7
    com_world, stance_world = p + shift, shift
    a = planners.plan(cfg, P, T, (p, L), t_in, VelocityCommand(0.2))
    b = planners.plan(cfg, P, T, (com_world - stance_world, L), t_in, VelocityCommand(0.2))
    assert a.u_sw_x == pytest.approx(b.u_sw_x, abs=1e-12)


def _exact_maps():
    return {
        "HLIP": (rom.s2s_hlip(P, T), T),
        "MLIP": (rom.reduce_mlip(rom.s2s_mlip(P, T)), T),
        "DCM": (rom.s2s_dcm(P, T), T),
        "ALIP": (planners.synthesize(PlannerConfig("ALIP"), P, T).s2s, GaitTiming(T.t_ss, 0.0)),
    }


@pytest.mark.parametrize("kind", ["HLIP", "MLIP", "DCM", "ALIP"])
def test_fixed_point_is_exactly_periodic(kind):
    """In exact arithmetic on the float map, u = u* keeps x* forever; float64 x* is within roundoff."""
    from fractions import Fraction

    s2s, timing = _exact_maps()[kind]
    n = s2s.n
    A = [[Fraction(float(s2s.a[i, j])) for j in range(n)] for i in range(n)]
    b = [Fraction(float(s2s.b[i, 0])) for i in range(n)]
    fp = planners.fixed_point(s2s, timing, 0.4)
    u = Fraction(fp.u_star)
    # solve (I - A) x = b u exactly (n <= 2)
    M = [[(1 if i == j else 0) - A[i][j] for j in range(n)] for i in range(n)]
    r = [b[i] * u for i in range(n)]
    if n == 1:
        x = [r[0] / M[0][0]]
    else:
        det = M[0][0] * M[1][1] - M[0][1] * M[1][0]
        x = [(r[0] * M[1][1] - M[0][1] * r[1]) / det, (M[0][0] * r[1] - M[1][0] * r[0]) / det]
    assert np.abs(np.array([float(v) for v in x]) - fp.x_star).max() <= 1e-15
    xk = list(x)
    for _ in range(50):
        xk = [sum(A[i][j] * xk[j] for j in range(n)) + b[i] * u for i in range(n)]
    assert xk == x


@pytest.mark.parametrize("kind", ["HLIP", "MLIP", "DCM", "ALIP"])
def test_fixed_point_held_under_feedback(kind):
    """With the deadbeat law closing the loop, starting at x* the input stays u* to roundoff."""
    s2s, timing = _exact_maps()[kind]
    fp = planners.fixed_point(s2s, timing, 0.4)
    gain = planners.deadbeat_gain(s2s)
    x = fp.x_star.copy()
    for _ in range(50):
        u = planners.step_feedback(s2s, fp, gain, x)
        assert abs(u - fp.u_star) <= 1e-12
        x = s2s.a @ x + s2s.b[:, 0] * u
        assert np.abs(x - fp.x_star).max() <= 1e-9
