"""Planar walking: constrained dynamics, impacts and the planner/embedding/WBC loop."""

from dataclasses import dataclass, field, replace
import csv
import math
import warnings

import numpy as np

from romstack import gait_output as go
from romstack import planners
from romstack.contact import ContactMode, build_constraints
from romstack.linalg import pinv
from romstack.planners import PlannerConfig
from romstack.rigid_body import Kinematics, PlanarModel
from romstack.rom import GaitTiming, LipParams
from romstack.rom_sim import CommandProfile
from romstack.wbc import controllers as wbc

BAUMGARTE_ALPHA = 50.0
BAUMGARTE_BETA = 625.0


@dataclass(frozen=True)
class Phase:
    label: str
    t_in_phase: float = 0.0

    def __post_init__(self):
        if self.label not in go.PHASES:
            raise ValueError(f"unknown phase {self.label!r}")
        if self.t_in_phase < 0.0:
            raise ValueError("t_in_phase must be non-negative")


# --- constrained dynamics and impacts ---------------------------------------

@dataclass
class ForwardDynamicsResult:
    qdd: np.ndarray
    forces: np.ndarray
    residual: float
    redundant: bool


def constrained_forward_dynamics(model, D, H, tau, constraints, v=None, alpha=0.0, beta=0.0, pos_err=None):
    """Solve ``D qdd - J^T f = B tau - H`` with ``J qdd = -Jdot v - alpha J v - beta e``.

    The forces come from the Schur complement ``J D^-1 J^T``; redundant point
    constraints (heel and toe of one foot give 4 rows of rank 3) are handled
    with its pseudoinverse, which returns the minimum-norm force set. A warning
    is raised only when the constraint accelerations cannot be met.
    """
    rhs = model.B @ np.asarray(tau, dtype=float) - H
    J = constraints.J_hol
    if constraints.h == 0:
        return ForwardDynamicsResult(np.linalg.solve(D, rhs), np.zeros(0), 0.0, False)
    sol = np.linalg.solve(D, np.column_stack([rhs, J.T]))
    Dinv_rhs, DinvJT = sol[:, 0], sol[:, 1:]
    target = -constraints.jdot_v
    if v is not None and alpha:
        target = target - alpha * (J @ v)
    if pos_err is not None and beta:
        target = target - beta * pos_err
    S = J @ DinvJT
    S = 0.5 * (S + S.T)
    # one symmetric eigendecomposition gives the pseudoinverse and the rank
    lam, U = np.linalg.eigh(S)
    keep = lam > 1e-12 * max(lam[-1], 1e-300)
    Ur = U[:, keep]
    free = target - J @ Dinv_rhs
    f = Ur @ ((Ur.T @ free) / lam[keep])
    qdd = Dinv_rhs + DinvJT @ f
    residual = float(np.abs(J @ qdd - target).max())
    redundant = not keep.all()
    if redundant:
        # acceleration-level rows of a rigid body are always consistent; only
        # the position feedback of redundant points can disagree (second order in pitch)
        base = free + (beta * pos_err if (pos_err is not None and beta) else 0.0)
        base_res = float(np.abs(base - Ur @ (Ur.T @ base)).max())
        scale = max(1.0, np.abs(constraints.jdot_v).max(), np.abs(J @ Dinv_rhs).max())
        # drift off the constraint manifold (J v != 0) makes rigid heel/toe rows
        # disagree by about |J v|^2 / foot length; that is not a modelling error
        tol = 1e-8 * scale
        if v is not None:
            foot_len = min(f.toe[0] - f.heel[0] for f in model.feet.values())
            tol += 2.0 * float(np.abs(J @ v).max()) ** 2 / foot_len
        if base_res > tol:
            warnings.warn(f"constrained dynamics: inconsistent constraints, residual {base_res:.2e}", RuntimeWarning)
    return ForwardDynamicsResult(qdd, f, residual, bool(redundant))


def _chol_solve(L, b):
    y = np.linalg.solve(L, b)
    return np.linalg.solve(L.T, y)


@dataclass
class ImpactResult:
    v_post: np.ndarray
    impulse: np.ndarray


def impact_map(model, D, v_pre, constraints):
    """Plastic impact: ``D v+ - J^T Lambda = D v-`` with ``J v+ = 0``."""
    v_pre = np.asarray(v_pre, dtype=float)
    if constraints.h == 0:
        return ImpactResult(v_pre.copy(), np.zeros(0))
    J = constraints.J_hol
    L = np.linalg.cholesky(D)
    DinvJT = _chol_solve(L, J.T)
    lam = -pinv(J @ DinvJT) @ (J @ v_pre)
    v_post = v_pre + DinvJT @ lam
    if np.abs(J @ v_post).max() > 1e-10 * max(1.0, np.abs(v_pre).max()):
        warnings.warn("impact map: constraint velocity not annihilated", RuntimeWarning)
    return ImpactResult(v_post, lam)


def kinetic_energy_of(D, v):
    return 0.5 * float(v @ D @ v)


# --- initial pose --------------------------------------------------------------

def leg_joints(model, side):
    """Joint indices (hip, knee, ankle) of a leg, found by walking up from the foot."""
    foot = model.body(model.feet[side].body)
    knee = model.parent[foot]
    hip = model.parent[knee]
    return hip, knee, foot


def standing_pose(model, knee=None, pitch=0.0, stance_x=0.0):
    """Both feet flat on the ground at ``stance_x`` with the CoM above the ankles."""
    knee = model.nominal.get("knee", 0.5) if knee is None else knee
    q = np.zeros(model.n)
    q[model.body(model.link_names[0])] = pitch
    sides = list(model.feet)

    def place(shift):
        for side in sides:
            hip, kn, ank = leg_joints(model, side)
            q[kn] = knee
            h = -0.5 * knee
            for _ in range(50):
                q[hip] = h
                q[ank] = -(pitch + h + knee)
                kin = Kinematics(model, q)
                r = kin.point(model.feet[side].body)[0] - kin.origin[model.body(model.link_names[0])][0] - shift
                if abs(r) < 1e-13:
                    break
                eps = 1e-7
                q[hip] = h + eps
                q[ank] = -(pitch + h + eps + knee)
                kin2 = Kinematics(model, q)
                r2 = kin2.point(model.feet[side].body)[0] - kin2.origin[model.body(model.link_names[0])][0] - shift
                h -= r * eps / (r2 - r)
            q[hip] = h
            q[ank] = -(pitch + h + knee)
        kin = Kinematics(model, q)
        return kin.com()[0] - kin.point(model.feet[sides[0]].body)[0]

    shift = 0.0
    for _ in range(30):
        err = place(shift)
        if abs(err) < 1e-12:
            break
        shift += err
    kin = Kinematics(model, q)
    sole = min(kin.point(f.body, f.heel)[1] for f in model.feet.values())
    ankle_x = kin.point(model.feet[sides[0]].body)[0]
    q[0] += stance_x - ankle_x
    q[1] -= sole
    return q


# --- configuration ---------------------------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    model: PlanarModel
    planner: PlannerConfig
    controller: str
    timing: GaitTiming
    profile: CommandProfile
    output_spec: go.OutputSpec
    limits: wbc.SolverLimits
    dt_sim: float = 1e-4
    dt_ctrl: float = 1e-3
    duration: float = 10.0
    mu: float = 0.8
    baumgarte_alpha: float = BAUMGARTE_ALPHA
    baumgarte_beta: float = BAUMGARTE_BETA
    pivot_weight: float = 1e3
    ik_kp: tuple = (400.0, 400.0, 40.0, 400.0, 400.0, 40.0)
    ik_kd: tuple = (10.0, 10.0, 1.0, 10.0, 10.0, 1.0)
    initial_knee: float = None
    record_every: int = 1

    def __post_init__(self):
        if self.controller not in wbc.CONTROLLER_KINDS:
            raise ValueError(f"unknown controller {self.controller!r}")
        if not (0.0 < self.dt_sim <= self.dt_ctrl):
            raise ValueError("need 0 < dt_sim <= dt_ctrl")
        if not self.duration > 0.0:
            raise ValueError("duration must be positive")
        ratio = self.dt_ctrl / self.dt_sim
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("dt_ctrl must be an integer multiple of dt_sim")
        for name in ("t_ss", "t_ds"):
            r = getattr(self.timing, name) / self.dt_ctrl
            if abs(r - round(r)) > 1e-6:
                raise ValueError(f"timing.{name} must be a multiple of dt_ctrl")
        if len(self.ik_kp) != self.model.m or len(self.ik_kd) != self.model.m:
            raise ValueError("IK gains need one entry per actuated joint")

    @property
    def ankle_height(self):
        """Height of the ankle joint above the sole (the passive pivot in single support)."""
        return max(-go.sole_point(f)[1] for f in self.model.feet.values())

    @property
    def params(self):
        # the LIP pivots about the ankle, so its height is measured from there
        return LipParams(self.output_spec.z0 - self.ankle_height, self.model.gravity)


# --- trace ------------------------------------------------------------------------

@dataclass
class WalkStep:
    index: int
    t_impact: float
    stance: str
    u_cmd: float
    u_realized: float
    preimpact: tuple
    com_x: float
    v_mean: float
    v_cmd: float


@dataclass
class SimTrace:
    controller: str
    planner: str
    z0: float
    n: int
    t: list = field(default_factory=list)
    phase: list = field(default_factory=list)
    step_idx: list = field(default_factory=list)
    q: list = field(default_factory=list)
    v: list = field(default_factory=list)
    y_a: list = field(default_factory=list)
    y_d: list = field(default_factory=list)
    tau: list = field(default_factory=list)
    forces: list = field(default_factory=list)
    rom: list = field(default_factory=list)
    u_sw: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    fell: bool = False
    fall_time: float = None
    max_penetration: float = 0.0
    wall_time: float = 0.0

    def arrays(self):
        return {k: np.asarray(getattr(self, k)) for k in ("t", "q", "v", "y_a", "y_d", "tau", "forces", "rom", "u_sw")}

    def columns(self):
        cols = ["t", "phase", "step_idx"]
        cols += [f"q{i}" for i in range(self.n)] + [f"v{i}" for i in range(self.n)]
        cols += [f"ya_{nm}" for nm in go.OUTPUT_NAMES] + [f"yd_{nm}" for nm in go.OUTPUT_NAMES]
        m = len(self.tau[0]) if self.tau else 0
        cols += [f"tau{i}" for i in range(m)] + [f"f{i}" for i in range(8)]
        cols += ["p_rom", "L_rom", "u_sw"]
        return cols

    def write_csv(self, path, header_comment=None):
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh)
            w.writerow(self.columns())
            for i in range(len(self.t)):
                row = [repr(self.t[i]), self.phase[i], self.step_idx[i]]
                for arr in (self.q[i], self.v[i], self.y_a[i], self.y_d[i], self.tau[i], self.forces[i], self.rom[i]):
                    row += [repr(float(x)) for x in arr]
                row.append(repr(float(self.u_sw[i])))
                w.writerow(row)

    def write_steps_csv(self, path, header_comment=None):
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh)
            w.writerow(["step", "t_impact", "stance", "u_cmd", "u_realized", "p_pre", "L_pre", "com_x", "v_mean", "v_cmd"])
            for s in self.steps:
                w.writerow([s.index, repr(s.t_impact), s.stance, repr(s.u_cmd), repr(s.u_realized),
                            repr(s.preimpact[0]), repr(s.preimpact[1]), repr(s.com_x), repr(s.v_mean), repr(s.v_cmd)])


# --- metrics ----------------------------------------------------------------------

def integrated_output_error(trace, window):
    """Trapezoidal ``int |y_a - y_d| dt`` per output over ``window = (t0, t1)``.

    Outputs that are inactive at a sample (swing rows in DS) contribute zero there.
    """
    t0, t1 = window
    t = np.asarray(trace.t)
    sel = (t >= t0 - 1e-12) & (t <= t1 + 1e-12)
    if sel.sum() < 2:
        raise ValueError(f"window {window} contains fewer than two samples")
    err = np.abs(np.asarray(trace.y_a)[sel] - np.asarray(trace.y_d)[sel])
    err = np.where(np.isfinite(err), err, 0.0)
    ts = t[sel]
    vals = np.trapezoid(err, ts, axis=0) if hasattr(np, "trapezoid") else np.trapz(err, ts, axis=0)
    return {nm: float(v) for nm, v in zip(go.OUTPUT_NAMES, vals)}


def tracking_rms(trace, output, phases=None, t_min=0.0):
    """RMS of ``y_a - y_d`` for one output over samples in ``phases`` (default: all where active)."""
    k = go.OUTPUT_NAMES.index(output)
    t = np.asarray(trace.t)
    ph = np.asarray(trace.phase)
    err = np.asarray(trace.y_a)[:, k] - np.asarray(trace.y_d)[:, k]
    sel = np.isfinite(err) & (t >= t_min)
    if phases is not None:
        sel &= np.isin(ph, phases)
    if not sel.any():
        raise ValueError(f"no samples for output {output!r}")
    return float(np.sqrt(np.mean(err[sel] ** 2)))


def summarize(trace, window=None):
    """Summary metrics of a walking run as a plain dict."""
    out = {
        "controller": trace.controller,
        "planner": trace.planner,
        "fell": trace.fell,
        "fall_time": trace.fall_time,
        "duration": trace.t[-1] if trace.t else 0.0,
        "n_steps": len(trace.steps),
        "max_penetration": trace.max_penetration,
    }
    if trace.t:
        out["rms_z_com"] = tracking_rms(trace, "z_com")
        out["rms_swing_z"] = tracking_rms(trace, "swing_z", go.SS_PHASES)
    if len(trace.steps) > 1:
        ev = [s.v_mean - s.v_cmd for s in trace.steps[1:]]
        out["velocity_rmse"] = float(np.sqrt(np.mean(np.square(ev))))
    if window is not None:
        out["integrated_error"] = integrated_output_error(trace, window)
    return out


# --- the closed loop ------------------------------------------------------------------

def rom_estimate(model, kin, pivot_side):
    """``(p, L)`` about the pivot ankle joint; ``L`` is mass-normalized.

    With (near) zero ankle torque the ankle is the point the full model
    actually rotates about; about the sole point below it the horizontal
    ground force adds a moment proportional to the ankle height.
    """
    foot = model.feet[pivot_side]
    pivot = kin.point(foot.body)
    p = kin.com()[0] - pivot[0]
    L = kin.angular_momentum(pivot) / model.total_mass
    return p, L


def _actuator_of(model, joint):
    cols = np.nonzero(model.B[joint])[0]
    return int(cols[0]) if cols.size else None


class _Controller:
    """Holds the per-run controller choice, weights and held IK targets."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.model = cfg.model
        m = self.model.m
        self.ankle = {side: _actuator_of(self.model, leg_joints(self.model, side)[2]) for side in self.model.feet}
        self.kp = np.asarray(cfg.ik_kp, dtype=float)
        self.kd = np.asarray(cfg.ik_kd, dtype=float)
        self.hold = None  # (q_m_des, v_m_des, tau_ff, kp, kd)
        self.m = m

    def tau_weight(self, contact_sides):
        w = np.ones(self.m)
        for side in contact_sides:
            a = self.ankle[side]
            if a is not None:
                w[a] = self.cfg.pivot_weight
        return w

    def compute(self, q, v, D, H, tasks, constraints, phase, contact_sides, desired, actual, kin):
        cfg = self.cfg
        kind = cfg.controller
        w = self.tau_weight(contact_sides)
        if kind == "TSC-QP":
            cmd = wbc.tsc_qp(self.model, D, H, tasks, constraints, cfg.limits, w)
            self.hold = None
            return cmd
        if kind == "ID":
            cmd = wbc.inverse_dynamics(self.model, D, H, tasks, constraints, cfg.limits, w)
            self.hold = None
            return cmd
        # IK controllers: feedforward from ID with feedforward-only task accelerations
        ff_tasks = replace(tasks, y_tgt_ddot=np.zeros_like(tasks.y_tgt_ddot))
        ff = wbc.inverse_dynamics(self.model, D, H, ff_tasks, constraints, cfg.limits, w)
        idx = desired.active
        if kind == "VEL-IK":
            ik = wbc.vel_ik(q, actual.y[idx], actual.J[idx], desired.y[idx], desired.dy[idx],
                            constraints.J_hol, cfg.limits, v_a=v)
        else:
            model = self.model

            def outputs(qq):
                a = go.compute_actual_outputs(model, qq, None, phase)
                return a.y[idx], a.J[idx]

            mode = _mode_for(phase)

            def cjac(qq):
                return build_constraints(model, qq, mode).J_hol

            ik = wbc.pos_ik(q, desired.y[idx], desired.dy[idx], outputs, cjac, cfg.limits, v_a=v)
        B = self.model.B
        kp, kd = self.kp.copy(), self.kd.copy()
        for side in contact_sides:
            a = self.ankle[side]
            if a is not None:
                kp[a] = kd[a] = 0.0
        self.hold = (B.T @ ik.q_des, B.T @ ik.v_des, ff.tau, kp, kd)
        cmd = self.pd(q, v)
        cmd.info.update({"ik_iterations": ik.iterations, "ik_converged": ik.converged, "damped": ik.damped})
        cmd.forces = ff.forces
        return cmd

    def pd(self, q, v):
        q_m_des, v_m_des, tau_ff, kp, kd = self.hold
        B = self.model.B
        return wbc.pd_with_feedforward(kp, kd, q_m_des, v_m_des, B.T @ q, B.T @ v, tau_ff)


def _mode_for(phase):
    stance, other = go.phase_feet(phase)
    if go.is_single_support(phase):
        return ContactMode.single(stance, other)
    return ContactMode.double(stance, other)


def _contact_sides(phase):
    stance, other = go.phase_feet(phase)
    return (stance,) if go.is_single_support(phase) else (stance, other)


def _contact_refs(model, kin, side):
    """Flat placement (heel x, z, toe x, z) on the ground under the landing ankle."""
    foot = model.feet[side]
    ax = kin.point(foot.body)[0]
    return np.array([ax + foot.heel[0], 0.0, ax + foot.toe[0], 0.0])


def run_walking(cfg, q0=None, v0=None):
    """Closed-loop walking on the gait schedule; see :class:`SimConfig`.

    Control runs every ``dt_ctrl``; dynamics are integrated with semi-implicit
    Euler at ``dt_sim``. Touchdown applies the plastic impact map and lift-off
    simply drops the trailing foot's constraints.
    """
    import time as _time

    wall0 = _time.perf_counter()
    model, timing, spec = cfg.model, cfg.timing, cfg.output_spec
    params = cfg.params
    q = standing_pose(model, cfg.initial_knee) if q0 is None else np.array(q0, dtype=float)
    v = np.zeros(model.n) if v0 is None else np.array(v0, dtype=float)
    n_sub = int(round(cfg.dt_ctrl / cfg.dt_sim))
    n_ss = int(round(timing.t_ss / cfg.dt_ctrl))
    n_ds = int(round(timing.t_ds / cfg.dt_ctrl))
    n_ticks = int(round(cfg.duration / cfg.dt_ctrl))
    ctrl = _Controller(cfg)
    trace = SimTrace(cfg.controller, cfg.planner.kind, spec.z0, model.n)

    kin = Kinematics(model, q, v)
    refs = {side: _contact_refs(model, kin, side) for side in model.feet}
    stance = "left"
    swing = "right"
    phase = "SS-left"
    if v0 is not None:
        # start on the contact manifold: an initial velocity into the stance
        # foot is absorbed plastically, like a touchdown
        D0, _ = kin.dynamics()
        v = impact_map(model, D0, v, build_constraints(model, q, _mode_for(phase), v, cfg.mu, kin)).v_post
        kin = Kinematics(model, q, v)
    tick_in_phase = 0
    step = 0
    u_cmd = 0.0
    snapshot = None
    ds_entry = None  # (com_x, rate) relative to the stance ankle on entering DS
    com_prev = kin.com()[0]
    z_lo, z_hi = 0.5 * spec.z0, 1.5 * spec.z0
    base = model.body(model.link_names[0])
    out_plan = None
    pd_mode = cfg.controller in ("VEL-IK", "POS-IK")

    def constraints_for(kin_, phase_):
        cs = build_constraints(model, kin_.q, _mode_for(phase_), kin_.v, cfg.mu, kin_)
        ref = np.concatenate([refs[s] for s in _contact_sides(phase_)])
        return cs, cs.positions - ref

    for tick in range(n_ticks):
        t = tick * cfg.dt_ctrl
        single = go.is_single_support(phase)
        t_in = tick_in_phase * cfg.dt_ctrl
        kin = Kinematics(model, q, v)
        D, H = kin.dynamics()
        cs, perr = constraints_for(kin, phase)
        pivot_side = go.phase_feet(phase)[0]
        p_rom, L_rom = rom_estimate(model, kin, pivot_side)
        actual = go.compute_actual_outputs(model, q, v, phase, kin)
        cmd_v = cfg.profile.at(t)
        if not single and ds_entry is None:
            ds_entry = (actual.y[5], actual.dy[5])
        if single:
            ds_entry = None
            if snapshot is None:
                snapshot = go.SwingSnapshot.at_liftoff(actual.y[2], actual.y[3])
            out_plan = planners.plan(cfg.planner, params, timing, (p_rom, L_rom), t_in, cmd_v, None, stance)
            u_cmd = out_plan.u_sw_x
        desired = go.build_desired_outputs(
            out_plan if out_plan is not None else planners.PlannerOutput(0.0, 0.0, 0.0, None),
            phase, t_in, spec, snapshot or go.SwingSnapshot(), timing.t_ss, ds_entry or (0.0, 0.0),
        )
        if single:
            snapshot = go.retarget_snapshot(snapshot, t_in, desired)
        tasks = go.build_task_set(actual, desired, spec)
        try:
            cmd = ctrl.compute(q, v, D, H, tasks, cs, phase, _contact_sides(phase), desired, actual, kin)
        except (ValueError, RuntimeError) as exc:
            warnings.warn(f"controller failed at t={t:.3f}: {exc}", RuntimeWarning)
            trace.fell = True
            trace.fall_time = t
            break
        # record
        if tick % cfg.record_every == 0:
            yd = np.full(go.N_OUTPUTS, np.nan)
            yd[desired.active] = desired.y[desired.active]
            f8 = np.full(8, np.nan)
            if cmd.forces is not None:
                f8[:len(cmd.forces)] = cmd.forces[:8]
            trace.t.append(t)
            trace.phase.append(phase)
            trace.step_idx.append(step)
            trace.q.append(q.copy())
            trace.v.append(v.copy())
            trace.y_a.append(actual.y.copy())
            trace.y_d.append(yd)
            trace.tau.append(cmd.tau.copy())
            trace.forces.append(f8)
            trace.rom.append((p_rom, L_rom))
            trace.u_sw.append(u_cmd)

        # integrate one control period
        tau = cmd.tau
        for sub in range(n_sub):
            if sub > 0:
                kin = Kinematics(model, q, v)
                D, H = kin.dynamics()
                cs, perr = constraints_for(kin, phase)
                if pd_mode:
                    tau = ctrl.pd(q, v).tau
            fd = constrained_forward_dynamics(model, D, H, tau, cs, v, cfg.baumgarte_alpha, cfg.baumgarte_beta, perr)
            v = v + cfg.dt_sim * fd.qdd
            q = q + cfg.dt_sim * v
            if cs.h:
                trace.max_penetration = max(trace.max_penetration, float(-min(cs.positions[1::2].min(), 0.0)))
        kin_end = Kinematics(model, q)
        z_pelvis = kin_end.origin[base][1]
        if not (z_lo <= z_pelvis <= z_hi) or not np.all(np.isfinite(q)):
            trace.fell = True
            trace.fall_time = (tick + 1) * cfg.dt_ctrl
            break

        # phase schedule; late in swing, ground contact ends the step early
        tick_in_phase += 1
        touched = False
        if single and tick_in_phase >= n_ss // 2:
            foot = model.feet[swing]
            touched = min(kin_end.point(foot.body, foot.heel)[1], kin_end.point(foot.body, foot.toe)[1]) <= 0.0
        if single and (tick_in_phase >= n_ss or touched):
            kin = Kinematics(model, q, v)
            p_pre, L_pre = rom_estimate(model, kin, stance)
            u_real = kin.point(model.feet[swing].body)[0] - kin.point(model.feet[stance].body)[0]
            com_x = kin.com()[0]
            t_imp = (tick + 1) * cfg.dt_ctrl
            trace.steps.append(WalkStep(step, t_imp, stance, u_cmd, u_real, (p_pre, L_pre), com_x,
                                        (com_x - com_prev) / timing.period, cfg.profile.at(t_imp).v_x_des))
            com_prev = com_x
            refs[swing] = _contact_refs(model, kin, swing)
            phase = ("DS-left-to-right" if stance == "left" else "DS-right-to-left") if n_ds else f"SS-{swing}"
            D, _ = kin.dynamics()
            v = impact_map(model, D, v, build_constraints(model, q, _mode_for(phase), None, cfg.mu, kin)).v_post
            if not n_ds:
                stance, swing = swing, stance
                snapshot = None
            tick_in_phase = 0
            step += 1
        elif not single and tick_in_phase >= n_ds:
            stance, swing = swing, stance
            phase = f"SS-{stance}"
            snapshot = None
            tick_in_phase = 0
    trace.wall_time = _time.perf_counter() - wall0
    return trace
