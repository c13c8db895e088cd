"""Output embedding: planner results to continuous task-space references.

SS outputs, in order: CoM height above the stance sole, pelvis pitch, swing
ankle x and z relative to the stance ankle, swing foot pitch. In DS only the
first two are active (both feet are held by contact constraints).
"""

from dataclasses import dataclass, field
from math import comb
from typing import NamedTuple

import numpy as np

from romstack.rigid_body import Kinematics

OUTPUT_NAMES = ("z_com", "pitch", "swing_x", "swing_z", "swing_pitch", "com_x")
N_OUTPUTS = len(OUTPUT_NAMES)
SS_PHASES = ("SS-left", "SS-right")
DS_PHASES = ("DS-left-to-right", "DS-right-to-left")
PHASES = SS_PHASES + DS_PHASES


def phase_feet(phase):
    """``(stance, other)`` for SS; ``(new stance, trailing foot)`` for DS."""
    if phase == "SS-left":
        return "left", "right"
    if phase == "SS-right":
        return "right", "left"
    if phase == "DS-left-to-right":
        return "right", "left"
    if phase == "DS-right-to-left":
        return "left", "right"
    raise ValueError(f"unknown phase {phase!r}")


def is_single_support(phase):
    if phase not in PHASES:
        raise ValueError(f"unknown phase {phase!r}")
    return phase in SS_PHASES


@dataclass(frozen=True)
class OutputSpec:
    """Per-output weights and PD gains, ordered as :data:`OUTPUT_NAMES`."""

    z0: float
    weights: tuple = (1.0, 1.0, 10.0, 10.0, 10.0, 1.0)
    kp: tuple = (100.0,) * 6
    kd: tuple = (20.0,) * 6
    z_apex: float = 0.08

    def __post_init__(self):
        for name in ("weights", "kp", "kd"):
            val = tuple(float(v) for v in getattr(self, name))
            if len(val) != len(OUTPUT_NAMES):
                raise ValueError(f"{name} needs {len(OUTPUT_NAMES)} entries")
            object.__setattr__(self, name, val)
        if min(self.weights) <= 0.0:
            raise ValueError("output weights must be positive")
        if min(self.kp) < 0.0 or min(self.kd) < 0.0:
            raise ValueError("output gains must be non-negative")
        if not self.z0 > 0.0:
            raise ValueError("z0 must be positive")

    def active(self, phase):
        """SS: height, pitch and the swing foot. DS: height, pitch and CoM x, which
        together fix the three degrees of freedom both pinned feet leave free."""
        return np.arange(5) if is_single_support(phase) else np.array([0, 1, 5])


# --- Bezier curves -----------------------------------------------------------

@dataclass(frozen=True)
class BezierCurve:
    points: tuple
    duration: float

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(float(p) for p in self.points))
        if len(self.points) < 1:
            raise ValueError("a Bezier curve needs at least one control point")
        if not self.duration > 0.0:
            raise ValueError("Bezier duration must be positive")

    @property
    def degree(self):
        return len(self.points) - 1


class BezierSample(NamedTuple):
    value: float
    rate: float
    accel: float
    clamped: bool


def _casteljau(points, s):
    pts = list(points)
    for r in range(1, len(pts)):
        pts = [(1.0 - s) * a + s * b for a, b in zip(pts[:-1], pts[1:])]
    return pts[0]


def bezier_eval(curve, s):
    """Value and time derivatives at normalized phase ``s``; out-of-range ``s`` is clamped."""
    clamped = not (0.0 <= s <= 1.0)
    s = min(max(float(s), 0.0), 1.0)
    p = np.asarray(curve.points)
    d = curve.degree
    val = _casteljau(p, s)
    if d >= 1:
        d1 = d * np.diff(p)
        rate = _casteljau(d1, s) / curve.duration
    else:
        rate = 0.0
    if d >= 2:
        d2 = d * (d - 1) * np.diff(p, 2)
        acc = _casteljau(d2, s) / curve.duration**2
    else:
        acc = 0.0
    return BezierSample(float(val), float(rate), float(acc), clamped)


def quintic_from_state(x0, v0, a0, x1, duration):
    """Degree-5 curve from (x0, v0, a0) to rest at x1 over ``duration``."""
    p1 = x0 + v0 * duration / 5.0
    p2 = 2.0 * p1 - x0 + a0 * duration**2 / 20.0
    return BezierCurve((x0, p1, p2, x1, x1, x1), duration)


def swing_height_curve(z_liftoff, z_apex, duration):
    """Clamped degree-5 lift curve: zero end velocity, apex ``z_apex`` at mid-step."""
    # value at s = 1/2 is (6 z_liftoff + 20 a) / 32
    a = (z_apex - 6.0 * z_liftoff / 32.0) / (20.0 / 32.0)
    return BezierCurve((z_liftoff, z_liftoff, a, a, 0.0, 0.0), duration)


# --- desired outputs ---------------------------------------------------------

@dataclass(frozen=True)
class SwingSnapshot:
    """Swing references anchored at ``t_anchor`` (liftoff, or the last re-anchor)."""

    t_anchor: float = 0.0
    x: tuple = (0.0, 0.0, 0.0)  # swing-x position, rate, acceleration at the anchor
    z_liftoff: float = 0.0

    @classmethod
    def at_liftoff(cls, swing_x, swing_z=0.0):
        return cls(0.0, (float(swing_x), 0.0, 0.0), float(swing_z))


class DesiredOutputs(NamedTuple):
    y: np.ndarray
    dy: np.ndarray
    ddy: np.ndarray
    active: np.ndarray


def _swing_x(snapshot, u_sw, t, t_ss):
    remaining = t_ss - snapshot.t_anchor
    if remaining <= 1e-9:
        return BezierSample(float(u_sw), 0.0, 0.0, False)
    curve = quintic_from_state(*snapshot.x, float(u_sw), remaining)
    return bezier_eval(curve, (t - snapshot.t_anchor) / remaining)


def build_desired_outputs(planner_out, phase, t_in_phase, spec, snapshot, t_ss, ds_entry=(0.0, 0.0)):
    """Desired (y, dy, ddy) for every output; ``active`` lists the rows in use.

    The swing-x curve runs from the snapshot anchor state to the current
    target ``planner_out.u_sw_x`` and is rebuilt on every call. In DS the CoM
    keeps the velocity it had on entering the phase: ``ds_entry = (x, xdot)``.
    """
    y = np.zeros(N_OUTPUTS)
    dy = np.zeros(N_OUTPUTS)
    ddy = np.zeros(N_OUTPUTS)
    y[0] = spec.z0
    active = spec.active(phase)
    if is_single_support(phase):
        t = min(max(float(t_in_phase), 0.0), t_ss)
        sx = _swing_x(snapshot, planner_out.u_sw_x, t, t_ss)
        sz = bezier_eval(swing_height_curve(snapshot.z_liftoff, spec.z_apex, t_ss), t / t_ss)
        y[2:4] = sx.value, sz.value
        dy[2:4] = sx.rate, sz.rate
        ddy[2:4] = sx.accel, sz.accel
    else:
        x0, v0 = ds_entry
        y[5] = x0 + v0 * max(float(t_in_phase), 0.0)
        dy[5] = v0
    return DesiredOutputs(y, dy, ddy, active)


def retarget_snapshot(snapshot, t_in_phase, desired):
    """Re-anchor the swing-x curve at the current desired state.

    Later target changes then bend only the remaining part of the curve, so the
    reference stays continuous in position, rate and acceleration.
    """
    return SwingSnapshot(
        float(t_in_phase), (desired.y[2], desired.dy[2], desired.ddy[2]), snapshot.z_liftoff
    )


# --- actual outputs ----------------------------------------------------------

class ActualOutputs(NamedTuple):
    y: np.ndarray
    dy: np.ndarray
    J: np.ndarray
    jdot_v: np.ndarray


def sole_point(foot):
    """Ground point below the ankle in the foot frame."""
    return (0.0, foot.heel[1])


def compute_actual_outputs(model, q, v, phase, kin=None):
    """Every output with its Jacobian and ``Jdot v``.

    Rows are computed for every phase; callers select ``spec.active(phase)``.
    """
    kin = kin if kin is not None else Kinematics(model, q, v)
    stance, other = phase_feet(phase)
    st, sw = model.feet[stance], model.feet[other]
    n = model.n
    J = np.zeros((N_OUTPUTS, n))
    jd = np.zeros(N_OUTPUTS)
    y = np.zeros(N_OUTPUTS)

    pivot = sole_point(st)
    com = kin.com()
    J_com = kin.com_jacobian()
    J_piv = kin.point_jacobian(st.body, pivot)
    y[0] = com[1] - kin.point(st.body, pivot)[1]
    J[0] = J_com[1] - J_piv[1]

    base = model.body_index[model.link_names[0]]
    y[1] = kin.theta[base]
    J[1, base] = 1.0  # base pitch is the root revolute coordinate

    p_st = kin.point(st.body)
    p_sw = kin.point(sw.body)
    J_st = kin.point_jacobian(st.body)
    J_sw = kin.point_jacobian(sw.body)
    y[2:4] = p_sw - p_st
    J[2:4] = J_sw[:2] - J_st[:2]
    y[4] = kin.theta[model.body(sw.body)]
    J[4] = J_sw[2]
    y[5] = com[0] - p_st[0]
    J[5] = J_com[0] - J_st[0]

    if kin.v is not None:
        com_bias = kin.com_jdot_v()
        st_bias = kin.jdot_v(st.body)[:2]
        jd[0] = com_bias[1] - kin.jdot_v(st.body, pivot)[1]
        jd[2:4] = kin.jdot_v(sw.body)[:2] - st_bias
        jd[5] = com_bias[0] - st_bias[0]
        dy = J @ kin.v
    else:
        dy = np.zeros(N_OUTPUTS)
    return ActualOutputs(y, dy, J, jd)


# --- tasks -------------------------------------------------------------------

def target_acceleration(y_err, y_err_dot, kp, kd):
    """Exponential-tracking acceleration ``-Kp y_err - Kd y_err_dot`` (diagonal gains)."""
    return -np.asarray(kp, dtype=float) * np.asarray(y_err, dtype=float) - np.asarray(
        kd, dtype=float
    ) * np.asarray(y_err_dot, dtype=float)


@dataclass
class TaskSet:
    y_err: np.ndarray
    y_err_dot: np.ndarray
    J_y: np.ndarray
    jdot_v: np.ndarray
    y_tgt_ddot: np.ndarray
    y_des_ddot: np.ndarray = None
    weights: np.ndarray = None
    names: tuple = field(default_factory=tuple)

    def __post_init__(self):
        k = self.J_y.shape[0]
        if self.y_des_ddot is None:
            self.y_des_ddot = np.zeros(k)
        if self.weights is None:
            self.weights = np.ones(k)
        for name in ("y_err", "y_err_dot", "jdot_v", "y_tgt_ddot", "y_des_ddot", "weights"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if arr.shape[0] != k:
                raise ValueError(f"task field {name} has {arr.shape[0]} rows, J_y has {k}")
            setattr(self, name, arr)
        if not np.all(np.isfinite(self.y_err)):
            raise ValueError("task error is not finite")

    @property
    def n_tasks(self):
        return self.J_y.shape[0]

    def reference_acceleration(self):
        """``ydd_d + ydd_t``: what ``J qdd + Jdot v`` should equal."""
        return self.y_des_ddot + self.y_tgt_ddot

    @classmethod
    def empty(cls, n):
        z = np.zeros(0)
        return cls(z, z, np.zeros((0, n)), z, z)


def build_task_set(actual, desired, spec, feedback=True):
    """Stack the active outputs into a :class:`TaskSet`."""
    idx = desired.active
    err = actual.y[idx] - desired.y[idx]
    err_dot = actual.dy[idx] - desired.dy[idx]
    kp = np.asarray(spec.kp)[idx]
    kd = np.asarray(spec.kd)[idx]
    tgt = target_acceleration(err, err_dot, kp, kd) if feedback else np.zeros(len(idx))
    return TaskSet(
        err, err_dot, actual.J[idx], actual.jdot_v[idx], tgt, desired.ddy[idx],
        np.asarray(spec.weights)[idx], tuple(OUTPUT_NAMES[i] for i in idx),
    )
