"""Foot-placement planners built on the LIP step-to-step maps.

Four planners share one interface: ALIP (momentum regulation, single support
only), H-LIP (constant-velocity double support), MLIP (linear-ZMP double
support) and DCM (scalar unstable-mode map). Every placement is expressed
relative to the current stance foot.
"""

from dataclasses import dataclass, field
from functools import lru_cache
import math

import numpy as np

from romstack._validation import check_finite, check_nonneg
from romstack import rom
from romstack.rom import GaitTiming, LipParams, RomState, S2SMap

PLANNER_KINDS = ("ALIP", "HLIP", "MLIP", "DCM")
GAIN_KINDS = ("deadbeat", "lqr")


@dataclass(frozen=True)
class VelocityCommand:
    v_x_des: float = 0.0
    v_y_des: float = 0.0
    step_width: float = 0.0

    def __post_init__(self):
        check_nonneg("step_width", self.step_width)


@dataclass(frozen=True)
class FixedPoint:
    x_star: np.ndarray
    u_star: float


@dataclass(frozen=True)
class FeedbackGain:
    k: np.ndarray
    kind: str = "custom"
    alpha: float = 0.0


@dataclass(frozen=True)
class PlannerOutput:
    u_sw_x: float
    u_sw_y: float
    t_to_impact: float
    predicted_preimpact: tuple


@dataclass(frozen=True)
class PlannerConfig:
    kind: str = "HLIP"
    gain: str = "deadbeat"
    q_weight: float = 1.0
    r_weight: float = 1.0
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in PLANNER_KINDS:
            raise ValueError(f"unknown planner kind {self.kind!r}")
        if self.gain not in GAIN_KINDS:
            raise ValueError(f"unknown gain kind {self.gain!r}")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if self.q_weight < 0.0 or self.r_weight <= 0.0:
            raise ValueError("LQR weights must satisfy Q >= 0 and R > 0")


# --- ALIP -----------------------------------------------------------------


def alip_desired_momentum(params, v_des):
    return params.z0 * float(v_des)


def alip_foot_placement(params, timing, x_now, t_in_step, v_des, alpha=0.0, L_des=None):
    """ALIP placement that steers the next pre-impact momentum.

    With ``alpha = 0`` the next pre-impact momentum equals ``L_des`` (deadbeat);
    otherwise its error shrinks by the factor ``alpha`` each step.
    """
    T = timing.t_ss
    if T <= 0.0:
        raise ValueError("ALIP placement needs a positive single-support duration")
    t_in_step = float(t_in_step)
    if not 0.0 <= t_in_step <= T + 1e-12:
        raise ValueError(f"t_in_step={t_in_step} outside [0, {T}]")
    p_hat, L_hat = rom.predict_preimpact(params, x_now, max(T - t_in_step, 0.0))
    if L_des is None:
        L_des = alip_desired_momentum(params, v_des)
    L_target = L_des + alpha * (L_hat - L_des)
    lam = params.lam
    zls = params.z0 * lam * math.sinh(lam * T)
    return (math.cosh(lam * T) * L_hat + zls * p_hat - L_target) / zls


# --- S2S feedback -----------------------------------------------------------


def fixed_point(s2s, timing, v_des):
    """Periodic pre-impact state for steady walking at ``v_des``."""
    u_star = float(v_des) * timing.period
    n = s2s.n
    eye_minus_a = np.eye(n) - s2s.a
    eig = np.linalg.eigvals(s2s.a)
    near_one = np.abs(eig - 1.0)
    if near_one.min() < 1e-10:
        bad = eig[np.argmin(near_one)]
        raise np.linalg.LinAlgError(
            f"I - A is singular: {s2s.model} map has an eigenvalue at 1 ({bad:.12g})"
        )
    x_star = np.linalg.solve(eye_minus_a, s2s.b[:, 0] * u_star)
    return FixedPoint(x_star, u_star)


def controllability_matrix(s2s):
    cols = [s2s.b]
    for _ in range(s2s.n - 1):
        cols.append(s2s.a @ cols[-1])
    return np.hstack(cols)


def deadbeat_gain(s2s):
    """Gain placing every eigenvalue of ``A + B k`` at zero (Ackermann)."""
    n = s2s.n
    if n == 1:
        b = s2s.b[0, 0]
        if b == 0.0:
            raise np.linalg.LinAlgError("uncontrollable scalar map (b = 0)")
        return FeedbackGain(np.array([[-s2s.a[0, 0] / b]]), "deadbeat")
    ctrb = controllability_matrix(s2s)
    if np.linalg.matrix_rank(ctrb, tol=1e-10 * max(1.0, np.abs(ctrb).max())) < n:
        raise np.linalg.LinAlgError(f"uncontrollable {s2s.model} pair (A, B)")
    e_n = np.zeros((1, n))
    e_n[0, -1] = 1.0
    k = -e_n @ np.linalg.solve(ctrb, np.linalg.matrix_power(s2s.a, n))
    return FeedbackGain(k, "deadbeat")


def lqr_gain(s2s, q_weight=1.0, r_weight=1.0, tol=1e-12, max_iter=10_000):
    """Infinite-horizon discrete LQR gain by Riccati fixed-point iteration.

    Returns the gain and the Riccati solution ``P``.
    """
    a, b = s2s.a, s2s.b
    n = s2s.n
    q = np.atleast_2d(q_weight) * np.eye(n) if np.ndim(q_weight) == 0 else np.asarray(q_weight, float)
    r = np.atleast_2d(float(r_weight))
    if np.any(np.linalg.eigvalsh(0.5 * (q + q.T)) < -1e-12):
        raise ValueError("Q must be positive semidefinite")
    if r[0, 0] <= 0.0:
        raise ValueError("R must be positive")
    p = q.copy()
    for _ in range(max_iter):
        btp = b.T @ p
        k_lqr = np.linalg.solve(r + btp @ b, btp @ a)
        p_next = q + a.T @ p @ a - a.T @ p @ b @ k_lqr
        p_next = 0.5 * (p_next + p_next.T)
        if np.abs(p_next - p).max() <= tol * max(1.0, np.abs(p_next).max()):
            p = p_next
            break
        p = p_next
    else:
        raise RuntimeError(f"Riccati iteration did not converge in {max_iter} steps")
    k = -np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a)
    return FeedbackGain(k, "lqr"), p


def dare_residual(s2s, p, q_weight=1.0, r_weight=1.0):
    a, b = s2s.a, s2s.b
    q = q_weight * np.eye(s2s.n)
    r = np.atleast_2d(float(r_weight))
    res = p - a.T @ p @ a + a.T @ p @ b @ np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a) - q
    return float(np.abs(res).max())


def closed_loop(s2s, gain):
    return s2s.a + s2s.b @ np.atleast_2d(gain.k)


def step_feedback(s2s, fp, gain, x_hat):
    """``u = K (x_hat - x*) + u*``."""
    x_hat = check_finite("x_hat", x_hat).reshape(-1)
    if x_hat.shape[0] != s2s.n:
        raise ValueError(f"state dimension {x_hat.shape[0]} does not match map ({s2s.n})")
    return float(np.atleast_2d(gain.k)[0] @ (x_hat - fp.x_star)) + fp.u_star


def lateral_fixed_point(s2s, timing, v_y_des, step_width):
    """Period-2 lateral orbit.

    Returns ``(fp_left, fp_right)``: the pre-impact state while that foot is in
    stance and the nominal placement of the other foot relative to it. The
    placements alternate ``v_y T -/+ step_width`` so a left stance places the
    right foot on the right-hand (negative y) side.
    """
    step_width = check_nonneg("step_width", step_width)
    u_left = float(v_y_des) * timing.period - step_width
    u_right = float(v_y_des) * timing.period + step_width
    a, b = s2s.a, s2s.b[:, 0]
    n = s2s.n
    two_step = np.eye(n) - a @ a
    eig = np.linalg.eigvals(a @ a)
    if np.abs(eig - 1.0).min() < 1e-10:
        raise np.linalg.LinAlgError(f"two-step {s2s.model} map has an eigenvalue at 1")
    x_left = np.linalg.solve(two_step, a @ b * u_left + b * u_right)
    x_right = a @ x_left + b * u_left
    return FixedPoint(x_left, u_left), FixedPoint(x_right, u_right)


# --- planner synthesis ------------------------------------------------------


@dataclass(frozen=True)
class AxisSynthesis:
    """Model, gain and nominal-timing data for one planner kind."""

    kind: str
    s2s: S2SMap
    gain: FeedbackGain
    riccati: np.ndarray = field(default=None, repr=False)


@lru_cache(maxsize=128)
def synthesize(config, params, timing):
    """Build (and cache) the S2S map and feedback gain for ``config``.

    ALIP plans with the single-support-only map, matching its lack of a
    double-support model.
    """
    kind = config.kind
    if kind == "ALIP":
        s2s = rom.s2s_hlip(params, GaitTiming(timing.t_ss, 0.0))
        s2s = S2SMap(s2s.a, s2s.b, "ALIP")
    elif kind == "HLIP":
        s2s = rom.s2s_hlip(params, timing)
    elif kind == "MLIP":
        s2s = rom.reduce_mlip(rom.s2s_mlip(params, timing))
    else:
        s2s = rom.s2s_dcm(params, timing)
    riccati = None
    if config.gain == "deadbeat":
        gain = deadbeat_gain(s2s)
    else:
        gain, riccati = lqr_gain(s2s, config.q_weight, config.r_weight)
    return AxisSynthesis(kind, s2s, gain, riccati)


def _planner_state(config, params, x_hat):
    if config.kind == "DCM":
        _, xi = rom.dcm_transform(params, x_hat)
        return np.array([xi])
    return np.asarray(x_hat, dtype=float)


def _nominal(config, syn, params, timing, v_des, lateral, command, stance):
    """Fixed point (in planner coordinates) for this axis and stance."""
    if not lateral:
        if config.kind == "ALIP":
            return None
        return fixed_point(syn.s2s, timing, v_des)
    fp_left, fp_right = lateral_fixed_point(syn.s2s, timing, v_des, command.step_width)
    return fp_left if stance == "left" else fp_right


def _axis_placement(config, params, timing, x_now, t_in_step, v_des, lateral, command, stance):
    syn = synthesize(config, params, timing)
    x_hat = np.asarray(rom.predict_preimpact(params, x_now, max(timing.t_ss - t_in_step, 0.0)))
    if config.kind == "ALIP":
        L_des = None
        if lateral:
            # momentum target taken from the SS-only period-2 orbit
            ss_timing = GaitTiming(timing.t_ss, 0.0)
            fp = _nominal(config, syn, params, ss_timing, v_des, True, command, _other(stance))
            L_des = fp.x_star[1]
        return alip_foot_placement(params, timing, x_now, t_in_step, v_des, config.alpha, L_des), x_hat
    fp = _nominal(config, syn, params, timing, v_des, lateral, command, stance)
    u = step_feedback(syn.s2s, fp, syn.gain, _planner_state(config, params, x_hat))
    return u, x_hat


def _other(stance):
    return "right" if stance == "left" else "left"


def plan(config, params, timing, x_state, t_in_step, command, y_state=None, stance="left"):
    """Swing-foot touchdown targets relative to the stance foot.

    The sagittal axis uses the period-1 orbit, the lateral axis (when a
    ``y_state`` is given) the period-2 orbit keyed by the current stance foot.
    """
    t_in_step = float(t_in_step)
    if not 0.0 <= t_in_step <= timing.t_ss + 1e-12:
        raise ValueError(f"t_in_step={t_in_step} outside single support [0, {timing.t_ss}]")
    if stance not in ("left", "right"):
        raise ValueError(f"stance must be 'left' or 'right', got {stance!r}")
    u_x, xhat_x = _axis_placement(
        config, params, timing, x_state, t_in_step, command.v_x_des, False, command, stance
    )
    u_y, xhat_y = 0.0, None
    if y_state is not None:
        u_y, xhat_y = _axis_placement(
            config, params, timing, y_state, t_in_step, command.v_y_des, True, command, stance
        )
    predicted = (RomState(*xhat_x), None if xhat_y is None else RomState(*xhat_y))
    return PlannerOutput(u_x, u_y, max(timing.t_ss - t_in_step, 0.0), predicted)
