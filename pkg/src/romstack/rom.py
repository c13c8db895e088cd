"""Linear inverted pendulum flows and step-to-step maps for the LIP planner family.

All quantities are for a single horizontal axis. The state is the CoM position
``p`` relative to the stance pivot and the mass-normalized angular momentum
``L`` about that pivot, so the single-support dynamics are

    d/dt [p, L] = [[0, 1/z0], [g, 0]] [p, L].
"""

from dataclasses import dataclass
import math
from typing import NamedTuple

import numpy as np

from romstack._validation import check_finite, check_nonneg, check_positive
from romstack.linalg import expm, expm_with_integral

MODELS = ("ALIP", "HLIP", "MLIP", "DCM")


@dataclass(frozen=True)
class LipParams:
    z0: float
    g: float = 9.81

    def __post_init__(self):
        check_positive("z0", self.z0)
        check_positive("g", self.g)

    @property
    def lam(self):
        return math.sqrt(self.g / self.z0)


@dataclass(frozen=True)
class GaitTiming:
    t_ss: float
    t_ds: float = 0.0

    def __post_init__(self):
        check_positive("t_ss", self.t_ss)
        check_nonneg("t_ds", self.t_ds)

    @property
    def period(self):
        return self.t_ss + self.t_ds


class RomState(NamedTuple):
    p: float
    L: float


class RomStateZ(NamedTuple):
    p: float
    L: float
    p_zmp: float


@dataclass(frozen=True)
class S2SMap:
    """Discrete step-to-step system ``x_{k+1} = a x_k + b u_k``."""

    a: np.ndarray
    b: np.ndarray
    model: str

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1, 1)
        if a.shape[0] != a.shape[1] or a.shape[0] != b.shape[0]:
            raise ValueError(f"inconsistent S2S dimensions {a.shape} and {b.shape}")
        if a.shape[0] not in (1, 2, 3):
            raise ValueError("S2S state dimension must be 1, 2 or 3")
        if self.model not in MODELS:
            raise ValueError(f"unknown model tag {self.model!r}")
        check_finite("a", a)
        check_finite("b", b)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n(self):
        return self.a.shape[0]

    def step(self, x, u):
        x = np.asarray(x, dtype=float).reshape(-1)
        return self.a @ x + self.b[:, 0] * float(u)


def _state(x):
    arr = check_finite("state", x).reshape(-1)
    if arr.shape[0] != 2:
        raise ValueError(f"expected a (p, L) state, got shape {arr.shape}")
    return arr


def a_ss(params):
    return np.array([[0.0, 1.0 / params.z0], [params.g, 0.0]])


def a_ds(params):
    return np.array([[0.0, 1.0 / params.z0], [0.0, 0.0]])


B_DELTA = np.array([[-1.0], [0.0]])


def ss_transition(params, dt):
    """Closed-form ``exp(A_SS dt)``."""
    lam = params.lam
    c, s = math.cosh(lam * dt), math.sinh(lam * dt)
    zl = params.z0 * lam
    return np.array([[c, s / zl], [zl * s, c]])


def ds_transition(params, dt):
    return np.array([[1.0, dt / params.z0], [0.0, 1.0]])


def ss_flow(params, x, dt):
    """Exact single-support flow of the LIP over ``dt`` seconds."""
    dt = check_nonneg("dt", dt)
    return RomState(*(ss_transition(params, dt) @ _state(x)))


def ds_flow(params, x, dt):
    """Double-support flow under the constant-CoM-velocity assumption."""
    dt = check_nonneg("dt", dt)
    return RomState(*(ds_transition(params, dt) @ _state(x)))


def impact_update(x, u_sw):
    """Re-express the state about the new stance pivot placed at ``u_sw``."""
    p, L = _state(x)
    return RomState(p - float(u_sw), L)


def predict_preimpact(params, x, t_remaining):
    """Predicted pre-impact state after ``t_remaining`` seconds of single support."""
    return ss_flow(params, x, t_remaining)


def s2s_hlip(params, timing):
    """H-LIP step-to-step map between consecutive pre-impact states.

    The step is double support, impact, then single support, so the state
    matrix is the product ``exp(A_SS T_SS) exp(A_DS T_DS)`` (the two generators
    do not commute, so the exponent is not summed).
    """
    e_ss = ss_transition(params, timing.t_ss)
    e_ds = ds_transition(params, timing.t_ds)
    return S2SMap(e_ss @ e_ds, e_ss @ B_DELTA, "HLIP")


def mlip_ct(params):
    """Continuous-time MLIP matrices for the state ``(p, L, p_zmp)``."""
    g, z0 = params.g, params.z0
    a = np.array([[0.0, 1.0 / z0, 0.0], [g, 0.0, -g], [0.0, 0.0, 0.0]])
    b = np.array([[0.0], [0.0], [1.0]])
    return a, b


def mlip_ds_input_column(params, t_ds):
    """Effect of one unit of step length on the state across double support.

    During double support the ZMP travels from the old pivot to the new foot at
    the constant rate ``u / T_DS``, so the forced response is
    ``(1 / T_DS) int_0^T_DS exp(A_ct s) ds B_ct``. At ``T_DS = 0`` this is the
    limiting value: an instantaneous ZMP transfer of ``u`` with no CoM effect.
    """
    a, b = mlip_ct(params)
    if t_ds == 0.0:
        return np.array([0.0, 0.0, 1.0])
    _, integral = expm_with_integral(a, b, t_ds)
    return integral[:, 0] / t_ds


def s2s_mlip(params, timing, zmp_policy="flat-foot"):
    """Flat-foot MLIP step-to-step map on ``(p, L, p_zmp)``.

    The ZMP is held during single support and ramps linearly to the new foot
    during double support; the impact shifts both ``p`` and ``p_zmp`` by ``-u``.
    """
    if zmp_policy != "flat-foot":
        raise ValueError(f"unsupported ZMP policy {zmp_policy!r}")
    a_ct, _ = mlip_ct(params)
    e_ss = expm(a_ct * timing.t_ss)
    e_ds = expm(a_ct * timing.t_ds) if timing.t_ds > 0.0 else np.eye(3)
    g_ds = mlip_ds_input_column(params, timing.t_ds)
    b_imp = np.array([-1.0, 0.0, -1.0])
    return S2SMap(e_ss @ e_ds, e_ss @ (g_ds + b_imp), "MLIP")


def reduce_mlip(mlip_map):
    """Restrict a flat-foot MLIP map to ``(p, L)`` with the SS ZMP pinned at the pivot.

    The ZMP coordinate is an uncontrollable integrator (eigenvalue exactly 1),
    so fixed points and gains are synthesized on this 2-state restriction.
    """
    if mlip_map.n != 3:
        raise ValueError("reduce_mlip expects a 3-state MLIP map")
    return S2SMap(mlip_map.a[:2, :2], mlip_map.b[:2], "MLIP")


def dcm_matrix(params):
    """Coordinate change ``(p, L) -> (p, xi)``."""
    return np.array([[1.0, 0.0], [1.0, 1.0 / (params.lam * params.z0)]])


def dcm_transform(params, x):
    p, L = _state(x)
    return p, p + L / (params.lam * params.z0)


def dcm_inverse(params, p, xi):
    return RomState(float(p), (float(xi) - float(p)) * params.lam * params.z0)


def dcm_dynamics(params):
    """SS system matrix in ``(p, xi)`` coordinates: ``T A_SS T^-1``."""
    t = dcm_matrix(params)
    return t @ a_ss(params) @ np.linalg.inv(t)


def s2s_dcm(params, timing):
    """Scalar DCM step-to-step map including a linear-ZMP double support."""
    lam = params.lam
    t_ss, t_ds = timing.t_ss, timing.t_ds
    a = math.exp(lam * (t_ss + t_ds))
    if t_ds > 0.0:
        b = -math.exp(lam * t_ss) * math.expm1(lam * t_ds) / (lam * t_ds)
    else:
        b = -math.exp(lam * t_ss)
    return S2SMap(np.array([[a]]), np.array([[b]]), "DCM")


def orbital_energy(params, x):
    """First integral of the SS flow: ``L^2 / (2 z0^2) - g p^2 / (2 z0)``."""
    p, L = _state(x)
    return L * L / (2.0 * params.z0**2) - params.g * p * p / (2.0 * params.z0)
