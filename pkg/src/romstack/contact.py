"""Holonomic foot contacts, the multi-point force to wrench map, and point-force feasibility."""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from romstack.rigid_body import FootGeometry, Kinematics

FOOT_STATES = ("swing", "line", "plane")


@dataclass(frozen=True)
class ContactMode:
    """Per-foot contact state, e.g. ``ContactMode({"left": "line", "right": "swing"})``."""

    feet: dict = field(default_factory=dict)

    def __post_init__(self):
        for side, state in self.feet.items():
            if state not in FOOT_STATES:
                raise ValueError(f"foot {side!r}: unknown contact state {state!r}")

    @classmethod
    def single(cls, stance, swing):
        return cls({stance: "line", swing: "swing"})

    @classmethod
    def double(cls, *sides):
        return cls({s: "line" for s in sides})

    @property
    def active(self):
        return tuple(s for s, st in self.feet.items() if st != "swing")

    def __hash__(self):
        return hash(tuple(sorted(self.feet.items())))


@dataclass
class ConstraintSet:
    """Stacked point constraints; row pairs are (x, z) of one contact point."""

    J_hol: np.ndarray
    jdot_v: np.ndarray
    positions: np.ndarray
    points: tuple  # (side, label) per contact point
    A_grf: np.ndarray
    b_grf: np.ndarray

    @property
    def h(self):
        return self.J_hol.shape[0]

    @property
    def n_points(self):
        return len(self.points)

    def rank(self, rtol=1e-10):
        if self.h == 0:
            return 0
        s = np.linalg.svd(self.J_hol, compute_uv=False)
        return int(np.sum(s > rtol * max(1.0, s[0])))


def contact_points(model, mode):
    """``[(side, label, body, local_point)]`` for the active sole points."""
    pts = []
    for side in mode.active:
        if mode.feet[side] == "plane":
            raise ValueError("plane (3-point) contact needs a 3D foot; planar feet support line contact only")
        foot = model.feet[side]
        pts.append((side, "heel", foot.body, foot.heel))
        pts.append((side, "toe", foot.body, foot.toe))
    return pts


def build_constraints(model, q, mode, v=None, mu=0.8, kin=None):
    """Stack (x, z) point Jacobians of every active sole point.

    With no active contacts the set is empty (h = 0). ``v`` is needed for the
    acceleration bias ``Jdot v``; it is zero otherwise.
    """
    kin = kin if kin is not None else Kinematics(model, q, v)
    pts = contact_points(model, mode)
    n = model.n
    if not pts:
        return ConstraintSet(np.zeros((0, n)), np.zeros(0), np.zeros(0), (), np.zeros((0, 0)), np.zeros(0))
    pos, J, jd = kin.points_state([p[2] for p in pts], [p[3] for p in pts])
    A, b = friction_zmp_constraints(len(pts), mu)
    return ConstraintSet(
        J.reshape(-1, n), jd.reshape(-1), pos.reshape(-1), tuple((s, lab) for s, lab, _, _ in pts), A, b
    )


def friction_zmp_constraints(n_points, mu):
    """Planar pyramid per point on forces ordered ``(f_x, f_z)``.

    Rows: ``-f_z <= 0``, ``f_x - mu f_z <= 0``, ``-f_x - mu f_z <= 0``. Keeping
    every point force unilateral is what keeps the resultant ZMP on the sole.
    """
    if isinstance(n_points, ContactMode):
        n_points = 2 * len(n_points.active)
    if not mu > 0.0:
        raise ValueError("friction coefficient must be positive")
    A = _friction_rows(int(n_points), float(mu)).copy()
    return A, np.zeros(3 * n_points)


@lru_cache(maxsize=32)
def _friction_rows(n_points, mu):
    block = np.array([[0.0, -1.0], [1.0, -mu], [-1.0, -mu]])
    return np.kron(np.eye(n_points), block)


def resultant_zmp(point_x, forces):
    """Ground-level centre of pressure of planar point forces ``[(f_x, f_z), ...]``."""
    fz = np.asarray(forces, dtype=float).reshape(-1, 2)[:, 1]
    total = fz.sum()
    if total <= 0.0:
        raise ValueError("no net normal force")
    return float(np.asarray(point_x, dtype=float) @ fz / total)


# --- 3D multi-point wrench map -----------------------------------------------

def sole_points(geom):
    """Sole-frame locations of the left-front, right-front and mid-back points."""
    return {
        "LF": np.array([geom.l_F, geom.w, 0.0]),
        "RF": np.array([geom.l_F, -geom.w, 0.0]),
        "MB": np.array([-geom.l_B, 0.0, 0.0]),
    }


def wrench_map(geom):
    """6 x 6 map from ``(f_LF,x, f_LF,y, f_LF,z, f_RF,x, f_RF,z, f_MB,z)`` to ``(f, m)``.

    Moments are taken about the sole origin with LF, RF at ``x = +l_F`` and MB
    at ``x = -l_B``. The moment rows follow ``m = sum r_i x f_i``.
    """
    if not isinstance(geom, FootGeometry):
        geom = FootGeometry(*geom)
    w, lb, lf = geom.w, geom.l_B, geom.l_F
    return np.array([
        [1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0, 1.0, 1.0],
        [0.0, 0.0, w, 0.0, -w, 0.0],
        [0.0, 0.0, -lf, 0.0, -lf, lb],
        [-w, lf, 0.0, w, 0.0, 0.0],
    ])


def wrench_map_as_printed(geom):
    """The published matrix, kept for comparison with :func:`wrench_map`.

    It equals the cross-product wrench only for LF, RF at ``x = -l_B`` and MB at
    ``x = -l_F``, i.e. all three points behind the moment reference.
    """
    w, lb, lf = geom.w, geom.l_B, geom.l_F
    return np.array([
        [1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0, 1.0, 1.0],
        [0.0, 0.0, w, 0.0, -w, 0.0],
        [0.0, 0.0, lb, 0.0, lb, lf],
        [-w, -lb, 0.0, w, 0.0, 0.0],
    ])


def point_forces_to_wrench(points, forces):
    """Brute-force ``(sum f_i, sum r_i x f_i)``."""
    f_tot = np.zeros(3)
    m_tot = np.zeros(3)
    for r, f in zip(points, forces):
        f_tot += f
        m_tot += np.cross(r, f)
    return np.concatenate([f_tot, m_tot])
