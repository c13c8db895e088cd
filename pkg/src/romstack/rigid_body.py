"""Planar (sagittal) articulated rigid-body dynamics.

Conventions: the plane is world (x, z) with z up. Angles are rotations about
+y, so a positive pitch tilts a body's +x axis downward, and a body rotation
matrix (body to world) is ``[[cos, sin], [-sin, cos]]``. Angular momentum and
moments are likewise about +y: ``cross(a, b) = a_z b_x - a_x b_z``.

Spatial vectors are 3-vectors ``(angular, linear_x, linear_z)`` expressed in
body coordinates. A floating base is modelled as two massless prismatic bodies
(world x, world z) followed by a revolute base body, so every body owns exactly
one degree of freedom and body index == velocity index.
"""

from dataclasses import dataclass, field
import math
from pathlib import Path

import numpy as np
import yaml

from romstack._validation import check_finite

JOINT_TYPES = ("px", "pz", "r")


@dataclass(frozen=True)
class FootSpec:
    body: str
    heel: tuple
    toe: tuple

    @property
    def ankle_local(self):
        return (0.0, 0.0)


@dataclass(frozen=True)
class FootGeometry:
    """3D foot sole lever arms used by the multi-point wrench map."""

    w: float
    l_B: float
    l_F: float

    def __post_init__(self):
        for name in ("w", "l_B", "l_F"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"foot geometry {name} must be positive")


@dataclass(frozen=True)
class RobotState:
    q: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        q = check_finite("q", self.q).reshape(-1).copy()
        v = check_finite("v", self.v).reshape(-1).copy()
        if q.shape != v.shape:
            raise ValueError("q and v must have the same dimension")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "v", v)


def _rot(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s], [-s, c]])


class PlanarModel:
    """Immutable planar kinematic tree with inertial data and actuation map."""

    def __init__(self, links, floating_base=True, gravity=9.81, actuated=None,
                 feet=None, foot_geometry=None, name="planar-model", nominal=None):
        self.name = name
        self.gravity = float(gravity)
        self.floating_base = bool(floating_base)
        self.link_names = [lk["name"] for lk in links]
        if len(set(self.link_names)) != len(self.link_names):
            raise ValueError("link names must be unique")
        parent, jtype, offset, axis, mass, inertia, com, length, names = [], [], [], [], [], [], [], [], []
        if self.floating_base:
            for j, (jt, ax) in enumerate((("px", (1.0, 0.0)), ("pz", (0.0, 1.0)))):
                parent.append(j - 1)
                jtype.append(jt)
                offset.append((0.0, 0.0))
                axis.append(ax)
                mass.append(0.0)
                inertia.append(0.0)
                com.append((0.0, 0.0))
                length.append(0.0)
                names.append("base_x" if jt == "px" else "base_z")
        index = {}
        for k, lk in enumerate(links):
            par = lk.get("parent")
            if par is None:
                if k != 0:
                    raise ValueError("only the first link may be the root")
                p_idx = len(parent) - 1  # z slider, or -1 (world) for a fixed base
            else:
                if par not in index:
                    raise ValueError(f"link {lk['name']!r}: parent {par!r} must be listed earlier (tree must be acyclic)")
                p_idx = index[par]
            m = float(lk["mass"])
            inert = float(lk.get("inertia", 0.0))
            if not m > 0.0:
                raise ValueError(f"link {lk['name']!r}: mass must be positive")
            if inert < 0.0:
                raise ValueError(f"link {lk['name']!r}: inertia must be non-negative")
            index[lk["name"]] = len(parent)
            parent.append(p_idx)
            jtype.append("r")
            offset.append(tuple(float(c) for c in lk.get("joint_offset", (0.0, 0.0))))
            axis.append((0.0, 0.0))
            mass.append(m)
            inertia.append(inert)
            com.append(tuple(float(c) for c in lk.get("com", (0.0, 0.0))))
            length.append(float(lk.get("length", 0.0)))
            names.append(lk.get("joint", "base_pitch" if (par is None and self.floating_base) else lk["name"] + "_joint"))
        self.parent = tuple(parent)
        self.jtype = tuple(jtype)
        self.offset = np.array(offset, dtype=float)
        self.axis = np.array(axis, dtype=float)
        self.mass = np.array(mass)
        self.inertia = np.array(inertia)
        self.com = np.array(com, dtype=float)
        self.length = np.array(length)
        self.joint_names = tuple(names)
        self.body_index = dict(index)
        self.n = len(parent)
        self.total_mass = float(self.mass.sum())
        # ancestor mask: support[i, j] = 1 when dof j moves body i
        support = np.zeros((self.n, self.n))
        for i in range(self.n):
            j = i
            while j >= 0:
                support[i, j] = 1.0
                j = self.parent[j]
        self.support = support
        self.revolute = np.array([1.0 if jt == "r" else 0.0 for jt in self.jtype])
        self.parent_or_world = np.array([p if p >= 0 else self.n for p in self.parent])
        # prismatic joints with a revolute ancestor (their axes rotate)
        self.carried_prismatic = tuple(
            j for j in range(self.n)
            if self.jtype[j] != "r" and any(self.jtype[a] == "r" for a in np.nonzero(support[j])[0] if a != j)
        )
        self._spatial_inertia = [self._body_inertia(i) for i in range(self.n)]
        if actuated is None:
            actuated = [nm for i, nm in enumerate(names) if i >= (3 if self.floating_base else 0)]
        self.actuated = tuple(actuated)
        self.B = self._selection(self.actuated)
        self.m = self.B.shape[1]
        self.feet = dict(feet or {})
        for side, foot in self.feet.items():
            if foot.body not in self.body_index:
                raise ValueError(f"foot {side!r} refers to unknown body {foot.body!r}")
        self.foot_geometry = foot_geometry
        self.nominal = dict(nominal or {})

    # --- construction helpers ------------------------------------------------

    def _body_inertia(self, i):
        m, I, (cx, cz) = self.mass[i], self.inertia[i], self.com[i]
        return np.array([
            [I + m * (cx * cx + cz * cz), m * cz, -m * cx],
            [m * cz, m, 0.0],
            [-m * cx, 0.0, m],
        ])

    def _selection(self, actuated):
        cols = []
        for nm in actuated:
            if nm not in self.joint_names:
                raise ValueError(f"unknown actuated joint {nm!r}")
            col = np.zeros(self.n)
            col[self.joint_names.index(nm)] = 1.0
            cols.append(col)
        B = np.array(cols).T if cols else np.zeros((self.n, 0))
        if cols and np.linalg.matrix_rank(B) != B.shape[1]:
            raise ValueError("actuation matrix must have full column rank")
        return B

    @classmethod
    def from_dict(cls, data):
        feet = {
            side: FootSpec(f["body"], tuple(f["heel"]), tuple(f["toe"]))
            for side, f in (data.get("feet") or {}).items()
        }
        fg = data.get("foot_geometry")
        geom = FootGeometry(fg["w"], fg["l_B"], fg["l_F"]) if fg else None
        return cls(
            data["links"],
            floating_base=data.get("floating_base", True),
            gravity=data.get("gravity", 9.81),
            actuated=data.get("actuated"),
            feet=feet,
            foot_geometry=geom,
            name=data.get("name", "planar-model"),
            nominal=data.get("nominal"),
        )

    @classmethod
    def from_yaml(cls, path):
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    # --- indexing --------------------------------------------------------------

    def body(self, body):
        if isinstance(body, str):
            if body not in self.body_index:
                raise IndexError(f"unknown body {body!r}")
            return self.body_index[body]
        body = int(body)
        if not 0 <= body < self.n or self.mass[body] == 0.0 and self.jtype[body] != "r":
            raise IndexError(f"invalid body index {body}")
        return body

    def joint_index(self, name):
        return self.joint_names.index(name)

    def check_state(self, q, v=None):
        q = check_finite("q", q).reshape(-1)
        if q.shape[0] != self.n:
            raise ValueError(f"q has dimension {q.shape[0]}, model has {self.n}")
        if v is None:
            return q
        v = check_finite("v", v).reshape(-1)
        if v.shape[0] != self.n:
            raise ValueError(f"v has dimension {v.shape[0]}, model has {self.n}")
        return q, v

    # --- spatial transforms ----------------------------------------------------

    def joint_transform(self, i, qi):
        """Motion transform from parent coordinates to body ``i`` coordinates."""
        rx, rz = self.offset[i]
        jt = self.jtype[i]
        if jt == "r":
            c, s = math.cos(qi), math.sin(qi)
        else:
            c, s = 1.0, 0.0
            rx += qi * self.axis[i, 0]
            rz += qi * self.axis[i, 1]
        return np.array([
            [1.0, 0.0, 0.0],
            [c * rz + s * rx, c, -s],
            [s * rz - c * rx, s, c],
        ])

    def motion_subspace(self, i):
        if self.jtype[i] == "r":
            return np.array([1.0, 0.0, 0.0])
        return np.array([0.0, self.axis[i, 0], self.axis[i, 1]])

    def kinematics(self, q, v=None):
        return Kinematics(self, q, v)


def crm(v):
    w, vx, vz = v
    return np.array([[0.0, 0.0, 0.0], [-vz, 0.0, w], [vx, -w, 0.0]])


def crf(v):
    return -crm(v).T


# --- dynamics ------------------------------------------------------------------


def rnea(model, q, v, a, gravity=True):
    """Recursive Newton-Euler inverse dynamics: generalized force for ``(q, v, a)``."""
    q, v = model.check_state(q, v)
    a = check_finite("a", a).reshape(-1)
    n = model.n
    g = model.gravity if gravity else 0.0
    X = [None] * n
    vel = [None] * n
    acc = [None] * n
    f = [None] * n
    root_acc = np.array([0.0, 0.0, g])
    for i in range(n):
        X[i] = model.joint_transform(i, q[i])
        S = model.motion_subspace(i)
        p = model.parent[i]
        vp = np.zeros(3) if p < 0 else vel[p]
        ap = root_acc if p < 0 else acc[p]
        vel[i] = X[i] @ vp + S * v[i]
        acc[i] = X[i] @ ap + S * a[i] + crm(vel[i]) @ S * v[i]
        Ii = model._spatial_inertia[i]
        f[i] = Ii @ acc[i] + crf(vel[i]) @ (Ii @ vel[i])
    tau = np.zeros(n)
    for i in range(n - 1, -1, -1):
        tau[i] = model.motion_subspace(i) @ f[i]
        p = model.parent[i]
        if p >= 0:
            f[p] = f[p] + X[i].T @ f[i]
    return tau


def mass_matrix(model, q):
    """Joint-space inertia matrix by the composite-rigid-body algorithm."""
    q = model.check_state(q)
    n = model.n
    X = [model.joint_transform(i, q[i]) for i in range(n)]
    Ic = [I.copy() for I in model._spatial_inertia]
    for i in range(n - 1, -1, -1):
        p = model.parent[i]
        if p >= 0:
            Ic[p] = Ic[p] + X[i].T @ Ic[i] @ X[i]
    D = np.zeros((n, n))
    for i in range(n):
        S = model.motion_subspace(i)
        F = Ic[i] @ S
        D[i, i] = S @ F
        j = i
        while model.parent[j] >= 0:
            F = X[j].T @ F
            j = model.parent[j]
            D[i, j] = D[j, i] = F @ model.motion_subspace(j)
    return D


def bias_forces(model, q, v):
    """Coriolis, centrifugal and gravity terms: inverse dynamics at zero acceleration."""
    return rnea(model, q, v, np.zeros(model.n))


def gravity_vector(model, q):
    q = model.check_state(q)
    return rnea(model, q, np.zeros(model.n), np.zeros(model.n))


def forward_dynamics(model, q, v, tau_gen):
    """Unconstrained forward dynamics for a generalized force ``tau_gen``."""
    D = mass_matrix(model, q)
    return np.linalg.solve(D, tau_gen - bias_forces(model, q, v))


def kinetic_energy(model, q, v):
    v = np.asarray(v, dtype=float)
    return 0.5 * v @ mass_matrix(model, q) @ v


def potential_energy(model, q):
    kin = Kinematics(model, q)
    return model.gravity * float(model.mass @ kin.com_positions()[:, 1])


# --- kinematics -----------------------------------------------------------------


class Kinematics:
    """World poses (and optionally velocities) of every body for one configuration.

    Also provides the vectorized Jacobian-projection form of the dynamics,
    ``D = sum_i m_i Jc_i^T Jc_i + I_i Jw_i^T Jw_i``, used on the simulation hot path.
    """

    def __init__(self, model, q, v=None):
        self.model = model
        q = model.check_state(q)
        self.q = q
        n = model.n
        S = model.support
        rev = model.revolute
        pidx = model.parent_or_world  # parent index, world mapped to n
        # world angle: sum of ancestor revolute coordinates
        theta = S @ (rev * q)
        th_p = np.append(theta, 0.0)[pidx]
        c, s = np.cos(th_p), np.sin(th_p)
        loc = model.offset + (1.0 - rev)[:, None] * q[:, None] * model.axis
        disp = np.column_stack([c * loc[:, 0] + s * loc[:, 1], -s * loc[:, 0] + c * loc[:, 1]])
        self.theta = theta
        self.origin = S @ disp
        self._disp = disp
        self._axw = np.column_stack([
            c * model.axis[:, 0] + s * model.axis[:, 1], -s * model.axis[:, 0] + c * model.axis[:, 1]
        ])
        self._rev = rev
        self.v = None
        self.omega = None
        self.vorigin = None
        if v is not None:
            v = check_finite("v", v).reshape(-1)
            if v.shape[0] != n:
                raise ValueError(f"v has dimension {v.shape[0]}, model has {n}")
            self.v = v
            self.omega = S @ (rev * v)
            w_p = np.append(self.omega, 0.0)[pidx]
            pri_v = (1.0 - rev) * v
            contrib = np.column_stack([
                w_p * disp[:, 1] + pri_v * self._axw[:, 0],
                -w_p * disp[:, 0] + pri_v * self._axw[:, 1],
            ])
            self.vorigin = S @ contrib

    # --- points ---

    def point(self, body, local=(0.0, 0.0)):
        i = self.model.body(body)
        lx, lz = local
        c, s = math.cos(self.theta[i]), math.sin(self.theta[i])
        return self.origin[i] + np.array([c * lx + s * lz, -s * lx + c * lz])

    def pose(self, body, local=(0.0, 0.0)):
        i = self.model.body(body)
        return self.point(i, local), float(self.theta[i])

    def point_jacobian(self, body, local=(0.0, 0.0)):
        """3 x n Jacobian of the point's (x, z) and its body's pitch."""
        i = self.model.body(body)
        pt = self.point(i, local)
        sup = self.model.support[i]
        rev = self._rev
        J = np.empty((3, self.model.n))
        J[0] = sup * (rev * (pt[1] - self.origin[:, 1]) + (1.0 - rev) * self._axw[:, 0])
        J[1] = sup * (-rev * (pt[0] - self.origin[:, 0]) + (1.0 - rev) * self._axw[:, 1])
        J[2] = sup * rev
        return J

    def point_velocity(self, body, local=(0.0, 0.0)):
        return self.point_jacobian(body, local)[:2] @ self._need_v()

    def _need_v(self):
        if self.v is None:
            raise ValueError("velocities were not supplied")
        return self.v

    def jdot_v(self, body, local=(0.0, 0.0)):
        """Acceleration bias ``Jdot v`` of the point (x, z, pitch rows)."""
        v = self._need_v()
        i = self.model.body(body)
        vp = self.point_velocity(i, local)
        w = self.model.support[i] * self._rev * v
        out = np.zeros(3)
        out[0] = w @ (vp[1] - self.vorigin[:, 1])
        out[1] = -(w @ (vp[0] - self.vorigin[:, 0]))
        out[:2] += self._prismatic_bias(i)
        return out

    def points_state(self, bodies, locals_):
        """Batched world positions ``(k, 2)``, Jacobians ``(k, 2, n)`` and ``Jdot v`` ``(k, 2)``.

        ``Jdot v`` is zero when no velocities were supplied.
        """
        idx = np.array([self.model.body(b) for b in bodies])
        loc = np.asarray(locals_, dtype=float).reshape(-1, 2)
        th = self.theta[idx]
        c, s = np.cos(th), np.sin(th)
        pos = self.origin[idx] + np.column_stack([c * loc[:, 0] + s * loc[:, 1], -s * loc[:, 0] + c * loc[:, 1]])
        sup = self.model.support[idx]  # (k, n)
        rev = self._rev
        dx = pos[:, 1:2] - self.origin[None, :, 1]
        dz = pos[:, 0:1] - self.origin[None, :, 0]
        J = np.empty((len(idx), 2, self.model.n))
        J[:, 0] = sup * (rev * dx + (1.0 - rev) * self._axw[:, 0])
        J[:, 1] = sup * (-rev * dz + (1.0 - rev) * self._axw[:, 1])
        jd = np.zeros((len(idx), 2))
        if self.v is not None:
            vp = J @ self.v
            w = sup * (rev * self.v)
            jd[:, 0] = np.sum(w * (vp[:, 1:2] - self.vorigin[None, :, 1]), axis=1)
            jd[:, 1] = -np.sum(w * (vp[:, 0:1] - self.vorigin[None, :, 0]), axis=1)
            if self.model.carried_prismatic:
                jd += np.array([self._prismatic_bias(i) for i in idx])
        return pos, J, jd

    def _prismatic_bias(self, i):
        # prismatic axes carried by a rotating parent; zero for world-fixed base sliders
        out = np.zeros(2)
        if not self.model.carried_prismatic:
            return out
        for j in np.nonzero(self.model.support[i] * (1.0 - self._rev))[0]:
            p = self.model.parent[j]
            if p >= 0 and self.omega[p] != 0.0:
                ax = self._axw[j]
                out += self.v[j] * self.omega[p] * np.array([ax[1], -ax[0]])
        return out

    # --- whole-body quantities ---

    def com_positions(self):
        c = np.cos(self.theta)
        s = np.sin(self.theta)
        lx = self.model.com[:, 0]
        lz = self.model.com[:, 1]
        return self.origin + np.column_stack([c * lx + s * lz, -s * lx + c * lz])

    def com(self):
        m = self.model.mass
        return m @ self.com_positions() / m.sum()

    def body_com_jacobians(self):
        """Stacked (x, z, pitch) Jacobians of every body CoM: three n x n arrays."""
        cp = self.com_positions()
        S = self.model.support
        rev = self._rev
        pri = 1.0 - rev
        jx = S * (rev[None, :] * (cp[:, 1:2] - self.origin[None, :, 1]) + pri[None, :] * self._axw[None, :, 0])
        jz = S * (-rev[None, :] * (cp[:, 0:1] - self.origin[None, :, 0]) + pri[None, :] * self._axw[None, :, 1])
        jw = S * rev[None, :]
        return jx, jz, jw

    def com_jacobian(self):
        m = self.model.mass
        jx, jz, _ = self.body_com_jacobians()
        return np.vstack([m @ jx, m @ jz]) / m.sum()

    def _body_com_bias(self, jx, jz):
        v = self._need_v()
        S = self.model.support
        w = self._rev * v
        vcx, vcz = jx @ v, jz @ v
        sw = S @ w
        bx = vcz * sw - S @ (w * self.vorigin[:, 1])
        bz = -(vcx * sw - S @ (w * self.vorigin[:, 0]))
        if self.model.carried_prismatic:
            for i in range(self.model.n):
                pb = self._prismatic_bias(i)
                bx[i] += pb[0]
                bz[i] += pb[1]
        return bx, bz

    def com_jdot_v(self):
        m = self.model.mass
        jx, jz, _ = self.body_com_jacobians()
        bx, bz = self._body_com_bias(jx, jz)
        return np.array([m @ bx, m @ bz]) / m.sum()

    def com_velocity(self):
        return self.com_jacobian() @ self._need_v()

    def dynamics(self):
        """``(D, H)`` by Jacobian projection; agrees with CRBA and RNEA."""
        m, I = self.model.mass, self.model.inertia
        jx, jz, jw = self.body_com_jacobians()
        D = jx.T @ (m[:, None] * jx) + jz.T @ (m[:, None] * jz) + jw.T @ (I[:, None] * jw)
        if self.v is None:
            H = jz.T @ (m * self.model.gravity)
        else:
            bx, bz = self._body_com_bias(jx, jz)
            H = jx.T @ (m * bx) + jz.T @ (m * (bz + self.model.gravity))
        return D, H

    def angular_momentum(self, about):
        """Total angular momentum (about +y) around a fixed world point."""
        v = self._need_v()
        about = np.asarray(about, dtype=float)
        m, I = self.model.mass, self.model.inertia
        jx, jz, _ = self.body_com_jacobians()
        cp = self.com_positions()
        vcx, vcz = jx @ v, jz @ v
        rx, rz = cp[:, 0] - about[0], cp[:, 1] - about[1]
        return float(I @ self.omega + m @ (rz * vcx - rx * vcz))


def frame_kinematics(model, q, body, local_point=(0.0, 0.0)):
    return Kinematics(model, q).pose(body, local_point)


def point_jacobian(model, q, body, local_point=(0.0, 0.0)):
    return Kinematics(model, q).point_jacobian(body, local_point)


def jdot_times_v(model, q, v, body, local_point=(0.0, 0.0)):
    return Kinematics(model, q, v).jdot_v(body, local_point)


DATA_DIR = Path(__file__).parent / "data"


def load_reference_biped():
    return PlanarModel.from_yaml(DATA_DIR / "planar_biped.yaml")
