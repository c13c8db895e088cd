"""Closed-loop hybrid simulation of a LIP-family plant driven by a planner."""

from dataclasses import dataclass, field
import bisect
import csv
import math

import numpy as np

from romstack import planners, rom
from romstack.linalg import expm, expm_with_integral
from romstack.planners import VelocityCommand
from romstack.rom import GaitTiming, LipParams

PLANT_KINDS = ("SS-only", "SS+DS-constant-velocity", "SS+DS-linear-ZMP")
DIVERGENCE_NORM = 1e3
CSV_COLUMNS = ("t", "phase", "p_x", "L_x", "p_y", "L_y", "step_idx", "u_x", "u_y", "v_mean_x", "v_mean_y")


@dataclass(frozen=True)
class RomPlantConfig:
    params: LipParams
    timing: GaitTiming
    plant_kind: str = "SS+DS-constant-velocity"
    dt: float = 1e-3

    def __post_init__(self):
        if self.plant_kind not in PLANT_KINDS:
            raise ValueError(f"unknown plant kind {self.plant_kind!r}")
        if not (self.dt > 0.0 and self.dt <= self.timing.t_ss / 10.0 + 1e-15):
            raise ValueError("plant dt must satisfy 0 < dt <= t_ss / 10")


@dataclass(frozen=True)
class CommandProfile:
    """Piecewise-constant command schedule ``[(t_start, VelocityCommand), ...]``."""

    schedule: tuple

    def __post_init__(self):
        sched = tuple((float(t), cmd) for t, cmd in self.schedule)
        if not sched or sched[0][0] != 0.0:
            raise ValueError("command schedule must start at t = 0")
        times = [t for t, _ in sched]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("command times must be strictly increasing")
        object.__setattr__(self, "schedule", sched)

    @classmethod
    def constant(cls, command):
        return cls(((0.0, command),))

    @classmethod
    def ramp(cls, start, end, t_start, t_end, dt=0.05):
        """Staircase approximation of a linear sagittal ramp between two commands.

        ``start``/``end`` are :class:`VelocityCommand`; levels change every ``dt``.
        """
        if not t_end > t_start >= 0.0:
            raise ValueError("ramp needs 0 <= t_start < t_end")
        n = max(1, int(round((t_end - t_start) / dt)))
        sched = [(0.0, start)] if t_start > 0.0 else []
        for k in range(n + 1):
            a = k / n
            cmd = VelocityCommand(
                start.v_x_des + a * (end.v_x_des - start.v_x_des),
                start.v_y_des + a * (end.v_y_des - start.v_y_des),
                start.step_width + a * (end.step_width - start.step_width),
            )
            sched.append((t_start + a * (t_end - t_start), cmd))
        return cls(tuple(sched))

    def at(self, t):
        times = [s[0] for s in self.schedule]
        return self.schedule[bisect.bisect_right(times, t + 1e-12) - 1][1]


@dataclass
class StepRecord:
    index: int
    t_impact: float
    stance: str
    u_x: float
    u_y: float
    preimpact_x: tuple
    preimpact_y: tuple
    v_mean_x: float
    v_mean_y: float
    v_cmd_x: float
    v_cmd_y: float


@dataclass
class RomTrace:
    planner: str
    plant_kind: str
    z0: float
    t: list = field(default_factory=list)
    phase: list = field(default_factory=list)
    x: list = field(default_factory=list)  # rows (p_x, L_x, p_y, L_y)
    step_idx: list = field(default_factory=list)
    u: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    unstable: bool = False

    @property
    def velocity_proxy(self):
        xs = np.asarray(self.x)
        return xs[:, [1, 3]] / self.z0

    def rows(self):
        vmean = (math.nan, math.nan)
        k_done = 0
        for i, t in enumerate(self.t):
            while k_done < len(self.steps) and self.steps[k_done].t_impact <= t + 1e-12:
                vmean = (self.steps[k_done].v_mean_x, self.steps[k_done].v_mean_y)
                k_done += 1
            px, Lx, py, Ly = self.x[i]
            ux, uy = self.u[i]
            yield (t, self.phase[i], px, Lx, py, Ly, self.step_idx[i], ux, uy, vmean[0], vmean[1])

    def write_csv(self, path, header_comment=None):
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for row in self.rows():
                writer.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


class _AxisPlant:
    """Exact per-tick propagators for one axis of the plant."""

    def __init__(self, cfg, n_ss, n_ds):
        params, timing = cfg.params, cfg.timing
        self.kind = cfg.plant_kind
        self.dt_ss = timing.t_ss / n_ss
        self.e_ss = rom.ss_transition(params, self.dt_ss)
        if n_ds:
            self.dt_ds = timing.t_ds / n_ds
            if self.kind == "SS+DS-linear-ZMP":
                a_ct, b_ct = rom.mlip_ct(params)
                self.e_ds3, self.g_ds3 = expm_with_integral(a_ct, b_ct, self.dt_ds)
                self.g_ds3 = self.g_ds3[:, 0]
            else:
                self.e_ds = rom.ds_transition(params, self.dt_ds)


def run_rom_sim(plant, planner_config, profile, n_steps, lateral=True, x0=None, y0=None):
    """Simulate ``n_steps`` steps of the planner on the plant.

    SS and DS alternate on a fixed schedule. The planner is re-evaluated every
    SS tick; the swing foot lands at the last commanded placement when SS ends,
    after which the state is expressed about the new stance foot. Divergence
    (state norm above 1e3) ends the run with ``trace.unstable = True``.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    params, timing = plant.params, plant.timing
    has_ds = plant.plant_kind != "SS-only" and timing.t_ds > 0.0
    n_ss = max(10, int(round(timing.t_ss / plant.dt)))
    n_ds = int(round(timing.t_ds / plant.dt)) if has_ds else 0
    if has_ds:
        n_ds = max(n_ds, 1)
    prop = _AxisPlant(plant, n_ss, n_ds)
    trace = RomTrace(planner_config.kind, plant.plant_kind, params.z0)

    x = np.zeros(2) if x0 is None else np.array(x0, dtype=float)  # sagittal (p, L)
    y = np.zeros(2) if y0 is None else np.array(y0, dtype=float)
    stance_world = np.zeros(2)  # stance foot position (x, y)
    com_prev = np.array([x[0], y[0]])
    t_prev = 0.0
    t = 0.0
    stance = "left"
    u = (0.0, 0.0)

    def log(phase, k):
        trace.t.append(t)
        trace.phase.append(phase)
        trace.x.append((x[0], x[1], y[0], y[1]))
        trace.step_idx.append(k)
        trace.u.append(u)

    for k in range(n_steps):
        t_start = t
        for i in range(n_ss):
            t_in = i * prop.dt_ss
            cmd = profile.at(t)
            out = planners.plan(
                planner_config, params, timing, x, t_in, cmd, y if lateral else None, stance
            )
            u = (out.u_sw_x, out.u_sw_y)
            log("SS-" + stance, k)
            x = prop.e_ss @ x
            y = prop.e_ss @ y
            t = t_start + (i + 1) * prop.dt_ss
            if max(np.abs(x).max(), np.abs(y).max()) > DIVERGENCE_NORM or not np.all(np.isfinite(np.r_[x, y])):
                trace.unstable = True
                return trace
        cmd = profile.at(t)
        # final placement is re-evaluated at the impact instant
        out = planners.plan(
            planner_config, params, timing, x, timing.t_ss, cmd, y if lateral else None, stance
        )
        u = (out.u_sw_x, out.u_sw_y)
        com_world = stance_world + np.array([x[0], y[0]])
        dt_step = t - t_prev
        v_mean = (com_world - com_prev) / dt_step
        trace.steps.append(
            StepRecord(k, t, stance, u[0], u[1], tuple(x), tuple(y), v_mean[0], v_mean[1], cmd.v_x_des, cmd.v_y_des)
        )
        com_prev, t_prev = com_world, t
        # touchdown: re-express about the new stance foot
        stance_world = stance_world + np.array(u)
        x = np.array([x[0] - u[0], x[1]])
        y = np.array([y[0] - u[1], y[1]])
        phase_ds = "DS-left-to-right" if stance == "left" else "DS-right-to-left"
        t_ds_start = t
        for j in range(n_ds):
            log(phase_ds, k)
            x = _ds_tick(prop, x, u[0], j, n_ds)
            y = _ds_tick(prop, y, u[1], j, n_ds)
            t = t_ds_start + (j + 1) * prop.dt_ds
        stance = "right" if stance == "left" else "left"
    log("SS-" + stance, n_steps)
    return trace


def _ds_tick(prop, x, u, j, n_ds):
    if prop.kind == "SS+DS-linear-ZMP":
        # ZMP moves from the old foot (-u) to the new pivot (0) at rate u / T_DS
        zmp = -u + u * j / n_ds
        rate = u / (prop.dt_ds * n_ds)
        xbar = prop.e_ds3 @ np.array([x[0], x[1], zmp]) + prop.g_ds3 * rate
        return xbar[:2]
    return prop.e_ds @ x


@dataclass(frozen=True)
class StepwiseMetrics:
    velocity_error_x: np.ndarray
    velocity_error_y: np.ndarray
    settling_step: int
    stable: bool

    def table(self):
        return [
            {"step": i, "v_err_x": float(ex), "v_err_y": float(ey)}
            for i, (ex, ey) in enumerate(zip(self.velocity_error_x, self.velocity_error_y))
        ]


def stepwise_metrics(trace, profile=None, rel_tol=0.05, abs_tol=1e-3):
    """Per-step velocity error, settling step and stability flag.

    ``settling_step`` is the first step from which every later step keeps the
    sagittal velocity error within ``max(rel_tol |v_cmd|, abs_tol)``; -1 when the
    trace never settles.
    """
    if not trace.t:
        raise ValueError("empty trace")
    steps = trace.steps
    ex = np.array([s.v_mean_x - s.v_cmd_x for s in steps])
    ey = np.array([s.v_mean_y - s.v_cmd_y for s in steps])
    bound = np.array([max(rel_tol * abs(s.v_cmd_x), abs_tol) for s in steps])
    ok = np.abs(ex) <= bound
    settling = -1
    for i in range(len(steps)):
        if ok[i:].all():
            settling = i
            break
    stable = (not trace.unstable) and bool(np.all(np.isfinite(np.asarray(trace.x))))
    return StepwiseMetrics(ex, ey, settling, stable)
