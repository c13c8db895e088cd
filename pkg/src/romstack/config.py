"""Experiment configuration: a versioned YAML schema validated with pydantic.

Every section is optional and falls back to the defaults below; unknown keys
anywhere are rejected. ``config_hash`` fingerprints the validated config and is
written into every CSV for provenance.
"""

import hashlib
import json
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from romstack import gait_output as go
from romstack.planners import GAIN_KINDS, PLANNER_KINDS, PlannerConfig, VelocityCommand
from romstack.rigid_body import PlanarModel, load_reference_biped
from romstack.rom import GaitTiming, LipParams
from romstack.rom_sim import PLANT_KINDS, CommandProfile, RomPlantConfig
from romstack.wbc.controllers import CONTROLLER_KINDS, SolverLimits

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Raised for unreadable or schema-invalid configuration."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class LipSection(_Strict):
    z0: float = Field(0.89, gt=0.0)
    g: float = Field(9.81, gt=0.0)


class TimingSection(_Strict):
    t_ss: float = Field(0.4, gt=0.0)
    t_ds: float = Field(0.1, ge=0.0)


class PlannerSection(_Strict):
    kind: Literal[PLANNER_KINDS] = "HLIP"
    gain: Literal[GAIN_KINDS] = "deadbeat"
    q_weight: float = Field(1.0, ge=0.0)
    r_weight: float = Field(1.0, gt=0.0)
    alpha: float = Field(0.0, ge=0.0, lt=1.0)


class CommandSegment(_Strict):
    t: float = Field(ge=0.0)
    v_x: float = 0.0
    v_y: float = 0.0
    step_width: float = Field(0.0, ge=0.0)


class RampSection(_Strict):
    v_x_start: float = 0.0
    v_x_end: float = 0.0
    t_start: float = Field(0.0, ge=0.0)
    t_end: float = Field(gt=0.0)
    dt: float = Field(0.05, gt=0.0)


class CommandSection(_Strict):
    """Either piecewise-constant ``segments`` or a sagittal ``ramp``."""

    segments: List[CommandSegment] = Field(default_factory=lambda: [CommandSegment(t=0.0)])
    ramp: Optional[RampSection] = None

    @model_validator(mode="after")
    def _check(self):
        if self.ramp is None:
            times = [s.t for s in self.segments]
            if not times or times[0] != 0.0:
                raise ValueError("command segments must start at t = 0")
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValueError("command segment times must be strictly increasing")
        elif self.ramp.t_end <= self.ramp.t_start:
            raise ValueError("ramp t_end must exceed t_start")
        return self


class RomSimSection(_Strict):
    plant: Literal[PLANT_KINDS] = "SS+DS-constant-velocity"
    dt: float = Field(1e-3, gt=0.0)
    n_steps: int = Field(40, ge=1)
    lateral: bool = True
    x0: Tuple[float, float] = (0.0, 0.0)
    y0: Tuple[float, float] = (0.0, 0.0)
    initial_noise: float = Field(0.0, ge=0.0)  # std of a seeded perturbation of x0
    settle_steps: int = Field(5, ge=0)  # transient excluded from the comparison table


class OutputsSection(_Strict):
    # order: z_com, pitch, swing_x, swing_z, swing_pitch, com_x
    weights: Tuple[float, float, float, float, float, float] = (1.0, 1.0, 10.0, 10.0, 10.0, 1.0)
    kp: Tuple[float, float, float, float, float, float] = (100.0,) * 6
    kd: Tuple[float, float, float, float, float, float] = (20.0,) * 6
    z_apex: float = Field(0.08, gt=0.0)


class WalkSection(_Strict):
    controller: Literal[CONTROLLER_KINDS] = "TSC-QP"
    duration: float = Field(10.0, gt=0.0)
    dt_sim: float = Field(1e-4, gt=0.0)
    dt_ctrl: float = Field(1e-3, gt=0.0)
    mu: float = Field(0.8, gt=0.0)
    torque_limit: float = Field(150.0, gt=0.0)
    pivot_weight: float = Field(1e3, gt=0.0)
    baumgarte_alpha: float = Field(50.0, ge=0.0)
    baumgarte_beta: float = Field(625.0, ge=0.0)
    ik_kp: Optional[Tuple[float, ...]] = None
    ik_kd: Optional[Tuple[float, ...]] = None
    initial_knee: Optional[float] = None
    record_every: int = Field(1, ge=1)
    error_window: Optional[Tuple[float, float]] = None  # defaults to the last 2 s

    @field_validator("error_window")
    @classmethod
    def _window(cls, w):
        if w is not None and not w[1] > w[0] >= 0.0:
            raise ValueError("error_window needs 0 <= t0 < t1")
        return w


class OutputSection(_Strict):
    dir: str = "out"
    plots: bool = False


class ExperimentConfig(_Strict):
    schema_version: Literal[SCHEMA_VERSION] = SCHEMA_VERSION
    model: str = "reference"  # "reference" or a path to a model YAML file
    seed: int = 0
    lip: LipSection = LipSection()
    timing: TimingSection = TimingSection()
    planner: PlannerSection = PlannerSection()
    command: CommandSection = CommandSection()
    rom_sim: RomSimSection = RomSimSection()
    outputs: OutputsSection = OutputsSection()
    walk: WalkSection = WalkSection()
    output: OutputSection = OutputSection()

    # --- builders ---

    def lip_params(self):
        return LipParams(self.lip.z0, self.lip.g)

    def gait_timing(self):
        return GaitTiming(self.timing.t_ss, self.timing.t_ds)

    def planner_config(self, kind=None):
        p = self.planner
        return PlannerConfig(kind or p.kind, p.gain, p.q_weight, p.r_weight, p.alpha)

    def command_profile(self):
        c = self.command
        if c.ramp is not None:
            r = c.ramp
            return CommandProfile.ramp(VelocityCommand(r.v_x_start), VelocityCommand(r.v_x_end), r.t_start, r.t_end, r.dt)
        return CommandProfile(tuple((s.t, VelocityCommand(s.v_x, s.v_y, s.step_width)) for s in c.segments))

    def plant_config(self):
        return RomPlantConfig(self.lip_params(), self.gait_timing(), self.rom_sim.plant, self.rom_sim.dt)

    def load_model(self, base_dir=None):
        if self.model == "reference":
            return load_reference_biped()
        path = Path(self.model)
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        return PlanarModel.from_yaml(path)

    def output_spec(self):
        o = self.outputs
        return go.OutputSpec(self.lip.z0, o.weights, o.kp, o.kd, o.z_apex)

    def sim_config(self, model, controller=None, planner=None):
        from romstack.hybrid_sim import SimConfig

        w = self.walk
        extra = {}
        if w.ik_kp is not None:
            extra["ik_kp"] = w.ik_kp
        if w.ik_kd is not None:
            extra["ik_kd"] = w.ik_kd
        return SimConfig(
            model, self.planner_config(planner), controller or w.controller, self.gait_timing(),
            self.command_profile(), self.output_spec(), SolverLimits.symmetric(model.m, w.torque_limit),
            dt_sim=w.dt_sim, dt_ctrl=w.dt_ctrl, duration=w.duration, mu=w.mu,
            baumgarte_alpha=w.baumgarte_alpha, baumgarte_beta=w.baumgarte_beta,
            pivot_weight=w.pivot_weight, initial_knee=w.initial_knee, record_every=w.record_every, **extra,
        )

    def error_window(self):
        if self.walk.error_window is not None:
            return self.walk.error_window
        t1 = self.walk.duration - self.walk.dt_ctrl
        return (max(0.0, t1 - 2.0), t1)


def config_hash(cfg):
    """SHA-256 of the canonical JSON form of a validated config."""
    blob = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def parse_config(data):
    """Validate a mapping; raises :class:`ConfigError` with the schema diagnostics."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        lines = [f"  {'.'.join(str(p) for p in e['loc']) or '<root>'}: {e['msg']}" for e in exc.errors()]
        raise ConfigError("invalid configuration:\n" + "\n".join(lines)) from None


def load_config(path):
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    return parse_config(data)
