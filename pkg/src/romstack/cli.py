"""Command line: ``romstack {rom-sim, walk, gains, selftest}``.

Exit codes: 0 success, 1 run failure (fall, instability, failed check),
2 configuration error.
"""

import argparse
from concurrent.futures import ProcessPoolExecutor
import json
import math
from pathlib import Path
import sys

import numpy as np

from romstack import planners, rom
from romstack.config import ConfigError, ExperimentConfig, config_hash, load_config
from romstack.planners import PLANNER_KINDS
from romstack.wbc.controllers import CONTROLLER_KINDS

EXIT_OK, EXIT_RUN_FAILURE, EXIT_CONFIG = 0, 1, 2


def _fmt(x, width=12):
    if isinstance(x, str):
        return f"{x:>{width}}"
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return f"{'-':>{width}}"
    if isinstance(x, (bool, np.bool_)):
        return f"{str(bool(x)):>{width}}"
    if isinstance(x, (int, np.integer)):
        return f"{int(x):>{width}d}"
    return f"{x:>{width}.4g}"


def format_table(header, rows):
    lines = ["".join(_fmt(h) for h in header)]
    lines += ["".join(_fmt(v) for v in row) for row in rows]
    return "\n".join(lines)


def write_table_csv(path, header, rows, comment):
    with open(path, "w") as fh:
        fh.write(f"# {comment}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join("" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else str(v))
                              for v in row) + "\n")


def _provenance(cfg):
    return f"config_sha256={config_hash(cfg)}"


def _map_jobs(fn, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


# --- rom-sim -------------------------------------------------------------------

def _rom_job(job):
    from romstack.rom_sim import run_rom_sim, stepwise_metrics

    cfg, kind = job
    rs = cfg.rom_sim
    rng = np.random.default_rng(cfg.seed)
    x0 = np.array(rs.x0) + rs.initial_noise * rng.normal(size=2)
    y0 = np.array(rs.y0) + rs.initial_noise * rng.normal(size=2)
    profile = cfg.command_profile()
    trace = run_rom_sim(cfg.plant_config(), cfg.planner_config(kind), profile, rs.n_steps, rs.lateral, x0, y0)
    metrics = stepwise_metrics(trace, profile)
    return kind, trace, metrics


def rom_comparison_row(kind, trace, metrics, settle):
    ex = metrics.velocity_error_x
    tail = np.abs(ex[settle:]) if ex.size > settle else np.array([])
    return [
        kind,
        len(trace.steps),
        bool(metrics.stable),
        int(metrics.settling_step),
        float(tail.max()) if tail.size else float("nan"),
        float(np.sqrt(np.mean(tail**2))) if tail.size else float("nan"),
        float(ex[-1]) if ex.size else float("nan"),
    ]


ROM_TABLE_HEADER = ["planner", "steps", "stable", "settling", "max|e_v|", "rms_e_v", "final_e_v"]


def cmd_rom_sim(cfg, args, out):
    kinds = list(PLANNER_KINDS) if args.all else [args.planner or cfg.planner.kind]
    results = _map_jobs(_rom_job, [(cfg, k) for k in kinds], args.workers)
    prov = _provenance(cfg)
    rows = []
    failed = False
    for kind, trace, metrics in results:
        path = out / f"rom_sim_{kind}.csv"
        trace.write_csv(path, prov)
        print(f"wrote {path}")
        rows.append(rom_comparison_row(kind, trace, metrics, cfg.rom_sim.settle_steps))
        failed |= not metrics.stable
        if args.plot:
            _plot_rom(trace, out / f"rom_sim_{kind}.svg")
    if len(rows) > 1:
        write_table_csv(out / "rom_sim_comparison.csv", ROM_TABLE_HEADER, rows, prov)
        print(f"wrote {out / 'rom_sim_comparison.csv'}")
    print(f"velocity error after {cfg.rom_sim.settle_steps} steps (stepwise mean v - command)")
    print(format_table(ROM_TABLE_HEADER, rows))
    return EXIT_RUN_FAILURE if failed else EXIT_OK


# --- walk ------------------------------------------------------------------------

def _walk_job(job):
    from romstack.hybrid_sim import integrated_output_error, run_walking, summarize

    cfg, controller, base_dir = job
    model = cfg.load_model(base_dir)
    sim = cfg.sim_config(model, controller)
    trace = run_walking(sim)
    window = cfg.error_window()
    summary = summarize(trace)
    try:
        ierr = integrated_output_error(trace, window)
    except ValueError:
        ierr = None
    return controller, trace, summary, ierr


def cmd_walk(cfg, args, out):
    from romstack.gait_output import OUTPUT_NAMES

    if args.controllers:
        ctrls = list(CONTROLLER_KINDS) if args.controllers == ["all"] else args.controllers
    else:
        ctrls = [args.controller or cfg.walk.controller]
    base_dir = Path(args.config).parent if args.config else None
    results = _map_jobs(_walk_job, [(cfg, c, base_dir) for c in ctrls], args.workers)
    prov = _provenance(cfg)
    failed = False
    err_rows = []
    sum_rows = []
    for ctrl, trace, summ, ierr in results:
        trace.write_csv(out / f"walk_{ctrl}.csv", prov)
        trace.write_steps_csv(out / f"walk_{ctrl}_steps.csv", prov)
        print(f"wrote {out / f'walk_{ctrl}.csv'} and {out / f'walk_{ctrl}_steps.csv'}")
        if trace.fell:
            failed = True
            print(f"{ctrl}: FELL at t = {trace.fall_time:.3f} s")
        sum_rows.append([ctrl, bool(trace.fell), summ["n_steps"], summ.get("rms_z_com"), summ.get("rms_swing_z"),
                         summ.get("velocity_rmse"), summ["max_penetration"]])
        vals = [None if ierr is None else ierr[name] for name in OUTPUT_NAMES]
        err_rows.append([ctrl] + vals + [None if ierr is None else float(sum(ierr.values()))])
        if args.plot:
            _plot_walk(trace, out / f"walk_{ctrl}.svg")
    sum_header = ["controller", "fell", "steps", "rms_z_com", "rms_swing_z", "v_rmse", "max_pen"]
    print(format_table(sum_header, sum_rows))
    window = cfg.error_window()
    err_header = ["controller"] + list(OUTPUT_NAMES) + ["total"]
    write_table_csv(out / "integrated_error.csv", err_header, err_rows, prov)
    print(f"integrated output error over t = [{window[0]:.3f}, {window[1]:.3f}] s")
    print(format_table(err_header, err_rows))
    return EXIT_RUN_FAILURE if failed else EXIT_OK


# --- gains -----------------------------------------------------------------------

def gains_report(cfg, kind=None, v_des=None):
    """Text report of the fixed point, gains and closed-loop spectra for one planner."""
    with np.printoptions(precision=10, suppress=False):
        return _gains_report(cfg, kind, v_des)


def _gains_report(cfg, kind, v_des):
    params, timing = cfg.lip_params(), cfg.gait_timing()
    pc = cfg.planner_config(kind)
    v = cfg.command_profile().at(0.0).v_x_des if v_des is None else v_des
    lines = [f"planner {pc.kind}  z0={params.z0} g={params.g}  T_SS={timing.t_ss} T_DS={timing.t_ds}  v_des={v}"]
    if pc.kind == "ALIP":
        L_des = planners.alip_desired_momentum(params, v)
        lines.append(f"ALIP desired pre-impact momentum L_des = {L_des:.10g}  (alpha = {pc.alpha})")
    base = planners.synthesize(planners.PlannerConfig(pc.kind), params, timing)
    s2s = base.s2s
    if pc.kind == "DCM":
        lines.append(f"a_xi = {s2s.a[0, 0]:.10g}   b_xi = {s2s.b[0, 0]:.10g}")
    else:
        lines.append(f"A =\n{s2s.a}\nB =\n{s2s.b[:, 0]}")
    # ALIP plans on the single-support-only map
    fp = planners.fixed_point(s2s, timing if pc.kind != "ALIP" else rom.GaitTiming(timing.t_ss, 0.0), v)
    lines.append(f"x* = {fp.x_star}   u* = {fp.u_star:.10g}")
    db = planners.deadbeat_gain(s2s)
    lq, _ = planners.lqr_gain(s2s, pc.q_weight, pc.r_weight)
    for label, g in (("deadbeat", db), (f"LQR (Q={pc.q_weight} I, R={pc.r_weight})", lq)):
        cl = planners.closed_loop(s2s, g)
        eig = np.linalg.eigvals(cl)
        nil = np.abs(np.linalg.matrix_power(cl, s2s.n)).max()
        lines.append(f"{label}: K = {np.atleast_2d(g.k)[0]}")
        lines.append(f"  closed-loop eigenvalues {eig}  |eig|max = {np.abs(eig).max():.3e}  |(A+BK)^n| = {nil:.3e}")
    return "\n".join(lines)


def cmd_gains(cfg, args, out):
    kinds = list(PLANNER_KINDS) if args.all else [args.planner or cfg.planner.kind]
    print("\n\n".join(gains_report(cfg, k, args.v_des) for k in kinds))
    return EXIT_OK


# --- selftest ----------------------------------------------------------------------

def cmd_selftest(args):
    from romstack.selftest import run_selftest, summary

    results = run_selftest(args.seed, args.tol_scale)
    summ = summary(results)
    if args.json:
        print(json.dumps(summ, indent=2, sort_keys=True))
    else:
        for r in results:
            print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: error {r.error:.3e} (tol {r.tolerance:.1e})")
        print(f"{summ['passed']} passed, {summ['failed']} failed")
    return EXIT_OK if summ["failed"] == 0 else EXIT_RUN_FAILURE


# --- plots (optional) ------------------------------------------------------------

def _pyplot():
    try:
        import matplotlib
    except ImportError:
        raise ConfigError("--plot needs matplotlib (pip install matplotlib)") from None
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "romstack"
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    print(f"wrote {path}")


def _plot_rom(trace, path):
    plt = _pyplot()
    t = np.asarray(trace.t)
    x = np.asarray(trace.x)
    fig, ax = plt.subplots(2, 1, sharex=True, figsize=(7, 5))
    ax[0].plot(t, x[:, 0], label="p_x")
    ax[0].plot(t, x[:, 2], label="p_y")
    ax[0].set_ylabel("p [m]")
    ax[0].legend()
    ax[1].plot(t, x[:, 1], label="L_x")
    ax[1].plot(t, x[:, 3], label="L_y")
    ax[1].set_ylabel("L [m^2/s]")
    ax[1].set_xlabel("t [s]")
    ax[1].legend()
    _save(fig, path)
    plt.close(fig)


def _plot_walk(trace, path):
    plt = _pyplot()
    t = np.asarray(trace.t)
    ya, yd = np.asarray(trace.y_a), np.asarray(trace.y_d)
    fig, ax = plt.subplots(3, 1, sharex=True, figsize=(7, 7))
    for k, (i, name) in enumerate(((0, "z_com"), (3, "swing_z"))):
        ax[k].plot(t, ya[:, i], label="actual")
        ax[k].plot(t, yd[:, i], "--", label="desired")
        ax[k].set_ylabel(name)
        ax[k].legend()
    rom_state = np.asarray(trace.rom)
    ax[2].plot(t, rom_state[:, 1], label="L about pivot")
    ax[2].set_ylabel("L [m^2/s]")
    ax[2].set_xlabel("t [s]")
    _save(fig, path)
    plt.close(fig)


# --- entry point -------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="romstack", description="ROM planning and whole-body control experiments")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_config=True):
        sp.add_argument("-c", "--config", required=needs_config, help="experiment YAML file")
        sp.add_argument("-o", "--out", help="output directory (overrides output.dir)")
        sp.add_argument("--workers", type=int, default=1, help="parallel processes for independent runs")
        sp.add_argument("--plot", action="store_true", help="also write SVG line plots (needs matplotlib)")

    sp = sub.add_parser("rom-sim", help="closed-loop LIP plant simulation")
    common(sp)
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--planner", choices=PLANNER_KINDS)
    g.add_argument("--all", action="store_true", help="run all four planners and write a comparison table")

    sp = sub.add_parser("walk", help="full-order planar biped walking")
    common(sp)
    sp.add_argument("--planner", choices=PLANNER_KINDS)
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--controller", choices=CONTROLLER_KINDS)
    g.add_argument("--controllers", nargs="+", choices=list(CONTROLLER_KINDS) + ["all"],
                   help="several controllers (or 'all') plus an integrated-error table")

    sp = sub.add_parser("gains", help="print fixed points, gains and closed-loop eigenvalues")
    sp.add_argument("-c", "--config", help="experiment YAML file (defaults used when omitted)")
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--planner", choices=PLANNER_KINDS)
    g.add_argument("--all", action="store_true")
    sp.add_argument("--v-des", type=float, default=None, help="override the command velocity")

    sp = sub.add_parser("selftest", help="run the oracle battery")
    sp.add_argument("--json", action="store_true", help="print a JSON summary")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tol-scale", type=float, default=1.0,
                    help="multiply every tolerance (values << 1 force failures)")
    return p


def _validate(cfg, args):
    """Build every domain object the run needs, so bad combinations fail as config errors."""
    cfg.command_profile()
    if args.command == "rom-sim":
        cfg.plant_config()
        for kind in PLANNER_KINDS:
            cfg.planner_config(kind)
    else:
        model = cfg.load_model(Path(args.config).parent if args.config else None)
        ctrls = [args.controller] if args.controller else (args.controllers or [cfg.walk.controller])
        for c in (CONTROLLER_KINDS if ctrls == ["all"] else ctrls):
            cfg.sim_config(model, c)


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "selftest":
        return cmd_selftest(args)
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.command != "gains":
            if args.workers < 1:
                raise ConfigError("--workers must be >= 1")
            if args.planner and args.command == "walk":
                cfg = cfg.model_copy(update={"planner": cfg.planner.model_copy(update={"kind": args.planner})})
            _validate(cfg, args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "gains":
        return cmd_gains(cfg, args, None)
    out = Path(args.out or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    args.plot = args.plot or cfg.output.plots
    if args.plot:
        try:
            _pyplot()
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    if args.command == "rom-sim":
        return cmd_rom_sim(cfg, args, out)
    return cmd_walk(cfg, args, out)


if __name__ == "__main__":
    sys.exit(main())
