"""Command line entry points: simulate, optimize, reactor, sweep, info.

Each writing command resolves the configuration, echoes it to
resolved.cfg in the output directory, writes its delimited outputs and
renders the matching figures.  All user-facing failures exit 1 with a
single `error:` line on stderr; argparse handles flag errors with its
usual exit 2.
"""

import argparse
import logging
import multiprocessing
import sys
from pathlib import Path

import numpy as np

from . import figures
from . import io as output
from .config import dump_config, load_config
from .errors import ConfigurationError, OptimizationError, SimulationError
from .geometry import mesh_summary
from .hydro import paddle_region
from .objective import Controls, ObjectiveReport, Timeseries, simulate
from .optimizer import optimize_raceway
from .reactor import ReactorState, integrate

log = logging.getLogger(__name__)


def _grid(text):
    try:
        first, second = text.lower().split("x")
        counts = (int(first), int(second))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected a grid like 4x3, got {text!r}") from None
    if min(counts) < 1:
        raise argparse.ArgumentTypeError("grid counts must be at least 1")
    return counts


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def build_parser():
    parser = argparse.ArgumentParser(
        prog="raceway",
        description="Raceway pond simulation and control optimization.")
    commands = parser.add_subparsers(dest="command", required=True)

    def add(name, helptext, func, out=True):
        sub = commands.add_parser(name, help=helptext)
        sub.add_argument("--config", required=True,
                         help="run configuration file")
        if out:
            sub.add_argument("--out", default=None,
                             help="output directory "
                                  "(default: output.directory)")
        sub.set_defaults(func=func)
        return sub

    sub = add("simulate", "run one simulation at the configured controls",
              _cmd_simulate)
    sub.add_argument("--snapshot-stride", type=int, default=None,
                     help="steps between field snapshots, 0 disables "
                          "(default: output.snapshot_stride)")
    sub = add("optimize", "search the control box for minimal penalized "
                          "cost", _cmd_optimize)
    sub.add_argument("--snapshot-stride", type=int, default=None,
                     help="snapshot stride for a final re-run of the best "
                          "controls, 0 disables "
                          "(default: output.snapshot_stride)")
    sub = add("sweep", "evaluate the objective on a control grid",
              _cmd_sweep)
    sub.add_argument("--grid", type=_grid, default=(3, 3),
                     help="grid as AxB: A heights by B wheel speeds "
                          "(default 3x3)")
    sub.add_argument("--threads", type=_positive_int, default=1,
                     help="worker processes (default 1)")
    add("reactor", "integrate the well-mixed reaction system alone",
        _cmd_reactor)
    add("info", "print mesh and run diagnostics", _cmd_info, out=False)
    return parser


def _prepare_output_dir(args, config):
    out = Path(args.out if args.out is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved.cfg").write_text(dump_config(config))
    return out


def _paddle_region_at_start(config, mesh):
    surface = np.full((mesh.n_streamwise, mesh.n_transverse),
                      config.initial_height)
    return paddle_region(config.paddle, config.geometry, mesh, surface)


def _warn_if_paddle_misses_mesh(config, mesh):
    if not _paddle_region_at_start(config, mesh).any():
        log.warning(
            "paddlewheel region holds no cell centers at H = %g; "
            "the wheel cannot move the water on this mesh",
            config.initial_height)


def _n_steps(config):
    return int(round(config.objective.horizon / config.hydro.dt))


def _snapshot_callback(out, stride, n_steps):
    if stride is None or stride <= 0:
        return None

    def callback(step, flow, species):
        if step % stride == 0 or step == n_steps:
            output.write_snapshot(out / f"snapshot_{step:06d}.dat",
                                  flow, species, step)
    return callback


def _resolved_stride(args, config):
    stride = args.snapshot_stride
    return config.snapshot_stride if stride is None else stride


def _cmd_simulate(args):
    config = load_config(args.config)
    out = _prepare_output_dir(args, config)
    mesh = config.make_mesh()
    _warn_if_paddle_misses_mesh(config, mesh)
    callback = _snapshot_callback(out, _resolved_stride(args, config),
                                  _n_steps(config))
    flow, species, report = simulate(config.controls,
                                     *config.simulation_args(mesh),
                                     step_callback=callback)
    output.write_timeseries(out / "timeseries.csv", report.timeseries)
    output.write_report(out / "report.csv", report)
    figures.save_timeseries_figure(out / "timeseries.png", report.timeseries)
    figures.save_plan_field_figure(
        out / "algae_plan.png", mesh, species.concentrations[0].mean(axis=2),
        f"algae, depth mean, t = {flow.time:g} s", "g/m^3")
    speed = np.sqrt((flow.velocity ** 2).sum(axis=0)).mean(axis=2)
    figures.save_plan_field_figure(
        out / "speed_plan.png", mesh, speed,
        f"speed, depth mean, t = {flow.time:g} s", "m/s")
    print(f"final algae integral {report.timeseries.total_algae[-1]:.6f} g, "
          f"penalized cost {report.j_tilde:.6f}")
    print(f"outputs in {out}")
    return 0


def _cmd_optimize(args):
    config = load_config(args.config)
    out = _prepare_output_dir(args, config)
    mesh = config.make_mesh()
    _warn_if_paddle_misses_mesh(config, mesh)
    best, report, trace = optimize_raceway(config.start, config.bounds,
                                           *config.simulation_args(mesh),
                                           options=config.options)
    output.write_trace(out / "trace.csv", trace)
    output.write_report(out / "report.csv", report)
    output.write_timeseries(out / "timeseries.csv", report.timeseries)
    figures.save_trace_figure(out / "trace.png", trace)
    figures.save_timeseries_figure(out / "timeseries.png", report.timeseries)
    callback = _snapshot_callback(out, _resolved_stride(args, config),
                                  _n_steps(config))
    if callback is not None:
        simulate(best, *config.simulation_args(mesh),
                 step_callback=callback)
    print(f"best H = {best.height:.6g} m, omega = {best.omega:.6g} rad/s, "
          f"penalized cost = {report.j_tilde:.6f}")
    print(f"stopped on {trace.reason} after {trace.n_evaluations} "
          f"evaluations, {len(trace.records)} iterations")
    print(f"outputs in {out}")
    return 0


def _cmd_reactor(args):
    config = load_config(args.config)
    out = _prepare_output_dir(args, config)
    n_steps = _n_steps(config)
    if n_steps < 1:
        raise ConfigurationError(
            "objective.T must cover at least one hydro.dt step")
    state = ReactorState.from_values(config.initial_concentrations)
    # a well-mixed column is lit like the raceway at half depth
    times, trajectory = integrate(state, config.bio, config.make_forcings(),
                                  0.5 * config.initial_height,
                                  config.hydro.dt, n_steps)
    output.write_reactor(out / "reactor.csv", times, trajectory)
    figures.save_reactor_figure(out / "reactor.png", times, trajectory)
    print(f"final algae {trajectory[-1][0]:.6f} g/m^3 "
          f"after {times[-1] - times[0]:g} s")
    print(f"outputs in {out}")
    return 0


_SWEEP_STATE = {}


def _sweep_init(config_path):
    config = load_config(config_path)
    _SWEEP_STATE["config"] = config
    _SWEEP_STATE["mesh"] = config.make_mesh()


def _nan_report(controls):
    nan = float("nan")
    ones = np.full(1, nan)
    series = Timeseries(step=np.zeros(1, dtype=int), time=ones,
                        total_algae=ones, total_oxygen=ones,
                        kinetic_energy=ones, volume=ones,
                        velocity_integral_cum=ones)
    return ObjectiveReport(controls=controls, j_raw=nan,
                           velocity_integral=nan, oxygen_min_integral=nan,
                           penalty_velocity=nan, penalty_oxygen=nan,
                           j_tilde=nan, final_algae_mean=nan,
                           timeseries=series)


def _sweep_eval(pair):
    config = _SWEEP_STATE["config"]
    mesh = _SWEEP_STATE["mesh"]
    controls = Controls(height=pair[0], omega=pair[1])
    try:
        _, _, report = simulate(controls, *config.simulation_args(mesh))
    except SimulationError as err:
        log.warning("sweep point height=%.6g omega=%.6g failed: %s",
                    pair[0], pair[1], err)
        return _nan_report(controls)
    return report


def _cmd_sweep(args):
    config = load_config(args.config)
    out = _prepare_output_dir(args, config)
    n_heights, n_omegas = args.grid
    heights = np.linspace(config.bounds.height_min, config.bounds.height_max,
                          n_heights)
    omegas = np.linspace(config.bounds.omega_min, config.bounds.omega_max,
                         n_omegas)
    pairs = [(float(h), float(w)) for h in heights for w in omegas]
    if args.threads == 1:
        _sweep_init(args.config)
        reports = [_sweep_eval(pair) for pair in pairs]
    else:
        with multiprocessing.Pool(processes=args.threads,
                                  initializer=_sweep_init,
                                  initargs=(args.config,)) as pool:
            reports = pool.map(_sweep_eval, pairs)
    output.write_sweep(out / "sweep.csv", reports)
    costs = np.array([report.j_tilde for report in reports])
    figures.save_sweep_figure(out / "sweep.png", heights, omegas,
                              costs.reshape(n_heights, n_omegas))
    finite = np.isfinite(costs)
    if finite.any():
        best = reports[int(np.flatnonzero(finite)[np.argmin(costs[finite])])]
        print(f"best H = {best.controls.height:.6g} m, "
              f"omega = {best.controls.omega:.6g} rad/s, "
              f"penalized cost = {best.j_tilde:.6f}")
    else:
        print("no sweep point finished; see warnings above")
    print(f"outputs in {out}")
    return 0


def _cmd_info(args):
    config = load_config(args.config)
    mesh = config.make_mesh()
    region = _paddle_region_at_start(config, mesh)
    n_steps = _n_steps(config)
    print(mesh_summary(mesh))
    print(f"  paddle region cells  {int(region.sum())} "
          f"at H = {config.initial_height:g} m")
    print(f"  steps per run        {n_steps} "
          f"(dt = {config.hydro.dt:g} s, T = {config.objective.horizon:g} s)")
    if not region.any():
        print("  warning: the paddle region holds no cell centers; "
              "the wheel cannot move the water on this mesh")
    return 0


def run_command(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigurationError, SimulationError, OptimizationError,
            OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def main():
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
