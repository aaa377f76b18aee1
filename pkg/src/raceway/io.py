"""Delimited outputs and plain-text field snapshots.

Every writer emits a fixed header, a deterministic row order and
locale-independent decimal formatting: 17 significant digits in the
small report-class files so values round-trip exactly, 9 digits in the
bulky per-cell snapshots.  Identical states therefore produce
byte-identical files.
"""

import numpy as np

from .bio import SPECIES
from .errors import ConfigurationError
from .hydro import cell_center_heights

TIMESERIES_HEADER = ("step,t,total_A,total_O,kinetic_energy,volume,"
                     "vel_integral_cum")
REPORT_HEADER = ("H,omega,j_raw,vel_integral,oxy_min_integral,penalty_vel,"
                 "penalty_oxy,j_tilde,final_A_integral,final_A_mean")
TRACE_HEADER = "iter,move,H,omega,j_raw,penalty_total,j_tilde_best"
REACTOR_HEADER = "t,A,P1,P2,N1,N2,N3,D,O"

# snapshot record layout, one line per cell
SNAPSHOT_COLUMNS = ("i", "j", "k", "x1", "x2", "x3", "v1", "v2", "v3", "p",
                    "A", "P1", "P2", "N1", "N2", "N3", "D", "O")


def _f17(value):
    return f"{value:.17g}"


def write_timeseries(path, timeseries):
    """Per-step diagnostics, one row per recorded step."""
    with open(path, "w", encoding="utf-8") as out:
        out.write(TIMESERIES_HEADER + "\n")
        for n in range(len(timeseries)):
            row = [str(int(timeseries.step[n]))]
            row += [_f17(column[n]) for column in (
                timeseries.time, timeseries.total_algae,
                timeseries.total_oxygen, timeseries.kinetic_energy,
                timeseries.volume, timeseries.velocity_integral_cum)]
            out.write(",".join(row) + "\n")


def _report_row(report):
    return ",".join(_f17(value) for value in (
        report.controls.height, report.controls.omega, report.j_raw,
        report.velocity_integral, report.oxygen_min_integral,
        report.penalty_velocity, report.penalty_oxygen, report.j_tilde,
        report.timeseries.total_algae[-1], report.final_algae_mean))


def write_report(path, report):
    """One-row summary of a single control evaluation."""
    with open(path, "w", encoding="utf-8") as out:
        out.write(REPORT_HEADER + "\n")
        out.write(_report_row(report) + "\n")


def write_sweep(path, reports):
    """Report rows for a whole control grid, in the caller's order."""
    with open(path, "w", encoding="utf-8") as out:
        out.write(REPORT_HEADER + "\n")
        for report in reports:
            out.write(_report_row(report) + "\n")


def write_trace(path, trace):
    """Optimization history, one row per simplex iteration."""
    if trace.reports is None:
        raise ConfigurationError("trace carries no simulation reports")
    with open(path, "w", encoding="utf-8") as out:
        out.write(TRACE_HEADER + "\n")
        for record in trace.records:
            key = (float(record.best_point[0]), float(record.best_point[1]))
            report = trace.reports.get(key)
            j_raw = report.j_raw if report is not None else float("nan")
            out.write(",".join((
                str(record.iteration), record.move, _f17(key[0]),
                _f17(key[1]), _f17(j_raw),
                _f17(record.best_value - j_raw),
                _f17(record.best_value))) + "\n")


def write_reactor(path, times, trajectory):
    """Well-mixed reactor trajectory, one row per time."""
    with open(path, "w", encoding="utf-8") as out:
        out.write(REACTOR_HEADER + "\n")
        for t, concentrations in zip(times, trajectory):
            out.write(",".join([_f17(t)]
                               + [_f17(c) for c in concentrations]) + "\n")


def write_snapshot(path, flow, species, step):
    """Structured-grid state snapshot.

    First line: `ns nt nk step time`.  Then one space-separated record
    per cell in fixed order (streamwise outer, transverse middle, sigma
    inner): indices, cell center, velocity, pressure and the eight
    species, at 9 significant digits.
    """
    mesh = flow.mesh
    ns, nt, nk = mesh.n_streamwise, mesh.n_transverse, mesh.n_sigma
    shape = (ns, nt, nk)
    i, j, k = np.indices(shape)
    x1 = np.broadcast_to(mesh.cell_centers_plan[:, :, 0][:, :, None], shape)
    x2 = np.broadcast_to(mesh.cell_centers_plan[:, :, 1][:, :, None], shape)
    x3 = cell_center_heights(mesh, flow.surface_height)
    columns = [i, j, k, x1, x2, x3,
               flow.velocity[0], flow.velocity[1], flow.velocity[2],
               flow.pressure]
    columns += [species.concentrations[m] for m in range(len(SPECIES))]
    data = np.column_stack([c.reshape(-1) for c in columns])
    with open(path, "w", encoding="utf-8") as out:
        out.write(f"{ns} {nt} {nk} {step} {flow.time:.17g}\n")
        np.savetxt(out, data, fmt=["%d"] * 3 + ["%.9g"] * 15)


def read_snapshot(path):
    """Parse a snapshot file; returns (meta, fields).

    meta holds the counts, step and time; fields maps each
    SNAPSHOT_COLUMNS name to an (ns, nt, nk) array.
    """
    with open(path, encoding="utf-8") as handle:
        first = handle.readline().split()
        ns, nt, nk, step = (int(v) for v in first[:4])
        time = float(first[4])
        data = np.loadtxt(handle, ndmin=2)
    if data.shape != (ns * nt * nk, len(SNAPSHOT_COLUMNS)):
        raise ConfigurationError(
            f"{path}: expected {ns * nt * nk} records of "
            f"{len(SNAPSHOT_COLUMNS)} values, got {data.shape}")
    fields = {name: data[:, idx].reshape(ns, nt, nk)
              for idx, name in enumerate(SNAPSHOT_COLUMNS)}
    meta = {"n_streamwise": ns, "n_transverse": nt, "n_sigma": nk,
            "step": step, "time": time}
    return meta, fields
