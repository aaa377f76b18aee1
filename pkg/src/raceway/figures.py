"""Figure rendering for the report outputs.

Every function draws one figure and writes it straight to a file; the
Agg backend is forced so rendering works without a display.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.collections import PolyCollection

from .bio import SPECIES


def save_timeseries_figure(path, timeseries):
    """Per-step diagnostics: one panel per recorded quantity."""
    fig, axes = plt.subplots(3, 2, figsize=(9, 9), sharex=True)
    panels = (
        ("total algae (g)", timeseries.total_algae),
        ("total oxygen (g)", timeseries.total_oxygen),
        ("kinetic energy (m^5 s^-2)", timeseries.kinetic_energy),
        ("water volume (m^3)", timeseries.volume),
        ("cumulative velocity integral (m^4)",
         timeseries.velocity_integral_cum),
    )
    for ax, (label, series) in zip(axes.flat, panels):
        ax.plot(timeseries.time, series)
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
    axes.flat[-1].axis("off")
    for ax in axes[-1]:
        ax.set_xlabel("t (s)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_plan_field_figure(path, mesh, field, title, units=""):
    """Depth-collapsed plan view of a per-column scalar (ns, nt)."""
    field = np.asarray(field, dtype=float)
    polys = PolyCollection(mesh.plan_cell_corners.reshape(-1, 4, 2))
    polys.set_array(field.reshape(-1))
    fig, ax = plt.subplots(figsize=(10, 4))
    ax.add_collection(polys)
    ax.autoscale_view()
    ax.set_aspect("equal")
    ax.set_xlabel("x1 (m)")
    ax.set_ylabel("x2 (m)")
    ax.set_title(title)
    fig.colorbar(polys, ax=ax, label=units, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_trace_figure(path, trace):
    """Best penalized cost per iteration plus the best-point path."""
    iterations = [record.iteration for record in trace.records]
    best_values = [record.best_value for record in trace.records]
    points = np.array([record.best_point for record in trace.records])
    fig, (left, right) = plt.subplots(1, 2, figsize=(10, 4))
    left.plot(iterations, best_values, marker=".")
    left.set_xlabel("iteration")
    left.set_ylabel("best penalized cost")
    left.grid(True, alpha=0.3)
    right.plot(points[:, 0], points[:, 1], "-", color="0.7")
    scatter = right.scatter(points[:, 0], points[:, 1], c=iterations, s=18)
    right.set_xlabel("H (m)")
    right.set_ylabel("omega (rad/s)")
    fig.colorbar(scatter, ax=right, label="iteration")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_sweep_figure(path, heights, omegas, costs):
    """Heatmap of the penalized cost over the control grid.

    costs[a, b] belongs to heights[a], omegas[b]; the best cell is
    marked.
    """
    heights = np.asarray(heights, dtype=float)
    omegas = np.asarray(omegas, dtype=float)
    costs = np.asarray(costs, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 5))
    image = ax.pcolormesh(omegas, heights, costs, shading="nearest")
    best = np.unravel_index(np.nanargmin(costs), costs.shape)
    ax.plot(omegas[best[1]], heights[best[0]], "r*", markersize=12)
    ax.set_xlabel("omega (rad/s)")
    ax.set_ylabel("H (m)")
    ax.set_title("penalized cost")
    fig.colorbar(image, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_reactor_figure(path, times, trajectory):
    """Well-mixed trajectories: biomass and oxygen left, pools right."""
    data = np.asarray(trajectory, dtype=float)
    times = np.asarray(times, dtype=float)
    fig, (left, right) = plt.subplots(1, 2, figsize=(10, 4), sharex=True)
    for name in ("algae", "oxygen"):
        left.plot(times, data[:, SPECIES.index(name)], label=name)
    left.set_xlabel("t (s)")
    left.set_ylabel("concentration (g/m^3)")
    left.legend()
    left.grid(True, alpha=0.3)
    for idx, name in enumerate(SPECIES):
        if name in ("algae", "oxygen"):
            continue
        right.plot(times, data[:, idx], label=name)
    right.set_xlabel("t (s)")
    right.legend(fontsize="small")
    right.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
