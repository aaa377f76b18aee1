"""Zero-dimensional perfectly mixed reactor for the species kinetics.

Integrates the same eight-species right-hand side as the transported
model, but at a single point with a fixed light path, using the classical
fourth-order Runge-Kutta scheme.  With uniform fields, no flow, and
depth-independent light, the full simulator must reproduce this
trajectory, which makes the reactor the reference oracle for the
reaction half of the transport step.

Example:

    >>> from raceway.bio import BioParams, constant_forcings
    >>> from raceway.reactor import ReactorState, integrate
    >>> state = ReactorState.from_values(
    ...     [70.0, 1.0, 0.5, 5.0, 2.0, 1.0, 5.0, 8.0])
    >>> times, traj = integrate(state, BioParams(), constant_forcings(),
    ...                         depth=0.15, dt=30.0, n_steps=10)
    >>> traj.shape
    (11, 8)
"""

from dataclasses import dataclass

import numpy as np

from .bio import N_SPECIES, reaction_rhs
from .errors import SimulationError


@dataclass(frozen=True)
class ReactorState:
    concentrations: np.ndarray   # (8,)
    time: float = 0.0

    @classmethod
    def from_values(cls, values, time=0.0):
        values = np.asarray(values, dtype=float)
        if values.shape != (N_SPECIES,):
            raise ValueError(f"need {N_SPECIES} concentrations")
        return cls(concentrations=values.copy(), time=time)


def rk4_step(state, params, forcings, depth, dt):
    """One classical Runge-Kutta step of the mixed-reactor ODE."""
    c = state.concentrations
    t = state.time

    k1 = reaction_rhs(params, forcings, c, depth, t)
    k2 = reaction_rhs(params, forcings, c + 0.5 * dt * k1, depth, t + 0.5 * dt)
    k3 = reaction_rhs(params, forcings, c + 0.5 * dt * k2, depth, t + 0.5 * dt)
    k4 = reaction_rhs(params, forcings, c + dt * k3, depth, t + dt)
    new = c + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    if not np.isfinite(new).all():
        raise SimulationError(
            f"mixed reactor produced a non-finite state at t={t + dt}: {new}"
        )
    return ReactorState(concentrations=new, time=t + dt)


def integrate(state, params, forcings, depth, dt, n_steps):
    """March n_steps >= 1 from the given state.

    Returns (times, trajectory) with trajectory[0] the initial state and
    shape (n_steps + 1, 8).
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    times = state.time + dt * np.arange(n_steps + 1)
    traj = np.empty((n_steps + 1, N_SPECIES))
    traj[0] = state.concentrations
    current = state
    for n in range(n_steps):
        current = rk4_step(current, params, forcings, depth, dt)
        traj[n + 1] = current.concentrations
    return times, traj
