"""Cost, state constraints and the penalized objective for control runs.

A control pair fixes the initial water height and the paddlewheel speed.
Evaluating it means running the coupled flow and species solvers from
still water over a fixed horizon while recording per-step volume
integrals of the fields of interest.  The raw cost is the negated algae
inventory at the final time (optionally its time integral over the whole
run); the state constraints ask for enough time-integrated flow speed
and for the dissolved-oxygen inventory to stay above a floor at every
step.  Constraint shortfalls enter the total through exterior penalties,
so a minimizer sees a single scalar.

Volume integrals use one-point quadrature on the moving sigma mesh:
field value times plan cell area times local layer height, summed over
all cells.
"""

from dataclasses import dataclass, replace
import math

import numpy as np

from .bio import IDX, SpeciesState, step_species
from .errors import ConfigurationError, SimulationError
from .hydro import FlowState, cell_volumes, kinetic_energy, step_flow, total_volume


@dataclass(frozen=True)
class Controls:
    """Decision variables: initial water height (m) and wheel speed (rad/s)."""

    height: float
    omega: float

    def __post_init__(self):
        for name in ("height", "omega"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ConfigurationError(
                    f"{name} must be finite and positive, got {value}")

    def as_array(self):
        return np.array([self.height, self.omega])


@dataclass(frozen=True)
class ControlBounds:
    """Box constraints on the decision variables."""

    height_min: float = 0.2
    height_max: float = 0.5
    omega_min: float = 0.1
    omega_max: float = 0.9

    def __post_init__(self):
        if not 0.0 < self.height_min <= self.height_max:
            raise ConfigurationError(
                f"need 0 < height_min <= height_max, got "
                f"[{self.height_min}, {self.height_max}]")
        if not 0.0 < self.omega_min <= self.omega_max:
            raise ConfigurationError(
                f"need 0 < omega_min <= omega_max, got "
                f"[{self.omega_min}, {self.omega_max}]")

    @property
    def low(self):
        return np.array([self.height_min, self.omega_min])

    @property
    def high(self):
        return np.array([self.height_max, self.omega_max])


@dataclass(frozen=True)
class ObjectiveSpec:
    """Horizon, constraint thresholds and penalty weights.

    The velocity constraint asks the time-integrated speed inventory to
    reach velocity_floor; the oxygen constraint asks the worst per-step
    oxygen inventory to stay above oxygen_floor.  A floor of zero makes
    the corresponding penalty vanish identically.
    """

    horizon: float = 86400.0
    velocity_floor: float = 0.0
    oxygen_floor: float = 4.0
    weight_velocity: float = 1.0e3
    weight_oxygen: float = 1.0e3
    use_time_integrated_cost: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.horizon) and self.horizon >= 0.0):
            raise ConfigurationError(
                f"horizon must be finite and nonnegative, got {self.horizon}")
        if self.velocity_floor < 0.0 or self.oxygen_floor < 0.0:
            raise ConfigurationError("constraint floors must be nonnegative")
        if self.weight_velocity <= 0.0 or self.weight_oxygen <= 0.0:
            raise ConfigurationError("penalty weights must be positive")


@dataclass(frozen=True)
class Timeseries:
    """Per-step diagnostics; row 0 describes the initial state.

    velocity_integral_cum[n] is the dt-weighted sum of the speed
    inventories of steps 1..n, the running left-hand side of the
    velocity constraint.
    """

    step: np.ndarray
    time: np.ndarray
    total_algae: np.ndarray
    total_oxygen: np.ndarray
    kinetic_energy: np.ndarray
    volume: np.ndarray
    velocity_integral_cum: np.ndarray

    def __len__(self):
        return len(self.step)


@dataclass(frozen=True)
class ObjectiveReport:
    """Everything one control evaluation produces besides the states."""

    controls: Controls
    j_raw: float
    velocity_integral: float
    oxygen_min_integral: float
    penalty_velocity: float
    penalty_oxygen: float
    j_tilde: float
    final_algae_mean: float   # volume-mean concentration at the horizon
    timeseries: Timeseries


def volume_integral(field, mesh, surface_height):
    """Integral of a per-cell field over the current water volume."""
    field = np.asarray(field, dtype=float)
    shape = (mesh.n_streamwise, mesh.n_transverse, mesh.n_sigma)
    if field.shape != shape:
        raise ConfigurationError(
            f"field shape {field.shape} does not match the mesh cells {shape}")
    return float((field * cell_volumes(mesh, surface_height)).sum())


def cost_raw(species, mesh, surface_height, spec, dt=None, timeseries=None):
    """Negated algae inventory, the quantity being minimized.

    By default the inventory at the final state.  With
    spec.use_time_integrated_cost the cost is instead the negated time
    integral over the run, assembled from the recorded per-step
    inventories as -dt * sum over steps 1..N; dt and the timeseries are
    then required.
    """
    if spec.use_time_integrated_cost:
        if dt is None or timeseries is None:
            raise ConfigurationError(
                "time-integrated cost needs dt and the recorded timeseries")
        return -float(dt * timeseries.total_algae[1:].sum())
    return -volume_integral(species.species("algae"), mesh, surface_height)


def constraint_velocity(timeseries):
    """Time-integrated speed inventory over the whole run."""
    return float(timeseries.velocity_integral_cum[-1])


def constraint_oxygen(timeseries):
    """Worst per-step oxygen inventory.

    The minimum runs over steps 1..N; for a zero-step run the initial
    row stands in so the value is still defined.
    """
    totals = timeseries.total_oxygen
    if len(totals) > 1:
        totals = totals[1:]
    return float(totals.min())


def penalized_cost(report, spec):
    """Fill in the penalties and the penalized total.

    Shortfalls below the floors enter linearly, weight * max(floor -
    value, 0), so the total equals the raw cost exactly when both
    constraints hold and grows with either violation or weight.
    """
    penalty_v = spec.weight_velocity * max(
        spec.velocity_floor - report.velocity_integral, 0.0)
    penalty_o = spec.weight_oxygen * max(
        spec.oxygen_floor - report.oxygen_min_integral, 0.0)
    return replace(
        report,
        penalty_velocity=penalty_v,
        penalty_oxygen=penalty_o,
        j_tilde=report.j_raw + penalty_v + penalty_o,
    )


def simulate(controls, mesh, hydro_config, paddle, bio_params, forcings,
             initial_concentrations, spec, step_callback=None):
    """Evaluate one control pair with a coupled run from rest.

    The water starts still at uniform depth controls.height and the
    species start uniform at initial_concentrations (eight values in
    bio.SPECIES order).  Each outer step advances the flow and then the
    species on the averaged fluxes, and appends one diagnostics row; the
    horizon is rounded to a whole number of steps of hydro_config.dt.

    step_callback(step, flow, species), when given, is called once for
    the initial state and once after every step; it is meant for
    snapshot writers and must not mutate its arguments.

    Returns (flow, species, report) at the final time.  Step failures
    propagate unchanged apart from the step index prepended to the
    message.
    """
    n_steps = int(round(spec.horizon / hydro_config.dt))
    flow = FlowState.at_rest(mesh, controls.height)
    species = SpeciesState.uniform(mesh, initial_concentrations)
    algae = species.concentrations[IDX["algae"]]
    oxygen = species.concentrations[IDX["oxygen"]]

    steps = [0]
    times = [0.0]
    total_algae = [volume_integral(algae, mesh, flow.surface_height)]
    total_oxygen = [volume_integral(oxygen, mesh, flow.surface_height)]
    energy = [kinetic_energy(flow)]
    volumes = [total_volume(flow)]
    velocity_cum = [0.0]
    if step_callback is not None:
        step_callback(0, flow, species)

    for n in range(1, n_steps + 1):
        try:
            flow = step_flow(flow, hydro_config, paddle, controls.omega)
            species = step_species(species, flow, bio_params, forcings,
                                   hydro_config.dt)
        except SimulationError as err:
            message = err.args[0] if err.args else str(err)
            err.args = (f"step {n} of {n_steps}: {message}",) + err.args[1:]
            raise

        eta = flow.surface_height
        speed = np.sqrt((flow.velocity**2).sum(axis=0))
        algae = species.concentrations[IDX["algae"]]
        oxygen = species.concentrations[IDX["oxygen"]]
        steps.append(n)
        times.append(flow.time)
        total_algae.append(volume_integral(algae, mesh, eta))
        total_oxygen.append(volume_integral(oxygen, mesh, eta))
        energy.append(kinetic_energy(flow))
        volumes.append(total_volume(flow))
        velocity_cum.append(velocity_cum[-1]
                            + hydro_config.dt * volume_integral(speed, mesh, eta))
        if step_callback is not None:
            step_callback(n, flow, species)

    timeseries = Timeseries(
        step=np.array(steps),
        time=np.array(times),
        total_algae=np.array(total_algae),
        total_oxygen=np.array(total_oxygen),
        kinetic_energy=np.array(energy),
        volume=np.array(volumes),
        velocity_integral_cum=np.array(velocity_cum),
    )
    j_raw = cost_raw(species, mesh, flow.surface_height, spec,
                     dt=hydro_config.dt, timeseries=timeseries)
    report = ObjectiveReport(
        controls=controls,
        j_raw=j_raw,
        velocity_integral=constraint_velocity(timeseries),
        oxygen_min_integral=constraint_oxygen(timeseries),
        penalty_velocity=0.0,
        penalty_oxygen=0.0,
        j_tilde=j_raw,
        final_algae_mean=timeseries.total_algae[-1] / timeseries.volume[-1],
        timeseries=timeseries,
    )
    return flow, species, penalized_cost(report, spec)
