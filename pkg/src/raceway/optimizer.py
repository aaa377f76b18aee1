"""Derivative-free search over the control box.

A hand-rolled Nelder-Mead simplex drives the expensive coupled runs: it
needs nothing but function values, tolerates the noise floor of the
solvers, and its handful of coefficients are easy to pin down for
reproducibility.  Box constraints enter through an exterior quadratic
penalty scaled off the objective magnitude at the start point, so the
simplex may wander outside but is pulled back smoothly.

Vertex ordering breaks value ties by insertion order, simulations are
cached by exact control value, and every move is recorded, which makes
whole optimization runs bit-reproducible.
"""

from dataclasses import dataclass, replace
import logging
import math

import numpy as np

from .errors import ConfigurationError, OptimizationError, SimulationError
from .objective import Controls, simulate

log = logging.getLogger(__name__)

# exterior penalty weight per unit of |j_tilde| at the start point
_BOUND_WEIGHT_SCALE = 1.0e6


@dataclass(frozen=True)
class NelderMeadOptions:
    """Simplex coefficients, stopping tests and the initial spread.

    initial_step gives the per-dimension offsets of the starting simplex;
    None defers to the caller (optimize_raceway uses 10% of the box
    width, bare nelder_mead 10% of the start magnitude).  max_evals is
    an exact cap on objective calls for when each call is a long
    simulation; None leaves the budget open.
    """

    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5
    x_tol: float = 1.0e-8
    f_tol: float = 1.0e-8
    max_iters: int = 200
    max_evals: object = None
    initial_step: object = None

    def __post_init__(self):
        if self.reflection <= 0.0:
            raise ConfigurationError("reflection coefficient must be positive")
        if self.expansion <= 1.0:
            raise ConfigurationError("expansion coefficient must exceed 1")
        if not 0.0 < self.contraction < 1.0:
            raise ConfigurationError("contraction coefficient must be in (0, 1)")
        if not 0.0 < self.shrink < 1.0:
            raise ConfigurationError("shrink coefficient must be in (0, 1)")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be at least 1")
        if self.max_evals is not None and self.max_evals < 1:
            raise ConfigurationError("max_evals must be at least 1 when set")
        if self.x_tol < 0.0 or self.f_tol < 0.0:
            raise ConfigurationError("tolerances must be nonnegative")


@dataclass(frozen=True)
class TraceRecord:
    """Simplex snapshot at the top of one iteration."""

    iteration: int
    move: str             # init, reflect, expand, contract or shrink
    simplex: np.ndarray   # (d + 1, d), best vertex first
    values: np.ndarray    # (d + 1,)
    best_point: np.ndarray
    best_value: float


@dataclass(frozen=True)
class OptimTrace:
    """Full history of one minimization.

    n_evaluations counts objective calls made by the simplex loop;
    reports, filled by optimize_raceway, maps exact control pairs to
    their ObjectiveReport (None where the simulation failed).
    """

    records: tuple
    n_evaluations: int
    reason: str           # which stopping test fired
    reports: dict = None

    @property
    def best_values(self):
        return np.array([r.best_value for r in self.records])


def bound_penalty(x, bounds, weight):
    """Exterior quadratic penalty for the control box.

    weight times the squared distance to the box, summed per coordinate;
    exactly zero inside, continuous across the faces.
    """
    if weight <= 0.0:
        raise ConfigurationError("penalty weight must be positive")
    x = np.asarray(x, dtype=float)
    below = np.maximum(bounds.low - x, 0.0)
    above = np.maximum(x - bounds.high, 0.0)
    return float(weight * ((below**2).sum() + (above**2).sum()))


class _OutOfEvaluations(Exception):
    """Internal signal: the evaluation budget ran out mid-move."""


def nelder_mead(f, x0, opts):
    """Minimize f over d dimensions from x0; returns (x, f(x), trace).

    Standard simplex moves with the configured coefficients.  Vertices
    compare by (value, insertion index) so ties cannot reorder the
    simplex between runs.  NaN values count as +inf; the run fails only
    if the whole starting simplex is infinite.  Stops when the largest
    coordinate spread drops below x_tol, the value spread over the
    simplex drops below f_tol, after max_iters moves, or exactly at
    max_evals objective calls, abandoning a half-finished move.
    """
    x0 = np.asarray(x0, dtype=float)
    d = x0.size
    step = opts.initial_step
    if step is None:
        step = 0.1 * np.maximum(np.abs(x0), 1.0)
    step = np.broadcast_to(np.asarray(step, dtype=float), (d,))
    if np.any(step == 0.0):
        raise ConfigurationError("initial_step must be nonzero in every "
                                 "dimension")
    if opts.max_evals is not None and opts.max_evals < d + 1:
        raise ConfigurationError("max_evals must cover the d + 1 calls of "
                                 "the starting simplex")

    n_evals = 0

    def call(x):
        nonlocal n_evals
        if opts.max_evals is not None and n_evals >= opts.max_evals:
            raise _OutOfEvaluations
        n_evals += 1
        value = float(f(x))
        return math.inf if math.isnan(value) else value

    # vertex = [value, insertion id, point]; ids break value ties
    vertices = [[call(x0), 0, x0.copy()]]
    for i in range(d):
        point = x0.copy()
        point[i] += step[i]
        vertices.append([call(point), i + 1, point])
    if not any(math.isfinite(v[0]) for v in vertices):
        raise OptimizationError("objective is infinite on the whole "
                                "starting simplex")
    next_id = d + 1

    records = []
    move = "init"
    iteration = 0
    while True:
        vertices.sort(key=lambda v: (v[0], v[1]))
        points = np.array([v[2] for v in vertices])
        values = np.array([v[0] for v in vertices])
        records.append(TraceRecord(
            iteration=iteration, move=move, simplex=points, values=values,
            best_point=points[0].copy(), best_value=values[0]))

        diameter = np.abs(points[1:] - points[0]).max()
        if diameter < opts.x_tol:
            reason = "x_tol"
            break
        spread = values[-1] - values[0]
        if spread < opts.f_tol:
            reason = "f_tol"
            break
        if iteration >= opts.max_iters:
            reason = "max_iters"
            break
        if opts.max_evals is not None and n_evals >= opts.max_evals:
            reason = "max_evals"
            break

        try:
            centroid = points[:-1].mean(axis=0)
            worst = vertices[-1]
            reflected = centroid + opts.reflection * (centroid - worst[2])
            f_reflected = call(reflected)

            if f_reflected < values[0]:
                expanded = centroid + opts.expansion * (reflected - centroid)
                f_expanded = call(expanded)
                if f_expanded < f_reflected:
                    vertices[-1] = [f_expanded, next_id, expanded]
                    move = "expand"
                else:
                    vertices[-1] = [f_reflected, next_id, reflected]
                    move = "reflect"
                next_id += 1
            elif f_reflected < values[-2]:
                vertices[-1] = [f_reflected, next_id, reflected]
                next_id += 1
                move = "reflect"
            else:
                if f_reflected < values[-1]:
                    contracted = centroid + opts.contraction * (reflected
                                                                - centroid)
                else:
                    contracted = centroid - opts.contraction * (centroid
                                                                - worst[2])
                f_contracted = call(contracted)
                accept = (f_contracted <= f_reflected
                          if f_reflected < values[-1]
                          else f_contracted < values[-1])
                if accept:
                    vertices[-1] = [f_contracted, next_id, contracted]
                    next_id += 1
                    move = "contract"
                else:
                    best_point = vertices[0][2]
                    for v in vertices[1:]:
                        point = best_point + opts.shrink * (v[2] - best_point)
                        v[:] = [call(point), next_id, point]
                        next_id += 1
                    move = "shrink"
        except _OutOfEvaluations:
            # vertices replaced before the budget ran out keep their new
            # values; the half-finished move is dropped
            vertices.sort(key=lambda v: (v[0], v[1]))
            reason = "max_evals"
            break
        iteration += 1

    best = vertices[0]
    trace = OptimTrace(records=tuple(records), n_evaluations=n_evals,
                       reason=reason)
    return best[2].copy(), best[0], trace


def optimize_raceway(start, bounds, mesh, hydro_config, paddle, bio_params,
                     forcings, initial_concentrations, spec, options=None):
    """Minimize the penalized cost over the control box.

    Runs Nelder-Mead on j_tilde plus the exterior box penalty, starting
    from the given Controls with a simplex spread of 10% of the box
    width per dimension (unless options says otherwise).  Each control
    pair is simulated at most once; failed simulations score +inf and
    are logged rather than aborting the search.  A zero-width box skips
    the search and evaluates its single feasible point.

    The returned point is the best evaluated point inside the box; only
    when no evaluation landed in the box does the least penalized point
    stand in.  (The raw simplex optimum of a face minimum sits a hair
    outside, where the penalty gradient balances the cost gradient.)

    Returns (best Controls, its ObjectiveReport, OptimTrace); the trace
    carries every simulation report keyed by exact control pair.
    """
    if options is None:
        options = NelderMeadOptions()

    cache = {}
    reports = {}

    def evaluate(x):
        key = (float(x[0]), float(x[1]))
        if key in cache:
            return cache[key]
        if not all(math.isfinite(c) and c > 0.0 for c in key):
            value, report = math.inf, None
        else:
            try:
                _, _, report = simulate(
                    Controls(height=key[0], omega=key[1]), mesh,
                    hydro_config, paddle, bio_params, forcings,
                    initial_concentrations, spec)
                value = report.j_tilde
            except SimulationError as err:
                log.warning("simulation failed at height=%.6g omega=%.6g: %s",
                            key[0], key[1], err)
                value, report = math.inf, None
        cache[key] = value
        reports[key] = report
        return value

    widths = bounds.high - bounds.low
    if np.all(widths == 0.0):
        # the feasible set is one point; nothing to search
        point = bounds.low
        value = evaluate(point)
        key = (float(point[0]), float(point[1]))
        if not math.isfinite(value):
            raise OptimizationError(
                f"objective failed at the only feasible point {key}")
        record = TraceRecord(
            iteration=0, move="init", simplex=point[None, :].copy(),
            values=np.array([value]), best_point=point.copy(),
            best_value=value)
        trace = OptimTrace(records=(record,), n_evaluations=1,
                           reason="degenerate", reports=reports)
        return Controls(height=key[0], omega=key[1]), reports[key], trace

    start_value = evaluate(start.as_array())
    if not math.isfinite(start_value):
        raise OptimizationError(
            f"objective failed at the start point {start}")
    weight = _BOUND_WEIGHT_SCALE * max(1.0, abs(start_value))

    if options.initial_step is None:
        # zero-width coordinates still get a nonzero spread; the penalty
        # pins them back to the degenerate value
        step = 0.1 * np.where(widths > 0.0, widths,
                              np.maximum(np.abs(bounds.low), 1.0))
        options = replace(options, initial_step=tuple(step))

    def objective(x):
        return evaluate(x) + bound_penalty(x, bounds, weight)

    _, _, trace = nelder_mead(objective, start.as_array(), options)

    finite = {k: v for k, v in cache.items() if math.isfinite(v)}
    in_box = {k: v for k, v in finite.items()
              if bound_penalty(np.array(k), bounds, weight) == 0.0}
    candidates = in_box or {
        k: v + bound_penalty(np.array(k), bounds, weight)
        for k, v in finite.items()}
    best_key = min(candidates, key=lambda k: (candidates[k], k))
    best = Controls(height=best_key[0], omega=best_key[1])
    return best, reports[best_key], replace(trace, reports=reports)
