"""Run configuration: flat dotted-key files and their validation.

The on-disk format is one `block.key = value` assignment per line with
`#` comments, so configs diff cleanly and parse trivially.  Loading
fills defaults for every missing key, rejects keys outside the schema,
casts each value by its declared type, and then constructs the domain
objects so every module's own invariants run at load time.  dump_config
renders the resolved configuration back to text at round-trip
precision; loading that echo reproduces the configuration exactly.
"""

from dataclasses import dataclass, fields

from .bio import BioParams, constant_forcings, diurnal_forcings
from .errors import ConfigurationError
from .geometry import RacewayGeometry, build_mesh, validate_geometry
from .hydro import HydroConfig, PaddlewheelSpec
from .objective import ControlBounds, Controls, ObjectiveSpec
from .optimizer import NelderMeadOptions

# initial-concentration keys in bio.SPECIES order
_INITIAL_KEYS = ("A0", "P1_0", "P2_0", "N1_0", "N2_0", "N3_0", "D0", "O0")


def _parse_bool(text):
    if text == "true":
        return True
    if text == "false":
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def _choice(*allowed):
    def parse(text):
        if text in allowed:
            return text
        raise ValueError(f"expected one of {', '.join(allowed)}, got {text!r}")
    return parse


_CASTERS = {float: float, int: int, bool: _parse_bool,
            "float": float, "int": int, "bool": _parse_bool}


def _schema():
    """Ordered key -> (caster, default).  Defaults are the shipped
    scenario, so an empty file is a valid config."""
    hydro = HydroConfig()
    schema = {
        "geometry.L": (float, 20.0),
        "geometry.W": (float, 2.0),
        "geometry.r": (float, 0.2),
        "geometry.R": (float, 2.2),
        "mesh.n_streamwise": (int, 120),
        "mesh.n_transverse": (int, 6),
        "mesh.n_sigma": (int, 6),
        "paddle.F": (float, 10.0),
        "paddle.rho": (float, 0.4),
        "paddle.x1_0": (float, 5.0),
        "paddle.x2_0": (float, 1.2),
        "paddle.x3_0": (float, 0.5),
        "paddle.omega": (float, 0.4),
        "hydro.mu": (float, hydro.viscosity),
        "hydro.dt": (float, hydro.dt),
        "hydro.gravity": (float, hydro.gravity),
        "hydro.div_tol": (float, hydro.div_tol),
        "hydro.pressure_tol": (float, hydro.pressure_solver_tol),
        "hydro.pressure_max_iters": (int, hydro.pressure_max_iters),
        "hydro.max_substeps": (int, hydro.max_substeps),
    }
    for field in fields(BioParams):
        schema["bio." + field.name] = (_CASTERS[field.type], field.default)
    schema.update({
        "bio.forcing": (_choice("constant", "diurnal"), "constant"),
        "bio.temperature": (float, 20.0),
        "bio.light": (float, 1.0),
        "bio.temperature_swing": (float, 2.0),
        "initial.A0": (float, 70.0),
        "initial.P1_0": (float, 1.0),
        "initial.P2_0": (float, 0.5),
        "initial.N1_0": (float, 5.0),
        "initial.N2_0": (float, 2.0),
        "initial.N3_0": (float, 1.0),
        "initial.D0": (float, 5.0),
        "initial.O0": (float, 8.0),
        "initial.H": (float, 0.3),
        "objective.T": (float, 86400.0),
        "objective.C1": (float, 0.0),
        "objective.C2": (float, 4.0),
        "objective.M1": (float, 1.0e3),
        "objective.M2": (float, 1.0e3),
        "objective.cost": (_choice("final", "time_integrated"), "final"),
        "optimizer.h_min": (float, 0.2),
        "optimizer.h_max": (float, 0.5),
        "optimizer.w_min": (float, 0.1),
        "optimizer.w_max": (float, 0.9),
        "optimizer.start_H": (float, 0.3),
        "optimizer.start_omega": (float, 0.4),
        "optimizer.reflection": (float, 1.0),
        "optimizer.expansion": (float, 2.0),
        "optimizer.contraction": (float, 0.5),
        "optimizer.shrink": (float, 0.5),
        "optimizer.x_tol": (float, 1.0e-8),
        "optimizer.f_tol": (float, 1.0e-8),
        "optimizer.max_iters": (int, 200),
        "optimizer.max_evals": (int, 0),
        "output.directory": (str, "out"),
        "output.snapshot_stride": (int, 0),
    })
    return schema


@dataclass(frozen=True, eq=True)
class RunConfig:
    """Validated configuration with every default resolved.

    raw maps every schema key to its resolved value and is what
    dump_config renders; the remaining fields are the constructed
    domain objects the commands consume.
    """

    geometry: RacewayGeometry
    mesh_counts: tuple
    paddle: PaddlewheelSpec
    omega: float              # wheel speed for single evaluations
    hydro: HydroConfig
    bio: BioParams
    forcing: str
    temperature: float
    light: float
    temperature_swing: float
    initial_concentrations: tuple
    initial_height: float
    objective: ObjectiveSpec
    bounds: ControlBounds
    start: Controls
    options: NelderMeadOptions
    output_dir: str
    snapshot_stride: int
    raw: dict

    def make_mesh(self):
        return build_mesh(self.geometry, *self.mesh_counts)

    def make_forcings(self):
        if self.forcing == "diurnal":
            return diurnal_forcings(mean_temperature=self.temperature,
                                    temperature_swing=self.temperature_swing)
        return constant_forcings(temperature=self.temperature,
                                 light=self.light)

    @property
    def controls(self):
        """Control pair of a one-shot simulation."""
        return Controls(height=self.initial_height, omega=self.omega)

    def simulation_args(self, mesh):
        """Positional tail of objective.simulate for this configuration."""
        return (mesh, self.hydro, self.paddle, self.bio,
                self.make_forcings(), self.initial_concentrations,
                self.objective)


def _build(values):
    geometry = RacewayGeometry(
        straight_length=values["geometry.L"],
        channel_width=values["geometry.W"],
        inner_radius=values["geometry.r"],
        outer_radius=values["geometry.R"],
    )
    validate_geometry(geometry)
    mesh_counts = (values["mesh.n_streamwise"], values["mesh.n_transverse"],
                   values["mesh.n_sigma"])
    build_mesh(geometry, *mesh_counts)  # count invariants surface at load

    if values["paddle.F"] < 0.0:
        raise ConfigurationError("paddle.F must be nonnegative")
    paddle = PaddlewheelSpec(
        force_magnitude=values["paddle.F"],
        paddle_length=values["paddle.rho"],
        axis=(values["paddle.x1_0"], values["paddle.x2_0"],
              values["paddle.x3_0"]),
    )

    hydro = HydroConfig(
        viscosity=values["hydro.mu"],
        dt=values["hydro.dt"],
        gravity=values["hydro.gravity"],
        div_tol=values["hydro.div_tol"],
        pressure_solver_tol=values["hydro.pressure_tol"],
        pressure_max_iters=values["hydro.pressure_max_iters"],
        max_substeps=values["hydro.max_substeps"],
    )
    if hydro.dt <= 0.0:
        raise ConfigurationError("hydro.dt must be positive")
    if hydro.viscosity < 0.0 or hydro.gravity < 0.0:
        raise ConfigurationError("hydro.mu and hydro.gravity must be "
                                 "nonnegative")
    if hydro.div_tol <= 0.0 or hydro.pressure_solver_tol <= 0.0:
        raise ConfigurationError("hydro tolerances must be positive")
    if hydro.pressure_max_iters < 1 or hydro.max_substeps < 1:
        raise ConfigurationError("hydro iteration limits must be at least 1")

    bio = BioParams(**{f.name: values["bio." + f.name]
                       for f in fields(BioParams)})

    concentrations = tuple(values["initial." + key] for key in _INITIAL_KEYS)
    for key, value in zip(_INITIAL_KEYS, concentrations):
        if value < 0.0:
            raise ConfigurationError(
                f"initial.{key} must be nonnegative, got {value}")

    objective = ObjectiveSpec(
        horizon=values["objective.T"],
        velocity_floor=values["objective.C1"],
        oxygen_floor=values["objective.C2"],
        weight_velocity=values["objective.M1"],
        weight_oxygen=values["objective.M2"],
        use_time_integrated_cost=values["objective.cost"] == "time_integrated",
    )
    bounds = ControlBounds(
        height_min=values["optimizer.h_min"],
        height_max=values["optimizer.h_max"],
        omega_min=values["optimizer.w_min"],
        omega_max=values["optimizer.w_max"],
    )
    start = Controls(height=values["optimizer.start_H"],
                     omega=values["optimizer.start_omega"])
    options = NelderMeadOptions(
        reflection=values["optimizer.reflection"],
        expansion=values["optimizer.expansion"],
        contraction=values["optimizer.contraction"],
        shrink=values["optimizer.shrink"],
        x_tol=values["optimizer.x_tol"],
        f_tol=values["optimizer.f_tol"],
        max_iters=values["optimizer.max_iters"],
        # zero in the file means no evaluation budget
        max_evals=values["optimizer.max_evals"] or None,
    )

    if not values["output.directory"]:
        raise ConfigurationError("output.directory must not be empty")
    if values["output.snapshot_stride"] < 0:
        raise ConfigurationError("output.snapshot_stride must be "
                                 "nonnegative")

    # validates initial.H and paddle.omega together
    one_shot = Controls(height=values["initial.H"],
                        omega=values["paddle.omega"])

    return RunConfig(
        geometry=geometry,
        mesh_counts=mesh_counts,
        paddle=paddle,
        omega=one_shot.omega,
        hydro=hydro,
        bio=bio,
        forcing=values["bio.forcing"],
        temperature=values["bio.temperature"],
        light=values["bio.light"],
        temperature_swing=values["bio.temperature_swing"],
        initial_concentrations=concentrations,
        initial_height=one_shot.height,
        objective=objective,
        bounds=bounds,
        start=start,
        options=options,
        output_dir=values["output.directory"],
        snapshot_stride=values["output.snapshot_stride"],
        raw=values,
    )


def load_config(path):
    """Parse and validate a config file, resolving all defaults.

    Raises ConfigurationError with the file position for malformed
    lines, values of the wrong type, duplicate keys, and (after the
    whole file is scanned) a list of any unknown keys; domain invariant
    violations propagate from the block constructors.
    """
    schema = _schema()
    values = {key: default for key, (_, default) in schema.items()}

    seen = set()
    unknown = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigurationError(
                    f"{path}:{lineno}: expected `key = value`, got {text!r}")
            key, _, raw = text.partition("=")
            key = key.strip()
            raw = raw.strip()
            if key not in schema:
                unknown.append(f"{key} (line {lineno})")
                continue
            if key in seen:
                raise ConfigurationError(
                    f"{path}:{lineno}: duplicate key {key}")
            seen.add(key)
            caster = schema[key][0]
            try:
                values[key] = caster(raw)
            except ValueError as err:
                raise ConfigurationError(
                    f"{path}:{lineno}: bad value for {key}: {err}") from None
    if unknown:
        raise ConfigurationError(
            f"{path}: unknown keys: " + ", ".join(unknown))
    return _build(values)


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(config):
    """Render the resolved configuration; load_config inverts this."""
    lines = [f"{key} = {_format_value(config.raw[key])}"
             for key in _schema()]
    return "\n".join(lines) + "\n"
