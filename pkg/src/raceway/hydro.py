"""Free-surface channel flow driven by a rotating paddlewheel body force.

The solver advances the incompressible momentum equations on the plan
mesh with uniform sigma layers over the local water depth.  Velocities
are Cartesian 3-vectors at cell centers; volume fluxes live on faces.
Each substep applies explicit upwind advection, explicit viscous
diffusion with free-slip walls and a stress-free surface, the
hydrostatic surface-slope force, and the paddle force, then projects the
face fluxes onto a discretely divergence-free field through a pressure
solve with the surface held at zero pressure.  The surface height then
moves with the projected flux through the top face of every column,
which conserves the total water volume to round-off by construction.

The surface-slope force -g grad(eta) acts on every layer and is what
lets the surface relax back after the paddle deforms it; without it a
steadily forced run piles water up against the wheel until a column runs
dry.  It is computed in deviation form so a perfectly flat surface
produces exactly zero force and rest remains an exact equilibrium.

The paddlewheel is modelled as a body force confined to a cylinder
around the wheel axis, rotating in the vertical streamwise plane:

    force = magnitude * omega^2 * dist^2 * (cos(omega t), 0, sin(omega t))

with dist the distance from the axis, zero outside the cylinder and
above the water surface.  The force vanishes on the axis and peaks at
the blade tips, so its magnitude never exceeds
magnitude * omega^2 * paddle_length^2.

An outer step of cfg.dt is split internally into as many equal-stability
substeps as the advective and diffusive limits demand; the split is a
deterministic function of the state.
"""

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as sparse_linalg

from .errors import CFLError, ConfigurationError, DryCellError, PressureSolveError

# combined advection + diffusion stability target per substep
_STABILITY_NUMBER = 0.8
# Rebuild the pressure factorization when the mean depth strays this far
# (relative) from the surface it was assembled on.  Flux corrections use
# the factored operator's own transmissibilities, so divergence removal
# stays exact under a stale metric; only the pressure field's geometric
# fidelity degrades.  Surface waves average out of the mean, so a closed
# pond run keeps one factorization for its whole duration.
_REFACTOR_DRIFT = 0.2


@dataclass(frozen=True)
class PaddlewheelSpec:
    """Paddlewheel position and force scale.

    force_magnitude has units of acceleration * s^2 / m^2 so that
    force_magnitude * omega^2 * dist^2 is an acceleration.  paddle_length
    is the blade length, which is also the radius of the forced cylinder.
    The axis runs across the channel at the given (x1, x2, x3).
    """

    force_magnitude: float = 10.0
    paddle_length: float = 0.4
    axis: tuple = (5.0, 1.2, 0.5)

    def __post_init__(self):
        if not self.paddle_length > 0.0:
            raise ConfigurationError("paddle_length must be positive")
        if self.axis[2] < self.paddle_length:
            raise ConfigurationError(
                "paddle axis must sit at least one blade length above "
                f"the bottom, got axis height {self.axis[2]} with blade "
                f"length {self.paddle_length}"
            )


@dataclass(frozen=True)
class HydroConfig:
    viscosity: float = 1.0e-4         # m^2/s, eddy scale
    dt: float = 0.5                   # s, outer step
    gravity: float = 9.81             # m/s^2; 0 disables surface relaxation
    div_tol: float = 1.0e-8           # cell volume fraction per outer step
    pressure_solver_tol: float = 1.0e-10  # relative residual for the solve
    pressure_max_iters: int = 50      # refinement passes before giving up
    max_substeps: int = 200           # stability substeps per outer step


@dataclass
class FlowState:
    """Velocity, pressure, surface height and the projected face fluxes.

    flux_streamwise[i, j, k] crosses the face between cells i and i+1
    (periodic); flux_transverse[i, j, k] crosses the face between
    transverse cells j-1 and j, with rows 0 and nt pinned to zero at the
    walls; flux_vertical[i, j, k] crosses the sigma interface k, with the
    bottom row zero and the top row carrying the surface motion.

    After a step the stored fluxes are the time averages over the step's
    internal substeps, so they are divergence-free to solver precision
    and reproduce the realized surface change exactly:
    surface_height = surface_height_prev + dt * flux_vertical_top / area.
    Scalar transport driven by these fluxes therefore sees volumes and
    fluxes that agree to round-off.
    """

    mesh: object
    velocity: np.ndarray            # (3, ns, nt, nk)
    pressure: np.ndarray            # (ns, nt, nk)
    surface_height: np.ndarray      # (ns, nt)
    time: float
    flux_streamwise: np.ndarray     # (ns, nt, nk)
    flux_transverse: np.ndarray     # (ns, nt+1, nk)
    flux_vertical: np.ndarray       # (ns, nt, nk+1)
    surface_height_prev: np.ndarray = None
    max_div_fraction: float = 0.0   # worst cell volume defect, last step
    substeps_last: int = 0
    _pressure_cache: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.surface_height_prev is None:
            self.surface_height_prev = self.surface_height.copy()

    @classmethod
    def at_rest(cls, mesh, water_height, time=0.0):
        if water_height <= 0.0:
            raise DryCellError("initial water height must be positive")
        shape = (mesh.n_streamwise, mesh.n_transverse, mesh.n_sigma)
        return cls(
            mesh=mesh,
            velocity=np.zeros((3,) + shape),
            pressure=np.zeros(shape),
            surface_height=np.full(shape[:2], float(water_height)),
            time=time,
            flux_streamwise=np.zeros(shape),
            flux_transverse=np.zeros((shape[0], shape[1] + 1, shape[2])),
            flux_vertical=np.zeros(shape[:2] + (shape[2] + 1,)),
        )

    @classmethod
    def from_fields(cls, mesh, velocity, pressure, surface_height, time=0.0):
        """Build a state from cell data, interpolating the face fluxes."""
        velocity = np.asarray(velocity, dtype=float)
        surface_height = np.asarray(surface_height, dtype=float)
        fs, ft, fv = _face_fluxes(mesh, velocity, surface_height)
        return cls(
            mesh=mesh, velocity=velocity.copy(),
            pressure=np.asarray(pressure, dtype=float).copy(),
            surface_height=surface_height.copy(), time=time,
            flux_streamwise=fs, flux_transverse=ft, flux_vertical=fv,
        )


def layer_heights(mesh, surface_height):
    """Height of each sigma layer per column, (ns, nt)."""
    return surface_height / mesh.n_sigma


def cell_volumes(mesh, surface_height):
    """(ns, nt, nk); layers in one column share the same volume."""
    h = layer_heights(mesh, surface_height)
    vol = (mesh.plan_cell_areas * h)[:, :, None]
    return np.broadcast_to(vol, vol.shape[:2] + (mesh.n_sigma,))


def cell_center_heights(mesh, surface_height):
    """Physical x3 of every cell center, (ns, nt, nk)."""
    return surface_height[:, :, None] * mesh.sigma_centers[None, None, :]


def total_volume(state):
    return float((state.surface_height * state.mesh.plan_cell_areas).sum())


def kinetic_energy(state):
    """0.5 * integral of |v|^2 over the water volume."""
    vol = cell_volumes(state.mesh, state.surface_height)
    return float(0.5 * ((state.velocity**2).sum(axis=0) * vol).sum())


def paddle_region(paddle, geom, mesh, surface_height):
    """Cells inside the forced cylinder: boolean mask (ns, nt, nk).

    A cell belongs to the region when its center lies within the channel
    band r <= x2 <= R, within paddle.radius of the wheel axis in the
    vertical streamwise plane, and below the local surface.
    """
    x1 = mesh.cell_centers_plan[:, :, 0][:, :, None]
    x2 = mesh.cell_centers_plan[:, :, 1][:, :, None]
    x3 = cell_center_heights(mesh, surface_height)
    dist_sq = (x1 - paddle.axis[0]) ** 2 + (x3 - paddle.axis[2]) ** 2
    return (
        (x2 >= geom.inner_radius) & (x2 <= geom.outer_radius)
        & (dist_sq <= paddle.paddle_length**2)
        & (x3 < surface_height[:, :, None])
    )


def paddle_force(paddle, omega, points, t, in_region):
    """Body force (per unit mass) at the given points, shape (..., 3).

    The magnitude is force_magnitude * omega^2 * dist^2, gated by the
    region mask; the direction rotates in the vertical streamwise plane
    at rate omega.
    """
    points = np.asarray(points, dtype=float)
    x1 = points[..., 0]
    x3 = points[..., 2]
    dist_sq = (x1 - paddle.axis[0]) ** 2 + (x3 - paddle.axis[2]) ** 2
    magnitude = (paddle.force_magnitude * omega**2 * dist_sq
                 * np.asarray(in_region))
    out = np.zeros(points.shape)
    out[..., 0] = magnitude * np.cos(omega * t)
    out[..., 2] = magnitude * np.sin(omega * t)
    return out


def divergence(state):
    """Net outward volume flux per cell from the stored face fluxes, m^3/s."""
    fs, ft, fv = (state.flux_streamwise, state.flux_transverse,
                  state.flux_vertical)
    return (fs - np.roll(fs, 1, axis=0)
            + ft[:, 1:, :] - ft[:, :-1, :]
            + fv[:, :, 1:] - fv[:, :, :-1])


def divergence_fraction(state, dt):
    """Worst cell volume defect per step of length dt, dimensionless."""
    vol = cell_volumes(state.mesh, state.surface_height)
    return float((np.abs(divergence(state)) * dt / vol).max())


def update_surface(surface_height, flow, dt):
    """Move the surface with the projected flux through each column top.

    For a projected flux field this is the kinematic surface condition in
    conservative form: the top-face flux already accounts for the surface
    slope through the column-integrated lateral fluxes, so the total
    volume is conserved exactly.
    """
    return _advance_surface(
        surface_height, flow.flux_vertical, flow.mesh.plan_cell_areas, dt
    )


def _advance_surface(surface_height, flux_vertical, areas, dt):
    new = surface_height + dt * flux_vertical[:, :, -1] / areas
    if (new <= 0.0).any():
        i, j = np.unravel_index(int(np.argmin(new)), new.shape)
        raise DryCellError(
            f"surface height fell to {new[i, j]:.3e} m at plan cell "
            f"({i}, {j})"
        )
    return new


def _face_fluxes(mesh, velocity, surface_height):
    """Interpolate cell velocities to face volume fluxes.

    Walls and bottom are no-penetration; the top face uses the top-cell
    vertical velocity one-sided, so a column's flux balance determines
    the surface motion.
    """
    nt, nk = mesh.n_transverse, mesh.n_sigma
    h = layer_heights(mesh, surface_height)
    v1, v2, v3 = velocity

    s_vec = mesh.face_normals_streamwise * mesh.face_lengths_streamwise[..., None]
    h_face = 0.5 * (h + np.roll(h, -1, axis=0))
    vn = 0.5 * ((v1 + np.roll(v1, -1, axis=0)) * s_vec[:, :, 0, None]
                + (v2 + np.roll(v2, -1, axis=0)) * s_vec[:, :, 1, None])
    fs = vn * h_face[:, :, None]

    t_vec = mesh.face_normals_transverse * mesh.face_lengths_transverse[..., None]
    ft = np.zeros((mesh.n_streamwise, nt + 1, nk))
    h_face = 0.5 * (h[:, :-1] + h[:, 1:])
    vn = 0.5 * ((v1[:, :-1] + v1[:, 1:]) * t_vec[:, 1:nt, 0, None]
                + (v2[:, :-1] + v2[:, 1:]) * t_vec[:, 1:nt, 1, None])
    ft[:, 1:nt] = vn * h_face[:, :, None]

    fv = np.zeros((mesh.n_streamwise, nt, nk + 1))
    area = mesh.plan_cell_areas[:, :, None]
    fv[:, :, 1:nk] = 0.5 * (v3[:, :, :-1] + v3[:, :, 1:]) * area
    fv[:, :, nk] = v3[:, :, nk - 1] * mesh.plan_cell_areas
    return fs, ft, fv


def _surface_gradient(mesh, surface_height):
    """Plan gradient of the surface height, (ns, nt, 2).

    Green-Gauss in deviation form: each face contributes its normal area
    vector times (face value - cell value), with wall faces taking the
    cell's own value.  A constant field therefore gives exactly zero.
    """
    nt = mesh.n_transverse
    eta = surface_height
    grad = np.zeros((mesh.n_streamwise, nt, 2))

    s_vec = (mesh.face_normals_streamwise
             * mesh.face_lengths_streamwise[..., None])
    eta_face = 0.5 * (eta + np.roll(eta, -1, axis=0))
    grad += s_vec * (eta_face - eta)[:, :, None]
    grad -= np.roll(s_vec * (eta_face - np.roll(eta, -1, axis=0))[:, :, None],
                    1, axis=0)

    t_vec = (mesh.face_normals_transverse
             * mesh.face_lengths_transverse[..., None])
    eta_face = 0.5 * (eta[:, :-1] + eta[:, 1:])
    grad[:, :-1] += t_vec[:, 1:nt] * (eta_face - eta[:, :-1])[:, :, None]
    grad[:, 1:] -= t_vec[:, 1:nt] * (eta_face - eta[:, 1:])[:, :, None]

    return grad / mesh.plan_cell_areas[:, :, None]


def _sigma_relative_vertical(flux_vertical, nk):
    """Vertical fluxes seen from the stretching sigma mesh; zero at both
    the bottom and the moving surface."""
    sigma_edges = np.arange(nk + 1) / nk
    return flux_vertical - sigma_edges[None, None, :] * flux_vertical[:, :, -1:]


class _FluxParts:
    """Positive and negative parts of the face fluxes, shared between the
    stability bound and the upwind tendency within one substep."""

    def __init__(self, fs, ft, fv_rel):
        self.fs_pos = np.maximum(fs, 0.0)
        self.fs_neg = self.fs_pos - fs
        self.fs_pos_prev = np.roll(self.fs_pos, 1, axis=0)
        self.fs_neg_prev = np.roll(self.fs_neg, 1, axis=0)
        self.ft_pos = np.maximum(ft, 0.0)
        self.ft_neg = self.ft_pos - ft
        self.fv_pos = np.maximum(fv_rel, 0.0)
        self.fv_neg = self.fv_pos - fv_rel


def _upwind_tendency(fields, parts, volumes):
    """Advective upwind tendency for stacked cell fields (m, ns, nt, nk).

    Written in inflow form: each face brings in (neighbor - self) at the
    inflow rate, so constant fields are transported exactly.
    """
    out = parts.fs_neg * (np.roll(fields, -1, axis=1) - fields)
    out += parts.fs_pos_prev * (np.roll(fields, 1, axis=1) - fields)

    out[:, :, :-1, :] += parts.ft_neg[:, 1:-1, :] * (
        fields[:, :, 1:, :] - fields[:, :, :-1, :])
    out[:, :, 1:, :] += parts.ft_pos[:, 1:-1, :] * (
        fields[:, :, :-1, :] - fields[:, :, 1:, :])

    out[:, :, :, :-1] += parts.fv_neg[:, :, 1:-1] * (
        fields[:, :, :, 1:] - fields[:, :, :, :-1])
    out[:, :, :, 1:] += parts.fv_pos[:, :, 1:-1] * (
        fields[:, :, :, :-1] - fields[:, :, :, 1:])

    return out / volumes


def _viscous_tendency(velocity, mesh, surface_height, viscosity, volumes):
    """Explicit viscous update: full exchange across interior faces,
    normal-component damping at walls and the bottom, stress-free top."""
    h = layer_heights(mesh, surface_height)
    out = np.zeros_like(velocity)

    h_face = 0.5 * (h + np.roll(h, -1, axis=0))
    t_s = (mesh.face_lengths_streamwise / mesh.spacing_streamwise
           * h_face)[None, :, :, None]
    flux = t_s * (np.roll(velocity, -1, axis=1) - velocity)
    out += flux
    out -= np.roll(flux, 1, axis=1)

    h_face = 0.5 * (h[:, :-1] + h[:, 1:])
    t_t = (mesh.face_lengths_transverse[:, 1:-1]
           / mesh.spacing_transverse[:, 1:-1] * h_face)[None, :, :, None]
    flux = t_t * (velocity[:, :, 1:, :] - velocity[:, :, :-1, :])
    out[:, :, :-1, :] += flux
    out[:, :, 1:, :] -= flux

    t_v = (mesh.plan_cell_areas / h)[None, :, :, None]
    flux = t_v * (velocity[:, :, :, 1:] - velocity[:, :, :, :-1])
    out[:, :, :, :-1] += flux
    out[:, :, :, 1:] -= flux

    # bottom: no-penetration damps the vertical component only
    t_bottom = mesh.plan_cell_areas / (0.5 * h)
    out[2, :, :, 0] -= t_bottom * velocity[2, :, :, 0]

    # side walls: damp the wall-normal projection of the plan velocity
    for j_wall, j_cell in ((0, 0), (mesh.n_transverse, mesh.n_transverse - 1)):
        normal = mesh.face_normals_transverse[:, j_wall]   # (ns, 2)
        t_w = (mesh.face_lengths_transverse[:, j_wall]
               / mesh.spacing_transverse[:, j_wall])[:, None] * h[:, j_cell, None]
        v_n = (velocity[0, :, j_cell, :] * normal[:, 0:1]
               + velocity[1, :, j_cell, :] * normal[:, 1:2])
        out[0, :, j_cell, :] -= t_w * v_n * normal[:, 0:1]
        out[1, :, j_cell, :] -= t_w * v_n * normal[:, 1:2]

    return viscosity * out / volumes


def _stability_rate(parts, mesh, surface_height, viscosity, gravity):
    """Largest advective + diffusive + gravity-wave rate over cells, 1/s."""
    h = layer_heights(mesh, surface_height)
    volumes = (mesh.plan_cell_areas * h)[:, :, None]

    outflow = parts.fs_pos + parts.fs_neg_prev
    outflow += parts.ft_pos[:, 1:, :] + parts.ft_neg[:, :-1, :]
    outflow += parts.fv_pos[:, :, 1:] + parts.fv_neg[:, :, :-1]
    inflow = parts.fs_neg + parts.fs_pos_prev
    inflow += parts.ft_neg[:, 1:, :] + parts.ft_pos[:, :-1, :]
    inflow += parts.fv_neg[:, :, 1:] + parts.fv_pos[:, :, :-1]
    advective = np.maximum(outflow, inflow)

    h_face_s = 0.5 * (h + np.roll(h, -1, axis=0))
    t_s = mesh.face_lengths_streamwise / mesh.spacing_streamwise * h_face_s
    t_lat = t_s + np.roll(t_s, 1, axis=0)
    t_t = np.zeros_like(mesh.spacing_transverse)
    t_t[:, 1:-1] = (mesh.face_lengths_transverse[:, 1:-1]
                    / mesh.spacing_transverse[:, 1:-1]
                    * 0.5 * (h[:, :-1] + h[:, 1:]))
    t_t[:, 0] = (mesh.face_lengths_transverse[:, 0]
                 / mesh.spacing_transverse[:, 0]) * h[:, 0]
    t_t[:, -1] = (mesh.face_lengths_transverse[:, -1]
                  / mesh.spacing_transverse[:, -1]) * h[:, -1]
    t_lat = t_lat + t_t[:, 1:] + t_t[:, :-1]

    diffusive = np.zeros(advective.shape)
    diffusive += t_lat[:, :, None]
    t_v = mesh.plan_cell_areas / h
    diffusive[:, :, :-1] += t_v[:, :, None]
    diffusive[:, :, 1:] += t_v[:, :, None]
    diffusive[:, :, 0] += (mesh.plan_cell_areas / (0.5 * h))  # bottom damping

    rate = (advective + 2.0 * viscosity * diffusive) / volumes
    if gravity > 0.0:
        # long-wave speed against the plan cell extents; the
        # forward-backward pair is stable up to Courant one in the
        # root-sum-square metric
        wave = np.sqrt(gravity * surface_height)
        ds = mesh.streamwise_cell_lengths
        dw = mesh.plan_cell_areas / ds
        rate = rate + (wave * np.sqrt(ds**-2 + dw**-2))[:, :, None]
    return float(rate.max())


def _build_projection(mesh, surface_height):
    """Assemble and factor the pressure system for the given surface.

    Returns the transmissibilities used for the flux correction together
    with the LU factorization, so corrections stay exactly consistent
    with the assembled operator.
    """
    ns, nt, nk = mesh.n_streamwise, mesh.n_transverse, mesh.n_sigma
    n = ns * nt * nk
    idx = np.arange(n).reshape(ns, nt, nk)
    h = layer_heights(mesh, surface_height)

    t_s = (mesh.face_lengths_streamwise / mesh.spacing_streamwise
           * 0.5 * (h + np.roll(h, -1, axis=0)))[:, :, None]
    t_s = np.broadcast_to(t_s, (ns, nt, nk))
    t_t = (mesh.face_lengths_transverse[:, 1:-1] / mesh.spacing_transverse[:, 1:-1]
           * 0.5 * (h[:, :-1] + h[:, 1:]))[:, :, None]
    t_t = np.broadcast_to(t_t, (ns, nt - 1, nk))
    t_v = np.broadcast_to((mesh.plan_cell_areas / h)[:, :, None],
                          (ns, nt, nk - 1))
    t_top = 2.0 * mesh.plan_cell_areas / h

    left = [idx.ravel(), idx[:, :-1].ravel(), idx[:, :, :-1].ravel()]
    right = [np.roll(idx, -1, axis=0).ravel(), idx[:, 1:].ravel(),
             idx[:, :, 1:].ravel()]
    trans = [t_s.ravel(), t_t.ravel(), t_v.ravel()]

    rows = []
    cols = []
    vals = []
    diag = np.zeros(n)
    for a, b, t in zip(left, right, trans):
        rows.extend((a, b))
        cols.extend((b, a))
        vals.extend((-t, -t))
        np.add.at(diag, a, t)
        np.add.at(diag, b, t)
    diag[idx[:, :, -1].ravel()] += t_top.ravel()
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)

    matrix = sparse.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return {
        "surface": surface_height.copy(),
        "matrix": matrix,
        "lu": sparse_linalg.splu(matrix),
        "t_s": t_s, "t_t": t_t, "t_v": t_v, "t_top": t_top,
    }


def _project(fs, ft, fv, mesh, cfg, cache, dt):
    """Correct the face fluxes to a divergence-free field.

    Returns (pressure, corrected fluxes, residual per cell); the residual
    times dt is exactly the remaining net flux of the corrected field.
    Raises PressureSolveError if refinement cannot reach the solver
    tolerance.
    """
    ns, nt, nk = mesh.n_streamwise, mesh.n_transverse, mesh.n_sigma
    net = (fs - np.roll(fs, 1, axis=0)
           + ft[:, 1:, :] - ft[:, :-1, :]
           + fv[:, :, 1:] - fv[:, :, :-1])
    if not np.abs(net).any():
        zeros = np.zeros((ns, nt, nk))
        return zeros, fs, ft, fv, zeros

    # the assembled operator is the negative of div grad, so the target
    # divergence defect enters with a minus sign
    b = -(net / dt).ravel()
    lu, matrix = cache["lu"], cache["matrix"]
    x = lu.solve(b)
    resid = b - matrix @ x
    scale = max(float(np.abs(b).max()), 1e-300)
    for _ in range(cfg.pressure_max_iters):
        if float(np.abs(resid).max()) <= cfg.pressure_solver_tol * scale:
            break
        x = x + lu.solve(resid)
        resid = b - matrix @ x
    else:
        raise PressureSolveError(
            "projection failed to converge: relative residual "
            f"{float(np.abs(resid).max()) / scale:.3e}",
            residual=float(np.abs(resid).max()),
        )

    p = x.reshape(ns, nt, nk)
    fs = fs - dt * cache["t_s"] * (np.roll(p, -1, axis=0) - p)
    ft = ft.copy()
    ft[:, 1:nt, :] -= dt * cache["t_t"] * (p[:, 1:, :] - p[:, :-1, :])
    fv = fv.copy()
    fv[:, :, 1:nk] -= dt * cache["t_v"] * (p[:, :, 1:] - p[:, :, :-1])
    fv[:, :, nk] += dt * cache["t_top"] * p[:, :, -1]
    return p, fs, ft, fv, resid.reshape(ns, nt, nk)


def _pressure_gradient(p, mesh, surface_height, volumes):
    """Green-Gauss cell gradient of the pressure, (3, ns, nt, nk).

    Walls and bottom see a zero normal gradient; the surface holds the
    pressure at zero.
    """
    ns, nt, nk = mesh.n_streamwise, mesh.n_transverse, mesh.n_sigma
    h = layer_heights(mesh, surface_height)
    grad = np.zeros((3, ns, nt, nk))

    s_vec = (mesh.face_normals_streamwise
             * mesh.face_lengths_streamwise[..., None])
    h_face = (0.5 * (h + np.roll(h, -1, axis=0)))[:, :, None]
    p_face = 0.5 * (p + np.roll(p, -1, axis=0))
    for c in range(2):
        contrib = s_vec[:, :, c, None] * h_face * p_face
        grad[c] += contrib - np.roll(contrib, 1, axis=0)

    t_vec = (mesh.face_normals_transverse
             * mesh.face_lengths_transverse[..., None])
    p_face = np.empty((ns, nt + 1, nk))
    p_face[:, 1:nt] = 0.5 * (p[:, :-1] + p[:, 1:])
    p_face[:, 0] = p[:, 0]          # wall: zero normal gradient
    p_face[:, nt] = p[:, -1]
    h_face = np.empty((ns, nt + 1))
    h_face[:, 1:nt] = 0.5 * (h[:, :-1] + h[:, 1:])
    h_face[:, 0] = h[:, 0]
    h_face[:, nt] = h[:, -1]
    for c in range(2):
        contrib = t_vec[:, :, c, None] * h_face[:, :, None] * p_face
        grad[c] += contrib[:, 1:] - contrib[:, :-1]

    p_face = np.empty((ns, nt, nk + 1))
    p_face[:, :, 1:nk] = 0.5 * (p[:, :, :-1] + p[:, :, 1:])
    p_face[:, :, 0] = p[:, :, 0]    # bottom: zero normal gradient
    p_face[:, :, nk] = 0.0          # surface pressure pinned at zero
    area = mesh.plan_cell_areas[:, :, None]
    grad[2] += area * (p_face[:, :, 1:] - p_face[:, :, :-1])

    return grad / volumes


def step_flow(state, cfg, paddle, omega):
    """Advance the flow by cfg.dt, subcycling to the stability limit.

    Raises CFLError when more than cfg.max_substeps would be needed,
    DryCellError when the surface reaches the bottom, and
    PressureSolveError when the projection cannot converge.
    """
    mesh = state.mesh
    geom = mesh.geometry
    nk = mesh.n_sigma

    velocity = state.velocity.copy()
    eta = state.surface_height.copy()
    fs = state.flux_streamwise
    ft = state.flux_transverse
    fv = state.flux_vertical
    pressure = state.pressure
    cache = state._pressure_cache

    eta_start = state.surface_height.copy()
    t = state.time
    remaining = cfg.dt
    n_sub = 0
    max_div = 0.0
    dt_min = cfg.dt / cfg.max_substeps
    fs_mean = np.zeros_like(fs)
    ft_mean = np.zeros_like(ft)
    fv_mean = np.zeros_like(fv)

    while remaining > 0.0:
        fv_rel = _sigma_relative_vertical(fv, nk)
        parts = _FluxParts(fs, ft, fv_rel)
        rate = _stability_rate(parts, mesh, eta, cfg.viscosity, cfg.gravity)
        dt_stable = _STABILITY_NUMBER / rate if rate > 0.0 else remaining
        if dt_stable < dt_min:
            raise CFLError(
                f"step needs more than {cfg.max_substeps} substeps at "
                f"dt={cfg.dt}; suggested dt <= "
                f"{dt_stable * cfg.max_substeps:.4e}",
                suggested_dt=dt_stable * cfg.max_substeps,
            )
        dt_s = remaining if dt_stable >= remaining else dt_stable
        n_sub += 1

        volumes = cell_volumes(mesh, eta)
        tendency = _upwind_tendency(velocity, parts, volumes)
        tendency += _viscous_tendency(velocity, mesh, eta, cfg.viscosity,
                                      volumes)
        if cfg.gravity != 0.0:
            slope = _surface_gradient(mesh, eta)
            tendency[0] -= cfg.gravity * slope[:, :, 0][:, :, None]
            tendency[1] -= cfg.gravity * slope[:, :, 1][:, :, None]
        region = paddle_region(paddle, geom, mesh, eta)
        if region.any():
            x1 = mesh.cell_centers_plan[:, :, 0][:, :, None]
            x3 = cell_center_heights(mesh, eta)
            dist_sq = ((x1 - paddle.axis[0]) ** 2
                       + (x3 - paddle.axis[2]) ** 2)
            magnitude = (paddle.force_magnitude * omega**2 * dist_sq
                         * region)
            tendency[0] += magnitude * np.cos(omega * t)
            tendency[2] += magnitude * np.sin(omega * t)
        velocity = velocity + dt_s * tendency

        if cache is None or (
            float(np.abs(eta - cache["surface"]).mean())
            > _REFACTOR_DRIFT * float(cache["surface"].mean())
        ):
            cache = _build_projection(mesh, eta)
        fs, ft, fv = _face_fluxes(mesh, velocity, eta)
        pressure, fs, ft, fv, resid = _project(fs, ft, fv, mesh, cfg,
                                               cache, dt_s)
        velocity = velocity - dt_s * _pressure_gradient(
            pressure, mesh, eta, volumes
        )

        eta = _advance_surface(eta, fv, mesh.plan_cell_areas, dt_s)
        fs_mean += dt_s * fs
        ft_mean += dt_s * ft
        fv_mean += dt_s * fv

        # the corrected net flux per cell is exactly dt_s * resid
        div_frac = float(
            (np.abs(resid) * (dt_s * cfg.dt) / volumes).max()
        )
        max_div = max(max_div, div_frac)
        if div_frac > cfg.div_tol:
            raise PressureSolveError(
                f"divergence fraction {div_frac:.3e} exceeds "
                f"div_tol {cfg.div_tol:.1e}",
                residual=div_frac,
            )

        t += dt_s
        remaining = remaining - dt_s
        if remaining < 1e-12 * cfg.dt:
            remaining = 0.0

    fs_mean /= cfg.dt
    ft_mean /= cfg.dt
    fv_mean /= cfg.dt
    return replace(
        state,
        velocity=velocity,
        pressure=pressure,
        surface_height=eta,
        surface_height_prev=eta_start,
        time=state.time + cfg.dt,
        flux_streamwise=fs_mean,
        flux_transverse=ft_mean,
        flux_vertical=fv_mean,
        max_div_fraction=max_div,
        substeps_last=n_sub,
        _pressure_cache=cache,
    )
