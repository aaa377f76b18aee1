"""Nutrient, algae, organic load and oxygen kinetics with transport.

Eight coupled species are tracked in every cell: algal biomass, phosphate,
organic (non-assimilable) phosphorus, nitrate, organic nitrogen, ammonium,
organic load, and dissolved oxygen.  Algal growth follows Monod limitation
in phosphate and total inorganic nitrogen, scaled by a light factor that
decays exponentially with depth and with algal self-shading.  Dead and
respired biomass is recycled to the nutrient pools, partly as directly
assimilable forms; the organic forms mineralize at first-order rates.
Nitrification moves ammonium to nitrate and consumes oxygen; reaeration
pulls oxygen toward saturation.

Transport over the simulated channel uses the projected face fluxes from
the flow solver: first-order upwind advection in mass form, conservative
diffusion, then a pointwise reaction update.  Vertical advection is taken
relative to the moving sigma mesh, so no species mass crosses the free
surface or the bottom.
"""

from dataclasses import dataclass, replace
from functools import partial

import numpy as np

from .errors import CFLError, SpeciesBoundError

SPECIES = (
    "algae", "phosphate", "organic_p", "nitrate",
    "organic_n", "ammonium", "organic_load", "oxygen",
)
N_SPECIES = len(SPECIES)
IDX = {name: i for i, name in enumerate(SPECIES)}

# stability target for one explicit transport substep
_TRANSPORT_NUMBER = 0.8


@dataclass(frozen=True)
class BioParams:
    """Kinetic and transport parameters.  Rates are 1/s, lengths metres.

    The defaults are placeholders in plausible ranges for a temperate
    freshwater raceway (concentrations read as g/m^3); site calibration
    should override them through the config file.
    """

    growth_rate_max: float = 2.0e-5     # max specific growth, ~1.7 1/day
    temp_coeff: float = 1.05            # Arrhenius-style base
    temp_ref: float = 20.0              # deg C
    light_atten_water: float = 1.0      # 1/m
    light_atten_algae: float = 0.01     # m^2/g, self-shading
    half_sat_phosphate: float = 0.02    # g/m^3
    half_sat_nitrogen: float = 0.1      # g/m^3
    death_rate: float = 1.0e-6
    respiration_rate: float = 1.0e-6
    p_per_biomass: float = 0.024        # g P per g biomass
    n_per_biomass: float = 0.16         # g N per g biomass
    p_recycle_frac: float = 0.5         # share of lost P returned as phosphate
    n_recycle_frac: float = 0.5         # share of lost N returned as ammonium
    mineralization_p: float = 5.0e-6    # organic P -> phosphate
    nitrification_rate: float = 5.0e-6  # ammonium -> nitrate
    mineralization_n: float = 5.0e-6    # organic N -> ammonium
    sed_rate: float = 1.0e-6            # settling loss of organic forms
    oxygen_yield: float = 1.2           # g O2 (and organic load) per g biomass
    organic_decay_rate: float = 2.0e-6
    oxygen_per_nitrif: float = 4.57     # g O2 per g N nitrified
    oxygen_saturation: float = 9.0      # g/m^3
    benthic_demand: float = 0.0         # volumetric sink, g/m^3/s
    reaeration_rate: float = 2.0e-5
    diffusivity_algae: float = 1.0e-5   # m^2/s, eddy scale
    diffusivity_solute: float = 1.0e-5
    # light path measured down from the free surface; False uses the raw
    # height above the bottom as the attenuation coordinate instead
    light_depth_from_surface: bool = True
    clip_tolerance: float = 1.0e-8      # clipped mass per step, relative
    max_substeps: int = 256


@dataclass(frozen=True)
class Forcings:
    """Time-dependent environment: temperature (deg C) and normalized
    incident light intensity in [0, 1]."""

    temperature: object
    light: object


def _const(t, value):
    return value + 0.0 * np.asarray(t)


def _diurnal_temperature(t, mean, swing, period):
    return mean + swing * np.sin(2.0 * np.pi * np.asarray(t) / period)


def _diurnal_light(t, period):
    return np.maximum(0.0, np.sin(2.0 * np.pi * np.asarray(t) / period))


def constant_forcings(temperature=20.0, light=1.0):
    return Forcings(
        temperature=partial(_const, value=temperature),
        light=partial(_const, value=light),
    )


def diurnal_forcings(mean_temperature=20.0, temperature_swing=2.0,
                     period=86400.0):
    return Forcings(
        temperature=partial(_diurnal_temperature, mean=mean_temperature,
                            swing=temperature_swing, period=period),
        light=partial(_diurnal_light, period=period),
    )


def monod(conc, half_sat):
    """Saturating uptake fraction conc / (half_sat + conc)."""
    return conc / (half_sat + conc)


def light_factor(params, forcings, algae, depth, t):
    """Light- and temperature-limited growth ceiling at a given depth.

    growth_rate_max * temp_coeff**(theta(t) - temp_ref) * i(t)
    * exp(-(atten_water + atten_algae * algae) * depth)
    """
    theta = forcings.temperature(t)
    temp = params.temp_coeff ** (np.asarray(theta) - params.temp_ref)
    atten = params.light_atten_water + params.light_atten_algae * algae
    return params.growth_rate_max * temp * forcings.light(t) * np.exp(-atten * depth)


def reaction_rhs(params, forcings, conc, depth, t):
    """Pointwise reaction rates for all eight species.

    conc has shape (8, ...); depth broadcasts against the trailing shape.
    Returns an array of the same shape as conc.
    """
    conc = np.asarray(conc, dtype=float)
    a, p1, p2, n1, n2, n3, d, o = conc
    pr = params

    theta = forcings.temperature(t)
    temp = pr.temp_coeff ** (np.asarray(theta) - pr.temp_ref)
    lf = light_factor(pr, forcings, a, depth, t)

    p_frac = monod(p1, pr.half_sat_phosphate)
    n_total = pr.half_sat_nitrogen + n1 + n3
    n1_frac = n1 / n_total
    n3_frac = n3 / n_total

    growth = lf * p_frac * (n1_frac + n3_frac)       # 1/s
    loss = pr.death_rate + pr.respiration_rate

    out = np.empty_like(conc)
    out[0] = (growth - loss) * a
    out[1] = (pr.p_per_biomass * (pr.p_recycle_frac * loss - growth) * a
              + pr.mineralization_p * p2)
    out[2] = (pr.p_per_biomass * (1.0 - pr.p_recycle_frac) * loss * a
              - pr.mineralization_p * p2 - pr.sed_rate * p2)
    out[3] = (-pr.n_per_biomass * lf * p_frac * n1_frac * a
              + pr.nitrification_rate * n3)
    out[4] = (pr.n_per_biomass * (1.0 - pr.n_recycle_frac) * loss * a
              - pr.mineralization_n * n2 - pr.sed_rate * n2)
    out[5] = (pr.n_per_biomass * (pr.n_recycle_frac * loss
                                  - lf * p_frac * n3_frac) * a
              + pr.mineralization_n * n2 - pr.nitrification_rate * n3)
    out[6] = (pr.oxygen_yield * pr.death_rate * a
              - pr.organic_decay_rate * temp * d - pr.sed_rate * d)
    out[7] = (pr.oxygen_yield * (growth - pr.respiration_rate) * a
              - pr.oxygen_per_nitrif * pr.nitrification_rate * n3
              - pr.organic_decay_rate * temp * d
              + pr.reaeration_rate * temp * (pr.oxygen_saturation - o)
              - pr.benthic_demand)
    return out


@dataclass
class SpeciesState:
    """Concentrations of the eight species at every cell, plus bookkeeping
    for mass added by negative-concentration clipping."""

    concentrations: np.ndarray   # (8, ns, nt, nk)
    time: float
    max_clip_fraction: float = 0.0

    @classmethod
    def uniform(cls, mesh, values, time=0.0):
        values = np.asarray(values, dtype=float)
        if values.shape != (N_SPECIES,):
            raise ValueError(f"need {N_SPECIES} initial concentrations")
        shape = (mesh.n_streamwise, mesh.n_transverse, mesh.n_sigma)
        conc = np.broadcast_to(values[:, None, None, None], (N_SPECIES,) + shape)
        return cls(concentrations=np.ascontiguousarray(conc), time=time)

    def species(self, name):
        return self.concentrations[IDX[name]]


def _attenuation_depths(params, mesh, eta):
    """Per-cell light path length, (ns, nt, nk)."""
    sigma = mesh.sigma_centers
    if params.light_depth_from_surface:
        return eta[:, :, None] * (1.0 - sigma[None, None, :])
    return eta[:, :, None] * sigma[None, None, :]


def _advect_masses(conc, flow, mesh, dt):
    """Upwind mass transport through the stored face fluxes.

    Vertical fluxes are taken relative to the sigma mesh, which moves with
    the surface: the relative flux vanishes at both the bottom and the
    surface, so advection changes no species total.
    Returns the mass increments, shape (8, ns, nt, nk).
    """
    fs, ft, fv = flow.flux_streamwise, flow.flux_transverse, flow.flux_vertical
    nk = mesh.n_sigma
    sigma_edges = np.arange(nk + 1) / nk
    fv_rel = fv - sigma_edges[None, None, :] * fv[:, :, -1:]

    dm = np.zeros_like(conc)

    up = np.where(fs > 0.0, conc, np.roll(conc, -1, axis=1))
    flux = fs * up                       # leaves cell i toward i+1
    dm -= flux
    dm += np.roll(flux, 1, axis=1)

    fti = ft[:, 1:-1, :]                 # interior transverse faces
    up = np.where(fti > 0.0, conc[:, :, :-1, :], conc[:, :, 1:, :])
    flux = fti * up
    dm[:, :, :-1, :] -= flux
    dm[:, :, 1:, :] += flux

    fvi = fv_rel[:, :, 1:-1]             # interior sigma faces
    up = np.where(fvi > 0.0, conc[..., :-1], conc[..., 1:])
    flux = fvi * up
    dm[..., :-1] -= flux
    dm[..., 1:] += flux

    return dt * dm


def _diffuse_masses(conc, params, mesh, eta, dt):
    """Conservative two-point diffusion fluxes; zero flux at all walls,
    the bottom, and the free surface."""
    diff = np.full(N_SPECIES, params.diffusivity_solute)
    diff[IDX["algae"]] = params.diffusivity_algae
    diff = diff[:, None, None, None]

    h = eta / mesh.n_sigma               # layer height per column
    dm = np.zeros_like(conc)

    h_face = 0.5 * (h + np.roll(h, -1, axis=0))
    t_s = (mesh.face_lengths_streamwise / mesh.spacing_streamwise * h_face)
    flux = diff * (t_s[None, :, :, None]
                   * (np.roll(conc, -1, axis=1) - conc))
    dm += flux
    dm -= np.roll(flux, 1, axis=1)

    h_face = 0.5 * (h[:, :-1] + h[:, 1:])
    t_t = (mesh.face_lengths_transverse[:, 1:-1]
           / mesh.spacing_transverse[:, 1:-1] * h_face)
    flux = diff * (t_t[None, :, :, None] * (conc[:, :, 1:, :] - conc[:, :, :-1, :]))
    dm[:, :, :-1, :] += flux
    dm[:, :, 1:, :] -= flux

    t_v = mesh.plan_cell_areas / h       # layer-center spacing equals h
    flux = diff * (t_v[None, :, :, None] * (conc[..., 1:] - conc[..., :-1]))
    dm[..., :-1] += flux
    dm[..., 1:] -= flux

    return dt * dm


def _transport_rate_bound(flow, params, mesh, eta):
    """Largest outflow-plus-diffusion rate over cells, 1/s."""
    fs, ft, fv = flow.flux_streamwise, flow.flux_transverse, flow.flux_vertical
    nk = mesh.n_sigma
    sigma_edges = np.arange(nk + 1) / nk
    fv_rel = fv - sigma_edges[None, None, :] * fv[:, :, -1:]

    out = np.maximum(fs, 0.0) + np.maximum(-np.roll(fs, 1, axis=0), 0.0)
    out += np.maximum(ft[:, 1:, :], 0.0) + np.maximum(-ft[:, :-1, :], 0.0)
    out += np.maximum(fv_rel[:, :, 1:], 0.0) + np.maximum(-fv_rel[:, :, :-1], 0.0)

    h = eta / nk
    diff = max(params.diffusivity_algae, params.diffusivity_solute)
    h_face_s = 0.5 * (h + np.roll(h, -1, axis=0))
    t_s = mesh.face_lengths_streamwise / mesh.spacing_streamwise * h_face_s
    t_sum = t_s + np.roll(t_s, 1, axis=0)
    t_t = np.zeros_like(ft[:, :, 0])
    t_t[:, 1:-1] = (mesh.face_lengths_transverse[:, 1:-1]
                    / mesh.spacing_transverse[:, 1:-1]
                    * 0.5 * (h[:, :-1] + h[:, 1:]))
    t_sum = t_sum + t_t[:, 1:] + t_t[:, :-1]
    t_v = mesh.plan_cell_areas / h
    vert = np.zeros(out.shape)
    vert[:, :, :-1] += t_v[:, :, None]
    vert[:, :, 1:] += t_v[:, :, None]

    volumes = (mesh.plan_cell_areas * h)[:, :, None]
    rate = (out + 2.0 * diff * (t_sum[:, :, None] + vert)) / volumes
    return float(rate.max())


def step_species(species, flow, params, forcings, dt):
    """Advance all species by dt using the current flow state.

    Splitting per substep: upwind advection, diffusion, then an explicit
    Euler reaction update.  The substep count is set from the transport
    stability bound; negative concentrations are clipped to zero and the
    clipped mass is tracked, erroring out beyond params.clip_tolerance
    of the species total.
    """
    mesh = flow.mesh
    nk = mesh.n_sigma
    eta_new = flow.surface_height
    eta_old = flow.surface_height_prev

    rate = _transport_rate_bound(flow, params, mesh, eta_new)
    n_sub = max(1, int(np.ceil(rate * dt / _TRANSPORT_NUMBER)))
    if n_sub > params.max_substeps:
        raise CFLError(
            f"species transport needs {n_sub} substeps for dt={dt}; "
            f"suggested dt <= {_TRANSPORT_NUMBER / rate:.3e}",
            suggested_dt=_TRANSPORT_NUMBER / rate,
        )
    dt_sub = dt / n_sub

    conc = np.array(species.concentrations, dtype=float)
    area = mesh.plan_cell_areas[:, :, None]
    depth = _attenuation_depths(params, mesh, eta_new)
    max_clip = species.max_clip_fraction
    t_sub = species.time

    for step in range(n_sub):
        frac0 = step / n_sub
        frac1 = (step + 1) / n_sub
        eta0 = eta_old + frac0 * (eta_new - eta_old)
        eta1 = eta_old + frac1 * (eta_new - eta_old)
        vol0 = area * (eta0 / nk)[:, :, None]
        vol1 = area * (eta1 / nk)[:, :, None]

        mass = conc * vol0
        mass += _advect_masses(conc, flow, mesh, dt_sub)
        mass += _diffuse_masses(conc, params, mesh, eta1, dt_sub)
        conc = mass / vol1

        conc += dt_sub * reaction_rhs(params, forcings, conc, depth, t_sub)
        t_sub += dt_sub

        negative = np.minimum(conc, 0.0)
        if negative.any():
            clipped = -(negative * vol1).sum(axis=(1, 2, 3))
            np.maximum(conc, 0.0, out=conc)
            totals = (conc * vol1).sum(axis=(1, 2, 3))
            fraction = float((clipped / np.maximum(totals, 1e-300)).max())
            max_clip = max(max_clip, fraction)
            if fraction > params.clip_tolerance:
                worst = SPECIES[int(np.argmax(clipped / np.maximum(totals, 1e-300)))]
                raise SpeciesBoundError(
                    f"clipped {fraction:.3e} of total {worst} mass in one "
                    f"substep (tolerance {params.clip_tolerance:.1e})"
                )

    return replace(
        species, concentrations=conc, time=species.time + dt,
        max_clip_fraction=max_clip,
    )
