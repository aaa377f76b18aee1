"""Oval raceway channel geometry and its structured plan mesh.

The channel is two parallel straights of length L joined by half-annulus
bends of inner radius r and outer radius R = r + W.  The left straight
occupies x2 in [r, R] for x1 in [0, L], the right straight mirrors it at
x2 in [-R, -r], and the bend centers sit at (0, 0) and (L, 0).

The mesh follows the loop: streamwise cells are laid out along the left
straight, the bend around (L, 0), the right straight, and the bend around
(0, 0), in that order, so the streamwise index is periodic.  Transverse
cells span the channel width from the inner wall (radius r side) to the
outer wall.  n_sigma uniform layers stack over the water depth; their
physical heights are set at run time by the local surface height.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class RacewayGeometry:
    """Plan-view dimensions of the oval channel, all in metres.

    Construction does not validate; call validate_geometry() before
    building meshes so degenerate shapes can still be used in area
    formula checks.
    """

    straight_length: float
    channel_width: float
    inner_radius: float
    outer_radius: float


def validate_geometry(geom):
    """Reject non-positive dimensions and mismatched radii.

    The outer radius is fixed by the channel width: R = r + W.
    """
    if geom.straight_length <= 0.0:
        raise ConfigurationError("straight length must be positive")
    if geom.channel_width <= 0.0:
        raise ConfigurationError("channel width must be positive")
    if geom.inner_radius <= 0.0:
        raise ConfigurationError("inner bend radius must be positive")
    expected = geom.inner_radius + geom.channel_width
    if abs(geom.outer_radius - expected) > 1e-12 * max(1.0, expected):
        raise ConfigurationError(
            "outer radius must equal inner radius + channel width "
            f"(got {geom.outer_radius}, expected {expected})"
        )


def plan_area(geom):
    """Water surface area of the full oval: two straights plus one annulus."""
    two_straights = 2.0 * geom.straight_length * geom.channel_width
    annulus = np.pi * (geom.outer_radius**2 - geom.inner_radius**2)
    return two_straights + annulus


def centerline_length(geom):
    """Length of the mid-channel loop: 2 L + 2 pi (r + W/2)."""
    mid_radius = geom.inner_radius + 0.5 * geom.channel_width
    return 2.0 * geom.straight_length + 2.0 * np.pi * mid_radius


def contains_plan(geom, x1, x2):
    """True where the plan point (x1, x2) lies inside the channel.

    Boundary points count as inside.  Accepts scalars or arrays.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    L = geom.straight_length
    r = geom.inner_radius
    R = geom.outer_radius

    in_straight_x1 = (x1 >= 0.0) & (x1 <= L)
    left = in_straight_x1 & (x2 >= r) & (x2 <= R)
    right = in_straight_x1 & (x2 >= -R) & (x2 <= -r)

    d0_sq = x1**2 + x2**2
    d1_sq = (x1 - L) ** 2 + x2**2
    bend0 = (x1 <= 0.0) & (d0_sq >= r**2) & (d0_sq <= R**2)
    bend1 = (x1 >= L) & (d1_sq >= r**2) & (d1_sq <= R**2)

    inside = left | right | bend0 | bend1
    if inside.ndim == 0:
        return bool(inside)
    return inside


@dataclass
class Mesh:
    """Structured loop-following mesh over the channel plan.

    Streamwise index i runs around the loop (periodic), transverse index
    j runs from the inner wall to the outer wall, and the sigma index k
    runs from the bottom layer to the surface layer.  All face normals
    are plan unit vectors; face "lengths" are the magnitudes of the exact
    integrals of the outward normal along the face, so the area vectors
    of every cell close to machine precision.

    Arrays are marked read-only after construction; build a new mesh
    rather than mutating one.
    """

    geometry: RacewayGeometry
    n_streamwise: int
    n_transverse: int
    n_sigma: int
    n_straight: int  # streamwise cells per straight
    n_bend: int      # streamwise cells per bend
    cell_centers_plan: np.ndarray        # (ns, nt, 2)
    plan_cell_areas: np.ndarray          # (ns, nt)
    streamwise_cell_lengths: np.ndarray  # (ns, nt)
    # face between cell (i, j) and ((i+1) % ns, j)
    face_normals_streamwise: np.ndarray  # (ns, nt, 2)
    face_lengths_streamwise: np.ndarray  # (ns, nt)
    spacing_streamwise: np.ndarray       # (ns, nt) center-to-center along normal
    # face between cell (i, j-1) and (i, j); j = 0 and j = nt are walls
    face_normals_transverse: np.ndarray  # (ns, nt+1, 2)
    face_lengths_transverse: np.ndarray  # (ns, nt+1)
    spacing_transverse: np.ndarray       # (ns, nt+1); walls: center-to-wall
    plan_cell_corners: np.ndarray        # (ns, nt, 4, 2), counterclockwise
    sigma_centers: np.ndarray            # (nk,)
    centerline_length: float
    total_plan_area: float = field(default=0.0)

    def __post_init__(self):
        self.total_plan_area = float(self.plan_cell_areas.sum())
        for name in (
            "cell_centers_plan", "plan_cell_areas", "streamwise_cell_lengths",
            "face_normals_streamwise", "face_lengths_streamwise",
            "spacing_streamwise", "face_normals_transverse",
            "face_lengths_transverse", "spacing_transverse",
            "plan_cell_corners", "sigma_centers",
        ):
            getattr(self, name).flags.writeable = False


def _split_streamwise(geom, n_streamwise):
    """Cells per straight and per bend, proportional to centerline length."""
    half = n_streamwise // 2
    mid_radius = geom.inner_radius + 0.5 * geom.channel_width
    frac = geom.straight_length / (geom.straight_length + np.pi * mid_radius)
    n_straight = int(round(half * frac))
    n_straight = min(max(n_straight, 1), half - 1)
    return n_straight, half - n_straight


def build_mesh(geom, n_streamwise, n_transverse, n_sigma):
    """Build the loop-following mesh with the given cell counts.

    n_streamwise must be even (the two straights and the two bends each
    get equal counts) and at least 4 so every segment has a cell.
    """
    validate_geometry(geom)
    if n_streamwise % 2 != 0:
        raise ConfigurationError("n_streamwise must be even")
    if n_streamwise < 4:
        raise ConfigurationError("n_streamwise must be at least 4")
    if n_transverse < 2 or n_sigma < 2:
        raise ConfigurationError("n_transverse and n_sigma must be at least 2")

    ns, nt, nk = n_streamwise, n_transverse, n_sigma
    L = geom.straight_length
    r = geom.inner_radius
    W = geom.channel_width
    n_str, n_bend = _split_streamwise(geom, ns)
    ds = L / n_str
    dw = W / nt
    dphi = np.pi / n_bend

    w_edges = r + dw * np.arange(nt + 1)        # radii / wall offsets
    w_mid = r + dw * (np.arange(nt) + 0.5)

    centers = np.zeros((ns, nt, 2))
    areas = np.zeros((ns, nt))
    slen = np.zeros((ns, nt))
    fn_s = np.zeros((ns, nt, 2))
    fl_s = np.zeros((ns, nt))
    fn_t = np.zeros((ns, nt + 1, 2))
    fl_t = np.zeros((ns, nt + 1))
    corners = np.zeros((ns, nt, 4, 2))

    def fill_straight(i0, x1_lo, direction, x2_sign):
        # direction +1: x1 increasing (left straight), -1: decreasing (right)
        for m in range(n_str):
            i = i0 + m
            s_lo = x1_lo + direction * m * ds
            s_hi = s_lo + direction * ds
            x1_mid = 0.5 * (s_lo + s_hi)
            centers[i, :, 0] = x1_mid
            centers[i, :, 1] = x2_sign * w_mid
            areas[i, :] = ds * dw
            slen[i, :] = ds
            fn_s[i, :, 0] = direction
            fl_s[i, :] = dw
            # transverse faces point from inner wall toward outer wall
            fn_t[i, :, 1] = x2_sign
            fl_t[i, :] = ds
            lo = x2_sign * w_edges[:-1]
            hi = x2_sign * w_edges[1:]
            corners[i, :, 0, 0] = s_lo
            corners[i, :, 0, 1] = lo
            corners[i, :, 1, 0] = s_hi
            corners[i, :, 1, 1] = lo
            corners[i, :, 2, 0] = s_hi
            corners[i, :, 2, 1] = hi
            corners[i, :, 3, 0] = s_lo
            corners[i, :, 3, 1] = hi

    def fill_bend(i0, cx, phi_start):
        # phi decreases with streamwise position in both bends
        for m in range(n_bend):
            i = i0 + m
            phi_hi = phi_start - m * dphi
            phi_lo = phi_hi - dphi
            phi_mid = 0.5 * (phi_lo + phi_hi)
            centers[i, :, 0] = cx + w_mid * np.cos(phi_mid)
            centers[i, :, 1] = w_mid * np.sin(phi_mid)
            areas[i, :] = dphi * dw * w_mid          # exact sector area
            slen[i, :] = w_mid * dphi
            fn_s[i, :, 0] = np.sin(phi_lo)
            fn_s[i, :, 1] = -np.cos(phi_lo)
            fl_s[i, :] = dw
            # exact integral of the radial normal along each arc face
            span = np.array([np.sin(phi_hi) - np.sin(phi_lo),
                             np.cos(phi_lo) - np.cos(phi_hi)])
            arc_len = np.hypot(span[0], span[1])     # = 2 sin(dphi/2)
            fn_t[i, :, 0] = span[0] / arc_len
            fn_t[i, :, 1] = span[1] / arc_len
            fl_t[i, :] = w_edges * arc_len
            for c, (pr, pa) in enumerate(
                ((w_edges[:-1], phi_hi), (w_edges[:-1], phi_lo),
                 (w_edges[1:], phi_lo), (w_edges[1:], phi_hi))
            ):
                corners[i, :, c, 0] = cx + pr * np.cos(pa)
                corners[i, :, c, 1] = pr * np.sin(pa)

    fill_straight(0, 0.0, +1, +1)
    fill_bend(n_str, L, np.pi / 2)
    fill_straight(n_str + n_bend, L, -1, -1)
    fill_bend(2 * n_str + n_bend, 0.0, -np.pi / 2)

    # TPFA spacings: center-to-center distance projected on the face normal
    d_s = np.einsum(
        "ijc,ijc->ij", np.roll(centers, -1, axis=0) - centers, fn_s
    )
    d_t = np.zeros((ns, nt + 1))
    d_t[:, 1:nt] = np.einsum(
        "ijc,ijc->ij", centers[:, 1:] - centers[:, :-1], fn_t[:, 1:nt]
    )
    d_t[:, 0] = 0.5 * dw   # cell center to wall face, exact on this grid
    d_t[:, nt] = 0.5 * dw

    mesh = Mesh(
        geometry=geom,
        n_streamwise=ns,
        n_transverse=nt,
        n_sigma=nk,
        n_straight=n_str,
        n_bend=n_bend,
        cell_centers_plan=centers,
        plan_cell_areas=areas,
        streamwise_cell_lengths=slen,
        face_normals_streamwise=fn_s,
        face_lengths_streamwise=fl_s,
        spacing_streamwise=d_s,
        face_normals_transverse=fn_t,
        face_lengths_transverse=fl_t,
        spacing_transverse=d_t,
        plan_cell_corners=corners,
        sigma_centers=(np.arange(nk) + 0.5) / nk,
        centerline_length=centerline_length(geom),
    )
    return mesh


def mesh_summary(mesh):
    """Human-readable mesh diagnostics for the CLI info path."""
    g = mesh.geometry
    lines = [
        "raceway mesh",
        f"  straight length      {g.straight_length:g} m",
        f"  channel width        {g.channel_width:g} m",
        f"  bend radii           {g.inner_radius:g} .. {g.outer_radius:g} m",
        f"  streamwise cells     {mesh.n_streamwise} "
        f"({mesh.n_straight} per straight, {mesh.n_bend} per bend)",
        f"  transverse cells     {mesh.n_transverse}",
        f"  sigma layers         {mesh.n_sigma}",
        f"  plan cells           {mesh.n_streamwise * mesh.n_transverse}",
        f"  total plan area      {mesh.total_plan_area:.6f} m^2 "
        f"(closed form {plan_area(g):.6f})",
        f"  centerline length    {mesh.centerline_length:.6f} m",
    ]
    return "\n".join(lines)
