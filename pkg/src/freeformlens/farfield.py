"""Construct the second lens face (or mirror pair) sending an incident
direction field into one fixed output direction.

Entry points:

  strike                     footprint of a ray on the entry graph
  design_far_field           general field + given entry graph
  orthogonal_front_design    entry face orthogonal to the rays (closed form)
  vertical_design            collimated-in/collimated-out specialization
  injectivity_check          self-intersection bound for collimated designs
  design_far_field_mirrors   reflective analogue of the far-field design

Sign conventions follow the defining formulas of each construction: for
``design_far_field`` and the mirror pair the thickness grows with +C, for
``vertical_design`` it grows with -C; the two agree under C -> -C.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .domain import Domain, Grid, make_grid
from .errors import (
    CompatibilityViolationError,
    CurlViolationError,
    DegenerateDirectionError,
    GrazingIntersectionError,
    InvalidInputError,
    NoIntersectionError,
    NonpositiveLambdaError,
    NonpositiveThicknessError,
    NotCollimatedError,
    SingularStrikeMapError,
)
from .fields import (
    DEFAULT_CURL_TOL,
    IncidentField,
    Potential,
    build_potential,
    constant_field,
    curl_check,
)
from .geometry import Media, MediumPair, dot, graph_normal, normalize, refract
from .surfaces import GraphSurface, ParametricSheet, ParametricSurface, design_surface, sheet_from_design_fn
from .tracer import OpticalElement, intersect_graph

MESH_PAD_CELLS = 2  # sheets are sampled slightly past the domain edge


@dataclass(frozen=True)
class RayHit:
    phi: np.ndarray    # footprint on the entry face
    rho: np.ndarray    # ray parameter
    point: np.ndarray  # (phi, u(phi))


def strike(sigma1: GraphSurface, field: IncidentField, x, t_max: float | None = None) -> RayHit:
    """Where the ray from (x,0) with direction e(x) first meets the graph.

    Smallest positive root of u(x + rho*e') = rho*e3, found by coarse
    bracketing plus bisection/Newton to 1e-12 residual.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    e = field.unit(x)
    if t_max is None:
        probe = np.abs(sigma1.u(x))
        t_max = 10.0 * (field.domain.diameter + float(np.max(probe)) + 1.0)
    origins = np.column_stack([x, np.zeros(len(x))])
    t, hit, grazing = intersect_graph(origins, e, sigma1, t_max=t_max)
    if not np.all(hit):
        bad = x[~hit][0]
        raise NoIntersectionError(f"ray from {bad.tolist()} misses the entry face in (0, {t_max:g}]")
    if np.any(grazing):
        bad = x[grazing][0]
        raise GrazingIntersectionError(f"tangential strike at {bad.tolist()}")
    phi = x + t[:, None] * e[:, :2]
    point = np.column_stack([phi, sigma1.u(phi)])
    return RayHit(phi=phi, rho=t, point=point)


def _strike_fn(sigma1: GraphSurface, field: IncidentField):
    def phi_point(x):
        hit = strike(sigma1, field, x)
        return hit.phi, hit.point

    return phi_point


@dataclass(frozen=True)
class LensDesign:
    """A two-face lens: entry graph plus constructed exit face.

    ``f_at`` evaluates the exit-face parametrization at arbitrary source
    points, so sheets can be resampled at any resolution.
    """

    sigma1: GraphSurface
    field: IncidentField
    w: np.ndarray
    C: float
    media: Media
    grid: Grid
    f_grid: np.ndarray
    d_grid: np.ndarray
    m1_grid: np.ndarray
    phi_grid: np.ndarray
    f_at: Callable[[np.ndarray], np.ndarray]
    potential: Potential | None
    admissible_C: tuple[float, float]
    tangency_residual: float
    eikonal_spread: float

    @property
    def sigma2(self) -> ParametricSheet:
        return self.sheet(self.grid.shape[0])

    def sheet(self, n: int, pad: float | None = None) -> ParametricSheet:
        if pad is None:
            pad = MESH_PAD_CELLS * 2.0 / max(n - 1, 1)
        return sheet_from_design_fn(self.f_at, self.grid.domain, n=n, pad=pad)

    def exit_surface(self, pad: float | None = None) -> ParametricSurface:
        if pad is None:
            pad = MESH_PAD_CELLS * 2.0 / max(self.grid.shape[0] - 1, 1)
        return design_surface(self.f_at, self.grid.domain, pad=pad)

    def elements(self, exit_geometry="exact", mesh_n: int | None = None) -> list[OpticalElement]:
        """Oracle elements: entry graph then exit face (exact or sampled mesh)."""
        u_vals = self.sigma1.u(self.phi_grid.reshape(-1, 2))
        extent = 10.0 * (self.grid.domain.diameter + float(np.max(np.abs(u_vals))) + 1.0)
        first = OpticalElement(
            geometry=self.sigma1,
            interaction="refract",
            media=MediumPair(self.media.n1, self.media.n2),
            search_extent=extent,
        )
        if exit_geometry == "exact":
            geom = self.exit_surface()
        elif exit_geometry == "mesh":
            geom = self.sheet(mesh_n or 257)
        else:
            raise InvalidInputError(f"unknown exit geometry {exit_geometry!r}")
        second = OpticalElement(
            geometry=geom,
            interaction="refract",
            media=MediumPair(self.media.n2, self.media.n3),
        )
        return [first, second]


@dataclass(frozen=True)
class MirrorDesign:
    """Two-mirror train reflecting the field into a fixed direction."""

    sigma1: GraphSurface
    field: IncidentField
    w: np.ndarray
    C: float
    grid: Grid
    f_grid: np.ndarray
    d_grid: np.ndarray
    m1_grid: np.ndarray
    f_at: Callable[[np.ndarray], np.ndarray]
    admissible_C: tuple[float, float]
    tangency_residual: float
    eikonal_spread: float

    def sheet(self, n: int, pad: float | None = None) -> ParametricSheet:
        if pad is None:
            pad = MESH_PAD_CELLS * 2.0 / max(n - 1, 1)
        return sheet_from_design_fn(self.f_at, self.grid.domain, n=n, pad=pad)

    def exit_surface(self, pad: float | None = None) -> ParametricSurface:
        if pad is None:
            pad = MESH_PAD_CELLS * 2.0 / max(self.grid.shape[0] - 1, 1)
        return design_surface(self.f_at, self.grid.domain, pad=pad)

    def elements(self, exit_geometry="exact", mesh_n: int | None = None) -> list[OpticalElement]:
        u_vals = self.sigma1.u(self.grid.flat_points)
        extent = 10.0 * (self.grid.domain.diameter + float(np.max(np.abs(u_vals))) + 1.0)
        first = OpticalElement(geometry=self.sigma1, interaction="reflect", search_extent=extent)
        geom = self.exit_surface() if exit_geometry == "exact" else self.sheet(mesh_n or 257)
        return [first, OpticalElement(geometry=geom, interaction="reflect")]


def _tangency_residual(f_at, q_at, sample_points, h):
    """max |q . df/dx_i| / (|q||df/dx_i|) with central differences of step h.

    q(x) is the direction the exit-face normal must be parallel to; the
    residual vanishes when the constructed face is exactly orthogonal.
    """
    worst = 0.0
    q = q_at(sample_points)
    for j in range(2):
        step = np.zeros(2)
        step[j] = h
        df = (f_at(sample_points + step) - f_at(sample_points - step)) / (2.0 * h)
        num = np.abs(np.sum(q * df, axis=-1))
        den = np.linalg.norm(q, axis=-1) * np.linalg.norm(df, axis=-1)
        worst = max(worst, float(np.max(num / den)))
    return worst


def design_far_field(sigma1: GraphSurface, field: IncidentField, w, C: float,
                     media: Media, grid: Grid, curl_tol: float = DEFAULT_CURL_TOL) -> LensDesign:
    """Build the exit face refracting e(x) into the constant direction w.

    Requires curl e' = 0 and the compatibility margin m1.w >= kappa2 on the
    grid. The thickness along the refracted ray is fixed by the constant C;
    the admissible C interval (making the thickness positive everywhere on
    the grid) is reported on failure.
    """
    media.require_lens()
    w = normalize(np.asarray(w, dtype=float))
    k1, k2 = media.kappa1, media.kappa2

    report = curl_check(field, grid, curl_tol)
    if not report.conservative:
        raise CurlViolationError(
            f"curl residual {report.max_residual:.3e} exceeds {curl_tol:.3e}",
            residual=report.max_residual,
        )
    x0 = grid.domain.center
    potential = build_potential(field, x0, grid)

    def evaluate(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        e = field.unit(x)
        hit = strike(sigma1, field, x)
        nu1 = graph_normal(sigma1.grad(hit.phi))
        res = refract(e, nu1, k1)
        m1, lam1 = res.m, res.lam
        h = potential.evaluate(x)
        point = hit.point
        numer = C - h + np.sum(e[:, :2] * x, axis=-1) - np.sum((e - k1 * k2 * w) * point, axis=-1)
        denom = k1 - k2 * np.sum(w * (e - lam1[:, None] * nu1), axis=-1)
        d = numer / denom
        return e, hit, nu1, m1, lam1, h, numer, denom, d

    pts = grid.flat_points
    e, hit, nu1, m1, lam1, h, numer, denom, d = evaluate(pts)

    if np.any(dot(e, nu1) < 0):
        raise CompatibilityViolationError("field strikes the entry face from behind (e.nu1 < 0)")
    margin = np.sum(m1 * w, axis=-1) - k2
    if np.any(margin < 0):
        i = int(np.argmin(margin))
        raise CompatibilityViolationError(
            f"m1.w - kappa2 = {margin[i]:.3e} < 0 at x = {pts[i].tolist()}",
            worst_x=pts[i].tolist(),
            margin=float(margin[i]),
        )
    if np.any(denom < k1 * (1 - k2) - 1e-9):
        raise InvalidInputError("thickness denominator fell below its lower bound")
    # d > 0 iff C > h - e.(x,0) + (e - k1 k2 w).P for every node
    c_floor = float(np.max(C - numer))
    admissible = (c_floor, np.inf)
    if np.any(d <= 0):
        raise NonpositiveThicknessError(
            f"thickness nonpositive; admissible C interval is ({c_floor:.6g}, inf)",
            admissible_C=admissible,
        )

    f_flat = hit.point + d[:, None] * m1

    def f_at(x):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_2d(x.reshape(-1, 2))
        _, hitq, _, m1q, _, _, _, _, dq = evaluate(flat)
        out = hitq.point + dq[:, None] * m1q
        return out.reshape(x.shape[:-1] + (3,))

    def q_at(x):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_2d(x.reshape(-1, 2))
        _, _, _, m1q, _, _, _, _, _ = evaluate(flat)
        return (m1q - k2 * w).reshape(x.shape[:-1] + (3,))

    h_fd = 1e-5 * grid.domain.diameter
    sample = pts[:: max(1, len(pts) // 512)]
    tangency = _tangency_residual(f_at, q_at, sample, h_fd)

    # eikonal constant: H + G - e.(x,0) + h across the grid
    H = denom * d
    G = np.sum((e - k1 * k2 * w) * hit.point, axis=-1)
    eik = H + G - np.sum(e[:, :2] * pts, axis=-1) + h
    eikonal_spread = float(np.max(eik) - np.min(eik))

    return LensDesign(
        sigma1=sigma1, field=field, w=w, C=C, media=media, grid=grid,
        f_grid=f_flat.reshape(grid.shape + (3,)),
        d_grid=d.reshape(grid.shape),
        m1_grid=m1.reshape(grid.shape + (3,)),
        phi_grid=hit.phi.reshape(grid.shape + (2,)),
        f_at=f_at, potential=potential, admissible_C=admissible,
        tangency_residual=tangency, eikonal_spread=eikonal_spread,
    )


class _InvertedGraph(GraphSurface):
    """Graph representation of a surface given parametrically over the plane.

    The surface is x -> (phi(x), eta(x)); the graph height at a plane point
    z is eta(phi^{-1}(z)), with phi inverted by seeded 2D Newton. The
    gradient comes from the known surface normal direction at the preimage.
    """

    def __init__(self, phi_fn, eta_fn, dphi_fn, normal_dir_fn, seed_grid: Grid):
        seeds = phi_fn(seed_grid.flat_points)
        tree = cKDTree(seeds)
        seed_pts = seed_grid.flat_points
        margin = 0.05 * seed_grid.domain.diameter
        lo = seeds.min(axis=0) - margin
        hi = seeds.max(axis=0) + margin

        def invert(z):
            """Preimages under phi; outside the sampled footprint the graph is
            linearly extrapolated so root-finder probes stay well defined."""
            z = np.atleast_2d(np.asarray(z, dtype=float))
            _, idx = tree.query(z)
            x = seed_pts[idx].copy()
            frozen = np.zeros(len(z), dtype=bool)
            for _ in range(60):
                r = phi_fn(x) - z
                resid = np.max(np.abs(r), axis=-1)
                if float(np.max(resid[~frozen], initial=0.0)) < 1e-13:
                    break
                J = dphi_fn(x)
                det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
                frozen |= np.abs(det) < 1e-14
                safe_det = np.where(frozen, 1.0, det)
                dx1 = np.where(frozen, 0.0, (J[:, 1, 1] * r[:, 0] - J[:, 0, 1] * r[:, 1]) / safe_det)
                dx2 = np.where(frozen, 0.0, (-J[:, 1, 0] * r[:, 0] + J[:, 0, 0] * r[:, 1]) / safe_det)
                x[:, 0] -= dx1
                x[:, 1] -= dx2
            resid = np.max(np.abs(phi_fn(x) - z), axis=-1)
            bad = resid > 1e-9
            inside = np.all((z >= lo) & (z <= hi), axis=-1)
            if np.any(bad & inside):
                raise SingularStrikeMapError("strike map fold while inverting the footprint")
            return x, bad

        def height(z):
            z = np.asarray(z, dtype=float)
            flat = np.atleast_2d(z.reshape(-1, 2))
            x, bad = invert(flat)
            vals = eta_fn(x)
            if np.any(bad):
                n = normal_dir_fn(x[bad])
                du = -n[:, :2] / n[:, 2:3]
                gap = flat[bad] - phi_fn(x[bad])
                vals[bad] += np.sum(du * gap, axis=-1)
            return vals.reshape(z.shape[:-1])

        def gradient(z):
            z = np.asarray(z, dtype=float)
            flat = np.atleast_2d(z.reshape(-1, 2))
            x, _ = invert(flat)
            n = normal_dir_fn(x)
            # graph normal is (-Du, 1)/sqrt(...) so Du = -n'/n3
            du = -n[:, :2] / n[:, 2:3]
            return du.reshape(z.shape[:-1] + (2,))

        super().__init__(height=height, gradient=gradient, domain=seed_grid.domain)


def orthogonal_front_design(field: IncidentField, potential: Potential, C_tilde: float,
                            w, C: float, media: Media, grid: Grid) -> LensDesign:
    """Entry face orthogonal to the rays plus its closed-form exit face.

    The entry face is (x,0) + lam(x) e(x) with lam = C_tilde - h; the rays
    meet it at normal incidence so the internal direction is e(x) itself and
    the whole lens has the closed-form parametrization below.
    """
    media.require_lens()
    w = normalize(np.asarray(w, dtype=float))
    k1, k2 = media.kappa1, media.kappa2
    pts = grid.flat_points

    def lam_fn(x):
        return C_tilde - potential.evaluate(x)

    lam = lam_fn(pts)
    if np.any(lam <= 0):
        i = int(np.argmin(lam))
        raise NonpositiveLambdaError(
            f"lam = {lam[i]:.6g} <= 0 at x = {pts[i].tolist()}; raise C_tilde",
            worst_x=pts[i].tolist(),
        )

    def phi_fn(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x + lam_fn(x)[:, None] * field.planar(x)

    def eta_fn(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return lam_fn(x) * field.e3(x)

    def dphi_fn(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ep = field.planar(x)
        J = field.planar_jacobian(x)
        lamx = lam_fn(x)
        out = np.empty(x.shape[:-1] + (2, 2))
        for i in range(2):
            for j in range(2):
                # d phi_i / d x_j = delta_ij - e_j e_i + lam * d e_i / d x_j
                out[..., i, j] = (1.0 if i == j else 0.0) - ep[..., j] * ep[..., i] + lamx * J[..., i, j]
        return out

    J = dphi_fn(pts)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    if np.any(np.abs(det) < 1e-10):
        i = int(np.argmin(np.abs(det)))
        raise SingularStrikeMapError(
            f"|det Dphi| = {abs(det[i]):.3e} < 1e-10 at x = {pts[i].tolist()}", worst_x=pts[i].tolist()
        )

    e = field.unit(pts)
    g_pts = np.column_stack([phi_fn(pts), eta_fn(pts)])
    denom = k1 - k1 * k2 * np.sum(w * e, axis=-1)
    numer = C - C_tilde + k1 * k2 * np.sum(w * g_pts, axis=-1)
    d = numer / denom
    c_floor = float(np.max(C - numer))
    if np.any(d <= 0):
        raise NonpositiveThicknessError(
            f"thickness nonpositive; admissible C interval is ({c_floor:.6g}, inf)",
            admissible_C=(c_floor, np.inf),
        )

    def f_at(x):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_2d(x.reshape(-1, 2))
        ef = field.unit(flat)
        lamf = lam_fn(flat)
        scale = (C - C_tilde + k1 * lamf + k1 * k2 * np.sum(w[:2] * flat, axis=-1)) / (
            k1 - k1 * k2 * np.sum(w * ef, axis=-1)
        )
        lift = np.column_stack([flat, np.zeros(len(flat))])
        out = lift + scale[:, None] * ef
        return out.reshape(x.shape[:-1] + (3,))

    def q_at(x):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_2d(x.reshape(-1, 2))
        ef = field.unit(flat)
        return (ef - k2 * w).reshape(x.shape[:-1] + (3,))

    sigma1 = _InvertedGraph(phi_fn, eta_fn, dphi_fn, lambda x: field.unit(np.atleast_2d(x)), grid)

    h_fd = 1e-5 * grid.domain.diameter
    sample = pts[:: max(1, len(pts) // 512)]
    tangency = _tangency_residual(f_at, q_at, sample, h_fd)

    H = (k1 - k2 * np.sum(w * (k1 * e), axis=-1)) * d
    G = np.sum((e - k1 * k2 * w) * g_pts, axis=-1)
    h_vals = potential.evaluate(pts)
    eik = H + G - np.sum(e[:, :2] * pts, axis=-1) + h_vals
    eikonal_spread = float(np.max(eik) - np.min(eik))

    f_flat = f_at(pts)
    m1 = e
    return LensDesign(
        sigma1=sigma1, field=field, w=w, C=C, media=media, grid=grid,
        f_grid=f_flat.reshape(grid.shape + (3,)),
        d_grid=d.reshape(grid.shape),
        m1_grid=m1.reshape(grid.shape + (3,)),
        phi_grid=phi_fn(pts).reshape(grid.shape + (2,)),
        f_at=f_at, potential=potential, admissible_C=(c_floor, np.inf),
        tangency_residual=tangency, eikonal_spread=eikonal_spread,
    )


def vertical_deflection(du, kappa1):
    """Delta(x): multiplier putting lam1*nu1 = Delta * (-Du, 1) for vertical rays."""
    du = np.asarray(du, dtype=float)
    g2 = np.sum(du * du, axis=-1)
    root = np.sqrt(1.0 + (1.0 - 1.0 / kappa1**2) * g2)
    return (1.0 - kappa1 * root) / (1.0 + g2)


def vertical_design(sigma1: GraphSurface, C: float, media: Media, grid: Grid,
                    field: IncidentField | None = None) -> LensDesign:
    """Collimated specialization: e = w = e3, footprint phi(x) = x.

    Thickness d = -((1 - k1 k2) u + C)/(k1 - k2 (1 - Delta)); positive
    exactly when (1 - k1 k2) u + C < 0 on the grid.
    """
    media.require_lens()
    k1, k2 = media.kappa1, media.kappa2
    pts = grid.flat_points

    def parts(x):
        flat = np.atleast_2d(np.asarray(x, dtype=float).reshape(-1, 2))
        u = sigma1.u(flat)
        du = sigma1.grad(flat)
        delta = vertical_deflection(du, k1)
        m1 = np.empty(flat.shape[:-1] + (3,))
        m1[..., :2] = delta[..., None] * du / k1
        m1[..., 2] = (1.0 - delta) / k1
        d = -((1.0 - k1 * k2) * u + C) / (k1 - k2 * (1.0 - delta))
        return u, du, delta, m1, d

    u, du, delta, m1, d = parts(pts)
    if np.any(delta > 1.0 - k1 * k2 + 1e-12):
        i = int(np.argmax(delta))
        raise CompatibilityViolationError(
            f"Delta = {delta[i]:.6g} exceeds 1 - kappa1*kappa2 = {1 - k1 * k2:.6g} at x = {pts[i].tolist()}",
            worst_x=pts[i].tolist(),
            margin=float(1 - k1 * k2 - delta[i]),
        )
    c_ceiling = float(np.min(-(1.0 - k1 * k2) * u))
    if np.any(d <= 0):
        raise NonpositiveThicknessError(
            f"thickness nonpositive; admissible C interval is (-inf, {c_ceiling:.6g})",
            admissible_C=(-np.inf, c_ceiling),
        )

    def f_at(x):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_2d(x.reshape(-1, 2))
        uq, _, _, m1q, dq = parts(flat)
        out = np.column_stack([flat, uq]) + dq[:, None] * m1q
        return out.reshape(x.shape[:-1] + (3,))

    w = np.array([0.0, 0.0, 1.0])

    def q_at(x):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_2d(x.reshape(-1, 2))
        _, _, _, m1q, _ = parts(flat)
        return (m1q - k2 * w).reshape(x.shape[:-1] + (3,))

    if field is None:
        field = constant_field(grid.domain)

    h_fd = 1e-5 * grid.domain.diameter
    sample = pts[:: max(1, len(pts) // 512)]
    tangency = _tangency_residual(f_at, q_at, sample, h_fd)

    H = (k1 - k2 * (1.0 - delta)) * d
    G = (1.0 - k1 * k2) * u
    eik = H + G
    eikonal_spread = float(np.max(eik) - np.min(eik))

    f_flat = f_at(pts)
    return LensDesign(
        sigma1=sigma1, field=field, w=w, C=C, media=media, grid=grid,
        f_grid=f_flat.reshape(grid.shape + (3,)),
        d_grid=d.reshape(grid.shape),
        m1_grid=m1.reshape(grid.shape + (3,)),
        phi_grid=pts.reshape(grid.shape + (2,)),
        f_at=f_at, potential=None, admissible_C=(-np.inf, c_ceiling),
        tangency_residual=tangency, eikonal_spread=eikonal_spread,
    )


@dataclass(frozen=True)
class InjectivityBound:
    """Self-intersection certificate for collimated designs.

    The analytic part evaluates the Lipschitz chain for the exit face: with
    L_u, L_Du Lipschitz constants of u and Du,

        M  = sqrt(5) (1 + sqrt(k1^2 - 1)) / k1          (internal direction vs Du)
        A  = (1 + k2)(1 + k1 k2) / (k1 (1 - k2)^2)      (thickness vs u)
        B  = k2 M / (k1 (1 - k2)^2)                     (thickness vs Du)
        alpha = (M/(k1(1-k2)) + B) L_Du
        beta  = (1 + k1 k2) max(u) (M/(k1(1-k2)) + B) L_Du + A L_u

    and the face cannot self-intersect when beta < 1/2 and |C| < 1/(2 alpha).
    """

    alpha_bound: float
    beta_bound: float
    C_max: float
    analytic_injective: bool
    verdict_grid: bool
    min_separation_ratio: float
    resolution: int


def lipschitz_from_grid(sigma1: GraphSurface, grid: Grid):
    pts = grid.flat_points
    du = sigma1.grad(pts)
    lu = float(np.max(np.linalg.norm(du, axis=-1)))
    if sigma1.hessian is not None:
        hess = sigma1.hessian(pts)
        ldu = float(np.max(np.linalg.norm(hess, axis=(-2, -1))))
    else:
        h = 1e-5 * grid.domain.diameter
        ldu = 0.0
        for j in range(2):
            step = np.zeros(2)
            step[j] = h
            ddu = (sigma1.grad(pts + step) - sigma1.grad(pts - step)) / (2 * h)
            ldu = max(ldu, float(np.max(np.linalg.norm(ddu, axis=-1))))
    return lu, ldu


def injectivity_check(design: LensDesign, L_u: float | None = None, L_Du: float | None = None,
                      resolution: int = 33) -> InjectivityBound:
    """Analytic no-self-intersection bound plus a pairwise grid check."""
    e_probe = design.field.unit(design.grid.flat_points[:1])[0]
    collimated = np.allclose(e_probe, [0, 0, 1], atol=1e-12) and np.allclose(design.w, [0, 0, 1], atol=1e-12)
    if not collimated:
        raise NotCollimatedError("analytic self-intersection bound needs e = w = e3")
    k1, k2 = design.media.kappa1, design.media.kappa2
    if L_u is None or L_Du is None:
        lu_est, ldu_est = lipschitz_from_grid(design.sigma1, design.grid)
        L_u = lu_est if L_u is None else L_u
        L_Du = ldu_est if L_Du is None else L_Du

    M = np.sqrt(5.0) * (1.0 + np.sqrt(k1 * k1 - 1.0)) / k1
    A = (1.0 + k2) * (1.0 + k1 * k2) / (k1 * (1.0 - k2) ** 2)
    B = k2 * M / (k1 * (1.0 - k2) ** 2)
    core = M / (k1 * (1.0 - k2)) + B
    max_u = float(np.max(design.sigma1.u(design.grid.flat_points)))
    alpha = core * L_Du
    beta = (1.0 + k1 * k2) * max_u * core * L_Du + A * L_u
    c_max = np.inf if alpha == 0 else 1.0 / (2.0 * alpha)
    analytic = bool(beta < 0.5 and abs(design.C) < c_max)

    sub = make_grid(design.grid.domain, n=resolution)
    f = design.f_at(sub.flat_points)
    x = sub.flat_points
    min_ratio = np.inf
    for i in range(len(f) - 1):
        df = np.linalg.norm(f[i + 1:] - f[i], axis=-1)
        dx = np.linalg.norm(x[i + 1:] - x[i], axis=-1)
        r = np.min(df / dx)
        min_ratio = min(min_ratio, float(r))
    return InjectivityBound(
        alpha_bound=float(alpha), beta_bound=float(beta), C_max=float(c_max),
        analytic_injective=analytic, verdict_grid=bool(min_ratio > 0.0),
        min_separation_ratio=float(min_ratio), resolution=resolution,
    )


def design_far_field_mirrors(sigma1: GraphSurface, field: IncidentField, w, C: float,
                             grid: Grid, curl_tol: float = DEFAULT_CURL_TOL) -> MirrorDesign:
    """Two-mirror analogue: reflect e(x) off the entry graph, then into w."""
    w = normalize(np.asarray(w, dtype=float))
    report = curl_check(field, grid, curl_tol)
    if not report.conservative:
        raise CurlViolationError(
            f"curl residual {report.max_residual:.3e} exceeds {curl_tol:.3e}",
            residual=report.max_residual,
        )
    potential = build_potential(field, grid.domain.center, grid)

    def evaluate(x):
        flat = np.atleast_2d(np.asarray(x, dtype=float).reshape(-1, 2))
        e = field.unit(flat)
        hit = strike(sigma1, field, flat)
        nu1 = graph_normal(sigma1.grad(hit.phi))
        m1 = e - 2.0 * np.sum(e * nu1, axis=-1)[:, None] * nu1
        h = potential.evaluate(flat)
        numer = C - h + np.sum(e[:, :2] * flat, axis=-1) - np.sum((e - w) * hit.point, axis=-1)
        denom = 1.0 - np.sum(w * m1, axis=-1)
        return e, hit, m1, h, numer, denom

    pts = grid.flat_points
    e, hit, m1, h, numer, denom = evaluate(pts)
    if np.any(denom < 1e-10):
        i = int(np.argmin(denom))
        raise DegenerateDirectionError(
            f"reflected direction already parallel to w at x = {pts[i].tolist()} (1 - m1.w = {denom[i]:.3e})",
            worst_x=pts[i].tolist(),
        )
    d = numer / denom
    c_floor = float(np.max(C - numer))
    if np.any(d <= 0):
        raise NonpositiveThicknessError(
            f"mirror separation nonpositive; admissible C interval is ({c_floor:.6g}, inf)",
            admissible_C=(c_floor, np.inf),
        )

    def f_at(x):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_2d(x.reshape(-1, 2))
        _, hitq, m1q, _, numq, denq = evaluate(flat)
        out = hitq.point + (numq / denq)[:, None] * m1q
        return out.reshape(x.shape[:-1] + (3,))

    def q_at(x):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_2d(x.reshape(-1, 2))
        _, _, m1q, _, _, _ = evaluate(flat)
        return (m1q - w).reshape(x.shape[:-1] + (3,))

    h_fd = 1e-5 * grid.domain.diameter
    sample = pts[:: max(1, len(pts) // 512)]
    tangency = _tangency_residual(f_at, q_at, sample, h_fd)

    H = denom * d
    G = np.sum((e - w) * hit.point, axis=-1)
    eik = H + G - np.sum(e[:, :2] * pts, axis=-1) + h
    eikonal_spread = float(np.max(eik) - np.min(eik))

    return MirrorDesign(
        sigma1=sigma1, field=field, w=w, C=C, grid=grid,
        f_grid=(hit.point + d[:, None] * m1).reshape(grid.shape + (3,)),
        d_grid=d.reshape(grid.shape),
        m1_grid=m1.reshape(grid.shape + (3,)),
        f_at=f_at, admissible_C=(c_floor, np.inf),
        tangency_residual=tangency, eikonal_spread=eikonal_spread,
    )
