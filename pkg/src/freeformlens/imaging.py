"""Near-field imaging: find both lens faces (or a mirror pair) sending each
source point (x,0) vertically through the optics onto the image point
(T(x), a), with vertical exit rays.

Routes by index regime:

  n1 = n3   linear system, solved by a line integral    (solve_same_index)
  n1 > n3   local quasilinear system, swept by RK4      (solve_quasilinear)
  n1 < n3   reversed optical path on the image side     (solve_reverse_index)
  mirrors   gradient system Du = S/C                    (solve_mirror_imaging)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .domain import Domain, Grid, Rectangle, make_grid
from .errors import (
    BoundViolationError,
    CurlViolationError,
    DegenerateMagnificationError,
    DomainCollapseError,
    InfeasibleThicknessError,
    InitialConditionError,
    InvalidInputError,
    MapConditionError,
    NonInvertibleMapError,
    NonpositiveThicknessError,
    PathInconsistencyError,
)
from .expressions import parse_expression
from .farfield import LensDesign, vertical_design
from .fields import default_path_tol
from .geometry import Media, MediumPair, normalize, refract
from .integrate import lpath_integral
from .surfaces import GraphSurface, ParametricSurface, design_surface
from .tracer import OpticalElement

DEFAULT_MAP_TOL = 1e-6


# ---------------------------------------------------------------------------
# Imaging maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ImagingMap:
    """Bijection T between the source plane and the image plane footprint.

    ``displacement`` is S = T - id; ``jacobian_S`` returns dS_i/dx_j, by
    central differences when no analytic form is given.
    """

    forward: Callable[[np.ndarray], np.ndarray]
    analytic_jacobian: Callable[[np.ndarray], np.ndarray] | None = None
    analytic_inverse: Callable[[np.ndarray], np.ndarray] | None = None
    fd_step: float = 1e-6
    name: str = "map"

    def T(self, x):
        return self.forward(np.asarray(x, dtype=float))

    def displacement(self, x):
        x = np.asarray(x, dtype=float)
        return self.T(x) - x

    def jacobian_S(self, x):
        x = np.asarray(x, dtype=float)
        if self.analytic_jacobian is not None:
            return self.analytic_jacobian(x)
        h = self.fd_step
        out = np.empty(x.shape[:-1] + (2, 2))
        for j in range(2):
            step = np.zeros(2)
            step[j] = h
            out[..., :, j] = (self.displacement(x + step) - self.displacement(x - step)) / (2.0 * h)
        return out

    def inverse(self, seed_grid: Grid | None = None) -> "ImagingMap":
        """T^{-1} as an ImagingMap; Newton-inverted when no closed form."""
        if self.analytic_inverse is not None:
            inv = self.analytic_inverse
            return ImagingMap(forward=inv, analytic_inverse=self.forward,
                              fd_step=self.fd_step, name=self.name + "_inverse")
        if seed_grid is None:
            raise NonInvertibleMapError("generic inversion needs a seed grid")
        seeds_x = seed_grid.flat_points
        seeds_y = self.T(seeds_x)
        tree = cKDTree(seeds_y)

        def inv(y):
            y = np.asarray(y, dtype=float)
            flat = np.atleast_2d(y.reshape(-1, 2))
            _, idx = tree.query(flat)
            x = seeds_x[idx].copy()
            for _ in range(60):
                r = self.T(x) - flat
                if float(np.max(np.abs(r))) < 1e-13:
                    break
                J = self.jacobian_S(x)
                j11 = J[:, 0, 0] + 1.0
                j12 = J[:, 0, 1]
                j21 = J[:, 1, 0]
                j22 = J[:, 1, 1] + 1.0
                det = j11 * j22 - j12 * j21
                if np.any(np.abs(det) < 1e-14):
                    raise NonInvertibleMapError("map Jacobian is singular; cannot invert")
                x[:, 0] -= (j22 * r[:, 0] - j12 * r[:, 1]) / det
                x[:, 1] -= (-j21 * r[:, 0] + j11 * r[:, 1]) / det
            if float(np.max(np.abs(self.T(x) - flat))) > 1e-9:
                raise NonInvertibleMapError("Newton inversion of the map failed to converge")
            return x.reshape(y.shape)

        return ImagingMap(forward=inv, analytic_inverse=self.forward,
                          fd_step=self.fd_step, name=self.name + "_inverse")


def identity_map() -> ImagingMap:
    return ImagingMap(
        forward=lambda x: np.asarray(x, dtype=float).copy(),
        analytic_jacobian=lambda x: np.zeros(np.asarray(x).shape[:-1] + (2, 2)),
        analytic_inverse=lambda y: np.asarray(y, dtype=float).copy(),
        name="identity",
    )


def magnification_map(alpha: float) -> ImagingMap:
    scale = 1.0 + alpha

    def jac(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = alpha
        out[..., 1, 1] = alpha
        return out

    return ImagingMap(
        forward=lambda x: scale * np.asarray(x, dtype=float),
        analytic_jacobian=jac,
        analytic_inverse=lambda y: np.asarray(y, dtype=float) / scale,
        name="magnification",
    )


def shear_map(beta: float) -> ImagingMap:
    def fwd(x):
        x = np.asarray(x, dtype=float)
        out = x.copy()
        out[..., 0] = x[..., 0] + beta * x[..., 1]
        return out

    def jac(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 1] = beta
        return out

    def inv(y):
        y = np.asarray(y, dtype=float)
        out = y.copy()
        out[..., 0] = y[..., 0] - beta * y[..., 1]
        return out

    return ImagingMap(forward=fwd, analytic_jacobian=jac, analytic_inverse=inv, name="shear")


def affine_map(matrix, offset=(0.0, 0.0)) -> ImagingMap:
    M = np.asarray(matrix, dtype=float)
    b = np.asarray(offset, dtype=float)
    Minv = np.linalg.inv(M)

    def jac(x):
        x = np.asarray(x, dtype=float)
        out = np.broadcast_to(M - np.eye(2), x.shape[:-1] + (2, 2)).copy()
        return out

    return ImagingMap(
        forward=lambda x: np.asarray(x, dtype=float) @ M.T + b,
        analytic_jacobian=jac,
        analytic_inverse=lambda y: (np.asarray(y, dtype=float) - b) @ Minv.T,
        name="affine",
    )


def axis_map(profile: Callable[[np.ndarray], np.ndarray],
             profile_derivative: Callable[[np.ndarray], np.ndarray] | None = None,
             name: str = "axis") -> ImagingMap:
    """T(x) = (profile(x1), x2): displacement along the first axis only."""

    def fwd(x):
        x = np.asarray(x, dtype=float)
        out = x.copy()
        out[..., 0] = profile(x[..., 0])
        return out

    jac = None
    if profile_derivative is not None:
        def jac(x):
            x = np.asarray(x, dtype=float)
            out = np.zeros(x.shape[:-1] + (2, 2))
            out[..., 0, 0] = profile_derivative(x[..., 0]) - 1.0
            return out

    return ImagingMap(forward=fwd, analytic_jacobian=jac, name=name)


def axis_map_from_expression(h_expression: str) -> ImagingMap:
    node = parse_expression(h_expression)
    dnode = node.diff("x1")
    return axis_map(lambda t: np.asarray(node(t, np.zeros_like(t)), dtype=float),
                    lambda t: np.asarray(dnode(t, np.zeros_like(t)), dtype=float),
                    name="axis")


def custom_map(t1_expression: str, t2_expression: str) -> ImagingMap:
    n1 = parse_expression(t1_expression)
    n2 = parse_expression(t2_expression)
    d11, d12 = n1.diff("x1"), n1.diff("x2")
    d21, d22 = n2.diff("x1"), n2.diff("x2")

    def fwd(x):
        x = np.asarray(x, dtype=float)
        return np.stack([
            np.asarray(n1(x[..., 0], x[..., 1]), dtype=float),
            np.asarray(n2(x[..., 0], x[..., 1]), dtype=float),
        ], axis=-1)

    def jac(x):
        x = np.asarray(x, dtype=float)
        a, b = x[..., 0], x[..., 1]
        out = np.empty(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = np.asarray(d11(a, b), dtype=float) - 1.0
        out[..., 0, 1] = np.asarray(d12(a, b), dtype=float)
        out[..., 1, 0] = np.asarray(d21(a, b), dtype=float)
        out[..., 1, 1] = np.asarray(d22(a, b), dtype=float) - 1.0
        return out

    return ImagingMap(forward=fwd, analytic_jacobian=jac, name="custom")


MAP_BUILDERS = {
    "identity": lambda spec: identity_map(),
    "magnification": lambda spec: magnification_map(spec["alpha"]),
    "shear": lambda spec: shear_map(spec["beta"]),
    "affine": lambda spec: affine_map(spec["matrix"], spec.get("offset", (0.0, 0.0))),
    "axis": lambda spec: axis_map_from_expression(spec["h"]),
    "custom": lambda spec: custom_map(spec["t1"], spec["t2"]),
}


def map_from_spec(spec: dict) -> ImagingMap:
    kind = spec.get("kind")
    if kind not in MAP_BUILDERS:
        raise InvalidInputError(f"unknown map kind {kind!r}; expected one of {sorted(MAP_BUILDERS)}")
    return MAP_BUILDERS[kind](spec)


# ---------------------------------------------------------------------------
# Integrability checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompatibilityReport:
    """Node-wise integrability quantities of a displacement field."""

    mode: str                 # "same_index" or "strict"
    curl_grid: np.ndarray     # curl S per node
    cross_grid: np.ndarray    # (1/2) S x D|S|^2 per node
    combo_residual: float
    passed: bool
    map_tol: float
    bound_margin: float | None = None


def _curl_and_cross(imaging_map: ImagingMap, pts):
    S = imaging_map.displacement(pts)
    J = imaging_map.jacobian_S(pts)
    curl = J[..., 1, 0] - J[..., 0, 1]
    # D|S|^2 components: 2 (S1 dS1/dxj + S2 dS2/dxj); 2d cross a x b = a1 b2 - a2 b1
    g1 = 2.0 * (S[..., 0] * J[..., 0, 0] + S[..., 1] * J[..., 1, 0])
    g2 = 2.0 * (S[..., 0] * J[..., 0, 1] + S[..., 1] * J[..., 1, 1])
    cross = 0.5 * (S[..., 0] * g2 - S[..., 1] * g1)
    return S, curl, cross


def check_map_same_index(imaging_map: ImagingMap, C: float, kappa1: float,
                         grid: Grid, map_tol: float = DEFAULT_MAP_TOL) -> CompatibilityReport:
    """Integrability of the equal-index system: the displacement must satisfy
    (C^2 - (k1^2-1)|S|^2) curl S = ((k1^2-1)/2) S x D|S|^2 on the grid."""
    pts = grid.flat_points
    S, curl, cross = _curl_and_cross(imaging_map, pts)
    s_norm = np.linalg.norm(S, axis=-1)
    margin = float(np.min(abs(C) / np.sqrt(kappa1**2 - 1.0) - s_norm))
    if margin <= 0:
        i = int(np.argmax(s_norm))
        raise BoundViolationError(
            f"|S| = {s_norm[i]:.6g} reaches |C|/sqrt(k1^2-1) = {abs(C)/np.sqrt(kappa1**2-1):.6g} "
            f"at x = {pts[i].tolist()}",
            worst_x=pts[i].tolist(),
        )
    residual = (C * C - (kappa1**2 - 1.0) * s_norm**2) * curl - (kappa1**2 - 1.0) * cross
    combo = float(np.max(np.abs(residual)))
    return CompatibilityReport(
        mode="same_index",
        curl_grid=curl.reshape(grid.shape),
        cross_grid=cross.reshape(grid.shape),
        combo_residual=combo,
        passed=combo <= map_tol,
        map_tol=map_tol,
        bound_margin=margin,
    )


def check_map_strict(imaging_map: ImagingMap, grid: Grid,
                     map_tol: float = DEFAULT_MAP_TOL) -> CompatibilityReport:
    """Strict conditions: curl S = 0 and S x D|S|^2 = 0 node-wise."""
    pts = grid.flat_points
    _, curl, cross = _curl_and_cross(imaging_map, pts)
    combo = float(max(np.max(np.abs(curl)), np.max(np.abs(2.0 * cross))))
    return CompatibilityReport(
        mode="strict",
        curl_grid=curl.reshape(grid.shape),
        cross_grid=cross.reshape(grid.shape),
        combo_residual=combo,
        passed=combo <= map_tol,
        map_tol=map_tol,
    )


def pde_residual_vertical(u, du, S, kappa1, kappa2, C):
    """Residual of the vertical imaging system for given u, Du samples."""
    du = np.asarray(du, dtype=float)
    root = np.sqrt(kappa1**2 + (kappa1**2 - 1.0) * np.sum(du * du, axis=-1))
    denom = (kappa1**2 - kappa1 * kappa2) * root + kappa1**2 * (1.0 - kappa1 * kappa2)
    lhs = (((1.0 - kappa1 * kappa2) * u + C) / denom)[..., None] * du
    return np.linalg.norm(lhs - S / (kappa1**2 - 1.0), axis=-1)


# ---------------------------------------------------------------------------
# Equal indices: linear route
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ImagingSolution:
    surface: GraphSurface
    design: LensDesign
    imaging_map: ImagingMap
    a: float | None
    report: CompatibilityReport
    path_residual: float
    warnings: tuple[str, ...] = ()

    def elements(self, exit_geometry="exact", mesh_n: int | None = None):
        return self.design.elements(exit_geometry=exit_geometry, mesh_n=mesh_n)

    def targets(self, x):
        return self.imaging_map.T(x)


def solve_same_index(imaging_map: ImagingMap, C: float, kappa1: float, x0, u0: float,
                     grid: Grid, a: float | None = None, media: Media | None = None,
                     map_tol: float = DEFAULT_MAP_TOL, path_tol: float | None = None) -> ImagingSolution:
    """Equal-index imaging lens: u from a line integral of the explicit
    gradient field, then the collimated exit-face construction."""
    if C >= 0:
        raise InvalidInputError("the equal-index construction needs C < 0")
    if media is None:
        media = Media(1.0, kappa1, 1.0)
    if abs(media.kappa1 * media.kappa2 - 1.0) > 1e-12:
        raise InvalidInputError("equal-index route requires n1 = n3")
    if path_tol is None:
        path_tol = default_path_tol(grid.domain)
    report = check_map_same_index(imaging_map, C, kappa1, grid, map_tol)
    if not report.passed:
        raise MapConditionError(
            f"displacement integrability residual {report.combo_residual:.3e} exceeds {map_tol:.3e}",
            residual=report.combo_residual,
        )
    x0 = np.asarray(x0, dtype=float)

    def F(x):
        x = np.asarray(x, dtype=float)
        S = imaging_map.displacement(x)
        s2 = np.sum(S * S, axis=-1)
        return -kappa1 * S / np.sqrt(C * C - (kappa1**2 - 1.0) * s2)[..., None]

    pts = grid.flat_points
    ua = u0 + lpath_integral(F, x0, pts, path_tol, order="x1_first")
    ub = u0 + lpath_integral(F, x0, pts, path_tol, order="x2_first")
    path_residual = float(np.max(np.abs(ua - ub)))
    if path_residual > path_tol:
        raise PathInconsistencyError(
            f"integration paths disagree by {path_residual:.3e} > {path_tol:.3e}",
            discrepancy=path_residual,
        )

    def u_at(x):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_2d(x.reshape(-1, 2))
        vals = u0 + lpath_integral(F, x0, flat, path_tol, order="x1_first")
        return vals.reshape(x.shape[:-1])

    surface = GraphSurface(height=u_at, gradient=F, domain=grid.domain)
    design = vertical_design(surface, C, media, grid)
    warnings = ()
    if a is not None:
        top = float(np.max(design.f_grid[..., 2]))
        if a < top:
            warnings = (f"image plane a={a} is below the highest exit-face point {top:.6g}",)
    return ImagingSolution(surface=surface, design=design, imaging_map=imaging_map,
                           a=a, report=report, path_residual=path_residual, warnings=warnings)


def magnification_profile(alpha: float, C: float, kappa1: float, A: float,
                          max_radius: float | None = None) -> GraphSurface:
    """Closed-form entry face for the pure magnification map (equal indices).

    u = k1/(alpha (k1^2-1)) sqrt(C^2 - (k1^2-1) alpha^2 |x|^2) + A; its graph
    lies on the ellipsoid (u - A)^2 + k1^2 |x|^2/(k1^2 - 1) = (C k1/(alpha (k1^2-1)))^2.
    """
    if abs(alpha) < 1e-12:
        raise DegenerateMagnificationError("|alpha| < 1e-12: magnification formulas divide by alpha")
    k2m1 = kappa1**2 - 1.0
    if max_radius is not None and C * C - k2m1 * alpha**2 * max_radius**2 <= 0:
        raise BoundViolationError(
            f"C^2 - (k1^2-1) alpha^2 r^2 <= 0 at r = {max_radius}; shrink the domain or raise |C|"
        )

    def radicand(x):
        x = np.asarray(x, dtype=float)
        return C * C - k2m1 * alpha**2 * np.sum(x * x, axis=-1)

    def h(x):
        r = radicand(x)
        if np.any(r <= 0):
            raise BoundViolationError("magnification bound violated inside the evaluation set")
        return kappa1 / (alpha * k2m1) * np.sqrt(r) + A

    def g(x):
        x = np.asarray(x, dtype=float)
        return -kappa1 * alpha * x / np.sqrt(radicand(x))[..., None]

    def hess(x):
        x = np.asarray(x, dtype=float)
        r = radicand(x)
        out = np.empty(x.shape[:-1] + (2, 2))
        for i in range(2):
            for j in range(2):
                out[..., i, j] = -kappa1 * alpha * (
                    (1.0 if i == j else 0.0) / np.sqrt(r)
                    + k2m1 * alpha**2 * x[..., i] * x[..., j] / r**1.5
                )
        return out

    return GraphSurface(height=h, gradient=g, hessian=hess)


def ellipsoid_residual(surface: GraphSurface, alpha: float, C: float, kappa1: float,
                       A: float, x) -> np.ndarray:
    k2m1 = kappa1**2 - 1.0
    x = np.asarray(x, dtype=float)
    u = surface.u(x)
    rhs = (C * kappa1 / (alpha * k2m1)) ** 2
    return np.abs((u - A) ** 2 + kappa1**2 * np.sum(x * x, axis=-1) / k2m1 - rhs)


def axis_profile_quadrature(profile: Callable, x1, x0_1: float, u0: float,
                            C: float, kappa1: float) -> np.ndarray:
    """One-variable quadrature for axis maps T = (profile(x1), x2)."""
    from scipy.integrate import quad

    def integrand(t):
        s = profile(np.asarray([t]))[0] - t
        return -kappa1 * s / np.sqrt(C * C - (kappa1**2 - 1.0) * s * s)

    out = np.empty(np.shape(x1))
    flat = np.atleast_1d(np.asarray(x1, dtype=float)).ravel()
    res = np.empty(flat.shape)
    for i, xv in enumerate(flat):
        val, _ = quad(integrand, x0_1, xv, epsabs=1e-13, epsrel=1e-13, limit=200)
        res[i] = u0 + val
    return res.reshape(np.shape(x1))


@dataclass(frozen=True)
class ThicknessPlan:
    C: float
    d0: float
    feasible: bool
    bound_margin: float
    C_bounds: tuple[float, float]   # |C| range over admissible entry normals
    ratio_bound: float              # max d / min d cannot exceed this


def thickness_plan(d0: float, alpha: float, gamma: float, kappa1: float,
                   nu0=None) -> ThicknessPlan:
    """Choose C from the center thickness d0 (and entry normal nu0).

    Feasible when alpha*gamma < d0 (k1-1)/sqrt(k1^2-1); then the bound
    |S| < |C|/sqrt(k1^2-1) holds on the radius-gamma disk for any
    admissible normal.
    """
    if d0 <= 0 or gamma <= 0:
        raise InvalidInputError("d0 and gamma must be positive")
    if nu0 is None:
        m1_vert = 1.0
    else:
        nu0 = normalize(np.asarray(nu0, dtype=float))
        m1_vert = float(refract(np.array([0.0, 0.0, 1.0]), nu0, kappa1).m[2])
    C = -d0 * (kappa1 - m1_vert)
    limit = d0 * (kappa1 - 1.0) / np.sqrt(kappa1**2 - 1.0)
    margin = limit - alpha * gamma
    if margin <= 0:
        required = alpha * gamma * np.sqrt(kappa1**2 - 1.0) / (kappa1 - 1.0)
        raise InfeasibleThicknessError(
            f"alpha*gamma = {alpha * gamma:.6g} needs center thickness d0 > {required:.6g}",
            required_d0=float(required),
        )
    return ThicknessPlan(
        C=float(C), d0=d0, feasible=True, bound_margin=float(margin),
        C_bounds=(d0 * (kappa1 - 1.0), d0 * (kappa1 - 1.0 / kappa1)),
        ratio_bound=((kappa1 + 1.0) / kappa1) ** 2,
    )
