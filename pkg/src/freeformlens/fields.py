"""Incident direction fields on a planar source, their curl test, and the
scalar potential of the planar part.

A field is a unit vector map e(x) = (e'(x), e3(x)) with e3 > 0 on the
domain. The lens constructions need curl e' = 0; then e' = grad h for a
potential h recovered here by line integration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .domain import Domain, Grid
from .errors import DomainError, InvalidInputError, NotConservativeError
from .expressions import parse_expression
from .integrate import lpath_integral, staircase_integral

DEFAULT_CURL_TOL = 1e-6
FD_STEP_FACTOR = 1e-5  # finite-difference step = factor * domain diameter


def default_path_tol(domain: Domain) -> float:
    return 1e-8 * domain.diameter


@dataclass(frozen=True)
class IncidentField:
    """Differentiable unit field over a planar domain.

    ``planar_jacobian`` returns d e_i / d x_j for i,j in {1,2}; when no
    analytic form is supplied it falls back to central differences with
    step ``fd_step``.
    """

    domain: Domain
    evaluate: Callable[[np.ndarray], np.ndarray]  # (N,2) -> (N,3)
    analytic_jacobian: Callable[[np.ndarray], np.ndarray] | None = None
    analytic_potential: Callable[[np.ndarray], np.ndarray] | None = None  # h up to a constant
    fd_step: float | None = None
    name: str = "field"

    def __post_init__(self):
        if self.fd_step is None:
            object.__setattr__(self, "fd_step", FD_STEP_FACTOR * self.domain.diameter)

    def unit(self, x):
        e = self.evaluate(np.asarray(x, dtype=float))
        return e

    def planar(self, x):
        return self.unit(x)[..., :2]

    def e3(self, x):
        return self.unit(x)[..., 2]

    def planar_jacobian(self, x):
        x = np.asarray(x, dtype=float)
        if self.analytic_jacobian is not None:
            return self.analytic_jacobian(x)
        h = self.fd_step
        out = np.empty(x.shape[:-1] + (2, 2))
        for j in range(2):
            step = np.zeros(2)
            step[j] = h
            out[..., :, j] = (self.planar(x + step) - self.planar(x - step)) / (2.0 * h)
        return out

    def check_unit(self, grid: Grid, tol=1e-10):
        e = self.unit(grid.flat_points)
        err = np.abs(np.sqrt(np.sum(e * e, axis=-1)) - 1.0)
        if float(np.max(err)) > tol:
            raise InvalidInputError(f"field is not unit to {tol:g}: worst {np.max(err):.3e}")
        if np.any(e[..., 2] <= 0):
            raise InvalidInputError("field must have positive vertical component")


@dataclass(frozen=True)
class CurlReport:
    max_residual: float
    conservative: bool
    samples: np.ndarray
    curl_tol: float


@dataclass(frozen=True)
class Potential:
    """Scalar h with grad h = e' and h(x0) = 0.

    Built by line integration; when the field carries an analytic
    antiderivative the fast path uses it (validated against the integral
    on the build grid), and ``evaluate_integral`` always integrates.
    """

    field_ref: IncidentField
    x0: np.ndarray
    path_tol: float
    path_residual: float
    analytic_offset: float | None = None

    def evaluate(self, x):
        if self.analytic_offset is not None:
            x = np.asarray(x, dtype=float)
            return self.field_ref.analytic_potential(x) - self.analytic_offset
        return self.evaluate_integral(x)

    def evaluate_integral(self, x):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_2d(x.reshape(-1, 2))
        vals = lpath_integral(self.field_ref.planar, self.x0, flat, self.path_tol)
        return vals.reshape(x.shape[:-1])

    def evaluate_staircase(self, x, steps=8):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_2d(x.reshape(-1, 2))
        vals = staircase_integral(self.field_ref.planar, self.x0, flat, self.path_tol, steps=steps)
        return vals.reshape(x.shape[:-1])


def curl_check(field: IncidentField, grid: Grid, curl_tol: float = DEFAULT_CURL_TOL) -> CurlReport:
    """Max |d e2/d x1 - d e1/d x2| over the grid nodes."""
    pts = grid.flat_points
    inside = field.domain.contains(pts, tol=1e-9 * max(field.domain.diameter, 1.0))
    if not np.all(inside):
        bad = pts[~inside][0]
        raise DomainError(f"grid point {bad.tolist()} outside the field domain")
    jac = field.planar_jacobian(pts)
    curl = jac[..., 1, 0] - jac[..., 0, 1]
    samples = curl.reshape(grid.shape)
    max_res = float(np.max(np.abs(curl)))
    return CurlReport(max_residual=max_res, conservative=max_res <= curl_tol, samples=samples, curl_tol=curl_tol)


def build_potential(field: IncidentField, x0, grid: Grid, path_tol: float | None = None) -> Potential:
    """Reconstruct h with grad h = e', h(x0)=0; raises if paths disagree."""
    if path_tol is None:
        path_tol = default_path_tol(field.domain)
    x0 = np.asarray(x0, dtype=float)
    pts = grid.flat_points
    a = lpath_integral(field.planar, x0, pts, path_tol, order="x1_first")
    b = lpath_integral(field.planar, x0, pts, path_tol, order="x2_first")
    residual = float(np.max(np.abs(a - b)))
    if residual > path_tol:
        raise NotConservativeError(
            f"L-path integrals disagree by {residual:.3e} > {path_tol:.3e}; field is not conservative",
            residual=residual,
        )
    offset = None
    if field.analytic_potential is not None:
        offset = float(field.analytic_potential(x0[None, :])[0])
        mismatch = float(np.max(np.abs(field.analytic_potential(pts) - offset - a)))
        if mismatch > 100.0 * path_tol:
            raise NotConservativeError(
                f"analytic potential disagrees with the line integral by {mismatch:.3e}",
                residual=mismatch,
            )
    return Potential(field_ref=field, x0=x0, path_tol=path_tol, path_residual=residual, analytic_offset=offset)


# ---------------------------------------------------------------------------
# Built-in fields
# ---------------------------------------------------------------------------

def constant_field(domain: Domain, direction=(0.0, 0.0, 1.0)) -> IncidentField:
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    if d[2] <= 0:
        raise InvalidInputError("constant field needs positive vertical component")

    def ev(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(d, x.shape[:-1] + (3,)).copy()

    def jac(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (2, 2))

    def pot(x):
        x = np.asarray(x, dtype=float)
        return d[0] * x[..., 0] + d[1] * x[..., 1]

    return IncidentField(domain=domain, evaluate=ev, analytic_jacobian=jac, analytic_potential=pot, name="constant")


def point_source_field(V, domain: Domain, analytic_jacobian: bool = True) -> IncidentField:
    """Field of rays through the virtual point V strictly below the source plane."""
    V = np.asarray(V, dtype=float)
    if V[2] >= 0:
        raise InvalidInputError("virtual source must lie strictly below the plane (V3 < 0)")

    def ev(x):
        x = np.asarray(x, dtype=float)
        rel = np.empty(x.shape[:-1] + (3,))
        rel[..., 0] = x[..., 0] - V[0]
        rel[..., 1] = x[..., 1] - V[1]
        rel[..., 2] = -V[2]
        return rel / np.sqrt(np.sum(rel * rel, axis=-1))[..., None]

    def jac(x):
        # e'(x) = (x - V')/r with r = |(x,0) - V|; d e_i/d x_j = delta_ij/r - rel_i rel_j / r^3
        x = np.asarray(x, dtype=float)
        rel = x - V[:2]
        r = np.sqrt(np.sum(rel * rel, axis=-1) + V[2] * V[2])
        out = np.empty(x.shape[:-1] + (2, 2))
        for i in range(2):
            for j in range(2):
                out[..., i, j] = (1.0 if i == j else 0.0) / r - rel[..., i] * rel[..., j] / r**3
        return out

    def pot(x):
        x = np.asarray(x, dtype=float)
        rel = x - V[:2]
        return np.sqrt(np.sum(rel * rel, axis=-1) + V[2] * V[2])

    return IncidentField(
        domain=domain,
        evaluate=ev,
        analytic_jacobian=jac if analytic_jacobian else None,
        analytic_potential=pot if analytic_jacobian else None,
        name="point_source",
    )


def swirl_field(domain: Domain, strength: float = 0.5, analytic_jacobian: bool = True) -> IncidentField:
    """Normalized (-s*x2, s*x1, 1) vortex; its planar part has nonzero curl."""
    s = float(strength)

    def raw(x):
        x = np.asarray(x, dtype=float)
        v = np.empty(x.shape[:-1] + (3,))
        v[..., 0] = -s * x[..., 1]
        v[..., 1] = s * x[..., 0]
        v[..., 2] = 1.0
        return v

    def ev(x):
        v = raw(x)
        return v / np.sqrt(np.sum(v * v, axis=-1))[..., None]

    def jac(x):
        x = np.asarray(x, dtype=float)
        r2 = s * s * (x[..., 0] ** 2 + x[..., 1] ** 2)
        R = np.sqrt(1.0 + r2)
        out = np.empty(x.shape[:-1] + (2, 2))
        # e1 = -s x2 / R, e2 = s x1 / R, dR/dxj = s^2 xj / R
        out[..., 0, 0] = s * x[..., 1] * (s * s * x[..., 0]) / R**3
        out[..., 0, 1] = -s / R + s * x[..., 1] * (s * s * x[..., 1]) / R**3
        out[..., 1, 0] = s / R - s * x[..., 0] * (s * s * x[..., 0]) / R**3
        out[..., 1, 1] = -s * x[..., 0] * (s * s * x[..., 1]) / R**3
        return out

    return IncidentField(
        domain=domain,
        evaluate=ev,
        analytic_jacobian=jac if analytic_jacobian else None,
        name="swirl",
    )


def gradient_field(h_expression: str, domain: Domain) -> IncidentField:
    """Field with planar part grad h for an expression h(x1,x2); needs |grad h| < 1."""
    h = parse_expression(h_expression)
    h1, h2 = h.diff("x1"), h.diff("x2")
    h11, h12 = h1.diff("x1"), h1.diff("x2")
    h21, h22 = h2.diff("x1"), h2.diff("x2")

    def planar(x):
        x = np.asarray(x, dtype=float)
        return np.stack([h1(x[..., 0], x[..., 1]), h2(x[..., 0], x[..., 1])], axis=-1)

    def ev(x):
        p = planar(x)
        sq = np.sum(p * p, axis=-1)
        if np.any(sq >= 1.0):
            raise InvalidInputError("|grad h| must stay below 1 so e3 > 0")
        out = np.empty(p.shape[:-1] + (3,))
        out[..., :2] = p
        out[..., 2] = np.sqrt(1.0 - sq)
        return out

    def jac(x):
        x = np.asarray(x, dtype=float)
        a, b = x[..., 0], x[..., 1]
        out = np.empty(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = h11(a, b)
        out[..., 0, 1] = h12(a, b)
        out[..., 1, 0] = h21(a, b)
        out[..., 1, 1] = h22(a, b)
        return out

    def pot(x):
        x = np.asarray(x, dtype=float)
        return np.asarray(h(x[..., 0], x[..., 1]), dtype=float)

    return IncidentField(domain=domain, evaluate=ev, analytic_jacobian=jac, analytic_potential=pot, name="gradient")


FIELD_BUILDERS = {
    "constant": lambda spec, domain: constant_field(domain, direction=spec.get("direction", (0, 0, 1))),
    "point_source": lambda spec, domain: point_source_field(spec["V"], domain),
    "swirl": lambda spec, domain: swirl_field(domain, strength=spec.get("strength", 0.5)),
    "gradient": lambda spec, domain: gradient_field(spec["h"], domain),
}


def field_from_spec(spec: dict, domain: Domain) -> IncidentField:
    kind = spec.get("kind")
    if kind not in FIELD_BUILDERS:
        raise InvalidInputError(f"unknown field kind {kind!r}; expected one of {sorted(FIELD_BUILDERS)}")
    return FIELD_BUILDERS[kind](spec, domain)
