"""Surface representations shared by the designers and the ray tracer.

GraphSurface        height function u over the plane, exact gradient access.
ParametricSheet     sampled vector map on a structured parameter grid with
                    bilinear interpolation; node normals come from central
                    differences so interpolated normals are second order.
ParametricSurface   smooth callable parameter -> point, differentiated by
                    small central differences; exact up to solver tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .domain import Domain, Grid, make_grid
from .errors import InvalidInputError
from .expressions import parse_expression
from .geometry import graph_normal, normalize


@dataclass(frozen=True)
class GraphSurface:
    """Scalar height u(x) over the plane with gradient (analytic or FD)."""

    height: Callable[[np.ndarray], np.ndarray]  # (...,2) -> (...)
    gradient: Callable[[np.ndarray], np.ndarray] | None = None
    hessian: Callable[[np.ndarray], np.ndarray] | None = None
    domain: Domain | None = None
    fd_step: float = 1e-6

    def u(self, x):
        return self.height(np.asarray(x, dtype=float))

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        if self.gradient is not None:
            return self.gradient(x)
        h = self.fd_step
        out = np.empty(x.shape[:-1] + (2,))
        for j in range(2):
            step = np.zeros(2)
            step[j] = h
            out[..., j] = (self.height(x + step) - self.height(x - step)) / (2.0 * h)
        return out

    def normal(self, x):
        return graph_normal(self.grad(x))

    @staticmethod
    def flat(height_value: float, domain: Domain | None = None) -> "GraphSurface":
        c = float(height_value)
        return GraphSurface(
            height=lambda x: np.full(np.asarray(x).shape[:-1], c),
            gradient=lambda x: np.zeros(np.asarray(x).shape[:-1] + (2,)),
            hessian=lambda x: np.zeros(np.asarray(x).shape[:-1] + (2, 2)),
            domain=domain,
        )

    @staticmethod
    def paraboloid(base: float, coeff: float, center=(0.0, 0.0), domain: Domain | None = None) -> "GraphSurface":
        c0 = np.asarray(center, dtype=float)

        def h(x):
            x = np.asarray(x, dtype=float)
            r2 = np.sum((x - c0) ** 2, axis=-1)
            return base + coeff * r2

        def g(x):
            x = np.asarray(x, dtype=float)
            return 2.0 * coeff * (x - c0)

        def hess(x):
            x = np.asarray(x, dtype=float)
            out = np.zeros(x.shape[:-1] + (2, 2))
            out[..., 0, 0] = 2.0 * coeff
            out[..., 1, 1] = 2.0 * coeff
            return out

        return GraphSurface(height=h, gradient=g, hessian=hess, domain=domain)

    @staticmethod
    def from_expression(u_expression: str, domain: Domain | None = None) -> "GraphSurface":
        u = parse_expression(u_expression)
        u1, u2 = u.diff("x1"), u.diff("x2")

        def h(x):
            x = np.asarray(x, dtype=float)
            return np.asarray(u(x[..., 0], x[..., 1]), dtype=float)

        def g(x):
            x = np.asarray(x, dtype=float)
            return np.stack(
                [np.asarray(u1(x[..., 0], x[..., 1]), dtype=float),
                 np.asarray(u2(x[..., 0], x[..., 1]), dtype=float)],
                axis=-1,
            )

        return GraphSurface(height=h, gradient=g, domain=domain)


SURFACE_BUILDERS = {
    "flat": lambda spec, domain: GraphSurface.flat(spec.get("height", 1.0), domain),
    "paraboloid": lambda spec, domain: GraphSurface.paraboloid(
        spec.get("base", 1.0), spec.get("coeff", 0.1), spec.get("center", (0.0, 0.0)), domain
    ),
    "expression": lambda spec, domain: GraphSurface.from_expression(spec["u"], domain),
}


def surface_from_spec(spec: dict, domain: Domain | None = None) -> GraphSurface:
    kind = spec.get("kind")
    if kind not in SURFACE_BUILDERS:
        raise InvalidInputError(f"unknown surface kind {kind!r}; expected one of {sorted(SURFACE_BUILDERS)}")
    return SURFACE_BUILDERS[kind](spec, domain)


@dataclass(frozen=True)
class ParametricSheet:
    """Structured sample of a vector map f on an (s,t) parameter grid.

    ``points`` has shape (n_s, n_t, 3). Within cells, positions use
    bilinear interpolation of node positions and normals use bilinear
    interpolation of node normals (central differences at nodes), which
    keeps both second-order accurate for smooth sheets.
    """

    s: np.ndarray
    t: np.ndarray
    points: np.ndarray
    node_normals: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "node_normals", self._compute_node_normals())

    def _compute_node_normals(self):
        p = self.points
        ds = np.gradient(p, self.s, axis=0, edge_order=2)
        dt = np.gradient(p, self.t, axis=1, edge_order=2)
        n = np.cross(ds, dt)
        return normalize(n)

    @property
    def shape(self):
        return self.points.shape[:2]

    def _locate(self, ps, pt):
        i = np.clip(np.searchsorted(self.s, ps) - 1, 0, len(self.s) - 2)
        j = np.clip(np.searchsorted(self.t, pt) - 1, 0, len(self.t) - 2)
        fs = (ps - self.s[i]) / (self.s[i + 1] - self.s[i])
        ft = (pt - self.t[j]) / (self.t[j + 1] - self.t[j])
        return i, j, fs, ft

    def _bilinear(self, values, ps, pt):
        i, j, fs, ft = self._locate(ps, pt)
        v00 = values[i, j]
        v10 = values[i + 1, j]
        v01 = values[i, j + 1]
        v11 = values[i + 1, j + 1]
        fs = fs[..., None]
        ft = ft[..., None]
        return (
            v00 * (1 - fs) * (1 - ft)
            + v10 * fs * (1 - ft)
            + v01 * (1 - fs) * ft
            + v11 * fs * ft
        )

    def evaluate(self, ps, pt):
        return self._bilinear(self.points, np.asarray(ps, float), np.asarray(pt, float))

    def tangents(self, ps, pt):
        ps = np.asarray(ps, float)
        pt = np.asarray(pt, float)
        i, j, fs, ft = self._locate(ps, pt)
        p = self.points
        hs = (self.s[i + 1] - self.s[i])[..., None]
        ht = (self.t[j + 1] - self.t[j])[..., None]
        ft_ = ft[..., None]
        fs_ = fs[..., None]
        dps = ((p[i + 1, j] - p[i, j]) * (1 - ft_) + (p[i + 1, j + 1] - p[i, j + 1]) * ft_) / hs
        dpt = ((p[i, j + 1] - p[i, j]) * (1 - fs_) + (p[i + 1, j + 1] - p[i + 1, j]) * fs_) / ht
        return dps, dpt

    def normal(self, ps, pt):
        return normalize(self._bilinear(self.node_normals, np.asarray(ps, float), np.asarray(pt, float)))

    def near_edge(self, ps, pt):
        """True for parameters within one cell of the sheet boundary."""
        i, j, _, _ = self._locate(np.asarray(ps, float), np.asarray(pt, float))
        return (i <= 0) | (i >= len(self.s) - 2) | (j <= 0) | (j >= len(self.t) - 2)


@dataclass(frozen=True)
class ParametricSurface:
    """Smooth parametric surface given by a callable (N,2) params -> (N,3)."""

    fn: Callable[[np.ndarray], np.ndarray]
    s_range: tuple[float, float]
    t_range: tuple[float, float]
    fd_step: float = 1e-6

    def evaluate(self, ps, pt):
        params = np.stack([np.asarray(ps, float), np.asarray(pt, float)], axis=-1)
        return self.fn(params)

    def tangents(self, ps, pt):
        params = np.stack([np.asarray(ps, float), np.asarray(pt, float)], axis=-1)
        h = self.fd_step
        es = np.array([h, 0.0])
        et = np.array([0.0, h])
        dps = (self.fn(params + es) - self.fn(params - es)) / (2 * h)
        dpt = (self.fn(params + et) - self.fn(params - et)) / (2 * h)
        return dps, dpt

    def normal(self, ps, pt):
        dps, dpt = self.tangents(ps, pt)
        return normalize(np.cross(dps, dpt))

    def near_edge(self, ps, pt):
        ps = np.asarray(ps, float)
        pt = np.asarray(pt, float)
        ds = 1e-3 * (self.s_range[1] - self.s_range[0])
        dt = 1e-3 * (self.t_range[1] - self.t_range[0])
        return (
            (ps < self.s_range[0] + ds)
            | (ps > self.s_range[1] - ds)
            | (pt < self.t_range[0] + dt)
            | (pt > self.t_range[1] - dt)
        )

    def sample(self, n: int) -> ParametricSheet:
        s = np.linspace(*self.s_range, n)
        t = np.linspace(*self.t_range, n)
        ss, tt = np.meshgrid(s, t, indexing="ij")
        pts = self.fn(np.stack([ss, tt], axis=-1).reshape(-1, 2)).reshape(n, n, 3)
        return ParametricSheet(s=s, t=t, points=pts)


def sheet_from_design_fn(f_at, domain: Domain, n: int, pad: float = 0.0) -> ParametricSheet:
    """Sample a design map x -> f(x) on the domain's structured grid."""
    grid = make_grid(domain, n=n, pad=pad)
    pts = f_at(grid.flat_points).reshape(n, n, 3)
    return ParametricSheet(s=grid.s, t=grid.t, points=pts)


def design_surface(f_at, domain: Domain, pad: float = 0.0, fd_step: float = 1e-6) -> ParametricSurface:
    """Wrap a design map x -> f(x) as a smooth parametric surface.

    Parameters are the grid coordinates in [-1,1]^2; the domain's sample
    map converts them to source-plane points before calling ``f_at``.
    """

    def fn(params):
        params = np.asarray(params, dtype=float)
        x1, x2 = domain.sample_map(params[..., 0], params[..., 1], pad=pad)
        return f_at(np.stack([x1, x2], axis=-1))

    return ParametricSurface(fn=fn, s_range=(-1.0, 1.0), t_range=(-1.0, 1.0), fd_step=fd_step)
