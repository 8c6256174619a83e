"""Independent forward ray tracer.

The tracer verifies designs using only exact Snell refraction/reflection
and geometric intersection with the element surfaces. It never reads the
designer's internal quantities (thickness, internal directions, multipliers).

Graph surfaces are intersected with a safeguarded bisection/Newton root
finder on the exact height function; parametric sheets and smooth
parametric surfaces with a batched 2D Newton seeded from a KD-tree over
the sampled footprint.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidInputError
from .geometry import MediumPair, dot, graph_normal, normalize, reflect, refract
from .surfaces import GraphSurface, ParametricSheet, ParametricSurface

STATUS_OK = 0
STATUS_MISS = 1
STATUS_TIR = 2
STATUS_NO_PLANE = 3


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=float)
        d = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            d = d / np.linalg.norm(d)
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class OpticalElement:
    """One optically active surface of a lens or mirror train.

    ``interaction`` is "refract" (requires ``media``) or "reflect". The
    surface normal is oriented toward the exit medium, i.e. along the
    propagating ray.
    """

    geometry: GraphSurface | ParametricSheet | ParametricSurface
    interaction: str
    media: MediumPair | None = None
    search_extent: float | None = None  # cap on the ray parameter when intersecting

    def __post_init__(self):
        if self.interaction not in ("refract", "reflect"):
            raise InvalidInputError(f"unknown interaction {self.interaction!r}")
        if self.interaction == "refract" and self.media is None:
            raise InvalidInputError("refracting element needs a MediumPair")


@dataclass
class TraceReport:
    """Per-ray exit states plus aggregate error statistics."""

    origins: np.ndarray
    exit_points: np.ndarray          # point on the exit surface
    exit_directions: np.ndarray
    status: np.ndarray               # per-ray status code
    edge_flags: np.ndarray           # hit landed within one cell of a sheet edge
    plane_points: np.ndarray | None = None   # intersection with z = plane_height
    plane_extrapolated: np.ndarray | None = None
    plane_height: float | None = None
    direction_errors: np.ndarray | None = None
    position_errors: np.ndarray | None = None
    target_directions: np.ndarray | None = None
    target_points: np.ndarray | None = None

    @property
    def n_rays(self) -> int:
        return len(self.status)

    @property
    def failures(self) -> int:
        return int(np.sum(self.status != STATUS_OK))

    @property
    def ok(self) -> np.ndarray:
        return self.status == STATUS_OK

    def _agg(self, arr):
        if arr is None or not np.any(self.ok):
            return None
        vals = arr[self.ok]
        return {"max": float(np.max(vals)), "mean": float(np.mean(vals))}

    def summary(self) -> dict:
        return {
            "rays": int(self.n_rays),
            "failures": int(self.failures),
            "edge_hits": int(np.sum(self.edge_flags)),
            "direction_error": self._agg(self.direction_errors),
            "position_error": self._agg(self.position_errors),
        }


# ---------------------------------------------------------------------------
# Graph-surface intersection: exact root finding on the height function
# ---------------------------------------------------------------------------

def intersect_graph(origins, directions, surface: GraphSurface, t_max: float,
                    t_min: float = 0.0, scan: int = 64, residual_tol: float = 1e-12):
    """First crossing of rays with the graph z = u(x1,x2).

    Solves psi(t) = o3 + t*d3 - u(o' + t*d') = 0 for the smallest root in
    (t_min, t_max] by coarse scan + bisection, polished with Newton. Rays
    whose transverse direction vanishes are solved directly. Returns
    (t, hit_mask, grazing_mask).
    """
    o = np.asarray(origins, dtype=float)
    d = np.asarray(directions, dtype=float)
    n = o.shape[0]
    t = np.full(n, np.nan)
    hit = np.zeros(n, dtype=bool)

    def psi(tv, sel):
        pts = o[sel, :2] + tv[:, None] * d[sel, :2]
        return o[sel, 2] + tv * d[sel, 2] - surface.u(pts)

    vertical = np.linalg.norm(d[:, :2], axis=1) < 1e-14
    if np.any(vertical):
        sel = np.where(vertical)[0]
        u_here = surface.u(o[sel, :2])
        tv = (u_here - o[sel, 2]) / d[sel, 2]
        good = (tv > t_min) & (tv <= t_max) & np.isfinite(tv)
        t[sel[good]] = tv[good]
        hit[sel[good]] = True

    gen = np.where(~vertical)[0]
    if gen.size:
        ts = np.linspace(t_min, t_max, scan + 1)
        lo = np.full(gen.size, np.nan)
        hi = np.full(gen.size, np.nan)
        prev = psi(np.full(gen.size, ts[0] + 1e-14), gen)
        found = np.zeros(gen.size, dtype=bool)
        for k in range(1, len(ts)):
            cur = psi(np.full(gen.size, ts[k]), gen)
            crossing = (~found) & (np.sign(prev) != np.sign(cur))
            lo[crossing] = ts[k - 1]
            hi[crossing] = ts[k]
            found |= crossing
            prev = cur
        act = np.where(found)[0]
        if act.size:
            a = lo[act].copy()
            b = hi[act].copy()
            fa = psi(a, gen[act])
            for _ in range(24):
                mid = 0.5 * (a + b)
                fm = psi(mid, gen[act])
                left = np.sign(fm) == np.sign(fa)
                a = np.where(left, mid, a)
                fa = np.where(left, fm, fa)
                b = np.where(left, b, mid)
            tv = 0.5 * (a + b)
            for _ in range(8):  # safeguarded Newton polish within the bracket
                pts = o[gen[act], :2] + tv[:, None] * d[gen[act], :2]
                du = surface.grad(pts)
                deriv = d[gen[act], 2] - np.sum(du * d[gen[act], :2], axis=-1)
                f = psi(tv, gen[act])
                if float(np.max(np.abs(f))) < 1e-14:
                    break
                step = np.where(np.abs(deriv) > 1e-14, f / np.where(deriv == 0, 1.0, deriv), 0.0)
                tv = np.clip(tv - step, a, b)
            t[gen[act]] = tv
            hit[gen[act]] = True

    grazing = np.zeros(n, dtype=bool)
    sel = np.where(hit)[0]
    if sel.size:
        pts = o[sel, :2] + t[sel, None] * d[sel, :2]
        du = surface.grad(pts)
        deriv = d[sel, 2] - np.sum(du * d[sel, :2], axis=-1)
        grazing[sel] = np.abs(deriv) < 1e-10
        resid = np.abs(o[sel, 2] + t[sel] * d[sel, 2] - surface.u(pts))
        bad = resid > max(residual_tol, 1e-9)
        if np.any(bad):  # reject non-converged roots as misses
            hit[sel[bad]] = False
    return t, hit, grazing


# ---------------------------------------------------------------------------
# Parametric intersection: batched 2D Newton with KD-tree seeding
# ---------------------------------------------------------------------------

def _seed_tree(surface):
    if isinstance(surface, ParametricSheet):
        s, t, pts = surface.s, surface.t, surface.points
    else:
        n = 33
        s = np.linspace(*surface.s_range, n)
        t = np.linspace(*surface.t_range, n)
        ss, tt = np.meshgrid(s, t, indexing="ij")
        pts = surface.evaluate(ss.ravel(), tt.ravel()).reshape(n, n, 3)
    ss, tt = np.meshgrid(s, t, indexing="ij")
    flat = pts.reshape(-1, 3)
    tree = cKDTree(flat[:, :2])
    return tree, ss.ravel(), tt.ravel(), float(np.median(flat[:, 2])), (s, t)


_SEED_CACHE: dict[int, tuple] = {}


def intersect_parametric(origins, directions, surface, newton_tol=1e-12, max_iter=60):
    """Ray/parametric-surface intersection via 2D Newton in parameter space.

    Eliminates the ray parameter by projecting onto two directions
    orthogonal to the ray. Seeds come from the nearest sampled node to the
    ray's crossing of the surface's median height plane. The Jacobian is
    a chord: refreshed only when the residual stalls, so smooth surfaces
    cost about one evaluation per iteration. Returns
    (params (N,2), t (N,), hit_mask, edge_mask).
    """
    o = np.asarray(origins, dtype=float)
    d = np.asarray(directions, dtype=float)
    n = o.shape[0]

    key = id(surface)
    if key not in _SEED_CACHE:
        # keep the surface alive in the cache so ids are never reused
        _SEED_CACHE[key] = (surface, _seed_tree(surface))
    _, (tree, seeds_s, seeds_t, z_med, (s_ax, t_ax)) = _SEED_CACHE[key]

    # seed: cross the median-height plane, find nearest sampled footprint
    with np.errstate(divide="ignore", invalid="ignore"):
        t_plane = (z_med - o[:, 2]) / d[:, 2]
    t_plane = np.where(np.isfinite(t_plane), t_plane, 0.0)
    probe = o[:, :2] + t_plane[:, None] * d[:, :2]
    _, idx = tree.query(probe)
    ps = seeds_s[idx].copy()
    pt = seeds_t[idx].copy()

    # orthonormal basis of the plane orthogonal to each ray
    ref = np.where(np.abs(d[:, 2:3]) < 0.9, np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))
    a = normalize(np.cross(d, ref))
    b = np.cross(d, a)

    s_lo, s_hi = float(s_ax[0]), float(s_ax[-1])
    t_lo, t_hi = float(t_ax[0]), float(t_ax[-1])
    span_s, span_t = s_hi - s_lo, t_hi - t_lo

    jac = np.full((n, 2, 2), np.nan)
    prev_res = np.full(n, np.inf)
    need_jac = np.ones(n, dtype=bool)
    active = np.ones(n, dtype=bool)
    for _ in range(max_iter):
        if not np.any(active):
            break
        sel = np.where(active)[0]
        g = surface.evaluate(ps[sel], pt[sel])
        rel = g - o[sel]
        r1 = np.sum(a[sel] * rel, axis=-1)
        r2 = np.sum(b[sel] * rel, axis=-1)
        res = np.hypot(r1, r2)
        scale = 1.0 + np.abs(g).max(axis=-1)
        done = res < newton_tol * scale
        active[sel[done]] = False
        # refresh the chord Jacobian where missing or not contracting fast
        need_jac[sel] |= res > 0.25 * prev_res[sel]
        prev_res[sel] = res
        upd = sel[need_jac[sel] & ~done]
        if upd.size:
            gs, gt = surface.tangents(ps[upd], pt[upd])
            jac[upd, 0, 0] = np.sum(a[upd] * gs, axis=-1)
            jac[upd, 0, 1] = np.sum(a[upd] * gt, axis=-1)
            jac[upd, 1, 0] = np.sum(b[upd] * gs, axis=-1)
            jac[upd, 1, 1] = np.sum(b[upd] * gt, axis=-1)
            need_jac[upd] = False
        live = sel[~done]
        if live.size == 0:
            continue
        j11, j12 = jac[live, 0, 0], jac[live, 0, 1]
        j21, j22 = jac[live, 1, 0], jac[live, 1, 1]
        r1l = r1[~done]
        r2l = r2[~done]
        det = j11 * j22 - j12 * j21
        det = np.where(np.abs(det) < 1e-300, np.nan, det)
        dps = (j22 * r1l - j12 * r2l) / det
        dpt = (-j21 * r1l + j11 * r2l) / det
        bad = ~(np.isfinite(dps) & np.isfinite(dpt))
        dps = np.where(bad, 0.0, dps)
        dpt = np.where(bad, 0.0, dpt)
        need_jac[live[bad]] = True
        dps = np.clip(dps, -0.25 * span_s, 0.25 * span_s)
        dpt = np.clip(dpt, -0.25 * span_t, 0.25 * span_t)
        ps[live] = np.clip(ps[live] - dps, s_lo, s_hi)
        pt[live] = np.clip(pt[live] - dpt, t_lo, t_hi)

    g = surface.evaluate(ps, pt)
    rel = g - o
    r1 = np.sum(a * rel, axis=-1)
    r2 = np.sum(b * rel, axis=-1)
    res = np.hypot(r1, r2)
    t_hit = np.sum(rel * d, axis=-1)
    scale = 1.0 + np.abs(g).max(axis=-1)
    hit = (res < 1e-9 * scale) & (t_hit > 1e-12)
    edge = surface.near_edge(ps, pt)
    return np.stack([ps, pt], axis=-1), t_hit, hit, edge


# ---------------------------------------------------------------------------
# Sequential trace
# ---------------------------------------------------------------------------

def _element_hit(element: OpticalElement, origins, directions, t_max):
    geom = element.geometry
    if element.search_extent is not None:
        t_max = min(t_max, element.search_extent)
    n = origins.shape[0]
    if isinstance(geom, GraphSurface):
        t, hit, _ = intersect_graph(origins, directions, geom, t_max=t_max)
        pts2 = origins[:, :2] + t[:, None] * directions[:, :2]
        points = np.column_stack([pts2, origins[:, 2] + t * directions[:, 2]])
        normals = np.full((n, 3), np.nan)
        if np.any(hit):
            normals[hit] = graph_normal(geom.grad(pts2[hit]))
        edge = np.zeros(n, dtype=bool)
        return points, normals, hit, edge
    params, t, hit, edge = intersect_parametric(origins, directions, geom)
    points = geom.evaluate(params[:, 0], params[:, 1])
    normals = np.full((n, 3), np.nan)
    if np.any(hit):
        normals[hit] = geom.normal(params[hit, 0], params[hit, 1])
    return points, normals, hit, edge


def trace_bundle(origins, directions, elements: Sequence[OpticalElement],
                 plane_height: float | None = None,
                 target_directions=None, target_points=None,
                 t_max: float = 1e3) -> TraceReport:
    """Trace rays through ordered elements; record exit states and errors."""
    o = np.atleast_2d(np.asarray(origins, dtype=float)).copy()
    d = normalize(np.atleast_2d(np.asarray(directions, dtype=float)))
    if d.shape[0] == 1 and o.shape[0] > 1:
        d = np.broadcast_to(d, o.shape).copy()
    n = o.shape[0]
    launch_points = o.copy()
    status = np.zeros(n, dtype=int)
    edge_any = np.zeros(n, dtype=bool)

    for element in elements:
        alive = status == STATUS_OK
        if not np.any(alive):
            break
        idx = np.where(alive)[0]
        pts, normals, hit, edge = _element_hit(element, o[alive], d[alive], t_max)
        status[idx[~hit]] = STATUS_MISS
        if not np.any(hit):
            continue
        glob = idx[hit]             # global ray indices that hit
        hit_pts = pts[hit]
        nu = normals[hit]
        dirs = d[glob]
        edge_any[glob] |= edge[hit]
        # orient the normal toward the exit medium (along propagation)
        sign = np.where(np.sum(nu * dirs, axis=-1) >= 0.0, 1.0, -1.0)
        nu = nu * sign[:, None]
        keep = np.ones(glob.size, dtype=bool)
        if element.interaction == "reflect":
            new_d = reflect(dirs, nu)
        else:
            kappa = element.media.kappa
            if kappa < 1.0:
                cos_i = np.sum(dirs * nu, axis=-1)
                keep = cos_i >= np.sqrt(1.0 - kappa * kappa) - 1e-15
                status[glob[~keep]] = STATUS_TIR
                if not np.any(keep):
                    continue
            new_d = refract(dirs[keep], nu[keep], kappa).m
        if element.interaction == "reflect":
            d[glob] = new_d
            o[glob] = hit_pts
        else:
            d[glob[keep]] = new_d
            o[glob[keep]] = hit_pts[keep]

    plane_points = None
    extrapolated = None
    if plane_height is not None:
        plane_points = np.full((n, 3), np.nan)
        extrapolated = np.zeros(n, dtype=bool)
        ok = status == STATUS_OK
        with np.errstate(divide="ignore", invalid="ignore"):
            t_pl = (plane_height - o[:, 2]) / d[:, 2]
        horizontal = np.abs(d[:, 2]) < 1e-14
        status[ok & horizontal] = STATUS_NO_PLANE
        ok = status == STATUS_OK
        plane_points[ok] = o[ok] + t_pl[ok, None] * d[ok]
        extrapolated[ok] = t_pl[ok] < 0.0

    dir_err = None
    if target_directions is not None:
        tgt = np.atleast_2d(np.asarray(target_directions, dtype=float))
        if tgt.shape[0] == 1:
            tgt = np.broadcast_to(tgt, (n, 3))
        dir_err = np.linalg.norm(d - tgt, axis=-1)
    pos_err = None
    if target_points is not None and plane_points is not None:
        tp = np.atleast_2d(np.asarray(target_points, dtype=float))
        pos_err = np.linalg.norm(plane_points[:, :2] - tp, axis=-1)

    return TraceReport(
        origins=launch_points,
        exit_points=o.copy(),
        exit_directions=d,
        status=status,
        edge_flags=edge_any,
        plane_points=plane_points,
        plane_extrapolated=extrapolated,
        plane_height=plane_height,
        direction_errors=dir_err,
        position_errors=pos_err,
        target_directions=target_directions if target_directions is None else np.asarray(target_directions, float),
        target_points=target_points if target_points is None else np.asarray(target_points, float),
    )


def trace(ray: Ray, elements: Sequence[OpticalElement], plane_height: float | None = None,
          target_direction=None, target_point=None, t_max: float = 1e3) -> TraceReport:
    """Trace a single ray; see trace_bundle."""
    return trace_bundle(
        ray.origin[None, :], ray.direction[None, :], elements,
        plane_height=plane_height,
        target_directions=None if target_direction is None else np.asarray(target_direction, float)[None, :],
        target_points=None if target_point is None else np.asarray(target_point, float)[None, :],
        t_max=t_max,
    )
