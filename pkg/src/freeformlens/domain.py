"""Planar source domains and structured sample grids.

Both domain kinds are simply connected, which the potential reconstruction
requires. Disks are sampled through the smooth elliptical square-to-disk
map so every structured grid covers the domain with no masked nodes; that
keeps designs, sheets, and exported meshes plain rectangular grids.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


def square_to_disk(s, t):
    """Map [-1,1]^2 onto the closed unit disk, smoothly and bijectively."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    return s * np.sqrt(1.0 - 0.5 * t * t), t * np.sqrt(1.0 - 0.5 * s * s)


@dataclass(frozen=True)
class Rectangle:
    x1_min: float
    x1_max: float
    x2_min: float
    x2_max: float

    @property
    def diameter(self) -> float:
        return float(np.hypot(self.x1_max - self.x1_min, self.x2_max - self.x2_min))

    @property
    def center(self):
        return np.array([0.5 * (self.x1_min + self.x1_max), 0.5 * (self.x2_min + self.x2_max)])

    def contains(self, x, tol=1e-12):
        x = np.asarray(x, dtype=float)
        return (
            (x[..., 0] >= self.x1_min - tol)
            & (x[..., 0] <= self.x1_max + tol)
            & (x[..., 1] >= self.x2_min - tol)
            & (x[..., 1] <= self.x2_max + tol)
        )

    def sample_map(self, s, t, pad=0.0):
        """Map parameters (s,t) in [-1,1]^2 to points, padded outward by ``pad``."""
        cx, cy = self.center
        hx = 0.5 * (self.x1_max - self.x1_min) * (1.0 + pad)
        hy = 0.5 * (self.x2_max - self.x2_min) * (1.0 + pad)
        return cx + hx * np.asarray(s, dtype=float), cy + hy * np.asarray(t, dtype=float)


@dataclass(frozen=True)
class Disk:
    center_point: tuple[float, float]
    radius: float

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    @property
    def center(self):
        return np.asarray(self.center_point, dtype=float)

    def contains(self, x, tol=1e-12):
        x = np.asarray(x, dtype=float)
        d = np.hypot(x[..., 0] - self.center_point[0], x[..., 1] - self.center_point[1])
        return d <= self.radius + tol

    def sample_map(self, s, t, pad=0.0):
        u, v = square_to_disk(s, t)
        r = self.radius * (1.0 + pad)
        return self.center_point[0] + r * u, self.center_point[1] + r * v


Domain = Rectangle | Disk


@dataclass(frozen=True)
class Grid:
    """Structured n1 x n2 sample of a domain.

    ``x1``/``x2`` hold the sampled points, ``s``/``t`` the parameters in
    [-1,1] they came from. ``points`` stacks them with shape (n1, n2, 2).
    """

    domain: Domain
    s: np.ndarray
    t: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    pad: float = 0.0

    @property
    def shape(self):
        return self.x1.shape

    @property
    def points(self):
        return np.stack([self.x1, self.x2], axis=-1)

    @property
    def flat_points(self):
        return self.points.reshape(-1, 2)

    @property
    def spacing(self) -> float:
        # representative physical node spacing, used to size solver steps
        d1 = np.diff(self.x1, axis=0)
        d2 = np.diff(self.x2, axis=1)
        return float(max(np.max(np.abs(d1)), np.max(np.abs(d2))))

    @property
    def center_index(self):
        n1, n2 = self.shape
        return (n1 // 2, n2 // 2)

    def require_inside(self, x):
        inside = self.domain.contains(x, tol=1e-9 * max(self.domain.diameter, 1.0) + self.pad * self.domain.diameter)
        if not np.all(inside):
            bad = np.asarray(x, dtype=float).reshape(-1, 2)[~np.asarray(inside).ravel()][0]
            raise DomainError(f"point {bad.tolist()} outside domain {self.domain}")


def make_grid(domain: Domain, n: int = 129, pad: float = 0.0) -> Grid:
    """Tensor grid of n x n nodes covering ``domain`` (optionally padded)."""
    if n < 2:
        raise DomainError("grid needs at least 2 nodes per axis")
    s = np.linspace(-1.0, 1.0, n)
    t = np.linspace(-1.0, 1.0, n)
    ss, tt = np.meshgrid(s, t, indexing="ij")
    x1, x2 = domain.sample_map(ss, tt, pad=pad)
    return Grid(domain=domain, s=s, t=t, x1=x1, x2=x2, pad=pad)
