"""Vector-form Snell refraction, mirror reflection, and graph normals.

All functions broadcast over leading axes: directions are arrays of shape
(..., 3), gradients of shape (..., 2). These three operations are the only
physics the forward ray tracer is allowed to use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, TotalInternalReflectionError

UNIT_TOL = 1e-9  # inputs must be unit vectors within this tolerance


def norm(v):
    return np.sqrt(np.sum(np.asarray(v, dtype=float) ** 2, axis=-1))


def normalize(v):
    v = np.asarray(v, dtype=float)
    return v / norm(v)[..., None]


def dot(a, b):
    return np.sum(np.asarray(a, dtype=float) * np.asarray(b, dtype=float), axis=-1)


def _require_unit(v, name):
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise InvalidInputError(f"{name} has non-finite components")
    err = np.abs(norm(v) - 1.0)
    worst = float(np.max(err)) if err.size else 0.0
    if worst > UNIT_TOL:
        raise InvalidInputError(f"{name} is not a unit vector (|1-|v|| = {worst:.3e})", worst=worst)
    return v


@dataclass(frozen=True)
class MediumPair:
    """Refractive indices on the incident (in) and transmitted (out) side."""

    n_in: float
    n_out: float

    def __post_init__(self):
        if self.n_in <= 0 or self.n_out <= 0:
            raise InvalidInputError("refractive indices must be positive")

    @property
    def kappa(self) -> float:
        return self.n_out / self.n_in


@dataclass(frozen=True)
class Media:
    """Index triple (below entry face, inside, above exit face) of a lens."""

    n1: float
    n2: float
    n3: float

    def __post_init__(self):
        if min(self.n1, self.n2, self.n3) <= 0:
            raise InvalidInputError("refractive indices must be positive")

    @property
    def kappa1(self) -> float:
        return self.n2 / self.n1

    @property
    def kappa2(self) -> float:
        return self.n3 / self.n2

    def require_lens(self):
        if not (self.n2 > self.n1 and self.n2 > self.n3):
            raise InvalidInputError(
                f"lens requires n2 > max(n1, n3), got ({self.n1}, {self.n2}, {self.n3})"
            )
        return self


@dataclass(frozen=True)
class RefractionResult:
    """Refracted unit direction m and the multiplier lam in x - kappa*m = lam*nu."""

    m: np.ndarray
    lam: np.ndarray


def refract(x, nu, kappa: float) -> RefractionResult:
    """Refract unit direction(s) x at normal(s) nu for index ratio kappa = n_out/n_in.

    Solves x - kappa*m = lam*nu with lam = x.nu - kappa*sqrt(1 - (1 - (x.nu)^2)/kappa^2).
    Requires x.nu >= 0 (normal points into the transmitted medium). For
    kappa < 1 refraction only occurs when x.nu >= sqrt(1 - kappa^2); below
    that total internal reflection is raised. The grazing equality case is
    accepted and yields a tangential m.
    """
    x = _require_unit(x, "incident direction")
    nu = _require_unit(nu, "surface normal")
    if kappa <= 0:
        raise InvalidInputError("kappa must be positive")
    c = dot(x, nu)
    if np.any(c < -UNIT_TOL):
        worst = int(np.argmin(np.atleast_1d(c)))
        raise InvalidInputError(
            "x.nu must be nonnegative", index=worst, value=float(np.min(c))
        )
    c = np.clip(c, 0.0, 1.0)
    if kappa < 1.0:
        critical = np.sqrt(1.0 - kappa * kappa)
        bad = c < critical - 1e-15
        if np.any(bad):
            idx = int(np.argmax(np.atleast_1d(bad)))
            raise TotalInternalReflectionError(
                f"x.nu = {float(np.atleast_1d(c)[idx]):.6f} below critical {critical:.6f}",
                index=idx,
                critical=float(critical),
            )
    radicand = np.maximum(1.0 - (1.0 - c * c) / (kappa * kappa), 0.0)
    lam = c - kappa * np.sqrt(radicand)
    m = normalize((x - lam[..., None] * np.asarray(nu, dtype=float)) / kappa)
    return RefractionResult(m=m, lam=lam)


def reflect(x, nu):
    """Mirror reflection m = x - 2(x.nu)nu of unit direction(s) x."""
    x = _require_unit(x, "incident direction")
    nu = _require_unit(nu, "surface normal")
    m = x - 2.0 * dot(x, nu)[..., None] * np.asarray(nu, dtype=float)
    return normalize(m)


def graph_normal(du):
    """Upward unit normal (-du, 1)/sqrt(1+|du|^2) of a height-function graph."""
    du = np.asarray(du, dtype=float)
    if not np.all(np.isfinite(du)):
        raise InvalidInputError("gradient has non-finite components")
    denom = np.sqrt(1.0 + np.sum(du * du, axis=-1))
    out = np.empty(du.shape[:-1] + (3,), dtype=float)
    out[..., 0] = -du[..., 0] / denom
    out[..., 1] = -du[..., 1] / denom
    out[..., 2] = 1.0 / denom
    return out
