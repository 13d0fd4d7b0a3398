"""Periodic torus geometry, point configurations, and Poisson sampling.

The torus [0, L)^d is the finite-volume stand-in for the whole space: all
rates stay finite and the equilibrium identities become exact statements
about a compact model.  Displacements are always reduced to the minimal
image, with each coordinate in [-L/2, L/2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, InvalidParameterError


@dataclass(frozen=True)
class TorusGeometry:
    """Periodic box [0, L)^d with the minimal-image metric."""

    d: int
    L: float

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise InvalidParameterError(f"dimension must be an integer >= 1, got {self.d}")
        if not (np.isfinite(self.L) and self.L > 0):
            raise InvalidParameterError(f"side length must be finite and > 0, got {self.L}")

    @property
    def volume(self) -> float:
        return float(self.L) ** self.d

    def wrap(self, x):
        """Map coordinates into [0, L)."""
        return np.mod(x, self.L)

    def min_image(self, dx):
        """Minimal-image representative of a displacement.

        Each coordinate of the result lies in [-L/2, L/2); its Euclidean
        norm is the torus distance.
        """
        return np.mod(np.asarray(dx, dtype=float) + 0.5 * self.L, self.L) - 0.5 * self.L

    def distance(self, x, y):
        delta = self.min_image(np.asarray(y, dtype=float) - np.asarray(x, dtype=float))
        return np.sqrt(np.sum(delta * delta, axis=-1))


def min_image_diff(geom: TorusGeometry, x, y):
    """Minimal-image representative of y - x (antisymmetric in x, y)."""
    return geom.min_image(np.asarray(y, dtype=float) - np.asarray(x, dtype=float))


@dataclass(frozen=True)
class Configuration:
    """A finite point set on the torus, stored as an ordered (n, d) array.

    The stored array is read-only; simulators and generators that modify
    configurations build fresh arrays.  Points are wrapped into [0, L)^d
    at construction.
    """

    geom: TorusGeometry
    points: np.ndarray = field(repr=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, self.geom.d)
        if pts.ndim != 2 or pts.shape[1] != self.geom.d:
            raise InvalidParameterError(
                f"points must have shape (n, {self.geom.d}), got {pts.shape}"
            )
        pts = self.geom.wrap(pts)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def index_of(self, x) -> int:
        """Index of the point equal to x, or MembershipError."""
        from .errors import MembershipError

        x = np.asarray(x, dtype=float)
        if len(self) > 0:
            hits = np.where(np.all(self.points == self.geom.wrap(x), axis=1))[0]
            if hits.size > 0:
                return int(hits[0])
        raise MembershipError(f"point {x} is not a member of the configuration")


def sample_poisson(geom: TorusGeometry, z: float, rng: np.random.Generator) -> Configuration:
    """Draw a Poisson point process of constant intensity z on the torus.

    The point count is Poisson(z * L^d) and, given the count, points are
    i.i.d. uniform.  Distinctness holds almost surely.
    """
    if not (np.isfinite(z) and z > 0):
        raise InvalidParameterError(f"intensity must be finite and > 0, got {z}")
    mean_count = z * geom.volume
    if not np.isfinite(mean_count):
        raise InvalidParameterError(f"z * L^d = {mean_count} is not representable")
    n = int(rng.poisson(mean_count))
    pts = rng.random((n, geom.d)) * geom.L
    return Configuration(geom, pts)


def pairwise_separations(geom: TorusGeometry, points: np.ndarray):
    """Minimal-image displacement matrix delta[i, j] = x_j - x_i and distances."""
    pts = np.asarray(points, dtype=float)
    delta = geom.min_image(pts[None, :, :] - pts[:, None, :])
    dist = np.sqrt(np.sum(delta * delta, axis=-1))
    return delta, dist


def require_interaction_range(geom: TorusGeometry, reach: float) -> None:
    """Enforce L > 2 * reach so minimal-image separations are unambiguous
    over the full interaction range."""
    if not geom.L > 2.0 * reach:
        raise GeometryError(
            f"torus side L={geom.L} must exceed twice the interaction reach "
            f"{reach} for unambiguous minimal images"
        )
