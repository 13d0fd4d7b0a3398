"""Test observables on configurations and their point-wise derivatives.

Observables come in two families used throughout the lab:

* cylinder functions  F(gamma) = g(<phi_1, gamma>, ..., <phi_N, gamma>)
  built from compactly supported smooth bump profiles phi_j and an outer
  function g with analytic gradient and Hessian;
* exponentials        F(gamma) = exp(<phi, gamma>).

Both expose enough structure (profile sums, analytic profile derivatives)
for generator evaluation to stay vectorized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidParameterError, UnsupportedObservableError
from .geometry import Configuration, TorusGeometry


@dataclass(frozen=True)
class MCEstimate:
    """A Monte Carlo mean with its standard error."""

    mean: float
    stderr: float
    n_samples: int

    def __post_init__(self):
        if self.n_samples <= 0:
            raise InvalidParameterError("n_samples must be positive")
        if self.stderr < 0:
            raise InvalidParameterError("stderr must be nonnegative")

    @classmethod
    def from_samples(cls, values) -> "MCEstimate":
        v = np.asarray(values, dtype=float)
        n = v.size
        mean = float(np.mean(v))
        stderr = float(np.std(v, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(mean, stderr, n)

    def combined_stderr(self, other: "MCEstimate") -> float:
        return math.hypot(self.stderr, other.stderr)

    def agrees_with(self, other: "MCEstimate", k: float = 3.0) -> bool:
        """|difference| <= k combined standard errors."""
        return abs(self.mean - other.mean) <= k * self.combined_stderr(other)

    def agrees_with_value(self, value: float, k: float = 3.0) -> bool:
        return abs(self.mean - value) <= k * self.stderr


# ---------------------------------------------------------------------------
# profiles


@dataclass(frozen=True)
class TestProfile:
    """Smooth compactly supported bump on the torus.

    phi(x) = amplitude * exp(1 - 1/(1 - (rho/radius)^2))   for rho < radius,
    where rho is the torus distance from x to the center; phi vanishes
    outside the ball.  Infinitely differentiable with analytic gradient
    and Laplacian.
    """

    __test__ = False  # not a pytest case despite the name

    center: tuple
    radius: float
    amplitude: float

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidParameterError("profile radius must be > 0")
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))

    def _u(self, geom: TorusGeometry, x):
        """Squared relative radius u = (rho/radius)^2 and the displacement."""
        delta = geom.min_image(np.asarray(x, dtype=float) - np.asarray(self.center))
        u = np.sum(delta * delta, axis=-1) / self.radius**2
        return u, delta

    def values(self, geom: TorusGeometry, x) -> np.ndarray:
        u, _ = self._u(geom, x)
        inside = u < 1.0
        safe = np.where(inside, u, 0.5)
        val = self.amplitude * np.exp(1.0 - 1.0 / (1.0 - safe))
        return np.where(inside, val, 0.0)

    def gradient(self, geom: TorusGeometry, x) -> np.ndarray:
        u, delta = self._u(geom, x)
        inside = u < 1.0
        safe = np.where(inside, u, 0.5)
        val = self.amplitude * np.exp(1.0 - 1.0 / (1.0 - safe))
        dval_du = -val / (1.0 - safe) ** 2
        grad = dval_du[..., None] * (2.0 * delta / self.radius**2)
        return np.where(inside[..., None], grad, 0.0)

    def laplacian(self, geom: TorusGeometry, x) -> np.ndarray:
        u, delta = self._u(geom, x)
        inside = u < 1.0
        safe = np.where(inside, u, 0.5)
        val = self.amplitude * np.exp(1.0 - 1.0 / (1.0 - safe))
        g1 = -val / (1.0 - safe) ** 2
        g2 = val * (2.0 * safe - 1.0) / (1.0 - safe) ** 4
        rho2 = np.sum(delta * delta, axis=-1)
        lap = (4.0 * rho2 / self.radius**4) * g2 + (2.0 * geom.d / self.radius**2) * g1
        return np.where(inside, lap, 0.0)


# ---------------------------------------------------------------------------
# outer functions g: R^N -> R with analytic gradient and Hessian


class PolynomialOuter:
    """Multivariate polynomial sum_alpha c_alpha s^alpha with |alpha| <= 3."""

    def __init__(self, n_args: int, terms: Sequence[tuple]):
        self.n_args = int(n_args)
        self.terms = []
        for coeff, expo in terms:
            expo = tuple(int(e) for e in expo)
            if len(expo) != self.n_args or any(e < 0 for e in expo):
                raise InvalidParameterError(f"bad exponent tuple {expo}")
            if sum(expo) > 3:
                raise InvalidParameterError("polynomial outer limited to total degree 3")
            self.terms.append((float(coeff), expo))

    def value(self, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros(s.shape[:-1])
        for coeff, expo in self.terms:
            term = np.full(s.shape[:-1], coeff)
            for j, e in enumerate(expo):
                if e:
                    term = term * s[..., j] ** e
            out = out + term
        return out

    def gradient(self, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros(s.shape)
        for coeff, expo in self.terms:
            for j, e in enumerate(expo):
                if e == 0:
                    continue
                term = np.full(s.shape[:-1], coeff * e)
                for k, ek in enumerate(expo):
                    p = ek - 1 if k == j else ek
                    if p:
                        term = term * s[..., k] ** p
                out[..., j] += term
        return out

    def hessian(self, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros(s.shape + (self.n_args,))
        for coeff, expo in self.terms:
            for j, ej in enumerate(expo):
                for k, ek in enumerate(expo):
                    factor = ej * (ej - 1) if j == k else ej * ek
                    if factor == 0:
                        continue
                    term = np.full(s.shape[:-1], coeff * factor)
                    for m, em in enumerate(expo):
                        p = em - (2 if (m == j and j == k) else (1 if m in (j, k) else 0))
                        if p:
                            term = term * s[..., m] ** p
                    out[..., j, k] += term
        return out


class TanhProductOuter:
    """g(s) = prod_j tanh(scale_j * s_j + shift_j); bounded with bounded derivatives."""

    def __init__(self, scales, shifts):
        self.scales = np.atleast_1d(np.asarray(scales, dtype=float))
        self.shifts = np.atleast_1d(np.asarray(shifts, dtype=float))
        if self.scales.shape != self.shifts.shape:
            raise InvalidParameterError("scales and shifts must have equal length")
        self.n_args = self.scales.size

    def _factors(self, s):
        t = np.tanh(self.scales * np.asarray(s, dtype=float) + self.shifts)
        dt = self.scales * (1.0 - t * t)
        ddt = -2.0 * self.scales * t * dt
        return t, dt, ddt

    def value(self, s):
        t, _, _ = self._factors(s)
        return np.prod(t, axis=-1)

    def gradient(self, s):
        t, dt, _ = self._factors(s)
        out = np.empty_like(t)
        for j in range(self.n_args):
            others = np.prod(np.delete(t, j, axis=-1), axis=-1)
            out[..., j] = dt[..., j] * others
        return out

    def hessian(self, s):
        t, dt, ddt = self._factors(s)
        n = self.n_args
        out = np.empty(t.shape + (n,))
        for j in range(n):
            for k in range(n):
                if j == k:
                    others = np.prod(np.delete(t, j, axis=-1), axis=-1)
                    out[..., j, k] = ddt[..., j] * others
                else:
                    rest = np.prod(np.delete(t, (min(j, k), max(j, k)), axis=-1), axis=-1)
                    out[..., j, k] = dt[..., j] * dt[..., k] * rest
        return out


class GaussianOuter:
    """g(s) = exp(-sum_j (s_j - mu_j)^2 / (2 sigma_j^2))."""

    def __init__(self, mu, sigma):
        self.mu = np.atleast_1d(np.asarray(mu, dtype=float))
        self.sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        if np.any(self.sigma <= 0):
            raise InvalidParameterError("sigma must be > 0")
        self.n_args = self.mu.size

    def value(self, s):
        w = (np.asarray(s, dtype=float) - self.mu) / self.sigma
        return np.exp(-0.5 * np.sum(w * w, axis=-1))

    def gradient(self, s):
        s = np.asarray(s, dtype=float)
        g = self.value(s)
        return g[..., None] * (-(s - self.mu) / self.sigma**2)

    def hessian(self, s):
        s = np.asarray(s, dtype=float)
        g = self.value(s)
        w = -(s - self.mu) / self.sigma**2
        outer = w[..., :, None] * w[..., None, :]
        diag = np.zeros_like(outer)
        idx = np.arange(self.n_args)
        diag[..., idx, idx] = -1.0 / self.sigma**2
        return g[..., None, None] * (outer + diag)


# ---------------------------------------------------------------------------
# observables


class CylinderFunction:
    """F(gamma) = g(<phi_1, gamma>, ..., <phi_N, gamma>)."""

    def __init__(self, profiles: Sequence[TestProfile], outer):
        self.profiles = tuple(profiles)
        self.outer = outer
        if getattr(outer, "n_args", len(self.profiles)) != len(self.profiles):
            raise InvalidParameterError("outer arity must match the number of profiles")

    def profile_sums(self, config: Configuration) -> np.ndarray:
        """The N smoothed counts s_j = sum_{x in gamma} phi_j(x)."""
        pts = config.points
        if pts.shape[0] == 0:
            return np.zeros(len(self.profiles))
        return np.array([p.values(config.geom, pts).sum() for p in self.profiles])

    def value(self, config: Configuration) -> float:
        return float(self.outer.value(self.profile_sums(config)))

    def support_balls(self):
        return [(np.asarray(p.center), p.radius) for p in self.profiles]


class ExponentialFunction:
    """F(gamma) = exp(<phi, gamma>) > 0."""

    def __init__(self, profile: TestProfile):
        self.profile = profile

    def log_value(self, config: Configuration) -> float:
        pts = config.points
        if pts.shape[0] == 0:
            return 0.0
        return float(self.profile.values(config.geom, pts).sum())

    def value(self, config: Configuration) -> float:
        return math.exp(self.log_value(config))

    def support_balls(self):
        return [(np.asarray(self.profile.center), self.profile.radius)]


def eval_cylinder(F: CylinderFunction, config: Configuration) -> float:
    """g applied to the N profile sums of the configuration."""
    return F.value(config)


# ---------------------------------------------------------------------------
# point-wise gradients and Laplacians

# For F = g(s_1..s_N):  grad_x F = sum_j d_j g * grad phi_j(x)
#   lap_x F = sum_j d_j g * lap phi_j(x) + sum_{j,k} d_j d_k g * <grad phi_j, grad phi_k>(x)
# For F = exp(<phi, .>): grad_x F = F grad phi(x),
#   lap_x F = F (lap phi(x) + |grad phi(x)|^2).


def point_gradients(F, config: Configuration) -> np.ndarray:
    """grad_x F(gamma) for every x in gamma, as an (n, d) array."""
    pts = config.points
    geom = config.geom
    n = pts.shape[0]
    if n == 0:
        return np.zeros((0, geom.d))
    if isinstance(F, CylinderFunction):
        s = F.profile_sums(config)
        g1 = F.outer.gradient(s)
        grads = np.stack([p.gradient(geom, pts) for p in F.profiles])  # (N, n, d)
        return np.einsum("j,jnd->nd", g1, grads)
    if isinstance(F, ExponentialFunction):
        return F.value(config) * F.profile.gradient(geom, pts)
    raise UnsupportedObservableError(f"unsupported observable type {type(F).__name__}")


def point_laplacians(F, config: Configuration) -> np.ndarray:
    """lap_x F(gamma) for every x in gamma, as an (n,) array."""
    pts = config.points
    geom = config.geom
    n = pts.shape[0]
    if n == 0:
        return np.zeros(0)
    if isinstance(F, CylinderFunction):
        s = F.profile_sums(config)
        g1 = F.outer.gradient(s)
        g2 = F.outer.hessian(s)
        grads = np.stack([p.gradient(geom, pts) for p in F.profiles])  # (N, n, d)
        laps = np.stack([p.laplacian(geom, pts) for p in F.profiles])  # (N, n)
        cross = np.einsum("jk,jnd,knd->n", g2, grads, grads)
        return np.einsum("j,jn->n", g1, laps) + cross
    if isinstance(F, ExponentialFunction):
        grad = F.profile.gradient(geom, pts)
        lap = F.profile.laplacian(geom, pts)
        return F.value(config) * (lap + np.sum(grad * grad, axis=-1))
    raise UnsupportedObservableError(f"unsupported observable type {type(F).__name__}")


def point_grad(F, config: Configuration, x) -> np.ndarray:
    """grad_x F(gamma) for a member point x (MembershipError otherwise)."""
    i = config.index_of(x)
    return point_gradients(F, config)[i]


def point_laplacian(F, config: Configuration, x) -> float:
    """lap_x F(gamma) for a member point x (MembershipError otherwise)."""
    i = config.index_of(x)
    return float(point_laplacians(F, config)[i])


def pair_cross_derivative(F, config: Configuration, i: int, j: int) -> float:
    """sum_i d^2 F / dx_1^i dx_2^i for the member points with indices i, j."""
    pts = config.points
    geom = config.geom
    if isinstance(F, CylinderFunction):
        s = F.profile_sums(config)
        g2 = F.outer.hessian(s)
        gi = np.stack([p.gradient(geom, pts[i]) for p in F.profiles])  # (N, d)
        gj = np.stack([p.gradient(geom, pts[j]) for p in F.profiles])
        return float(np.einsum("jk,jd,kd->", g2, gi, gj))
    if isinstance(F, ExponentialFunction):
        gi = F.profile.gradient(geom, pts[i])
        gj = F.profile.gradient(geom, pts[j])
        return float(F.value(config) * np.dot(gi, gj))
    raise UnsupportedObservableError(f"unsupported observable type {type(F).__name__}")
