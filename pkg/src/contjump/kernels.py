"""Jump-rate kernels for simultaneous pair moves.

Two concrete families are provided:

* factorized          q(x, h1, h2) = a(h1) a(h2) (b(x) + b(x + h2 - h1)),
  with the pair of symmetries
      q(-x, h1, h2) = q(x, h2, h1),
      q(x, h1, h2)  = q(x + h2 - h1, -h1, -h2);
* momentum-conserving q(x, h) = a(h) b(x - h), jumps concentrated on
  (h, -h), with
      q(-x, h) = q(x, -h),
      q(x, h)  = q(-x + 2h, h).

Both make the Poisson field with any constant intensity a symmetrizing
measure of the pair-jump dynamics.  A KernelSpec caches the profile
integrals (midpoint tensor grids, >= 2^8 nodes per dimension over the
support) so that derived constants and rate tables are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidParameterError, NotDifferentiableError
from .geometry import TorusGeometry

UNIFORM_BALL = "uniform-ball"
SMOOTH_BUMP = "smooth-bump"

FACTORIZED = "factorized"
MOMENTUM = "momentum"

PROFILE_QUAD_NODES = 256  # per dimension, over the support box
GEN_QUAD_NODES = {1: 64, 2: 24, 3: 10}  # per dimension, for (h1, h2) rate tables


def midpoint_nodes(lo: float, hi: float, n: int):
    """Midpoint-rule nodes and the common weight on [lo, hi]."""
    step = (hi - lo) / n
    return lo + step * (np.arange(n) + 0.5), step


def tensor_grid(lo: float, hi: float, n: int, d: int):
    """Tensor midpoint grid over [lo, hi]^d: nodes (n^d, d) and cell volume."""
    x1, step = midpoint_nodes(lo, hi, n)
    grids = np.meshgrid(*([x1] * d), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    return nodes, step**d


@dataclass(frozen=True)
class RadialProfile:
    """Even, nonnegative, compactly supported radial profile.

    uniform-ball: height on |x| <= radius, zero outside (not differentiable
    at the boundary); smooth-bump: height * exp(1 - 1/(1 - (|x|/radius)^2))
    inside the ball, C^infinity with analytic gradient.
    """

    shape: str
    radius: float
    height: float

    def __post_init__(self):
        if self.shape not in (UNIFORM_BALL, SMOOTH_BUMP):
            raise InvalidParameterError(f"unknown profile shape {self.shape!r}")
        if not (self.radius > 0 and self.height > 0):
            raise InvalidParameterError("profile radius and height must be > 0")

    @property
    def smooth(self) -> bool:
        return self.shape == SMOOTH_BUMP

    @property
    def sup(self) -> float:
        return self.height

    def value_r(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.shape == UNIFORM_BALL:
            return np.where(r <= self.radius, self.height, 0.0)
        u = (r / self.radius) ** 2
        inside = u < 1.0
        safe = np.where(inside, u, 0.5)
        return np.where(inside, self.height * np.exp(1.0 - 1.0 / (1.0 - safe)), 0.0)

    def value_vec(self, dx) -> np.ndarray:
        dx = np.asarray(dx, dtype=float)
        return self.value_r(np.sqrt(np.sum(dx * dx, axis=-1)))

    def gradient_vec(self, dx) -> np.ndarray:
        if self.shape != SMOOTH_BUMP:
            raise NotDifferentiableError("uniform-ball profile has no gradient")
        dx = np.asarray(dx, dtype=float)
        u = np.sum(dx * dx, axis=-1) / self.radius**2
        inside = u < 1.0
        safe = np.where(inside, u, 0.5)
        val = self.height * np.exp(1.0 - 1.0 / (1.0 - safe))
        dval_du = -val / (1.0 - safe) ** 2
        grad = dval_du[..., None] * (2.0 * dx / self.radius**2)
        return np.where(inside[..., None], grad, 0.0)

    def mass(self, d: int, nodes_per_dim: int = PROFILE_QUAD_NODES) -> float:
        pts, vol = tensor_grid(-self.radius, self.radius, nodes_per_dim, d)
        return float(self.value_vec(pts).sum() * vol)

    def second_moment_first_coord(self, d: int, nodes_per_dim: int = PROFILE_QUAD_NODES) -> float:
        """integral of profile(h) * (h^1)^2 dh over R^d."""
        pts, vol = tensor_grid(-self.radius, self.radius, nodes_per_dim, d)
        return float((self.value_vec(pts) * pts[..., 0] ** 2).sum() * vol)

    def sample(self, d: int, rng: np.random.Generator) -> np.ndarray:
        """Draw one point from the normalized density profile/mass
        (rejection against the uniform box bound)."""
        while True:
            x = (rng.random(d) * 2.0 - 1.0) * self.radius
            if rng.random() * self.height <= self.value_vec(x):
                return x


@dataclass(frozen=True)
class KernelConstants:
    mean_a: float
    mean_b: float
    c: float
    sup_b: float

    def __iter__(self):
        return iter((self.mean_a, self.mean_b, self.c, self.sup_b))


class KernelSpec:
    """A jump kernel: variant, profiles a and b, cached derived quantities.

    Two deliberate-breakage hooks exist so the harness can verify that its
    symmetry checks have power; every equilibrium code path refuses a
    biased kernel.

    `odd_b_bias` multiplies the undisplaced b summand by the skew
    1 + bias * clip(x1/r_b, -1, 1).  This violates the pointwise symmetry
    identities (the constructed counterexample for the identity checker),
    but note that a generator summing over unordered pairs silently
    symmetrizes the pair labels, which evenizes every b slot: no odd
    perturbation of b alone can change the unordered-pair dynamics, so
    this hook cannot unbalance <LF, G> against <F, LG>.

    `odd_drift_bias` multiplies the factorized rate by
    1 + bias * clip((h1^1 + h2^1) / (2 r_a), -1, 1), a label-invariant
    odd perturbation of the jump measure.  It survives the pair-label
    symmetrization, breaks the reflection identity, and detectably breaks
    reversibility: jumps acquire a common drift.
    """

    def __init__(
        self,
        variant: str,
        a: RadialProfile,
        b: RadialProfile,
        d: int,
        odd_b_bias: float = 0.0,
        odd_drift_bias: float = 0.0,
        profile_nodes: int = PROFILE_QUAD_NODES,
        gen_nodes: Optional[int] = None,
    ):
        if variant not in (FACTORIZED, MOMENTUM):
            raise InvalidParameterError(f"unknown kernel variant {variant!r}")
        if int(d) != d or d < 1:
            raise InvalidParameterError(f"dimension must be an integer >= 1, got {d}")
        if profile_nodes < 256:
            raise InvalidParameterError("profile quadrature needs >= 2^8 nodes per dimension")
        if abs(odd_b_bias) >= 1.0 or abs(odd_drift_bias) >= 1.0:
            raise InvalidParameterError("bias hooks must lie in (-1, 1) to keep rates >= 0")
        if odd_drift_bias and variant != FACTORIZED:
            raise InvalidParameterError("the drift bias hook belongs to the factorized family")
        self.variant = variant
        self.a = a
        self.b = b
        self.d = int(d)
        self.odd_b_bias = float(odd_b_bias)
        self.odd_drift_bias = float(odd_drift_bias)
        self._profile_nodes = int(profile_nodes)

        self.r_a = a.radius
        self.r_b = b.radius
        self.mean_a = a.mass(self.d, profile_nodes)
        self.mean_b = b.mass(self.d, profile_nodes)
        self.c = a.second_moment_first_coord(self.d, profile_nodes)
        self.sup_b = b.sup * (1.0 + max(self.odd_b_bias, 0.0))

        # quadrature grid in the unscaled jump variable, shared by all
        # generator evaluations (scaled families reuse it after the change
        # of variables that maps their support back to supp a)
        m = gen_nodes if gen_nodes is not None else GEN_QUAD_NODES.get(self.d, 8)
        self.gen_nodes_per_dim = int(m)
        self.h_nodes, self.h_vol = tensor_grid(-self.r_a, self.r_a, self.gen_nodes_per_dim, self.d)
        self.a_at_nodes = a.value_vec(self.h_nodes)
        # pairwise displacement differences u_l - u_k, used by the factorized family
        self.h_diff = self.h_nodes[None, :, :] - self.h_nodes[:, None, :]
        self.aa_outer = self.a_at_nodes[:, None] * self.a_at_nodes[None, :]

        # 1-dim cache for the factorized total rate: the discrete
        # autocorrelation of a on its own midpoint grid (profiles are only
        # evaluated at grid nodes, which keeps the uniform ball exact; the
        # remaining error is the smooth-b midpoint error)
        self._acorr = None
        if self.variant == FACTORIZED and self.d == 1:
            fine, step = midpoint_nodes(-self.r_a, self.r_a, profile_nodes)
            av = a.value_r(np.abs(fine))
            diffs = step * (np.arange(2 * profile_nodes - 1) - (profile_nodes - 1))
            weights = np.correlate(av, av, mode="full") * step**2
            self._acorr = (diffs, weights)

    # -- profile evaluation ------------------------------------------------

    def b_eval(self, dx) -> np.ndarray:
        """b at a displacement, including the optional odd skew.

        This is the evaluation used for the undisplaced b summand; the
        displaced summand of the factorized kernel always uses the plain
        profile (see the class docstring)."""
        dx = np.asarray(dx, dtype=float)
        val = self.b.value_vec(dx)
        if self.odd_b_bias:
            skew = 1.0 + self.odd_b_bias * np.clip(dx[..., 0] / self.r_b, -1.0, 1.0)
            val = val * skew
        return val

    def require_unbiased(self, what: str) -> None:
        if self.odd_b_bias or self.odd_drift_bias:
            raise InvalidParameterError(f"{what} requires an unbiased kernel")

    def drift_factor(self, h1, h2) -> np.ndarray:
        h1 = np.asarray(h1, dtype=float)
        h2 = np.asarray(h2, dtype=float)
        arg = (h1[..., 0] + h2[..., 0]) / (2.0 * self.r_a)
        return 1.0 + self.odd_drift_bias * np.clip(arg, -1.0, 1.0)

    @property
    def cutoff(self) -> float:
        """Separation beyond which the total pair rate vanishes."""
        return self.r_b + 2.0 * self.r_a

    def constants(self) -> KernelConstants:
        return KernelConstants(self.mean_a, self.mean_b, self.c, self.sup_b)

    @property
    def pair_rate_bound(self) -> float:
        """Uniform bound on the total rate of one pair."""
        if self.variant == FACTORIZED:
            return 2.0 * self.mean_a**2 * self.sup_b
        return self.mean_a * self.sup_b

    # -- kernel evaluation ---------------------------------------------------

    def q_factorized(self, x, h1, h2) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        h1 = np.asarray(h1, dtype=float)
        h2 = np.asarray(h2, dtype=float)
        out = self.a.value_vec(h1) * self.a.value_vec(h2) * (
            self.b_eval(x) + self.b.value_vec(x + h2 - h1)
        )
        if self.odd_drift_bias:
            out = out * self.drift_factor(h1, h2)
        return out

    def q_momentum(self, x, h) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        h = np.asarray(h, dtype=float)
        return self.a.value_vec(h) * self.b_eval(x - h)

    def total_pair_rate(self, x) -> np.ndarray:
        """Total jump rate of a pair at separation x (both variants).

        Factorized: <a>^2 b(x) + (A * b)(x) with A the autocorrelation of a
        (cached 1-dim grid for d = 1, direct double quadrature otherwise);
        momentum: int a(h) b(x - h) dh.  Supported within r_b + 2 r_a.
        """
        if self.odd_drift_bias:
            raise InvalidParameterError("total_pair_rate caches assume no drift bias")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.variant == MOMENTUM:
            if self.d == 1:
                fine, step = midpoint_nodes(-self.r_a, self.r_a, self._profile_nodes)
                vals = self.a.value_r(np.abs(fine))[None, :] * self.b_eval(
                    (x[:, 0:1] - fine[None, :])[..., None]
                )
                out = vals.sum(axis=1) * step
            else:
                vals = self.q_momentum(x[:, None, :], self.h_nodes[None, :, :])
                out = vals.sum(axis=1) * self.h_vol
        elif self._acorr is not None:
            diffs, weights = self._acorr
            shifted = self.b.value_vec((x[:, 0:1] + diffs[None, :])[..., None])
            out = self.mean_a**2 * self.b_eval(x) + (shifted * weights[None, :]).sum(axis=1)
        else:
            shifted = self.b.value_vec(x[:, None, None, :] + self.h_diff[None, :, :, :])
            out = self.mean_a**2 * self.b_eval(x) + (
                (self.aa_outer[None, :, :] * shifted).sum(axis=(1, 2)) * self.h_vol**2
            )
        return out if out.size > 1 else float(out[0])


def eval_q(spec: KernelSpec, x, h1, h2) -> float:
    """Rate density at separation x and jump vector(s) (h1, h2).

    The momentum-conserving family concentrates on h2 = -h1; evaluating it
    off that diagonal is a domain error.
    """
    if spec.variant == MOMENTUM:
        if not np.allclose(np.asarray(h2, dtype=float), -np.asarray(h1, dtype=float)):
            raise InvalidParameterError(
                "momentum-conserving kernel is concentrated on h2 = -h1"
            )
        return float(spec.q_momentum(x, h1))
    return float(spec.q_factorized(x, h1, h2))


def check_symmetry(spec: KernelSpec, n_samples: int, rng: np.random.Generator) -> float:
    """Worst violation of the defining symmetry identities on random tuples."""
    R = spec.cutoff + 1.0
    worst = 0.0
    x = (rng.random((n_samples, spec.d)) * 2.0 - 1.0) * R
    h1 = (rng.random((n_samples, spec.d)) * 2.0 - 1.0) * spec.r_a
    h2 = (rng.random((n_samples, spec.d)) * 2.0 - 1.0) * spec.r_a
    if spec.variant == FACTORIZED:
        v1 = np.abs(spec.q_factorized(-x, h1, h2) - spec.q_factorized(x, h2, h1))
        v2 = np.abs(spec.q_factorized(x, h1, h2) - spec.q_factorized(x + h2 - h1, -h1, -h2))
        worst = float(max(v1.max(), v2.max()))
    else:
        v1 = np.abs(spec.q_momentum(-x, h1) - spec.q_momentum(x, -h1))
        v2 = np.abs(spec.q_momentum(x, h1) - spec.q_momentum(-x + 2.0 * h1, h1))
        worst = float(max(v1.max(), v2.max()))
    return worst


def kernel_constants(spec: KernelSpec) -> KernelConstants:
    """(<a>, <b>, c, sup b) with c = int a(h) (h^1)^2 dh."""
    return spec.constants()


class KernelEvaluator:
    """A kernel family member after a change of variables in the jump size.

    All three families used by the lab reduce to the same shape: in the
    unscaled variable u over supp(a),

        rate * du = prefactor * a(u1) a(u2)
                    * (b(x) + b(x + disp * (u2 - u1))) du      (factorized)
        rate * du = prefactor * a(u) * b(x - disp * u) du       (momentum)

    with the actual particle displacement disp * u.  disp = prefactor = 1
    is the unscaled kernel; the small-jump family has disp = eps,
    prefactor = eps^-2; the spread-jump family has disp = 1/eps,
    prefactor = 1 (its a-mass is preserved by construction).
    """

    def __init__(self, spec: KernelSpec, disp: float = 1.0, prefactor: float = 1.0,
                 eps: float = 1.0, mode: str = "base"):
        self.spec = spec
        self.disp = float(disp)
        self.prefactor = float(prefactor)
        self.eps = float(eps)
        self.mode = mode

    @property
    def variant(self) -> str:
        return self.spec.variant

    @property
    def reach(self) -> float:
        """Largest displacement of a single particle in one jump."""
        return self.disp * self.spec.r_a

    @property
    def cutoff(self) -> float:
        """Separation beyond which a pair has zero rate."""
        if self.spec.variant == FACTORIZED:
            return self.spec.r_b + 2.0 * self.reach
        return self.spec.r_b + self.reach

    def displacements(self) -> np.ndarray:
        """Actual jump displacement vectors on the quadrature nodes."""
        return self.disp * self.spec.h_nodes

    def pair_weight_table(self, geom: TorusGeometry, xbar) -> np.ndarray:
        """Quadrature weights (rate density times cell volume) on the node
        grid, for one pair at minimal-image separation xbar.

        Factorized: (m, m) table over (u1, u2); momentum: (m,) over u.
        Arguments of b are reduced to minimal images, which is where the
        torus wrap of widely spread jumps enters.
        """
        spec = self.spec
        xbar = np.asarray(xbar, dtype=float)
        if spec.variant == FACTORIZED:
            shifted = geom.min_image(xbar[None, None, :] + self.disp * spec.h_diff)
            bsum = spec.b_eval(geom.min_image(xbar)) + spec.b.value_vec(shifted)
            table = self.prefactor * spec.h_vol**2 * spec.aa_outer * bsum
            if spec.odd_drift_bias:
                table = table * spec.drift_factor(
                    spec.h_nodes[:, None, :], spec.h_nodes[None, :, :]
                )
            return table
        shifted = geom.min_image(xbar[None, :] - self.disp * spec.h_nodes)
        return self.prefactor * spec.h_vol * spec.a_at_nodes * spec.b_eval(shifted)


def base_kernel(spec: KernelSpec) -> KernelEvaluator:
    """The unscaled kernel as an evaluator."""
    return KernelEvaluator(spec, disp=1.0, prefactor=1.0, eps=1.0, mode="base")


def scaled_kernel_diffusive(spec: KernelSpec, eps: float) -> KernelEvaluator:
    """Small-jump scaling: jump support shrunk to eps * r_a, rate up by eps^-2.

    eps = 1 reproduces the unscaled kernel exactly.
    """
    if not eps > 0:
        raise InvalidParameterError("eps must be > 0")
    return KernelEvaluator(spec, disp=eps, prefactor=eps**-2, eps=eps, mode="diffusive")


def scaled_kernel_bd(spec: KernelSpec, eps: float) -> KernelEvaluator:
    """Spread-jump scaling: jump support blown up to r_a / eps, a-mass preserved.

    eps = 1 reproduces the unscaled kernel exactly.
    """
    if not eps > 0:
        raise InvalidParameterError("eps must be > 0")
    return KernelEvaluator(spec, disp=1.0 / eps, prefactor=1.0, eps=eps, mode="bd")
