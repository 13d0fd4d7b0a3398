"""Generator and quadratic-form evaluation, plus closed Poisson identities.

The pair-jump generator

    (L F)(gamma) = sum_{pairs {x1,x2}} iint rate(x2-x1, h1, h2)
                   * (F(gamma with the pair moved by h1, h2) - F(gamma)) dh

is evaluated with a deterministic midpoint grid for the inner jump
integrals and plain Monte Carlo over Poisson configurations for outer
expectations, so truncation error and statistical error stay separable.
Pairs are pruned by separation cutoff and by whether either endpoint
(before or after the jump) can touch a profile support.
"""

from __future__ import annotations

import math
import numpy as np

from .errors import (
    InvalidParameterError,
    NotDifferentiableError,
    UnsupportedObservableError,
)
from .geometry import (
    Configuration,
    TorusGeometry,
    pairwise_separations,
    require_interaction_range,
    sample_poisson,
)
from .kernels import (
    FACTORIZED,
    MOMENTUM,
    KernelEvaluator,
    KernelSpec,
    base_kernel,
    midpoint_nodes,
    scaled_kernel_bd,
    scaled_kernel_diffusive,
    tensor_grid,
)
from .observables import (
    CylinderFunction,
    ExponentialFunction,
    MCEstimate,
    point_gradients,
    point_laplacians,
    pair_cross_derivative,
)

BIRTH_QUAD_NODES = {1: 512, 2: 48, 3: 12}  # per dimension, torus-wide birth grids


# ---------------------------------------------------------------------------
# pruning

def _touch_mask(geom: TorusGeometry, points: np.ndarray, balls, reach: float) -> np.ndarray:
    """Points that can change the observable before or after a jump of
    length <= reach."""
    mask = np.zeros(points.shape[0], dtype=bool)
    for center, radius in balls:
        delta = geom.min_image(points - np.asarray(center, dtype=float))
        dist = np.sqrt(np.sum(delta * delta, axis=-1))
        mask |= dist <= radius + reach
    return mask


def _candidate_pairs(geom, points, cutoff, touch=None):
    """Unordered index pairs within the separation cutoff.

    Returns (i, j, xbar) arrays with xbar the minimal image of x_j - x_i;
    with a touch mask, keeps only pairs with at least one marked endpoint.
    """
    n = points.shape[0]
    if n < 2:
        return (np.empty(0, dtype=int), np.empty(0, dtype=int),
                np.empty((0, points.shape[1])))
    delta, dist = pairwise_separations(geom, points)
    ii, jj = np.triu_indices(n, k=1)
    keep = dist[ii, jj] <= cutoff
    if touch is not None:
        keep &= touch[ii] | touch[jj]
    ii, jj = ii[keep], jj[keep]
    return ii, jj, delta[ii, jj]


# ---------------------------------------------------------------------------
# observable move tables

def _profile_values_at(F, geom, x):
    """Profile values at positions x, stacked as (N_profiles, ...)."""
    if isinstance(F, CylinderFunction):
        return np.stack([p.values(geom, x) for p in F.profiles])
    return F.profile.values(geom, x)[None, ...]


def pair_move_deltas(F, config: Configuration, i: int, j: int,
                     disp_i: np.ndarray, disp_j: np.ndarray,
                     paired: bool = False) -> np.ndarray:
    """F(gamma with x_i, x_j displaced) - F(gamma) on displacement grids.

    paired=False pairs every disp_i[k] with every disp_j[l] (table of shape
    (len(disp_i), len(disp_j))); paired=True walks both lists in lockstep.
    """
    geom = config.geom
    pts = config.points
    xi, xj = pts[i], pts[j]
    if isinstance(F, CylinderFunction):
        s = F.profile_sums(config)
        base = _profile_values_at(F, geom, np.stack([xi, xj]))  # (N, 2)
        Pi = _profile_values_at(F, geom, xi + disp_i)  # (N, mi)
        Pj = _profile_values_at(F, geom, xj + disp_j)  # (N, mj)
        rest = s - base[:, 0] - base[:, 1]
        f0 = float(F.outer.value(s))
        if paired:
            snew = rest[None, :] + Pi.T + Pj.T
        else:
            snew = rest[None, None, :] + Pi.T[:, None, :] + Pj.T[None, :, :]
        return F.outer.value(snew) - f0
    if isinstance(F, ExponentialFunction):
        phi = F.profile
        f0 = F.value(config)
        dlog_i = phi.values(geom, xi + disp_i) - float(phi.values(geom, xi))
        dlog_j = phi.values(geom, xj + disp_j) - float(phi.values(geom, xj))
        if paired:
            return f0 * np.expm1(dlog_i + dlog_j)
        return f0 * np.expm1(dlog_i[:, None] + dlog_j[None, :])
    raise UnsupportedObservableError(f"unsupported observable type {type(F).__name__}")


def remove_one_deltas(F, config: Configuration) -> np.ndarray:
    """F(gamma minus one point) - F(gamma) for every point, shape (n,)."""
    geom = config.geom
    pts = config.points
    if isinstance(F, CylinderFunction):
        s = F.profile_sums(config)
        vals = _profile_values_at(F, geom, pts)  # (N, n)
        f0 = float(F.outer.value(s))
        return F.outer.value(s[None, :] - vals.T) - f0
    if isinstance(F, ExponentialFunction):
        f0 = F.value(config)
        return f0 * np.expm1(-F.profile.values(geom, pts))
    raise UnsupportedObservableError(f"unsupported observable type {type(F).__name__}")


def remove_pair_deltas(F, config: Configuration, ii, jj) -> np.ndarray:
    """F(gamma minus the pair) - F(gamma) for index pairs, shape (P,)."""
    geom = config.geom
    pts = config.points
    if isinstance(F, CylinderFunction):
        s = F.profile_sums(config)
        vals = _profile_values_at(F, geom, pts)  # (N, n)
        f0 = float(F.outer.value(s))
        return F.outer.value(s[None, :] - vals.T[ii] - vals.T[jj]) - f0
    if isinstance(F, ExponentialFunction):
        f0 = F.value(config)
        phi = F.profile.values(geom, pts)
        return f0 * np.expm1(-phi[ii] - phi[jj])
    raise UnsupportedObservableError(f"unsupported observable type {type(F).__name__}")


def add_points_deltas(F, config: Configuration, xs: np.ndarray) -> np.ndarray:
    """F(gamma plus one point at xs[k]) - F(gamma), shape (m,)."""
    geom = config.geom
    if isinstance(F, CylinderFunction):
        s = F.profile_sums(config)
        vals = _profile_values_at(F, geom, xs)  # (N, m)
        f0 = float(F.outer.value(s))
        return F.outer.value(s[None, :] + vals.T) - f0
    if isinstance(F, ExponentialFunction):
        f0 = F.value(config)
        return f0 * np.expm1(F.profile.values(geom, xs))
    raise UnsupportedObservableError(f"unsupported observable type {type(F).__name__}")


def add_pair_deltas(F, config: Configuration, x1s: np.ndarray, x2s: np.ndarray) -> np.ndarray:
    """F(gamma plus two points x1s[k], x2s[k]) - F(gamma), shape (m,)."""
    geom = config.geom
    if isinstance(F, CylinderFunction):
        s = F.profile_sums(config)
        v1 = _profile_values_at(F, geom, x1s)
        v2 = _profile_values_at(F, geom, x2s)
        f0 = float(F.outer.value(s))
        return F.outer.value(s[None, :] + v1.T + v2.T) - f0
    if isinstance(F, ExponentialFunction):
        f0 = F.value(config)
        return f0 * np.expm1(F.profile.values(geom, x1s) + F.profile.values(geom, x2s))
    raise UnsupportedObservableError(f"unsupported observable type {type(F).__name__}")


# ---------------------------------------------------------------------------
# the jump generator and its scaled families

def _as_evaluator(kernel) -> KernelEvaluator:
    if isinstance(kernel, KernelEvaluator):
        return kernel
    return base_kernel(kernel)


def apply_L(F, config: Configuration, kernel) -> float:
    """The pair-jump generator applied to F at one configuration.

    `kernel` is a KernelSpec or a scaled KernelEvaluator.  Inner (h1, h2)
    integrals use the kernel quadrature grid; pairs whose total rate
    vanishes or whose moves cannot touch any profile support are skipped.
    """
    ev = _as_evaluator(kernel)
    spec = ev.spec
    geom = config.geom
    require_interaction_range(geom, spec.cutoff)
    pts = config.points
    if pts.shape[0] < 2:
        return 0.0
    touch = _touch_mask(geom, pts, F.support_balls(), ev.reach)
    ii, jj, xbars = _candidate_pairs(geom, pts, ev.cutoff, touch)
    disps = ev.displacements()
    total = 0.0
    for i, j, xbar in zip(ii, jj, xbars):
        w = ev.pair_weight_table(geom, xbar)
        if ev.variant == FACTORIZED:
            deltas = pair_move_deltas(F, config, int(i), int(j), disps, disps)
        else:
            deltas = pair_move_deltas(F, config, int(i), int(j), disps, -disps, paired=True)
        total += float(np.sum(w * deltas))
    return total


def apply_L_eps_diffusive(F, config: Configuration, spec: KernelSpec, eps: float) -> float:
    """Generator of the small-jump family (support eps * r_a, rate eps^-2)."""
    return apply_L(F, config, scaled_kernel_diffusive(spec, eps))


def apply_L_eps_bd(F, config: Configuration, spec: KernelSpec, eps: float) -> float:
    """Generator of the spread-jump family (support r_a / eps)."""
    return apply_L(F, config, scaled_kernel_bd(spec, eps))


def apply_L0_diffusive(F, config: Configuration, spec: KernelSpec) -> float:
    """Limit generator of the small-jump scaling.

    Factorized family:
        c * sum_x [ lap_x F * sum_y b(x - y) + <grad_x F, sum_y grad b(x - y)> ]
    momentum family: the Laplacian term carries 1/2 and the mixed term
        - c * sum_pairs b(x2 - x1) * sum_i d^2 F / dx1^i dx2^i
    is subtracted.  Requires the differentiable bump b.
    """
    spec.require_unbiased("the diffusive limit generator")
    if not spec.b.smooth:
        raise NotDifferentiableError("diffusive limit needs the smooth-bump b profile")
    geom = config.geom
    require_interaction_range(geom, spec.cutoff)
    pts = config.points
    n = pts.shape[0]
    if n < 2:
        return 0.0
    grads = point_gradients(F, config)
    laps = point_laplacians(F, config)
    delta, dist = pairwise_separations(geom, pts)  # delta[i, j] = x_j - x_i
    bmat = spec.b.value_vec(delta)
    np.fill_diagonal(bmat, 0.0)
    bsum = bmat.sum(axis=1)
    grad_b = spec.b.gradient_vec(-delta)  # grad b at x_i - x_j
    gsum = grad_b.sum(axis=1)
    lap_factor = 0.5 if spec.variant == MOMENTUM else 1.0
    out = spec.c * float(np.sum(lap_factor * laps * bsum) + np.sum(grads * gsum))
    if spec.variant == MOMENTUM:
        ii, jj, _ = _candidate_pairs(geom, pts, spec.r_b)
        cross = sum(
            bmat[i, j] * pair_cross_derivative(F, config, int(i), int(j))
            for i, j in zip(ii, jj)
        )
        out -= spec.c * float(cross)
    return out


# ---------------------------------------------------------------------------
# the birth-and-death limit

def _birth_grid(geom: TorusGeometry, nodes_per_dim=None):
    m = nodes_per_dim or BIRTH_QUAD_NODES.get(geom.d, 8)
    return tensor_grid(0.0, geom.L, m, geom.d)


def _support_mask(geom, xs, balls, pad=0.0):
    mask = np.zeros(xs.shape[0], dtype=bool)
    for center, radius in balls:
        delta = geom.min_image(xs - np.asarray(center, dtype=float))
        mask |= np.sum(delta * delta, axis=-1) <= (radius + pad) ** 2
    return mask


def apply_L0_bd(F, config: Configuration, spec: KernelSpec, z: float,
                birth_nodes_per_dim=None) -> float:
    """Limit generator of the spread-jump scaling: four birth/death terms.

        <a>^2 [ sum_pairs b(x2-x1) (F(gamma \\ {x1,x2}) - F)
              + 1/2 iint z^2 b(x2-x1) (F(gamma + {x1,x2}) - F) dx1 dx2
              + z <b> sum_x (F(gamma \\ {x}) - F)
              + z <b> int z (F(gamma + {x}) - F) dx ]

    Exponential observables use the closed birth integrals; cylinder
    observables integrate births on a torus grid.
    """
    spec.require_unbiased("the birth-and-death limit generator")
    if spec.variant != FACTORIZED:
        raise InvalidParameterError("the four-term limit belongs to the factorized family")
    geom = config.geom
    require_interaction_range(geom, spec.cutoff)
    pts = config.points
    a2 = spec.mean_a**2
    # deaths
    ii, jj, xbars = _candidate_pairs(geom, pts, spec.r_b)
    pair_death = 0.0
    if ii.size:
        pair_death = float(np.sum(spec.b.value_vec(xbars) * remove_pair_deltas(F, config, ii, jj)))
    single_death = z * spec.mean_b * float(np.sum(remove_one_deltas(F, config)))
    # births
    if isinstance(F, ExponentialFunction):
        i1, i2 = _exp_birth_integrals(F, geom, spec)
        f0 = F.value(config)
        single_birth = z * spec.mean_b * z * i1 * f0
        pair_birth = 0.5 * z**2 * i2 * f0
    else:
        xs, vol = _birth_grid(geom, birth_nodes_per_dim)
        balls = F.support_balls()
        keep1 = _support_mask(geom, xs, balls)
        single_birth = z * spec.mean_b * z * vol * float(
            np.sum(add_points_deltas(F, config, xs[keep1]))
        )
        u_nodes, u_vol = tensor_grid(-spec.r_b, spec.r_b, spec.gen_nodes_per_dim, geom.d)
        bu = spec.b.value_vec(u_nodes)
        keep = _support_mask(geom, xs, balls, pad=spec.r_b)
        x1 = xs[keep]
        acc = 0.0
        for u, w in zip(u_nodes, bu):
            if w == 0.0:
                continue
            acc += w * float(np.sum(add_pair_deltas(F, config, x1, geom.wrap(x1 + u))))
        pair_birth = 0.5 * z**2 * vol * u_vol * acc
    return a2 * (pair_death + single_death + single_birth + pair_birth)


def _exp_birth_integrals(F: ExponentialFunction, geom: TorusGeometry, spec: KernelSpec,
                         nodes_per_dim: int = 400):
    """I1 = int (e^phi - 1) dx  and
    I2 = iint b(x2-x1) (e^{phi(x1)+phi(x2)} - 1) dx1 dx2 on the torus."""
    phi = F.profile
    lo = np.asarray(phi.center) - phi.radius
    x1, _ = midpoint_nodes(0.0, 1.0, nodes_per_dim)
    grids = np.meshgrid(*[lo[k] + 2.0 * phi.radius * x1 for k in range(geom.d)], indexing="ij")
    xs = np.stack([g.ravel() for g in grids], axis=-1)
    vol = (2.0 * phi.radius / nodes_per_dim) ** geom.d
    e1 = np.expm1(phi.values(geom, xs))
    i1 = float(e1.sum() * vol)
    # split e^{phi1+phi2} - 1 = (e^{phi1}-1)(e^{phi2}-1) + (e^{phi1}-1) + (e^{phi2}-1)
    u_nodes, u_vol = tensor_grid(-spec.r_b, spec.r_b, spec.gen_nodes_per_dim, geom.d)
    bu = spec.b.value_vec(u_nodes)
    cross = 0.0
    for u, w in zip(u_nodes, bu):
        if w == 0.0:
            continue
        cross += w * float(np.sum(e1 * np.expm1(phi.values(geom, xs + u))))
    i2 = cross * vol * u_vol + 2.0 * spec.mean_b * i1
    return i1, i2


def bd_piece_values(F: ExponentialFunction, config: Configuration, spec: KernelSpec,
                    eps: float) -> np.ndarray:
    """The exact four-piece split of the spread-jump generator at scale eps.

    piece 1: pair removal against b(x2 - x1)            (eps-independent)
    piece 2: pair removal against the smeared b
    piece 3: pair relocation against b(x2 - x1)
    piece 4: pair relocation against the smeared b
    Their sum is the full generator value for every eps.  Exponential
    observables only (the split uses the product form of F).
    """
    if not isinstance(F, ExponentialFunction):
        raise UnsupportedObservableError("the per-piece split needs an exponential observable")
    spec.require_unbiased("the spread-jump piece split")
    if spec.variant != FACTORIZED:
        raise InvalidParameterError("the piece split belongs to the factorized family")
    geom = config.geom
    require_interaction_range(geom, spec.cutoff)
    pts = config.points
    n = pts.shape[0]
    pieces = np.zeros(4)
    if n < 2:
        return pieces
    phi = F.profile
    f0 = F.value(config)
    inv = 1.0 / eps
    ii, jj, xbars = _candidate_pairs(geom, pts, np.inf)
    phis = phi.values(geom, pts)
    rm = np.expm1(-phis[ii] - phis[jj])          # F(gamma \ pair)/F - 1
    eij = np.exp(-phis[ii] - phis[jj])
    b_near = spec.b.value_vec(xbars)
    # smeared b per pair: iint a(u1) a(u2) b(xbar + (u2-u1)/eps) du
    mean_a = spec.mean_a
    aa = spec.aa_outer
    vol = spec.h_vol
    smear = np.empty(ii.size)
    for p, xbar in enumerate(xbars):
        shifted = geom.min_image(xbar[None, None, :] + inv * spec.h_diff)
        smear[p] = float(np.sum(aa * spec.b.value_vec(shifted))) * vol**2
    pieces[0] = mean_a**2 * f0 * float(np.sum(b_near * rm))
    pieces[1] = f0 * float(np.sum(smear * rm))
    # relocation factors g_i(u) = e^{phi(x_i + u/eps)} - 1 on the node grid
    touch = _touch_mask(geom, pts, F.support_balls(), inv * spec.r_a)
    av = spec.a_at_nodes
    g = np.zeros((n, av.size))
    active = np.where(touch)[0]
    for i in active:
        g[i] = np.expm1(phi.values(geom, pts[i] + inv * spec.h_nodes))
    gbar = (g * av[None, :]).sum(axis=1) * vol
    p3 = 0.0
    p4 = 0.0
    for p in range(ii.size):
        i, j = ii[p], jj[p]
        if not (touch[i] or touch[j]):
            continue
        pair_mix = mean_a * (gbar[i] + gbar[j]) + gbar[i] * gbar[j]
        if b_near[p] != 0.0:
            p3 += b_near[p] * eij[p] * pair_mix
        shifted = geom.min_image(xbars[p][None, None, :] + inv * spec.h_diff)
        bshift = spec.b.value_vec(shifted)
        gprod = (1.0 + g[i])[:, None] * (1.0 + g[j])[None, :] - 1.0
        p4 += eij[p] * float(np.sum(aa * bshift * gprod)) * vol**2
    pieces[2] = f0 * p3
    pieces[3] = f0 * p4
    return pieces


def bd_piece_limits(F: ExponentialFunction, config: Configuration, spec: KernelSpec,
                    z: float) -> np.ndarray:
    """Limits of the four pieces: pair death, single death, single birth,
    pair birth (piece 1 is already its own limit)."""
    if not isinstance(F, ExponentialFunction):
        raise UnsupportedObservableError("the per-piece split needs an exponential observable")
    spec.require_unbiased("the spread-jump piece limits")
    geom = config.geom
    pts = config.points
    phi = F.profile
    f0 = F.value(config)
    a2 = spec.mean_a**2
    out = np.zeros(4)
    if pts.shape[0] >= 2:
        ii, jj, xbars = _candidate_pairs(geom, pts, spec.r_b)
        if ii.size:
            phis = phi.values(geom, pts)
            out[0] = a2 * f0 * float(
                np.sum(spec.b.value_vec(xbars) * np.expm1(-phis[ii] - phis[jj]))
            )
    if pts.shape[0] >= 1:
        out[1] = a2 * z * spec.mean_b * f0 * float(np.sum(np.expm1(-phi.values(geom, pts))))
    i1, i2 = _exp_birth_integrals(F, geom, spec)
    out[2] = a2 * z * spec.mean_b * z * i1 * f0
    out[3] = 0.5 * a2 * z**2 * i2 * f0
    return out


# ---------------------------------------------------------------------------
# Dirichlet forms and generator pairings by Monte Carlo

def jump_form_value(F, G, config, ev: KernelEvaluator) -> float:
    """Configuration-wise integrand of the jump form:
    1/2 sum_pairs iint rate (Delta F)(Delta G)."""
    geom = config.geom
    pts = config.points
    if pts.shape[0] < 2:
        return 0.0
    touchF = _touch_mask(geom, pts, F.support_balls(), ev.reach)
    touchG = _touch_mask(geom, pts, G.support_balls(), ev.reach)
    ii, jj, xbars = _candidate_pairs(geom, pts, ev.cutoff, touchF | touchG)
    disps = ev.displacements()
    acc = 0.0
    for i, j, xbar in zip(ii, jj, xbars):
        w = ev.pair_weight_table(geom, xbar)
        if ev.variant == FACTORIZED:
            dF = pair_move_deltas(F, config, int(i), int(j), disps, disps)
            dG = pair_move_deltas(G, config, int(i), int(j), disps, disps)
        else:
            dF = pair_move_deltas(F, config, int(i), int(j), disps, -disps, paired=True)
            dG = pair_move_deltas(G, config, int(i), int(j), disps, -disps, paired=True)
        acc += float(np.sum(w * dF * dG))
    return 0.5 * acc


def diffusive_form_value(F, G, config, spec: KernelSpec) -> float:
    """Configuration-wise integrand of the diffusive-limit form (variant-aware)."""
    geom = config.geom
    pts = config.points
    if pts.shape[0] < 2:
        return 0.0
    gF = point_gradients(F, config)
    gG = point_gradients(G, config)
    delta, dist = pairwise_separations(geom, pts)
    bmat = spec.b.value_vec(delta)
    np.fill_diagonal(bmat, 0.0)
    if spec.variant == FACTORIZED:
        return spec.c * float(np.sum(np.sum(gF * gG, axis=1) * bmat.sum(axis=1)))
    ii, jj, xbars = _candidate_pairs(geom, pts, spec.r_b)
    if ii.size == 0:
        return 0.0
    dF = gF[ii] - gF[jj]
    dG = gG[ii] - gG[jj]
    return 0.5 * spec.c * float(np.sum(spec.b.value_vec(xbars) * np.sum(dF * dG, axis=1)))


def bd_form_value(F, G, config, spec: KernelSpec, z: float) -> float:
    """Configuration-wise integrand of the birth-and-death limit form
    (pair-removal and single-removal differences)."""
    geom = config.geom
    pts = config.points
    acc = 0.0
    if pts.shape[0] >= 2:
        ii, jj, xbars = _candidate_pairs(geom, pts, spec.r_b)
        if ii.size:
            acc += float(np.sum(
                spec.b.value_vec(xbars)
                * remove_pair_deltas(F, config, ii, jj)
                * remove_pair_deltas(G, config, ii, jj)
            ))
    if pts.shape[0] >= 1:
        acc += z * spec.mean_b * float(
            np.sum(remove_one_deltas(F, config) * remove_one_deltas(G, config))
        )
    return spec.mean_a**2 * acc


def dirichlet_form_mc(F, G, spec: KernelSpec, z: float, geom: TorusGeometry,
                      n_samples: int, rng: np.random.Generator,
                      form: str = "jump", evaluator: KernelEvaluator = None) -> MCEstimate:
    """Monte Carlo estimate of the quadratic form E(F, G) over Poisson input.

    form = "jump":      1/2 E[ sum_pairs iint rate (Delta F)(Delta G) ]
    form = "diffusive": c E[ sum_x <grad F, grad G> sum_y b(x-y) ]
                        (momentum family: the difference-gradient pair form)
    form = "bd":        <a>^2 E[ sum_pairs b (dF)(dG) + z<b> sum_x (dF)(dG) ]
                        with d* the removal differences.
    """
    if n_samples < 100:
        raise InvalidParameterError("use at least 10^2 samples for form estimates")
    ev = evaluator or base_kernel(spec)
    vals = np.empty(n_samples)
    for s in range(n_samples):
        config = sample_poisson(geom, z, rng)
        if form == "jump":
            vals[s] = jump_form_value(F, G, config, ev)
        elif form == "diffusive":
            vals[s] = diffusive_form_value(F, G, config, spec)
        elif form == "bd":
            vals[s] = bd_form_value(F, G, config, spec, z)
        else:
            raise InvalidParameterError(f"unknown form variant {form!r}")
    return MCEstimate.from_samples(vals)


def generator_pairing_mc(F, G, spec: KernelSpec, z: float, geom: TorusGeometry,
                         n_samples: int, rng: np.random.Generator,
                         which: str = "jump", evaluator: KernelEvaluator = None) -> MCEstimate:
    """Monte Carlo estimate of <(-L*) F, G> over Poisson input, where L* is
    the jump generator, the diffusive limit, or the birth-and-death limit."""
    ev = evaluator or base_kernel(spec)
    vals = np.empty(n_samples)
    for s in range(n_samples):
        config = sample_poisson(geom, z, rng)
        if which == "jump":
            lf = apply_L(F, config, ev)
        elif which == "diffusive":
            lf = apply_L0_diffusive(F, config, spec)
        elif which == "bd":
            lf = apply_L0_bd(F, config, spec, z)
        else:
            raise InvalidParameterError(f"unknown generator variant {which!r}")
        vals[s] = -lf * G.value(config)
    return MCEstimate.from_samples(vals)


# ---------------------------------------------------------------------------
# Mecke identity and the pair-sum second moment

class IndicatorFunctional:
    """G(gamma, x) = 1_Lambda(x) for a box window."""

    def __init__(self, lo, hi):
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if np.any(self.hi <= self.lo):
            raise InvalidParameterError("window needs lo < hi in every coordinate")

    @property
    def support(self):
        return self.lo, self.hi

    def _inside(self, xs):
        xs = np.atleast_2d(xs)
        return np.all((xs >= self.lo) & (xs < self.hi), axis=-1)

    def sum_over_points(self, config: Configuration) -> float:
        return float(np.sum(self._inside(config.points)))

    def added_values(self, config: Configuration, xs) -> np.ndarray:
        return self._inside(xs).astype(float)


class WindowCountFunctional(IndicatorFunctional):
    """G(gamma, x) = 1_Lambda(x) * |(gamma + x) restricted to Lambda|."""

    def sum_over_points(self, config: Configuration) -> float:
        n_in = np.sum(self._inside(config.points))
        return float(n_in * n_in)

    def added_values(self, config: Configuration, xs) -> np.ndarray:
        n_in = np.sum(self._inside(config.points))
        return self._inside(xs) * (n_in + 1.0)


class ProfileExpFunctional:
    """G(gamma, x) = phi(x) * exp(-<phi, gamma>), nonlinear in gamma."""

    def __init__(self, profile):
        self.profile = profile

    @property
    def support(self):
        c = np.atleast_1d(np.asarray(self.profile.center, dtype=float))
        return c - self.profile.radius, c + self.profile.radius

    def sum_over_points(self, config: Configuration) -> float:
        vals = self.profile.values(config.geom, config.points)
        return float(np.sum(vals) * math.exp(-float(np.sum(vals))))

    def added_values(self, config: Configuration, xs) -> np.ndarray:
        base = float(np.sum(self.profile.values(config.geom, config.points)))
        vx = self.profile.values(config.geom, xs)
        return vx * np.exp(-base - vx)


def mecke_check(functional, z: float, geom: TorusGeometry, n_samples: int,
                rng: np.random.Generator, nodes_per_dim: int = 200):
    """Both sides of the integration-by-parts identity characterizing the
    Poisson field:

        E[ sum_{x in gamma} G(gamma, x) ] = E[ int z dx G(gamma + x, x) ].

    The right-hand x-integral runs over the functional's declared support
    box on a midpoint grid.  Returns (lhs, rhs) Monte Carlo estimates.
    """
    lo, hi = functional.support
    x1s = [midpoint_nodes(lo[k], hi[k], nodes_per_dim)[0] for k in range(geom.d)]
    grids = np.meshgrid(*x1s, indexing="ij")
    xs = geom.wrap(np.stack([g.ravel() for g in grids], axis=-1))
    vol = float(np.prod((hi - lo) / nodes_per_dim))
    lhs = np.empty(n_samples)
    rhs = np.empty(n_samples)
    for s in range(n_samples):
        config = sample_poisson(geom, z, rng)
        lhs[s] = functional.sum_over_points(config)
        rhs[s] = z * vol * float(np.sum(functional.added_values(config, xs)))
    return MCEstimate.from_samples(lhs), MCEstimate.from_samples(rhs)


def pair_moment_exact(lam: float) -> float:
    """E[(number of window pairs)^2] for a Poisson window count with mean lam:
    lam^4/4 + lam^3 + lam^2/2."""
    return lam**4 / 4.0 + lam**3 + lam**2 / 2.0


def pair_moment_check(lo, hi, z: float, geom: TorusGeometry, n_samples: int,
                      rng: np.random.Generator):
    """Monte Carlo second moment of the pair count in a window against the
    closed Poisson value.  Returns (mc estimate, exact value)."""
    window = IndicatorFunctional(lo, hi)
    lam = z * float(np.prod(window.hi - window.lo))
    vals = np.empty(n_samples)
    for s in range(n_samples):
        config = sample_poisson(geom, z, rng)
        n_in = window.sum_over_points(config)
        vals[s] = (n_in * (n_in - 1) / 2.0) ** 2
    return MCEstimate.from_samples(vals), pair_moment_exact(lam)
