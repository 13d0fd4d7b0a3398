"""Truncated, discretized second-quantization picture of the pair-jump
generator.

The one-particle space is discretized on M^d torus sites with weight
w = z (L/M)^d per site; the n-particle sector holds the symmetric
functions on site tuples with inner product

    <f, g>_n = n! * w^n * sum_{tuples} f g,

stored on the multiset basis, where the Gram matrix is diagonal with
entries (n!)^2 w^n / prod(multiplicities!).  Jump integrals are
discretized on the same site lattice (offset weight (L/M)^d per lattice
displacement), so the negative generator decomposes exactly into Jacobi
blocks

    -Ltilde = J+ + J0 + J-,

with J+ raising the sector by one, J0 sector-preserving (six
contributions: pair-rate multiplication and pair displacement averaging
with weight n(n-1), a scalar, a single-site relocation, and two mixed
single-displacement terms with weight n), and J- the weighted adjoint of
J+.  All structural identities (adjointness, positive semidefiniteness,
the quarter-sum form equality) hold to rounding for any kernel whose
defining symmetries hold on the lattice; minimal images make that true
for the built-in radial profiles regardless of wrap-around, so the grid
torus may be smaller than the interaction range.

Only the factorized kernel family is representable here; the
momentum-conserving family concentrates its jump measure on a diagonal
and is not covered by these block kernels.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .errors import InvalidParameterError, SizeBudgetError
from .geometry import TorusGeometry
from .kernels import FACTORIZED, KernelSpec

SECTOR_DIM_BUDGET = 20_000


@dataclass(frozen=True)
class GridSpace:
    """M^d sites on the torus with per-site weight w = z (L/M)^d."""

    geom: TorusGeometry
    M: int
    z: float

    def __post_init__(self):
        if self.M < 2:
            raise InvalidParameterError("need at least 2 sites per dimension")
        if not self.z > 0:
            raise InvalidParameterError("intensity z must be > 0")

    @property
    def n_sites(self) -> int:
        return self.M**self.geom.d

    @property
    def cell_volume(self) -> float:
        return (self.geom.L / self.M) ** self.geom.d

    @property
    def site_weight(self) -> float:
        # M^d * w = z L^d by construction
        return self.z * self.cell_volume

    def site_positions(self) -> np.ndarray:
        step = self.geom.L / self.M
        axes = [np.arange(self.M) * step for _ in range(self.geom.d)]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def index_tuples(self) -> np.ndarray:
        return np.array(list(np.ndindex(*(self.M,) * self.geom.d)), dtype=int)


class SectorBasis:
    """Multisets of n grid sites with the diagonal weighted Gram matrix."""

    def __init__(self, grid: GridSpace, n: int):
        self.grid = grid
        self.n = n
        self.multisets = list(itertools.combinations_with_replacement(range(grid.n_sites), n))
        self.index = {m: k for k, m in enumerate(self.multisets)}
        w = grid.site_weight
        gram = np.empty(len(self.multisets))
        for k, mu in enumerate(self.multisets):
            denom = 1.0
            for _, group in itertools.groupby(mu):
                denom *= math.factorial(sum(1 for _ in group))
            gram[k] = math.factorial(n) ** 2 * w**n / denom
        self.gram = gram

    @property
    def dim(self) -> int:
        return len(self.multisets)

    def _lookup(self, key: tuple) -> int:
        return self.index[key]


def sector_dimension(n_sites: int, n: int) -> int:
    return math.comb(n_sites + n - 1, n)


@dataclass
class FockBlocks:
    """Assembled Jacobi blocks over sectors 0..n_max (J+ also out of the top
    sector, for the norm table; the combined operator drops it)."""

    spec: KernelSpec
    grid: GridSpace
    n_max: int
    bases: List[SectorBasis]
    jplus: List[np.ndarray] = field(repr=False)   # jplus[n]: sector n -> n+1, n = 0..n_max
    j0: List[np.ndarray] = field(repr=False)      # j0[n]: sector n -> n,    n = 0..n_max
    jminus: List[np.ndarray] = field(repr=False)  # jminus[n]: sector n -> n-1, n = 1..n_max
    j03_scalar: float = 0.0  # the per-particle scalar int z dy iint q

    def gram(self, n: int) -> np.ndarray:
        return self.bases[n].gram

    def combined_matrix(self) -> np.ndarray:
        """-Ltilde (truncated): block tridiagonal on sectors 0..n_max."""
        dims = [self.bases[n].dim for n in range(self.n_max + 1)]
        offs = np.concatenate([[0], np.cumsum(dims)])
        D = int(offs[-1])
        out = np.zeros((D, D))
        for n in range(self.n_max + 1):
            sl = slice(offs[n], offs[n + 1])
            out[sl, sl] = self.j0[n]
            if n < self.n_max:
                out[offs[n + 1] : offs[n + 2], sl] = self.jplus[n]
            if n >= 1:
                out[offs[n - 1] : offs[n], sl] = self.jminus[n - 1]
        return out

    def full_gram(self) -> np.ndarray:
        return np.concatenate([self.bases[n].gram for n in range(self.n_max + 1)])

    def symmetrized_combined(self) -> np.ndarray:
        """Omega^1/2 (-Ltilde) Omega^-1/2: symmetric in the flat coordinates."""
        A = self.combined_matrix()
        s = np.sqrt(self.full_gram())
        return (s[:, None] * A) / s[None, :]


def _weighted_norm(A: np.ndarray, gram_out: np.ndarray, gram_in: np.ndarray,
                   tol: float = 1e-13, max_iter: int = 20_000) -> float:
    """Operator norm between weighted spaces, by power iteration on the
    symmetrized block."""
    if A.size == 0:
        return 0.0
    B = (np.sqrt(gram_out)[:, None] * A) / np.sqrt(gram_in)[None, :]
    BtB = B.T @ B
    # deterministic start with no accidental symmetry (constants can lie in
    # the kernel of these blocks)
    v = np.cos(0.7 * np.arange(BtB.shape[0]) + 0.3)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = BtB @ v
        nrm = float(np.linalg.norm(w))
        if nrm == 0.0:
            return 0.0
        v_new = w / nrm
        if abs(nrm - lam) <= tol * max(1.0, nrm):
            lam = nrm
            break
        lam = nrm
        v = v_new
    return math.sqrt(lam)


def assemble_blocks(spec: KernelSpec, grid: GridSpace, n_max: int) -> FockBlocks:
    """Assemble the Jacobi blocks of the negative generator on the grid."""
    spec.require_unbiased("the Fock block assembly")
    if spec.variant != FACTORIZED:
        raise InvalidParameterError("Fock blocks are displayed for the factorized family")
    if n_max < 1:
        raise InvalidParameterError("n_max must be >= 1")
    S = grid.n_sites
    for n in range(n_max + 2):
        dim = sector_dimension(S, n)
        if dim > SECTOR_DIM_BUDGET:
            raise SizeBudgetError(
                f"sector {n} dimension {dim} exceeds the budget {SECTOR_DIM_BUDGET}"
            )
    geom = grid.geom
    w = grid.site_weight
    vol = grid.cell_volume

    # lattice geometry: flat index arithmetic and minimal-image vectors
    idx_tuples = grid.index_tuples()  # (S, d)
    pos = grid.site_positions()
    strides = np.array([grid.M ** (geom.d - 1 - k) for k in range(geom.d)])
    diff_idx = np.empty((S, S), dtype=int)  # flat index of (t - s) mod M
    for s in range(S):
        rel = (idx_tuples - idx_tuples[s]) % grid.M
        diff_idx[s] = rel @ strides
    add_site = np.empty((S, S), dtype=int)  # flat index of site s shifted by offset delta
    for s in range(S):
        rel = (idx_tuples[s] + idx_tuples) % grid.M
        add_site[s] = rel @ strides
    offsets = geom.min_image(pos)  # lattice displacement vectors

    a_off = spec.a.value_vec(offsets)
    act = np.where(a_off != 0.0)[0]  # offsets inside supp a
    if act.size == 0:
        raise InvalidParameterError(
            "the a profile vanishes on every lattice offset; enlarge its radius"
        )
    # q(x, d1, d2) for every site difference x and active offsets
    b_of_diff = spec.b.value_vec(geom.min_image(pos))  # b at site-difference vectors
    K = act.size
    q_cache = np.empty((S, K, K))
    for xi in range(S):
        for p1, d1 in enumerate(act):
            # b(x + d2 - d1) via index arithmetic: x - d1 + d2
            base = add_site[xi, _neg_index(idx_tuples, strides, grid.M, d1)]
            shifted = add_site[base, act]
            q_cache[xi, p1, :] = a_off[d1] * a_off[act] * (b_of_diff[xi] + b_of_diff[shifted])
    R_diff = q_cache.sum(axis=(1, 2)) * vol**2            # iint q(x, .) dh
    R2 = q_cache.sum(axis=2) * vol                        # int q(x, d1, .) dh2
    scal = w * float(R_diff.sum())                        # int z dx iint q
    S5 = w * vol * q_cache.sum(axis=(0, 2))               # int z dx int dh2 q(x, d1, .)
    T6 = w * vol * q_cache.sum(axis=1)                    # int z dx int dh1 q -> (S, K) by d2

    bases = [SectorBasis(grid, n) for n in range(n_max + 2)]

    j0 = [np.zeros((bases[n].dim, bases[n].dim)) for n in range(n_max + 1)]
    jplus = [np.zeros((bases[n + 1].dim, bases[n].dim)) for n in range(n_max + 1)]

    # sector formulas act row-wise: (J f)(y) sums over positions of the
    # OUTPUT tuple y, so each enumerated multiset below is a matrix row and
    # the displaced multiset indexes the source column (the orientation
    # matters on multisets with repeated sites).
    for n in range(n_max + 1):
        basis = bases[n]
        A0 = j0[n]
        for row, mu in enumerate(basis.multisets):
            y = list(mu)
            # scalar term, weight n
            A0[row, row] += n * scal
            for p in range(n):
                yp = y[p]
                # single relocation J0_4: f argument has y_p -> x
                for x in range(S):
                    src = basis._lookup(_replace(mu, p, x))
                    A0[row, src] += w * R_diff[diff_idx[yp, x]]
                # mixed displacement -J0_5: f argument has y_p -> y_p + d1
                for k1, d1 in enumerate(act):
                    src = basis._lookup(_replace(mu, p, int(add_site[yp, d1])))
                    A0[row, src] -= S5[k1] * vol
                # mixed relocation -J0_6: f argument has y_p -> x + d2
                for x in range(S):
                    xi = diff_idx[yp, x]
                    for k2, d2 in enumerate(act):
                        src = basis._lookup(_replace(mu, p, int(add_site[x, d2])))
                        A0[row, src] -= T6[xi, k2] * vol
                for q in range(n):
                    if q == p:
                        continue
                    xi = diff_idx[yp, y[q]]
                    # pair-rate multiplication (1/2) J0_1, weight n(n-1) via the pair sum
                    A0[row, row] += 0.5 * R_diff[xi]
                    # pair displacement averaging (1/2) J0_2; the minus sign is
                    # forced by expanding the squared six-term difference
                    # operator of the quadratic form (the cross products of
                    # the moved- and unmoved-pair annihilations enter with
                    # opposite signs), and is what makes the block sum match
                    # that form identically
                    for k1, d1 in enumerate(act):
                        for k2, d2 in enumerate(act):
                            nu = _replace2(mu, p, int(add_site[yp, d1]), q, int(add_site[y[q], d2]))
                            A0[row, basis._lookup(nu)] -= (
                                0.5 * q_cache[xi, k1, k2] * vol**2
                            )
        # J+ : fill by rows over sector n+1
        up = bases[n + 1]
        JP = jplus[n]
        inv = 1.0 / (n + 1)
        for row, nu in enumerate(up.multisets):
            yv = list(nu)
            for p in range(n + 1):
                for q in range(n + 1):
                    if q == p:
                        continue
                    xi = diff_idx[yv[p], yv[q]]
                    if R_diff[xi] != 0.0:
                        mu0 = _drop(nu, q)
                        JP[row, basis._lookup(mu0)] -= inv * R_diff[xi]
                    for k1, d1 in enumerate(act):
                        if R2[xi, k1] == 0.0:
                            continue
                        mu1 = _drop2_add(nu, p, q, int(add_site[yv[p], d1]))
                        JP[row, basis._lookup(mu1)] += inv * vol * R2[xi, k1]

    # J- is the adjoint of J+ in the weighted inner products:
    # J-_{n} = Omega_{n-1}^{-1} (J+_{n-1})^T Omega_n
    jminus = [
        (1.0 / bases[n - 1].gram)[:, None] * jplus[n - 1].T * bases[n].gram[None, :]
        for n in range(1, n_max + 1)
    ]

    return FockBlocks(spec, grid, n_max, bases, jplus, j0, jminus, j03_scalar=float(scal))


def _neg_index(idx_tuples, strides, M, flat):
    rel = (-idx_tuples[flat]) % M
    return int(rel @ strides)


def _replace(mu: tuple, pos: int, site: int) -> tuple:
    out = list(mu)
    out[pos] = site
    out.sort()
    return tuple(out)


def _replace2(mu: tuple, p: int, site_p: int, q: int, site_q: int) -> tuple:
    out = list(mu)
    out[p] = site_p
    out[q] = site_q
    out.sort()
    return tuple(out)


def _drop(mu: tuple, pos: int) -> tuple:
    out = list(mu)
    del out[pos]
    return tuple(out)


def _drop2_add(mu: tuple, p: int, q: int, site: int) -> tuple:
    out = [v for k, v in enumerate(mu) if k not in (p, q)]
    out.append(site)
    out.sort()
    return tuple(out)


# ---------------------------------------------------------------------------
# checks

def adjointness_defect(blocks: FockBlocks) -> float:
    """Largest entry of Omega_{n-1} J-  -  (J+)^T Omega_n over all sectors
    (zero iff J- is the exact weighted adjoint of J+)."""
    worst = 0.0
    for n in range(1, blocks.n_max + 1):
        lhs = blocks.bases[n - 1].gram[:, None] * blocks.jminus[n - 1]
        rhs = blocks.jplus[n - 1].T * blocks.bases[n].gram[None, :]
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def verify_norm_growth(blocks: FockBlocks):
    """Weighted operator norms per sector and fitted growth exponents.

    Returns (rows, exponents): rows are (n, |J+_n|, |J0_n|, |J-_n|) for
    n = 1..n_max; exponents are least-squares slopes of log norm against
    log n over n = 2..n_max for J+ and J0.
    """
    rows = []
    for n in range(1, blocks.n_max + 1):
        jp = _weighted_norm(blocks.jplus[n], blocks.bases[n + 1].gram, blocks.bases[n].gram)
        j0 = _weighted_norm(blocks.j0[n], blocks.bases[n].gram, blocks.bases[n].gram)
        jm = _weighted_norm(blocks.jminus[n - 1], blocks.bases[n - 1].gram, blocks.bases[n].gram)
        rows.append((n, jp, j0, jm))
    ns = np.array([r[0] for r in rows], dtype=float)
    fit_mask = ns >= 2
    exponents = {}
    for key, col in (("jplus", 1), ("j0", 2)):
        vals = np.array([r[col] for r in rows])[fit_mask]
        logs_n = np.log(ns[fit_mask])
        if np.any(vals <= 0) or logs_n.size < 2:
            exponents[key] = float("nan")
        else:
            slope = np.polyfit(logs_n, np.log(vals), 1)[0]
            exponents[key] = float(slope)
    return rows, exponents


def _add_index_maps(blocks: FockBlocks):
    """add_maps[n][v][k] = index in basis_n of basis_{n-1}[k] + {site v}."""
    maps = [None]
    for n in range(1, blocks.n_max + 2):
        lower = blocks.bases[n - 1]
        upper = blocks.bases[n]
        table = np.empty((blocks.grid.n_sites, lower.dim), dtype=int)
        for v in range(blocks.grid.n_sites):
            for k, mu in enumerate(lower.multisets):
                out = list(mu)
                out.append(v)
                out.sort()
                table[v, k] = upper._lookup(tuple(out))
        maps.append(table)
    return maps


def form_equality_check(blocks: FockBlocks, f: List[np.ndarray]):
    """Both routes to the energy of a finite vector f = (f_0..f_n_max):

    lhs   <f, (J+ + J0 + J-) f>  from the assembled blocks;
    rhs   the quarter-sum carre-du-champ
          1/4 sum_{x1,x2} w^2 sum_{h1,h2} vol^2 q(x2-x1,h1,h2) |D f|^2
    evaluated directly from annihilation actions, where D removes the pair
    at the moved or unmoved locations with signs (+ + - - + +).

    Returns (lhs, rhs, |lhs - rhs|).
    """
    grid = blocks.grid
    geom = grid.geom
    spec = blocks.spec
    n_max = blocks.n_max
    # lhs
    lhs = 0.0
    for n in range(n_max + 1):
        out = blocks.j0[n] @ f[n]
        if n >= 1:
            out = out + blocks.jplus[n - 1] @ f[n - 1]
        if n + 1 <= n_max:
            out = out + blocks.jminus[n] @ f[n + 1]
        lhs += float(np.sum(blocks.bases[n].gram * f[n] * out))

    # rhs
    S = grid.n_sites
    w = grid.site_weight
    vol = grid.cell_volume
    pos = grid.site_positions()
    idx_tuples = grid.index_tuples()
    strides = np.array([grid.M ** (geom.d - 1 - k) for k in range(geom.d)])
    add_site = np.empty((S, S), dtype=int)
    for s in range(S):
        rel = (idx_tuples[s] + idx_tuples) % grid.M
        add_site[s] = rel @ strides
    offsets = geom.min_image(pos)
    a_off = spec.a.value_vec(offsets)
    act = np.where(a_off != 0.0)[0]
    b_of_diff = spec.b.value_vec(geom.min_image(pos))
    diff_idx = np.empty((S, S), dtype=int)
    for s in range(S):
        rel = (idx_tuples - idx_tuples[s]) % grid.M
        diff_idx[s] = rel @ strides
    maps = _add_index_maps(blocks)

    def annihilate(vec_n, n, site):
        # (d_site f)(mu) = n * f(mu + site), sector n -> n-1
        return n * vec_n[maps[n][site]]

    rhs = 0.0
    for s in range(S):
        for t in range(S):
            xi = diff_idx[s, t]
            for d1 in act:
                s1 = int(add_site[s, d1])
                for d2 in act:
                    t1 = int(add_site[t, d2])
                    shifted = _shift_diff(idx_tuples, strides, grid.M, xi, d1, d2)
                    qv = a_off[d1] * a_off[d2] * (b_of_diff[xi] + b_of_diff[shifted])
                    if qv == 0.0:
                        continue
                    norm2 = 0.0
                    for m in range(n_max):
                        comp = np.zeros(blocks.bases[m].dim)
                        n1 = m + 1
                        if n1 <= n_max:
                            fa = f[n1]
                            comp += -(
                                annihilate(fa, n1, s1)
                                + annihilate(fa, n1, t1)
                                - annihilate(fa, n1, s)
                                - annihilate(fa, n1, t)
                            )
                        n2 = m + 2
                        if n2 <= n_max:
                            fb = f[n2]
                            first = n2 * fb[maps[n2][t1]]
                            moved = (n2 - 1) * first[maps[n2 - 1][s1]]
                            first0 = n2 * fb[maps[n2][t]]
                            still = (n2 - 1) * first0[maps[n2 - 1][s]]
                            comp += moved - still
                        norm2 += float(np.sum(blocks.bases[m].gram * comp * comp))
                    rhs += 0.25 * w**2 * vol**2 * qv * norm2
    return lhs, rhs, abs(lhs - rhs)


def _neg_flat(idx_tuples, strides, M, flat):
    rel = (-idx_tuples[flat]) % M
    return int(rel @ strides)


def _shift_diff(idx_tuples, strides, M, xi, d1, d2):
    """Flat index of (x + d2 - d1) mod M from flat indices."""
    rel = (idx_tuples[xi] + idx_tuples[d2] - idx_tuples[d1]) % M
    return int(rel @ strides)


def number_operator_spectrum(grid: GridSpace, n_max: int):
    """Eigenvalues of the particle-number operator on sectors 0..n_max:
    n with multiplicity dim(sector n)."""
    vals = []
    for n in range(n_max + 1):
        vals.extend([n] * sector_dimension(grid.n_sites, n))
    return np.array(vals, dtype=float)


def second_quantization_gap(grid: GridSpace, n_max: int) -> float:
    """Smallest nonzero eigenvalue of the number operator (the mechanism
    behind the spectral gap of the free limit): always 1."""
    spectrum = number_operator_spectrum(grid, n_max)
    nonzero = spectrum[spectrum > 0]
    if nonzero.size == 0:
        raise InvalidParameterError("need n_max >= 1 for a nonzero sector")
    return float(np.min(nonzero))
