"""Event-driven simulation of the pair-jump process, its birth-and-death
scaling limit, the free immigration-death limit, and a weak Euler-Maruyama
integrator for the diffusive limit.

All discrete-event simulators are exact-law Gillespie schemes: proposals
fire at a constant per-channel bound rate and are thinned by the ratio of
the true rate density to the bound, so no time discretization error enters
the invariance and rate tests.  Replay of a recorded trajectory is
bit-deterministic; removals use swap-remove semantics (the last particle
takes the index of the removed one), and the serialization below relies on
that convention.

Trajectory text format (one record per line):
    # contjump-trajectory v1
    # geometry d=<d> L=<L>
    # horizon <T>
    # initial <n>
    <n lines of comma-separated coordinates>
    # events <m>
    t,jump,i,j,h1...,h2...
    t,pair_birth,x1...,x2...
    t,pair_death,i,j
    t,birth,x...
    t,death,i
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import ContjumpError, InvalidParameterError, NotDifferentiableError
from .geometry import Configuration, TorusGeometry, pairwise_separations, require_interaction_range
from .kernels import FACTORIZED, KernelSpec


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class Trajectory:
    """An initial configuration plus a time-ordered event log on (0, T]."""

    initial: Configuration
    events: List[Tuple]
    horizon: float

    def __post_init__(self):
        last = 0.0
        for ev in self.events:
            t = ev[0]
            if not (last < t <= self.horizon):
                raise InvalidParameterError("event times must strictly increase within (0, T]")
            last = t

    def to_lines(self) -> List[str]:
        geom = self.initial.geom
        lines = [
            "# contjump-trajectory v1",
            f"# geometry d={geom.d} L={_fmt(geom.L)}",
            f"# horizon {_fmt(self.horizon)}",
            f"# initial {len(self.initial)}",
        ]
        for row in self.initial.points:
            lines.append(",".join(_fmt(v) for v in row))
        lines.append(f"# events {len(self.events)}")
        for ev in self.events:
            t, kind = ev[0], ev[1]
            payload = []
            for item in ev[2]:
                payload.append(str(int(item)) if isinstance(item, (int, np.integer)) else _fmt(item))
            lines.append(",".join([_fmt(t), kind] + payload))
        return lines

    @classmethod
    def from_lines(cls, lines: Sequence[str]) -> "Trajectory":
        it = iter(lines)
        header = next(it).strip()
        if header != "# contjump-trajectory v1":
            raise InvalidParameterError(f"unrecognized trajectory header {header!r}")
        geo = next(it).split()
        d = int(geo[2].split("=")[1])
        L = float(geo[3].split("=")[1])
        geom = TorusGeometry(d, L)
        horizon = float(next(it).split()[-1])
        n = int(next(it).split()[-1])
        pts = np.array([[float(v) for v in next(it).split(",")] for _ in range(n)])
        pts = pts.reshape(n, d)
        m = int(next(it).split()[-1])
        events = []
        int_payloads = {"pair_death": 2, "death": 1, "jump": 2}
        for _ in range(m):
            fields = next(it).split(",")
            t, kind = float(fields[0]), fields[1]
            n_int = int_payloads.get(kind, 0)
            payload = tuple(int(v) for v in fields[2 : 2 + n_int]) + tuple(
                float(v) for v in fields[2 + n_int :]
            )
            events.append((t, kind, payload))
        return cls(Configuration(geom, pts), events, horizon)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.to_lines()) + "\n")

    @classmethod
    def load(cls, path) -> "Trajectory":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_lines(fh.read().splitlines())


@dataclass
class DiffusionPath:
    """Stored frames of an integrated diffusion (times strictly increasing)."""

    geom: TorusGeometry
    times: np.ndarray
    frames: np.ndarray  # (n_frames, n_particles, d)


# ---------------------------------------------------------------------------
# event application / replay

def _apply_event(geom: TorusGeometry, positions: List[np.ndarray], ev) -> None:
    _, kind, payload = ev
    d = geom.d
    if kind == "jump":
        i, j = payload[0], payload[1]
        h1 = np.asarray(payload[2 : 2 + d])
        h2 = np.asarray(payload[2 + d : 2 + 2 * d])
        positions[i] = geom.wrap(positions[i] + h1)
        positions[j] = geom.wrap(positions[j] + h2)
    elif kind == "birth":
        positions.append(geom.wrap(np.asarray(payload[:d], dtype=float)))
    elif kind == "pair_birth":
        positions.append(geom.wrap(np.asarray(payload[:d], dtype=float)))
        positions.append(geom.wrap(np.asarray(payload[d : 2 * d], dtype=float)))
    elif kind == "death":
        _swap_remove(positions, payload[0])
    elif kind == "pair_death":
        i, j = sorted((payload[0], payload[1]))
        _swap_remove(positions, j)
        _swap_remove(positions, i)
    else:
        raise InvalidParameterError(f"unknown event kind {kind!r}")


def _swap_remove(positions: List[np.ndarray], i: int) -> None:
    last = len(positions) - 1
    if i != last:
        positions[i] = positions[last]
    positions.pop()


def replay(traj: Trajectory, sample_times) -> List[Configuration]:
    """Configurations at the requested times (state after all events <= t)."""
    geom = traj.initial.geom
    times = np.asarray(sample_times, dtype=float)
    positions = [row.copy() for row in traj.initial.points]
    out = []
    k = 0
    for t in times:
        while k < len(traj.events) and traj.events[k][0] <= t:
            _apply_event(geom, positions, traj.events[k])
            k += 1
        pts = np.array(positions) if positions else np.zeros((0, geom.d))
        out.append(Configuration(geom, pts))
    return out


# ---------------------------------------------------------------------------
# observables over trajectories

class CountIn:
    """Number of points in a box window."""

    def __init__(self, lo, hi):
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=float))

    def value(self, config: Configuration):
        pts = config.points
        if pts.shape[0] == 0:
            return 0.0
        inside = np.all((pts >= self.lo) & (pts < self.hi), axis=1)
        return float(np.sum(inside))


class PairCorrelation:
    """Binned pair-intensity estimator.

    Counts ordered pairs with torus distance in each bin and divides by
    L^d times the shell volume, so a Poisson sample of intensity z gives a
    flat profile at z^2.
    """

    def __init__(self, bin_edges):
        self.edges = np.asarray(bin_edges, dtype=float)
        if self.edges.ndim != 1 or self.edges.size < 2 or np.any(np.diff(self.edges) <= 0):
            raise InvalidParameterError("bin edges must be strictly increasing")

    def shell_volumes(self, d: int) -> np.ndarray:
        r = self.edges
        if d == 1:
            return 2.0 * np.diff(r)
        if d == 2:
            return np.pi * np.diff(r**2)
        if d == 3:
            return 4.0 * np.pi / 3.0 * np.diff(r**3)
        raise InvalidParameterError("pair correlation supports d <= 3")

    def value(self, config: Configuration) -> np.ndarray:
        geom = config.geom
        pts = config.points
        n = pts.shape[0]
        shells = self.shell_volumes(geom.d) * geom.volume
        if n < 2:
            return np.zeros(self.edges.size - 1)
        _, dist = pairwise_separations(geom, pts)
        iu = np.triu_indices(n, k=1)
        counts, _ = np.histogram(dist[iu], bins=self.edges)
        return 2.0 * counts / shells  # ordered pairs


class ObservableValue:
    """Adapter: any cylinder/exponential observable as a trajectory observable."""

    def __init__(self, F):
        self.F = F

    def value(self, config: Configuration) -> float:
        return self.F.value(config)


def observe(traj, observable, sample_times) -> np.ndarray:
    """Time series of an observable along a trajectory.

    Accepts an event Trajectory (replayed) or a DiffusionPath (frames at or
    before each sample time).
    """
    times = np.asarray(sample_times, dtype=float)
    if isinstance(traj, Trajectory):
        configs = replay(traj, times)
    elif isinstance(traj, DiffusionPath):
        idx = np.searchsorted(traj.times, times, side="right") - 1
        if np.any(idx < 0):
            raise InvalidParameterError("sample time precedes the first stored frame")
        configs = [Configuration(traj.geom, traj.frames[k]) for k in idx]
    else:
        raise InvalidParameterError(f"cannot observe object of type {type(traj).__name__}")
    values = [observable.value(c) for c in configs]
    return np.asarray(values)


# ---------------------------------------------------------------------------
# neighbor bookkeeping

class _CellList:
    """Particles hashed into torus cells of side >= cutoff."""

    def __init__(self, geom: TorusGeometry, cutoff: float):
        self.geom = geom
        self.n_cells = max(1, int(geom.L / cutoff))
        self.cell_len = geom.L / self.n_cells
        self.cells: dict = {}
        self.cell_of: dict = {}

    def cell_index(self, x) -> tuple:
        idx = np.floor(np.asarray(x) / self.cell_len).astype(int) % self.n_cells
        return tuple(int(v) for v in idx)

    def insert(self, pid: int, x) -> None:
        c = self.cell_index(x)
        self.cells.setdefault(c, []).append(pid)
        self.cell_of[pid] = c

    def remove(self, pid: int) -> None:
        c = self.cell_of.pop(pid)
        self.cells[c].remove(pid)
        if not self.cells[c]:
            del self.cells[c]

    def move(self, pid: int, x) -> None:
        c = self.cell_index(x)
        old = self.cell_of[pid]
        if c != old:
            self.cells[old].remove(pid)
            if not self.cells[old]:
                del self.cells[old]
            self.cells.setdefault(c, []).append(pid)
            self.cell_of[pid] = c

    def rename(self, old: int, new: int) -> None:
        c = self.cell_of.pop(old)
        lst = self.cells[c]
        lst[lst.index(old)] = new
        self.cell_of[new] = c

    def neighbors(self, x) -> List[int]:
        center = self.cell_index(x)
        seen_cells = set()
        out: List[int] = []
        for offset in np.ndindex(*(3,) * self.geom.d):
            c = tuple((center[k] + offset[k] - 1) % self.n_cells for k in range(self.geom.d))
            if c in seen_cells:
                continue
            seen_cells.add(c)
            out.extend(self.cells.get(c, ()))
        return out


class _PairSet:
    """Indexed set of unordered index pairs with O(1) add/remove/sample."""

    def __init__(self):
        self._list: List[Tuple[int, int]] = []
        self._pos: dict = {}
        self._adj: dict = {}

    def __len__(self) -> int:
        return len(self._list)

    @staticmethod
    def _key(i: int, j: int) -> Tuple[int, int]:
        return (i, j) if i < j else (j, i)

    def add(self, i: int, j: int) -> None:
        key = self._key(i, j)
        if key in self._pos:
            return
        self._pos[key] = len(self._list)
        self._list.append(key)
        self._adj.setdefault(key[0], {})[key[1]] = None
        self._adj.setdefault(key[1], {})[key[0]] = None

    def _remove_key(self, key) -> None:
        idx = self._pos.pop(key)
        last = self._list.pop()
        if idx < len(self._list):
            self._list[idx] = last
            self._pos[last] = idx
        self._adj[key[0]].pop(key[1], None)
        self._adj[key[1]].pop(key[0], None)

    def remove_all(self, pid: int) -> None:
        for partner in list(self._adj.get(pid, ())):
            self._remove_key(self._key(pid, partner))

    def rename(self, old: int, new: int) -> None:
        for partner in list(self._adj.get(old, ())):
            self._remove_key(self._key(old, partner))
            self.add(new, partner)
        self._adj.pop(old, None)

    def sample(self, rng: np.random.Generator) -> Tuple[int, int]:
        return self._list[int(rng.integers(len(self._list)))]


class _ParticleSystem:
    """Mutable particle state with cell list and candidate pair set."""

    def __init__(self, config: Configuration, cutoff: float):
        self.geom = config.geom
        self.cutoff = cutoff
        self.positions: List[np.ndarray] = [row.copy() for row in config.points]
        self.cells = _CellList(self.geom, cutoff)
        self.pairs = _PairSet()
        for pid, x in enumerate(self.positions):
            self.cells.insert(pid, x)
        for pid in range(len(self.positions)):
            self._scan(pid, below_only=True)

    def __len__(self) -> int:
        return len(self.positions)

    def _scan(self, pid: int, below_only: bool = False) -> None:
        x = self.positions[pid]
        for qid in self.cells.neighbors(x):
            if qid == pid or (below_only and qid > pid):
                continue
            delta = self.geom.min_image(self.positions[qid] - x)
            if float(np.sqrt(np.sum(delta * delta))) <= self.cutoff:
                self.pairs.add(pid, qid)

    def move(self, pid: int, new_x) -> None:
        self.positions[pid] = new_x
        self.cells.move(pid, new_x)
        self.pairs.remove_all(pid)
        self._scan(pid)

    def add(self, x) -> int:
        pid = len(self.positions)
        self.positions.append(np.asarray(x, dtype=float))
        self.cells.insert(pid, x)
        self._scan(pid)
        return pid

    def remove(self, pid: int) -> None:
        self.pairs.remove_all(pid)
        self.cells.remove(pid)
        last = len(self.positions) - 1
        if pid != last:
            self.positions[pid] = self.positions[last]
            self.cells.rename(last, pid)
            self.pairs.rename(last, pid)
        self.positions.pop()

    def separation(self, i: int, j: int) -> np.ndarray:
        return self.geom.min_image(self.positions[j] - self.positions[i])


# ---------------------------------------------------------------------------
# simulators

def simulate_jumps(config0: Configuration, spec: KernelSpec, T: float,
                   rng: np.random.Generator, _thinning_power: float = 1.0) -> Trajectory:
    """Exact pair-jump dynamics by Gillespie with thinning.

    Candidate pairs live within the separation cutoff r_b + 2 r_a and fire
    at the uniform bound rate; on firing, jump sizes are drawn from the
    normalized a-profile and the move is accepted with the ratio of the
    true rate density to the bound.  Particle count is conserved.

    `_thinning_power` exponentiates the acceptance probability; any value
    other than 1 deliberately biases the law.  It exists so the invariance
    harness can demonstrate that its own test has power.
    """
    spec.require_unbiased("the jump simulator")
    geom = config0.geom
    require_interaction_range(geom, spec.cutoff)
    sys = _ParticleSystem(config0, spec.cutoff)
    bound = spec.pair_rate_bound
    events: List[Tuple] = []
    t = 0.0
    while len(sys.pairs) > 0:
        total = bound * len(sys.pairs)
        t += rng.exponential(1.0 / total)
        if t > T:
            break
        i, j = sys.pairs.sample(rng)
        xbar = sys.separation(i, j)
        if spec.variant == FACTORIZED:
            h1 = spec.a.sample(geom.d, rng)
            h2 = spec.a.sample(geom.d, rng)
            accept = (
                float(spec.b_eval(geom.min_image(xbar)))
                + float(spec.b_eval(geom.min_image(xbar + h2 - h1)))
            ) / (2.0 * spec.sup_b)
        else:
            h1 = spec.a.sample(geom.d, rng)
            h2 = -h1
            accept = float(spec.b_eval(geom.min_image(xbar - h1))) / spec.sup_b
        if accept > 1.0 + 1e-12:
            raise ContjumpError(f"thinning bound violated: acceptance {accept}")
        if rng.random() < accept**_thinning_power:
            sys.move(i, geom.wrap(sys.positions[i] + h1))
            sys.move(j, geom.wrap(sys.positions[j] + h2))
            events.append((t, "jump", (int(i), int(j)) + tuple(h1) + tuple(h2)))
    return Trajectory(config0, events, T)


def simulate_bd(config0: Configuration, spec: KernelSpec, z: float, T: float,
                rng: np.random.Generator, _thinning_power: float = 1.0) -> Trajectory:
    """The limiting birth-and-death process of the spread-jump scaling.

    Four exact channels on the torus:
      pair death    rate <a>^2 b(separation) per pair (thinned per pair),
      single death  rate <a>^2 z <b> per particle,
      single birth  intensity <a>^2 z^2 <b> uniform on the torus,
      pair birth    intensity (<a>^2/2) z^2 <b> L^d; the first point is
                    uniform and the partner offset has density b/<b>.

    `_thinning_power` exponentiates the pair-death acceptance probability;
    any value other than 1 unbalances deaths against births and visibly
    distorts the stationary pair correlation.  It exists so the invariance
    harness can demonstrate that its own test has power.
    """
    spec.require_unbiased("the birth-and-death simulator")
    if spec.variant != FACTORIZED:
        raise InvalidParameterError("the four-channel limit belongs to the factorized family")
    geom = config0.geom
    require_interaction_range(geom, spec.cutoff)
    if not (z > 0):
        raise InvalidParameterError("intensity z must be > 0")
    sys = _ParticleSystem(config0, spec.r_b)
    a2 = spec.mean_a**2
    pd_bound = a2 * spec.sup_b
    sd_per = a2 * z * spec.mean_b
    sb_rate = a2 * z**2 * spec.mean_b * geom.volume
    pb_rate = 0.5 * a2 * z**2 * spec.mean_b * geom.volume
    events: List[Tuple] = []
    t = 0.0
    while True:
        n = len(sys)
        total = pd_bound * len(sys.pairs) + sd_per * n + sb_rate + pb_rate
        t += rng.exponential(1.0 / total)
        if t > T:
            break
        u = rng.random() * total
        if u < pd_bound * len(sys.pairs):
            i, j = sys.pairs.sample(rng)
            xbar = sys.separation(i, j)
            if rng.random() < (float(spec.b_eval(xbar)) / spec.sup_b) ** _thinning_power:
                i, j = min(i, j), max(i, j)
                sys.remove(j)
                sys.remove(i)
                events.append((t, "pair_death", (int(i), int(j))))
        elif u < pd_bound * len(sys.pairs) + sd_per * n:
            i = int(rng.integers(n))
            sys.remove(i)
            events.append((t, "death", (i,)))
        elif u < pd_bound * len(sys.pairs) + sd_per * n + sb_rate:
            x = rng.random(geom.d) * geom.L
            sys.add(x)
            events.append((t, "birth", tuple(x)))
        else:
            x1 = rng.random(geom.d) * geom.L
            x2 = geom.wrap(x1 + spec.b.sample(geom.d, rng))
            sys.add(x1)
            sys.add(x2)
            events.append((t, "pair_birth", tuple(x1) + tuple(x2)))
    return Trajectory(config0, events, T)


def simulate_free_bd(config0: Configuration, spec: KernelSpec, z: float, T: float,
                     rng: np.random.Generator) -> Trajectory:
    """Free immigration-death limit of the momentum-conserving scaling:
    per-particle death rate <a><b>, uniform birth intensity <a><b> z dx.

    The particle count is an M/M/infinity chain with stationary law
    Poisson(z L^d) and autocovariance z L^d exp(-<a><b> t).
    """
    spec.require_unbiased("the free birth-and-death simulator")
    geom = config0.geom
    if z < 0:
        raise InvalidParameterError("intensity z must be >= 0")
    rate = spec.mean_a * spec.mean_b
    birth_rate = rate * z * geom.volume
    positions = [row.copy() for row in config0.points]
    events: List[Tuple] = []
    t = 0.0
    while True:
        total = birth_rate + rate * len(positions)
        if total <= 0.0:
            break
        t += rng.exponential(1.0 / total)
        if t > T:
            break
        if rng.random() * total < birth_rate:
            x = rng.random(geom.d) * geom.L
            positions.append(x)
            events.append((t, "birth", tuple(x)))
        else:
            i = int(rng.integers(len(positions)))
            _swap_remove(positions, i)
            events.append((t, "death", (i,)))
    return Trajectory(config0, events, T)


def diffusion_step_bound(spec: KernelSpec) -> float:
    """Stability heuristic for the Euler-Maruyama step."""
    return 1e-3 * spec.r_b**2 / (spec.c * spec.sup_b)


def simulate_diffusion(config0: Configuration, spec: KernelSpec, T: float, dt: float,
                       rng: np.random.Generator, store_every: int = 1) -> DiffusionPath:
    """Euler-Maruyama integration of the diffusive limit:

        dX_i = c sum_{j != i} grad b(X_i - X_j) dt
               + sqrt(2 c sum_{j != i} b(X_i - X_j)) dW_i,

    torus-wrapped.  Weak order-1 verification aid, not a pathwise coupling.
    """
    spec.require_unbiased("the diffusion integrator")
    if spec.variant != FACTORIZED:
        raise InvalidParameterError("the additive-noise diffusion belongs to the factorized family")
    if not spec.b.smooth:
        raise NotDifferentiableError("diffusion drift needs the smooth-bump b profile")
    geom = config0.geom
    require_interaction_range(geom, spec.cutoff)
    if dt > diffusion_step_bound(spec):
        warnings.warn(
            f"dt={dt} exceeds the stability heuristic {diffusion_step_bound(spec):.3e}",
            stacklevel=2,
        )
    x = config0.points.copy()
    n = x.shape[0]
    steps = int(round(T / dt))
    frames = [x.copy()]
    times = [0.0]
    sqdt = np.sqrt(dt)
    for k in range(steps):
        if n >= 2:
            delta, _ = pairwise_separations(geom, x)  # delta[i, j] = x_j - x_i
            bmat = spec.b.value_vec(delta)
            np.fill_diagonal(bmat, 0.0)
            bsum = bmat.sum(axis=1)
            grad = spec.b.gradient_vec(-delta).sum(axis=1)  # grad b at x_i - x_j
        else:
            bsum = np.zeros(n)
            grad = np.zeros((n, geom.d))
        drift = spec.c * grad
        sigma = np.sqrt(2.0 * spec.c * bsum)
        x = geom.wrap(x + drift * dt + sigma[:, None] * sqdt * rng.standard_normal((n, geom.d)))
        if (k + 1) % store_every == 0 or k + 1 == steps:
            frames.append(x.copy())
            times.append((k + 1) * dt)
    return DiffusionPath(geom, np.asarray(times), np.asarray(frames))
