"""Run configuration: a TOML file with nested sections, validated against
a closed schema (unknown keys are rejected, errors carry the key path).

Every field has a default, so the empty file is a valid configuration;
the documented seed precedence is CLI flag > CONTJUMP_SEED environment
variable > config file > built-in default.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import tomli

from .errors import ConfigError, GeometryError
from .geometry import TorusGeometry, require_interaction_range
from .kernels import (
    FACTORIZED,
    MOMENTUM,
    SMOOTH_BUMP,
    UNIFORM_BALL,
    KernelSpec,
    RadialProfile,
)
from .observables import TestProfile

DEFAULT_SEED = 20240817
ENV_SEED = "CONTJUMP_SEED"

_VARIANTS = {
    "factorized": FACTORIZED,
    "momentum": MOMENTUM,
    "momentum-conserving": MOMENTUM,
}
_SHAPES = {"uniform-ball": UNIFORM_BALL, "smooth-bump": SMOOTH_BUMP}


def _err(path: str, message: str) -> ConfigError:
    return ConfigError(f"{path}: {message}")


def _as_number(value, path: str, positive=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise _err(path, f"expected a number, got {value!r}")
    v = float(value)
    if positive and not v > 0:
        raise _err(path, f"must be > 0, got {v}")
    return v


def _as_int(value, path: str, minimum=None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise _err(path, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise _err(path, f"must be >= {minimum}, got {value}")
    return value


def _as_bool(value, path: str) -> bool:
    if not isinstance(value, bool):
        raise _err(path, f"expected true/false, got {value!r}")
    return value


def _as_choice(value, path: str, table: Dict[str, str]) -> str:
    if not isinstance(value, str) or value not in table:
        raise _err(path, f"expected one of {sorted(table)}, got {value!r}")
    return table[value]


def _as_vector(value, path: str, d: int) -> List[float]:
    if not isinstance(value, list) or len(value) != d:
        raise _err(path, f"expected a list of {d} numbers, got {value!r}")
    return [_as_number(v, f"{path}[{k}]") for k, v in enumerate(value)]


def _as_number_list(value, path: str, positive=False, decreasing=False) -> List[float]:
    if not isinstance(value, list) or not value:
        raise _err(path, f"expected a non-empty list of numbers, got {value!r}")
    out = [_as_number(v, f"{path}[{k}]", positive=positive) for k, v in enumerate(value)]
    if decreasing and any(b >= a for a, b in zip(out, out[1:])):
        raise _err(path, "values must be strictly decreasing")
    return out


def _take(section: Dict[str, Any], key: str, default):
    return section.pop(key) if key in section else default


def _reject_unknown(section: Dict[str, Any], path: str) -> None:
    if section:
        key = sorted(section)[0]
        raise _err(f"{path}.{key}" if path else key, "unknown key")


@dataclass
class ExperimentParams:
    """Validated per-subcommand knobs (all defaulted)."""

    simulate_horizon: float = 2.5
    simulate_samples: int = 17
    identities_samples: int = 20000
    identities_mecke_nodes: int = 200
    reversibility_samples: int = 400
    reversibility_pairs: int = 2
    diffusive_eps: List[float] = field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05])
    diffusive_samples: int = 250
    bd_eps: List[float] = field(default_factory=lambda: [1.0, 0.5, 0.25, 0.125])
    bd_samples: int = 120
    invariance_sim: str = "both"
    invariance_replicas: int = 400
    invariance_horizon: float = 0.0  # 0 -> 5 / pair-rate bound
    invariance_bins: int = 10
    gap_horizon: float = 80.0
    gap_replicas: int = 32
    gap_dt: float = 0.125
    gap_free: bool = True
    fock_L: float = 4.0
    fock_M: int = 4
    fock_n_max: int = 3
    fock_a_radius: float = 1.2
    fock_a_height: float = 0.5
    fock_b_radius: float = 1.6
    fock_b_height: float = 1.0


@dataclass
class RunConfig:
    geom: TorusGeometry
    spec: KernelSpec
    z: float
    seed: int
    threads: int
    profile: TestProfile
    window_lo: List[float]
    window_hi: List[float]
    experiments: ExperimentParams
    raw: Dict[str, Any] = field(default_factory=dict)

    def fock_spec(self) -> "tuple[TorusGeometry, KernelSpec]":
        """Geometry and kernel of the discretized second-quantization model
        (its small torus may wrap inside the interaction range; the lattice
        identities hold regardless)."""
        ex = self.experiments
        geom = TorusGeometry(self.geom.d, ex.fock_L)
        spec = KernelSpec(
            FACTORIZED,
            RadialProfile(UNIFORM_BALL, ex.fock_a_radius, ex.fock_a_height),
            RadialProfile(SMOOTH_BUMP, ex.fock_b_radius, ex.fock_b_height),
            d=self.geom.d,
        )
        return geom, spec


def default_config_dict() -> Dict[str, Any]:
    return {}


def parse_config_data(data: Dict[str, Any], seed_override: Optional[int] = None,
                      threads_override: Optional[int] = None) -> RunConfig:
    data = dict(data)

    g = dict(data.pop("geometry", {}))
    d = _as_int(_take(g, "d", 1), "geometry.d", minimum=1)
    L = _as_number(_take(g, "L", 20.0), "geometry.L", positive=True)
    _reject_unknown(g, "geometry")
    geom = TorusGeometry(d, L)

    k = dict(data.pop("kernel", {}))
    variant = _as_choice(_take(k, "variant", "factorized"), "kernel.variant", _VARIANTS)
    bias = _as_number(_take(k, "odd_b_bias", 0.0), "kernel.odd_b_bias")
    if not -1.0 < bias < 1.0:
        raise _err("kernel.odd_b_bias", f"must lie in (-1, 1), got {bias}")
    ka = dict(k.pop("a", {}))
    a_shape = _as_choice(_take(ka, "shape", "uniform-ball"), "kernel.a.shape", _SHAPES)
    a_radius = _as_number(_take(ka, "radius", 1.0), "kernel.a.radius", positive=True)
    a_height = _as_number(_take(ka, "height", 0.5), "kernel.a.height", positive=True)
    _reject_unknown(ka, "kernel.a")
    kb = dict(k.pop("b", {}))
    b_shape = _as_choice(_take(kb, "shape", "smooth-bump"), "kernel.b.shape", _SHAPES)
    b_radius = _as_number(_take(kb, "radius", 1.0), "kernel.b.radius", positive=True)
    b_height = _as_number(_take(kb, "height", 1.0), "kernel.b.height", positive=True)
    _reject_unknown(kb, "kernel.b")
    _reject_unknown(k, "kernel")
    spec = KernelSpec(
        variant,
        RadialProfile(a_shape, a_radius, a_height),
        RadialProfile(b_shape, b_radius, b_height),
        d=d,
        odd_b_bias=bias,
    )
    try:
        require_interaction_range(geom, spec.cutoff)
    except GeometryError as exc:
        raise _err("geometry.L", str(exc)) from exc

    r = dict(data.pop("run", {}))
    z = _as_number(_take(r, "z", 1.0), "run.z")
    if not z > 0:
        raise _err("run.z", f"intensity must be > 0, got {z}")
    cfg_seed = _as_int(_take(r, "seed", DEFAULT_SEED), "run.seed", minimum=0)
    cfg_threads = _as_int(_take(r, "threads", 1), "run.threads", minimum=1)
    _reject_unknown(r, "run")

    o = dict(data.pop("observables", {}))
    center = _as_vector(_take(o, "profile_center", [L / 2.0] * d), "observables.profile_center", d)
    radius = _as_number(_take(o, "profile_radius", min(2.0, L / 6.0)),
                        "observables.profile_radius", positive=True)
    amplitude = _as_number(_take(o, "profile_amplitude", 0.6), "observables.profile_amplitude")
    _reject_unknown(o, "observables")
    profile = TestProfile(tuple(center), radius, amplitude)

    w = dict(data.pop("window", {}))
    lo = _as_vector(_take(w, "lo", [L / 4.0] * d), "window.lo", d)
    hi = _as_vector(_take(w, "hi", [L / 4.0 + 2.0] * d), "window.hi", d)
    _reject_unknown(w, "window")
    if any(b <= a for a, b in zip(lo, hi)):
        raise _err("window.hi", "window must satisfy lo < hi coordinate-wise")

    ex = ExperimentParams()
    e = dict(data.pop("experiments", {}))
    sim = dict(e.pop("simulate", {}))
    ex.simulate_horizon = _as_number(_take(sim, "horizon", ex.simulate_horizon),
                                     "experiments.simulate.horizon", positive=True)
    ex.simulate_samples = _as_int(_take(sim, "sample_times", ex.simulate_samples),
                                  "experiments.simulate.sample_times", minimum=2)
    _reject_unknown(sim, "experiments.simulate")
    idn = dict(e.pop("identities", {}))
    ex.identities_samples = _as_int(_take(idn, "n_samples", ex.identities_samples),
                                    "experiments.identities.n_samples", minimum=100)
    ex.identities_mecke_nodes = _as_int(_take(idn, "mecke_nodes", ex.identities_mecke_nodes),
                                        "experiments.identities.mecke_nodes", minimum=8)
    _reject_unknown(idn, "experiments.identities")
    rev = dict(e.pop("reversibility", {}))
    ex.reversibility_samples = _as_int(_take(rev, "n_samples", ex.reversibility_samples),
                                       "experiments.reversibility.n_samples", minimum=100)
    ex.reversibility_pairs = _as_int(_take(rev, "n_pairs", ex.reversibility_pairs),
                                     "experiments.reversibility.n_pairs", minimum=1)
    _reject_unknown(rev, "experiments.reversibility")
    dif = dict(e.pop("diffusive", {}))
    ex.diffusive_eps = _as_number_list(_take(dif, "eps", ex.diffusive_eps),
                                       "experiments.diffusive.eps", positive=True, decreasing=True)
    ex.diffusive_samples = _as_int(_take(dif, "n_samples", ex.diffusive_samples),
                                   "experiments.diffusive.n_samples", minimum=10)
    _reject_unknown(dif, "experiments.diffusive")
    bde = dict(e.pop("bd_scaling", {}))
    ex.bd_eps = _as_number_list(_take(bde, "eps", ex.bd_eps),
                                "experiments.bd_scaling.eps", positive=True, decreasing=True)
    ex.bd_samples = _as_int(_take(bde, "n_samples", ex.bd_samples),
                            "experiments.bd_scaling.n_samples", minimum=10)
    _reject_unknown(bde, "experiments.bd_scaling")
    inv = dict(e.pop("invariance", {}))
    ex.invariance_sim = _as_choice(_take(inv, "sim", ex.invariance_sim),
                                   "experiments.invariance.sim",
                                   {"jumps": "jumps", "bd": "bd", "both": "both"})
    ex.invariance_replicas = _as_int(_take(inv, "n_replicas", ex.invariance_replicas),
                                     "experiments.invariance.n_replicas", minimum=8)
    ex.invariance_horizon = _as_number(_take(inv, "horizon", ex.invariance_horizon),
                                       "experiments.invariance.horizon")
    ex.invariance_bins = _as_int(_take(inv, "n_bins", ex.invariance_bins),
                                 "experiments.invariance.n_bins", minimum=2)
    _reject_unknown(inv, "experiments.invariance")
    gap = dict(e.pop("spectral_gap", {}))
    ex.gap_horizon = _as_number(_take(gap, "horizon", ex.gap_horizon),
                                "experiments.spectral_gap.horizon", positive=True)
    ex.gap_replicas = _as_int(_take(gap, "n_replicas", ex.gap_replicas),
                              "experiments.spectral_gap.n_replicas", minimum=4)
    ex.gap_dt = _as_number(_take(gap, "dt", ex.gap_dt),
                           "experiments.spectral_gap.dt", positive=True)
    ex.gap_free = _as_bool(_take(gap, "free", ex.gap_free), "experiments.spectral_gap.free")
    _reject_unknown(gap, "experiments.spectral_gap")
    fk = dict(e.pop("fock", {}))
    ex.fock_L = _as_number(_take(fk, "L", ex.fock_L), "experiments.fock.L", positive=True)
    ex.fock_M = _as_int(_take(fk, "M", ex.fock_M), "experiments.fock.M", minimum=2)
    ex.fock_n_max = _as_int(_take(fk, "n_max", ex.fock_n_max),
                            "experiments.fock.n_max", minimum=1)
    ex.fock_a_radius = _as_number(_take(fk, "a_radius", ex.fock_a_radius),
                                  "experiments.fock.a_radius", positive=True)
    ex.fock_a_height = _as_number(_take(fk, "a_height", ex.fock_a_height),
                                  "experiments.fock.a_height", positive=True)
    ex.fock_b_radius = _as_number(_take(fk, "b_radius", ex.fock_b_radius),
                                  "experiments.fock.b_radius", positive=True)
    ex.fock_b_height = _as_number(_take(fk, "b_height", ex.fock_b_height),
                                  "experiments.fock.b_height", positive=True)
    _reject_unknown(fk, "experiments.fock")
    _reject_unknown(e, "experiments")
    _reject_unknown(data, "")

    env_seed = os.environ.get(ENV_SEED)
    if seed_override is not None:
        seed = int(seed_override)
    elif env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"{ENV_SEED}: expected an integer, got {env_seed!r}") from exc
    else:
        seed = cfg_seed
    threads = threads_override if threads_override is not None else cfg_threads

    return RunConfig(
        geom=geom, spec=spec, z=z, seed=seed, threads=threads,
        profile=profile, window_lo=lo, window_hi=hi, experiments=ex,
    )


def parse_config(path: Optional[str], seed_override: Optional[int] = None,
                 threads_override: Optional[int] = None) -> RunConfig:
    """Load and validate a run configuration (None = built-in defaults)."""
    if path is None:
        data: Dict[str, Any] = {}
        raw = b""
    else:
        try:
            with open(path, "rb") as fh:
                raw = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        try:
            data = tomli.loads(raw.decode("utf-8"))
        except (tomli.TOMLDecodeError, UnicodeDecodeError) as exc:
            raise ConfigError(f"{path}: not valid TOML: {exc}") from exc
    cfg = parse_config_data(data, seed_override, threads_override)
    cfg.raw = {"path": path, "bytes": raw.decode("utf-8", "replace")}
    return cfg
