"""Command-line surface.

Every subcommand reads one TOML run configuration, derives all randomness
from a single seed (flag > CONTJUMP_SEED > config > default), writes CSV
artifacts plus a run manifest into the output directory, and prints one
PASS/FAIL line per verdict.  Exit codes: 0 all checks passed (or nothing
to check), 1 at least one FAIL, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from typing import List, Optional

import numpy as np

from . import __version__
from .config import RunConfig, parse_config
from .errors import ContjumpError, ConfigError
from .fock import (
    GridSpace,
    adjointness_defect,
    assemble_blocks,
    form_equality_check,
    second_quantization_gap,
    verify_norm_growth,
)
from .generators import (
    IndicatorFunctional,
    ProfileExpFunctional,
    WindowCountFunctional,
    apply_L,
    apply_L0_bd,
    apply_L0_diffusive,
    apply_L_eps_bd,
    apply_L_eps_diffusive,
    bd_piece_values,
    mecke_check,
    pair_moment_check,
)
from .harness import (
    ProfileSumObservable,
    ReportTable,
    bd_convergence,
    diffusive_convergence,
    invariance_report,
    random_cylinder,
    reversibility_report,
    spectral_gap_report,
)
from .kernels import FACTORIZED, check_symmetry
from .observables import ExponentialFunction
from .simulate import observe, simulate_bd, simulate_jumps
from .geometry import sample_poisson

SUBCOMMANDS = (
    "sample-poisson",
    "simulate-jumps",
    "simulate-bd",
    "eval-generator",
    "check-identities",
    "scaling-diffusive",
    "scaling-bd",
    "spectral-gap",
    "fock-bounds",
    "invariance",
)


def _fmt_cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: str, columns, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt_cell(v) for v in row) + "\n")


def _slug(name: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in name).strip("_").lower()


def _emit(outdir: str, reports: List[ReportTable]) -> List[str]:
    artifacts = []
    lines = []
    for rep in reports:
        fname = f"{_slug(rep.name)}.csv"
        write_csv(os.path.join(outdir, fname), rep.columns, rep.rows)
        artifacts.append(fname)
        lines.extend(rep.summary_lines())
    with open(os.path.join(outdir, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))
    for line in lines:
        print(line)
    return artifacts + ["summary.txt"]


def _write_manifest(outdir: str, command: str, cfg: RunConfig, artifacts: List[str]) -> None:
    manifest = {
        "command": command,
        "seed": cfg.seed,
        "threads": cfg.threads,
        "config_path": cfg.raw.get("path"),
        "config_sha256": hashlib.sha256(cfg.raw.get("bytes", "").encode()).hexdigest(),
        "config_text": cfg.raw.get("bytes", ""),
        "versions": {
            "contjump": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
        "artifacts": sorted(artifacts),
    }
    with open(os.path.join(outdir, "run_manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommand handlers (each returns the report tables it produced)

def _cmd_sample_poisson(cfg: RunConfig, rng) -> List[ReportTable]:
    config = sample_poisson(cfg.geom, cfg.z, rng)
    cols = [f"x{k}" for k in range(cfg.geom.d)]
    return [ReportTable("points", cols, [tuple(row) for row in config.points], None,
                        [f"n = {len(config)}"])]


def _simulate_common(cfg: RunConfig, rng, kind: str):
    start = sample_poisson(cfg.geom, cfg.z, rng)
    T = cfg.experiments.simulate_horizon
    if kind == "jumps":
        traj = simulate_jumps(start, cfg.spec, T, rng)
    else:
        traj = simulate_bd(start, cfg.spec, cfg.z, T, rng)
    times = np.linspace(0.0, T, cfg.experiments.simulate_samples)
    counts = observe(traj, _CountAll(), times)
    sums = observe(traj, ProfileSumObservable(cfg.profile), times)
    rows = list(zip(times, counts, sums))
    table = ReportTable(f"observables_{kind}", ["time", "count", "profile_sum"], rows, None,
                        [f"events = {len(traj.events)}"])
    return [table], traj


class _CountAll:
    def value(self, config):
        return float(len(config))


def _cmd_simulate_jumps(cfg, rng, outdir) -> List[ReportTable]:
    tables, traj = _simulate_common(cfg, rng, "jumps")
    traj.save(os.path.join(outdir, "trajectory.txt"))
    return tables


def _cmd_simulate_bd(cfg, rng, outdir) -> List[ReportTable]:
    tables, traj = _simulate_common(cfg, rng, "bd")
    traj.save(os.path.join(outdir, "trajectory.txt"))
    return tables


def _cmd_eval_generator(cfg: RunConfig, rng) -> List[ReportTable]:
    config = sample_poisson(cfg.geom, cfg.z, rng)
    F = random_cylinder(rng, cfg.geom)
    E = ExponentialFunction(cfg.profile)
    eps_d = cfg.experiments.diffusive_eps[0]
    eps_b = cfg.experiments.bd_eps[-1]
    rows = [
        ("n_points", float(len(config))),
        ("jump_generator[cylinder]", apply_L(F, config, cfg.spec)),
        ("jump_generator[exponential]", apply_L(E, config, cfg.spec)),
        (f"diffusive_eps={eps_d}", apply_L_eps_diffusive(F, config, cfg.spec, eps_d)),
        ("diffusive_limit", apply_L0_diffusive(F, config, cfg.spec)),
    ]
    if cfg.spec.variant == FACTORIZED:
        rows.append((f"bd_eps={eps_b}", apply_L_eps_bd(E, config, cfg.spec, eps_b)))
        pieces = bd_piece_values(E, config, cfg.spec, eps_b)
        rows.extend((f"bd_eps_piece_{k + 1}", v) for k, v in enumerate(pieces))
        rows.append(("bd_limit", apply_L0_bd(E, config, cfg.spec, cfg.z)))
    return [ReportTable("generator_values", ["operator", "value"], rows, None)]


def _cmd_check_identities(cfg: RunConfig, rng) -> List[ReportTable]:
    ex = cfg.experiments
    geom, spec, z = cfg.geom, cfg.spec, cfg.z
    rows = []
    ok_all = True

    sym = check_symmetry(spec, 10_000, rng)
    sym_tol = 1e-12 * max(1.0, spec.sup_b * spec.a.sup**2)
    sym_ok = sym <= sym_tol
    ok_all &= sym_ok
    rows.append(("kernel_symmetry", sym, 0.0, sym_tol, "pass" if sym_ok else "fail"))

    functionals = [
        ("mecke_indicator", IndicatorFunctional(cfg.window_lo, cfg.window_hi)),
        ("mecke_window_count", WindowCountFunctional(cfg.window_lo, cfg.window_hi)),
        ("mecke_profile_exp", ProfileExpFunctional(cfg.profile)),
    ]
    for name, fn in functionals:
        lhs, rhs = mecke_check(fn, z, geom, ex.identities_samples, rng,
                               nodes_per_dim=ex.identities_mecke_nodes)
        ok = lhs.agrees_with(rhs)
        ok_all &= ok
        rows.append((name, lhs.mean, rhs.mean, 3.0 * lhs.combined_stderr(rhs),
                     "pass" if ok else "fail"))

    mc, exact = pair_moment_check(cfg.window_lo, cfg.window_hi, z, geom,
                                  ex.identities_samples, rng)
    ok = mc.agrees_with_value(exact)
    ok_all &= ok
    rows.append(("pair_moment", mc.mean, exact, 3.0 * mc.stderr, "pass" if ok else "fail"))

    for k in range(ex.reversibility_pairs):
        F = random_cylinder(rng, geom)
        G = random_cylinder(rng, geom)
        rep = reversibility_report(spec, z, F, G, ex.reversibility_samples, rng, geom)
        ok_all &= bool(rep.passed)
        lhs_row, rhs_row, diff_row = rep.rows
        rows.append((f"reversibility_{k}", lhs_row[1], rhs_row[1], 3.0 * diff_row[2],
                     "pass" if rep.passed else "fail"))

    return [ReportTable("identities", ["check", "lhs", "rhs", "tolerance", "status"],
                        rows, bool(ok_all))]


def _cmd_scaling_diffusive(cfg: RunConfig, rng) -> List[ReportTable]:
    ex = cfg.experiments
    out = []
    for k in range(2):
        F = random_cylinder(rng, cfg.geom)
        rep = diffusive_convergence(F, cfg.spec, cfg.z, cfg.geom, ex.diffusive_eps,
                                    ex.diffusive_samples, rng)
        rep.name = f"{rep.name}_F{k}"
        out.append(rep)
    return out


def _cmd_scaling_bd(cfg: RunConfig, rng) -> List[ReportTable]:
    ex = cfg.experiments
    if cfg.spec.variant != FACTORIZED:
        raise ConfigError("scaling-bd requires kernel.variant = 'factorized'")
    return [bd_convergence(cfg.profile, cfg.spec, cfg.z, cfg.geom, ex.bd_eps,
                           ex.bd_samples, rng)]


def _cmd_spectral_gap(cfg: RunConfig, rng) -> List[ReportTable]:
    ex = cfg.experiments
    out = [spectral_gap_report(cfg.spec, cfg.z, ex.gap_horizon, ex.gap_replicas, rng,
                               cfg.geom, observable_profile=cfg.profile,
                               free=False, dt=ex.gap_dt, threads=cfg.threads)]
    if ex.gap_free:
        out.append(spectral_gap_report(cfg.spec, cfg.z, ex.gap_horizon, ex.gap_replicas,
                                       rng, cfg.geom, free=True, dt=ex.gap_dt,
                                       threads=cfg.threads))
    return out


def _cmd_fock_bounds(cfg: RunConfig, rng) -> List[ReportTable]:
    ex = cfg.experiments
    fgeom, fspec = cfg.fock_spec()
    grid = GridSpace(fgeom, ex.fock_M, cfg.z)
    blocks = assemble_blocks(fspec, grid, ex.fock_n_max)
    rows, exponents = verify_norm_growth(blocks)
    details = []
    ok = True

    defect = adjointness_defect(blocks)
    scale = max(abs(r[1]) for r in rows) or 1.0
    adj_ok = defect <= 1e-10 * scale
    details.append(f"adjointness defect {defect:.3e} (tol {1e-10 * scale:.3e}): "
                   f"{'ok' if adj_ok else 'violated'}")
    ok &= adj_ok

    M = blocks.symmetrized_combined()
    asym = float(np.max(np.abs(M - M.T)))
    norm = float(np.linalg.norm(M, 2))
    sym_ok = asym <= 1e-10 * max(norm, 1.0)
    details.append(f"combined operator asymmetry {asym:.3e}: {'ok' if sym_ok else 'violated'}")
    ok &= sym_ok

    eig = np.linalg.eigvalsh(0.5 * (M + M.T))
    psd_ok = float(eig.min()) >= -1e-8 * norm
    details.append(f"min eigenvalue {eig.min():.3e} >= -1e-8*|L| = {-1e-8 * norm:.3e}: "
                   f"{'ok' if psd_ok else 'violated'}")
    ok &= psd_ok

    vac = np.zeros(M.shape[0])
    vac[0] = 1.0
    vac_ok = float(np.max(np.abs(M @ vac))) <= 1e-12 * max(norm, 1.0)
    details.append(f"vacuum annihilated: {'ok' if vac_ok else 'violated'}")
    ok &= vac_ok

    worst_rel = 0.0
    for _ in range(20):
        f = [rng.standard_normal(blocks.bases[n].dim) for n in range(ex.fock_n_max + 1)]
        lhs, rhs, diff = form_equality_check(blocks, f)
        worst_rel = max(worst_rel, diff / max(abs(lhs), abs(rhs), 1e-300))
    form_ok = worst_rel <= 1e-8
    details.append(f"form equality relative defect {worst_rel:.3e} (tol 1e-8): "
                   f"{'ok' if form_ok else 'violated'}")
    ok &= form_ok

    if np.isnan(exponents["jplus"]) or np.isnan(exponents["j0"]):
        details.append("growth exponents not fitted (need n_max >= 3 for two points)")
    else:
        exp_ok = exponents["jplus"] <= 1.5 + 0.15 and exponents["j0"] <= 2.0 + 0.15
        details.append(f"growth exponents jplus {exponents['jplus']:.3f} (<= 1.65), "
                       f"j0 {exponents['j0']:.3f} (<= 2.15): {'ok' if exp_ok else 'violated'}")
        ok &= exp_ok

    gap = second_quantization_gap(grid, ex.fock_n_max)
    gap_ok = gap == 1.0
    details.append(f"number-operator gap {gap} (= 1): {'ok' if gap_ok else 'violated'}")
    ok &= gap_ok

    return [ReportTable("fock_norms", ["n", "norm_jplus", "norm_j0", "norm_jminus"],
                        [(n, jp, j0v, jm) for (n, jp, j0v, jm) in rows],
                        bool(ok), details)]


def _cmd_invariance(cfg: RunConfig, rng) -> List[ReportTable]:
    ex = cfg.experiments
    sims = ["jumps", "bd"] if ex.invariance_sim == "both" else [ex.invariance_sim]
    out = []
    for sim in sims:
        T = ex.invariance_horizon
        if T <= 0:
            T = 5.0 / cfg.spec.pair_rate_bound
        out.append(invariance_report(sim, cfg.spec, cfg.z, T, ex.invariance_replicas,
                                     rng, cfg.geom, n_bins=ex.invariance_bins,
                                     threads=cfg.threads))
    return out


# ---------------------------------------------------------------------------

def main(argv: Optional[List[str]] = None) -> int:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=None,
                        help="TOML run configuration (defaults apply if omitted)")
    common.add_argument("--seed", metavar="U64", type=int, default=None,
                        help="seed override (precedence: flag > CONTJUMP_SEED > config)")
    common.add_argument("--threads", metavar="N", type=int, default=None,
                        help="worker threads for replica loops")
    common.add_argument("--out", metavar="DIR", default=None,
                        help="output directory (default contjump-out/<command>)")
    parser = argparse.ArgumentParser(
        prog="contjump",
        description="simulate equilibrium pair-jump dynamics and verify its identities",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    args = parser.parse_args(argv)

    try:
        cfg = parse_config(args.config, args.seed, args.threads)
    except ConfigError as exc:
        print(f"contjump: configuration error: {exc}", file=sys.stderr)
        return 2

    outdir = args.out or os.path.join("contjump-out", args.command)
    os.makedirs(outdir, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)

    try:
        if args.command == "sample-poisson":
            reports = _cmd_sample_poisson(cfg, rng)
        elif args.command == "simulate-jumps":
            reports = _cmd_simulate_jumps(cfg, rng, outdir)
        elif args.command == "simulate-bd":
            reports = _cmd_simulate_bd(cfg, rng, outdir)
        elif args.command == "eval-generator":
            reports = _cmd_eval_generator(cfg, rng)
        elif args.command == "check-identities":
            reports = _cmd_check_identities(cfg, rng)
        elif args.command == "scaling-diffusive":
            reports = _cmd_scaling_diffusive(cfg, rng)
        elif args.command == "scaling-bd":
            reports = _cmd_scaling_bd(cfg, rng)
        elif args.command == "spectral-gap":
            reports = _cmd_spectral_gap(cfg, rng)
        elif args.command == "fock-bounds":
            reports = _cmd_fock_bounds(cfg, rng)
        else:
            reports = _cmd_invariance(cfg, rng)
    except ConfigError as exc:
        print(f"contjump: configuration error: {exc}", file=sys.stderr)
        return 2
    except ContjumpError as exc:
        print(f"contjump: {exc}", file=sys.stderr)
        return 1

    artifacts = _emit(outdir, reports)
    _write_manifest(outdir, args.command, cfg, artifacts + ["run_manifest.json"])
    return 1 if any(rep.passed is False for rep in reports) else 0


if __name__ == "__main__":
    raise SystemExit(main())
