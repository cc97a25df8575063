"""Command-line interface: validate, moments, simulate, sweep.

Exit codes: 0 success, 1 domain failure (assumption/numerics/cache), 2
usage or configuration failure.  Every output directory receives a JSON
manifest recording all resolved parameters, so runs are reproducible
bit-exactly from the manifest alone.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import LoadedConfig, load_config
from .control_loop import (
    SimConfig,
    build_context,
    empirical_ms_bound,
    run_paths,
    sweep as run_sweep,
)
from .decomp import decompose
from .errors import ConfigurationError, OfspcError
from .kalman import error_stack, steady_state
from .model import require_valid, validate
from .moments import compute_moments, load_moments, save_moments, spec_digest
from .ocp import prior_feasibility_threshold

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2


def _fmt(x: float) -> str:
    """Deterministic shortest-roundtrip float formatting for CSV output."""
    return repr(float(x))


def _manifest(cfg: LoadedConfig, config_path, command: str, extra: dict) -> dict:
    dec = decompose(cfg.spec)
    sim = cfg.sim
    N_r = sim.N_r if sim.N_r is not None else max(dec.kappa, 1)
    man = {
        "artifact_version": __version__,
        "command": command,
        "config_path": str(config_path),
        "N": cfg.spec.N,
        "N_r": N_r,
        "kappa": dec.kappa,
        "d_o": dec.d_o,
        "d_s": dec.d_s,
        "u_max_values": list(cfg.u_max_values),
        "zeta_fraction": sim.zeta_fraction,
        "zeta_max_per_u_max": [dec.zeta_max / cfg.spec.u_max * u
                               for u in cfg.u_max_values],
        "r": sim.r,
        "epsilon": sim.epsilon,
        "psi": sim.psi.kind,
        "psi_max": sim.psi.psi_max,
        "steps": sim.steps,
        "paths": sim.paths,
        "seed": sim.seed,
        "moment_samples": sim.moment_samples,
    }
    man.update(extra)
    return man


def _write_manifest(out_dir: Path, man: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(man, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolved_moments(cfg: LoadedConfig, moments_path):
    """Load a moment cache (digest-checked) or estimate one in-process."""
    spec, sim = cfg.spec, cfg.sim
    gains = steady_state(spec)
    digest = spec_digest(spec, spec.N, sim.psi, gains)
    if moments_path is not None:
        return load_moments(moments_path, expected_digest=digest), digest
    dec = decompose(spec)
    N_r = sim.N_r if sim.N_r is not None else max(dec.kappa, 1)
    stack_err = error_stack(gains, spec, spec.N)
    ms = compute_moments(spec, gains, stack_err, sim.psi, N_r=N_r,
                         samples=sim.moment_samples, seed=sim.seed)
    return ms, digest


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    report = validate(cfg.spec)
    print(report)
    if not report.ok:
        return EXIT_DOMAIN
    dec = decompose(cfg.spec)
    gains = steady_state(cfg.spec)
    stack_err = error_stack(gains, cfg.spec, cfg.spec.N)
    N_r = cfg.sim.N_r if cfg.sim.N_r is not None else max(dec.kappa, 1)
    ms = compute_moments(cfg.spec, gains, stack_err, cfg.sim.psi, N_r=N_r,
                         samples=min(cfg.sim.moment_samples, 20_000),
                         seed=cfg.sim.seed)
    print(f"d_o={dec.d_o} d_s={dec.d_s} kappa={dec.kappa}")
    for u in cfg.u_max_values:
        print(f"u_max={u:g}: zeta_max={dec.zeta_max / cfg.spec.u_max * u:.9g}")
    thr = prior_feasibility_threshold(dec, ms.beta_hat, cfg.sim.epsilon, N_r)
    print(f"prior-work feasibility threshold on u_max: {thr:.6g} "
          f"(beta_hat={ms.beta_hat:.6g})")
    print(f"basis condition number: {np.linalg.cond(dec.T):.6g}")
    return EXIT_OK


def cmd_moments(args) -> int:
    cfg = load_config(args.config)
    spec, sim = cfg.spec, cfg.sim
    require_valid(spec)
    samples = args.samples if args.samples is not None else sim.moment_samples
    seed = args.seed if args.seed is not None else sim.seed
    gains = steady_state(spec)
    dec = decompose(spec)
    N_r = sim.N_r if sim.N_r is not None else max(dec.kappa, 1)
    stack_err = error_stack(gains, spec, spec.N)
    ms = compute_moments(spec, gains, stack_err, sim.psi, N_r=N_r,
                         samples=samples, seed=seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_moments(ms, out)
    if samples < 1000:
        print(f"warning: only {samples} samples; standard errors will be large",
              file=sys.stderr)
    print(f"wrote {out} (samples={samples}, seed={seed})")
    print(f"beta_hat={ms.beta_hat:.9g} (stderr {ms.beta_sem:.3g})")
    print(f"max |mean psi'| = {np.max(np.abs(ms.psi_mean)):.3g} "
          f"(max stderr {np.max(ms.psi_mean_sem):.3g})")
    _write_manifest(out.parent, _manifest(cfg, args.config, "moments", {
        "samples": samples, "seed_override": seed, "moments_digest": ms.spec_digest,
        "moments_file": out.name}))
    return EXIT_OK


def _sim_overrides(cfg: LoadedConfig, args) -> SimConfig:
    sim = cfg.sim
    updates = {}
    if getattr(args, "paths", None) is not None:
        updates["paths"] = args.paths
    if getattr(args, "steps", None) is not None:
        updates["steps"] = args.steps
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    return dataclasses.replace(sim, **updates) if updates else sim


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    require_valid(cfg.spec)
    sim = _sim_overrides(cfg, args)
    u_max = args.u_max if args.u_max is not None else cfg.u_max_values[0]
    spec = dataclasses.replace(cfg.spec, u_max=float(u_max))
    ms, digest = _resolved_moments(dataclasses.replace(cfg, spec=spec, sim=sim),
                                   args.moments)
    ctx = build_context(spec, sim, moments=ms)
    results = run_paths(ctx, sim, record_states=True)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    d, m = spec.d, spec.m
    header = (["t"] + [f"x{i+1}" for i in range(d)] + [f"u{i+1}" for i in range(m)]
              + [f"xhat{i+1}" for i in range(d)] + ["trP"])
    for res in results:
        lines = [",".join(header)]
        for t in range(sim.steps + 1):
            u = res.controls[t] if t < sim.steps else np.full(m, np.nan)
            row = ([str(t)] + [_fmt(v) for v in res.states[t]]
                   + [_fmt(v) for v in u]
                   + [_fmt(v) for v in res.estimates[t]]
                   + [_fmt(res.trace_P[t])])
            lines.append(",".join(row))
        (out_dir / f"path_{res.path_index}.csv").write_text(
            "\n".join(lines) + "\n", encoding="utf-8")
    bound = empirical_ms_bound(results)
    fallbacks = sum(r.fallback_count for r in results)
    print(f"u_max={float(u_max):g}: ms_bound={bound:.6g} fallbacks={fallbacks}")
    _write_manifest(out_dir, _manifest(cfg, args.config, "simulate", {
        "u_max": float(u_max), "paths": sim.paths, "steps": sim.steps,
        "seed": sim.seed, "moments_digest": digest, "ms_bound": bound,
        "fallback_count": fallbacks}))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    require_valid(cfg.spec)
    sim = _sim_overrides(cfg, args)
    ms, digest = _resolved_moments(dataclasses.replace(cfg, sim=sim), args.moments)
    rows = run_sweep(cfg.spec, sim, cfg.u_max_values, moments=ms)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["u_max,ms_bound,fallback_rate,mean_qp_iters,paths,steps,seed"]
    for row in rows:
        lines.append(",".join([
            _fmt(row.u_max), _fmt(row.ms_bound), _fmt(row.fallback_rate),
            _fmt(row.mean_qp_iters), str(row.paths), str(row.steps), str(row.seed)]))
    (out_dir / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for line in lines:
        print(line)
    _write_manifest(out_dir, _manifest(cfg, args.config, "sweep", {
        "paths": sim.paths, "steps": sim.steps, "seed": sim.seed,
        "moments_digest": digest,
        "statistic": "max over time of path-averaged squared state norm"}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ofspc",
        description="Output-feedback stochastic predictive control with bounded inputs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check standing assumptions and print the system split")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("moments", help="estimate the stationary moment set and write the cache")
    p.add_argument("config")
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_moments)

    p = sub.add_parser("simulate", help="closed-loop run at a single input bound; emits path CSVs")
    p.add_argument("config")
    p.add_argument("--u-max", type=float, default=None)
    p.add_argument("--moments", default=None, help="path to a moment cache file")
    p.add_argument("--paths", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="closed-loop bound estimate across input-authority levels")
    p.add_argument("config")
    p.add_argument("--moments", default=None, help="path to a moment cache file")
    p.add_argument("--paths", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OfspcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
