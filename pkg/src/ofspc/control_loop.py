"""Closed-loop receding-horizon simulation and the Monte-Carlo bound estimate.

Each path runs the plant, the stationary-gain Kalman filter, and the
per-instant QP on its own counter-based random stream, so results are
bitwise-reproducible and independent of how paths are distributed over worker
processes.  The drift constraints are expressed in the rotating frame
``z_t = (A_o')^t xhat^o_t``, which keeps the orthogonal-part drift direction
consistent across recalculation instants.
"""

from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .decomp import decompose
from .errors import ConfigurationError
from .kalman import error_stack, init_filter, step, steady_state
from .model import SystemSpec, build_stacked, psd_sqrt
from .moments import MomentSet, compute_moments
from .ocp import OcpContext, make_context, solve_ocp
from .policy import PsiSpec, eval_policy
from .qpsolver import QpSettings

THREADS_ENV = "OFSPC_THREADS"


@dataclass(frozen=True)
class SimConfig:
    """Closed-loop run parameters on top of a SystemSpec."""

    psi: PsiSpec = PsiSpec()
    N_r: int | None = None          # recalculation interval; defaults to kappa
    r: float = 1.0
    epsilon: float = 0.1
    zeta_fraction: float = 0.9      # zeta = fraction * zeta_max
    steps: int = 90
    paths: int = 100
    seed: int = 0
    moment_samples: int = 100_000

    def __post_init__(self):
        if not (0.0 < self.zeta_fraction < 1.0):
            raise ConfigurationError("zeta_fraction must lie in (0, 1)")
        if self.steps < 1 or self.paths < 1:
            raise ConfigurationError("steps and paths must be positive")


@dataclass
class PathResult:
    """Per-path closed-loop record."""

    path_index: int
    state_sq_norms: np.ndarray      # ||x_t||^2 for t = 0..steps
    controls: np.ndarray            # applied inputs, steps x m
    fallback_count: int
    recalc_count: int
    qp_iterations_total: int
    drift_events: list = field(default_factory=list)  # (component, z_before, z_after)
    states: np.ndarray | None = None
    estimates: np.ndarray | None = None
    trace_P: np.ndarray | None = None


def run_path(ctx: OcpContext, cfg: SimConfig, path_index: int,
             record_states: bool = False,
             qp_settings: QpSettings | None = None) -> PathResult:
    """Simulate one closed-loop path on its own deterministic random stream."""
    spec = ctx.spec
    dec = ctx.dec
    N_r = cfg.N_r if cfg.N_r is not None else max(dec.kappa, 1)
    if not (max(dec.kappa, 1) <= N_r <= spec.N):
        raise ConfigurationError(
            f"recalculation interval {N_r} outside kappa..N = {max(dec.kappa, 1)}..{spec.N}")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, path_index]))

    sq_w = psd_sqrt(spec.Sigma_w)
    sq_v = psd_sqrt(spec.Sigma_v)
    sq_x0 = psd_sqrt(spec.Sigma_x0)

    x = sq_x0 @ rng.standard_normal(spec.d)
    y = spec.C @ x + sq_v @ rng.standard_normal(spec.q)
    fs = init_filter(spec, y)

    A_o_Nr = np.linalg.matrix_power(dec.A_o, N_r)
    A_o_kap = np.linalg.matrix_power(dec.A_o, dec.kappa)
    rot = np.eye(dec.d_o)  # A_o^t at the current recalculation instant

    sq_norms = np.empty(cfg.steps + 1)
    controls = np.empty((cfg.steps, spec.m))
    states = np.empty((cfg.steps + 1, spec.d)) if record_states else None
    estimates = np.empty((cfg.steps + 1, spec.d)) if record_states else None
    trace_P = np.empty(cfg.steps + 1) if record_states else None

    def record(t):
        sq_norms[t] = float(x @ x)
        if record_states:
            states[t] = x
            estimates[t] = fs.x_hat
            trace_P[t] = float(np.trace(fs.P))

    record(0)
    fallback_count = 0
    recalc_count = 0
    qp_iters = 0
    drift_events = []
    pending = []  # (component, z_before) awaiting the next recalculation instant
    threshold = ctx.r + ctx.epsilon

    t = 0
    params = None
    innovs: list[np.ndarray] = []
    while t < cfg.steps:
        # recalculation instant
        z = rot.T @ dec.orthogonal_coords(fs.x_hat) if dec.d_o else np.zeros(0)
        for j, z_before in pending:
            drift_events.append((j, z_before, float(z[j])))
        pending = [(j, float(z[j])) for j in range(dec.d_o) if abs(z[j]) >= threshold]

        sol = solve_ocp(ctx, fs.x_hat, y, rotation=A_o_kap @ rot if dec.d_o else None,
                        x_hat_o=z, settings=qp_settings)
        params = sol.params
        recalc_count += 1
        qp_iters += sol.iterations
        if sol.fallback_used:
            fallback_count += 1
        innovs = [y - spec.C @ fs.x_hat]

        for l in range(N_r):
            if t >= cfg.steps:
                break
            u = eval_policy(params, innovs, ctx.psi, l)
            u = np.clip(u, -spec.u_max, spec.u_max)  # physical input saturation
            controls[t] = u
            x = spec.A @ x + spec.B @ u + sq_w @ rng.standard_normal(spec.d)
            y = spec.C @ x + sq_v @ rng.standard_normal(spec.q)
            fs = step(fs, u, y, spec)
            innovs.append(y - spec.C @ fs.x_hat)
            t += 1
            record(t)
        rot = A_o_Nr @ rot

    return PathResult(path_index=path_index, state_sq_norms=sq_norms,
                      controls=controls, fallback_count=fallback_count,
                      recalc_count=recalc_count, qp_iterations_total=qp_iters,
                      drift_events=drift_events, states=states,
                      estimates=estimates, trace_P=trace_P)


def empirical_ms_bound(results: list[PathResult]) -> float:
    """Max over time of the path-averaged squared state norm."""
    stack = np.vstack([r.state_sq_norms for r in results])
    return float(np.max(np.mean(stack, axis=0)))


@dataclass
class DriftAudit:
    n_events: int
    mean_drift: float       # mean of sign(z_before) * (z_after - z_before)
    stderr: float
    zeta: float
    sufficient: bool        # at least min_events observed
    satisfied: bool         # mean_drift <= -zeta + 4 * stderr
    per_component: dict = field(default_factory=dict)  # j -> (n, mean, stderr)


def drift_audit(results: list[PathResult], zeta: float,
                min_events: int = 30) -> DriftAudit:
    """Check the conditional-drift guarantee on the recorded threshold events.

    Events are recalculation instants at which a rotated orthogonal coordinate
    exceeded the activation threshold; the drift toward the origin of each such
    coordinate over the following interval should average at most ``-zeta``.
    """
    by_comp: dict[int, list[float]] = {}
    for r in results:
        for j, zb, za in r.drift_events:
            by_comp.setdefault(j, []).append(float(np.sign(zb)) * (za - zb))
    vals = [v for vs in by_comp.values() for v in vs]
    n = len(vals)
    if n == 0:
        return DriftAudit(0, float("nan"), float("nan"), zeta, False, False, {})
    mean = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
    per = {j: (len(vs), float(np.mean(vs)),
               float(np.std(vs, ddof=1) / np.sqrt(len(vs))) if len(vs) > 1 else float("inf"))
           for j, vs in by_comp.items()}
    return DriftAudit(n, mean, se, zeta, n >= min_events,
                      mean <= -zeta + 4.0 * se, per)


def _worker_count(paths: int) -> int:
    env = os.environ.get(THREADS_ENV)
    if env is not None:
        try:
            w = int(env)
        except ValueError:
            raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {env!r}")
        if w < 1:
            raise ConfigurationError(f"{THREADS_ENV} must be positive")
    else:
        w = os.cpu_count() or 1
    return max(1, min(w, paths))


def _run_path_star(args):
    ctx, cfg, k, record_states = args
    return run_path(ctx, cfg, k, record_states=record_states)


def run_paths(ctx: OcpContext, cfg: SimConfig,
              record_states: bool = False) -> list[PathResult]:
    """All Monte-Carlo paths, optionally across processes.

    The worker count only changes wall-clock time: every path owns its random
    stream, and results are reassembled in path order.
    """
    workers = _worker_count(cfg.paths)
    if workers == 1 or cfg.paths == 1:
        return [run_path(ctx, cfg, k, record_states=record_states)
                for k in range(cfg.paths)]
    jobs = [(ctx, cfg, k, record_states) for k in range(cfg.paths)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(_run_path_star, jobs, chunksize=max(1, cfg.paths // (4 * workers))))
    return sorted(results, key=lambda r: r.path_index)


def build_context(spec: SystemSpec, cfg: SimConfig,
                  moments: MomentSet | None = None) -> OcpContext:
    """Assemble the per-configuration OCP context (filter gains, split, moments)."""
    gains = steady_state(spec)
    dec = decompose(spec)
    if moments is None:
        stack_err = error_stack(gains, spec, spec.N)
        N_r = cfg.N_r if cfg.N_r is not None else max(dec.kappa, 1)
        moments = compute_moments(spec, gains, stack_err, cfg.psi, N_r=N_r,
                                  samples=cfg.moment_samples, seed=cfg.seed)
    zeta = cfg.zeta_fraction * dec.zeta_max if dec.d_o else 1.0
    return make_context(spec, build_stacked(spec), dec, moments, cfg.psi,
                        r=cfg.r, epsilon=cfg.epsilon, zeta=zeta)


@dataclass
class SweepRow:
    u_max: float
    ms_bound: float
    fallback_rate: float
    mean_qp_iters: float
    paths: int
    steps: int
    seed: int


def sweep(spec: SystemSpec, cfg: SimConfig, u_max_values,
          moments: MomentSet | None = None) -> list[SweepRow]:
    """Closed-loop bound estimate across input-authority levels.

    The moment set is independent of ``u_max`` and is computed once.
    """
    if moments is None:
        gains = steady_state(spec)
        stack_err = error_stack(gains, spec, spec.N)
        dec = decompose(spec)
        N_r = cfg.N_r if cfg.N_r is not None else max(dec.kappa, 1)
        moments = compute_moments(spec, gains, stack_err, cfg.psi, N_r=N_r,
                                  samples=cfg.moment_samples, seed=cfg.seed)
    rows = []
    for u_max in u_max_values:
        spec_u = dataclasses.replace(spec, u_max=float(u_max))
        ctx = build_context(spec_u, cfg, moments=moments)
        results = run_paths(ctx, cfg)
        total_recalcs = sum(r.recalc_count for r in results)
        rows.append(SweepRow(
            u_max=float(u_max),
            ms_bound=empirical_ms_bound(results),
            fallback_rate=sum(r.fallback_count for r in results) / total_recalcs,
            mean_qp_iters=sum(r.qp_iterations_total for r in results) / total_recalcs,
            paths=cfg.paths, steps=cfg.steps, seed=cfg.seed))
    return rows
