import numpy as np
import pytest

import ofspc as o
from ofspc.control_loop import (
    DriftAudit,
    PathResult,
    SimConfig,
    build_context,
    drift_audit,
    empirical_ms_bound,
    run_path,
    run_paths,
    sweep,
)
from ofspc.errors import ConfigurationError

from conftest import make_benchmark_spec, make_scalar_spec


SMALL = SimConfig(steps=12, paths=3, seed=7, moment_samples=4000)


@pytest.fixture(scope="module")
def small_ctx():
    return build_context(make_benchmark_spec(), SMALL)


def make_result(sq_norms, drift_events=()):
    sq = np.asarray(sq_norms, dtype=float)
    return PathResult(path_index=0, state_sq_norms=sq,
                      controls=np.zeros((len(sq) - 1, 1)),
                      fallback_count=0, recalc_count=1, qp_iterations_total=0,
                      drift_events=list(drift_events))


def test_noiseless_at_origin_stays_at_origin():
    spec = make_scalar_spec(A=1.0, Sigma_w=0.0, Sigma_v=0.0, Sigma_x0=0.0)
    cfg = SimConfig(steps=10, paths=1, seed=0, moment_samples=500)
    ctx = build_context(spec, cfg)
    res = run_path(ctx, cfg, 0)
    assert np.max(res.state_sq_norms) <= 1e-16
    assert np.max(np.abs(res.controls)) <= 1e-8


def test_same_seed_same_path(small_ctx):
    a = run_path(small_ctx, SMALL, 1)
    b = run_path(small_ctx, SMALL, 1)
    assert np.array_equal(a.state_sq_norms, b.state_sq_norms)
    assert np.array_equal(a.controls, b.controls)
    assert a.drift_events == b.drift_events


def test_distinct_paths_differ(small_ctx):
    a = run_path(small_ctx, SMALL, 0)
    b = run_path(small_ctx, SMALL, 1)
    assert not np.array_equal(a.state_sq_norms, b.state_sq_norms)


def test_worker_count_does_not_change_results(small_ctx, monkeypatch):
    monkeypatch.setenv("OFSPC_THREADS", "1")
    serial = run_paths(small_ctx, SMALL)
    monkeypatch.setenv("OFSPC_THREADS", "2")
    parallel = run_paths(small_ctx, SMALL)
    assert len(serial) == len(parallel) == SMALL.paths
    for a, b in zip(serial, parallel):
        assert a.path_index == b.path_index
        assert np.array_equal(a.state_sq_norms, b.state_sq_norms)
        assert np.array_equal(a.controls, b.controls)


def test_bad_worker_env_rejected(small_ctx, monkeypatch):
    monkeypatch.setenv("OFSPC_THREADS", "zero")
    with pytest.raises(ConfigurationError):
        run_paths(small_ctx, SMALL)
    monkeypatch.setenv("OFSPC_THREADS", "0")
    with pytest.raises(ConfigurationError):
        run_paths(small_ctx, SMALL)


def test_controls_respect_bound(small_ctx):
    for res in run_paths(small_ctx, SMALL):
        assert np.max(np.abs(res.controls)) <= small_ctx.spec.u_max + 1e-9


def test_recalc_interval_validation(small_ctx):
    with pytest.raises(ConfigurationError):
        run_path(small_ctx, SimConfig(N_r=2, steps=5, paths=1), 0)  # below kappa
    with pytest.raises(ConfigurationError):
        run_path(small_ctx, SimConfig(N_r=6, steps=5, paths=1), 0)  # above N


def test_sim_config_validation():
    with pytest.raises(ConfigurationError):
        SimConfig(zeta_fraction=0.0)
    with pytest.raises(ConfigurationError):
        SimConfig(zeta_fraction=1.0)
    with pytest.raises(ConfigurationError):
        SimConfig(steps=0)


def test_empirical_ms_bound_constant_paths():
    results = [make_result([4.0, 4.0, 4.0]) for _ in range(3)]
    assert empirical_ms_bound(results) == pytest.approx(4.0)


def test_empirical_ms_bound_takes_time_maximum():
    results = [make_result([1.0, 2.0, 3.0]), make_result([3.0, 2.0, 1.0]),
               make_result([2.0, 8.0, 2.0])]
    assert empirical_ms_bound(results) == pytest.approx(4.0)  # means (2, 4, 2)


def test_drift_audit_statistics():
    events = [(0, 2.0, 1.2), (0, -2.0, -1.0), (1, 3.0, 2.4)]
    audit = drift_audit([make_result([0.0, 0.0], events)], zeta=0.5,
                        min_events=3)
    # drifts toward the origin: -0.8, -1.0, -0.6
    assert audit.n_events == 3
    assert audit.mean_drift == pytest.approx(-0.8)
    assert audit.sufficient
    assert audit.per_component[0][0] == 2
    assert audit.per_component[1][1] == pytest.approx(-0.6)


def test_drift_audit_empty():
    audit = drift_audit([make_result([0.0, 0.0])], zeta=0.5)
    assert isinstance(audit, DriftAudit)
    assert audit.n_events == 0 and not audit.sufficient and not audit.satisfied


def test_drift_events_only_above_threshold(small_ctx):
    for res in run_paths(small_ctx, SMALL):
        for _j, z_before, _z_after in res.drift_events:
            assert abs(z_before) >= small_ctx.r + small_ctx.epsilon - 1e-12


def test_recorded_filter_covariance_converges(small_ctx):
    cfg = SimConfig(steps=60, paths=1, seed=3, moment_samples=4000)
    res = run_path(small_ctx, cfg, 0, record_states=True)
    gains = o.steady_state(small_ctx.spec)
    target = float(np.trace(gains.P_inf))
    assert abs(res.trace_P[-1] - target) <= 1e-6
    assert np.max(res.trace_P) <= float(np.trace(small_ctx.spec.Sigma_x0)) + 1e-9


def test_sweep_rows_and_shared_moments():
    spec = make_benchmark_spec()
    cfg = SimConfig(steps=9, paths=2, seed=1, moment_samples=3000)
    rows = sweep(spec, cfg, [0.5, 2.0])
    assert [row.u_max for row in rows] == [0.5, 2.0]
    for row in rows:
        assert row.paths == 2 and row.steps == 9 and row.seed == 1
        assert 0.0 <= row.fallback_rate <= 1.0
        assert row.ms_bound > 0.0
        assert row.mean_qp_iters >= 0.0
