import numpy as np
import pytest

import ofspc as o

from conftest import make_benchmark_spec, make_scalar_spec
from oracles import scalar_riccati_bisect

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def test_scalar_riccati_fixed_point():
    spec = make_scalar_spec(A=1.0)
    gains = o.steady_state(spec)
    oracle = scalar_riccati_bisect()
    assert abs(oracle - GOLDEN) <= 1e-12
    assert abs(float(gains.P_inf[0, 0]) - oracle) <= 1e-9


def test_steady_state_one_step_for_zero_A():
    spec = make_scalar_spec(A=0.0, Sigma_w=2.0)
    gains = o.steady_state(spec)
    Sw = 2.0
    expected = Sw - Sw * Sw / (Sw + 1.0)
    assert abs(float(gains.P_inf[0, 0]) - expected) <= 1e-10


def test_steady_state_benchmark_psd_fixed_point(bench_spec, bench_gains):
    P = bench_gains.P_inf
    assert np.linalg.eigvalsh(P)[0] >= -1e-9
    # fixed-point residual of the covariance recursion
    A, C = bench_spec.A, bench_spec.C
    M = A @ P @ A.T + bench_spec.Sigma_w
    K = M @ C.T @ np.linalg.inv(C @ M @ C.T + bench_spec.Sigma_v)
    IKC = np.eye(4) - K @ C
    P_next = IKC @ M @ IKC.T + K @ bench_spec.Sigma_v @ K.T
    assert np.max(np.abs(P_next - P)) <= 1e-10


def test_steady_state_start_invariance(bench_spec):
    import dataclasses
    from_zero = o.steady_state(dataclasses.replace(bench_spec, Sigma_x0=np.zeros((4, 4))))
    from_large = o.steady_state(dataclasses.replace(bench_spec, Sigma_x0=10.0 * np.eye(4)))
    assert np.max(np.abs(from_zero.P_inf - from_large.P_inf)) <= 1e-8


def test_init_filter_scalar():
    spec = make_scalar_spec()
    fs = o.init_filter(spec, np.array([2.0]))
    assert fs.x_hat[0] == pytest.approx(1.0)
    assert fs.P[0, 0] == pytest.approx(0.5)


def test_init_filter_known_state():
    spec = make_scalar_spec(Sigma_x0=0.0)
    fs = o.init_filter(spec, np.array([3.0]))
    assert fs.x_hat[0] == pytest.approx(0.0)
    assert fs.P[0, 0] == pytest.approx(0.0)


def test_init_filter_error_moment():
    spec = make_benchmark_spec()
    rng = np.random.default_rng(4)
    n = 100_000
    x0 = rng.multivariate_normal(np.zeros(4), spec.Sigma_x0, size=n)
    v0 = rng.multivariate_normal(np.zeros(4), spec.Sigma_v, size=n)
    y0 = x0 + v0
    K0 = spec.Sigma_x0 @ np.linalg.inv(spec.Sigma_x0 + spec.Sigma_v)
    errs = np.sum((x0 - y0 @ K0.T) ** 2, axis=1)
    fs = o.init_filter(spec, y0[0])
    target = float(np.trace(fs.P))
    sem = float(np.std(errs) / np.sqrt(n))
    assert abs(float(np.mean(errs)) - target) <= 3.0 * sem


def test_step_no_information_limit():
    spec = make_scalar_spec(Sigma_w=1e-12, Sigma_v=1e12)
    fs = o.FilterState(x_hat=np.array([1.0]), P=np.array([[1.0]]), t=0)
    nxt = o.step(fs, np.array([0.5]), np.array([100.0]), spec)
    # K ~ 0: estimate follows the model A x + B u = 1.5
    assert nxt.x_hat[0] == pytest.approx(1.5, abs=1e-3)


def test_step_preserves_fixed_point():
    spec = make_scalar_spec(A=1.0, u_max=1.0)
    gains = o.steady_state(spec)
    fs = o.FilterState(x_hat=np.zeros(1), P=gains.P_inf.copy(), t=0)
    nxt = o.step(fs, np.zeros(1), np.array([0.3]), spec)
    assert abs(nxt.P[0, 0] - GOLDEN) <= 1e-9


def test_error_recursion_matches_filter(bench_spec, bench_gains):
    """e+ = Phi e + Gamma w - K v_next at stationarity."""
    spec = bench_spec
    rng = np.random.default_rng(7)
    x = rng.normal(size=4)
    fs = o.FilterState(x_hat=rng.normal(size=4), P=bench_gains.P_inf.copy(), t=0)
    e = x - fs.x_hat
    u = rng.normal(size=1)
    w = rng.normal(size=4)
    v = rng.normal(size=4)
    x_next = spec.A @ x + spec.B @ u + w
    y_next = spec.C @ x_next + v
    nxt = o.step(fs, u, y_next, spec)
    e_next = x_next - nxt.x_hat
    predicted = (bench_gains.Phi_inf @ e + bench_gains.Gamma_inf @ w
                 - bench_gains.K_inf @ v)
    assert np.max(np.abs(e_next - predicted)) <= 1e-9


def test_error_stack_smallest_case():
    spec = make_scalar_spec(A=1.0)
    gains = o.steady_state(spec)
    es = o.error_stack(gains, spec, N=1)
    assert np.allclose(es.F[:1], np.eye(1))
    assert np.allclose(es.F[1:], gains.Phi_inf)
    assert np.allclose(es.G, np.vstack([np.zeros((1, 1)), gains.Gamma_inf]))
    assert np.allclose(es.H[:, :1], 0.0)
    assert np.allclose(es.H[1:, 1:], gains.K_inf)


def test_error_stack_block_pattern(bench_spec, bench_gains, bench_estack):
    d = 4
    Phi, Gamma = bench_gains.Phi_inf, bench_gains.Gamma_inf
    for i in range(1, bench_spec.N + 1):
        for j in range(i):
            blk = bench_estack.G[i * d:(i + 1) * d, j * d:(j + 1) * d]
            assert np.allclose(blk, np.linalg.matrix_power(Phi, i - 1 - j) @ Gamma)


def test_error_stack_matches_simulation(bench_spec, bench_gains, bench_estack):
    N, d, q = bench_spec.N, 4, 4
    rng = np.random.default_rng(9)
    e0 = rng.normal(size=d)
    ws = rng.normal(size=(N, d))
    vs = rng.normal(size=(N + 1, q))
    e = e0.copy()
    sim = [e.copy()]
    for i in range(N):
        e = (bench_gains.Phi_inf @ e + bench_gains.Gamma_inf @ ws[i]
             - bench_gains.K_inf @ vs[i + 1])
        sim.append(e.copy())
    stacked = (bench_estack.F @ e0 + bench_estack.G @ ws.reshape(-1)
               + (-bench_estack.H) @ vs.reshape(-1))
    assert np.max(np.abs(np.concatenate(sim) - stacked)) <= 1e-9


def test_trace_P_bounded_along_trajectory(bench_spec, bench_gains):
    rng = np.random.default_rng(12)
    fs = o.init_filter(bench_spec, rng.normal(size=4))
    rho = float(np.trace(bench_gains.P_inf)) + 1.0
    for t in range(60):
        fs = o.step(fs, rng.normal(size=1), rng.normal(size=4), bench_spec)
        assert float(np.trace(fs.P)) <= rho
        assert np.linalg.eigvalsh((fs.P + fs.P.T) / 2.0)[0] >= -1e-9
    assert abs(float(np.trace(fs.P)) - float(np.trace(bench_gains.P_inf))) <= 1e-6


def test_steady_state_divergence_error():
    # unobservable random-walk component never converges
    I = np.eye(2)
    spec = o.SystemSpec.constant_weights(
        A=np.diag([1.0, 0.5]), B=np.array([[0.0], [1.0]]),
        C=np.array([[0.0, 1.0]]), Sigma_x0=I, Sigma_w=I,
        Sigma_v=np.array([[1.0]]), Q=I, Q_N=I, R=np.array([[1.0]]),
        N=2, u_max=1.0)
    with pytest.raises(o.DivergenceError):
        o.steady_state(spec)
