import numpy as np
import pytest

import ofspc as o


def benchmark_matrices():
    A = np.zeros((4, 4))
    A[0, 0] = 0.9
    A[1, 1] = 1.0
    A[2, 3] = -1.0
    A[3, 2] = 1.0
    B = np.array([[0.0], [1.0], [0.0], [1.0]])
    return A, B, np.eye(4)


def make_benchmark_spec(u_max=1.0, N=5):
    A, B, C = benchmark_matrices()
    I = np.eye(4)
    return o.SystemSpec.constant_weights(
        A=A, B=B, C=C, Sigma_x0=I, Sigma_w=I, Sigma_v=I,
        Q=I, Q_N=I, R=np.array([[1.0]]), N=N, u_max=u_max)


def make_scalar_spec(A=1.0, Sigma_w=1.0, Sigma_v=1.0, Sigma_x0=1.0,
                     N=2, u_max=1.0):
    one = np.array([[1.0]])
    return o.SystemSpec.constant_weights(
        A=np.array([[A]]), B=one, C=one,
        Sigma_x0=np.array([[Sigma_x0]]), Sigma_w=np.array([[Sigma_w]]),
        Sigma_v=np.array([[Sigma_v]]), Q=one, Q_N=one, R=one,
        N=N, u_max=u_max)


@pytest.fixture(scope="session")
def bench_spec():
    return make_benchmark_spec()


@pytest.fixture(scope="session")
def bench_gains(bench_spec):
    return o.steady_state(bench_spec)


@pytest.fixture(scope="session")
def bench_dec(bench_spec):
    return o.decompose(bench_spec)


@pytest.fixture(scope="session")
def bench_estack(bench_spec, bench_gains):
    return o.error_stack(bench_gains, bench_spec, bench_spec.N)


@pytest.fixture(scope="session")
def bench_moments(bench_spec, bench_gains, bench_estack, bench_dec):
    return o.compute_moments(bench_spec, bench_gains, bench_estack,
                             o.PsiSpec("sigmoid", 1.0),
                             N_r=bench_dec.kappa, samples=40_000, seed=11)


@pytest.fixture(scope="session")
def bench_ctx(bench_spec, bench_dec, bench_moments):
    return o.make_context(bench_spec, o.build_stacked(bench_spec), bench_dec,
                          bench_moments, o.PsiSpec("sigmoid", 1.0),
                          r=1.0, epsilon=0.1, zeta=0.9 * bench_dec.zeta_max)
