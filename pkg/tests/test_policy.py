import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ofspc.errors import ConfigurationError
from ofspc.policy import PolicyParams, PsiSpec, eval_policy, hard_bound_margin, psi_apply, sat_r_zeta


def random_params(rng, N=3, m=2, q=2, scale=1.0):
    blocks = {(l, i): scale * rng.normal(size=(m, q))
              for l in range(N) for i in range(l + 1)}
    return PolicyParams(eta=scale * rng.normal(size=N * m),
                        theta_blocks=blocks, N=N, m=m, q=q)


def test_sigmoid_values():
    psi = PsiSpec("sigmoid", 1.0)
    assert psi_apply(psi, np.array([0.0]))[0] == 0.0
    assert psi_apply(psi, np.array([np.log(3.0)]))[0] == pytest.approx(0.5)
    assert psi_apply(psi, np.array([np.inf]))[0] == 1.0
    assert psi_apply(psi, np.array([-np.inf]))[0] == -1.0


def test_hard_saturation_values():
    psi = PsiSpec("saturation", 1.0)
    assert np.allclose(psi_apply(psi, np.array([-5.0, 0.3])), [-1.0, 0.3])


def test_psi_bounded_extreme_inputs():
    rng = np.random.default_rng(2)
    z = np.concatenate([rng.normal(scale=1e3, size=10_000), [1e12, -1e12]])
    for kind in ("sigmoid", "saturation"):
        out = psi_apply(PsiSpec(kind, 1.0), z)
        assert np.max(np.abs(out)) <= 1.0


def test_psi_odd():
    rng = np.random.default_rng(3)
    z = rng.normal(size=1000) * 10
    for kind in ("sigmoid", "saturation"):
        psi = PsiSpec(kind, 2.0)
        assert np.array_equal(psi_apply(psi, -z), -psi_apply(psi, z))


def test_unknown_psi_kind():
    with pytest.raises(ConfigurationError):
        PsiSpec("relu", 1.0)


def test_sat_r_zeta_zones():
    assert sat_r_zeta(np.array([0.5]), 1.0, 0.5)[0] == pytest.approx(0.25)
    assert np.allclose(sat_r_zeta(np.array([2.0, -3.0]), 1.0, 0.5), [0.5, -0.5])


def test_sat_r_zeta_bound_and_errors():
    rng = np.random.default_rng(4)
    z = rng.normal(size=100) * 5
    assert np.max(np.abs(sat_r_zeta(z, 1.0, 0.5))) <= 0.5
    with pytest.raises(ConfigurationError):
        sat_r_zeta(z, 0.0, 0.5)
    with pytest.raises(ConfigurationError):
        sat_r_zeta(z, 1.0, -1.0)


def test_policy_causal_triangle_enforced():
    with pytest.raises(ConfigurationError):
        PolicyParams(eta=np.zeros(4), theta_blocks={(0, 1): np.zeros((2, 1))},
                     N=2, m=2, q=1)


def test_eval_policy_open_loop():
    p = PolicyParams(eta=np.array([1.0, 2.0, 3.0]), theta_blocks={}, N=3, m=1, q=1)
    psi = PsiSpec("sigmoid", 1.0)
    for l in range(3):
        u = eval_policy(p, [np.zeros(1)] * (l + 1), psi, l)
        assert u[0] == pytest.approx(float(l + 1))


def test_eval_policy_single_block():
    p = PolicyParams(eta=np.zeros(2), theta_blocks={(0, 0): np.eye(2)},
                     N=1, m=2, q=2)
    psi = PsiSpec("sigmoid", 1.0)
    z = np.array([0.4, -1.2])
    assert np.allclose(eval_policy(p, [z], psi, 0), psi_apply(psi, z))


def test_eval_policy_matches_dense_assembly():
    rng = np.random.default_rng(6)
    p = random_params(rng)
    psi = PsiSpec("sigmoid", 1.0)
    innovs = [rng.normal(size=2) for _ in range(p.N + 1)]
    Theta = p.assemble_theta()
    psi_stack = np.concatenate([psi_apply(psi, z) for z in innovs])
    dense_u = p.eta + Theta @ psi_stack
    for l in range(p.N):
        u = eval_policy(p, innovs[: l + 1], psi, l)
        assert np.max(np.abs(u - dense_u[l * p.m:(l + 1) * p.m])) <= 1e-12


def test_eval_policy_missing_innovation():
    p = PolicyParams(eta=np.zeros(2), theta_blocks={}, N=2, m=1, q=1)
    with pytest.raises(ConfigurationError):
        eval_policy(p, [np.zeros(1)], PsiSpec(), 1)


def test_last_block_column_structurally_zero():
    rng = np.random.default_rng(8)
    p = random_params(rng, N=3, m=1, q=2)
    Theta = p.assemble_theta()
    assert np.allclose(Theta[:, -2:], 0.0)


def test_hard_bound_margin_trivial():
    p = PolicyParams(eta=np.zeros(3), theta_blocks={}, N=3, m=1, q=1)
    assert np.allclose(hard_bound_margin(p, 1.0, 2.0), 2.0)


def test_hard_bound_margin_arithmetic():
    p = PolicyParams(eta=np.array([0.3]), theta_blocks={(0, 0): np.array([[0.5]])},
                     N=1, m=1, q=1)
    assert hard_bound_margin(p, 1.0, 1.0)[0] == pytest.approx(0.2)


def test_nonnegative_margin_implies_bounded_controls():
    rng = np.random.default_rng(10)
    p = random_params(rng, scale=0.05)
    psi = PsiSpec("sigmoid", 1.0)
    u_max = 1.0
    assert np.all(hard_bound_margin(p, 1.0, u_max) >= 0)
    worst = 0.0
    for _ in range(1000):
        innovs = [rng.normal(size=2) * 100 for _ in range(p.N)]
        for l in range(p.N):
            u = eval_policy(p, innovs[: l + 1], psi, l)
            worst = max(worst, float(np.max(np.abs(u))))
    assert worst <= u_max


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_policy_oddness(seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng)
    p_zero_eta = PolicyParams(eta=np.zeros_like(p.eta),
                              theta_blocks=p.theta_blocks, N=p.N, m=p.m, q=p.q)
    psi = PsiSpec("sigmoid", 1.0)
    innovs = [rng.normal(size=2) for _ in range(p.N)]
    for l in range(p.N):
        u_pos = eval_policy(p_zero_eta, innovs[: l + 1], psi, l)
        u_neg = eval_policy(p_zero_eta, [-z for z in innovs[: l + 1]], psi, l)
        assert np.array_equal(u_neg, -u_pos)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(0, 2))
def test_policy_causality(seed, l):
    rng = np.random.default_rng(seed)
    p = random_params(rng)
    psi = PsiSpec("sigmoid", 1.0)
    innovs = [rng.normal(size=2) for _ in range(p.N)]
    u = eval_policy(p, innovs[: l + 1], psi, l)
    perturbed = list(innovs)
    for j in range(l + 1, p.N):
        perturbed[j] = rng.normal(size=2) * 100
    u2 = eval_policy(p, perturbed[: l + 1], psi, l)
    assert np.array_equal(u, u2)
