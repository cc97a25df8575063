"""Time-varying Kalman filter, its Riccati fixed point, and the stacked error model.

The filter uses the filtered-estimate convention throughout: the innovation fed
to the control policy is ``y_t - C xhat_{t|t}``.  Covariance updates use the
Joseph form and are re-symmetrized each step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, NumericalError
from .model import SystemSpec

RICCATI_TOL = 1e-12
RICCATI_MAX_ITER = 100_000


def _gain(M: np.ndarray, C: np.ndarray, Sigma_v: np.ndarray) -> np.ndarray:
    """K = M C' (C M C' + Sigma_v)^{-1}, tolerating a singular innovation covariance."""
    S = C @ M @ C.T + Sigma_v
    S = (S + S.T) / 2.0
    try:
        return np.linalg.solve(S, C @ M).T
    except np.linalg.LinAlgError:
        return M @ C.T @ np.linalg.pinv(S)


@dataclass(frozen=True)
class FilterState:
    """Filtered estimate ``x_hat = xhat_{t|t}`` with covariance ``P = P_{t|t}``."""

    x_hat: np.ndarray
    P: np.ndarray
    t: int


@dataclass(frozen=True)
class SteadyGains:
    """Stationary filter gains: ``Gamma = I - K C`` and ``Phi = Gamma A``."""

    K_inf: np.ndarray
    Gamma_inf: np.ndarray
    Phi_inf: np.ndarray
    P_inf: np.ndarray
    iterations: int


@dataclass(frozen=True)
class ErrorStack:
    """Stationary one-horizon error propagation: ``e_stack = F e_t + G w_stack - H v_stack``."""

    F: np.ndarray
    G: np.ndarray
    H: np.ndarray


def init_filter(spec: SystemSpec, y0: np.ndarray) -> FilterState:
    """Condition the Gaussian prior x_0 ~ N(0, Sigma_x0) on the first measurement."""
    y0 = np.asarray(y0, dtype=float).reshape(spec.q)
    if not np.all(np.isfinite(y0)):
        raise NumericalError("non-finite measurement y0")
    K0 = _gain(spec.Sigma_x0, spec.C, spec.Sigma_v)
    x_hat = K0 @ y0
    P0 = (np.eye(spec.d) - K0 @ spec.C) @ spec.Sigma_x0
    return FilterState(x_hat=x_hat, P=(P0 + P0.T) / 2.0, t=0)


def step(state: FilterState, u: np.ndarray, y_next: np.ndarray,
         spec: SystemSpec) -> FilterState:
    """One measurement-update step of the filter (Joseph-form covariance)."""
    u = np.asarray(u, dtype=float).reshape(spec.m)
    y_next = np.asarray(y_next, dtype=float).reshape(spec.q)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(y_next))):
        raise NumericalError("non-finite filter input")
    A, B, C = spec.A, spec.B, spec.C
    M = A @ state.P @ A.T + spec.Sigma_w
    K = _gain(M, C, spec.Sigma_v)
    pred = A @ state.x_hat + B @ u
    x_hat = pred + K @ (y_next - C @ pred)
    IKC = np.eye(spec.d) - K @ C
    P = IKC @ M @ IKC.T + K @ spec.Sigma_v @ K.T
    return FilterState(x_hat=x_hat, P=(P + P.T) / 2.0, t=state.t + 1)


def steady_state(spec: SystemSpec) -> SteadyGains:
    """Iterate the covariance recursion to its fixed point P_inf and return the gains."""
    A, C = spec.A, spec.C
    P = spec.Sigma_x0.copy()
    for it in range(1, RICCATI_MAX_ITER + 1):
        M = A @ P @ A.T + spec.Sigma_w
        K = _gain(M, C, spec.Sigma_v)
        IKC = np.eye(spec.d) - K @ C
        P_next = IKC @ M @ IKC.T + K @ spec.Sigma_v @ K.T
        P_next = (P_next + P_next.T) / 2.0
        residual = float(np.max(np.abs(P_next - P)))
        P = P_next
        if residual < RICCATI_TOL:
            M = A @ P @ A.T + spec.Sigma_w
            K = _gain(M, C, spec.Sigma_v)
            Gamma = np.eye(spec.d) - K @ C
            return SteadyGains(K_inf=K, Gamma_inf=Gamma, Phi_inf=Gamma @ A,
                               P_inf=P, iterations=it)
    raise DivergenceError(
        f"covariance recursion did not converge in {RICCATI_MAX_ITER} iterations "
        f"(last residual {residual:.3e})")


def error_stack(gains: SteadyGains, spec: SystemSpec, N: int | None = None) -> ErrorStack:
    """Stationary F, G, H of the error recursion e+ = Phi e + Gamma w - K v_next.

    Block row i (0..N) of the stack holds ``e_{t+i}``; G has N block columns for
    ``w_t..w_{t+N-1}``; H has N+1 block columns for ``v_t..v_{t+N}`` with the
    first block column structurally zero.
    """
    if N is None:
        N = spec.N
    d, q = spec.d, spec.q
    Phi, Gamma, K = gains.Phi_inf, gains.Gamma_inf, gains.K_inf

    phi_pow = [np.eye(d)]
    for _ in range(N):
        phi_pow.append(Phi @ phi_pow[-1])

    F = np.vstack(phi_pow)
    G = np.zeros(((N + 1) * d, N * d))
    H = np.zeros(((N + 1) * d, (N + 1) * q))
    for i in range(1, N + 1):
        for j in range(i):
            G[i * d:(i + 1) * d, j * d:(j + 1) * d] = phi_pow[i - 1 - j] @ Gamma
        for j in range(1, i + 1):
            H[i * d:(i + 1) * d, j * q:(j + 1) * q] = phi_pow[i - j] @ K
    return ErrorStack(F=F, G=G, H=H)
