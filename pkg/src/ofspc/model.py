"""LTI system description, standing-assumption checks, and stacked horizon matrices.

The plant is ``x_{t+1} = A x_t + B u_t + w_t``, ``y_t = C x_t + v_t`` with
Gaussian noises and a hard bound ``||u_t||_inf <= u_max``.  Everything downstream
(filtering, policy optimization, simulation) consumes the immutable
:class:`SystemSpec` and the horizon matrices produced by :func:`build_stacked`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AssumptionError, ConfigurationError

RANK_RTOL = 1e-8
UNIT_CIRCLE_TOL = 1e-8


def _as_matrix(M, name: str) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ConfigurationError(f"{name} must be a 2-D matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ConfigurationError(f"{name} contains non-finite entries")
    return M


def _rank(M: np.ndarray) -> int:
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > RANK_RTOL * s[0]))


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix (negative ripple clipped)."""
    vals, vecs = np.linalg.eigh((M + M.T) / 2.0)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


@dataclass(frozen=True)
class SystemSpec:
    """Problem data: plant matrices, noise covariances, cost weights, horizon.

    ``Q_list`` and ``R_list`` hold the per-stage weights for stages
    ``0..N-1``; ``Q_N`` is the terminal weight.  ``u_max`` bounds the
    infinity norm of every control.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Sigma_x0: np.ndarray
    Sigma_w: np.ndarray
    Sigma_v: np.ndarray
    Q_list: tuple
    Q_N: np.ndarray
    R_list: tuple
    N: int
    u_max: float

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        C = _as_matrix(self.C, "C")
        d = A.shape[0]
        if A.shape[1] != d:
            raise ConfigurationError(f"A must be square, got {A.shape}")
        if B.shape[0] != d:
            raise ConfigurationError(f"B has {B.shape[0]} rows, expected {d}")
        if C.shape[1] != d:
            raise ConfigurationError(f"C has {C.shape[1]} columns, expected {d}")
        for name, M, dim in (
            ("Sigma_x0", self.Sigma_x0, d),
            ("Sigma_w", self.Sigma_w, d),
            ("Sigma_v", self.Sigma_v, C.shape[0]),
            ("Q_N", self.Q_N, d),
        ):
            M = _as_matrix(M, name)
            if M.shape != (dim, dim):
                raise ConfigurationError(f"{name} must be {dim}x{dim}, got {M.shape}")
        if self.N < 1:
            raise ConfigurationError("horizon N must be >= 1")
        if len(self.Q_list) != self.N or len(self.R_list) != self.N:
            raise ConfigurationError("Q_list and R_list must each have N entries")
        m = B.shape[1]
        for k, Qk in enumerate(self.Q_list):
            if _as_matrix(Qk, f"Q_list[{k}]").shape != (d, d):
                raise ConfigurationError(f"Q_list[{k}] must be {d}x{d}")
        for k, Rk in enumerate(self.R_list):
            if _as_matrix(Rk, f"R_list[{k}]").shape != (m, m):
                raise ConfigurationError(f"R_list[{k}] must be {m}x{m}")
        if not (self.u_max > 0):
            raise ConfigurationError("u_max must be positive")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "Sigma_x0", _as_matrix(self.Sigma_x0, "Sigma_x0"))
        object.__setattr__(self, "Sigma_w", _as_matrix(self.Sigma_w, "Sigma_w"))
        object.__setattr__(self, "Sigma_v", _as_matrix(self.Sigma_v, "Sigma_v"))
        object.__setattr__(self, "Q_N", _as_matrix(self.Q_N, "Q_N"))
        object.__setattr__(
            self, "Q_list", tuple(np.asarray(Q, dtype=float) for Q in self.Q_list)
        )
        object.__setattr__(
            self, "R_list", tuple(np.asarray(R, dtype=float) for R in self.R_list)
        )

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def q(self) -> int:
        return self.C.shape[0]

    @staticmethod
    def constant_weights(A, B, C, Sigma_x0, Sigma_w, Sigma_v, Q, Q_N, R, N, u_max):
        """Convenience constructor broadcasting constant Q and R across stages."""
        Q = np.asarray(Q, dtype=float)
        R = np.atleast_2d(np.asarray(R, dtype=float))
        return SystemSpec(
            A=A, B=B, C=C,
            Sigma_x0=Sigma_x0, Sigma_w=Sigma_w, Sigma_v=Sigma_v,
            Q_list=tuple(Q for _ in range(N)), Q_N=Q_N,
            R_list=tuple(R for _ in range(N)), N=N, u_max=float(u_max),
        )


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    margin: float
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self):
        return [c for c in self.checks if not c.passed]

    def __str__(self):
        lines = []
        for c in self.checks:
            status = "PASS" if c.passed else "FAIL"
            lines.append(f"[{status}] {c.name} (margin={c.margin:.3e}) {c.detail}")
        return "\n".join(lines)


def _pbh_check(A, M, eigs, which: str) -> Check:
    """PBH rank test: [lam*I - A, M] full row rank at each eigenvalue in `eigs`."""
    d = A.shape[0]
    worst = np.inf
    ok = True
    for lam in eigs:
        P = np.hstack([lam * np.eye(d) - A, M.astype(complex)])
        s = np.linalg.svd(P, compute_uv=False)
        margin = s[d - 1] / s[0] - RANK_RTOL
        worst = min(worst, margin)
        if _rank(P) < d:
            ok = False
    if worst == np.inf:
        worst = 1.0
    return Check(which, ok, float(worst))


def _lyapunov_stable_check(A) -> Check:
    eigs = np.linalg.eigvals(A)
    radius = float(np.max(np.abs(eigs))) if eigs.size else 0.0
    if radius > 1.0 + UNIT_CIRCLE_TOL:
        return Check("A3_lyapunov_stable", False, 1.0 + UNIT_CIRCLE_TOL - radius,
                     f"spectral radius {radius:.6g} > 1")
    # unit-circle eigenvalues must be semisimple
    on_circle = eigs[np.abs(np.abs(eigs) - 1.0) <= UNIT_CIRCLE_TOL]
    remaining = list(on_circle)
    cluster_tol = 1e-6
    while remaining:
        lam = remaining.pop(0)
        alg = 1
        rest = []
        for mu in remaining:
            if abs(mu - lam) <= cluster_tol:
                alg += 1
            else:
                rest.append(mu)
        remaining = rest
        geo = A.shape[0] - _rank(lam * np.eye(A.shape[0]) - A)
        if geo < alg:
            return Check("A3_lyapunov_stable", False, float(geo - alg),
                         f"eigenvalue {lam:.6g}: geometric mult {geo} < algebraic {alg}")
    return Check("A3_lyapunov_stable", True, 1.0 + UNIT_CIRCLE_TOL - radius)


def _sym_eig_check(name, M, strict: bool) -> Check:
    asym = float(np.max(np.abs(M - M.T))) if M.size else 0.0
    if asym > 1e-9 * (1.0 + float(np.max(np.abs(M), initial=0.0))):
        return Check(name, False, -asym, "not symmetric")
    vals = np.linalg.eigvalsh((M + M.T) / 2.0) if M.size else np.array([0.0])
    lo = float(vals[0])
    scale = 1.0 + float(vals[-1])
    if strict:
        return Check(name, lo > 1e-12 * scale, lo)
    return Check(name, lo >= -1e-9 * scale, lo)


def validate(spec: SystemSpec) -> ValidationReport:
    """Run assumption checks A1-A4 plus definiteness checks; never raises on failure."""
    A, B, C = spec.A, spec.B, spec.C
    eigs = np.linalg.eigvals(A)
    unstable = eigs[np.abs(eigs) >= 1.0 - UNIT_CIRCLE_TOL]
    checks = [
        _pbh_check(A, B, unstable, "A1_stabilizable"),
        _pbh_check(A.T, C.T, eigs, "A1_observable"),
        _lyapunov_stable_check(A),
        _pbh_check(A, psd_sqrt(spec.Sigma_w), eigs, "A4_noise_controllable"),
        _sym_eig_check("Sigma_w_pd", spec.Sigma_w, strict=True),
        _sym_eig_check("Sigma_v_pd", spec.Sigma_v, strict=True),
        _sym_eig_check("Sigma_x0_psd", spec.Sigma_x0, strict=False),
        _sym_eig_check("Q_N_psd", spec.Q_N, strict=False),
    ]
    for k, Qk in enumerate(spec.Q_list):
        checks.append(_sym_eig_check(f"Q_{k}_psd", Qk, strict=False))
    for k, Rk in enumerate(spec.R_list):
        checks.append(_sym_eig_check(f"R_{k}_psd", Rk, strict=False))
    return ValidationReport(tuple(checks))


def require_valid(spec: SystemSpec) -> ValidationReport:
    report = validate(spec)
    if not report.ok:
        names = ", ".join(c.name for c in report.failed())
        raise AssumptionError(f"system fails checks: {names}\n{report}")
    return report


def reachability_matrix(A: np.ndarray, B: np.ndarray, k: int) -> np.ndarray:
    """Return ``[A^{k-1} B, A^{k-2} B, ..., B]``."""
    if k < 1:
        raise ConfigurationError("k must be >= 1")
    blocks = [B]
    for _ in range(k - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks[::-1])


@dataclass(frozen=True)
class StackedMatrices:
    """Horizon-stacked prediction and cost matrices.

    ``calA`` maps x_t to the stacked state ``x_{t:N+1}`` (N+1 blocks);
    ``calB`` / ``calD`` inject controls / process noise (strictly block
    lower triangular); ``calC`` is block-diagonal C; ``alpha`` is the
    control-space Hessian ``calB' calQ calB + calR``.
    """

    calA: np.ndarray
    calB: np.ndarray
    calC: np.ndarray
    calD: np.ndarray
    calQ: np.ndarray
    calR: np.ndarray
    alpha: np.ndarray


def build_stacked(spec: SystemSpec) -> StackedMatrices:
    """Build the stacked horizon matrices for the validated system."""
    A, B, C, N = spec.A, spec.B, spec.C, spec.N
    d, m, q = spec.d, spec.m, spec.q

    powers = [np.eye(d)]
    for _ in range(N):
        powers.append(A @ powers[-1])
    calA = np.vstack(powers)

    calB = np.zeros(((N + 1) * d, N * m))
    calD = np.zeros(((N + 1) * d, N * d))
    for i in range(1, N + 1):
        for j in range(i):
            calB[i * d:(i + 1) * d, j * m:(j + 1) * m] = powers[i - 1 - j] @ B
            calD[i * d:(i + 1) * d, j * d:(j + 1) * d] = powers[i - 1 - j]

    calC = np.kron(np.eye(N + 1), C)

    calQ = np.zeros(((N + 1) * d, (N + 1) * d))
    for k, Qk in enumerate(spec.Q_list):
        calQ[k * d:(k + 1) * d, k * d:(k + 1) * d] = Qk
    calQ[N * d:, N * d:] = spec.Q_N

    calR = np.zeros((N * m, N * m))
    for k, Rk in enumerate(spec.R_list):
        calR[k * m:(k + 1) * m, k * m:(k + 1) * m] = Rk

    alpha = calB.T @ calQ @ calB + calR
    alpha = (alpha + alpha.T) / 2.0
    return StackedMatrices(calA, calB, calC, calD, calQ, calR, alpha)
