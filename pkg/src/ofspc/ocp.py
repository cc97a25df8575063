"""Per-instant convex QP: objective, hard-bound and stability constraints, fallback.

The decision vector stacks the open-loop terms ``eta``, the free (causal) gain
block entries of ``Theta``, and one absolute-value slack per parameter entry.
The objective is the conditional expected finite-horizon cost with the moment
matrices substituted for the stochastic terms; the constraints are the
worst-case input bound (exact, via the slacks) and the conditional drift rows
for the orthogonal subsystem.  A saturation-based fallback point is feasible
for every state, which makes the program globally feasible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decomp import Decomposition
from .errors import CacheError, ConfigurationError, InternalContradictionError
from .model import StackedMatrices, SystemSpec, reachability_matrix
from .moments import MomentSet, spec_digest
from .policy import PolicyParams, PsiSpec, psi_apply, sat_r_zeta
from .qpsolver import QpProblem, QpSettings, QpSolution, solve as qp_solve


class VarMap:
    """Index map from the flat decision vector to (eta, Theta blocks, slacks)."""

    def __init__(self, N: int, m: int, q: int):
        self.N, self.m, self.q = N, m, q
        self.n_eta = N * m
        self.entries = []  # (l, i, a, b) in block order, row-major within block
        for l in range(N):
            for i in range(l + 1):
                for a in range(m):
                    for b in range(q):
                        self.entries.append((l, i, a, b))
        self.n_theta = len(self.entries)
        self.off_theta = self.n_eta
        self.off_s_eta = self.off_theta + self.n_theta
        self.off_s_theta = self.off_s_eta + self.n_eta
        self.n = self.off_s_theta + self.n_theta

        self._theta_pos = {e: self.off_theta + k for k, e in enumerate(self.entries)}
        # first-column blocks (known innovation) and the remaining free blocks
        self.th0 = [(k, e) for k, e in enumerate(self.entries) if e[1] == 0]
        self.thp = [(k, e) for k, e in enumerate(self.entries) if e[1] >= 1]
        # vec (column-major) index of each free Theta' entry inside the Nm x qN matrix
        self.thp_vec = np.array(
            [((i - 1) * q + b) * (N * m) + l * m + a for _, (l, i, a, b) in self.thp],
            dtype=int)
        self.thp_z = np.array([self.off_theta + k for k, _ in self.thp], dtype=int)
        self.th0_z = np.array([self.off_theta + k for k, _ in self.th0], dtype=int)

    def eta_idx(self, k: int) -> int:
        return k

    def theta_idx(self, l: int, i: int, a: int, b: int) -> int:
        return self._theta_pos[(l, i, a, b)]

    def slack_of(self, z_idx: int) -> int:
        if z_idx < self.n_eta:
            return self.off_s_eta + z_idx
        return self.off_s_theta + (z_idx - self.off_theta)

    def unpack(self, z: np.ndarray) -> PolicyParams:
        eta = z[: self.n_eta].copy()
        blocks = {}
        for k, (l, i, a, b) in enumerate(self.entries):
            blocks.setdefault((l, i), np.zeros((self.m, self.q)))[a, b] = \
                z[self.off_theta + k]
        return PolicyParams(eta=eta, theta_blocks=blocks, N=self.N, m=self.m, q=self.q)

    def pack(self, params: PolicyParams) -> np.ndarray:
        z = np.zeros(self.n)
        z[: self.n_eta] = params.eta
        for k, (l, i, a, b) in enumerate(self.entries):
            blk = params.theta_blocks.get((l, i))
            if blk is not None:
                z[self.off_theta + k] = blk[a, b]
        # slacks at their tight values
        z[self.off_s_eta:self.off_s_theta] = np.abs(z[: self.n_eta])
        z[self.off_s_theta:] = np.abs(z[self.off_theta:self.off_s_eta])
        return z


@dataclass(frozen=True)
class OcpContext:
    """Immutable per-configuration data shared by every solve."""

    spec: SystemSpec
    stack: StackedMatrices
    dec: Decomposition
    moments: MomentSet
    psi: PsiSpec
    r: float
    epsilon: float
    zeta: float
    var_map: VarMap
    # precomputed objective pieces
    BtQA: np.ndarray         # calB' calQ calA   (Nm x d)
    theta_lin_coef: np.ndarray  # linear coefficient on Theta' entries (Nm x qN)
    kron_sub: np.ndarray     # (Sigma_psi (x) alpha) restricted to free Theta' entries


def make_context(spec: SystemSpec, stack: StackedMatrices, dec: Decomposition,
                 moments: MomentSet, psi: PsiSpec, r: float, epsilon: float,
                 zeta: float) -> OcpContext:
    if dec.d_o > 0 and not (0.0 < zeta < dec.zeta_max):
        raise ConfigurationError(
            f"zeta={zeta} outside the admissible interval (0, {dec.zeta_max})")
    if not (r > 0) or not (epsilon > 0):
        raise ConfigurationError("r and epsilon must be positive")
    from .kalman import steady_state
    expected = spec_digest(spec, spec.N, psi, steady_state(spec))
    if moments.spec_digest and moments.spec_digest != expected:
        raise CacheError("moment set does not match this system/psi configuration")

    vm = VarMap(spec.N, spec.m, spec.q)
    alpha = stack.alpha
    BtQA = stack.calB.T @ stack.calQ @ stack.calA
    # linear trace terms: <Theta', M1' Sigma_psi_w' + M2' Sigma_e_psi'>
    M1 = stack.calD.T @ stack.calQ @ stack.calB
    theta_lin_coef = M1.T @ moments.Sigma_psi_w.T + BtQA @ moments.Sigma_e_psi.T
    kron = np.kron((moments.Sigma_psi + moments.Sigma_psi.T) / 2.0, alpha)
    kron_sub = kron[np.ix_(vm.thp_vec, vm.thp_vec)]
    return OcpContext(spec=spec, stack=stack, dec=dec, moments=moments, psi=psi,
                      r=float(r), epsilon=float(epsilon), zeta=float(zeta),
                      var_map=vm, BtQA=BtQA, theta_lin_coef=theta_lin_coef,
                      kron_sub=kron_sub)


def _g_matrix(ctx: OcpContext, psi0: np.ndarray) -> np.ndarray:
    """Affine map z -> eta + Theta^{(:,t)} psi0 (an Nm x n matrix)."""
    vm = ctx.var_map
    G = np.zeros((vm.n_eta, vm.n))
    G[:, : vm.n_eta] = np.eye(vm.n_eta)
    for k, (l, _i, a, b) in vm.th0:
        G[l * vm.m + a, vm.off_theta + k] = psi0[b]
    return G


def build_objective(ctx: OcpContext, x_hat: np.ndarray, psi0: np.ndarray):
    """Hessian/linear term of the expected-cost QP over the decision vector.

    The state-dependent part is ``g' alpha g + 2 (x_hat' A'QB) g`` with
    ``g = eta + Theta^{(:,t)} psi0``; the future-innovation part contributes
    ``tr(alpha Theta' Sigma_psi Theta'^T)`` plus the two linear trace terms.
    Returns (P, q, constant) with objective value ``0.5 z'Pz + q'z + constant``.
    """
    vm = ctx.var_map
    psi0 = np.asarray(psi0, dtype=float).reshape(vm.q)
    x_hat = np.asarray(x_hat, dtype=float).reshape(ctx.spec.d)
    G = _g_matrix(ctx, psi0)
    P = np.zeros((vm.n, vm.n))
    GA = ctx.stack.alpha @ G
    P += 2.0 * (G.T @ GA)
    P[np.ix_(vm.thp_z, vm.thp_z)] += 2.0 * ctx.kron_sub
    c = ctx.BtQA @ x_hat
    q = 2.0 * (G.T @ c)
    for k, (l, i, a, b) in vm.thp:
        q[vm.off_theta + k] += 2.0 * ctx.theta_lin_coef[l * vm.m + a, (i - 1) * vm.q + b]
    return (P + P.T) / 2.0, q, 0.0


def objective_expression(ctx: OcpContext, params: PolicyParams, x_hat: np.ndarray,
                         psi0: np.ndarray) -> float:
    """Direct evaluation of the expected-cost expression from (eta, Theta).

    Kept deliberately independent of :func:`build_objective`; used as an oracle.
    """
    alpha = ctx.stack.alpha
    Theta = params.assemble_theta()
    Thp = Theta[:, ctx.spec.q:]
    psi0 = np.asarray(psi0, dtype=float).reshape(ctx.spec.q)
    x_hat = np.asarray(x_hat, dtype=float).reshape(ctx.spec.d)
    g = params.eta + Theta[:, : ctx.spec.q] @ psi0
    M1 = ctx.stack.calD.T @ ctx.stack.calQ @ ctx.stack.calB
    val = (g @ alpha @ g
           + np.trace(alpha @ Thp @ ctx.moments.Sigma_psi @ Thp.T)
           + 2.0 * (ctx.BtQA @ x_hat) @ g
           + 2.0 * np.trace(M1 @ Thp @ ctx.moments.Sigma_psi_w)
           + 2.0 * float(np.sum((ctx.BtQA @ ctx.moments.Sigma_e_psi.T) * Thp)))
    return float(val)


def build_constraints(ctx: OcpContext, x_hat_o: np.ndarray, psi0: np.ndarray,
                      rotation: np.ndarray | None = None):
    """Constraint rows (A, l, u) for one solve.

    Absolute-value rows tie each parameter entry to its slack, budget rows
    encode the worst-case input bound, and conditional drift rows are added for
    each orthogonal coordinate beyond the +/-(r+epsilon) activation threshold.
    ``rotation`` replaces ``A_o^kappa`` in the drift rows (used by the
    receding-horizon loop to keep the drift frame aligned over time).
    """
    vm = ctx.var_map
    dec = ctx.dec
    psi0 = np.asarray(psi0, dtype=float).reshape(vm.q)
    rows = []
    lo = []
    hi = []

    def add(row, l, u):
        rows.append(row)
        lo.append(l)
        hi.append(u)

    # |z_k| <= s_k as two one-sided rows
    for z_idx in list(range(vm.n_eta)) + list(range(vm.off_theta, vm.off_s_eta)):
        s_idx = vm.slack_of(z_idx)
        row = np.zeros(vm.n)
        row[z_idx] = 1.0
        row[s_idx] = -1.0
        add(row, -np.inf, 0.0)
        row = np.zeros(vm.n)
        row[z_idx] = 1.0
        row[s_idx] = 1.0
        add(row, 0.0, np.inf)

    # per-control-row budget: s_eta + psi_max * sum s_theta <= u_max
    for rr in range(vm.n_eta):
        row = np.zeros(vm.n)
        row[vm.off_s_eta + rr] = 1.0
        for k, (l, _i, a, _b) in enumerate(vm.entries):
            if l * vm.m + a == rr:
                row[vm.off_s_theta + k] = ctx.psi.psi_max
        add(row, -np.inf, ctx.spec.u_max)

    # conditional drift rows for the orthogonal part
    if dec.d_o > 0:
        x_hat_o = np.asarray(x_hat_o, dtype=float).reshape(dec.d_o)
        M = rotation if rotation is not None else np.linalg.matrix_power(dec.A_o, dec.kappa)
        W = M.T @ dec.R_kappa  # d_o x kappa*m
        km = dec.kappa * vm.m
        threshold = ctx.r + ctx.epsilon
        for j in range(dec.d_o):
            if abs(x_hat_o[j]) < threshold:
                continue
            row = np.zeros(vm.n)
            row[:km] = W[j]
            for k, (l, _i, a, b) in vm.th0:
                rr = l * vm.m + a
                if rr < km:
                    row[vm.off_theta + k] = W[j, rr] * psi0[b]
            if x_hat_o[j] >= threshold:
                add(row, -np.inf, -ctx.zeta)
            else:
                add(row, ctx.zeta, np.inf)

    return np.array(rows), np.array(lo), np.array(hi)


def fallback_point(ctx: OcpContext, x_hat_o: np.ndarray,
                   rotation: np.ndarray | None = None) -> PolicyParams:
    """Globally feasible policy: saturation-based first-kappa controls, zero gains."""
    vm = ctx.var_map
    dec = ctx.dec
    eta = np.zeros(vm.n_eta)
    if dec.d_o > 0:
        x_hat_o = np.asarray(x_hat_o, dtype=float).reshape(dec.d_o)
        M = rotation if rotation is not None else np.linalg.matrix_power(dec.A_o, dec.kappa)
        head = -dec.R_kappa_pinv @ M @ sat_r_zeta(x_hat_o, ctx.r, ctx.zeta)
        eta[: dec.kappa * vm.m] = head
    return PolicyParams(eta=eta, theta_blocks={}, N=vm.N, m=vm.m, q=vm.q)


@dataclass
class OcpSolution:
    params: PolicyParams
    objective_value: float
    status: str
    fallback_used: bool
    iterations: int = 0
    primal_res: float = 0.0
    dual_res: float = 0.0


def solve_ocp(ctx: OcpContext, x_hat: np.ndarray, y_t: np.ndarray,
              rotation: np.ndarray | None = None,
              x_hat_o: np.ndarray | None = None,
              settings: QpSettings | None = None) -> OcpSolution:
    """Assemble and solve the per-instant QP; fall back on solver failure.

    ``x_hat_o`` overrides the orthogonal coordinates used in the drift rows
    (the loop passes the frame-aligned coordinate there); by default it is the
    orthogonal part of ``T x_hat``.
    """
    spec = ctx.spec
    x_hat = np.asarray(x_hat, dtype=float).reshape(spec.d)
    y_t = np.asarray(y_t, dtype=float).reshape(spec.q)
    psi0 = psi_apply(ctx.psi, y_t - spec.C @ x_hat)
    if x_hat_o is None:
        x_hat_o = ctx.dec.orthogonal_coords(x_hat)

    P, q, _ = build_objective(ctx, x_hat, psi0)
    A, l, u = build_constraints(ctx, x_hat_o, psi0, rotation=rotation)
    prob = QpProblem(P=P, q=q, A=A, l=l, u=u)

    fb = fallback_point(ctx, x_hat_o, rotation=rotation)
    z_fb = ctx.var_map.pack(fb)
    fb_obj = prob.objective(z_fb)

    sol: QpSolution = qp_solve(prob, settings=settings, z0=z_fb)
    if sol.status == "primal_infeasible":
        raise InternalContradictionError(
            "per-instant QP reported primal infeasible; the fallback point is "
            "feasible by construction, so this indicates a solver defect")
    if sol.status == "solved":
        params = ctx.var_map.unpack(sol.z)
        return OcpSolution(params=params, objective_value=prob.objective(sol.z),
                           status=sol.status, fallback_used=False,
                           iterations=sol.iterations,
                           primal_res=sol.primal_res, dual_res=sol.dual_res)
    return OcpSolution(params=fb, objective_value=fb_obj, status=sol.status,
                       fallback_used=True, iterations=sol.iterations,
                       primal_res=sol.primal_res, dual_res=sol.dual_res)


def prior_feasibility_threshold(dec: Decomposition, beta_hat: float,
                                epsilon_prime: float, N_r: int) -> float:
    """Minimum u_max for which the earlier norm-contraction constraint is feasible."""
    if dec.d_o == 0:
        return 0.0
    R = reachability_matrix(dec.A_o, dec.B_o, N_r)
    s1 = float(np.linalg.svd(np.linalg.pinv(R, rcond=1e-10), compute_uv=False)[0])
    return s1 * (beta_hat + epsilon_prime / 2.0)
