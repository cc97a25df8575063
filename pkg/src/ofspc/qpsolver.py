"""Dense convex QP solver via operator splitting.

Solves ``min 0.5 z' P z + q' z  s.t.  l <= A z <= u`` with an ADMM scheme that
factorizes ``P + sigma I + rho A'A`` once and reuses it every iteration.
Termination is residual-based; primal/dual infeasibility is declared only after
the corresponding certificate holds for a run of consecutive iterations.  An
optional polish step solves the KKT system on the detected active set to drive
residuals to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, NumericalError


@dataclass(frozen=True)
class QpProblem:
    """``min 0.5 z'Pz + q'z`` subject to ``l <= A z <= u`` (entries may be +/-inf)."""

    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        q = np.asarray(self.q, dtype=float).reshape(-1)
        A = np.asarray(self.A, dtype=float)
        l = np.asarray(self.l, dtype=float).reshape(-1)
        u = np.asarray(self.u, dtype=float).reshape(-1)
        n = q.size
        if P.shape != (n, n):
            raise ConfigurationError(f"P must be {n}x{n}, got {P.shape}")
        if A.ndim != 2 or A.shape[1] != n:
            raise ConfigurationError(f"A must have {n} columns, got {A.shape}")
        c = A.shape[0]
        if l.size != c or u.size != c:
            raise ConfigurationError("l, u must have one entry per constraint row")
        if np.max(np.abs(P - P.T), initial=0.0) > 1e-9 * (1.0 + np.max(np.abs(P), initial=0.0)):
            raise ConfigurationError("P must be symmetric")
        if np.any(l > u):
            raise ConfigurationError("constraint bounds must satisfy l <= u")
        object.__setattr__(self, "P", (P + P.T) / 2.0)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "l", l)
        object.__setattr__(self, "u", u)

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def c(self) -> int:
        return self.A.shape[0]

    def objective(self, z: np.ndarray) -> float:
        return float(0.5 * z @ self.P @ z + self.q @ z)


@dataclass(frozen=True)
class QpSettings:
    rho: float = 0.1
    sigma: float = 1e-6
    alpha_relax: float = 1.6
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    eps_infeas: float = 1e-8
    max_iter: int = 20000
    check_every: int = 25
    infeas_streak: int = 25
    polish: bool = True
    adaptive_rho: bool = True
    rho_min: float = 1e-6
    rho_max: float = 1e6


@dataclass
class QpSolution:
    z: np.ndarray
    dual: np.ndarray
    status: str  # solved | max_iterations | primal_infeasible | dual_infeasible
    primal_res: float
    dual_res: float
    iterations: int
    polished: bool = False


def kkt_residuals(p: QpProblem, z: np.ndarray, dual: np.ndarray):
    """(max constraint violation, inf-norm of the stationarity residual)."""
    Az = p.A @ z if p.c else np.zeros(0)
    viol = np.maximum(p.l - Az, Az - p.u)
    primal = float(np.max(viol, initial=0.0))
    primal = max(primal, 0.0)
    dual_vec = p.P @ z + p.q + (p.A.T @ dual if p.c else 0.0)
    return primal, float(np.max(np.abs(dual_vec), initial=0.0))


def _min_eig_check(P: np.ndarray):
    if P.size == 0:
        return
    lo = float(np.linalg.eigvalsh(P)[0])
    if lo < -1e-7 * max(1.0, float(np.max(np.abs(P)))):
        raise ConfigurationError(f"P is not PSD (min eigenvalue {lo:.3e})")


def _eq_kkt_solve(p: QpProblem, low_active: np.ndarray, up_active: np.ndarray):
    idx = np.flatnonzero(low_active | up_active)
    b = np.where(up_active[idx], p.u[idx], p.l[idx])
    A_act = p.A[idx]
    k = idx.size
    KKT = np.block([[p.P, A_act.T], [A_act, np.zeros((k, k))]])
    rhs = np.concatenate([-p.q, b])
    # regularized factorization plus iterative refinement against the exact
    # system; robust to rank-deficient (degenerate) active sets
    delta = 1e-7
    reg = np.concatenate([np.full(p.n, delta), np.full(k, -delta)])
    try:
        lu = scipy.linalg.lu_factor(KKT + np.diag(reg), check_finite=False)
    except (scipy.linalg.LinAlgError, ValueError):
        return None
    sol = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
    for _ in range(4):
        resid = rhs - KKT @ sol
        if np.max(np.abs(resid)) <= 1e-12 * (1.0 + np.max(np.abs(rhs))):
            break
        sol = sol + scipy.linalg.lu_solve(lu, resid, check_finite=False)
    y_pol = np.zeros(p.c)
    y_pol[idx] = sol[p.n:]
    return sol[: p.n], y_pol


def _polish(p: QpProblem, z: np.ndarray, y: np.ndarray, tol: float,
            max_refine: int = 20):
    """Refine (z, y) by equality-KKT solves on an iteratively corrected active set.

    The set detected from the approximate iterate can be inconsistent; violated
    rows are added and wrong-sign multipliers dropped until the KKT point is
    clean or the refinement budget runs out.
    """
    if p.c == 0:
        try:
            z_pol = np.linalg.lstsq(p.P, -p.q, rcond=None)[0]
        except np.linalg.LinAlgError:
            return None
        return z_pol, np.zeros(0)
    Az = p.A @ z
    fin_l, fin_u = np.isfinite(p.l), np.isfinite(p.u)
    eq = fin_l & fin_u & (p.u - p.l <= 1e-12 * (1.0 + np.abs(p.u)))
    scale_l = 1.0 + np.abs(np.where(fin_l, p.l, 0.0))
    scale_u = 1.0 + np.abs(np.where(fin_u, p.u, 0.0))
    low_active = ((Az - p.l <= tol * scale_l) | (y < -tol)) & fin_l
    up_active = ((p.u - Az <= tol * scale_u) | (y > tol)) & fin_u
    up_active &= ~low_active  # one side per row; equalities keep either
    low_active |= eq
    best = None
    for _ in range(max_refine):
        pol = _eq_kkt_solve(p, low_active, up_active)
        if pol is None:
            return best[:2] if best is not None else None
        z_pol, y_pol = pol
        prim, dual = kkt_residuals(p, z_pol, y_pol)
        if best is None or prim + dual < best[2]:
            best = (z_pol, y_pol, prim + dual)
        Az = p.A @ z_pol
        viol_low = fin_l & (p.l - Az > tol * scale_l) & ~low_active
        viol_up = fin_u & (Az - p.u > tol * scale_u) & ~up_active
        wrong_low = low_active & ~eq & (y_pol > tol)
        wrong_up = up_active & (y_pol < -tol)
        if not (viol_low.any() or viol_up.any() or wrong_low.any() or wrong_up.any()):
            return z_pol, y_pol
        low_active = (low_active & ~wrong_low) | viol_low | eq
        up_active = ((up_active & ~wrong_up) | viol_up) & ~low_active
    return best[:2] if best is not None else None


def _primal_infeas_cert(p: QpProblem, dy: np.ndarray, eps: float) -> bool:
    norm = float(np.max(np.abs(dy), initial=0.0))
    if norm <= eps:
        return False
    dyp = np.maximum(dy, 0.0)
    dym = np.minimum(dy, 0.0)
    # support function of [l, u] at dy must be negative; infinite bounds with
    # nonzero multiplier sign cannot certify
    if np.any(dyp[~np.isfinite(p.u)] > eps * norm):
        return False
    if np.any(-dym[~np.isfinite(p.l)] > eps * norm):
        return False
    finite_u = np.where(np.isfinite(p.u), p.u, 0.0)
    finite_l = np.where(np.isfinite(p.l), p.l, 0.0)
    support = float(finite_u @ dyp + finite_l @ dym)
    at_dy = float(np.max(np.abs(p.A.T @ dy), initial=0.0))
    return at_dy <= eps * norm and support <= -eps * norm


def _dual_infeas_cert(p: QpProblem, dx: np.ndarray, eps: float) -> bool:
    norm = float(np.max(np.abs(dx), initial=0.0))
    if norm <= eps:
        return False
    if float(np.max(np.abs(p.P @ dx), initial=0.0)) > eps * norm:
        return False
    if float(p.q @ dx) > -eps * norm:
        return False
    if p.c == 0:
        return True
    Adx = p.A @ dx
    ok_up = np.where(np.isfinite(p.u), Adx <= eps * norm, True)
    ok_low = np.where(np.isfinite(p.l), Adx >= -eps * norm, True)
    return bool(np.all(ok_up & ok_low))


def solve(p: QpProblem, settings: QpSettings | None = None,
          z0: np.ndarray | None = None) -> QpSolution:
    """Run ADMM on the QP, optionally warm-started at ``z0``."""
    s = settings or QpSettings()
    _min_eig_check(p.P)
    n, c = p.n, p.c
    rho, sigma, alpha = s.rho, s.sigma, s.alpha_relax

    AtA = p.A.T @ p.A if c else None

    def _factor(rho_val):
        KKT = p.P + sigma * np.eye(n) + (rho_val * AtA if c else 0.0)
        try:
            return scipy.linalg.cho_factor(KKT, lower=True, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            raise NumericalError(f"factorization of the splitting matrix failed: {exc}")

    chol = _factor(rho)

    x = np.zeros(n) if z0 is None else np.asarray(z0, dtype=float).reshape(n).copy()
    z = p.A @ x if c else np.zeros(0)
    z = np.clip(z, p.l, p.u)
    y = np.zeros(c)

    pinf_streak = 0
    dinf_streak = 0
    x_prev_chk = x.copy()
    y_prev_chk = y.copy()
    best = None

    for it in range(1, s.max_iter + 1):
        rhs = sigma * x - p.q + (p.A.T @ (rho * z - y) if c else 0.0)
        xt = scipy.linalg.cho_solve(chol, rhs, check_finite=False)
        if c:
            zt = p.A @ xt
            x_new = alpha * xt + (1.0 - alpha) * x
            z_relax = alpha * zt + (1.0 - alpha) * z
            z_new = np.clip(z_relax + y / rho, p.l, p.u)
            y = y + rho * (z_relax - z_new)
            z = z_new
        else:
            x_new = alpha * xt + (1.0 - alpha) * x
        x = x_new

        if it % s.check_every == 0 or it == s.max_iter:
            prim, dual = kkt_residuals(p, x, y)
            if c:
                Ax = p.A @ x
                eps_prim = s.eps_abs + s.eps_rel * max(
                    float(np.max(np.abs(Ax), initial=0.0)),
                    float(np.max(np.abs(z), initial=0.0)))
            else:
                eps_prim = s.eps_abs
            eps_dual = s.eps_abs + s.eps_rel * max(
                float(np.max(np.abs(p.P @ x), initial=0.0)),
                float(np.max(np.abs(p.A.T @ y), initial=0.0)) if c else 0.0,
                float(np.max(np.abs(p.q), initial=0.0)))
            if prim <= eps_prim and dual <= eps_dual:
                sol = QpSolution(x.copy(), y.copy(), "solved", prim, dual, it)
                if s.polish:
                    _try_polish(p, sol, s)
                return sol
            if best is None or prim + dual < best[0]:
                best = (prim + dual, x.copy(), y.copy(), prim, dual, it)
            # moderately converged iterates often already identify the active
            # set; polishing then terminates far earlier than plain ADMM
            if s.polish and prim <= 1e3 * eps_prim and dual <= 1e6 * eps_dual:
                pol = _polish(p, x, y, tol=1e-6)
                if pol is not None:
                    prim_p, dual_p = kkt_residuals(p, pol[0], pol[1])
                    if prim_p <= s.eps_abs and dual_p <= s.eps_abs and _dual_signs_ok(p, pol[0], pol[1]):
                        return QpSolution(pol[0], pol[1], "solved", prim_p, dual_p,
                                          it, polished=True)
            if c:
                dy = y - y_prev_chk
                pinf_streak = pinf_streak + 1 if _primal_infeas_cert(p, dy, s.eps_infeas) else 0
            dx = x - x_prev_chk
            dinf_streak = dinf_streak + 1 if _dual_infeas_cert(p, dx, s.eps_infeas) else 0
            if pinf_streak * s.check_every >= s.infeas_streak:
                return QpSolution(x.copy(), y.copy(), "primal_infeasible", prim, dual, it)
            if dinf_streak * s.check_every >= s.infeas_streak:
                return QpSolution(x.copy(), y.copy(), "dual_infeasible", prim, dual, it)
            x_prev_chk = x.copy()
            y_prev_chk = y.copy()
            if s.adaptive_rho and c:
                # rebalance the penalty when the scaled residuals diverge
                prim_scale = max(float(np.max(np.abs(Ax), initial=0.0)),
                                 float(np.max(np.abs(z), initial=0.0)), 1e-12)
                dual_scale = max(
                    float(np.max(np.abs(p.P @ x), initial=0.0)),
                    float(np.max(np.abs(p.A.T @ y), initial=0.0)),
                    float(np.max(np.abs(p.q), initial=0.0)), 1e-12)
                ratio = np.sqrt((prim / prim_scale) / max(dual / dual_scale, 1e-18))
                if ratio > 5.0 or ratio < 0.2:
                    rho = float(np.clip(rho * ratio, s.rho_min, s.rho_max))
                    chol = _factor(rho)

    prim, dual = kkt_residuals(p, x, y)
    if best is not None and best[0] < prim + dual:
        _, x, y, prim, dual, _ = best
    sol = QpSolution(np.asarray(x).copy(), np.asarray(y).copy(), "max_iterations",
                     prim, dual, s.max_iter)
    if s.polish:
        _try_polish(p, sol, s)
    return sol


def _dual_signs_ok(p: QpProblem, z: np.ndarray, y: np.ndarray, tol: float = 1e-7) -> bool:
    if p.c == 0:
        return True
    Az = p.A @ z
    # positive multipliers only on (near-)active upper bounds, negative on lower
    bad_up = (y > tol) & ~(np.isfinite(p.u) & (p.u - Az <= 1e-6 * (1.0 + np.abs(Az))))
    bad_low = (y < -tol) & ~(np.isfinite(p.l) & (Az - p.l <= 1e-6 * (1.0 + np.abs(Az))))
    return not (np.any(bad_up) or np.any(bad_low))


def _try_polish(p: QpProblem, sol: QpSolution, s: QpSettings) -> None:
    pol = _polish(p, sol.z, sol.dual, tol=1e-6)
    if pol is None:
        return
    prim, dual = kkt_residuals(p, pol[0], pol[1])
    if prim <= max(s.eps_abs, sol.primal_res) and dual <= max(s.eps_abs, sol.dual_res) \
            and _dual_signs_ok(p, pol[0], pol[1]):
        if prim + dual < sol.primal_res + sol.dual_res:
            sol.z, sol.dual = pol
            sol.primal_res, sol.dual_res = prim, dual
            sol.polished = True
            if prim <= s.eps_abs and dual <= s.eps_abs:
                sol.status = "solved"
