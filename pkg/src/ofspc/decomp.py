"""Orthogonal/Schur split of a Lyapunov-stable system matrix.

A Lyapunov-stable ``A`` is similar to ``blockdiag(A_o, A_s)`` with ``A_o``
orthogonal (unit-circle eigenvalues, normalized to +/-1 and rotation blocks)
and ``A_s`` Schur stable.  The split, the reachability index of the orthogonal
pair, and the admissible drift magnitude bound are computed here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DecompositionError, UnreachableOrthogonalPartError
from .model import SystemSpec, reachability_matrix, _rank

UNIT_CIRCLE_TOL = 1e-8
PINV_RCOND = 1e-10
MAX_CONDITION = 1e10


@dataclass(frozen=True)
class Decomposition:
    """Change of basis ``T`` with ``T A T_inv = blockdiag(A_o, A_s)`` and ``T B = [B_o; B_s]``."""

    T: np.ndarray
    T_inv: np.ndarray
    A_o: np.ndarray
    A_s: np.ndarray
    B_o: np.ndarray
    B_s: np.ndarray
    d_o: int
    d_s: int
    kappa: int
    R_kappa: np.ndarray
    R_kappa_pinv: np.ndarray
    zeta_max: float

    def orthogonal_coords(self, x: np.ndarray) -> np.ndarray:
        """Orthogonal-part coordinates of a state-space vector."""
        return (self.T @ x)[: self.d_o]


def _real_eigvec(v: np.ndarray) -> np.ndarray:
    # rotate the complex phase away before taking the real part
    k = int(np.argmax(np.abs(v)))
    v = v * np.exp(-1j * np.angle(v[k]))
    vr = np.real(v)
    return vr / np.linalg.norm(vr)


def reachability_index(A_o: np.ndarray, B_o: np.ndarray) -> int:
    """Smallest k with rank R_k(A_o, B_o) = d_o; errors if the pair is unreachable."""
    d_o = A_o.shape[0]
    if d_o == 0:
        return 0
    for k in range(1, d_o + 1):
        if _rank(reachability_matrix(A_o, B_o, k)) == d_o:
            return k
    raise UnreachableOrthogonalPartError(
        "orthogonal part (A_o, B_o) is not reachable; bounded-control "
        "stabilization is impossible for this system")


def zeta_bound(dec: Decomposition, u_max: float) -> float:
    """Upper bound on the drift magnitude zeta keeping the fallback control admissible."""
    if dec.d_o == 0:
        return math.inf
    s1 = float(np.linalg.svd(dec.R_kappa_pinv, compute_uv=False)[0])
    return float(u_max) / (math.sqrt(dec.d_o) * s1)


def decompose(spec: SystemSpec) -> Decomposition:
    """Split spec.A into orthogonal and Schur-stable parts via a real similarity."""
    A, B = spec.A, spec.B
    d = A.shape[0]
    eigs, vecs = np.linalg.eig(A)
    if np.max(np.abs(eigs), initial=0.0) > 1.0 + UNIT_CIRCLE_TOL:
        raise DecompositionError("A is not Lyapunov stable")

    on_circle = np.abs(np.abs(eigs) - 1.0) <= UNIT_CIRCLE_TOL
    basis_cols = []
    ortho_blocks = []
    used = np.zeros(d, dtype=bool)
    for i in range(d):
        if used[i] or not on_circle[i]:
            continue
        lam = eigs[i]
        used[i] = True
        if abs(lam.imag) <= UNIT_CIRCLE_TOL:
            basis_cols.append(_real_eigvec(vecs[:, i]))
            ortho_blocks.append(np.array([[math.copysign(1.0, lam.real)]]))
        else:
            # pair with the conjugate eigenvalue; realify the invariant plane
            j = None
            for k in range(i + 1, d):
                if not used[k] and on_circle[k] and abs(eigs[k] - np.conj(lam)) < 1e-6:
                    j = k
                    break
            if j is None:
                raise DecompositionError(
                    f"unpaired complex unit-circle eigenvalue {lam:.6g}")
            used[j] = True
            v = vecs[:, i] if lam.imag > 0 else vecs[:, j]
            lam = lam if lam.imag > 0 else eigs[j]
            # one common scale: individual rescaling of Re/Im parts would break
            # the rotation-block relation A [vr vi] = [vr vi] M
            v = v / np.linalg.norm(v)
            vr, vi = np.real(v), np.imag(v)
            theta = float(np.angle(lam))
            c, s = math.cos(theta), math.sin(theta)
            # A [vr vi] = [vr vi] [[c, s], [-s, c]]  (rotation block)
            basis_cols.append(vr)
            basis_cols.append(vi)
            ortho_blocks.append(np.array([[c, s], [-s, c]]))

    d_o = len(basis_cols)
    d_s = d - d_o
    A_o = scipy.linalg.block_diag(*ortho_blocks) if ortho_blocks else np.zeros((0, 0))

    if d_s > 0:
        # orthonormal basis of the Schur-stable invariant subspace
        def interior(re, im):
            return re * re + im * im < (1.0 - UNIT_CIRCLE_TOL) ** 2

        _, Z, sdim = scipy.linalg.schur(A, output="real", sort=interior)
        if sdim != d_s:
            raise DecompositionError(
                f"eigenvalue partition mismatch: schur sorted {sdim}, expected {d_s}")
        V_s = Z[:, :d_s]
        A_s = V_s.T @ A @ V_s
    else:
        V_s = np.zeros((d, 0))
        A_s = np.zeros((0, 0))

    P = np.column_stack(basis_cols + [V_s]) if d_o else V_s
    cond = float(np.linalg.cond(P)) if d else 1.0
    if cond > MAX_CONDITION:
        raise DecompositionError(f"change of basis ill-conditioned (cond={cond:.3e})")
    T = np.linalg.inv(P)
    TB = T @ B

    residual = float(np.max(np.abs(T @ A @ P - scipy.linalg.block_diag(A_o, A_s))))
    if residual > 1e-7:
        raise DecompositionError(f"block-diagonalization residual {residual:.3e}")

    B_o, B_s = TB[:d_o], TB[d_o:]
    if d_o > 0:
        kappa = reachability_index(A_o, B_o)
        R_kappa = reachability_matrix(A_o, B_o, kappa)
        R_kappa_pinv = np.linalg.pinv(R_kappa, rcond=PINV_RCOND)
    else:
        kappa = 0
        R_kappa = np.zeros((0, 0))
        R_kappa_pinv = np.zeros((0, 0))

    dec = Decomposition(T=T, T_inv=P, A_o=A_o, A_s=A_s, B_o=B_o, B_s=B_s,
                        d_o=d_o, d_s=d_s, kappa=kappa, R_kappa=R_kappa,
                        R_kappa_pinv=R_kappa_pinv, zeta_max=math.nan)
    object.__setattr__(dec, "zeta_max", zeta_bound(dec, spec.u_max))
    return dec
