"""Saturated-innovation affine control policies.

A policy is ``u_{t+l} = eta_{t+l} + sum_{i<=l} theta_{l,i} psi(innovation_i)``
with a bounded odd nonlinearity ``psi`` applied componentwise to innovations.
The gain blocks form a block-lower-triangular matrix whose last block column
(the stage-N innovation) is structurally zero, so the hard input bound reduces
to a finite set of linear inequalities on the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

PSI_KINDS = ("sigmoid", "saturation")


@dataclass(frozen=True)
class PsiSpec:
    """Componentwise odd, bounded nonlinearity: |psi(z)_i| <= psi_max."""

    kind: str = "sigmoid"
    psi_max: float = 1.0

    def __post_init__(self):
        if self.kind not in PSI_KINDS:
            raise ConfigurationError(f"unknown psi kind {self.kind!r}; use one of {PSI_KINDS}")
        if not (self.psi_max > 0):
            raise ConfigurationError("psi_max must be positive")


def psi_apply(psi: PsiSpec, z: np.ndarray) -> np.ndarray:
    """Apply the nonlinearity componentwise; +/-inf map to +/-psi_max."""
    z = np.asarray(z, dtype=float)
    if psi.kind == "sigmoid":
        # psi_max * (1 - exp(-z)) / (1 + exp(-z)) == psi_max * tanh(z / 2)
        return psi.psi_max * np.tanh(z / 2.0)
    return np.clip(z, -psi.psi_max, psi.psi_max)


def sat_r_zeta(z: np.ndarray, r: float, zeta: float) -> np.ndarray:
    """Componentwise saturation: linear with slope zeta/r on [-r, r], clipped at +/-zeta."""
    if not (r > 0):
        raise ConfigurationError("saturation threshold r must be positive")
    if not (zeta > 0):
        raise ConfigurationError("saturation level zeta must be positive")
    z = np.asarray(z, dtype=float)
    return np.clip(z * (zeta / r), -zeta, zeta)


@dataclass(frozen=True)
class PolicyParams:
    """Open-loop terms ``eta`` (length N*m) and gain blocks ``theta_blocks[(l, i)]``.

    Only blocks with ``0 <= i <= l <= N-1`` may be present; each is m-by-q.
    """

    eta: np.ndarray
    theta_blocks: dict = field(default_factory=dict)
    N: int = 0
    m: int = 0
    q: int = 0

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float).reshape(-1)
        if eta.size != self.N * self.m:
            raise ConfigurationError(
                f"eta has {eta.size} entries, expected N*m = {self.N * self.m}")
        for (l, i), blk in self.theta_blocks.items():
            if not (0 <= i <= l <= self.N - 1):
                raise ConfigurationError(
                    f"theta block ({l}, {i}) outside the causal lower triangle")
            blk = np.asarray(blk, dtype=float)
            if blk.shape != (self.m, self.q):
                raise ConfigurationError(
                    f"theta block ({l}, {i}) must be {self.m}x{self.q}, got {blk.shape}")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(
            self, "theta_blocks",
            {k: np.asarray(v, dtype=float) for k, v in self.theta_blocks.items()})

    def theta(self, l: int, i: int) -> np.ndarray:
        return self.theta_blocks.get((l, i), np.zeros((self.m, self.q)))

    def assemble_theta(self) -> np.ndarray:
        """Dense Nm x q(N+1) gain matrix (structural zeros included)."""
        N, m, q = self.N, self.m, self.q
        Theta = np.zeros((N * m, (N + 1) * q))
        for (l, i), blk in self.theta_blocks.items():
            Theta[l * m:(l + 1) * m, i * q:(i + 1) * q] = blk
        return Theta


def eval_policy(p: PolicyParams, innovations: list, psi: PsiSpec, l: int) -> np.ndarray:
    """Control at stage l from the innovations observed at offsets 0..l."""
    if not (0 <= l < p.N):
        raise ConfigurationError(f"stage {l} outside horizon 0..{p.N - 1}")
    if len(innovations) < l + 1:
        raise ConfigurationError(
            f"stage {l} needs innovations for offsets 0..{l}, got {len(innovations)}")
    u = p.eta[l * p.m:(l + 1) * p.m].copy()
    for i in range(l + 1):
        blk = p.theta_blocks.get((l, i))
        if blk is not None:
            u += blk @ psi_apply(psi, np.asarray(innovations[i], dtype=float).reshape(p.q))
    return u


def hard_bound_margin(p: PolicyParams, psi_max: float, u_max: float) -> np.ndarray:
    """Per-control-row slack of the worst-case input bound.

    Row i slack is ``u_max - |eta_i| - psi_max * ||Theta_row_i||_1``; nonnegative
    slacks certify ``||u||_inf <= u_max`` for every innovation realization.
    """
    Theta = p.assemble_theta()
    return u_max - np.abs(p.eta) - psi_max * np.sum(np.abs(Theta), axis=1)
