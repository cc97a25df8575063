"""Offline Monte-Carlo estimation of the innovation moment matrices.

The QP objective needs the stationary second moments coupling the saturated
future innovations with the process noise and the estimation error, plus the
mean norm of the sub-sampled estimator disturbance.  All are estimated with a
counter-based RNG (Philox) in fixed-size chunks, so results are bitwise
reproducible and independent of any parallel scheduling.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CacheError, ConfigurationError
from .kalman import ErrorStack, SteadyGains, error_stack
from .model import SystemSpec, psd_sqrt
from .policy import PsiSpec, psi_apply

MAGIC = b"OFSPC-MOM v1\n"
CHUNK = 4096


@dataclass(frozen=True)
class MomentSet:
    """Monte-Carlo moment estimates with their provenance.

    ``Sigma_psi``   : E[psi' psi'^T]      (qN x qN)
    ``Sigma_psi_w`` : E[psi' w_stack^T]   (qN x dN)
    ``Sigma_e_psi`` : E[psi' e_t^T]       (qN x d)
    ``beta_hat``    : E[||Xi_{t+N_r-1}||]
    """

    Sigma_psi: np.ndarray
    Sigma_psi_w: np.ndarray
    Sigma_e_psi: np.ndarray
    beta_hat: float
    samples: int
    seed: int
    spec_digest: str
    psi_mean: np.ndarray
    psi_mean_sem: np.ndarray
    Sigma_psi_sem: np.ndarray
    beta_sem: float


def spec_digest(spec: SystemSpec, N: int, psi: PsiSpec, gains: SteadyGains) -> str:
    """Content hash binding a moments cache to its generating inputs.

    Only moment-relevant data enter the hash: plant and noise matrices, the
    horizon, the nonlinearity, and the stationary gains.  Cost weights and
    u_max are excluded so one cache serves a whole control-bound sweep.
    """
    h = hashlib.sha256()
    for M in (spec.A, spec.B, spec.C, spec.Sigma_x0, spec.Sigma_w, spec.Sigma_v,
              gains.K_inf, gains.P_inf):
        h.update(np.ascontiguousarray(M, dtype=float).tobytes())
        h.update(str(M.shape).encode())
    h.update(f"N={N};psi={psi.kind};psi_max={psi.psi_max!r}".encode())
    return h.hexdigest()


def _chunk_rng(seed: int, chunk_index: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(key=seed & (2**64 - 1), counter=chunk_index << 64))


def innovation_maps(spec: SystemSpec, stack: ErrorStack):
    """Linear maps from (e_t, w_stack, v_stack) to the innovation stack of one horizon."""
    N, q = spec.N, spec.q
    calC = np.kron(np.eye(N + 1), spec.C)
    CF = calC @ stack.F
    CG = calC @ stack.G
    ICH = np.eye((N + 1) * q) - calC @ stack.H
    return CF, CG, ICH


def estimate_moments(spec: SystemSpec, gains: SteadyGains, stack: ErrorStack,
                     psi: PsiSpec, samples: int = 100_000, seed: int = 0) -> MomentSet:
    """Estimate Sigma_psi, Sigma_psi_w, Sigma_e_psi (and beta via a separate call)."""
    if samples < 1:
        raise ConfigurationError("samples must be >= 1")
    d, q, N = spec.d, spec.q, spec.N
    lo = float(np.linalg.eigvalsh((gains.P_inf + gains.P_inf.T) / 2.0)[0])
    if lo < -1e-9 * (1.0 + float(np.max(np.abs(gains.P_inf)))):
        raise ConfigurationError("P_inf is not PSD")

    CF, CG, ICH = innovation_maps(spec, stack)
    Le = psd_sqrt(gains.P_inf)
    Lw = psd_sqrt(spec.Sigma_w)
    Lv = psd_sqrt(spec.Sigma_v)

    qN, dN = q * N, d * N
    S_pp = np.zeros((qN, qN))
    S_pw = np.zeros((qN, dN))
    S_pe = np.zeros((qN, d))
    S_p = np.zeros(qN)
    S_p2 = np.zeros(qN)
    S_pp2 = np.zeros((qN, qN))

    done = 0
    chunk_index = 0
    while done < samples:
        k = min(CHUNK, samples - done)
        rng = _chunk_rng(seed, chunk_index)
        E = rng.standard_normal((k, d)) @ Le.T
        W = (rng.standard_normal((k, N, d)) @ Lw.T).reshape(k, dN)
        V = (rng.standard_normal((k, N + 1, q)) @ Lv.T).reshape(k, (N + 1) * q)
        NU = E @ CF.T + W @ CG.T + V @ ICH.T
        PSI = psi_apply(psi, NU[:, q:])
        S_pp += PSI.T @ PSI
        S_pw += PSI.T @ W
        S_pe += PSI.T @ E
        S_p += PSI.sum(axis=0)
        S_p2 += (PSI ** 2).sum(axis=0)
        S_pp2 += (PSI ** 2).T @ (PSI ** 2)
        done += k
        chunk_index += 1

    n = float(samples)
    Sigma_psi = (S_pp + S_pp.T) / (2.0 * n)
    psi_mean = S_p / n
    psi_var = np.maximum(S_p2 / n - psi_mean ** 2, 0.0)
    pp_var = np.maximum(S_pp2 / n - (S_pp / n) ** 2, 0.0)

    return MomentSet(
        Sigma_psi=Sigma_psi,
        Sigma_psi_w=S_pw / n,
        Sigma_e_psi=S_pe / n,
        beta_hat=0.0,
        samples=samples,
        seed=int(seed),
        spec_digest="",
        psi_mean=psi_mean,
        psi_mean_sem=np.sqrt(psi_var / n),
        Sigma_psi_sem=np.sqrt(pp_var / n),
        beta_sem=0.0,
    )


def xi_maps(spec: SystemSpec, gains: SteadyGains, N_r: int):
    """Linear maps from (e_t, w_{t:N_r}, v_{t+1:N_r}) to Xi_{t+N_r-1}."""
    A, C, K = spec.A, spec.C, gains.K_inf
    d, q = spec.d, spec.q
    Apow = [np.eye(d)]
    for _ in range(N_r - 1):
        Apow.append(A @ Apow[-1])
    Me = np.hstack([Apow[N_r - 1 - i] @ K @ C @ A for i in range(N_r)])
    Mw = np.hstack([Apow[N_r - 1 - i] @ K @ C for i in range(N_r)])
    Mv = np.hstack([Apow[N_r - 1 - i] @ K for i in range(N_r)])

    es = error_stack(gains, spec, N=N_r - 1)
    # e_{t:N_r} uses w_{t..t+N_r-2} and v_{t+1..t+N_r-1}; pad to the shared stacks
    G_pad = np.hstack([es.G, np.zeros((N_r * d, d))])
    H_shift = np.hstack([es.H[:, q:], np.zeros((N_r * d, q))])
    Ze = Me @ es.F
    Zw = Me @ G_pad + Mw
    Zv = -Me @ H_shift + Mv
    return Ze, Zw, Zv


def estimate_beta(spec: SystemSpec, gains: SteadyGains, N_r: int,
                  samples: int = 100_000, seed: int = 0):
    """Monte-Carlo estimate of E||Xi_{t+N_r-1}|| and its standard error."""
    if N_r < 1:
        raise ConfigurationError("N_r must be >= 1")
    d, q = spec.d, spec.q
    Ze, Zw, Zv = xi_maps(spec, gains, N_r)
    Le = psd_sqrt(gains.P_inf)
    Lw = psd_sqrt(spec.Sigma_w)
    Lv = psd_sqrt(spec.Sigma_v)

    total = 0.0
    total_sq = 0.0
    done = 0
    chunk_index = 0
    while done < samples:
        k = min(CHUNK, samples - done)
        rng = _chunk_rng(seed ^ 0x5851F42D4C957F2D, chunk_index)
        E = rng.standard_normal((k, d)) @ Le.T
        W = (rng.standard_normal((k, N_r, d)) @ Lw.T).reshape(k, N_r * d)
        V = (rng.standard_normal((k, N_r, q)) @ Lv.T).reshape(k, N_r * q)
        XI = E @ Ze.T + W @ Zw.T + V @ Zv.T
        norms = np.linalg.norm(XI, axis=1)
        total += float(norms.sum())
        total_sq += float((norms ** 2).sum())
        done += k
        chunk_index += 1

    n = float(samples)
    beta_hat = total / n
    var = max(total_sq / n - beta_hat ** 2, 0.0)
    return beta_hat, float(np.sqrt(var / n))


def compute_moments(spec: SystemSpec, gains: SteadyGains, stack: ErrorStack,
                    psi: PsiSpec, N_r: int, samples: int = 100_000,
                    seed: int = 0) -> MomentSet:
    """Full moment set including beta_hat and the binding digest."""
    ms = estimate_moments(spec, gains, stack, psi, samples=samples, seed=seed)
    beta_hat, beta_sem = estimate_beta(spec, gains, N_r, samples=samples, seed=seed)
    digest = spec_digest(spec, spec.N, psi, gains)
    return MomentSet(
        Sigma_psi=ms.Sigma_psi, Sigma_psi_w=ms.Sigma_psi_w, Sigma_e_psi=ms.Sigma_e_psi,
        beta_hat=beta_hat, samples=samples, seed=int(seed), spec_digest=digest,
        psi_mean=ms.psi_mean, psi_mean_sem=ms.psi_mean_sem,
        Sigma_psi_sem=ms.Sigma_psi_sem, beta_sem=beta_sem)


_ARRAY_FIELDS = ("Sigma_psi", "Sigma_psi_w", "Sigma_e_psi",
                 "psi_mean", "psi_mean_sem", "Sigma_psi_sem")


def save_moments(ms: MomentSet, path) -> None:
    """Write the cache: magic, JSON header, then row-major little-endian float64 payload."""
    payload = b"".join(
        np.ascontiguousarray(getattr(ms, f), dtype="<f8").tobytes() for f in _ARRAY_FIELDS)
    header = {
        "shapes": {f: list(getattr(ms, f).shape) for f in _ARRAY_FIELDS},
        "beta_hat": ms.beta_hat,
        "beta_sem": ms.beta_sem,
        "samples": ms.samples,
        "seed": ms.seed,
        "spec_digest": ms.spec_digest,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    hdr = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(hdr)))
        fh.write(hdr)
        fh.write(payload)


def load_moments(path, expected_digest: str | None = None) -> MomentSet:
    """Read a cache file; verifies the checksum and, if given, the spec digest."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MAGIC):
        raise CacheError(f"{path}: not a moments cache (bad magic)")
    off = len(MAGIC)
    (hlen,) = struct.unpack_from("<Q", blob, off)
    off += 8
    try:
        header = json.loads(blob[off:off + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CacheError(f"{path}: corrupt header ({exc})")
    payload = blob[off + hlen:]
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CacheError(f"{path}: payload checksum mismatch")
    if expected_digest is not None and header["spec_digest"] != expected_digest:
        raise CacheError(
            f"{path}: cache was built for different inputs (stale digest); re-estimate")
    arrays = {}
    pos = 0
    for f in _ARRAY_FIELDS:
        shape = tuple(header["shapes"][f])
        count = int(np.prod(shape)) if shape else 1
        arrays[f] = np.frombuffer(
            payload, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += count * 8
    return MomentSet(
        beta_hat=float(header["beta_hat"]), beta_sem=float(header["beta_sem"]),
        samples=int(header["samples"]), seed=int(header["seed"]),
        spec_digest=header["spec_digest"], **arrays)


def cache_roundtrip(ms: MomentSet, path) -> MomentSet:
    """Write then re-read a moment set; returns the reloaded copy."""
    save_moments(ms, path)
    return load_moments(path, expected_digest=ms.spec_digest or None)
