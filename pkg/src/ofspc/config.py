"""JSON configuration ingestion.

Schema (all matrices row-major nested arrays)::

    {"A": [[..]], "B": [[..]], "C": [[..]],
     "Sigma_x0": [[..]], "Sigma_w": [[..]], "Sigma_v": [[..]],
     "Q": [[..]], "Q_N": [[..]], "R": [[..]],
     "N": int, "N_r": int|null, "u_max": num|list,
     "r": num, "epsilon": num, "zeta_fraction": num,
     "psi": "sigmoid"|"saturation", "psi_max": num,
     "steps": int, "paths": int, "seed": int}

Constant ``Q``/``R`` are broadcast across stages; ``N_r`` of null defaults to
the reachability index computed at load time; ``u_max`` may be a list, in
which case it is a sweep over input-authority levels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .control_loop import SimConfig
from .errors import ConfigurationError
from .model import SystemSpec
from .policy import PsiSpec

_REQUIRED = ("A", "B", "C", "Sigma_x0", "Sigma_w", "Sigma_v",
             "Q", "Q_N", "R", "N", "u_max")

_DEFAULTS = {"N_r": None, "r": 1.0, "epsilon": 0.1, "zeta_fraction": 0.9,
             "psi": "sigmoid", "psi_max": 1.0, "steps": 90, "paths": 100,
             "seed": 0, "moment_samples": 100_000}


@dataclass(frozen=True)
class LoadedConfig:
    spec: SystemSpec              # with u_max = first sweep value
    sim: SimConfig
    u_max_values: tuple           # one or more input bounds
    raw: dict


def _matrix(doc: dict, key: str) -> np.ndarray:
    val = doc[key]
    try:
        arr = np.asarray(val, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"field {key!r} is not a numeric matrix: {exc}")
    if arr.ndim != 2:
        raise ConfigurationError(f"field {key!r} must be a nested (2-D) array")
    return arr


def parse_config(doc: dict) -> LoadedConfig:
    """Build the system and simulation configuration from a parsed JSON document."""
    if not isinstance(doc, dict):
        raise ConfigurationError("configuration document must be a JSON object")
    missing = [k for k in _REQUIRED if k not in doc]
    if missing:
        raise ConfigurationError(f"missing required field(s): {', '.join(missing)}")

    u_max_field = doc["u_max"]
    if isinstance(u_max_field, (list, tuple)):
        if not u_max_field:
            raise ConfigurationError("u_max list must be non-empty")
        u_vals = tuple(float(v) for v in u_max_field)
    else:
        u_vals = (float(u_max_field),)
    if any(not (v > 0) for v in u_vals):
        raise ConfigurationError("every u_max value must be positive")

    opts = dict(_DEFAULTS)
    for k in opts:
        if k in doc and doc[k] is not None:
            opts[k] = doc[k]

    try:
        N = int(doc["N"])
    except (TypeError, ValueError):
        raise ConfigurationError("field 'N' must be an integer")

    spec = SystemSpec.constant_weights(
        A=_matrix(doc, "A"), B=_matrix(doc, "B"), C=_matrix(doc, "C"),
        Sigma_x0=_matrix(doc, "Sigma_x0"), Sigma_w=_matrix(doc, "Sigma_w"),
        Sigma_v=_matrix(doc, "Sigma_v"), Q=_matrix(doc, "Q"),
        Q_N=_matrix(doc, "Q_N"), R=_matrix(doc, "R"),
        N=N, u_max=u_vals[0])

    psi = PsiSpec(kind=str(opts["psi"]), psi_max=float(opts["psi_max"]))
    sim = SimConfig(psi=psi,
                    N_r=None if opts["N_r"] is None else int(opts["N_r"]),
                    r=float(opts["r"]), epsilon=float(opts["epsilon"]),
                    zeta_fraction=float(opts["zeta_fraction"]),
                    steps=int(opts["steps"]), paths=int(opts["paths"]),
                    seed=int(opts["seed"]),
                    moment_samples=int(opts["moment_samples"]))
    return LoadedConfig(spec=spec, sim=sim, u_max_values=u_vals, raw=doc)


def load_config(path) -> LoadedConfig:
    """Read and parse a JSON configuration file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read configuration {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"malformed JSON in {path} at line {exc.lineno}, column {exc.colno}: {exc.msg}")
    return parse_config(doc)
