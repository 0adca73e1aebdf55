"""Run configuration: INI-style files with strict schemas.

Unknown sections or keys are hard errors (silent typos are the main
reproducibility hazard).  Every key can be overridden by an environment
variable ACMA_<SECTION>__<KEY>.  f / phi / rho specs are expressions over
the coordinates (x1, y1, ..., plus r2 = |z|^2) evaluated with numpy.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

ENV_PREFIX = "ACMA_"

_SCHEMA = {
    "run": {
        "command": str,
        "seed": int,
        "out": str,
        "threads": int,
    },
    "domain": {
        "n": int,
        "rho": str,
        "radius": float,
        "semi_axes": str,
        "box_lo": float,
        "box_hi": float,
        "h": float,
    },
    "structure": {
        "family": str,
        "epsilon": float,
        "table": str,
    },
    "problem": {
        "f": str,
        "phi": str,
        "exact": str,
    },
    "solver": {
        "tol_residual": float,
        "tol_step": float,
        "max_newton": int,
        "delta": float,
        "initial_damping": float,
    },
    "maximal": {
        "schedule": str,
    },
    "disks": {
        "count": int,
        "radius": float,
        "tol": float,
        "point": str,
    },
    "bench": {
        "h_list": str,
    },
    "verify": {
        "solution": str,
        "tau_factor": float,
    },
}

_DEFAULTS = {
    "run": {"seed": 0, "out": "out", "threads": 0, "command": ""},
    "domain": {"rho": "ball", "radius": 1.0, "semi_axes": "", "box_lo": -1.25,
               "box_hi": 1.25},
    "structure": {"family": "standard", "epsilon": 0.0, "table": ""},
    "problem": {"f": "1", "phi": "0", "exact": ""},
    "solver": {"tol_residual": -1.0, "tol_step": -1.0, "max_newton": 60,
               "delta": 0.0, "initial_damping": 1.0},
    "maximal": {"schedule": "2,4,8,16,32"},
    "disks": {"count": 8, "radius": 0.1, "tol": 1e-9, "point": ""},
    "bench": {"h_list": "0.25,0.125"},
    "verify": {"solution": "", "tau_factor": 10.0},
}

_REQUIRED = {"domain": ("n", "h")}


@dataclass
class RunConfig:
    command: str
    sections: dict
    seed: int
    out: str
    threads: int
    path: str = ""

    def get(self, section, key):
        return self.sections[section][key]


def _coerce(section, key, raw):
    typ = _SCHEMA[section][key]
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return str(raw)
    except ValueError:
        raise ConfigError(
            f"[{section}] {key} = {raw!r} is not a valid {typ.__name__}"
        ) from None


def load_config(path, command=None):
    """Parse, validate, and env-override a config file."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")
    sections = {s: dict(kv) for s, kv in _DEFAULTS.items()}
    for sec in parser.sections():
        if sec not in _SCHEMA:
            raise ConfigError(f"unknown config section [{sec}]")
        for key, raw in parser.items(sec):
            if key not in _SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in section [{sec}]")
            sections[sec][key] = _coerce(sec, key, raw)
    for env, raw in os.environ.items():
        if not env.startswith(ENV_PREFIX) or "__" not in env:
            continue
        sec, key = env[len(ENV_PREFIX):].lower().split("__", 1)
        if sec in _SCHEMA and key in _SCHEMA[sec]:
            sections[sec][key] = _coerce(sec, key, raw)
    for sec, keys in _REQUIRED.items():
        for key in keys:
            if key not in sections[sec]:
                raise ConfigError(f"missing required key {key!r} in [{sec}]")
    cfg_command = sections["run"].get("command", "")
    if command is not None and cfg_command and cfg_command != command:
        raise ConfigError(
            f"config names command {cfg_command!r} but {command!r} was invoked"
        )
    return RunConfig(
        command=command or cfg_command,
        sections=sections,
        seed=int(sections["run"]["seed"]),
        out=str(sections["run"]["out"]),
        threads=int(sections["run"]["threads"]),
        path=str(path),
    )


def expression_callable(expr, n):
    """Vectorized callable on points (..., 2n) from a coordinate expression."""
    expr = expr.strip()
    names = {}
    for k in range(n):
        names[f"x{k + 1}"] = 2 * k
        names[f"y{k + 1}"] = 2 * k + 1
    safe = {
        "sqrt": np.sqrt, "sin": np.sin, "cos": np.cos, "exp": np.exp,
        "log": np.log, "abs": np.abs, "pi": np.pi, "maximum": np.maximum,
        "minimum": np.minimum,
    }
    code = compile(expr, "<config-expression>", "eval")
    for name in code.co_names:
        if name not in names and name not in safe and name != "r2":
            raise ConfigError(f"unknown name {name!r} in expression {expr!r}")

    def fn(points):
        points = np.asarray(points, dtype=float)
        local = {k: points[..., j] for k, j in names.items()}
        local["r2"] = (points * points).sum(axis=-1)
        out = eval(code, {"__builtins__": {}}, {**safe, **local})
        return np.broadcast_to(np.asarray(out, dtype=float), points.shape[:-1])

    return fn


def build_geometry(config):
    """Domain, structure, metric, and frame from a validated config."""
    from .geometry import (
        induced_metric, sheared_structure, split_frame, standard_structure,
        structure_from_table,
    )
    from .grid import ball_rho, ellipsoid_rho, grid_build

    dom_sec = config.sections["domain"]
    n = int(dom_sec["n"])
    h = float(dom_sec["h"])
    box = (float(dom_sec["box_lo"]), float(dom_sec["box_hi"]))

    fam = config.sections["structure"]["family"]
    if fam == "standard":
        structure = standard_structure(n)
    elif fam == "sheared":
        structure = sheared_structure(
            float(config.sections["structure"]["epsilon"]), n=n
        )
    elif fam == "table":
        structure = structure_from_table(
            config.sections["structure"]["table"], n
        )
    else:
        raise ConfigError(f"unknown structure family {fam!r}")
    metric = induced_metric(structure)

    rho_spec = dom_sec["rho"]
    if rho_spec == "ball":
        rho = ball_rho(n, radius=float(dom_sec["radius"]))
    elif rho_spec.startswith("ellipsoid"):
        axes = [float(a) for a in str(dom_sec["semi_axes"]).split(",") if a]
        if len(axes) != 2 * n:
            raise ConfigError("semi_axes must list 2n values for ellipsoid")
        rho = ellipsoid_rho(axes)
    else:
        rho = expression_callable(rho_spec, n)

    frame = split_frame(structure, metric=metric,
                        region=(np.full(2 * n, box[0]), np.full(2 * n, box[1])),
                        fd_h=h)
    domain = grid_build(rho, box, h, n, structure=structure, frame=frame)
    return domain, structure, metric, frame
