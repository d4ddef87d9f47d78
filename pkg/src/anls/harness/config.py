"""Flat key-value experiment configuration.

Format: UTF-8 lines of ``key = value``; lists are comma-separated; '#'
starts a comment.  Every config canonicalizes to a unique byte string
(fixed key order, shortest-roundtrip floats) whose SHA-256 prefix is the
config hash embedded in all outputs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

EXPERIMENTS = (
    "enhance", "cauchy_enhancement", "defect", "evolve", "strichartz",
    "cauchy_solution", "propagation_1d", "energy_bound",
)


class ConfigError(ValueError):
    pass


def _parse_bool(tok: str):
    if tok == "true":
        return True
    if tok == "false":
        return False
    raise ValueError(tok)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_fmt(v) for v in value)
    return str(value)


# key -> (type tag, default); REQUIRED means no default.
REQUIRED = object()

_COMMON = {
    "experiment": ("str", REQUIRED),
    "dim": ("int", 2),
    "n": ("int", 256),
    "box_length": ("float", 16.0),
    "seed": ("int", 1),
    "out_dir": ("str", "out"),
    "kappa": ("float", 0.05),
    "mu": ("float", 0.25),
    "loc_base_level": ("float", 2.0),
    "loc_rate": ("float", 0.0),
}

_PER_EXPERIMENT = {
    "enhance": {
        "eps": ("float", REQUIRED),
    },
    "cauchy_enhancement": {
        "eps_factors": ("list_float", [8.0, 4.0, 2.0]),
    },
    "defect": {
        "eps_factor": ("float", 4.0),
        "trunc_level": ("int", 1),
        "fit_lo": ("int", 1),
        "fit_hi": ("int", 0),       # 0 resolves to jmax-1
        "n_seeds": ("int", 8),
        "mode": ("str", "both"),
    },
    "evolve": {
        "eps_factor": ("float", 4.0),
        "scheme": ("str", "crank_nicolson_linear"),
        "m": ("float", 3.0),
        "beta": ("float", 0.75),
        "dt": ("float", 0.01),
        "t_end": ("float", 1.0),
        "krylov_tol": ("float", 1e-10),
        "krylov_max": ("int", 400),
        "snapshot_every": ("int", 0),
        "amplitude": ("float", 1.0),
    },
    "strichartz": {
        "eps_factor": ("float", 4.0),
        "p": ("float", 4.0),
        "q": ("float", 4.0),
        "gamma": ("float", 0.0),
        "j_lo": ("int", 1),
        "j_hi": ("int", 0),
        "dt": ("float", 0.01),
        "t_end": ("float", 1.0),
        "krylov_tol": ("float", 1e-6),
        "trunc_level": ("int", 1),
    },
    "cauchy_solution": {
        "eps_factors": ("list_float", [8.0, 4.0, 2.0]),
        "m": ("float", 3.0),
        "dt": ("float", 0.005),
        "t_end": ("float", 0.5),
        "krylov_tol": ("float", 1e-6),
        "amplitude": ("float", 1.0),
    },
    "propagation_1d": {
        "eps_factor": ("float", 4.0),
        "m": ("float", 3.0),
        "dt": ("float", 0.01),
        "t_end": ("float", 1.0),
        "krylov_tol": ("float", 1e-9),
        "perturb": ("float", 1e-3),
        "amplitude": ("float", 1.0),
    },
    "energy_bound": {
        "eps_factor": ("float", 4.0),
        "scheme": ("str", "strang_nls"),
        "m": ("float", 3.0),
        "beta": ("float", 0.75),
        "dt": ("float", 0.02),
        "intervals": ("list_float", [0.5, 1.0, 2.0]),
        "krylov_tol": ("float", 1e-6),
        "amplitude": ("float", 1.0),
    },
}

_PARSERS = {
    "int": int,
    "float": float,
    "str": str,
    "bool": _parse_bool,
    "list_float": lambda tok: [float(t) for t in tok.split(",") if t != ""],
    "list_int": lambda tok: [int(t) for t in tok.split(",") if t != ""],
}


def _schema_for(experiment: str) -> dict:
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment '{experiment}'")
    schema = dict(_COMMON)
    schema.update(_PER_EXPERIMENT[experiment])
    return schema


@dataclass
class ExperimentConfig:
    experiment: str
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(emit_config(self).encode()).hexdigest()[:12]


def parse_config(text: str) -> ExperimentConfig:
    """Parse, validate against the experiment schema, and fill defaults."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, tok = stripped.partition("=")
        key, tok = key.strip(), tok.strip()
        if key in raw:
            raise ConfigError(f"duplicate key '{key}'")
        raw[key] = tok

    if "experiment" not in raw:
        raise ConfigError("missing required key 'experiment'")
    experiment = raw["experiment"]
    schema = _schema_for(experiment)

    for key in raw:
        if key not in schema:
            raise ConfigError(f"unknown key '{key}'")

    values = {}
    for key, (tag, default) in schema.items():
        if key in raw:
            try:
                values[key] = _PARSERS[tag](raw[key])
            except ValueError:
                raise ConfigError(
                    f"key '{key}': cannot parse {raw[key]!r} as {tag}") from None
        elif default is REQUIRED:
            raise ConfigError(f"missing required key '{key}'")
        else:
            values[key] = default if not isinstance(default, list) else list(default)

    _validate(experiment, values)
    return ExperimentConfig(experiment=experiment, values=values)


def _validate(experiment: str, v: dict) -> None:
    if v["dim"] not in (1, 2, 3):
        raise ConfigError("dim must be 1, 2 or 3")
    n = v["n"]
    if n < 8 or n & (n - 1):
        raise ConfigError("n must be a power of two >= 8")
    if v["box_length"] <= 0:
        raise ConfigError("box_length must be positive")
    if "dt" in v and v["dt"] <= 0:
        raise ConfigError("dt must be positive")
    if "t_end" in v and v["t_end"] <= 0:
        raise ConfigError("t_end must be positive")
    if "eps" in v and v["eps"] < 0:
        raise ConfigError("eps must be nonnegative")
    if "m" in v and v["m"] < 1:
        raise ConfigError("m must be >= 1")
    if "beta" in v and v["beta"] <= 0:
        raise ConfigError("beta must be positive")
    if "mode" in v and v["mode"] not in ("sharp", "naive", "both"):
        raise ConfigError("mode must be sharp, naive or both")
    if "scheme" in v and v["scheme"] not in (
            "crank_nicolson_linear", "strang_nls", "strang_hartree"):
        raise ConfigError("scheme must be crank_nicolson_linear, strang_nls "
                          "or strang_hartree")
    if experiment == "propagation_1d" and v["dim"] != 1:
        raise ConfigError("propagation_1d requires dim = 1")
    if experiment == "energy_bound" and v["dim"] == 1:
        raise ConfigError("energy_bound requires dim in {2, 3}")


def emit_config(cfg: ExperimentConfig) -> str:
    """Canonical byte-stable form: schema order, normalized literals."""
    schema = _schema_for(cfg.experiment)
    lines = [f"{key} = {_fmt(cfg.values[key])}" for key in schema]
    return "\n".join(lines) + "\n"
