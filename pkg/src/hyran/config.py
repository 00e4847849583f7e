"""INI configuration files for the CLI.

Recognised sections and keys (all optional)::

    [experiment]   algos, T, reps, seed, out_dir, workers, experimental
    [environment]  env, d, N, sigma
    [hyran]        p, schedule, impute_mode, impute_timing, delta
    [baselines]    alpha, v
    [grid]         hyran, linucb, lints, suplinucb, drts  (comma-separated values)

Command-line flags override file values.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from hyran.errors import InvalidArgument

_TYPES = {
    "experiment": {"algos": "list", "T": int, "reps": int, "seed": int, "out_dir": str, "workers": int,
                   "experimental": "bool"},
    "environment": {"env": str, "d": int, "N": int, "sigma": float},
    "hyran": {"p": float, "schedule": str, "impute_mode": str, "impute_timing": str, "delta": float},
    "baselines": {"alpha": float, "v": float},
}
GRID_ALGOS = ("hyran", "linucb", "lints", "suplinucb", "drts")


def load_config(path: str | Path) -> dict:
    """Flatten an INI file into ``{key: value}``; grid lists go under ``"grid"``."""
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep "T" and "N" case-sensitive
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise InvalidArgument(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise InvalidArgument(f"malformed config {path}: {exc}") from exc
    out: dict = {}
    for section in parser.sections():
        if section == "grid":
            grid = {}
            for algo, raw in parser.items(section):
                if algo not in GRID_ALGOS:
                    raise InvalidArgument(f"unknown grid algorithm {algo!r} in {path}")
                grid[algo] = _floats(raw, f"grid.{algo}")
            out["grid"] = grid
            continue
        if section not in _TYPES:
            raise InvalidArgument(f"unknown config section [{section}] in {path}")
        types = _TYPES[section]
        for key, raw in parser.items(section):
            if key not in types:
                raise InvalidArgument(f"unknown key {key!r} in [{section}] of {path}")
            out[key] = _convert(raw, types[key], f"{section}.{key}")
    return out


def _floats(raw: str, where: str) -> list[float]:
    try:
        return [float(v) for v in raw.split(",") if v.strip()]
    except ValueError as exc:
        raise InvalidArgument(f"{where}: expected comma-separated numbers, got {raw!r}") from exc


def _convert(raw: str, kind, where: str):
    if kind == "list":
        return [v.strip() for v in raw.split(",") if v.strip()]
    if kind == "bool":
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise InvalidArgument(f"{where}: expected a boolean, got {raw!r}")
    try:
        return kind(raw.strip())
    except ValueError as exc:
        raise InvalidArgument(f"{where}: cannot parse {raw!r}") from exc


def merge(file_values: dict, cli_values: dict) -> dict:
    """CLI values that are not ``None`` win over file values."""
    out = dict(file_values)
    out.update({k: v for k, v in cli_values.items() if v is not None})
    return out
