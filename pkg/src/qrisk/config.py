"""Run configuration: a strict YAML schema.

Every section and key is required and unknown keys are rejected, each
error naming the offending key path (``dp.n_x``, ``model.foo``, ...).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .dynprog.grid import DPConfig
from .model import ModelError, TwoLevelParams


class ConfigError(ValueError):
    """Invalid run configuration."""


MODEL_KEYS = ("kappa_f", "kappa_s", "a", "b", "c", "mu", "eta", "T", "dt", "u_max")
DP_KEYS = ("n_x", "n_y", "n_z", "dt_dp", "n_u", "search_every", "store_every", "terminal")
MC_KEYS = ("n_paths", "master_seed", "batch_size")
OUTPUT_KEYS = ("directory",)
SCHEMA = {
    "model": MODEL_KEYS,
    "initial_state": None,
    "dp": DP_KEYS,
    "mc": MC_KEYS,
    "outputs": OUTPUT_KEYS,
}
_INT_KEYS = {"dp.n_x", "dp.n_y", "dp.n_z", "dp.n_u", "dp.search_every", "dp.store_every",
             "mc.n_paths", "mc.master_seed", "mc.batch_size"}
_STR_KEYS = {"dp.terminal", "outputs.directory"}


@dataclass(frozen=True)
class RunConfig:
    params: TwoLevelParams
    initial_state: tuple[float, float, float]
    dp: DPConfig
    n_paths: int
    master_seed: int
    batch_size: int
    directory: str

    def as_dict(self) -> dict:
        dp = self.dp.as_dict()
        dp["terminal"] = dp.pop("rn_terminal")
        dp.pop("backend")
        return {
            "model": self.params.as_dict(),
            "initial_state": list(self.initial_state),
            "dp": dp,
            "mc": {"n_paths": self.n_paths, "master_seed": self.master_seed, "batch_size": self.batch_size},
            "outputs": {"directory": self.directory},
        }

    def digest(self) -> str:
        """Hash of the canonical JSON form of the resolved configuration.

        The output directory is excluded: it does not influence any result.
        """
        tree = self.as_dict()
        tree.pop("outputs")
        text = json.dumps(tree, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _typed(path: str, value):
    if path in _STR_KEYS:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if isinstance(value, bool):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    if path in _INT_KEYS:
        if not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _section(tree: dict, name: str, keys) -> dict:
    sec = tree[name]
    if not isinstance(sec, dict):
        raise ConfigError(f"{name}: expected a mapping")
    for key in sec:
        if key not in keys:
            raise ConfigError(f"{name}.{key}: unknown key")
    for key in keys:
        if key not in sec:
            raise ConfigError(f"{name}.{key}: missing key")
    return {key: _typed(f"{name}.{key}", sec[key]) for key in keys}


def parse_config(tree) -> RunConfig:
    """Validate a parsed YAML tree and build the run configuration."""
    if not isinstance(tree, dict):
        raise ConfigError("<root>: expected a mapping")
    for key in tree:
        if key not in SCHEMA:
            raise ConfigError(f"{key}: unknown key")
    for key in SCHEMA:
        if key not in tree:
            raise ConfigError(f"{key}: missing key")
    model = _section(tree, "model", MODEL_KEYS)
    dp = _section(tree, "dp", DP_KEYS)
    mc = _section(tree, "mc", MC_KEYS)
    out = _section(tree, "outputs", OUTPUT_KEYS)
    init = tree["initial_state"]
    if not (isinstance(init, list) and len(init) == 3):
        raise ConfigError("initial_state: expected a list [x, y, z]")
    init = tuple(_typed(f"initial_state[{i}]", v) for i, v in enumerate(init))
    if sum(v * v for v in init) > 1.0 + 1e-12:
        raise ConfigError("initial_state: Bloch vector must satisfy x^2 + y^2 + z^2 <= 1")
    try:
        params = TwoLevelParams(**model)
    except (ModelError, ValueError) as exc:
        raise ConfigError(f"model: {exc}") from None
    terminal = dp.pop("terminal")
    try:
        dpc = DPConfig(rn_terminal=terminal, **dp)
    except ValueError as exc:
        raise ConfigError(f"dp: {exc}") from None
    if mc["n_paths"] < 1:
        raise ConfigError("mc.n_paths: must be positive")
    if mc["batch_size"] < 1:
        raise ConfigError("mc.batch_size: must be positive")
    if mc["master_seed"] < 0:
        raise ConfigError("mc.master_seed: must be non-negative")
    return RunConfig(params, init, dpc, mc["n_paths"], mc["master_seed"], mc["batch_size"], out["directory"])


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        tree = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return parse_config(tree)


def default_tree() -> dict:
    """Configuration tree holding the library defaults."""
    p = TwoLevelParams()
    dp = DPConfig()
    return {
        "model": p.as_dict(),
        "initial_state": [0.0, 0.0, 1.0],
        "dp": {"n_x": dp.n_x, "n_y": dp.n_y, "n_z": dp.n_z, "dt_dp": dp.dt_dp, "n_u": dp.n_u,
               "search_every": dp.search_every, "store_every": dp.store_every, "terminal": dp.rn_terminal},
        "mc": {"n_paths": 10000, "master_seed": 12345, "batch_size": 500},
        "outputs": {"directory": "out"},
    }
