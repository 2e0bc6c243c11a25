"""Run configuration: 'key = value' config files plus flag overrides.

Precedence: command-line flags > config file > per-task defaults. The
file grammar is UTF-8 text, one 'key = value' per line, '#' starts a
comment. Every error names the offending key. Referenced input paths
must exist at parse time.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

from .energy import EnergyParams
from .errors import ConfigError
from .propagation import PropagationConfig
from .tasks import TASK_KINDS, TaskConfig, default_task_config

PREDICTOR_MODES = ("convnet", "classical", "identity")

_PATH_KEYS = ("input", "output", "truth", "kernel", "mask", "weights_dir",
              "trace", "report", "manifest")
# Paths we only write; their existence is not required at parse time.
_OUTPUT_PATH_KEYS = ("output", "trace", "report")

_ENERGY_KEYS = {"lambda": "lam", "theta": "theta", "alpha": "alpha", "beta": "beta"}
_PROP_KEYS = ("eta", "c_ratio", "t_max", "k_max", "stop_tol", "variant")
_TASK_KEYS = ("dark_patch", "dark_omega", "t_floor", "light_fraction")
_SCALAR_KEYS = ("task", "predictor", "seed", "strict", "scale")

_ALL_KEYS = (
    set(_PATH_KEYS)
    | set(_ENERGY_KEYS)
    | set(_PROP_KEYS)
    | set(_TASK_KEYS)
    | set(_SCALAR_KEYS)
)

_INT_KEYS = {"t_max", "k_max", "seed", "scale", "dark_patch"}
_FLOAT_KEYS = {"lambda", "theta", "alpha", "beta", "eta", "c_ratio", "stop_tol",
               "dark_omega", "t_floor", "light_fraction"}
_BOOL_KEYS = {"strict"}


@dataclass
class RunConfig:
    task: str | None = None
    paths: dict[str, str] = field(default_factory=dict)
    predictor_mode: str = "classical"
    seed: int = 0
    strict: bool = False
    scale: int = 2
    overrides: dict[str, object] = field(default_factory=dict)

    @property
    def energy(self) -> EnergyParams:
        kwargs = {
            dest: self.overrides[key]
            for key, dest in _ENERGY_KEYS.items()
            if key in self.overrides
        }
        try:
            return replace(EnergyParams(), **kwargs)
        except ConfigError as exc:
            raise ConfigError(f"energy parameters: {exc}") from exc

    @property
    def propagation(self) -> PropagationConfig:
        kwargs = {k: self.overrides[k] for k in _PROP_KEYS if k in self.overrides}
        return replace(PropagationConfig(), **kwargs)

    def effective_task_config(self, kind: str) -> TaskConfig:
        """Per-task defaults with any explicit overrides applied on top."""
        base = default_task_config(kind)
        energy_kwargs = {
            dest: self.overrides[key]
            for key, dest in _ENERGY_KEYS.items()
            if key in self.overrides
        }
        prop_kwargs = {k: self.overrides[k] for k in _PROP_KEYS if k in self.overrides}
        task_kwargs = {k: self.overrides[k] for k in _TASK_KEYS if k in self.overrides}
        return replace(
            base,
            energy=replace(base.energy, **energy_kwargs),
            propagation=replace(base.propagation, **prop_kwargs),
            **task_kwargs,
        )


def _convert(key: str, raw: str):
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _BOOL_KEYS:
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
    except ValueError as exc:
        raise ConfigError(f"key {key}: cannot parse value {raw!r}") from exc
    return raw.strip()


def read_config_file(path) -> dict[str, object]:
    values: dict[str, object] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _ALL_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    return values


def parse_config(
    file_path=None, flags: dict[str, object] | None = None
) -> RunConfig:
    """Merge a config file (optional) with flag overrides (flags win)."""
    merged: dict[str, object] = {}
    if file_path is not None:
        merged.update(read_config_file(file_path))
    for key, value in (flags or {}).items():
        if value is None:
            continue
        if key not in _ALL_KEYS:
            raise ConfigError(f"unknown key {key!r}")
        merged[key] = _convert(key, value) if isinstance(value, str) else value

    cfg = RunConfig()
    for key, value in merged.items():
        if key == "task":
            if value not in TASK_KINDS:
                raise ConfigError(f"key task: unknown task {value!r}")
            cfg.task = value
        elif key == "predictor":
            if value not in PREDICTOR_MODES:
                raise ConfigError(
                    f"key predictor: must be one of {PREDICTOR_MODES}, got {value!r}"
                )
            cfg.predictor_mode = value
        elif key == "seed":
            cfg.seed = int(value)
        elif key == "strict":
            cfg.strict = bool(value)
        elif key == "scale":
            if int(value) < 2:
                raise ConfigError(f"key scale: must be >= 2, got {value}")
            cfg.scale = int(value)
        elif key in _PATH_KEYS:
            cfg.paths[key] = str(value)
        else:
            cfg.overrides[key] = value

    # Materialize once so constraint violations surface at parse time.
    try:
        cfg.energy
        cfg.propagation
    except ConfigError:
        raise
    for key in _TASK_KEYS:
        if key in cfg.overrides:
            value = cfg.overrides[key]
            if key == "dark_patch" and (value < 1 or value % 2 == 0):
                raise ConfigError(f"key dark_patch: must be odd >= 1, got {value}")
            if key == "dark_omega" and not 0 < value <= 1:
                raise ConfigError(f"key dark_omega: must lie in (0,1], got {value}")
            if key == "t_floor" and not 0 < value < 1:
                raise ConfigError(f"key t_floor: must lie in (0,1), got {value}")
            if key == "light_fraction" and not 0 < value <= 0.01:
                raise ConfigError(
                    f"key light_fraction: must lie in (0, 0.01], got {value}"
                )

    for key, path in cfg.paths.items():
        if key not in _OUTPUT_PATH_KEYS and not os.path.exists(path):
            raise ConfigError(f"key {key}: path does not exist: {path}")
    return cfg
