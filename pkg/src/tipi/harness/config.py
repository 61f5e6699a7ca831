"""Experiment configuration.

Configs are TOML documents with a top-level section and three tables::

    seed = 1
    steps = 200000
    log_every = 1

    [plant]
    kind = "loop"
    lam = 0.0

    [controller]
    C0 = 1.2
    h0 = 0.1
    s0 = 0.8

    [exploration]
    mode = "onedim_deterministic"
    epsilon = 0.002
    learn_C = false

Every key is checked; unknown keys and wrongly typed values raise
:class:`~tipi.errors.ConfigError` naming the offending field path.
"""
from __future__ import annotations

import copy
import sys
from dataclasses import dataclass, field
from typing import Any

from ..errors import ConfigError
from ..exploration import MODES, VARIANTS

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

NUM = (int, float)

# name -> (accepted types, default); ``None`` default marks an optional key
TOP_KEYS = {
    "seed": ((int,), ...),
    "steps": ((int,), 1000),
    "log_every": ((int,), 1),
    "output": ((str,), ""),
    "fast_path": ((bool,), True),
    "name": ((str,), ""),
}
PLANT_KEYS = {
    "loop": {"n": ((int,), 1), "lam": (NUM, 0.0), "seed": ((int,), None)},
    "chain": {
        "N": ((int,), 6), "mass": (NUM, 1.0), "k": (NUM, 40.0), "c": (NUM, 4.0),
        "L0": (NUM, 1.0), "amp": (NUM, 0.3), "f_max": (NUM, 6.0), "t_servo": (NUM, 0.05),
        "mu_forward": (NUM, 0.05), "mu_backward": (NUM, 0.4), "gravity": (NUM, 9.81),
        "slope": (NUM, 0.0), "drag": (NUM, 0.0), "v_eps": (NUM, 1e-3), "stiction": ((bool,), True), "dt": (NUM, 0.01),
        "n_sub": ((int,), 10), "init_spread": (NUM, 1.0), "init_perturbation": (NUM, 0.0),
        "seed": ((int,), None), "perturbation_seed": ((int,), 1),
        "mu_forward_per_mass": ((list,), None), "mu_backward_per_mass": ((list,), None),
        "audit": ((bool,), False),
    },
    "oscillator": {"omega0": (NUM, 1.0), "zeta": (NUM, 0.05), "gain": (NUM, 1.0),
                   "lam": (NUM, 0.0), "dt": (NUM, 0.1), "x0": (NUM, 0.0), "v0": (NUM, 0.0),
                   "seed": ((int,), None)},
}
CONTROLLER_KINDS = ("tipi", "noise_control", "noise_signal")
CONTROLLER_KEYS = {
    "kind": ((str,), "tipi"),
    "activation": ((str,), "tanh"),
    "C0": (NUM + (list,), 0.0),
    "h0": (NUM + (list,), 0.0),
    "s0": (NUM + (list,), None),
    "V0": (NUM + (list,), 1.0),
    "T0": (NUM + (list,), 0.0),
    "b0": (NUM + (list,), 0.0),
    "eta_phi": (NUM, 0.01),
}
EXPLORATION_KEYS = {
    "epsilon": (NUM, 0.0),
    "tau": ((int,), 2),
    "alpha": (NUM, 1.0),
    "eta": (NUM, 0.01),
    "mode": ((str,), "neural_tau2"),
    "variant": ((str,), "one_shot"),
    "learn_C": ((bool,), True),
    "learn_h": ((bool,), True),
    "sigma_floor": (NUM, 1e-8),
    "sigma_init": (NUM, None),
    "freeze_after": ((int,), None),
}


def _check_table(data: Any, schema: dict, path: str) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(path, "expected a table")
    out = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(where, "unknown key")
        types, _ = schema[key]
        # bool is an int subclass; only accept it where bool is requested
        if isinstance(value, bool) and bool not in types:
            raise ConfigError(where, f"expected {_type_names(types)}, got bool")
        if not isinstance(value, types):
            raise ConfigError(where, f"expected {_type_names(types)}, got {type(value).__name__}")
        out[key] = value
    for key, (_, default) in schema.items():
        if key not in out:
            if default is ...:
                raise ConfigError(f"{path}.{key}" if path else key, "missing required key")
            if default is not None:
                out[key] = copy.deepcopy(default)
    return out


def _type_names(types) -> str:
    names = {int: "integer", float: "number", str: "string", bool: "boolean", list: "array"}
    return " or ".join(dict.fromkeys(names.get(t, t.__name__) for t in types))


@dataclass
class ExperimentConfig:
    """Validated experiment description (see module docstring for the layout)."""

    seed: int
    steps: int = 1000
    log_every: int = 1
    output: str = ""
    fast_path: bool = True
    name: str = ""
    plant: dict = field(default_factory=lambda: {"kind": "loop"})
    controller: dict = field(default_factory=dict)
    exploration: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("", "configuration must be a table")
        data = copy.deepcopy(data)
        sections = {k: data.pop(k) for k in ("plant", "controller", "exploration") if k in data}
        top = _check_table(data, TOP_KEYS, "")
        plant = sections.get("plant")
        if plant is None:
            raise ConfigError("plant", "missing required table")
        if not isinstance(plant, dict):
            raise ConfigError("plant", "expected a table")
        kind = plant.get("kind")
        if kind not in PLANT_KEYS:
            raise ConfigError("plant.kind", f"expected one of {sorted(PLANT_KEYS)}, got {kind!r}")
        plant_cfg = _check_table({k: v for k, v in plant.items() if k != "kind"},
                                 PLANT_KEYS[kind], "plant")
        plant_cfg["kind"] = kind
        ctrl = _check_table(sections.get("controller", {}), CONTROLLER_KEYS, "controller")
        if ctrl["kind"] not in CONTROLLER_KINDS:
            raise ConfigError("controller.kind",
                              f"expected one of {CONTROLLER_KINDS}, got {ctrl['kind']!r}")
        expl = _check_table(sections.get("exploration", {}), EXPLORATION_KEYS, "exploration")
        if expl["mode"] not in MODES:
            raise ConfigError("exploration.mode", f"expected one of {MODES}, got {expl['mode']!r}")
        if expl["variant"] not in VARIANTS:
            raise ConfigError("exploration.variant",
                              f"expected one of {VARIANTS}, got {expl['variant']!r}")
        for key, lo in (("steps", 0), ("log_every", 1)):
            if top[key] < lo:
                raise ConfigError(key, f"must be >= {lo}")
        if expl["epsilon"] < 0:
            raise ConfigError("exploration.epsilon", "must be >= 0")
        if not 0 < expl["eta"] < 1:
            raise ConfigError("exploration.eta", "must lie in (0, 1)")
        if expl["mode"] == "neural_tau2" and expl["tau"] != 2:
            raise ConfigError("exploration.tau", "mode neural_tau2 requires tau = 2")
        if expl["tau"] < 2:
            raise ConfigError("exploration.tau", "must be >= 2")
        if ctrl["eta_phi"] <= 0:
            raise ConfigError("controller.eta_phi", "must be positive")
        return cls(plant=plant_cfg, controller=ctrl, exploration=expl, **top)

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError("", f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("", f"{path}: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def from_toml_string(cls, text: str) -> "ExperimentConfig":
        try:
            return cls.from_dict(tomllib.loads(text))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("", str(exc)) from exc

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in TOP_KEYS}
        d["plant"] = copy.deepcopy(self.plant)
        d["controller"] = copy.deepcopy(self.controller)
        d["exploration"] = copy.deepcopy(self.exploration)
        return d

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        """Copy with dotted-path overrides, e.g. ``{"exploration.epsilon": 0.01}``."""
        d = self.to_dict()
        for path, value in overrides.items():
            parts = path.split(".")
            node = d
            for p in parts[:-1]:
                if p not in node or not isinstance(node[p], dict):
                    raise ConfigError(path, "unknown section")
                node = node[p]
            node[parts[-1]] = value
        return ExperimentConfig.from_dict(d)


__all__ = ["ExperimentConfig", "tomllib"]
