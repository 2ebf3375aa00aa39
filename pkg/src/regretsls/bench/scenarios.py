"""Benchmark scenarios and their experiment configuration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
import yaml

from ..evaluation import NOISE_KINDS
from ..ltv_model import (
    CostOperator,
    LiftedSystem,
    LtvSystem,
    NoiseBounds,
    SafetySpec,
    build_box_bounds,
    build_box_safety,
    build_cost,
    build_quadrotor_system,
    build_synthetic_system,
    lift,
)

SCENARIOS = ("synthetic-stable", "synthetic-unstable", "quadrotor", "custom")
CONTROLLERS = ("regret", "h2", "hinf", "clairvoyant")

# Per-scenario constants. Bounds are per coordinate; scalars broadcast.
SCENARIO_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "synthetic-stable": dict(rho=0.85, state_bound=5.0, input_bound=5.0, noise_w=1.0, noise_e=1.0,
                             desk_max=15, full_max=30),
    "synthetic-unstable": dict(rho=1.05, state_bound=30.0, input_bound=30.0, noise_w=1.0, noise_e=1.0,
                               desk_max=15, full_max=30),
    "quadrotor": dict(rho=None, state_bound=5.0, input_bound=(math.pi, math.pi, 20.0), noise_w=0.1,
                      noise_e=0.1, desk_max=12, full_max=25),
    "custom": dict(rho=None, state_bound=None, input_bound=None, noise_w=None, noise_e=None,
                   desk_max=15, full_max=30),
}


class ConfigError(ValueError):
    pass


def _bound(val):
    if val is None:
        return None
    if isinstance(val, (int, float)):
        return float(val)
    return tuple(float(v) for v in val)


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "synthetic-stable"
    rho: Optional[float] = None
    horizons: Tuple[int, ...] = ()
    trials: int = 100
    noise: Tuple[str, ...] = NOISE_KINDS
    controllers: Tuple[str, ...] = CONTROLLERS
    base_seed: int = 0
    state_bound: Any = None
    input_bound: Any = None
    noise_w: Any = None
    noise_e: Any = None
    safety: bool = True
    output: str = "results"
    tol: float = 1e-8
    backend: str = "CLARABEL"
    full_scale: bool = False
    # custom scenario only: matrices, or lists of matrices cycled over t
    A: Any = None
    B: Any = None
    C: Any = None
    Q: Any = 1.0
    R: Any = 1.0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        d = SCENARIO_DEFAULTS[self.scenario]
        fill = {}
        for key in ("rho", "state_bound", "input_bound", "noise_w", "noise_e"):
            if getattr(self, key) is None and d[key] is not None:
                fill[key] = d[key]
        if not self.horizons:
            fill["horizons"] = tuple(range(2, (d["full_max"] if self.full_scale else d["desk_max"]) + 1))
        for key, val in fill.items():
            object.__setattr__(self, key, val)
        for key in ("state_bound", "input_bound", "noise_w", "noise_e"):
            object.__setattr__(self, key, _bound(getattr(self, key)))
        object.__setattr__(self, "horizons", tuple(int(t) for t in self.horizons))
        object.__setattr__(self, "noise", tuple(self.noise))
        object.__setattr__(self, "controllers", tuple(self.controllers))
        self._validate()

    def _validate(self):
        if any(t < 2 for t in self.horizons):
            raise ConfigError(f"every horizon must be at least 2, got {list(self.horizons)}")
        if len(set(self.horizons)) != len(self.horizons):
            raise ConfigError("horizons must be distinct")
        if self.trials < 1:
            raise ConfigError(f"trials must be at least 1, got {self.trials}")
        bad = [k for k in self.noise if k not in NOISE_KINDS]
        if bad or not self.noise:
            raise ConfigError(f"unknown noise kinds {bad}; expected a subset of {NOISE_KINDS}")
        bad = [c for c in self.controllers if c not in CONTROLLERS]
        if bad or not self.controllers:
            raise ConfigError(f"unknown controllers {bad}; expected a subset of {CONTROLLERS}")
        if self.scenario.startswith("synthetic") and not (self.rho and self.rho > 0):
            raise ConfigError("synthetic scenarios need a positive rho")
        if self.scenario == "custom":
            missing = [k for k in ("A", "B", "C", "state_bound", "input_bound", "noise_w", "noise_e")
                       if getattr(self, k) is None]
            if missing:
                raise ConfigError(f"custom scenario requires {missing}")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")


@dataclass(frozen=True)
class Scenario:
    name: str
    system: LtvSystem
    lifted: LiftedSystem
    cost: CostOperator
    safety: Optional[SafetySpec]
    bounds: NoiseBounds
    box_limits: np.ndarray = field(repr=False)  # |[x; u]| limits as one vector


def _sequence(M, T: int):
    arr = np.asarray(M, dtype=float)
    if arr.ndim == 2:
        return [arr] * T
    if arr.ndim == 3:
        return [arr[t % arr.shape[0]] for t in range(T)]
    raise ConfigError("custom matrices must be 2-D or a list of 2-D matrices")


def _weight(W, n: int) -> np.ndarray:
    # a scalar weight means that multiple of the identity
    W = np.asarray(W, dtype=float)
    return W * np.eye(n) if W.ndim == 0 else W


def build_system(config: ScenarioConfig, T: int) -> LtvSystem:
    if config.scenario.startswith("synthetic"):
        return build_synthetic_system(config.rho, T)
    if config.scenario == "quadrotor":
        return build_quadrotor_system(T)
    return LtvSystem(_sequence(config.A, T), _sequence(config.B, T), _sequence(config.C, T))


def build_scenario(config: ScenarioConfig, T: int) -> Scenario:
    system = build_system(config, T)
    lifted = lift(system)
    cost = build_cost(_weight(config.Q, system.dx), _weight(config.R, system.du), T, system.dx, system.du)
    safety = build_box_safety(config.state_bound, config.input_bound, T, system.dx, system.du)
    bounds = build_box_bounds(config.noise_w, config.noise_e, T, system.dx, system.dy)
    limits = safety.h[: safety.h.size // 2]
    return Scenario(config.scenario, system, lifted, cost, safety if config.safety else None, bounds, limits)


def flatten_config(data: Dict[str, Any]) -> Dict[str, Any]:
    """Flatten the nested ``scenario`` / ``sweep`` / ``solver`` / ``system`` sections of a config file."""
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    known = {"scenario", "sweep", "solver", "system", "output"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    flat: Dict[str, Any] = {}
    sc = data.get("scenario", {})
    if isinstance(sc, str):
        sc = {"name": sc}
    for key, val in sc.items():
        flat["scenario" if key == "name" else key] = val
    sw = dict(data.get("sweep", {}))
    hmin, hmax = sw.pop("horizon_min", None), sw.pop("horizon_max", None)
    if hmin is not None or hmax is not None:
        if "horizons" in sw:
            raise ConfigError("give either horizons or horizon_min/horizon_max, not both")
        name = flat.get("scenario", "synthetic-stable")
        d = SCENARIO_DEFAULTS.get(name, SCENARIO_DEFAULTS["custom"])
        sw["horizons"] = range(int(hmin or 2), int(hmax or d["desk_max"]) + 1)
    flat.update(sw)
    flat.update(data.get("solver", {}))
    flat.update(data.get("system", {}))
    if "output" in data:
        flat["output"] = data["output"]
    fields = set(ScenarioConfig.__dataclass_fields__)
    bad = set(flat) - fields
    if bad:
        raise ConfigError(f"unknown config keys {sorted(bad)}")
    for key in ("horizons", "noise", "controllers"):
        if key in flat:
            val = flat[key]
            flat[key] = (val,) if isinstance(val, str) else tuple(val)
    return flat


def read_config(path) -> Dict[str, Any]:
    """Flattened keyword mapping from a YAML config file (flags are merged on top by the caller)."""

    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return flatten_config(data)


def load_config(path) -> ScenarioConfig:
    return ScenarioConfig(**read_config(path))
