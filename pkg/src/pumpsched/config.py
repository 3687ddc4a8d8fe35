"""Experiment configuration documents.

A configuration is a JSON object. Lines whose first non-blank characters are
``//`` are comments and are dropped before parsing; comments after a value
on the same line are not supported.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .controllers import ControllerConfig
from .formulation import ConstraintSpec
from .model import RANDERS_E_M, load_model, randers_paper_model, synthetic_pressure_model
from .sim import STEPS_PER_DAY, ScenarioSpec, diurnal_demand, problem_factory, two_level_tariff
from .solver import SolverOptions
from .uncertainty import DisturbanceSet

class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


def strip_comments(text):
    return "\n".join("" if line.lstrip().startswith("//") else line for line in text.splitlines())


def _tuple(x):
    if isinstance(x, (list, tuple)):
        return tuple(_tuple(v) for v in x)
    return x


@dataclass(frozen=True)
class ModelSource:
    source: str = "randers-paper"  # or "file"
    path: Optional[str] = None
    pressure: str = "convex"

    def __post_init__(self):
        if self.source not in ("randers-paper", "file"):
            raise ConfigError(f"model source must be 'randers-paper' or 'file', got {self.source!r}")
        if self.source == "file" and not self.path:
            raise ConfigError("model source 'file' needs a path")
        if self.pressure not in ("convex", "nonconvex"):
            raise ConfigError(f"pressure must be 'convex' or 'nonconvex', got {self.pressure!r}")


@dataclass(frozen=True)
class UncertaintySettings:
    E_m: Optional[tuple] = None  # None: the model file's E_m, else the built-in one
    demand_fraction: float = 0.1

    def __post_init__(self):
        if self.E_m is not None:
            object.__setattr__(self, "E_m", _tuple(self.E_m))
            E = np.asarray(self.E_m, dtype=float)
            if E.ndim != 2 or not np.all(np.isfinite(E)):
                raise ConfigError("E_m must be a finite matrix")
        if not self.demand_fraction >= 0:
            raise ConfigError("demand_fraction must be nonnegative")


@dataclass(frozen=True)
class DemandSettings:
    mean: float = 77.0
    amplitude: float = 2.0
    peak_hour: float = 19.0
    day_price: float = 0.005
    night_price: float = 0.0025
    day_start: int = 7
    day_end: int = 23

    def __post_init__(self):
        if not 0 <= self.day_start <= self.day_end <= 24:
            raise ConfigError("tariff hours must satisfy 0 <= day_start <= day_end <= 24")


@dataclass(frozen=True)
class BenchSettings:
    horizons: tuple = (8, 16, 32, 64)
    repeats: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "horizons", _tuple(self.horizons))
        if not self.horizons or any(int(N) != N or N < 1 for N in self.horizons):
            raise ConfigError("bench horizons must be positive integers")
        if self.repeats < 1:
            raise ConfigError("bench repeats must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSource = field(default_factory=ModelSource)
    uncertainty: UncertaintySettings = field(default_factory=UncertaintySettings)
    controllers: tuple = ()
    scenarios: tuple = ()
    horizon: int = 24
    dt: float = 1.0
    h_min: tuple = (1.5, 1.4)
    h_max: tuple = (3.0, 2.8)
    u_max: tuple = (100.0, 100.0)
    h0: Optional[tuple] = None
    demand: DemandSettings = field(default_factory=DemandSettings)
    solver: dict = field(default_factory=dict)
    bench: BenchSettings = field(default_factory=BenchSettings)
    output_dir: str = "results"
    master_seed: int = 0
    workers: int = 1
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        for name in ("h_min", "h_max", "u_max", "h0"):
            if getattr(self, name) is not None:
                object.__setattr__(self, name, _tuple(getattr(self, name)))
        lo, hi, um = (np.asarray(v, dtype=float) for v in (self.h_min, self.h_max, self.u_max))
        if lo.shape != hi.shape:
            raise ConfigError("h_min and h_max differ in length")
        if np.any(lo >= hi):
            raise ConfigError(f"need h_min < h_max elementwise, got {list(lo)} and {list(hi)}")
        if np.any(um <= 0):
            raise ConfigError("u_max must be positive")
        if self.h0 is not None and len(self.h0) != lo.size:
            raise ConfigError("h0 has the wrong length")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ConfigError("horizon must be a positive integer")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not self.controllers:
            raise ConfigError("controller list is empty")
        if not self.scenarios:
            raise ConfigError("scenario list is empty")
        names = [s.name for s in self.scenarios]
        if len(set(names)) != len(names):
            raise ConfigError("scenario names must be unique")
        labels = [c.label for c in self.controllers]
        if len(set(labels)) != len(labels):
            raise ConfigError("controller list has duplicates")
        try:
            SolverOptions(**self.solver)
        except TypeError as exc:
            raise ConfigError(f"unknown solver option: {exc}") from None
        if self.model.source == "file" and not self.resolve(self.model.path).is_file():
            raise ConfigError(f"model file {self.resolve(self.model.path)} does not exist")

    def resolve(self, path):
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    # -- serialisation ----------------------------------------------------

    def to_dict(self):
        d = asdict(self)
        d.pop("base_dir")
        d["controllers"] = [_controller_dict(c) for c in self.controllers]
        d["scenarios"] = [_scenario_dict(s) for s in self.scenarios]
        return json.loads(json.dumps(d))

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d, base_dir="."):
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {f.name for f in fields(cls)} - {"base_dir"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown configuration keys: {sorted(extra)}")
        kw = dict(d)
        try:
            kw["model"] = ModelSource(**d.get("model", {}))
            kw["uncertainty"] = UncertaintySettings(**d.get("uncertainty", {}))
            kw["demand"] = DemandSettings(**d.get("demand", {}))
            kw["bench"] = BenchSettings(**d.get("bench", {}))
            kw["controllers"] = tuple(_controller(c, d.get("horizon", 24)) for c in d.get("controllers", ()))
            kw["scenarios"] = tuple(_scenario(s) for s in d.get("scenarios", ()))
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        kw["solver"] = dict(d.get("solver", {}))
        return cls(base_dir=str(base_dir), **kw)

    @classmethod
    def loads(cls, text, base_dir="."):
        try:
            d = json.loads(strip_comments(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        return cls.from_dict(d, base_dir)

    @classmethod
    def load(cls, path):
        path = Path(path)
        return cls.loads(path.read_text(), base_dir=path.parent)

    # -- experiment objects ---------------------------------------------

    def spec(self):
        return ConstraintSpec(self.h_min, self.h_max, self.u_max)

    def solver_options(self):
        return SolverOptions(**self.solver)

    def build_model(self):
        """``(model, model_set, pressure)``."""
        E_m = None
        pressure = None
        if self.model.source == "randers-paper":
            model = randers_paper_model()
            E_m = np.array(RANDERS_E_M)
            if self.dt != model.dt:
                raise ConfigError(f"the built-in model is sampled at dt={model.dt}, config asks for {self.dt}")
        else:
            model, E_m, pressure = load_model(self.resolve(self.model.path))
        if self.uncertainty.E_m is not None:
            E_m = np.asarray(self.uncertainty.E_m, dtype=float)
        if E_m is None:
            raise ConfigError("no model-error set: give uncertainty.E_m or a model file with E_m")
        if pressure is None:
            pressure = synthetic_pressure_model(self.model.pressure)
        if model.n != len(self.h_min) or model.m != len(self.u_max):
            raise ConfigError(f"bounds do not match the model (n={model.n}, m={model.m})")
        if E_m.shape[0] != model.n:
            raise ConfigError("E_m rows do not match the model")
        for sc in self.scenarios:
            if sc.generator_box.l != model.n:
                raise ConfigError(f"scenario {sc.name!r} draws {sc.generator_box.l} generators, "
                                  f"the disturbance set has {model.n}")
        return model, DisturbanceSet(E_m), pressure

    def series(self, hours=None):
        """Demand and price series covering every scenario plus one horizon."""
        if hours is None:
            hours = max(s.days for s in self.scenarios) * STEPS_PER_DAY + self.horizon
        dm = self.demand
        return (diurnal_demand(hours, dm.mean, dm.amplitude, dm.peak_hour),
                two_level_tariff(hours, dm.day_price, dm.night_price, dm.day_start, dm.day_end))

    def controller_configs(self):
        return list(self.controllers)

    def experiment(self):
        """Arguments for :func:`pumpsched.sim.run_experiment_matrix`."""
        model, model_set, pressure = self.build_model()
        demand, prices = self.series()
        make = problem_factory(model, self.spec(), pressure, model_set, demand=demand,
                               solver=self.solver_options(),
                               demand_fraction=self.uncertainty.demand_fraction)
        return dict(plants={"linear": (model, make)}, controllers=self.controller_configs(),
                    scenarios=list(self.scenarios), demand=demand, prices=prices,
                    master_seed=self.master_seed, workers=self.workers,
                    h0=None if self.h0 is None else np.array(self.h0))


def _controller(c, horizon):
    if not isinstance(c, dict):
        raise ConfigError("controller entries must be objects")
    if "N" in c:
        raise ConfigError("the horizon is set once, by the top-level 'horizon' key")
    return ControllerConfig(N=horizon, **c)


def _controller_dict(c):
    return {"kind": c.kind, "k": c.k, "rho": c.rho, "soft": c.soft}


def _scenario(s):
    s = dict(s)
    box = s.get("box", "normal")
    if not isinstance(box, str):
        s["box"] = tuple(tuple(float(v) for v in iv) for iv in box)
    return ScenarioSpec(**s)


def _scenario_dict(s):
    box = s.box if isinstance(s.box, str) else s.box.intervals()
    return {"name": s.name, "box": box, "mode": s.mode, "days": s.days, "block_days": s.block_days,
            "seed": s.seed}

