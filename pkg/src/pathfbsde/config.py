"""Run configuration: a TOML file with fixed sections and strict keys.

Every section maps onto one of the library's own parameter types, so range
checks live with those types; this module only resolves names, rejects
unknown keys and reports failures as :class:`ConfigError` naming the field.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path as FsPath
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from .coefficients import CoefficientError, CoefficientSet, registry_get
from .conditions import AssumptionConstants
from .solver import ContinuationSchedule, Discretization


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass(frozen=True)
class CheckSettings:
    trials: int = 10_000
    seed: int = 0
    num_steps: int = 50

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.num_steps < 1:
            raise ValueError("num_steps must be at least 1")


@dataclass(frozen=True)
class PPDESettings:
    functional: str = "oracle"
    smoothness: str = "C12"
    constant: float = 1.0
    num_paths: int = 100
    grid_step: float = 2.5e-5
    eps: float = 1e-4
    tolerance: float = 1e-3
    ode_steps: int = 10_000
    seed: int = 0
    feynman_kac: bool = True

    def __post_init__(self) -> None:
        if self.functional not in ("oracle", "constant"):
            raise ValueError("functional must be 'oracle' or 'constant'")
        if self.smoothness not in ("C0", "C12"):
            raise ValueError("smoothness must be 'C0' or 'C12'")
        if self.num_paths < 1:
            raise ValueError("num_paths must be at least 1")
        if not (self.grid_step > 0 and self.eps > 0 and self.tolerance > 0):
            raise ValueError("grid_step, eps and tolerance must be positive")
        if self.ode_steps < 100:
            raise ValueError("ode_steps must be at least 100")


@dataclass(frozen=True)
class ItoSettings:
    num_steps: tuple[int, ...] = (25, 50, 100, 200)
    num_paths: int = 1000
    seed: int = 0
    bracket: str = "model"

    def __post_init__(self) -> None:
        object.__setattr__(self, "num_steps", tuple(int(k) for k in self.num_steps))
        if len(self.num_steps) < 2:
            raise ValueError("num_steps needs at least two values for a convergence table")
        if any(k < 1 for k in self.num_steps) or list(self.num_steps) != sorted(set(self.num_steps)):
            raise ValueError("num_steps must be strictly increasing positive integers")
        if self.num_paths < 1:
            raise ValueError("num_paths must be at least 1")
        if self.bracket not in ("model", "realized"):
            raise ValueError("bracket must be 'model' or 'realized'")


@dataclass(frozen=True)
class RunConfig:
    problem: str
    params: Mapping[str, float] = field(default_factory=dict)
    x0: tuple[float, ...] = (1.0,)
    dims: tuple[int, int, int] | None = None
    constants: AssumptionConstants = field(default_factory=AssumptionConstants)
    discretization: Discretization = field(default_factory=lambda: Discretization(num_steps=50))
    schedule: ContinuationSchedule = field(default_factory=ContinuationSchedule)
    check: CheckSettings = field(default_factory=CheckSettings)
    ppde: PPDESettings = field(default_factory=PPDESettings)
    ito: ItoSettings = field(default_factory=ItoSettings)
    output_dir: str = "run"

    def coefficients(self) -> CoefficientSet:
        try:
            cs = registry_get(self.problem, dict(self.params))
        except CoefficientError as exc:
            raise ConfigError(f"problem: {exc}") from exc
        if self.dims is not None and self.dims != (cs.n, cs.m, cs.d):
            raise ConfigError(f"problem.dims: {self.dims} does not match {self.problem} dims {(cs.n, cs.m, cs.d)}")
        if len(self.x0) != cs.n:
            raise ConfigError(f"problem.x0: expected {cs.n} values, got {len(self.x0)}")
        return cs

    def with_seed(self, seed: int) -> RunConfig:
        """Override every seed in the configuration."""
        return replace(
            self,
            discretization=replace(self.discretization, seed=seed),
            check=replace(self.check, seed=seed),
            ppde=replace(self.ppde, seed=seed),
            ito=replace(self.ito, seed=seed),
        )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "output_dir": self.output_dir,
            "problem": {"name": self.problem, "x0": list(self.x0), "params": dict(self.params)},
        }
        if self.dims is not None:
            out["problem"]["dims"] = list(self.dims)
        for key in ("constants", "discretization", "schedule", "check", "ppde", "ito"):
            sec = asdict(getattr(self, key))
            out[key] = {k: list(v) if isinstance(v, tuple) else v for k, v in sec.items()}
        return out


_SECTIONS = {
    "constants": AssumptionConstants,
    "discretization": Discretization,
    "schedule": ContinuationSchedule,
    "check": CheckSettings,
    "ppde": PPDESettings,
    "ito": ItoSettings,
}
_PROBLEM_KEYS = {"name", "x0", "params", "dims"}


def _build(section: str, cls: type, data: Any) -> Any:
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected a table")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{section}: unknown key(s) {', '.join(unknown)}")
    if section == "discretization" and "num_steps" not in data:
        data = {"num_steps": 50, **data}
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def config_from_dict(data: Mapping[str, Any]) -> RunConfig:
    allowed = {"problem", "output_dir", *_SECTIONS}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}")
    prob = data.get("problem")
    if not isinstance(prob, dict) or "name" not in prob:
        raise ConfigError("problem.name is required")
    extra = sorted(set(prob) - _PROBLEM_KEYS)
    if extra:
        raise ConfigError(f"problem: unknown key(s) {', '.join(extra)}")
    params = prob.get("params", {})
    if not isinstance(params, dict) or not all(isinstance(v, (int, float)) for v in params.values()):
        raise ConfigError("problem.params must be a table of numbers")
    x0 = prob.get("x0", [1.0])
    x0 = [x0] if isinstance(x0, (int, float)) else x0
    if not isinstance(x0, list) or not all(isinstance(v, (int, float)) for v in x0):
        raise ConfigError("problem.x0 must be a number or a list of numbers")
    dims = prob.get("dims")
    if dims is not None and (not isinstance(dims, list) or len(dims) != 3):
        raise ConfigError("problem.dims must be [n, m, d]")
    kwargs: dict[str, Any] = {
        "problem": str(prob["name"]),
        "params": {k: float(v) for k, v in params.items()},
        "x0": tuple(float(v) for v in x0),
        "dims": tuple(int(v) for v in dims) if dims is not None else None,
    }
    for section, cls in _SECTIONS.items():
        if section in data:
            kwargs[section] = _build(section, cls, data[section])
    if "output_dir" in data:
        kwargs["output_dir"] = str(data["output_dir"])
    cfg = RunConfig(**kwargs)
    cfg.coefficients()
    return cfg


def load_config(path: str | FsPath) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config {path} is not valid TOML: {exc}") from exc
    return config_from_dict(data)
