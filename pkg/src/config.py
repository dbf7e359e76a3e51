from __future__ import annotations

import math
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

DEFAULT_CONFIG_PATH = "config/sweep_config.yml"
CONFIG_SECTIONS = ("problem", "sweep")


class ConfigError(ValueError):
    """Raised when a configuration file or flag set cannot be turned into a valid spec."""


class Method(str, Enum):
    OSM = "osm"
    DCS_RJMIN = "dcs-rjmin"


class Initialization(str, Enum):
    ZERO = "zero"
    RANDOM_ROBIN = "random-robin"


def default_p_values() -> List[float]:
    """1.0, 1.5, ..., 20.0"""
    return [1.0 + 0.5 * k for k in range(39)]


def default_q_values() -> List[float]:
    return [mantissa * 10.0 ** exponent for exponent in (0, 1) for mantissa in (1.0, 2.0, 4.0, 8.0)]


def _expand_range(value: Any) -> Any:
    """Accept ``{start, stop, step}`` mappings (inclusive stop) in place of explicit lists."""
    if isinstance(value, dict):
        unknown = set(value) - {"start", "stop", "step"}
        if unknown:
            raise ValueError(f"unknown range keys: {sorted(unknown)}")
        start, stop, step = float(value["start"]), float(value["stop"]), float(value["step"])
        if step <= 0:
            raise ValueError("range step must be > 0")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [start + step * k for k in range(max(count, 0))]
    if isinstance(value, (int, float, str)):
        return [value]
    return value


class DecompositionSpec(BaseModel):
    """Square domain split into a uniform cartesian layout of box subdomains."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    domain_side: float = 4.0
    subdomains_x: int = 2
    subdomains_y: int = 2
    cells_x: int = 20
    cells_y: int = 20

    @field_validator("domain_side")
    @classmethod
    def _positive_side(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("domain_side must be > 0")
        return value

    @field_validator("subdomains_x", "subdomains_y", "cells_x", "cells_y")
    @classmethod
    def _positive_count(cls, value: int, info) -> int:
        if value < 1:
            raise ValueError(f"{info.field_name} must be >= 1")
        return value

    @model_validator(mode="after")
    def _square_cells(self) -> "DecompositionSpec":
        h_x = self.domain_side / (self.subdomains_x * self.cells_x)
        h_y = self.domain_side / (self.subdomains_y * self.cells_y)
        if not math.isclose(h_x, h_y, rel_tol=1e-12):
            raise ValueError(f"cells must be square, got h_x={h_x} and h_y={h_y}")
        return self

    @property
    def h(self) -> float:
        return self.domain_side / (self.subdomains_x * self.cells_x)

    @property
    def global_cells_x(self) -> int:
        return self.subdomains_x * self.cells_x

    @property
    def global_cells_y(self) -> int:
        return self.subdomains_y * self.cells_y

    @property
    def total_cells(self) -> int:
        return self.global_cells_x * self.global_cells_y

    @property
    def subdomain_count(self) -> int:
        return self.subdomains_x * self.subdomains_y

    @classmethod
    def square(cls, layout: int, cells: int, domain_side: float = 4.0) -> "DecompositionSpec":
        return cls(
            domain_side=domain_side,
            subdomains_x=layout,
            subdomains_y=layout,
            cells_x=cells,
            cells_y=cells,
        )


class ProblemSpec(BaseModel):
    """Reaction coefficient and source of ``eta u - lap u = f`` with ``u = 0`` on the outer boundary."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    eta: float = 0.0
    source: Union[float, Callable[..., Any]] = 0.0

    @field_validator("eta")
    @classmethod
    def _non_negative_eta(cls, value: float) -> float:
        if value < 0:
            raise ValueError("eta must be >= 0")
        return value

    @property
    def is_homogeneous(self) -> bool:
        return not callable(self.source) and float(self.source) == 0.0


class RunConfig(BaseModel):
    """One iteration run: layout, problem, transmission/jump coefficients and protocol."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    decomposition: DecompositionSpec
    problem: ProblemSpec = ProblemSpec()
    p: float
    q: Optional[float] = None
    iterations: int = 50
    seed: int = 0
    method: Method = Method.DCS_RJMIN
    initialization: Initialization = Initialization.RANDOM_ROBIN
    tolerance: Optional[float] = None
    workers: int = 1

    @field_validator("p")
    @classmethod
    def _positive_p(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("p must be > 0")
        return value

    @field_validator("q")
    @classmethod
    def _positive_q(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and not value > 0:
            raise ValueError("q must be > 0")
        return value

    @field_validator("iterations")
    @classmethod
    def _non_negative_iterations(cls, value: int) -> int:
        if value < 0:
            raise ValueError("iterations must be >= 0")
        return value

    @field_validator("tolerance")
    @classmethod
    def _positive_tolerance(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and not value > 0:
            raise ValueError("tolerance must be > 0")
        return value

    @field_validator("workers")
    @classmethod
    def _positive_workers(cls, value: int) -> int:
        if value < 1:
            raise ValueError("workers must be >= 1")
        return value

    @property
    def jump_coefficient(self) -> float:
        """Coefficient of the minimized jump functional; falls back to p when q is unset."""
        return self.q if self.q is not None else self.p


class SweepSpec(BaseModel):
    """Parameter grid of the convergence study. Defaults span the full convergence study."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    p: List[float] = default_p_values()
    q: List[float] = default_q_values()
    layouts: List[int] = [2, 4, 6, 8]
    cells: int = 20
    iterations: int = 50
    seeds: List[int] = [0]
    methods: List[Method] = [Method.OSM, Method.DCS_RJMIN]
    domain_side: float = 4.0
    problem: ProblemSpec = ProblemSpec()
    initialization: Initialization = Initialization.RANDOM_ROBIN
    tolerance: Optional[float] = None
    workers: int = 1

    @field_validator("p", "q", "layouts", "seeds", "methods", mode="before")
    @classmethod
    def _listify(cls, value: Any) -> Any:
        return _expand_range(value)

    @field_validator("p", "q", "layouts", "seeds", "methods")
    @classmethod
    def _non_empty(cls, value: List[Any], info) -> List[Any]:
        if not value:
            raise ValueError(f"{info.field_name} must not be empty")
        return value

    @field_validator("p", "q")
    @classmethod
    def _positive_coefficients(cls, value: List[float], info) -> List[float]:
        if any(not v > 0 for v in value):
            raise ValueError(f"{info.field_name} must be > 0")
        return value

    @field_validator("layouts")
    @classmethod
    def _positive_layouts(cls, value: List[int]) -> List[int]:
        if any(v < 1 for v in value):
            raise ValueError("layouts must be >= 1")
        return value

    @field_validator("cells")
    @classmethod
    def _positive_cells(cls, value: int) -> int:
        if value < 1:
            raise ValueError("cells must be >= 1")
        return value

    @field_validator("iterations")
    @classmethod
    def _non_negative_iterations(cls, value: int) -> int:
        if value < 0:
            raise ValueError("iterations must be >= 0")
        return value

    @field_validator("workers")
    @classmethod
    def _positive_workers(cls, value: int) -> int:
        if value < 1:
            raise ValueError("workers must be >= 1")
        return value

    @classmethod
    def load(cls, path: str = DEFAULT_CONFIG_PATH, overrides: Optional[Dict[str, Any]] = None) -> "SweepSpec":
        """Build a sweep spec from a YAML config file, with ``overrides`` taking precedence."""
        return sweep_spec_from_sections(load_config(path), overrides)


def load_config(path: str) -> Dict[str, Dict[str, Any]]:
    """Read the YAML config file and return its ``problem`` and ``sweep`` sections.

    Raises:
        ConfigError: unreadable file, malformed YAML or unknown sections
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed config file {path}: {e}") from e

    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a mapping of sections")

    unknown = set(data) - set(CONFIG_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    sections = {}
    for name in CONFIG_SECTIONS:
        section = data.get(name) or {}
        if not isinstance(section, dict):
            raise ConfigError(f"config section '{name}' must be a mapping")
        sections[name] = dict(section)
    return sections


def sweep_spec_from_sections(
    sections: Dict[str, Dict[str, Any]],
    overrides: Optional[Dict[str, Any]] = None,
) -> SweepSpec:
    """Merge file sections and flag overrides into a validated :class:`SweepSpec`."""
    problem_section = dict(sections.get("problem", {}))
    sweep_section = dict(sections.get("sweep", {}))

    if "domain_side" in problem_section:
        sweep_section.setdefault("domain_side", problem_section.pop("domain_side"))

    overrides = dict(overrides or {})
    for key in ("eta", "source"):
        if key in overrides:
            problem_section[key] = overrides.pop(key)
    sweep_section.update(overrides)

    try:
        problem = ProblemSpec(**problem_section)
        return SweepSpec(problem=problem, **sweep_section)
    except ValidationError as e:
        raise ConfigError(validation_message(e)) from e
    except TypeError as e:
        raise ConfigError(str(e)) from e


def validation_message(error: ValidationError) -> str:
    messages = []
    for detail in error.errors():
        key = ".".join(str(part) for part in detail["loc"])
        message = detail["msg"].removeprefix("Value error, ")
        messages.append(f"{key}: {message}" if key else message)
    return "; ".join(messages)
