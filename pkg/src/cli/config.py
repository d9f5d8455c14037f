"""
Run configuration for the command-line tool. Values are merged with increasing precedence from the
sub-command defaults, an optional JSON config file, and explicit flags, then validated by RunConfig.
"""
import json
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.cli.grids import parse_grid
from src.core.errors import ConfigError
from src.core.psf import TABULATED_MAX_ORDER

DEFAULT_PHI = "9pi/20"
DEFAULT_DIMENSION = 30
# modes a tabulated PSF supports: derivatives up to TABULATED_MAX_ORDER
TABULATED_DIMENSION = TABULATED_MAX_ORDER + 1


class OutputFormat(str, Enum):
    CSV = "csv"
    JSON = "json"


COMMAND_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "qfim": {"s": [0.01, 0.03, 0.1, 0.3, 1.0], "q": [0.1, 0.3, 0.5]},
    "scan-displacement": {"s": [0.02, 0.014, 0.01], "q": [0.3], "points": 201},
    "scan-separation": {"s": "1e-3:1:31:log", "q": [0.49, 0.35, 0.1], "phi": ["pi/4", "7pi/20", "9pi/20"]},
    "robustness": {"s": [0.03], "q": [0.1], "phi": ["pi/20", "9pi/20"], "span": 0.5, "points": 201},
    "simulate": {"s": [0.1], "q": [0.5], "photons": 100000, "reps": 500},
    "adaptive": {"s": [0.1], "q": [0.3], "photons": 1000000, "reps": 100, "fraction": 0.2},
}


class RunConfig(BaseModel):
    """Validated configuration of one command-line run. Lengths are in units of sigma."""
    model_config = ConfigDict(extra="forbid")

    command: str
    psf: str = "gaussian"
    sigma: float = Field(1.0, gt=0)
    dim: int = Field(DEFAULT_DIMENSION, ge=4)
    nodes: int = Field(200, ge=20)
    s0: float = 0.0
    s: List[float]
    q: List[float]
    phi: List[float] = Field(default_factory=lambda: parse_grid(DEFAULT_PHI, angles=True))
    x0: Optional[List[float]] = None
    points: int = Field(201, ge=3)
    span: Optional[float] = Field(None, gt=0)
    photons: int = Field(100000, ge=2)
    reps: int = Field(500, ge=1)
    seed: int = Field(0, ge=0)
    fraction: float = Field(0.2, gt=0, lt=1)
    out: Optional[str] = None
    format: OutputFormat = OutputFormat.CSV
    normalize: bool = False
    svg: Optional[str] = None
    jobs: int = Field(1, ge=1)

    @field_validator("command")
    @classmethod
    def _known_command(cls, value: str) -> str:
        if value not in COMMAND_DEFAULTS:
            raise ValueError(f"unknown command '{value}'")
        return value

    @field_validator("psf")
    @classmethod
    def _psf_exists(cls, value: str) -> str:
        if value == "gaussian":
            return value
        if not value.startswith("table:"):
            raise ValueError("expected 'gaussian' or 'table:<path>'")
        if not Path(value.split(":", 1)[1]).is_file():
            raise ValueError(f"table file {value.split(':', 1)[1]} does not exist")
        return value

    @field_validator("s", "q", "x0", mode="before")
    @classmethod
    def _read_grid(cls, value):
        return None if value is None else parse_grid(value)

    @field_validator("phi", mode="before")
    @classmethod
    def _read_angles(cls, value):
        return parse_grid(value, angles=True)

    @field_validator("s")
    @classmethod
    def _separations(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("grid is empty")
        if any(not np.isfinite(v) or v < 0 for v in value):
            raise ValueError("separations must be finite and non-negative")
        return value

    @field_validator("q")
    @classmethod
    def _intensities(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("grid is empty")
        if any(not 0.0 < v < 1.0 for v in value):
            raise ValueError("relative intensities must lie in (0, 1)")
        return value

    @field_validator("phi")
    @classmethod
    def _angles(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("grid is empty")
        if any(not 0.0 < v < 0.5 * np.pi for v in value):
            raise ValueError("angles must lie in (0, pi/2)")
        return value

    @field_validator("x0")
    @classmethod
    def _displacements(cls, value: Optional[List[float]]) -> Optional[List[float]]:
        if value is not None and (not value or not all(np.isfinite(v) for v in value)):
            raise ValueError("displacement grid must be non-empty and finite")
        return value

    @model_validator(mode="after")
    def _dimension_fits_psf(self) -> "RunConfig":
        if self.psf.startswith("table:") and self.dim > TABULATED_DIMENSION:
            raise ValueError(f"a tabulated PSF supports at most dim={TABULATED_DIMENSION}, got dim={self.dim}")
        return self

    def resolved(self) -> dict:
        return self.model_dump(mode="json")


def _first_error(error: ValidationError) -> str:
    detail = error.errors()[0]
    field = ".".join(str(part) for part in detail["loc"]) or "config"
    message = detail["msg"].removeprefix("Value error, ")
    return f"error: {field}: {message}"


def read_config_file(path: Optional[str]) -> Dict[str, Any]:
    if path is None:
        return {}
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigError(f"error: config: cannot read {path}: {e.strerror}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"error: config: {path} is not valid JSON ({e.msg} at line {e.lineno})")
    if not isinstance(data, dict):
        raise ConfigError(f"error: config: {path} must hold a JSON object")
    return data


def load_run_config(command: str, flags: Dict[str, Any], config_path: Optional[str] = None) -> RunConfig:
    """Merge defaults < config file < flags and validate; failures raise ConfigError with one line."""
    merged: Dict[str, Any] = dict(COMMAND_DEFAULTS.get(command, {}))
    merged.update(read_config_file(config_path))
    merged.update({key: value for key, value in flags.items() if value is not None})
    merged["command"] = command
    if "dim" not in merged and str(merged.get("psf", "")).startswith("table:"):
        merged["dim"] = TABULATED_DIMENSION
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigError(_first_error(e)) from None
