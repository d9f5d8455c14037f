"""Parsing of the grid and angle notations accepted on the command line and in config files."""
import re
from typing import List, Union

import numpy as np

from src.core.errors import ConfigError

_ANGLE = re.compile(r"^\s*([+-]?[0-9]*\.?[0-9]*(?:[eE][+-]?[0-9]+)?)\s*\*?\s*pi\s*(?:/\s*([0-9]*\.?[0-9]+))?\s*$")

GridValue = Union[None, float, int, str, List[Union[float, int, str]]]


def parse_angle(text: Union[str, float, int]) -> float:
    """A float, or a multiple of pi such as 'pi/4', '9pi/20', '0.45*pi'."""
    if isinstance(text, (int, float)):
        return float(text)
    match = _ANGLE.match(text)
    if match:
        coefficient = float(match.group(1)) if match.group(1) not in ("", "+", "-") else float(f"{match.group(1)}1")
        denominator = float(match.group(2)) if match.group(2) else 1.0
        return coefficient * np.pi / denominator
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"cannot read '{text}' as an angle")


def parse_range(text: str) -> List[float]:
    """'min:max:count' (uniform) or 'min:max:count:log' (geometric)."""
    parts = text.split(":")
    if len(parts) not in (3, 4) or (len(parts) == 4 and parts[3] != "log"):
        raise ConfigError(f"range '{text}' must read min:max:count or min:max:count:log")
    try:
        low, high, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ConfigError(f"range '{text}' has a non-numeric bound or count")
    if count < 1:
        raise ConfigError(f"range '{text}' needs a positive count")
    if len(parts) == 4:
        if low <= 0 or high <= 0:
            raise ConfigError(f"logarithmic range '{text}' needs positive bounds")
        return np.geomspace(low, high, count).tolist()
    return np.linspace(low, high, count).tolist()


def parse_grid(value: GridValue, angles: bool = False) -> List[float]:
    """Scalar, list, comma-separated list, or range notation, flattened to a list of floats."""
    if value is None:
        return []
    read = parse_angle if angles else float
    if isinstance(value, (int, float)):
        return [float(value)]
    if isinstance(value, (list, tuple)):
        grid = []
        for item in value:
            grid.extend(parse_grid(item, angles))
        return grid
    text = str(value).strip()
    if ":" in text:
        return parse_range(text)
    try:
        return [read(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise ConfigError(f"cannot read '{text}' as a list of numbers")
