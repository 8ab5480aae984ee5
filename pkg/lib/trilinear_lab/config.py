# Copyright 2021 Canonical Ltd.
# See LICENSE file for licensing details.

"""# Config Library.

Validated run configuration for the batch front end.

Configuration files are flat YAML mappings. Surfaces are described with dotted keys:

```yaml
subcommand: table build
n: 3
R: 64
c: 1/4
surface1.kind: double_cone
surface1.half_width: 0.1
```

Every value is checked against a typed schema with defaults; errors name the offending
key and, for file values, its line. Real-valued keys accept rational strings such as
`14/15`. Values given on the command line override the file.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Dict, List, Optional, Tuple

import yaml

from .errors import ConfigError
from .geometry import PatchDescriptor

logger = logging.getLogger(__name__)

SUBCOMMANDS = (
    "geometry check",
    "extend",
    "packets decompose",
    "packets census",
    "table build",
    "table census",
    "counterexample run",
    "recursion iterate",
    "trend run",
    "threshold",
)


def _positive(value: Any) -> Optional[str]:
    return None if value > 0 else "must be positive"


def _nonnegative(value: Any) -> Optional[str]:
    return None if value >= 0 else "must be nonnegative"


def _unit_open(value: Any) -> Optional[str]:
    return None if 0 < value < 1 else "must lie in (0, 1)"


def _all_positive(values: Any) -> Optional[str]:
    return None if all(v > 0 for v in values) else "entries must be positive"


def _epsilons(values: Any) -> Optional[str]:
    return None if all(0 < v <= 0.25 for v in values) else "entries must lie in (0, 1/4]"


def _c_small(value: Any) -> Optional[str]:
    return None if 0 < value <= 0.5 else "must lie in (0, 1/2]"


@dataclass(frozen=True)
class _Field:
    kind: str
    default: Any
    check: Optional[Callable[[Any], Optional[str]]] = None


SCHEMA: Dict[str, _Field] = {
    "subcommand": _Field("str", None),
    "seed": _Field("int", 0, _nonnegative),
    "threads": _Field("int", 1, _positive),
    "output_dir": _Field("str", "results"),
    "n": _Field("int", 3, _positive),
    "k": _Field("int", 3, _positive),
    "p": _Field("real", 1.0, _positive),
    "p_values": _Field("reals", [0.8, 14 / 15, 1.2], _all_positive),
    "epsilons": _Field("reals", [0.25, 0.125, 0.0625], _epsilons),
    "c_small": _Field("real", 0.1, _c_small),
    "c": _Field("real", 0.25, _unit_open),
    "C": _Field("real", 10.0, _positive),
    "C0": _Field("int", 2, _nonnegative),
    "epsilon": _Field("real", 0.01, _positive),
    "C_eps": _Field("real", 1.0, _positive),
    "R0": _Field("optional_real", None, _positive),
    "max_doublings": _Field("int", 60, _positive),
    "R": _Field("real", 64.0, lambda v: None if v > 1 else "must exceed 1"),
    "R_values": _Field("reals", [8.0, 16.0, 32.0, 64.0], _all_positive),
    "resolution": _Field("int", 8, _positive),
    "grid_resolution": _Field("int", 8, _positive),
    "space_resolution": _Field("int", 8, _positive),
    "samples": _Field("int", 64, _positive),
    "points_per_axis": _Field("int", 2, _positive),
    "depth": _Field("int", 1, _nonnegative),
    "decay_power": _Field("int", 10, _positive),
    "near": _Field("int", 2, _nonnegative),
    "max_tubes": _Field("optional_int", None, _positive),
    "margin_budget": _Field("optional_real", None, _positive),
    "input_wave": _Field("optional_str", None),
    "violating": _Field("bool", False),
}

SURFACE_SCHEMA: Dict[str, _Field] = {
    "kind": _Field("str", None),
    "center": _Field("optional_reals", None),
    "half_width": _Field("optional_real", None, _positive),
    "radius": _Field("real", 1.0, _positive),
    "curvature": _Field("real", 1.0),
    "slope": _Field("optional_reals", None),
    "graph_axis": _Field("optional_int", None, _nonnegative),
    "rotation": _Field("optional_reals", None),
    "foliated": _Field("bool", False),
}


def _real(value: Any, key: str, line: Optional[int]) -> float:
    if isinstance(value, bool):
        raise ConfigError("expected a real number", key, line)
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(Fraction(value.strip()))
        except (ValueError, ZeroDivisionError):
            pass
    raise ConfigError(f"expected a real number or a rational like 14/15, got {value!r}", key, line)


def _string(value: Any, key: str, line: Optional[int]) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"expected a string, got {value!r}", key, line)
    return value


def _integer(value: Any, key: str, line: Optional[int]) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"expected an integer, got {value!r}", key, line)
    return value


def _boolean(value: Any, key: str, line: Optional[int]) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"expected true or false, got {value!r}", key, line)
    return value


def _reals(value: Any, key: str, line: Optional[int]) -> List[float]:
    if not isinstance(value, list):
        raise ConfigError(f"expected a list of real numbers, got {value!r}", key, line)
    return [_real(v, key, line) for v in value]


_COERCERS: Dict[str, Callable[[Any, str, Optional[int]], Any]] = {
    "str": _string,
    "int": _integer,
    "bool": _boolean,
    "real": _real,
    "reals": _reals,
}


def _coerce(rule: _Field, value: Any, key: str, line: Optional[int]) -> Any:
    if value is None:
        if rule.kind.startswith("optional"):
            return None
        raise ConfigError("value is missing", key, line)
    coerced = _COERCERS[rule.kind.replace("optional_", "")](value, key, line)
    if rule.check is not None:
        problem = rule.check(coerced)
        if problem:
            raise ConfigError(f"{problem}, got {value!r}", key, line)
    return coerced


@dataclass(frozen=True)
class RunConfig:
    """A validated run configuration.

    Attributes:
        values: Every schema key with its validated value.
        surfaces: Surface descriptors in surface-number order.
    """

    values: Dict[str, Any]
    surfaces: List[PatchDescriptor] = field(default_factory=list)

    def __getattr__(self, name: str) -> Any:
        """Exposes schema values as attributes."""
        values = self.__dict__.get("values", {})
        if name in values:
            return values[name]
        raise AttributeError(name)

    def echo(self) -> Dict[str, Any]:
        """JSON-ready copy of the configuration."""
        surfaces = [
            {k: v for k, v in vars(s).items() if v is not None} for s in self.surfaces
        ]
        return {**self.values, "surfaces": surfaces}

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON echo."""
        canonical = json.dumps(self.echo(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


def _key_lines(text: str) -> Dict[str, int]:
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {e}", line=mark.line + 1 if mark else None)
    if node is None:
        return {}
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError("configuration must be a mapping", line=node.start_mark.line + 1)
    return {str(k.value): k.start_mark.line + 1 for k, _ in node.value}


def _split_surface_key(key: str) -> Optional[Tuple[int, str]]:
    if not key.startswith("surface") or "." not in key:
        return None
    head, name = key.split(".", 1)
    number = head[len("surface"):]
    if not number.isdigit() or int(number) < 1:
        return None
    return int(number), name


def _validate(
    merged: Dict[str, Tuple[Any, Optional[int]]]
) -> Tuple[Dict[str, Any], Dict[int, Dict[str, Any]]]:
    values: Dict[str, Any] = {}
    surfaces: Dict[int, Dict[str, Any]] = {}
    for key, (value, line) in merged.items():
        surface = _split_surface_key(key)
        if surface is not None:
            number, name = surface
            if name not in SURFACE_SCHEMA:
                raise ConfigError(
                    f"unknown surface field, expected one of {', '.join(SURFACE_SCHEMA)}",
                    key,
                    line,
                )
            surfaces.setdefault(number, {})[name] = _coerce(SURFACE_SCHEMA[name], value, key, line)
            continue
        if key not in SCHEMA:
            raise ConfigError("unknown key", key, line)
        values[key] = _coerce(SCHEMA[key], value, key, line)
    return values, surfaces


def parse_config(text: str, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Parses and validates a configuration.

    Args:
        text: YAML text, possibly empty.
        overrides: Values from the command line; they win over the file.

    Returns:
        RunConfig: The validated configuration with defaults filled in.
    """
    lines = _key_lines(text)
    data = yaml.safe_load(text) if text.strip() else {}
    data = dict(data or {})
    merged: Dict[str, Tuple[Any, Optional[int]]] = {
        str(k): (v, lines.get(str(k))) for k, v in data.items()
    }
    for key, value in (overrides or {}).items():
        merged[key] = (value, None)

    if merged.get("subcommand", (None, None))[0] is None:
        raise ConfigError("missing subcommand", "subcommand")
    values, surfaces = _validate(merged)
    for key, rule in SCHEMA.items():
        values.setdefault(key, rule.default)
    if values["subcommand"] not in SUBCOMMANDS:
        raise ConfigError(
            f"unknown subcommand {values['subcommand']!r}",
            "subcommand",
            merged["subcommand"][1],
        )
    n, k = values["n"], values["k"]
    if k > n + 1:
        raise ConfigError(
            f"k = {k} is out of range: the threshold exponent needs k <= n+1 = {n + 1}",
            "k",
            merged.get("k", (None, None))[1],
        )
    return RunConfig(values, _descriptors(surfaces, n, merged))


def _descriptors(
    surfaces: Dict[int, Dict[str, Any]], n: int, merged: Dict[str, Tuple[Any, Optional[int]]]
) -> List[PatchDescriptor]:
    descriptors = []
    for number in sorted(surfaces):
        fields = surfaces[number]
        if "kind" not in fields:
            key = f"surface{number}.kind"
            raise ConfigError("surface needs a kind", key)
        for name, rule in SURFACE_SCHEMA.items():
            fields.setdefault(name, rule.default)
        descriptors.append(PatchDescriptor(n=n, **fields))
    if descriptors and sorted(surfaces) != list(range(1, len(surfaces) + 1)):
        raise ConfigError(f"surfaces must be numbered 1..{len(surfaces)}", "surface")
    logger.debug(f"parsed {len(descriptors)} surface descriptors")
    return descriptors
