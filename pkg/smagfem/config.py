"""Run configuration: flat ``key = value`` text with ``#`` comments.

Values are layered: dataclass defaults, then the case's defaults, then the
selected case variant, then the keys given in the text.
"""

import logging
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Union

from .cases import get_case
from .errors import ConfigError
from .mesh import BoundaryTag
from .spaces import BCMode

logger = logging.getLogger(__name__)

OUTPUT_ENV = "SMAGFEM_OUT"
LINEARIZATIONS = ("previous", "extrapolated")
SPLITS = ("alfeld", "red")


@dataclass(frozen=True)
class SimConfig:
    case: str = "shear_layer"
    variant: Optional[str] = None
    nx: int = 100
    ny: int = 100
    mesh_file: Optional[str] = None
    split: str = "alfeld"
    mu: float = 0.0
    gamma: float = 0.0
    gamma0: float = 0.0
    gamma1: float = 0.0
    U: float = 1.0
    sigma: float = 4.0
    dt: float = 0.01
    t_end: float = 1.0
    output_every: int = 10
    linearization: str = "previous"
    bc: dict = field(default_factory=dict)
    output_dir: str = "output"
    seed: int = 0
    write_vtk: bool = False
    energy_abort_factor: float = 1e6

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


_FIELDS = {f.name: f for f in fields(SimConfig)}
_OPTIONAL_STR = ("variant", "mesh_file")


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got '{text}'")


def _convert(key: str, text: str):
    if key in _OPTIONAL_STR:
        return text or None
    kind = type(getattr(SimConfig(), key))
    if kind is bool:
        return _parse_bool(text)
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


def _validate(config: SimConfig) -> None:
    def check(ok: bool, key: str, message: str):
        if not ok:
            raise ConfigError(message, key=key)

    check(config.dt > 0.0, "dt", f"dt must be > 0, got {config.dt}")
    check(config.t_end >= 0.0, "t_end", f"t_end must be >= 0, got {config.t_end}")
    for key in ("mu", "gamma", "gamma0", "gamma1", "U"):
        value = getattr(config, key)
        check(value >= 0.0 and value != float("inf"), key, f"{key} must be finite and >= 0, got {value}")
    check(config.sigma > 0.0, "sigma", f"sigma must be > 0, got {config.sigma}")
    check(config.nx >= 1, "nx", f"nx must be >= 1, got {config.nx}")
    check(config.ny >= 1, "ny", f"ny must be >= 1, got {config.ny}")
    check(config.output_every >= 1, "output_every", f"output_every must be >= 1, got {config.output_every}")
    check(config.linearization in LINEARIZATIONS, "linearization",
          f"linearization must be one of {', '.join(LINEARIZATIONS)}, got {config.linearization}")
    check(config.split in SPLITS, "split", f"split must be one of {', '.join(SPLITS)}, got {config.split}")
    check(config.energy_abort_factor > 1.0, "energy_abort_factor",
          f"energy_abort_factor must be > 1, got {config.energy_abort_factor}")


def parse_config(text: str) -> SimConfig:
    """Parse and validate configuration text; unknown keys are rejected."""
    given: dict[str, tuple[int, str]] = {}
    bc: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got '{line}'", line=n)
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("bc."):
            label = key[3:]
            try:
                tag = BoundaryTag.parse(label)
                mode = BCMode(value.lower())
            except ValueError as exc:
                raise ConfigError(str(exc), key=key, line=n) from None
            if tag.value in bc:
                raise ConfigError("duplicate key", key=key, line=n)
            bc[tag.value] = mode.value
            continue
        if key not in _FIELDS or key == "bc":
            raise ConfigError("unknown key", key=key, line=n)
        if key in given:
            raise ConfigError("duplicate key", key=key, line=n)
        given[key] = (n, value)

    case_line, case_id = given.get("case", (None, SimConfig.case))
    try:
        case = get_case(case_id)
    except ValueError as exc:
        raise ConfigError(str(exc), key="case", line=case_line) from None
    values: dict = dict(case.defaults)
    variant_line, variant = given.get("variant", (None, ""))
    if variant:
        if variant not in case.variants:
            raise ConfigError(f"case {case.id} has no variant '{variant}' "
                              f"(known: {', '.join(case.variants) or 'none'})", key="variant", line=variant_line)
        values.update(case.variants[variant])

    for key, (n, value) in given.items():
        try:
            values[key] = _convert(key, value)
        except ValueError as exc:
            raise ConfigError(str(exc), key=key, line=n) from None
    values["case"] = case.id
    if bc:
        values["bc"] = bc
    config = replace(SimConfig(), **values)
    try:
        _validate(config)
    except ConfigError as exc:
        line = given.get(exc.key, (None,))[0]
        if line is None:
            raise
        raise ConfigError(str(exc).split(": ", 1)[-1], key=exc.key, line=line) from None
    logger.debug("parsed config: %s", config)
    return config


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(config: SimConfig) -> str:
    """Config text that parses back to an equal :class:`SimConfig`."""
    lines = []
    for name in _FIELDS:
        value = getattr(config, name)
        if name == "bc":
            lines += [f"bc.{tag} = {mode}" for tag, mode in sorted(value.items())]
        elif value is not None:
            lines.append(f"{name} = {_format(value)}")
    return "\n".join(lines) + "\n"


def load_config(path: Union[str, Path]) -> SimConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())


def config_for_case(case_id: str, **overrides) -> SimConfig:
    """Case defaults with keyword overrides, validated like parsed text."""
    variant = overrides.pop("variant", None)
    for key in overrides:
        if key not in _FIELDS or key == "case":
            raise ConfigError("unknown key", key=key)
    text = f"case = {case_id}\n" + (f"variant = {variant}\n" if variant else "")
    config = replace(parse_config(text), **overrides)
    _validate(config)
    return config


def resolve_output_dir(config: SimConfig) -> Path:
    """Output directory; ``$SMAGFEM_OUT`` wins over the config."""
    return Path(os.environ.get(OUTPUT_ENV) or config.output_dir)
