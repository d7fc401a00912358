"""
Study configuration: built-in defaults, then a TOML config file, then the
environment, then command-line overrides (applied by the caller).
"""

import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from .benchmark import BenchmarkParams
from .exceptions import ConfigError, SideFdError
from .harness import StudyConfig, TauRule, parse_spacing
from .levy import LevyMeasure
from .schemes import ErrorRegion, SchemeKind

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_FILE = "config.ini"
DEFAULT_LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

MEASURE_KEYS = {
    "c_minus",
    "c_plus",
    "beta_minus",
    "beta_plus",
    "alpha_minus",
    "alpha_plus",
    "support_radius",
}
COEFFICIENT_KEYS = {"sigma0", "sigma1", "sigma2"}
STUDY_KEYS = {
    "T",
    "radius",
    "delta",
    "eps",
    "h_list",
    "tau_rule",
    "replications",
    "schemes",
    "seed",
    "threads",
    "output_dir",
    "error_region",
    "compensator_cancellation",
}
LOGGING_KEYS = {"level", "format"}
SECTIONS = {
    "measure": MEASURE_KEYS,
    "coefficients": COEFFICIENT_KEYS,
    "study": STUDY_KEYS,
    "logging": LOGGING_KEYS,
}


def read_config(path: Optional[Union[str, Path]]) -> Dict[str, Dict[str, Any]]:
    """
    Parse a TOML config file into {section: {key: value}}.

    A missing default file is not an error; a missing explicit file is.
    Unknown sections or keys raise ConfigError.
    """
    explicit = path is not None
    path = Path(path if explicit else DEFAULT_CONFIG_FILE)
    if not path.exists():
        if explicit:
            raise ConfigError(f"Config file not found: {path}")
        logger.debug(f"No {path} in {Path.cwd()}, using built-in defaults")
        return {}
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Invalid TOML in {path}: {e}") from e
    except OSError as e:
        raise ConfigError(f"Cannot read {path}: {e}") from e

    for section, values in data.items():
        if section not in SECTIONS:
            raise ConfigError(f"Unknown section [{section}] in {path}")
        if not isinstance(values, dict):
            raise ConfigError(f"[{section}] in {path} must be a table")
        for key in values:
            if key not in SECTIONS[section]:
                raise ConfigError(f"Unknown key '{key}' in [{section}] of {path}")
    logger.info(f"Loaded configuration from {path}")
    return data


def _spacings(value) -> Tuple[float, ...]:
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    return tuple(parse_spacing(v) if isinstance(v, str) else float(v) for v in value)


def _schemes(value) -> Tuple[SchemeKind, ...]:
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    return tuple(SchemeKind(str(v).strip().lower()) for v in value)


def build_study_config(
    data: Dict[str, Dict[str, Any]], overrides: Optional[Dict[str, Any]] = None
) -> StudyConfig:
    """
    Merge file sections, the SIDE_FD_THREADS environment variable and
    `overrides` (study keys, highest precedence) onto the defaults.
    """
    study = dict(data.get("study", {}))
    env_threads = os.getenv("SIDE_FD_THREADS")
    if env_threads:
        study["threads"] = env_threads
    for key, value in (overrides or {}).items():
        if key not in STUDY_KEYS:
            raise ConfigError(f"Unknown study option '{key}'")
        if value is not None:
            study[key] = value

    try:
        measure = LevyMeasure(**{k: float(v) for k, v in data.get("measure", {}).items()})
        params = BenchmarkParams(
            measure=measure,
            **{k: float(v) for k, v in data.get("coefficients", {}).items()},
        )
        params = replace(
            params, **{k: float(study[k]) for k in ("T", "radius", "delta", "eps") if k in study}
        )
        kwargs: Dict[str, Any] = {"params": params}
        if "h_list" in study:
            kwargs["h_list"] = _spacings(study["h_list"])
        if "tau_rule" in study:
            kwargs["tau_rule"] = TauRule.parse(study["tau_rule"])
        if "replications" in study:
            kwargs["replications"] = int(study["replications"])
        if "schemes" in study:
            kwargs["schemes"] = _schemes(study["schemes"])
        if "seed" in study:
            kwargs["base_seed"] = int(study["seed"])
        if "threads" in study:
            kwargs["threads"] = int(study["threads"])
        if "output_dir" in study:
            kwargs["output_dir"] = Path(study["output_dir"])
        if "error_region" in study:
            kwargs["error_region"] = ErrorRegion.parse(study["error_region"])
        if "compensator_cancellation" in study:
            kwargs["compensator_cancellation"] = bool(study["compensator_cancellation"])
        return StudyConfig(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid configuration value: {e}") from e
    except SideFdError as e:
        raise ConfigError(str(e)) from e


def logging_settings(data: Dict[str, Dict[str, Any]]) -> Tuple[str, str]:
    """(level, format); LOG_LEVEL in the environment wins over the file."""
    section = data.get("logging", {})
    level = os.getenv("LOG_LEVEL", section.get("level", "INFO")).upper()
    return level, section.get("format", DEFAULT_LOG_FORMAT)
