"""Experiment config loading and validation against extra-data/experiment_schema.yml"""

import copy
import importlib.resources as pkg_resources
import json
import logging
import math
from pathlib import Path

import yaml

import privaudit

from .errors import ConfigurationError

_TYPES = {
    "int": (int,),
    "float": (int, float),
    "str": (str,),
    "bool": (bool,),
    "list": (list,),
    "dict": (dict,),
}


def load_schema() -> dict:
    with pkg_resources.path(privaudit, "extra-data") as extra_data:
        with open(extra_data / "experiment_schema.yml", "r", encoding="utf-8") as fin:
            return yaml.safe_load(fin)


def read_config(path) -> dict:
    """Parse a JSON config (or YAML for .yml/.yaml files) into a dict"""
    path = Path(path)

    with open(path, "r", encoding="utf-8") as fin:
        try:
            if path.suffix in (".yml", ".yaml"):
                data = yaml.safe_load(fin)
            else:
                data = json.load(fin)
        except (json.JSONDecodeError, yaml.YAMLError) as e:
            raise ConfigurationError(str(path), f"cannot parse config: {e}") from e

    if not isinstance(data, dict):
        raise ConfigurationError(str(path), "config must be a mapping")

    return data


def merge(base: dict, override: dict) -> dict:
    merged = copy.deepcopy(base)

    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)

    return merged


def _lookup(config: dict, dotted: str):
    node = config

    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            return None
        node = node[part]

    return node


def _check(value, rule: dict, path: str):
    if value is None:
        if rule.get("nullable"):
            return
        raise ConfigurationError(path, "must not be null")

    expected = _TYPES[rule["type"]]

    # bool is an int subclass; never accept it for numbers
    if not isinstance(value, expected) or (isinstance(value, bool) and rule["type"] != "bool"):
        raise ConfigurationError(path, f"expected {rule['type']}, got {type(value).__name__}")

    if rule["type"] in ("int", "float"):
        if not math.isfinite(value):
            raise ConfigurationError(path, "must be finite")
        if "min" in rule and value < rule["min"]:
            raise ConfigurationError(path, f"must be >= {rule['min']}")
        if "max" in rule and value > rule["max"]:
            raise ConfigurationError(path, f"must be <= {rule['max']}")
        if "exclusive_min" in rule and value <= rule["exclusive_min"]:
            raise ConfigurationError(path, f"must be > {rule['exclusive_min']}")
        if "exclusive_max" in rule and value >= rule["exclusive_max"]:
            raise ConfigurationError(path, f"must be < {rule['exclusive_max']}")

    if "choices" in rule and value not in rule["choices"]:
        raise ConfigurationError(path, f"must be one of {', '.join(map(str, rule['choices']))}")

    if rule["type"] == "list" and "items" in rule:
        for i, item in enumerate(value):
            _check(item, rule["items"], f"{path}[{i}]")

    if rule["type"] == "dict" and "fields" in rule:
        _check_fields(value, rule["fields"], path)


def _check_fields(mapping: dict, fields: dict, prefix: str):
    for key in mapping:
        if key not in fields:
            raise ConfigurationError(f"{prefix}.{key}" if prefix else key, "unknown field")

    for key, rule in fields.items():
        path = f"{prefix}.{key}" if prefix else key

        if key not in mapping:
            if rule.get("required"):
                raise ConfigurationError(path, "required field is missing")
            continue

        _check(mapping[key], rule, path)


def validate(raw: dict, schema: dict | None = None) -> dict:
    """Merge `raw` over the schema defaults and validate it; returns the merged config"""
    schema = schema or load_schema()

    for key in ("experiment", "master_seed"):
        if key not in raw:
            raise ConfigurationError(key, "required field is missing")

    if raw["experiment"] not in schema["experiments"]:
        raise ConfigurationError("experiment", f"unknown experiment {raw['experiment']!r}")

    for dotted in schema["requires"][raw["experiment"]]:
        if _lookup(raw, dotted) is None:
            raise ConfigurationError(dotted, f"required by experiment {raw['experiment']!r}")

    config = merge(schema["defaults"], raw)
    _check_fields(config, schema["fields"], "")

    data = config["data"]
    if data.get("min_length", 1) > data.get("max_length", math.inf):
        raise ConfigurationError("data.min_length", "must not exceed data.max_length")

    return config


def load_config(path, seed: int | None = None, experiment: str | None = None) -> dict:
    """Read, apply the command-line overrides, and validate"""
    raw = read_config(path)

    if seed is not None:
        raw["master_seed"] = seed

    if experiment is not None:
        if raw.get("experiment", experiment) != experiment:
            logging.warning("Config names experiment %r; running %r as requested", raw["experiment"], experiment)
        raw["experiment"] = experiment

    return validate(raw)
