import copy
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple

import yaml

from core.errors import ConfigError

RUNTIME_KEYS = ("threads", "out", "progress")


def load_yaml_config(file_path: str) -> Dict[str, Any]:
    """Load YAML configuration file"""
    try:
        with open(file_path, 'r') as file:
            return yaml.safe_load(file) or {}
    except FileNotFoundError:
        return {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML in {file_path}: {e}")


def load_json_config(file_path: str) -> Dict[str, Any]:
    """Load JSON configuration file"""
    try:
        with open(file_path, 'r') as file:
            return json.load(file)
    except FileNotFoundError:
        return {}
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid JSON in {file_path}: {e}")


def load_config_file(file_path: str) -> Dict[str, Any]:
    """Load a user config, JSON or YAML by extension; a missing file is an error here"""
    if not os.path.exists(file_path):
        raise ConfigError(f"config file not found: {file_path}")
    if Path(file_path).suffix.lower() == ".json":
        return load_json_config(file_path)
    return load_yaml_config(file_path)


def load_config(config_file: str = "config/config.yaml") -> Dict[str, Any]:
    """Load main configuration"""
    if os.path.exists(config_file):
        return load_yaml_config(config_file)
    return {}


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge ``override`` into a copy of ``base``"""
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def ensure_directory(path: str):
    """Ensure directory exists"""
    Path(path).mkdir(parents=True, exist_ok=True)


def safe_dict_get(data: dict, key: str, default=None):
    """Safely get value from nested dictionary"""
    keys = key.split('.')
    current = data

    for k in keys:
        if isinstance(current, dict) and k in current:
            current = current[k]
        else:
            return default

    return current


def config_hash(config: Dict[str, Any], ignore: Iterable[str] = RUNTIME_KEYS) -> str:
    """sha256 of the canonical JSON form, runtime-only keys removed"""
    meaningful = {k: v for k, v in config.items() if k not in set(ignore)}
    canonical = json.dumps(meaningful, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Field:
    """Leaf of a config schema"""
    types: Tuple[type, ...]
    choices: Optional[Tuple[Any, ...]] = None
    minimum: Optional[float] = None
    items: Optional[Tuple[type, ...]] = None


def field(*types: type, choices=None, minimum=None, items=None) -> Field:
    return Field(tuple(types), tuple(choices) if choices else None, minimum, tuple(items) if items else None)


class ConfigValidator:
    """Validate configuration dictionaries against a nested schema"""

    @staticmethod
    def validate(config: Dict[str, Any], schema: Dict[str, Any], path: str = "") -> Dict[str, Any]:
        """Reject unknown keys and wrong types, reporting the dotted path"""
        if not isinstance(config, dict):
            raise ConfigError("expected a mapping", path or "<root>")
        for key, value in config.items():
            where = f"{path}.{key}" if path else key
            if key not in schema:
                raise ConfigError("unknown key", where)
            expected = schema[key]
            if isinstance(expected, dict):
                ConfigValidator.validate(value, expected, where)
            else:
                ConfigValidator._check_field(value, expected, where)
        return config

    @staticmethod
    def _check_field(value: Any, rule: Field, where: str):
        # bool is an int subclass; only accept it where bool is declared
        if isinstance(value, bool) and bool not in rule.types:
            raise ConfigError(f"expected {ConfigValidator._names(rule.types)}, got bool", where)
        if not isinstance(value, rule.types):
            raise ConfigError(f"expected {ConfigValidator._names(rule.types)}, got {type(value).__name__}", where)
        if rule.choices is not None and value not in rule.choices:
            raise ConfigError(f"must be one of {list(rule.choices)}", where)
        if rule.minimum is not None and isinstance(value, (int, float)) and value < rule.minimum:
            raise ConfigError(f"must be >= {rule.minimum}", where)
        if rule.items is not None:
            for i, item in enumerate(value):
                if isinstance(item, bool) or not isinstance(item, rule.items):
                    raise ConfigError(f"expected {ConfigValidator._names(rule.items)} items", f"{where}[{i}]")

    @staticmethod
    def _names(types: Tuple[type, ...]) -> str:
        return " or ".join(t.__name__ for t in types)

    @staticmethod
    def validate_framework_config(config: Dict[str, Any]) -> bool:
        """Validate framework configuration"""
        required_fields = ['framework', 'experiments']
        return all(field_name in config for field_name in required_fields)
