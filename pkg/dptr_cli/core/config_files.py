# dptr_cli/core/config_files.py
import json
import logging
import tomllib
from pathlib import Path
from typing import Any, Dict, Type, TypeVar

from pydantic import BaseModel, ValidationError

from dptr_cli.core_api.exceptions import InvalidParameterError

logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)


def read_config_mapping(path: Path) -> Dict[str, Any]:
    """Reads a TOML or JSON config file (chosen by suffix) into a plain mapping."""
    path = Path(path)
    if not path.exists():
        raise InvalidParameterError(f"Config file not found: {path}")
    try:
        if path.suffix.lower() == ".toml":
            with open(path, "rb") as f:
                return tomllib.load(f)
        if path.suffix.lower() == ".json":
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
            if not isinstance(data, dict):
                raise InvalidParameterError(f"Config file {path} must hold an object at the top level.")
            return data
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        logger.error(f"Could not parse config file {path}: {e}")
        raise InvalidParameterError(f"Could not parse config file {path}: {e}", original_exception=e)
    raise InvalidParameterError(f"Unsupported config format '{path.suffix}'; use .toml or .json.")


def validate_config(model: Type[ModelT], data: Dict[str, Any], source: str = "config") -> ModelT:
    """Validates a mapping against a pydantic model, reporting failures as config errors."""
    try:
        return model.model_validate(data)
    except ValidationError as e:
        logger.error(f"Invalid {source}: {e}")
        raise InvalidParameterError(f"Invalid {source}: {e}", original_exception=e)
