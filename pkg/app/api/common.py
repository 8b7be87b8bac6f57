"""Helpers shared by the command modules"""
import argparse
import logging
from typing import Any, Dict, Iterable, Optional, Tuple

from app.core.config import settings
from app.core.errors import ConfigurationError
from app.models.tensor import Precision
from app.services.serialization import read_key_values

logger = logging.getLogger(__name__)

RESULT_PREFIX = "RESULT "


def emit(fields: Iterable[Any]) -> None:
    """Print one machine-readable CSV record on stdout"""
    print(RESULT_PREFIX + ",".join("" if v is None else str(v) for v in fields), flush=True)


def current_precision() -> Precision:
    return Precision.parse(settings.PRECISION)


def int_pair(value: str) -> Tuple[int, int]:
    """argparse type for `a,b` integer pairs"""
    try:
        a, b = (int(v) for v in value.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated integers, got '{value}'")
    return a, b


def read_config(path: Optional[str]) -> Dict[str, str]:
    if not path:
        return {}
    values = read_key_values(path)
    logger.info(f"Loaded {len(values)} settings from {path}")
    return values


def split_config(values: Dict[str, str], *models) -> Tuple[Dict[str, str], ...]:
    """Route flat keys to the pydantic models that declare them; unknown keys are rejected"""
    known = set()
    parts = []
    for model in models:
        fields = set(model.model_fields)
        known |= fields
        parts.append({k: v for k, v in values.items() if k in fields})
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
    return tuple(parts)
