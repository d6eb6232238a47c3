"""Bundled JSON schemas plus thin validation helpers."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib.resources import files

import jsonschema

__all__ = ["SchemaError", "load_schema", "validate_config", "validate_report",
           "validate_manifest_row", "SCHEMA_NAMES"]

SCHEMA_NAMES = ("config", "report", "manifest")


class SchemaError(ValueError):
    """Input failed schema validation; message carries a JSON path."""


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    if name not in SCHEMA_NAMES:
        raise ValueError(f"unknown schema: {name!r}")
    text = files("leaklab.schemas").joinpath(f"{name}.schema.json").read_text()
    return json.loads(text)


def _validate(obj: dict, name: str) -> None:
    validator = jsonschema.Draft202012Validator(load_schema(name))
    errors = sorted(validator.iter_errors(obj), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise SchemaError(f"{e.json_path}: {e.message}")


def validate_config(obj: dict) -> None:
    _validate(obj, "config")


def validate_report(obj: dict) -> None:
    _validate(obj, "report")


def validate_manifest_row(obj: dict) -> None:
    _validate(obj, "manifest")
