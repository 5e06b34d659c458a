"""Validator for ``report.json`` against the schema shipped with the package."""
from __future__ import annotations

import functools
import json
import math
from importlib import resources

import jsonschema


class ReportSchemaError(ValueError):
    pass


@functools.lru_cache(maxsize=None)
def report_schema() -> dict:
    text = resources.files("rashomon_grs").joinpath("schemas/report.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _non_finite(doc, path="$"):
    if isinstance(doc, float) and not math.isfinite(doc):
        return path
    if isinstance(doc, dict):
        items = doc.items()
    elif isinstance(doc, list):
        items = enumerate(doc)
    else:
        return None
    for k, v in items:
        hit = _non_finite(v, f"{path}.{k}" if isinstance(k, str) else f"{path}[{k}]")
        if hit:
            return hit
    return None


def validate_report(doc: dict) -> None:
    """Raise ``ReportSchemaError`` if ``doc`` breaks the schema or holds a non-finite number."""
    bad = _non_finite(doc)
    if bad:
        raise ReportSchemaError(f"non-finite number at {bad}")
    validator = jsonschema.Draft202012Validator(report_schema())
    err = jsonschema.exceptions.best_match(validator.iter_errors(doc))
    if err is not None:
        where = "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)
        raise ReportSchemaError(f"{where}: {err.message}")
