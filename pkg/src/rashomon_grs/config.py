"""Run configuration: TOML text -> validated, fully defaulted ``RunConfig``.

Precedence, lowest to highest: built-in defaults, the config file,
command-line flags. Unknown keys are errors.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .data import LossKind

BASELINES = ("random-input", "random-weight")
REFERENCE_KINDS = ("quadratic-oracle", "train-linear", "train-mlp", "load-bundle")
SPLITS = ("train", "test", "validation")


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "seed": 0,
    "dataset": {
        "source": "synthetic-quadratic",
        "n": 12000,
        "seed": None,
        "path": None,
        "targets": [],
        "split": [0.8, 0.1, 0.1],
        "split_seed": None,
    },
    "reference": {
        "kind": "quadratic-oracle",
        "path": None,
        "l2": 0.0,
        "hidden": [64, 64, 64],
        "epochs": 600,
        "learning_rate": 3e-3,
        "batch_size": 128,
        "seed": None,
    },
    "rashomon": {
        "epsilons": None,
        "boundary": "multiplicative",
        "loss": "mse",
        "sparsity_tolerance": 1e-9,
        "evaluation_split": "test",
    },
    "sampler": {
        "levels": 5,
        "schedule": "linear",
        "gamma": 2.0,
        "epsilon_start": None,
        "signs": "both",
        "initial_lambda": 1e-3,
        "growth": 2.0,
        "max_doublings": 40,
        "bisection_tol": 1e-6,
        "samples_per_level": 1,
    },
    "attribution": {
        "estimator": "mc",
        "repeats": 100,
        "seed": None,
        "cap": 512,
        "order": 2,
    },
    "baselines": {
        "methods": [],
        "n_candidates": 200,
        "input_scale": 0.1,
        "weight_scale": 0.01,
        "seed": None,
    },
    "output": {
        "dir": "grs-out",
    },
}


@dataclass
class RunConfig:
    seed: int
    dataset: dict
    reference: dict
    rashomon: dict
    sampler: dict
    attribution: dict
    baselines: dict
    output: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    @property
    def epsilons(self) -> list:
        return list(self.rashomon["epsilons"])

    @property
    def methods(self) -> list:
        return ["grs"] + list(self.baselines["methods"])


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{where}: expected a table")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = val
    return out


def parse_text(text: str) -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from None


def _num(section: dict, key: str, where: str, lo=None, strict=False, integer=False):
    val = section[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {val!r}")
    if integer and int(val) != val:
        raise ConfigError(f"{where}.{key}: expected an integer, got {val!r}")
    if lo is not None and (val <= lo if strict else val < lo):
        raise ConfigError(f"{where}.{key}: must be {'>' if strict else '>='} {lo}, got {val!r}")
    section[key] = int(val) if integer else float(val)


def _choice(section: dict, key: str, where: str, options):
    if section[key] not in options:
        raise ConfigError(f"{where}.{key}: must be one of {list(options)}, got {section[key]!r}")


def _validate(raw: dict) -> RunConfig:
    cfg = raw
    _num(cfg, "seed", "run", 0, integer=True)
    seed = cfg["seed"]

    ds = cfg["dataset"]
    _choice(ds, "source", "dataset", ("synthetic-quadratic", "csv"))
    if ds["source"] == "csv":
        if not ds["path"]:
            raise ConfigError("dataset.path: required for source = 'csv'")
        if not ds["targets"] or not all(isinstance(t, str) for t in ds["targets"]):
            raise ConfigError("dataset.targets: list of target column names required for source = 'csv'")
    _num(ds, "n", "dataset", 2, integer=True)
    for k in ("seed", "split_seed"):
        if ds[k] is None:
            ds[k] = seed
        _num(ds, k, "dataset", 0, integer=True)
    split = ds["split"]
    if (not isinstance(split, list) or len(split) != 3
            or any(isinstance(f, bool) or not isinstance(f, (int, float)) or f <= 0 for f in split)
            or abs(sum(split) - 1.0) > 1e-9):
        raise ConfigError(f"dataset.split: three positive fractions summing to 1 required, got {split!r}")
    ds["split"] = [float(f) for f in split]

    ref = cfg["reference"]
    _choice(ref, "kind", "reference", REFERENCE_KINDS)
    if ref["kind"] == "load-bundle" and not ref["path"]:
        raise ConfigError("reference.path: required for kind = 'load-bundle'")
    if ref["kind"] == "quadratic-oracle" and ds["source"] != "synthetic-quadratic":
        raise ConfigError("reference.kind: quadratic-oracle needs dataset.source = 'synthetic-quadratic'")
    _num(ref, "l2", "reference", 0)
    _num(ref, "epochs", "reference", 0, integer=True)
    _num(ref, "learning_rate", "reference", 0, strict=True)
    _num(ref, "batch_size", "reference", 1, integer=True)
    if ref["seed"] is None:
        ref["seed"] = seed
    _num(ref, "seed", "reference", 0, integer=True)
    if not isinstance(ref["hidden"], list) or not ref["hidden"] or any(
            isinstance(h, bool) or not isinstance(h, int) or h < 1 for h in ref["hidden"]):
        raise ConfigError(f"reference.hidden: list of positive integers required, got {ref['hidden']!r}")

    rs = cfg["rashomon"]
    eps = rs["epsilons"]
    if isinstance(eps, (int, float)) and not isinstance(eps, bool):
        eps = [eps]
    if not isinstance(eps, list) or not eps:
        raise ConfigError("rashomon.epsilons: non-empty list of tolerances required")
    for e in eps:
        if isinstance(e, bool) or not isinstance(e, (int, float)) or e < 0:
            raise ConfigError(f"rashomon.epsilons: tolerances must be numbers >= 0, got {e!r}")
    rs["epsilons"] = sorted(set(float(e) for e in eps))
    _choice(rs, "boundary", "rashomon", ("multiplicative", "additive"))
    try:
        rs["loss"] = LossKind.parse(rs["loss"]).value
    except ValueError:
        raise ConfigError(f"rashomon.loss: unknown loss {rs['loss']!r}") from None
    _num(rs, "sparsity_tolerance", "rashomon", 0)
    _choice(rs, "evaluation_split", "rashomon", SPLITS)

    sm = cfg["sampler"]
    _num(sm, "levels", "sampler", 1, integer=True)
    _choice(sm, "schedule", "sampler", ("linear", "geometric"))
    _num(sm, "gamma", "sampler", 1, strict=True)
    if sm["schedule"] == "geometric":
        if sm["epsilon_start"] is None:
            raise ConfigError("sampler.epsilon_start: required for the geometric schedule")
        _num(sm, "epsilon_start", "sampler", 0, strict=True)
    _choice(sm, "signs", "sampler", ("+", "-", "both"))
    _num(sm, "initial_lambda", "sampler", 0, strict=True)
    _num(sm, "growth", "sampler", 1, strict=True)
    _num(sm, "max_doublings", "sampler", 0, integer=True)
    _num(sm, "bisection_tol", "sampler", 0, strict=True)
    _num(sm, "samples_per_level", "sampler", 1, integer=True)

    at = cfg["attribution"]
    _choice(at, "estimator", "attribution", ("mc", "full"))
    _num(at, "repeats", "attribution", 2, integer=True)
    _num(at, "cap", "attribution", 2, integer=True)
    _choice(at, "order", "attribution", (1, 2))
    if at["seed"] is None:
        at["seed"] = seed
    _num(at, "seed", "attribution", 0, integer=True)

    bl = cfg["baselines"]
    methods = bl["methods"]
    if not isinstance(methods, list) or any(m not in BASELINES for m in methods):
        raise ConfigError(f"baselines.methods: entries must be among {list(BASELINES)}, got {methods!r}")
    bl["methods"] = sorted(set(methods), key=BASELINES.index)
    if "random-weight" in bl["methods"] and ref["kind"] not in ("train-mlp", "load-bundle"):
        raise ConfigError("baselines.methods: random-weight needs an MLP reference")
    _num(bl, "n_candidates", "baselines", 1, integer=True)
    _num(bl, "input_scale", "baselines", 0, strict=True)
    _num(bl, "weight_scale", "baselines", 0)
    if bl["seed"] is None:
        bl["seed"] = seed
    _num(bl, "seed", "baselines", 0, integer=True)

    if not isinstance(cfg["output"]["dir"], str) or not cfg["output"]["dir"]:
        raise ConfigError("output.dir: non-empty path required")
    return RunConfig(**cfg)


def validate_config(text: str = "", overrides: dict | None = None) -> RunConfig:
    """Parse, merge with defaults and overrides, and validate a run config."""
    raw = _merge(DEFAULTS, parse_text(text) if text else {})
    if overrides:
        raw = _merge(raw, overrides)
    return _validate(raw)


def overrides_from_flags(args) -> dict:
    """Map parsed command-line flags onto config keys (flags win over the file)."""
    over: dict = {}

    def put(section, key, value):
        if value is not None:
            over.setdefault(section, {})[key] = value

    if getattr(args, "epsilon", None):
        put("rashomon", "epsilons", list(args.epsilon))
    put("sampler", "levels", getattr(args, "levels", None))
    put("rashomon", "loss", getattr(args, "loss", None))
    put("attribution", "order", getattr(args, "order", None))
    if getattr(args, "baseline", None):
        put("baselines", "methods", list(args.baseline))
    put("baselines", "n_candidates", getattr(args, "max_models", None))
    put("output", "dir", getattr(args, "out", None))
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    return over
