"""End-to-end run: dataset -> reference -> sampled sets -> attributions -> report.

Every stage produces a plain JSON-able document so the next stage can be
resumed from disk. Output files are written to a scratch directory next
to the target and moved into place only when the whole stage succeeds.
"""
from __future__ import annotations

import contextlib
import csv
import datetime as _dt
import json
import logging
import math
import shutil
import tempfile
from pathlib import Path

import numpy as np

from .attribution import AttributionSet, Estimator, attribution_space
from .config import RunConfig
from .data import DataError, Dataset, LossKind, Perturbation, empirical_loss, load_csv, split_dataset, \
    subset_family, subset_label
from .metrics import metrics_report
from .models import MlpHyper, QuadraticOracle, gen_quadratic, load_bundle, predict, save_bundle, \
    train_linear, train_mlp
from .rashomon import RashomonConfig, is_member, rashomon_threshold
from .sampler import LineSearch, SampleResult, SamplerConfig, baseline_random_input, \
    baseline_random_weights, convergence_report, grs_sample_nested, trajectory_rows

logger = logging.getLogger(__name__)

REPORT_VERSION = 1
SAMPLES_VERSION = 1
SPLIT_NAMES = ("train", "test", "validation")


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@contextlib.contextmanager
def stage(name: str):
    logger.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage attached
        raise StageError(name, exc) from exc


@contextlib.contextmanager
def staged_output(out_dir):
    """Yield a scratch directory whose files are moved into ``out_dir`` on success.

    On failure the scratch directory is removed and ``out_dir`` is left as it was.
    """
    out = Path(out_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}-partial-", dir=out.parent))
    try:
        yield tmp
        out.mkdir(parents=True, exist_ok=True)
        for f in sorted(tmp.iterdir()):
            f.replace(out / f.name)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


# --------------------------------------------------------------------------
# dataset and reference
# --------------------------------------------------------------------------

def load_dataset(cfg: RunConfig) -> Dataset:
    ds = cfg.dataset
    if ds["source"] == "synthetic-quadratic":
        return gen_quadratic(ds["n"], ds["seed"])
    return load_csv(ds["path"], ds["targets"])


def load_splits(cfg: RunConfig) -> dict:
    d = load_dataset(cfg)
    parts = split_dataset(d, tuple(cfg.dataset["split"]), cfg.dataset["split_seed"])
    return dict(zip(SPLIT_NAMES, parts))


def build_reference(cfg: RunConfig, splits: dict):
    ref = cfg.reference
    kind = ref["kind"]
    train = splits["train"]
    if kind == "quadratic-oracle":
        return QuadraticOracle()
    if kind == "load-bundle":
        f = load_bundle(ref["path"])
        if f.input_dim != train.p or f.output_dim != train.m:
            raise DataError(f"bundle dims ({f.input_dim}, {f.output_dim}) do not match the dataset "
                            f"({train.p}, {train.m})")
        return f
    if kind == "train-linear":
        return train_linear(train, ref["l2"])
    loss = cfg.rashomon["loss"] if cfg.rashomon["loss"] in ("mse", "logloss") else "mse"
    hyper = MlpHyper(hidden=tuple(ref["hidden"]), epochs=ref["epochs"], learning_rate=ref["learning_rate"],
                     batch_size=ref["batch_size"], seed=ref["seed"], loss=loss)
    return train_mlp(train, hyper)


def reference_losses(f, splits: dict, kind) -> dict:
    return {name: empirical_loss(predict(f, d.X), d.Y, kind) for name, d in splits.items()}


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------

def _configs(cfg: RunConfig):
    rs, sm, at = cfg.rashomon, cfg.sampler, cfg.attribution
    rconfig = RashomonConfig(0.0, rs["boundary"], rs["loss"], rs["sparsity_tolerance"])
    ls = LineSearch(sm["initial_lambda"], sm["growth"], sm["max_doublings"], sm["bisection_tol"])
    sconfig = SamplerConfig(levels=sm["levels"], schedule=sm["schedule"], gamma=sm["gamma"],
                            epsilon_start=sm["epsilon_start"], signs=sm["signs"], line_search=ls,
                            samples_per_level=sm["samples_per_level"], seed=cfg.seed)
    est = Estimator(at["estimator"], at["repeats"], at["seed"], at["cap"])
    return rconfig, sconfig, est


def attribution_subsets(cfg: RunConfig, p: int) -> list:
    return subset_family(p, range(1, cfg.attribution["order"] + 1))


def sample_all(cfg: RunConfig, f_ref, d: Dataset) -> dict:
    """``{method: {epsilon: SampleResult}}`` for GRS and every configured baseline."""
    rconfig, sconfig, est = _configs(cfg)
    subsets = attribution_subsets(cfg, d.p)
    eps = cfg.epsilons
    out = {}
    with stage("sample:grs"):
        if cfg.sampler["schedule"] == "geometric":
            # Geometric ladders already share prefixes; run each tolerance on its own.
            from .sampler import grs_sample
            out["grs"] = {e: grs_sample(f_ref, d, rconfig.with_epsilon(e), sconfig, est, subsets) for e in eps}
        else:
            out["grs"] = grs_sample_nested(f_ref, d, rconfig, eps, sconfig, est, subsets)
    bl = cfg.baselines
    for method in bl["methods"]:
        cache: dict = {}
        with stage(f"sample:{method}"):
            runs = {}
            for e in eps:
                if method == "random-input":
                    runs[e] = baseline_random_input(f_ref, d, rconfig.with_epsilon(e), bl["n_candidates"],
                                                    bl["input_scale"], bl["seed"], est, subsets, cache)
                else:
                    runs[e] = baseline_random_weights(f_ref, d, rconfig.with_epsilon(e), bl["n_candidates"],
                                                      bl["weight_scale"], bl["seed"], est, subsets, cache)
            out[method] = runs
    return out


def _member_doc(m, names) -> dict:
    return {
        "model_id": m.model_id,
        "source": m.source,
        "loss": float(m.ref_loss_value),
        "tau": [float(t) for t in m.perturbation.tau],
        "zeta": [float(z) for z in m.perturbation.zeta],
        "attribution": {subset_label(s, names): float(v) for s, v in (m.attribution or {}).items()},
    }


def _run_doc(method: str, eps: float, res: SampleResult, names) -> dict:
    sub = res.subset
    return {
        "method": method,
        "epsilon": float(eps),
        "boundary": sub.config.boundary.value,
        "ref_loss": float(sub.ref_loss),
        "threshold": float(sub.threshold),
        "schedule": [float(e) for e in res.schedule],
        "n_searched": int(sub.n_searched),
        "rejected_count": int(sub.rejected_count),
        "rejections": dict(sub.rejections),
        "members": [_member_doc(m, names) for m in sub.members],
    }


def samples_document(cfg: RunConfig, f_ref, splits: dict, results: dict) -> dict:
    ev = splits[cfg.rashomon["evaluation_split"]]
    names = ev.feature_names
    runs = [_run_doc(method, e, res, names) for method, by_eps in results.items()
            for e, res in sorted(by_eps.items())]
    grs = results.get("grs", {})
    trajectories, convergence = [], None
    positive = [e for e in grs if e > 0]
    if positive:
        top = grs[max(positive)]
        trajectories = trajectory_rows(top.trajectories, names)
        rep = convergence_report(top.trajectories, top.subset.ref_loss, top.threshold)
        convergence = {
            "max_gap": float(rep.max_gap),
            "threshold": float(top.threshold),
            "flat": [[subset_label(s, names), "+" if g > 0 else "-"] for s, g in rep.flat],
            "exceeded": [[subset_label(s, names), "+" if g > 0 else "-"] for s, g in rep.exceeded],
        }
    kind = LossKind.parse(cfg.rashomon["loss"])
    return {
        "version": SAMPLES_VERSION,
        "config": cfg.as_dict(),
        "reference": {
            "kind": cfg.reference["kind"],
            "model_kind": getattr(f_ref, "kind", type(f_ref).__name__),
            "loss_kind": kind.value,
            "evaluation_split": cfg.rashomon["evaluation_split"],
            "losses": reference_losses(f_ref, splits, kind),
            "rows": {k: int(v.n) for k, v in splits.items()},
            "feature_names": list(names),
            "target_names": list(ev.target_names),
        },
        "subsets": [{"label": subset_label(s, names), "index": list(s)} for s in attribution_subsets(cfg, ev.p)],
        "runs": runs,
        "trajectories": trajectories,
        "convergence": convergence,
    }


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------

def _check_members(run: dict) -> None:
    rconfig = RashomonConfig(run["epsilon"], run["boundary"])
    theta = rashomon_threshold(rconfig, run["ref_loss"])
    if not math.isclose(theta, run["threshold"], rel_tol=1e-12, abs_tol=0.0):
        raise DataError(f"{run['method']}@{run['epsilon']}: stored threshold disagrees with the boundary")
    for m in run["members"]:
        if not is_member(m["loss"], run["ref_loss"], rconfig):
            raise DataError(f"{run['method']}@{run['epsilon']}: member {m['model_id']} is outside the set")


def _finite_or_none(x):
    return float(x) if x is not None and math.isfinite(x) else None


def space_key(method: str, eps: float) -> str:
    return f"{method}@{float(eps)!r}"


def build_report(samples: dict) -> dict:
    """Assemble the run report from a samples document (re-checking every member)."""
    if samples.get("version") != SAMPLES_VERSION:
        raise DataError(f"unsupported samples version {samples.get('version')!r}")
    index = {e["label"]: tuple(e["index"]) for e in samples["subsets"]}
    methods, spaces, metrics = [], {}, []
    for run in samples["runs"]:
        _check_members(run)
        label = {s: lab for lab, s in index.items()}
        sets = [AttributionSet(m["model_id"], {s: m["attribution"][lab] for lab, s in index.items()})
                for m in run["members"]]
        space = attribution_space(sets, "ref")
        mrep = metrics_report(space, sets, len(sets), run["n_searched"])
        spaces[space_key(run["method"], run["epsilon"])] = {
            label[s]: {"min": r.min, "max": r.max, "reference": r.reference, "width": r.max - r.min}
            for s, r in space.ranges.items()
        }
        row = mrep.as_dict()
        row["min_pairwise_distance"] = _finite_or_none(row["min_pairwise_distance"])
        row.update(method=run["method"], epsilon=run["epsilon"])
        metrics.append(row)
        methods.append({
            "method": run["method"],
            "epsilon": run["epsilon"],
            "boundary": run["boundary"],
            "ref_loss": run["ref_loss"],
            "threshold": run["threshold"],
            "schedule": run["schedule"],
            "n_members": len(run["members"]),
            "n_searched": run["n_searched"],
            "rejected_count": run["rejected_count"],
            "rejections": run["rejections"],
            "ser": row["ser"],
            "members": [{k: m[k] for k in ("model_id", "source", "loss", "tau", "zeta")} for m in run["members"]],
        })
    return {
        "version": REPORT_VERSION,
        "config": samples["config"],
        "reference": samples["reference"],
        "methods": methods,
        "attribution_spaces": spaces,
        "metrics": metrics,
        "trajectories": [
            {k: _finite_or_none(v) if k in ("lambda", "loss") else v for k, v in r.items()}
            for r in samples["trajectories"]
        ],
        "convergence": samples["convergence"],
        "timestamp": None,
    }


# --------------------------------------------------------------------------
# files
# --------------------------------------------------------------------------

def dump_json(doc, path) -> None:
    text = json.dumps(doc, sort_keys=True, indent=2, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from None


def write_attributions_csv(samples: dict, path) -> None:
    labels = [e["label"] for e in samples["subsets"]]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "epsilon", "model_id", "subset", "score"])
        for run in samples["runs"]:
            for m in run["members"]:
                for lab in labels:
                    w.writerow([run["method"], repr(run["epsilon"]), m["model_id"], lab,
                                repr(m["attribution"][lab])])


def write_fer_csv(report: dict, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "epsilon", "order", "fer", "ser", "n_members"])
        for row in report["metrics"]:
            for order, key in ((1, "fer_first_order"), (2, "fer_second_order")):
                w.writerow([row["method"], repr(row["epsilon"]), order, repr(row[key]), repr(row["ser"]),
                            row["n_members"]])


def write_trajectories_csv(samples: dict, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["direction", "sign", "level", "epsilon", "lambda", "loss"])
        for r in samples["trajectories"]:
            w.writerow([r["direction"], r["sign"], r["level"], repr(r["epsilon"]),
                        "" if r["lambda"] is None else repr(r["lambda"]),
                        "" if r["loss"] is None else repr(r["loss"])])


def emit_report(report: dict, samples: dict, out_dir, timestamp: str | None = None) -> dict:
    """Write report.json, fer.csv, attributions.csv and trajectories.csv into ``out_dir``."""
    from .schema import validate_report

    report = dict(report)
    report["timestamp"] = timestamp or _dt.datetime.now(_dt.timezone.utc).isoformat()
    validate_report(report)
    out = Path(out_dir)
    dump_json(report, out / "report.json")
    write_fer_csv(report, out / "fer.csv")
    write_attributions_csv(samples, out / "attributions.csv")
    write_trajectories_csv(samples, out / "trajectories.csv")
    return report


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------

def train_stage(cfg: RunConfig):
    with stage("dataset"):
        splits = load_splits(cfg)
    with stage("reference"):
        f_ref = build_reference(cfg, splits)
    return splits, f_ref


def sample_stage(cfg: RunConfig, splits: dict | None = None, f_ref=None) -> dict:
    if splits is None or f_ref is None:
        splits, f_ref = train_stage(cfg)
    ev = splits[cfg.rashomon["evaluation_split"]]
    results = sample_all(cfg, f_ref, ev)
    with stage("serialize"):
        return samples_document(cfg, f_ref, splits, results), f_ref


def run_pipeline(cfg: RunConfig, out_dir=None) -> dict:
    """Run every stage and write the full output set; returns the report."""
    out_dir = Path(out_dir or cfg.output["dir"])
    with staged_output(out_dir) as tmp:
        samples, f_ref = sample_stage(cfg)
        with stage("report"):
            report = build_report(samples)
        with stage("emit"):
            save_bundle(f_ref, tmp / "reference.json")
            dump_json(samples, tmp / "samples.json")
            report = emit_report(report, samples, tmp)
    return report
