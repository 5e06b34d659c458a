"""Command-line entry point.

Subcommands run one stage each (``synth``, ``train``, ``sample``,
``attribute``, ``report``) or all of them (``run``). Settings come from
built-in defaults, then ``--config FILE``, then individual flags.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, overrides_from_flags, validate_config
from .data import LossKind, write_csv
from .models import gen_quadratic, save_bundle
from .pipeline import StageError, build_report, dump_json, emit_report, read_json, run_pipeline, \
    sample_stage, stage, staged_output, train_stage, write_attributions_csv, write_trajectories_csv

logger = logging.getLogger("rashomon_grs")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML run configuration")
    p.add_argument("--epsilon", type=float, action="append", help="Rashomon tolerance (repeatable)")
    p.add_argument("--levels", type=int, help="tolerance ladder length K")
    p.add_argument("--loss", choices=[k.value for k in LossKind])
    p.add_argument("--order", type=int, choices=(1, 2), help="highest attribution order")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--baseline", action="append", choices=("random-input", "random-weight"),
                   help="comparison sampler to run as well (repeatable)")
    p.add_argument("--max-models", type=int, dest="max_models", help="candidates per random baseline")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rashomon-grs", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write the synthetic quadratic dataset as CSV")
    p.add_argument("--n", type=int, default=12000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("train", help="build the reference model and save it as a bundle")
    _common(p)
    p = sub.add_parser("sample", help="sample sets around the reference (writes samples.json)")
    _common(p)
    p.add_argument("--reference", type=Path, help="reference bundle from 'train' (skips training)")
    p = sub.add_parser("attribute", help="attributions.csv from samples.json")
    p.add_argument("--samples", type=Path, required=True)
    p.add_argument("--out", help="output directory (default: next to samples.json)")
    p = sub.add_parser("report", help="report.json and fer.csv from samples.json")
    p.add_argument("--samples", type=Path, required=True)
    p.add_argument("--out", help="output directory (default: next to samples.json)")
    p = sub.add_parser("run", help="all stages")
    _common(p)
    return parser


def load_run_config(args):
    text = ""
    if args.config is not None:
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
    over = overrides_from_flags(args)
    if getattr(args, "reference", None) is not None:
        over.setdefault("reference", {}).update(kind="load-bundle", path=str(args.reference))
    return validate_config(text, over)


def _cmd_synth(args) -> None:
    with stage("synth"):
        if args.n < 2:
            raise ConfigError("--n must be >= 2")
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        tmp = out.with_name(f".{out.name}.partial")
        try:
            write_csv(gen_quadratic(args.n, args.seed), tmp)
            tmp.replace(out)
        finally:
            tmp.unlink(missing_ok=True)
    print(out)


def _cmd_train(args) -> None:
    cfg = load_run_config(args)
    with staged_output(cfg.output["dir"]) as tmp:
        _, f_ref = train_stage(cfg)
        with stage("emit"):
            save_bundle(f_ref, tmp / "reference.json")
    print(Path(cfg.output["dir"]) / "reference.json")


def _cmd_sample(args) -> None:
    cfg = load_run_config(args)
    with staged_output(cfg.output["dir"]) as tmp:
        samples, f_ref = sample_stage(cfg)
        with stage("emit"):
            save_bundle(f_ref, tmp / "reference.json")
            dump_json(samples, tmp / "samples.json")
            write_trajectories_csv(samples, tmp / "trajectories.csv")
    print(Path(cfg.output["dir"]) / "samples.json")


def _samples_in(args):
    with stage("load"):
        samples = read_json(args.samples)
    return samples, Path(args.out) if args.out else args.samples.parent


def _cmd_attribute(args) -> None:
    samples, out = _samples_in(args)
    with staged_output(out) as tmp:
        with stage("attribute"):
            write_attributions_csv(samples, tmp / "attributions.csv")
    print(out / "attributions.csv")


def _cmd_report(args) -> None:
    samples, out = _samples_in(args)
    with staged_output(out) as tmp:
        with stage("report"):
            report = build_report(samples)
        with stage("emit"):
            emit_report(report, samples, tmp)
    print(out / "report.json")


def _cmd_run(args) -> None:
    cfg = load_run_config(args)
    run_pipeline(cfg)
    print(Path(cfg.output["dir"]) / "report.json")


COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "sample": _cmd_sample,
    "attribute": _cmd_attribute,
    "report": _cmd_report,
    "run": _cmd_run,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        if isinstance(exc.cause, ConfigError):
            print(f"config error: {exc.cause}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"error: {exc}", file=sys.stderr)
        logger.debug("traceback", exc_info=exc.cause)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
