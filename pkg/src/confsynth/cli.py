"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 resource
error (grid cap or memory). Errors print one ``error: ...`` line on stderr;
stdout carries only the requested artifact.
"""

from __future__ import annotations

import argparse
import inspect
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .conformal import DIRECTIONS, PValueOptions
from .dataset import (
    TOY_VERSION,
    LabeledDataset,
    SplitConfig,
    atomic_write_text,
    dataset_to_csv,
    load_csv,
    make_toy,
    save_csv,
    stratified_split,
)
from .errors import ConfigError, DataError, ResourceError
from .evaluation import KINDS, ClassifierSpec, run_comparison
from .nonconformity import METRICS, NcmConfig
from .synthesis import (
    SynthesisConfig,
    export_field,
    fit,
    score_grid,
    synthesize,
    write_field,
    write_region_summary,
)
from .grid import build_grid_spec


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def module_defaults() -> dict[str, object]:
    """Module-level defaults keyed by CLI destination name."""
    synth = SynthesisConfig()
    split = SplitConfig()
    ncm = NcmConfig()
    pv = PValueOptions()
    clf = ClassifierSpec()
    toy = inspect.signature(make_toy).parameters
    comparison = inspect.signature(run_comparison).parameters
    return {
        "n_total": toy["n_total"].default,
        "minority_fraction": toy["minority_fraction"].default,
        "toy_seed": toy["seed"].default,
        "repeats": comparison["repeats"].default,
        "eval_workers": comparison["workers"].default,
        "epsilon": synth.epsilon,
        "grid_step": synth.grid_step,
        "grid_cap": synth.grid_cap,
        "grid_pad": synth.grid_pad,
        "chunk_size": synth.chunk_size,
        "workers": synth.workers,
        "dedupe": synth.dedupe,
        "k": ncm.k,
        "metric": ncm.metric,
        "calib_fraction": split.calib_fraction,
        "seed": split.seed,
        "pvalue_direction": pv.direction,
        "smoothed": pv.smoothed,
        "tie_seed": pv.tie_seed,
        "classifier": clf.kind,
        "hidden_units": clf.hidden_units,
        "learning_rate": clf.learning_rate,
        "epochs": clf.epochs,
    }


def _add_data(p, train_required=True):
    p.add_argument("--train", required=train_required, help="training CSV")
    p.add_argument("--label-column", default="label")


def _add_conformal(p, d):
    p.add_argument("--grid-step", type=float, default=d["grid_step"])
    p.add_argument("--k", type=int, default=d["k"])
    p.add_argument("--metric", choices=METRICS, default=d["metric"])
    p.add_argument("--calib-fraction", type=float, default=d["calib_fraction"])
    p.add_argument("--seed", type=int, default=d["seed"])
    p.add_argument("--pvalue-direction", choices=DIRECTIONS, default=d["pvalue_direction"])
    p.add_argument("--smoothed", action="store_true", default=d["smoothed"])
    p.add_argument("--tie-seed", type=int, default=d["tie_seed"])
    p.add_argument("--grid-cap", type=int, default=d["grid_cap"])
    p.add_argument("--grid-pad", type=int, default=d["grid_pad"])
    p.add_argument("--chunk-size", type=int, default=d["chunk_size"])
    p.add_argument("--workers", type=int, default=d["workers"],
                   help="grid-scoring threads (default: available CPUs)")


def build_parser() -> argparse.ArgumentParser:
    d = module_defaults()
    parser = _Parser(prog="confsynth", description="Conformal data synthesis from high-confidence regions.")
    parser.add_argument("--version", action="store_true", help="print version and exit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("toy-gen", help="generate the 2-D imbalanced toy dataset")
    p.add_argument("--n-total", type=int, default=d["n_total"])
    p.add_argument("--minority-fraction", type=float, default=d["minority_fraction"])
    p.add_argument("--seed", type=int, default=d["toy_seed"])
    p.add_argument("--out", help="output CSV (default: stdout)")

    p = sub.add_parser("split", help="stratified proper/calibration split")
    _add_data(p)
    p.add_argument("--calib-fraction", type=float, default=d["calib_fraction"])
    p.add_argument("--seed", type=int, default=d["seed"])
    p.add_argument("--out-proper", required=True)
    p.add_argument("--out-calib", required=True)

    p = sub.add_parser("synth", help="synthesise samples from high-confidence regions")
    _add_data(p)
    p.add_argument("--epsilon", type=float, default=d["epsilon"])
    _add_conformal(p, d)
    p.add_argument("--minority-only", action="append", metavar="CLASS",
                   help="emit only this class (repeatable; label as written in the CSV)")
    p.add_argument("--dedupe", action="store_true", default=d["dedupe"],
                   help="drop grid points claimed by more than one class")
    p.add_argument("--out", help="synthetic CSV (default: stdout)")
    p.add_argument("--regions", help="region summary JSON (default: regions.json beside --out)")
    p.add_argument("--field", help="also write the p-value field CSV here")

    p = sub.add_parser("score-grid", help="write per-class grid p-values as CSV")
    _add_data(p)
    _add_conformal(p, d)
    p.add_argument("--out", help="field CSV (default: stdout)")

    p = sub.add_parser("eval", help="compare classifiers trained on original, synthetic and combined data")
    p.add_argument("--orig", required=True)
    p.add_argument("--syn", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--label-column", default="label")
    p.add_argument("--repeats", type=int, default=d["repeats"])
    p.add_argument("--seed", type=int, default=d["seed"])
    p.add_argument("--classifier", choices=KINDS, default=d["classifier"])
    p.add_argument("--hidden-units", type=int, default=d["hidden_units"])
    p.add_argument("--learning-rate", type=float, default=d["learning_rate"])
    p.add_argument("--epochs", type=int, default=d["epochs"])
    p.add_argument("--workers", type=int, default=d["eval_workers"], help="parallel training runs")
    p.add_argument("--out", help="report JSON (default: stdout)")

    sub.add_parser("version", help="print version")
    return parser


def _version_line() -> str:
    return f"confsynth {__version__} ({TOY_VERSION})"


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def _synthesis_config(args, train: LabeledDataset, epsilon: float) -> SynthesisConfig:
    minority = None
    if getattr(args, "minority_only", None):
        names = list(train.class_names or [])
        minority = []
        for raw in args.minority_only:
            for name in raw.split(","):
                if name not in names:
                    raise DataError(f"unknown class {name!r} in --minority-only")
                minority.append(names.index(name))
    return SynthesisConfig(
        epsilon=epsilon,
        grid_step=args.grid_step,
        ncm=NcmConfig(args.k, args.metric),
        split=SplitConfig(args.calib_fraction, args.seed),
        pvalues=PValueOptions(args.smoothed, args.tie_seed, args.pvalue_direction),
        grid_cap=args.grid_cap,
        grid_pad=args.grid_pad,
        chunk_size=args.chunk_size,
        workers=args.workers,
        minority_only=tuple(minority) if minority is not None else None,
        dedupe=getattr(args, "dedupe", False),
    )


def _cmd_toy_gen(args):
    data = make_toy(args.n_total, args.minority_fraction, args.seed)
    _emit(dataset_to_csv(data), args.out)


def _cmd_split(args):
    train = load_csv(args.train, args.label_column)
    proper, calib = stratified_split(train, SplitConfig(args.calib_fraction, args.seed))
    save_csv(proper, args.out_proper, args.label_column)
    save_csv(calib, args.out_calib, args.label_column)


def _cmd_synth(args):
    if not 0.0 <= args.epsilon <= 1.0:
        raise ConfigError("epsilon must be in [0,1]")
    train = load_csv(args.train, args.label_column)
    config = _synthesis_config(args, train, args.epsilon)
    result = synthesize(train, config)
    names = train.class_names
    _emit(dataset_to_csv(result.synthetic, args.label_column), args.out)
    regions_path = args.regions
    if regions_path is None and args.out:
        regions_path = str(Path(args.out).parent / "regions.json")
    if regions_path:
        write_region_summary(result, regions_path, names)
    if args.field:
        if result.field is None:
            raise ResourceError("grid too large to keep a dense p-value field; raise the grid step")
        export_field(result.field, args.field, names, config.chunk_size)


def _cmd_score_grid(args):
    train = load_csv(args.train, args.label_column)
    train.require_all_classes("training set")
    config = _synthesis_config(args, train, 0.0)
    proper, calib = stratified_split(train, config.split)
    model = fit(proper, calib, config.ncm)
    spec = build_grid_spec(train, config.grid_step, config.grid_cap, config.grid_pad)
    if spec.size * model.n_classes > config.dense_limit:
        raise ResourceError(
            f"field would hold {spec.size * model.n_classes} values, above {config.dense_limit}; "
            "use a larger grid step"
        )
    pfield = score_grid(model, spec, config.pvalues, config.chunk_size, config.workers)
    if args.out:
        export_field(pfield, args.out, train.class_names, config.chunk_size)
    else:
        write_field(pfield, sys.stdout, train.class_names, config.chunk_size)


def _cmd_eval(args):
    if args.repeats < 1:
        raise ConfigError("repeats must be at least 1")
    orig = load_csv(args.orig, args.label_column)
    syn = load_csv(args.syn, args.label_column, orig.class_names) if _has_rows(args.syn) \
        else LabeledDataset(orig.features[:0], orig.labels[:0], orig.class_names, orig.n_classes)
    test = load_csv(args.test, args.label_column, orig.class_names)
    if syn.n_classes > orig.n_classes or test.n_classes > orig.n_classes:
        raise DataError("synthetic or test data contain classes absent from the original data")
    spec = ClassifierSpec(args.classifier, args.hidden_units, args.learning_rate, args.epochs, args.seed)
    report = run_comparison(orig, syn, test, spec, args.repeats, args.workers).to_dict()
    report["config"]["class_names"] = list(orig.class_names or [])
    _emit(json.dumps(report, indent=2) + "\n", args.out)


def _has_rows(path) -> bool:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    return len(lines) > 1


COMMANDS = {
    "toy-gen": _cmd_toy_gen,
    "split": _cmd_split,
    "synth": _cmd_synth,
    "score-grid": _cmd_score_grid,
    "eval": _cmd_eval,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.version or args.command == "version":
            print(_version_line())
            return 0
        if args.command is None:
            raise UsageError("a subcommand is required")
        COMMANDS[args.command](args)
        return 0
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ResourceError, MemoryError) as exc:
        print(f"error: {exc or 'out of memory'}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
