"""Command line interface.

Subcommands cover the whole loop: generate a synthetic world, derive shifted
meta-sets, train the cascade, calibrate held-out tables, evaluate metrics,
sweep the loss weight, and emit the method-comparison report.  All outputs
are written atomically and every written path is echoed to stdout, so a
driver script can pick results up without guessing names.
"""

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import baselines, cascade, metaset, metrics
from ._util import atomic_write_text, child_seed, fmt_float
from .config import RunConfig, load_config
from .core import (
    ConfigError,
    InvalidTableError,
    LogitsFormatError,
    LogitsTable,
    UnlabeledTableError,
    derive_predictions,
    read_logits_file,
    write_logits_file,
)
from .regressor import ChecksumError, DimensionMismatchError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_MISMATCH = 4
EXIT_FORMAT = 5

_EPILOG = """\
exit codes:
  0  success
  2  bad usage or a contradictory configuration
  3  an input file or directory does not exist
  4  inputs disagree (class counts, labels, model/table shape)
  5  a file exists but is malformed (magic, version, truncation, checksum)
"""

SWEEP_LAMBDAS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)

_METHOD_LABELS = (("TS", "ts"), ("ETS", "ets"), ("IR", "ir"), ("IRM", "irm"), ("TS-IR", "ts-ir"))


def _emit(path) -> None:
    print(f"wrote {path}")


def _config_for(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "lam", None) is not None:
        cfg = replace(cfg, lam=args.lam)
    if getattr(args, "bins", None) is not None:
        cfg = replace(cfg, eval_bins=args.bins)
    return cfg.validate()


def _read_table(path) -> LogitsTable:
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such table file: {path}")
    return read_logits_file(path)


def _read_test_dir(path) -> list:
    if not os.path.isdir(path):
        raise FileNotFoundError(f"no such test-set directory: {path}")
    files = sorted(f for f in os.listdir(path) if f.endswith(".lgts"))
    if not files:
        raise FileNotFoundError(f"no .lgts files under {path}")
    return [read_logits_file(os.path.join(path, f)) for f in files]


def _parse_ablation(spec: str) -> cascade.AblationFlags:
    if not spec:
        return cascade.AblationFlags()
    valid = {
        "category-stage",
        "confidence-stage",
        "category-mean",
        "category-variance",
        "confidence-mean",
        "confidence-variance",
    }
    off = {}
    for name in spec.split(","):
        name = name.strip()
        if name not in valid:
            raise ConfigError(f"unknown ablation {name!r}; choose from {sorted(valid)}")
        off[name.replace("-", "_")] = False
    flags = cascade.AblationFlags(**off)
    flags.validate()
    return flags


def cmd_gen(args) -> int:
    cfg = _config_for(args)
    out = os.fspath(args.out)
    os.makedirs(out, exist_ok=True)
    world = metaset.sample_world(
        n_classes=cfg.n_classes,
        n_features=cfg.n_features,
        overconfidence=cfg.overconfidence,
        noise_scale=cfg.noise_scale,
        class_sep=cfg.class_sep,
        seed=child_seed(cfg.seed, 1),
    )
    world_path = os.path.join(out, "world.json")
    metaset.save_world(world, world_path)
    _emit(world_path)
    val = metaset.generate_split(world, cfg.n_val, seed=child_seed(cfg.seed, 2), name="val")
    val_path = os.path.join(out, "val.lgts")
    write_logits_file(val, val_path)
    _emit(val_path)
    tests_dir = os.path.join(out, "tests")
    os.makedirs(tests_dir, exist_ok=True)
    for table in metaset.build_test_sets(
        world, cfg.n_test, seed=child_seed(cfg.seed, 3), shifts=cfg.test_shifts
    ):
        p = os.path.join(tests_dir, table.name + ".lgts")
        write_logits_file(table, p)
        _emit(p)
    return EXIT_OK


def cmd_metasets(args) -> int:
    cfg = _config_for(args)
    if not os.path.exists(args.world):
        raise FileNotFoundError(f"no such world file: {args.world}")
    world = metaset.load_world(args.world)
    coll = metaset.build_metasets(
        world,
        cfg.n_meta,
        seed=child_seed(cfg.seed, 4),
        grid=cfg.grid(),
        test_shifts=cfg.test_shifts,
    )
    for p in metaset.save_metasets(coll, args.out):
        _emit(p)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config_for(args)
    coll = metaset.load_metasets(args.metasets)
    flags = _parse_ablation(args.ablate)
    model, history = cascade.train_cascade(
        coll,
        lam=cfg.lam,
        epochs=cfg.epochs,
        hidden=cfg.hidden,
        lr=cfg.lr,
        n_conf_bins=cfg.n_conf_bins,
        thresholds=cfg.thresholds,
        t_min=cfg.t_min,
        t_max=cfg.t_max,
        flags=flags,
        seed=child_seed(cfg.seed, 5),
    )
    cascade.save_model(model, args.out)
    _emit(args.out)
    loss_path = args.out + ".loss.csv"
    lines = ["epoch,loss"] + [f"{i},{fmt_float(v)}" for i, v in enumerate(history)]
    atomic_write_text(loss_path, "\n".join(lines) + "\n")
    _emit(loss_path)
    print(f"final mean training loss {fmt_float(history[-1])}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    table = _read_table(args.data)
    if args.method == "cascade":
        if not args.model:
            raise ConfigError("--model is required when --method cascade")
        if not os.path.exists(args.model):
            raise FileNotFoundError(f"no such model file: {args.model}")
        model = cascade.load_model(args.model)
        view, temps = cascade.apply_cascade(model, table)
    else:
        if not args.fit:
            raise ConfigError(f"--fit is required when --method {args.method}")
        if os.path.isdir(args.fit):
            fit_table = metaset.load_metasets(args.fit).pooled()
            source = "pooled"
        else:
            fit_table = _read_table(args.fit)
            source = "clean"
        cal = baselines.fit_calibrator(args.method, fit_table, fit_source=source)
        view = baselines.apply_calibrator(cal, table)
        temps = None
    # log-probabilities are valid logits whose softmax restores the
    # calibrated probabilities, so the output stays in the same file format
    out_logits = np.log(np.maximum(view.probs, 1e-300))
    write_logits_file(LogitsTable(out_logits, table.labels, name=table.name), args.out)
    _emit(args.out)
    if temps is not None:
        temps_path = args.out + ".temps.json"
        atomic_write_text(
            temps_path,
            json.dumps(
                {
                    "class_temps": temps.class_temps.tolist(),
                    "bin_temps": temps.bin_temps.tolist(),
                },
                indent=1,
            )
            + "\n",
        )
        _emit(temps_path)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config_for(args)
    table = _read_table(args.data)
    view = derive_predictions(table)
    bins = cfg.eval_bins
    print(f"table {table.name} n={table.n_instances} c={table.n_classes} bins={bins}")
    print(f"ece={fmt_float(metrics.ece(view, bins))}")
    print(f"sce={fmt_float(metrics.sce(view, bins))}")
    print(f"accuracy={fmt_float(metrics.accuracy(view))}")
    print(f"nll={fmt_float(metrics.nll(view))}")
    if args.out or args.svg:
        stats = metrics.reliability_bins(view, bins)
        if args.out:
            metrics.write_bins_csv(stats, args.out)
            _emit(args.out)
        if args.svg:
            metrics.write_reliability_svg(stats, args.svg, title=table.name)
            _emit(args.svg)
    return EXIT_OK


def _comparison_rows(model, val, coll, tests, bins):
    for t in tests:
        if t.n_classes != model.n_classes:
            raise DimensionMismatchError(
                f"test set {t.name!r} has C={t.n_classes}, model expects {model.n_classes}"
            )
    if val.n_classes != model.n_classes or coll.n_classes != model.n_classes:
        raise DimensionMismatchError("val/meta-set class count does not match the model")
    pooled = coll.pooled()
    fitted = {}
    for label, kind in _METHOD_LABELS:
        fitted[label] = baselines.fit_calibrator(kind, val, fit_source="clean")
        fitted[label + "-P"] = baselines.fit_calibrator(kind, pooled, fit_source="pooled")
    rows = []

    def add(method, table, view):
        rows.append(
            (
                method,
                table.name,
                metrics.ece(view, bins),
                metrics.sce(view, bins),
                metrics.accuracy(view),
                metrics.nll(view),
            )
        )

    for t in tests:
        add("Base", t, derive_predictions(t))
    for label, kind in _METHOD_LABELS:
        for t in tests:
            add(label, t, baselines.apply_calibrator(fitted[label], t))
    for label, kind in _METHOD_LABELS:
        for t in tests:
            add(label + "-P", t, baselines.apply_calibrator(fitted[label + "-P"], t))
    for t in tests:
        add("Ours", t, cascade.apply_cascade(model, t)[0])
    return rows


def cmd_report(args) -> int:
    cfg = _config_for(args)
    val = _read_table(args.val)
    coll = metaset.load_metasets(args.metasets)
    tests = _read_test_dir(args.tests)
    if not os.path.exists(args.model):
        raise FileNotFoundError(f"no such model file: {args.model}")
    model = cascade.load_model(args.model)
    rows = _comparison_rows(model, val, coll, tests, cfg.eval_bins)
    lines = ["method,test_set,ece,sce,accuracy,nll"]
    for method, name, e, s, a, n in rows:
        lines.append(
            f"{method},{name},{fmt_float(e)},{fmt_float(s)},{fmt_float(a)},{fmt_float(n)}"
        )
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    _emit(args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config_for(args)
    coll = metaset.load_metasets(args.metasets)
    tests = _read_test_dir(args.tests)
    lines = ["lambda,test_set,ece"]
    for lam in SWEEP_LAMBDAS:
        model, _ = cascade.train_cascade(
            coll,
            lam=lam,
            epochs=cfg.epochs,
            hidden=cfg.hidden,
            lr=cfg.lr,
            n_conf_bins=cfg.n_conf_bins,
            thresholds=cfg.thresholds,
            t_min=cfg.t_min,
            t_max=cfg.t_max,
            seed=child_seed(cfg.seed, 5),
        )
        for t in tests:
            view, _ = cascade.apply_cascade(model, t)
            lines.append(f"{fmt_float(lam)},{t.name},{fmt_float(metrics.ece(view, cfg.eval_bins))}")
        print(f"swept lambda={lam}")
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    _emit(args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cascal",
        description="confidence calibration toolkit: classic baselines plus a two-stage temperature model",
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, seed=True):
        if config:
            p.add_argument("--config", help="JSON file overriding run defaults")
        if seed:
            p.add_argument("--seed", type=int, default=None, help="master seed override")

    p = sub.add_parser("gen", help="sample a synthetic world plus val/test splits")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("metasets", help="build the shifted meta-set collection")
    common(p)
    p.add_argument("--world", required=True, help="world.json from gen")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_metasets)

    p = sub.add_parser("train", help="train the cascade on a meta-set directory")
    common(p)
    p.add_argument("--metasets", required=True, help="directory from the metasets command")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="class-stage loss weight")
    p.add_argument(
        "--ablate",
        default="",
        help="comma-separated parts to disable, e.g. category-stage,confidence-variance",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="apply a calibrator to a table (labels unused)")
    p.add_argument("--data", required=True, help="input .lgts table")
    p.add_argument("--out", required=True, help="output .lgts of calibrated log-probabilities")
    p.add_argument(
        "--method",
        default="cascade",
        choices=("cascade",) + baselines.KINDS,
        help="calibration method (default: cascade)",
    )
    p.add_argument("--model", help="trained model file (cascade method)")
    p.add_argument(
        "--fit",
        help="fitting table for baseline methods; a meta-set directory pools its members",
    )
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("eval", help="print calibration metrics for a table")
    p.add_argument("--config", help="JSON file overriding run defaults")
    p.add_argument("--data", required=True, help="input .lgts table")
    p.add_argument("--bins", type=int, default=None, help="evaluation bin count")
    p.add_argument("--out", help="also write the per-bin reliability CSV here")
    p.add_argument("--svg", help="also write a reliability diagram SVG here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="method-comparison CSV over held-out test sets")
    common(p)
    p.add_argument("--val", required=True, help="clean validation .lgts")
    p.add_argument("--metasets", required=True, help="meta-set directory")
    p.add_argument("--tests", required=True, help="directory of held-out test .lgts files")
    p.add_argument("--model", required=True, help="trained model file")
    p.add_argument("--bins", type=int, default=None, help="evaluation bin count")
    p.add_argument("--out", required=True, help="comparison CSV to write")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sweep", help="retrain across the loss-weight grid and tabulate ece")
    common(p)
    p.add_argument("--metasets", required=True, help="meta-set directory")
    p.add_argument("--tests", required=True, help="directory of held-out test .lgts files")
    p.add_argument("--out", required=True, help="sweep CSV to write")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, NotADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    except (DimensionMismatchError, InvalidTableError, UnlabeledTableError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISMATCH
    except (LogitsFormatError, ChecksumError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
