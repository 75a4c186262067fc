"""Command-line entry point for batch experimentation.

Exit codes: 0 on success, 1 for usage or configuration problems, 2 for
numerical failures during a run.  Relative output paths are rooted at the
`PGNNIV_OUTDIR` environment variable when it is set.
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from .autodiff import AutodiffError
from .basis import ae_decode, ae_encode, pretrain_autoencoder, save_autoencoder
from .data import (
    batch_arrays,
    dataset_filename,
    generate_dataset,
    save_dataset,
    split_dataset,
)
from .metrics import (
    config_label,
    dataset_solution_range,
    load_report,
    overfitting_points,
    report_from_json,
    report_to_json,
    speedup_table,
    write_kcurve_csv,
    write_overfit_csv,
    write_speedup_csv,
    write_table_csv,
)
from .model import PredictiveSpec, count_parameters, load_checkpoint
from .train import (
    TrainingError,
    config_from_json,
    config_to_json,
    load_config,
    run_experiment,
)

# the CLI also accepts the colloquial name for the trainable decoder
DECODER_ALIASES = {"baseline": "trainable"}


class UsageError(Exception):
    """Bad flags or configuration; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); route into our codes
        raise UsageError(message)


def _out_root() -> str:
    return os.environ.get("PGNNIV_OUTDIR", ".")


def _resolve(path: str) -> str:
    if os.path.isabs(path):
        return path
    return os.path.join(_out_root(), path)


def _canonical_decoder(name: str) -> str:
    return DECODER_ALIASES.get(name, name)


# ---- commands ----------------------------------------------------------


def _cmd_datagen(args) -> int:
    dataset = generate_dataset(args.material, args.count, args.mu, args.m, args.seed)
    out = _resolve(args.out or dataset_filename(args.material, args.count, args.mu, args.m))
    directory = os.path.dirname(out)
    if directory:
        os.makedirs(directory, exist_ok=True)
    save_dataset(dataset, out)
    print(f"wrote {out} ({dataset.count} samples, material {dataset.material})")
    return 0


def _cmd_pretrain_ae(args) -> int:
    dataset = generate_dataset(args.material, args.count, args.mu, args.m, args.seed)
    splits = split_dataset(dataset, "autoencoder", args.seed)
    fields = batch_arrays(dataset, splits.ae_train_train)["u"]
    encoder, frozen = pretrain_autoencoder(fields, args.n, args.epochs, args.lr, args.seed)
    out = _resolve(args.out)
    directory = os.path.dirname(out)
    if directory:
        os.makedirs(directory, exist_ok=True)
    save_autoencoder(encoder, frozen, out)
    held_out = batch_arrays(dataset, splits.ae_train_test)["u"]
    errors = []
    for row in held_out:
        recon = ae_decode(ae_encode(row, encoder), frozen).reshape(-1)
        errors.append(float(np.linalg.norm(recon - row) / np.linalg.norm(row)))
    print(f"wrote {out} (median held-out reconstruction error {np.median(errors):.3e})")
    return 0


def _report_summary(report) -> str:
    return (
        f"{config_label(report.config)}: predictive quartiles "
        f"({report.q1:.3e}, {report.q2:.3e}, {report.q3:.3e}), "
        f"constitutive-law error {report.explanatory_err:.3e}, "
        f"{report.wallclock_seconds:.1f}s"
    )


def _cmd_train(args) -> int:
    config = load_config(args.config)
    report = run_experiment(config)
    print(_report_summary(report))
    return 0


def _cmd_transfer(args) -> int:
    config = load_config(args.config)
    mode = "fine_tune" if args.fine_tune else "transfer_frozen_encoder"
    config = replace(config, mode=mode, source_checkpoint=args.source)
    if args.outdir:
        config = replace(config, outdir=args.outdir)
    report = run_experiment(config)
    print(_report_summary(report))
    return 0


def _cmd_eval(args) -> int:
    rundir = args.rundir
    report_path = os.path.join(rundir, "report.json")
    checkpoint_path = os.path.join(rundir, "checkpoint.json")
    for path in (report_path, checkpoint_path):
        if not os.path.exists(path):
            raise UsageError(f"run directory is missing {os.path.basename(path)}")
    with open(report_path, encoding="utf-8") as fh:
        stored = report_from_json(json.load(fh))
    config = stored.config
    model = load_checkpoint(checkpoint_path)
    dataset = generate_dataset(
        config["material"], config["D"], config["mu"], config["m"], config["seed"]
    )
    u_min, u_max = dataset_solution_range(dataset)
    kcurve_path = os.path.join(rundir, "kcurve.csv")
    write_kcurve_csv(model, config["material"], u_min, u_max, kcurve_path, args.resolution)
    print(_report_summary(stored))
    print(f"wrote {kcurve_path} over u in [{u_min:.4f}, {u_max:.4f}]")
    return 0


def _sweep_cells(grid_doc: dict) -> list[dict]:
    if not isinstance(grid_doc, dict) or "base" not in grid_doc:
        raise UsageError("grid file must be an object with a 'base' section")
    base = dict(grid_doc["base"])
    axes = grid_doc.get("grid", {})
    if not isinstance(axes, dict):
        raise UsageError("'grid' must map config keys to lists of values")
    names = sorted(axes)
    for name in names:
        if not isinstance(axes[name], list) or not axes[name]:
            raise UsageError(f"grid axis '{name}' must be a non-empty list")
    cells = []
    for combo in itertools.product(*(axes[name] for name in names)):
        doc = dict(base)
        doc.update(dict(zip(names, combo)))
        cells.append(doc)
    if not cells:
        raise UsageError("the grid is empty")
    return cells


def _sweep_cell(doc: dict) -> tuple[str, dict | None, str | None]:
    """Run one sweep cell; returns (label, report doc, error message)."""
    label = "<unparsed>"
    try:
        config = config_from_json(doc)
        label = config_label(config_to_json(config))
        report = run_experiment(config)
        return label, report_to_json(report), None
    except Exception as exc:  # the sweep must continue past any cell failure
        return label, None, f"{type(exc).__name__}: {exc}"


def _cmd_sweep(args) -> int:
    with open(args.grid, encoding="utf-8") as fh:
        grid_doc = json.load(fh)
    root = _resolve(args.out)
    os.makedirs(root, exist_ok=True)
    cells = []
    for doc in _sweep_cells(grid_doc):
        config = config_from_json(doc)  # validate before any run starts
        label = config_label(config_to_json(config))
        doc = dict(doc)
        doc["outdir"] = os.path.join(root, label)
        cells.append(doc)

    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(_sweep_cell, cells))
    else:
        outcomes = [_sweep_cell(doc) for doc in cells]

    reports = []
    failures = []
    for label, report_doc, error in outcomes:
        if error is None:
            reports.append(report_from_json(report_doc))
            print(f"cell {label}: ok")
        else:
            failures.append((label, error))
            print(f"cell {label}: FAILED ({error})", file=sys.stderr)

    if reports:
        write_table_csv(reports, os.path.join(root, "table.csv"))
        write_overfit_csv(overfitting_points(reports), os.path.join(root, "overfit.csv"))
        try:
            rows = speedup_table(reports)
        except ValueError:
            rows = []
        write_speedup_csv(rows, os.path.join(root, "speedup.csv"))
        print(f"aggregates in {root}: table.csv, speedup.csv, overfit.csv")
    if failures:
        print(f"{len(failures)} of {len(cells)} cells failed", file=sys.stderr)
        return 2
    return 0


def _cmd_params(args) -> int:
    kind = _canonical_decoder(args.decoder)
    counts = count_parameters(PredictiveSpec(args.m, args.n, kind))
    for name in ("P_encoding", "P_decoding", "P_pre", "P_exp", "P_exp_nominal"):
        print(f"{name} {counts[name]}")
    return 0


def _cmd_report(args) -> int:
    reports = [load_report(os.path.join(rundir, "report.json")) for rundir in args.rundirs]
    if not reports:
        raise UsageError("no run directories given")
    out = _resolve(args.out)
    os.makedirs(out, exist_ok=True)
    write_table_csv(reports, os.path.join(out, "table.csv"))
    write_overfit_csv(overfitting_points(reports), os.path.join(out, "overfit.csv"))
    try:
        rows = speedup_table(reports)
    except ValueError:
        rows = []
    write_speedup_csv(rows, os.path.join(out, "speedup.csv"))
    print(f"aggregates in {out}: table.csv, speedup.csv, overfit.csv")
    return 0


# ---- parser ------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="pgnniv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate a dataset file")
    p.add_argument("--material", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=_cmd_datagen)

    p = sub.add_parser("pretrain-ae", help="pretrain an autoencoder and save its halves")
    p.add_argument("--material", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--epochs", type=int, default=20_000)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_pretrain_ae)

    p = sub.add_parser("train", help="run one experiment from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("transfer", help="warm-start a config from a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--source", required=True, help="checkpoint to start from")
    p.add_argument("--fine-tune", action="store_true",
                   help="keep every parameter trainable instead of freezing the encoder")
    p.add_argument("--outdir", default=None)
    p.set_defaults(handler=_cmd_transfer)

    p = sub.add_parser("eval", help="re-evaluate a finished run directory")
    p.add_argument("--rundir", required=True)
    p.add_argument("--resolution", type=int, default=101)
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("sweep", help="run a cartesian grid of configs")
    p.add_argument("--grid", required=True, help="JSON file with 'base' and 'grid' sections")
    p.add_argument("--out", default=".", help="root directory for run outputs")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(handler=_cmd_sweep)

    p = sub.add_parser("params", help="print parameter-count breakdown")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--decoder", default="baseline")
    p.set_defaults(handler=_cmd_params)

    p = sub.add_parser("report", help="aggregate finished runs into CSV tables")
    p.add_argument("rundirs", nargs="*")
    p.add_argument("--out", default=".")
    p.set_defaults(handler=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingError, AutodiffError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
