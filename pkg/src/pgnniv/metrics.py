"""Evaluation of trained models and run collections.

Field accuracy is the relative L2 distance to the clean closed-form
solution (trapezoidal quadrature on the unit square); constitutive-law
accuracy sweeps the learned per-node map over the solution range and
compares against the material's true K(u).  Run collections aggregate
into quartile tables, train-vs-test scatter points, and wall-clock
speed-up rows backed by a two-sided Mann-Whitney U test.
"""

from __future__ import annotations

import copy
import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .data import Dataset, SplitIndices, batch_arrays, clean_fields, conductivity, grid
from .loss import LossBreakdown
from .model import Model, count_parameters, explain_K, predict_fields

Array = np.ndarray

BASELINE_DECODER = "trainable"
KCURVE_RESOLUTION = 101

# report fields excluded from determinism comparisons
TIMING_FIELDS = ("wallclock_seconds",)


# ---- field and curve errors --------------------------------------------


def _as_square_field(field, name: str) -> Array:
    arr = np.asarray(field, dtype=np.float64)
    if arr.ndim == 1:
        side = int(round(math.sqrt(arr.size)))
        if side * side != arr.size:
            raise ValueError(f"{name} of {arr.size} entries is not a square field")
        arr = arr.reshape(side, side)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 2:
        raise ValueError(f"{name} must be a square field of side >= 2; got {arr.shape}")
    return arr


def field_norm(field) -> float:
    """L2 norm over the unit square by the trapezoidal rule on grid nodes."""
    arr = _as_square_field(field, "field")
    xs = grid(arr.shape[0])
    inner = np.trapezoid(arr * arr, xs, axis=1)
    return float(math.sqrt(np.trapezoid(inner, xs)))


def predictive_error(u_hat, u_clean) -> float:
    """Relative L2 error of a predicted field against the clean solution."""
    predicted = _as_square_field(u_hat, "u_hat")
    reference = _as_square_field(u_clean, "u_clean")
    if predicted.shape != reference.shape:
        raise ValueError(f"field shapes differ: {predicted.shape} vs {reference.shape}")
    denominator = field_norm(reference)
    if denominator == 0.0:
        raise ValueError("reference field has zero norm")
    return field_norm(predicted - reference) / denominator


def curve_error(k_hat, k_true, us) -> float:
    """Relative L2 error of one curve against another over sample points us."""
    predicted = np.asarray(k_hat, dtype=np.float64).ravel()
    reference = np.asarray(k_true, dtype=np.float64).ravel()
    points = np.asarray(us, dtype=np.float64).ravel()
    if not predicted.size == reference.size == points.size:
        raise ValueError("curve arrays must have equal lengths")
    if points.size < 2:
        raise ValueError("need at least two sample points")
    denominator = math.sqrt(np.trapezoid(reference * reference, points))
    if denominator == 0.0:
        raise ValueError("reference curve has zero norm")
    numerator = math.sqrt(np.trapezoid((predicted - reference) ** 2, points))
    return numerator / denominator


def explanatory_error(
    model: Model, material: int, u_min: float, u_max: float, resolution: int = 101
) -> float:
    """Relative L2 error of the learned K(u) over [u_min, u_max]."""
    if not u_min < u_max:
        raise ValueError(f"need u_min < u_max; got [{u_min}, {u_max}]")
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    us = np.linspace(u_min, u_max, resolution)
    return curve_error(explain_K(model, us), conductivity(material, us), us)


def dataset_solution_range(dataset: Dataset) -> tuple[float, float]:
    """Min and max of the clean solution fields over the whole dataset."""
    lo = math.inf
    hi = -math.inf
    for index in range(dataset.count):
        u = clean_fields(dataset, index).u
        lo = min(lo, float(u.min()))
        hi = max(hi, float(u.max()))
    return lo, hi


def validation_errors(model: Model, dataset: Dataset, splits: SplitIndices) -> list[float]:
    """Per-sample predictive error over the validation split, clean reference."""
    if not splits.validation:
        raise ValueError("validation split is empty")
    batch = batch_arrays(dataset, splits.validation)
    fields, _ = predict_fields(model, batch["x"])
    m = dataset.m
    errors = []
    for row, index in enumerate(splits.validation):
        clean = clean_fields(dataset, index).u
        errors.append(predictive_error(fields[row].reshape(m, m), clean))
    return errors


# ---- summary statistics ------------------------------------------------


def quartiles(values) -> tuple[float, float, float]:
    """(Q1, Q2, Q3) with linear-interpolation quantiles."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("quartiles of an empty sequence")
    q1, q2, q3 = np.quantile(arr, [0.25, 0.5, 0.75])
    return float(q1), float(q2), float(q3)


def _average_ranks(values: Array) -> Array:
    """1-based ranks, ties sharing the average of their positions."""
    order = np.argsort(values, kind="stable")
    sorted_values = values[order]
    ranks = np.empty(values.size, dtype=np.float64)
    start = 0
    while start < values.size:
        stop = start
        while stop + 1 < values.size and sorted_values[stop + 1] == sorted_values[start]:
            stop += 1
        ranks[order[start : stop + 1]] = 0.5 * (start + stop) + 1.0
        start = stop + 1
    return ranks


def mann_whitney_u(sample_a, sample_b) -> tuple[float, float]:
    """Two-sided Mann-Whitney U (normal approximation, tie and continuity
    corrections).  Returns (U of sample_a, p)."""
    a = np.asarray(sample_a, dtype=np.float64).ravel()
    b = np.asarray(sample_b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    n_a, n_b = a.size, b.size
    combined = np.concatenate([a, b])
    ranks = _average_ranks(combined)
    u_a = float(ranks[:n_a].sum()) - n_a * (n_a + 1) / 2.0
    mean_u = n_a * n_b / 2.0
    total = n_a + n_b
    _, tie_counts = np.unique(combined, return_counts=True)
    tie_term = float(np.sum(tie_counts.astype(np.float64) ** 3 - tie_counts))
    variance = n_a * n_b / 12.0 * ((total + 1) - tie_term / (total * (total - 1.0)))
    if variance <= 0.0:
        return u_a, 1.0
    shift = max(abs(u_a - mean_u) - 0.5, 0.0)
    z = shift / math.sqrt(variance)
    return u_a, min(1.0, math.erfc(z / math.sqrt(2.0)))


def significance_stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


# ---- run reports -------------------------------------------------------


@dataclass(frozen=True)
class RunReport:
    """Evaluation summary of one training run."""

    config: dict
    q1: float
    q2: float
    q3: float
    explanatory_err: float
    parameter_counts: dict
    wallclock_seconds: float
    final_train: LossBreakdown
    final_test: LossBreakdown

    def __post_init__(self):
        if not self.q1 <= self.q2 <= self.q3:
            raise ValueError(f"quartiles out of order: {self.q1}, {self.q2}, {self.q3}")
        for name in ("q1", "q2", "q3", "explanatory_err", "wallclock_seconds"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")


def build_report(
    config_echo: dict,
    model: Model,
    dataset: Dataset,
    splits: SplitIndices,
    wallclock_seconds: float,
    final_train: LossBreakdown,
    final_test: LossBreakdown,
) -> RunReport:
    """Evaluate a trained model and bundle the run summary."""
    q1, q2, q3 = quartiles(validation_errors(model, dataset, splits))
    u_min, u_max = dataset_solution_range(dataset)
    eps = explanatory_error(model, dataset.material, u_min, u_max)
    return RunReport(
        config=copy.deepcopy(config_echo),
        q1=q1,
        q2=q2,
        q3=q3,
        explanatory_err=eps,
        parameter_counts=count_parameters(model),
        wallclock_seconds=float(wallclock_seconds),
        final_train=final_train,
        final_test=final_test,
    )


def report_to_json(report: RunReport) -> dict:
    return {
        "config": copy.deepcopy(report.config),
        "predictive_quartiles": {"q1": report.q1, "q2": report.q2, "q3": report.q3},
        "explanatory_error": report.explanatory_err,
        "parameter_counts": dict(report.parameter_counts),
        "wallclock_seconds": report.wallclock_seconds,
        "final_train_loss": asdict(report.final_train),
        "final_test_loss": asdict(report.final_test),
    }


def report_from_json(doc: dict) -> RunReport:
    qs = doc["predictive_quartiles"]
    return RunReport(
        config=copy.deepcopy(doc["config"]),
        q1=qs["q1"],
        q2=qs["q2"],
        q3=qs["q3"],
        explanatory_err=doc["explanatory_error"],
        parameter_counts=dict(doc["parameter_counts"]),
        wallclock_seconds=doc["wallclock_seconds"],
        final_train=LossBreakdown(**doc["final_train_loss"]),
        final_test=LossBreakdown(**doc["final_test_loss"]),
    )


def report_signature(doc: dict) -> dict:
    """The report document with timing fields removed, for determinism checks."""
    trimmed = copy.deepcopy(doc)
    for name in TIMING_FIELDS:
        trimmed.pop(name, None)
    return trimmed


def save_report(report: RunReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_to_json(report), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_report(path: str) -> RunReport:
    with open(path, encoding="utf-8") as fh:
        return report_from_json(json.load(fh))


def config_label(config: dict) -> str:
    """Filesystem-friendly name encoding a run configuration."""
    return (
        f"material{config['material']}_D{config['D']}_mu{config['mu'] * 100:g}"
        f"_m{config['m']}_n{config['n']}_{config['decoder']}"
        f"_{config['mode']}_seed{config['seed']}"
    )


# ---- aggregation over run collections ----------------------------------


def speedup_table(reports) -> list[dict]:
    """Wall-clock of each reduced decoder relative to the trainable baseline.

    Groups runs by (D, decoder kind); within a D, each non-baseline kind is
    matched to baseline runs of the same seed.  The acceleration rate is
    embedding time / baseline time per matched seed; significance compares
    the two time samples with the Mann-Whitney U test.
    """
    groups: dict[tuple[int, str], dict[int, float]] = {}
    for report in reports:
        cfg = report.config
        key = (cfg["D"], cfg["decoder"])
        groups.setdefault(key, {})[cfg["seed"]] = report.wallclock_seconds
    rows = []
    for count in sorted({d for d, _ in groups}):
        baseline = groups.get((count, BASELINE_DECODER))
        kinds = sorted(k for d, k in groups if d == count and k != BASELINE_DECODER)
        for kind in kinds:
            if not baseline:
                raise ValueError(f"no baseline runs for D={count}")
            times = groups[(count, kind)]
            seeds = sorted(set(times) & set(baseline))
            if not seeds:
                raise ValueError(f"no baseline seeds matching D={count} {kind}")
            rates = np.array([times[s] / baseline[s] for s in seeds])
            u, p = mann_whitney_u([times[s] for s in seeds], [baseline[s] for s in seeds])
            rows.append(
                {
                    "D": count,
                    "model": kind,
                    "mean_rate": float(rates.mean()),
                    "std_rate": float(rates.std(ddof=1)) if rates.size > 1 else 0.0,
                    "U": u,
                    "p": p,
                    "stars": significance_stars(p),
                }
            )
    return rows


def overfitting_points(reports) -> list[dict]:
    """Final train/test loss totals per run, for scatter plotting."""
    return [
        {
            "label": config_label(report.config),
            "train_loss": report.final_train.total,
            "test_loss": report.final_test.total,
        }
        for report in reports
    ]


# ---- CSV emitters ------------------------------------------------------


def _write_rows(path: str, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def write_table_csv(reports, path: str) -> None:
    """Quartile table: one row per run, sorted by configuration."""
    rows = sorted(
        (
            r.config["material"],
            r.config["decoder"],
            r.config["D"],
            r.config["mu"],
            r.config["n"],
            r.config["seed"],
            r.q1,
            r.q2,
            r.q3,
            r.explanatory_err,
        )
        for r in reports
    )
    header = ["material", "model", "D", "mu", "n", "seed", "q1", "q2", "q3", "eps_exp"]
    _write_rows(path, header, rows)


def write_speedup_csv(rows, path: str) -> None:
    header = ["D", "model", "mean_rate", "std_rate", "U", "p", "stars"]
    _write_rows(path, header, [[r[k] for k in header] for r in rows])


def write_overfit_csv(rows, path: str) -> None:
    header = ["label", "train_loss", "test_loss"]
    _write_rows(path, header, [[r[k] for k in header] for r in rows])


def write_kcurve_csv(
    model: Model,
    material: int,
    u_min: float,
    u_max: float,
    path: str,
    resolution: int = KCURVE_RESOLUTION,
) -> None:
    """Sweep of the learned and true constitutive laws over [u_min, u_max]."""
    if not u_min < u_max:
        raise ValueError(f"need u_min < u_max; got [{u_min}, {u_max}]")
    us = np.linspace(u_min, u_max, resolution)
    k_true = conductivity(material, us)
    k_hat = explain_K(model, us)
    rows = [[float(u), float(t), float(h)] for u, t, h in zip(us, k_true, k_hat)]
    _write_rows(path, ["u", "K_true", "K_hat"], rows)
