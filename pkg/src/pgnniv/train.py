"""Two-phase full-batch training and experiment orchestration.

One run couples the field-predicting network and the per-node constitutive
network through the physics loss, optimized by Adam on the train split
while the test split is scored every epoch without gradients.  The second
phase continues at a lower learning rate, keeping the optimizer moments
unless the schedule asks for a reset.

Warm-start modes reuse a saved checkpoint: `fine_tune` copies every
parameter and keeps all of them trainable; `transfer_frozen_encoder`
additionally freezes the boundary encoder — its latent codes are then
constant per sample, so they are computed once up front and the graph
starts at the decoder, which is what makes this mode cheaper per epoch.
For basis decoders the projection matrix always comes from the current
run's attachment, never from the checkpoint.

`run_experiment` drives the full pipeline from a config: data generation,
basis construction or autoencoder pretraining, training, evaluation, and
persistence of `history.csv`, `checkpoint.json`, and `report.json`.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import AdamState, AutodiffError, Graph, adam_step, backward, forward
from .basis import fourier_basis, pod_basis, pretrain_autoencoder
from .data import Dataset, SplitIndices, batch_arrays, generate_dataset, split_dataset
from .loss import LossBreakdown, LossNodes, LossWeights, attach_loss
from .metrics import RunReport, build_report, config_label, save_report
from .model import (
    ExplanatorySpec,
    Model,
    PredictiveSpec,
    attach_decoder,
    attach_explanatory,
    attach_predictive,
    build_model,
    encode_inputs,
    freeze_group,
    leaf_entries,
    load_checkpoint,
    save_checkpoint,
)
from .rng import COEFFS, INIT, NOISE, SHUFFLE, Stream, stream

Array = np.ndarray

MODE_KINDS = ("scratch", "transfer_frozen_encoder", "fine_tune")

HISTORY_HEADER = (
    "epoch",
    "train_total",
    "train_mse_e",
    "train_mse_pi1",
    "train_mse_pi2",
    "train_mse_pi3",
    "test_total",
    "test_mse_e",
    "test_mse_pi1",
    "test_mse_pi2",
    "test_mse_pi3",
    "cum_seconds",
)


class TrainingError(RuntimeError):
    """Raised when a run cannot continue (divergence, bad warm start)."""


# ---- schedules and modes -----------------------------------------------


@dataclass(frozen=True)
class Schedule:
    """Epoch counts and learning rates of the two training phases.

    `phase2_epochs` may be zero for single-phase runs.  Adam moments carry
    across the phase boundary unless `reset_adam_at_phase2` is set.
    """

    phase1_epochs: int = 20_000
    phase1_lr: float = 3e-3
    phase2_epochs: int = 10_000
    phase2_lr: float = 3e-4
    reset_adam_at_phase2: bool = False

    def __post_init__(self):
        if self.phase1_epochs < 1:
            raise ValueError(f"phase1_epochs must be at least 1; got {self.phase1_epochs}")
        if self.phase2_epochs < 0:
            raise ValueError(f"phase2_epochs must be non-negative; got {self.phase2_epochs}")
        for name in ("phase1_lr", "phase2_lr"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")

    @property
    def total_epochs(self) -> int:
        return self.phase1_epochs + self.phase2_epochs


DESK_SCHEDULE = Schedule()
FULL_SCHEDULE = Schedule(100_000, 3e-3, 50_000, 3e-4)
FULL_WARMSTART_SCHEDULE = Schedule(100_000, 3e-4, 0, 3e-4)


def learning_rate_for_epoch(schedule: Schedule, epoch: int) -> float:
    """Learning rate at a 1-based epoch index."""
    if not 1 <= epoch <= schedule.total_epochs:
        raise ValueError(f"epoch {epoch} outside 1..{schedule.total_epochs}")
    return schedule.phase1_lr if epoch <= schedule.phase1_epochs else schedule.phase2_lr


@dataclass(frozen=True)
class TrainMode:
    """How a run's parameters start out; warm starts name a checkpoint."""

    kind: str = "scratch"
    source_checkpoint: str | None = None

    def __post_init__(self):
        if self.kind not in MODE_KINDS:
            raise ValueError(f"mode must be one of {MODE_KINDS}; got '{self.kind}'")
        if self.kind == "scratch" and self.source_checkpoint is not None:
            raise ValueError("scratch mode does not take a source checkpoint")
        if self.kind != "scratch" and not self.source_checkpoint:
            raise ValueError(f"mode '{self.kind}' needs a source checkpoint")


def seed_all(seed: int) -> dict[str, Stream]:
    """The canonical derived random streams of a run, one per purpose.

    Every random draw anywhere in a run comes from one of these purposes
    (possibly further branched per sample or network half), so this single
    seed pins the whole run.
    """
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ValueError(f"seed must be a non-negative integer; got {seed!r}")
    return {
        "coefficients": stream(seed, COEFFS),
        "noise": stream(seed, NOISE),
        "init": stream(seed, INIT),
        "shuffle": stream(seed, SHUFFLE),
    }


# ---- training history --------------------------------------------------


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: LossBreakdown
    test_loss: LossBreakdown
    seconds: float  # cumulative wall-clock since the epoch loop started


@dataclass
class History:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final(self) -> EpochRecord:
        if not self.records:
            raise ValueError("history is empty")
        return self.records[-1]

    def validate(self) -> None:
        previous_epoch = 0
        previous_seconds = -1.0
        for record in self.records:
            if record.epoch != previous_epoch + 1:
                raise ValueError(f"epochs must increase by 1; got {record.epoch}")
            if record.seconds < previous_seconds:
                raise ValueError("cumulative seconds decreased")
            previous_epoch = record.epoch
            previous_seconds = record.seconds


def write_history_csv(history: History, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_HEADER)
        for r in history.records:
            tr, te = r.train_loss, r.test_loss
            writer.writerow(
                [r.epoch]
                + [repr(v) for v in (tr.total, tr.mse_e, tr.mse_pi1, tr.mse_pi2, tr.mse_pi3)]
                + [repr(v) for v in (te.total, te.mse_e, te.mse_pi1, te.mse_pi2, te.mse_pi3)]
                + [repr(r.seconds)]
            )


def read_history_csv(path: str) -> History:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != HISTORY_HEADER:
            raise ValueError(f"unexpected history header {header}")
        records = []
        for row in reader:
            values = [float(v) for v in row[1:]]
            records.append(
                EpochRecord(
                    epoch=int(row[0]),
                    train_loss=LossBreakdown(*values[0:5]),
                    test_loss=LossBreakdown(*values[5:10]),
                    seconds=values[10],
                )
            )
    return History(records)


# ---- warm starts -------------------------------------------------------


def _copy_checkpoint_leaves(model: Model, source: Model) -> None:
    """Copy every parameter array from a source model, matching by name."""
    source_leaves = {name: arr for name, arr, _ in leaf_entries(source)}
    target_names = set()
    for name, arr, _ in leaf_entries(model):
        target_names.add(name)
        if name not in source_leaves:
            raise TrainingError(f"checkpoint is missing leaf '{name}'")
        src = source_leaves[name]
        if src.shape != arr.shape:
            raise TrainingError(
                f"checkpoint leaf '{name}' has shape {src.shape}; expected {arr.shape}"
            )
        arr[...] = src
    extra = sorted(set(source_leaves) - target_names)
    if extra:
        raise TrainingError(f"checkpoint has unexpected leaf '{extra[0]}'")


def _apply_mode(model: Model, mode: TrainMode) -> None:
    if mode.kind == "scratch":
        return
    source = load_checkpoint(mode.source_checkpoint)
    _copy_checkpoint_leaves(model, source)
    if mode.kind == "transfer_frozen_encoder":
        freeze_group(model, "enc")


# ---- the training loop -------------------------------------------------


def _assemble(
    model: Model,
    batch: dict[str, Array],
    weights: LossWeights,
    frozen_latent: bool,
    pi3_interior_only: bool,
) -> tuple[Graph, dict[int, Array], LossNodes]:
    """One static graph: inputs -> predicted fields -> physics loss."""
    graph = Graph()
    if frozen_latent:
        latents = encode_inputs(model, batch["x"])
        z_id = graph.constant(latents, name="z_frozen")
        u_hat, _, bindings = attach_decoder(graph, model, z_id)
    else:
        x_id = graph.constant(batch["x"], name="x")
        u_hat, _, _, bindings = attach_predictive(graph, model, x_id)
    k_hat, _, exp_bindings = attach_explanatory(graph, model, u_hat)
    bindings.update(exp_bindings)
    nodes = attach_loss(graph, u_hat, k_hat, batch, weights, pi3_interior_only)
    return graph, bindings, nodes


def train(
    model: Model,
    dataset: Dataset,
    splits: SplitIndices,
    weights: LossWeights,
    schedule: Schedule,
    mode: TrainMode,
    pi3_interior_only: bool = False,
) -> tuple[Model, History]:
    """Optimize the coupled networks; returns the model and its history.

    Full-batch Adam over the train split; the test split is evaluated each
    epoch by a separate gradient-free graph.  Parameter arrays are shared
    by reference between the model and both graphs, so updates propagate
    everywhere at once.  A non-finite value anywhere aborts with the epoch
    and the component that produced it.
    """
    _apply_mode(model, mode)
    frozen_latent = mode.kind == "transfer_frozen_encoder"
    train_batch = batch_arrays(dataset, splits.train)
    test_batch = batch_arrays(dataset, splits.test)
    train_graph, params, train_nodes = _assemble(
        model, train_batch, weights, frozen_latent, pi3_interior_only
    )
    test_graph, test_params, test_nodes = _assemble(
        model, test_batch, weights, frozen_latent, pi3_interior_only
    )

    records: list[EpochRecord] = []
    state = AdamState()
    epoch = 0
    started = time.monotonic()
    for phase_index, (epochs, lr) in enumerate(
        ((schedule.phase1_epochs, schedule.phase1_lr), (schedule.phase2_epochs, schedule.phase2_lr))
    ):
        if phase_index == 1 and schedule.reset_adam_at_phase2:
            state = AdamState()
        for _ in range(epochs):
            epoch += 1
            try:
                forward(train_graph, params)
            except AutodiffError as exc:
                raise TrainingError(f"training diverged at epoch {epoch}: {exc}") from exc
            train_loss = train_nodes.breakdown(train_graph)
            grads = backward(train_graph)
            adam_step(params, grads, state, lr)
            try:
                forward(test_graph, test_params)
            except AutodiffError as exc:
                raise TrainingError(f"test loss diverged at epoch {epoch}: {exc}") from exc
            test_loss = test_nodes.breakdown(test_graph)
            records.append(EpochRecord(epoch, train_loss, test_loss, time.monotonic() - started))

    if test_graph.backward_calls != 0:
        raise TrainingError("test graph must never run a backward pass")
    history = History(records)
    history.validate()
    return model, history


# ---- experiment configuration ------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines one run, minus machine speed."""

    material: int
    count: int
    mu: float
    m: int
    n: int
    decoder: str
    mode: str = "scratch"
    source_checkpoint: str | None = None
    weights: LossWeights = LossWeights()
    schedule: Schedule = Schedule()
    seed: int = 0
    outdir: str = "."
    pi3_interior_only: bool = False

    def __post_init__(self):
        # material/count/mu/m validated by data generation, decoder/n by the
        # model spec; modes are checked here so config errors surface early
        if self.mode not in MODE_KINDS:
            raise ValueError(f"mode must be one of {MODE_KINDS}; got '{self.mode}'")
        if self.mode == "scratch" and self.source_checkpoint is not None:
            raise ValueError("scratch mode does not take a source checkpoint")
        if self.mode != "scratch" and not self.source_checkpoint:
            raise ValueError(f"mode '{self.mode}' needs a source checkpoint")


def config_to_json(config: RunConfig) -> dict:
    doc = {
        "material": config.material,
        "D": config.count,
        "mu": config.mu,
        "m": config.m,
        "n": config.n,
        "decoder": config.decoder,
        "mode": config.mode,
        "weights": {
            "c0": config.weights.c0,
            "c1": config.weights.c1,
            "c2": config.weights.c2,
            "c3": config.weights.c3,
        },
        "schedule": {
            "phase1_epochs": config.schedule.phase1_epochs,
            "phase1_lr": config.schedule.phase1_lr,
            "phase2_epochs": config.schedule.phase2_epochs,
            "phase2_lr": config.schedule.phase2_lr,
            "reset_adam_at_phase2": config.schedule.reset_adam_at_phase2,
        },
        "seed": config.seed,
        "outdir": config.outdir,
        "pi3_interior_only": config.pi3_interior_only,
    }
    if config.source_checkpoint is not None:
        doc["source_checkpoint"] = config.source_checkpoint
    return doc


def config_from_json(doc: dict) -> RunConfig:
    data = dict(doc)
    required = ("material", "D", "mu", "m", "n", "decoder")
    missing = [key for key in required if key not in data]
    if missing:
        raise ValueError(f"config is missing required key '{missing[0]}'")
    try:
        weights = LossWeights(**data.pop("weights", {}))
        schedule = Schedule(**data.pop("schedule", {}))
    except TypeError as exc:
        raise ValueError(f"bad config section: {exc}") from exc
    kwargs = {
        "material": data.pop("material"),
        "count": data.pop("D"),
        "mu": data.pop("mu"),
        "m": data.pop("m"),
        "n": data.pop("n"),
        "decoder": data.pop("decoder"),
        "mode": data.pop("mode", "scratch"),
        "source_checkpoint": data.pop("source_checkpoint", None),
        "seed": data.pop("seed", 0),
        "outdir": data.pop("outdir", "."),
        "pi3_interior_only": data.pop("pi3_interior_only", False),
    }
    if data:
        raise ValueError(f"unknown config key '{sorted(data)[0]}'")
    return RunConfig(weights=weights, schedule=schedule, **kwargs)


def load_config(path: str) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_json(json.load(fh))


# ---- the full pipeline -------------------------------------------------


def _build_attachments(config: RunConfig, dataset: Dataset, splits: SplitIndices):
    """Basis or pretrained frozen decoder as the decoder kind requires."""
    if config.decoder == "fourier":
        return fourier_basis(config.m, config.n), None
    if config.decoder == "pod":
        snapshots = batch_arrays(dataset, splits.train)["u"]
        return pod_basis(snapshots, config.n), None
    if config.decoder == "autoencoder":
        fields = batch_arrays(dataset, splits.ae_train_train)["u"]
        _, frozen = pretrain_autoencoder(
            fields,
            config.n,
            config.schedule.phase1_epochs,
            config.schedule.phase1_lr,
            config.seed,
        )
        return None, frozen
    return None, None


def _run_experiment(config: RunConfig) -> RunReport:
    dataset = generate_dataset(config.material, config.count, config.mu, config.m, config.seed)
    scheme = "autoencoder" if config.decoder == "autoencoder" else "standard"
    splits = split_dataset(dataset, scheme, config.seed)
    basis, frozen = _build_attachments(config, dataset, splits)
    model = build_model(
        PredictiveSpec(config.m, config.n, config.decoder),
        ExplanatorySpec(),
        config.seed,
        basis=basis,
        frozen_decoder=frozen,
    )
    mode = TrainMode(config.mode, config.source_checkpoint)
    model, history = train(
        model,
        dataset,
        splits,
        config.weights,
        config.schedule,
        mode,
        pi3_interior_only=config.pi3_interior_only,
    )
    final = history.final
    report = build_report(
        config_to_json(config),
        model,
        dataset,
        splits,
        final.seconds,
        final.train_loss,
        final.test_loss,
    )
    os.makedirs(config.outdir, exist_ok=True)
    save_checkpoint(model, os.path.join(config.outdir, "checkpoint.json"))
    save_report(report, os.path.join(config.outdir, "report.json"))
    write_history_csv(history, os.path.join(config.outdir, "history.csv"))
    return report


def run_experiment(config: RunConfig) -> RunReport:
    """Data -> decoder attachments -> training -> evaluation -> artifacts.

    Writes `checkpoint.json`, `report.json`, and `history.csv` into the
    config's output directory and returns the report.  Any failure is
    re-raised with the run's label attached.
    """
    label = config_label(config_to_json(config))
    try:
        return _run_experiment(config)
    except ValueError as exc:
        raise ValueError(f"experiment {label}: {exc}") from exc
    except (AutodiffError, RuntimeError) as exc:
        raise TrainingError(f"experiment {label}: {exc}") from exc
