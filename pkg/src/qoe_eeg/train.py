"""Training, evaluation, cross-validation, grid search and feature ablation."""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import seeding
from .dataset import (
    FoldAssignment,
    LabeledDataset,
    Normalization,
    fit_normalizer,
    stratified_kfold,
)
from .dsp import BANDS
from .errors import EmptyAxis, EmptyEvalSet, EmptyTrainSet, InvalidKind, TooFewExamples
from .ingest import CHANNELS
from .nn import model as nnmodel
from .nn.optim import AdamState, adam_step

log = logging.getLogger(__name__)

N_CLASSES = 3


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    folds: int = 10
    train_fraction: float = 0.8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @classmethod
    def for_architecture(cls, architecture: str, **kw) -> "TrainConfig":
        kw.setdefault("epochs", 150 if architecture == "transformer" else 100)
        return cls(**kw)


@dataclass
class TrainedModel:
    config: nnmodel.ModelConfig
    params: dict
    normalization: Normalization | None = None
    seed: int = 0

    def logits(self, x: np.ndarray, batch: int = 256) -> np.ndarray:
        """Inference-mode logits for already-normalized (N, T, F) input."""
        out = [nnmodel.forward_batch(self.params, self.config, x[i:i + batch], "infer")
               for i in range(0, len(x), batch)]
        return np.concatenate(out) if out else np.zeros((0, N_CLASSES))


def _batches(order, size):
    chunks = [order[i:i + size] for i in range(0, len(order), size)]
    # batch norm needs two values per channel
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def train_model(dataset: LabeledDataset, model_config: nnmodel.ModelConfig,
                train_config: TrainConfig, train_indices):
    """Mini-batch Adam for a fixed number of epochs.

    Returns ``(TrainedModel, history)`` where history holds one dict per epoch
    with the mean total loss and mean cross-entropy over that epoch.
    """
    idx = list(train_indices)
    if not idx:
        raise EmptyTrainSet("no training examples")
    x, y = dataset.arrays(idx)
    if model_config.input_dim != x.shape[-1]:
        model_config = replace(model_config, input_dim=x.shape[-1])
    params = nnmodel.build_model(model_config, seeding.derive(train_config.seed, "init"))
    gen = seeding.rng(train_config.seed, "train")
    state = AdamState()
    history = []
    for epoch in range(train_config.epochs):
        total = ce_total = 0.0
        for b in _batches(gen.permutation(len(idx)), train_config.batch_size):
            loss, ce, grads, stats = nnmodel.loss_and_grads(params, model_config, x[b], y[b], gen)
            params, state = adam_step(params, grads, state, lr=train_config.lr)
            params.update(stats)
            total += loss * len(b)
            ce_total += ce * len(b)
        history.append({"epoch": epoch, "loss": total / len(idx),
                        "cross_entropy": ce_total / len(idx)})
    model = TrainedModel(model_config, params, dataset.normalization, train_config.seed)
    return model, history


# -- metrics -------------------------------------------------------------------

@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    macro_f1: float
    macro_precision: float
    macro_recall: float
    confusion: tuple  # rows = true class, cols = predicted class
    per_class_f1: tuple

    @property
    def n(self) -> int:
        return int(np.sum(self.confusion))

    def row_normalized(self) -> list:
        c = np.asarray(self.confusion, dtype=np.float64)
        rows = c.sum(axis=1, keepdims=True)
        return np.divide(c, rows, out=np.zeros_like(c), where=rows > 0).tolist()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confusion"] = [list(r) for r in self.confusion]
        d["per_class_f1"] = list(self.per_class_f1)
        d["confusion_row_normalized"] = self.row_normalized()
        return d


def confusion_matrix(y_true, y_pred, n_classes=N_CLASSES) -> np.ndarray:
    c = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(c, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return c


def report_from_confusion(conf) -> EvalReport:
    """Macro metrics; a class with no support and no predictions scores 0."""
    c = np.asarray(conf, dtype=np.int64)
    tp = np.diag(c).astype(np.float64)
    pred = c.sum(axis=0)
    true = c.sum(axis=1)
    precision = np.divide(tp, pred, out=np.zeros(len(c)), where=pred > 0)
    recall = np.divide(tp, true, out=np.zeros(len(c)), where=true > 0)
    denom = (pred + true).astype(np.float64)
    f1 = np.divide(2 * tp, denom, out=np.zeros(len(c)), where=denom > 0)
    return EvalReport(
        accuracy=float(tp.sum() / c.sum()),
        macro_f1=float(f1.mean()),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        confusion=tuple(tuple(int(v) for v in row) for row in c),
        per_class_f1=tuple(float(v) for v in f1),
    )


def predict(logits: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest class on ties
    return np.argmax(logits, axis=-1)


def evaluate(model: TrainedModel, dataset: LabeledDataset, indices) -> EvalReport:
    idx = list(indices)
    if not idx:
        raise EmptyEvalSet("no examples to evaluate")
    if model.normalization is not None:
        dataset = dataset.with_normalization(model.normalization)
    x, y = dataset.arrays(idx)
    return report_from_confusion(confusion_matrix(y, predict(model.logits(x))))


# -- cross-validation ------------------------------------------------------------

@dataclass(frozen=True)
class CVResult:
    reports: tuple
    folds: FoldAssignment

    @property
    def f1s(self) -> np.ndarray:
        return np.array([r.macro_f1 for r in self.reports])

    @property
    def mean_f1(self) -> float:
        return float(self.f1s.mean())

    @property
    def std_f1(self) -> float:
        return float(self.f1s.std())

    def to_dict(self) -> dict:
        return {"mean_macro_f1": self.mean_f1, "std_macro_f1": self.std_f1,
                "folds": [r.to_dict() for r in self.reports], "assignment": self.folds.to_dict()}


def _canonical(dataset: LabeledDataset, indices) -> list:
    # order by example identity so results do not depend on dataset order
    return sorted(indices, key=lambda i: (dataset.examples[i].subject_id,
                                          dataset.examples[i].video_id, i))


def _run_fold(args):
    dataset, model_config, train_config, train, held = args
    norm = fit_normalizer(dataset, train)
    ds = dataset.with_normalization(norm)
    model, _ = train_model(ds, model_config, train_config, train)
    return evaluate(model, ds, held)


def fold_assignment(dataset: LabeledDataset, train_config: TrainConfig) -> FoldAssignment:
    return stratified_kfold(dataset.labels, train_config.folds,
                            seeding.derive(train_config.seed, "folds"))


def _map(fn, jobs_args, jobs: int):
    if jobs > 1 and len(jobs_args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, jobs_args))
    return [fn(a) for a in jobs_args]


def cross_validate(dataset: LabeledDataset, model_config, train_config: TrainConfig,
                   folds: FoldAssignment | None = None, jobs: int = 1) -> CVResult:
    """Per fold: fit the normalizer on the training part, train, score the held-out part."""
    if len(dataset) < train_config.folds:
        raise TooFewExamples(f"{len(dataset)} examples cannot fill {train_config.folds} folds")
    folds = folds or fold_assignment(dataset, train_config)
    tasks = []
    for k in range(folds.k):
        train, held = folds.indices(k)
        if len(held) == 0:
            raise TooFewExamples(f"fold {k} is empty")
        tc = replace(train_config, seed=seeding.derive(train_config.seed, "fold", k))
        tasks.append((dataset, model_config, tc,
                      _canonical(dataset, train), _canonical(dataset, held)))
    return CVResult(tuple(_map(_run_fold, tasks, jobs)), folds)


# -- grid search -----------------------------------------------------------------

GRID_AXES = ("units1", "units2", "dropout", "l2")

# Value sets observed among the reference per-factor optima.
DEFAULT_GRID = {"units1": [16, 32, 64, 128], "units2": [16, 32, 64, 128],
                "dropout": [0.2, 0.4, 0.7], "l2": [0.2, 0.4, 0.6]}

# Reference per-factor optima (units1, units2, dropout, l2).
REFERENCE_HYPERPARAMETERS = {
    "VC": {"units1": 16, "units2": 128, "dropout": 0.7, "l2": 0.2},
    "VQ": {"units1": 128, "units2": 16, "dropout": 0.2, "l2": 0.6},
    "AC": {"units1": 64, "units2": 128, "dropout": 0.7, "l2": 0.4},
    "IL": {"units1": 32, "units2": 64, "dropout": 0.4, "l2": 0.6},
    "SA": {"units1": 64, "units2": 128, "dropout": 0.2, "l2": 0.2},
}

# Reference VQ test results per architecture (accuracy, F1, precision, recall).
REFERENCE_MODEL_RESULTS = {
    "bilstm": (0.79, 0.78, 0.80, 0.79),
    "transformer": (0.70, 0.67, 0.70, 0.70),
    "convlstm": (0.61, 0.59, 0.59, 0.61),
}
REFERENCE_FACTOR_F1 = {"VC": 0.69, "VQ": 0.78, "AC": 0.79, "IL": 0.69, "SA": 0.68}
# Row-normalized confusion diagonal (low, middle, high) for VQ.
REFERENCE_CONFUSION_DIAGONAL = (0.94, 0.52, 0.85)


@dataclass(frozen=True)
class GridCell:
    config: nnmodel.ModelConfig
    mean_f1: float
    std_f1: float
    n_params: int

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(), "mean_macro_f1": self.mean_f1,
                "std_macro_f1": self.std_f1, "n_params": self.n_params}


@dataclass(frozen=True)
class GridResult:
    cells: tuple
    best: nnmodel.ModelConfig

    def ranked(self) -> list:
        return sorted(self.cells, key=_rank_key)

    def to_dict(self) -> dict:
        return {"cells": [c.to_dict() for c in self.cells],
                "sorted": [c.to_dict() for c in self.ranked()],
                "best": self.best.to_dict()}


def _rank_key(cell: GridCell):
    return (-cell.mean_f1, cell.n_params, cell.config.sort_key())


def grid_configs(axes: dict, base: nnmodel.ModelConfig) -> list:
    """Cartesian product of the axis value lists, in axis order."""
    lists = []
    for name in GRID_AXES:
        values = list(axes.get(name, [getattr(base, name)]))
        if not values:
            raise EmptyAxis(f"grid axis {name} is empty")
        lists.append(values)
    return [replace(base, **dict(zip(GRID_AXES, combo))) for combo in itertools.product(*lists)]


def _score_cell(args):
    dataset, config, train_config, folds = args
    return cross_validate(dataset, config, train_config, folds)


def grid_search(dataset: LabeledDataset, axes: dict, train_config: TrainConfig,
                base: nnmodel.ModelConfig | None = None, jobs: int = 1) -> GridResult:
    """Score every cell by mean fold macro-F1.

    All cells share one fold assignment; cell ``i`` trains with seed
    ``derive(seed, "cell", i)``. Ties go to the smaller model, then to the
    lexicographically smaller config.
    """
    base = base or nnmodel.ModelConfig(input_dim=len(dataset.columns))
    configs = grid_configs(axes, base)
    folds = fold_assignment(dataset, train_config)
    tasks = [(dataset, cfg, replace(train_config, seed=seeding.derive(train_config.seed, "cell", i)),
              folds) for i, cfg in enumerate(configs)]
    results = _map(_score_cell, tasks, jobs)
    cells = []
    for cfg, res in zip(configs, results):
        n = nnmodel.param_count(nnmodel.build_model(replace(cfg, input_dim=len(dataset.columns))))
        cells.append(GridCell(cfg, res.mean_f1, res.std_f1, n))
        log.info("grid cell %s: macro-F1 %.4f +- %.4f", cfg.sort_key()[:5], res.mean_f1, res.std_f1)
    best = min(cells, key=_rank_key).config
    return GridResult(tuple(cells), best)


# -- ablation --------------------------------------------------------------------

# Reference deltas on the VC factor (percentage points of F1 lost per removal).
# Documentation only: not reproducible without the original recordings.
REFERENCE_ABLATION_DELTAS = {
    "band": {"delta": 8, "alpha": 13, "theta": 14, "gamma": 15, "beta": 17},
    "electrode": {"P3": 4, "P4": 6, "O2": 16, "O1": 21},
}


@dataclass(frozen=True)
class AblationEntry:
    removed: str
    f1: float
    delta: float


@dataclass(frozen=True)
class AblationReport:
    kind: str
    baseline_f1: float
    entries: tuple
    retained_width: int

    def to_dict(self) -> dict:
        return {"kind": self.kind, "baseline_f1": self.baseline_f1,
                "retained_width": self.retained_width,
                "entries": [asdict(e) for e in self.entries]}


def ablation_units(kind: str) -> list:
    if kind == "band":
        return [b.name for b in BANDS]
    if kind == "electrode":
        return list(CHANNELS)
    raise InvalidKind(f"ablation kind must be 'band' or 'electrode', got {kind!r}")


def columns_without(columns, kind: str, unit: str) -> list:
    """Indices of columns that do not belong to ``unit``."""
    pos = 0 if kind == "electrode" else 1
    return [i for i, name in enumerate(columns) if name.split("_")[pos] != unit]


def ablate(dataset: LabeledDataset, kind: str, model_config, train_config: TrainConfig,
           jobs: int = 1) -> AblationReport:
    """Retrain from scratch with one band or one electrode removed at a time."""
    units = ablation_units(kind)
    folds = fold_assignment(dataset, train_config)
    baseline = cross_validate(dataset, model_config, train_config, folds, jobs).mean_f1
    entries = []
    width = None
    for unit in units:
        keep = columns_without(dataset.columns, kind, unit)
        ds = dataset.select_columns(keep)
        width = len(keep)
        cfg = replace(model_config, input_dim=width)
        if cfg.architecture == "convlstm":
            rows = len(CHANNELS) - (kind == "electrode")
            cfg = replace(cfg, extra={**cfg.extra, "grid": (rows, width // rows)})
        f1 = cross_validate(ds, cfg, train_config, folds, jobs).mean_f1
        entries.append(AblationEntry(unit, f1, baseline - f1))
        log.info("ablation %s=%s: macro-F1 %.4f (delta %.4f)", kind, unit, f1, baseline - f1)
    return AblationReport(kind, baseline, tuple(entries), width)
