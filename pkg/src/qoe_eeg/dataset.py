"""Labeled datasets for one QoE factor, normalization, and stratified splits."""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dsp, fileio, seeding
from .errors import (
    EmptyClass,
    EmptyTrainSet,
    MissingFactor,
    OutOfRange,
    ShapeMismatch,
    TooFewExamples,
)
from .ingest import RawRecording, load_ratings

CLASSES = ("low", "middle", "high")
STD_FLOOR = 1e-8


class QoEFactor(str, enum.Enum):
    VC = "VC"  # interest in video content
    VQ = "VQ"  # perceived video quality
    AC = "AC"  # interest in audio content
    IL = "IL"  # immersive level
    SA = "SA"  # surrounding awareness


@dataclass(frozen=True)
class FeatureTensor:
    values: np.ndarray  # (T, F)
    columns: tuple
    subject_id: str = ""
    video_id: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != len(self.columns):
            raise ShapeMismatch(f"values {v.shape} do not match {len(self.columns)} columns")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "columns", tuple(self.columns))

    @property
    def T(self) -> int:
        return self.values.shape[0]


def featurize(rec: RawRecording, filt: dsp.IirFilter | None = None,
              plan: dsp.WindowPlan | None = None, bands=dsp.BANDS) -> FeatureTensor:
    """Bandpass a raw recording and extract its windowed feature tensor."""
    filt = filt or dsp.design_bandpass(sample_rate=rec.sample_rate)
    plan = plan or dsp.WindowPlan.for_rate(rec.sample_rate)
    values = dsp.extract_features(dsp.bandpass_recording(rec, filt), plan, bands)
    meta = {"plan": plan.to_dict(),
            "band_table": [[b.name, b.low, b.high] for b in bands],
            "filter_metadata": filt.metadata()}
    return FeatureTensor(values, dsp.column_names(rec.channels, bands),
                         rec.subject_id, rec.video_id, meta)


def write_feature_tensor(ft: FeatureTensor, path) -> Path:
    """CSV with a column header plus a ``.meta.json`` sidecar."""
    path = Path(path)
    buf = io.StringIO()
    buf.write(",".join(ft.columns) + "\n")
    for row in ft.values:
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    fileio.write_text(path, buf.getvalue())
    meta = {"subject_id": ft.subject_id, "video_id": ft.video_id, "T": ft.T}
    meta.update(ft.meta)
    fileio.write_text(path.with_name(path.stem + ".meta.json"),
                      json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def read_feature_tensor(path) -> FeatureTensor:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ShapeMismatch(f"{path}: empty feature file")
    columns = rows[0]
    try:
        values = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    except ValueError:
        raise ShapeMismatch(f"{path}: non-numeric feature value") from None
    meta_path = path.with_name(path.stem + ".meta.json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    sid = meta.pop("subject_id", "")
    vid = meta.pop("video_id", "")
    meta.pop("T", None)
    return FeatureTensor(values.reshape(-1, len(columns)), columns, sid, vid, meta)


@dataclass(frozen=True)
class LabeledExample:
    tensor: FeatureTensor
    label: int

    @property
    def subject_id(self) -> str:
        return self.tensor.subject_id

    @property
    def video_id(self) -> str:
        return self.tensor.video_id


@dataclass(frozen=True)
class Normalization:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Normalization":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


@dataclass(frozen=True)
class LabeledDataset:
    factor: QoEFactor
    examples: tuple
    normalization: Normalization | None = None

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))

    def __len__(self):
        return len(self.examples)

    @property
    def columns(self) -> tuple:
        return self.examples[0].tensor.columns if self.examples else ()

    @property
    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.examples], dtype=np.int64)

    def raw(self, indices=None) -> np.ndarray:
        """Stacked (N, T, F) tensors without normalization."""
        idx = range(len(self)) if indices is None else indices
        return np.stack([self.examples[i].tensor.values for i in idx])

    def arrays(self, indices=None):
        """``(X, y)`` for ``indices`` with the normalization table applied, if any."""
        idx = list(range(len(self))) if indices is None else list(indices)
        x = self.raw(idx)
        if self.normalization is not None:
            x = self.normalization.apply(x)
        return x, self.labels[idx]

    def with_normalization(self, table: Normalization | None) -> "LabeledDataset":
        return replace(self, normalization=table)

    def select_columns(self, keep: Sequence[int]) -> "LabeledDataset":
        """Dataset restricted to the given column indices (normalization dropped)."""
        keep = list(keep)
        examples = []
        for e in self.examples:
            t = e.tensor
            examples.append(LabeledExample(
                FeatureTensor(t.values[:, keep], [t.columns[k] for k in keep],
                              t.subject_id, t.video_id, t.meta), e.label))
        return LabeledDataset(self.factor, examples, None)


def bin_rating(score: int) -> int:
    """Nine-point score to class: 1-3 low, 4-6 middle, 7-9 high."""
    if isinstance(score, bool) or int(score) != score or not 1 <= score <= 9:
        raise OutOfRange(f"score must be an integer in [1, 9], got {score!r}")
    return (int(score) - 1) // 3


def assemble(pairs: Sequence, factor) -> LabeledDataset:
    """One labeled example per (FeatureTensor, RatingRecord) pair, order kept."""
    factor = QoEFactor(factor)
    examples = []
    shape = None
    for i, (ft, rating) in enumerate(pairs):
        if shape is None:
            shape = (ft.values.shape, ft.columns)
        elif (ft.values.shape, ft.columns) != shape:
            raise ShapeMismatch(
                f"pair {i}: tensor shape {ft.values.shape} differs from {shape[0]}")
        if factor.value not in rating.scores:
            raise MissingFactor(f"pair {i}: ratings lack factor {factor.value}")
        examples.append(LabeledExample(ft, bin_rating(rating.scores[factor.value])))
    return LabeledDataset(factor, examples)


def load_dataset(path, factor=None) -> LabeledDataset:
    """Read a dataset manifest ``{factor, entries: [{features, ratings}], seed}``."""
    path = Path(path)
    raw = json.loads(path.read_text())
    factor = factor or raw.get("factor")
    if factor is None:
        raise MissingFactor(f"{path}: no factor given")
    base = path.parent
    pairs = []
    for e in raw.get("entries", []):
        ft = read_feature_tensor(base / e["features"])
        rating = load_ratings(base / e["ratings"])
        pairs.append((ft, rating))
    return assemble(pairs, factor)


def fit_normalizer(dataset: LabeledDataset, train_indices) -> Normalization:
    """Per-column population mean/std over every window of the training examples."""
    idx = list(train_indices)
    if not idx:
        raise EmptyTrainSet("cannot fit a normalizer on an empty training set")
    x = dataset.raw(idx).reshape(-1, len(dataset.columns))
    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), STD_FLOOR)
    return Normalization(mean, std)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + 1e-12))


def stratified_split(labels, train_fraction: float = 0.8, seed: int = 0):
    """Per class, ``round(train_fraction * count)`` shuffled examples go to train."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) == 0:
        raise EmptyClass("no examples to split")
    gen = seeding.rng(seed, "split")
    train, test = [], []
    for c in classes:
        members = np.flatnonzero(labels == c)
        members = members[gen.permutation(len(members))]
        n_train = _round_half_up(train_fraction * len(members))
        train.extend(members[:n_train].tolist())
        test.extend(members[n_train:].tolist())
    return np.array(sorted(train), dtype=np.int64), np.array(sorted(test), dtype=np.int64)


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    assignment: np.ndarray

    def indices(self, fold: int):
        """``(train, held_out)`` index arrays for one fold."""
        held = np.flatnonzero(self.assignment == fold)
        train = np.flatnonzero(self.assignment != fold)
        return train, held

    def to_dict(self) -> dict:
        return {"k": self.k, "assignment": self.assignment.tolist()}

    @classmethod
    def from_dict(cls, d) -> "FoldAssignment":
        return cls(int(d["k"]), np.asarray(d["assignment"], dtype=np.int64))


def stratified_kfold(labels, k: int = 10, seed: int = 0) -> FoldAssignment:
    """Shuffle each class and deal it round-robin over the folds.

    Dealing continues where the previous class stopped, so fold sizes stay
    within one of each other as well.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise TooFewExamples(f"k must be at least 2, got {k}")
    if len(labels) < k:
        raise TooFewExamples(f"{len(labels)} examples cannot fill {k} folds")
    gen = seeding.rng(seed, "kfold")
    assignment = np.empty(len(labels), dtype=np.int64)
    pos = 0
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        members = members[gen.permutation(len(members))]
        assignment[members] = (pos + np.arange(len(members))) % k
        pos = (pos + len(members)) % k
    return FoldAssignment(k, assignment)
