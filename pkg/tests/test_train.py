from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import f1_score, precision_score, recall_score

from conftest import toy_dataset
from qoe_eeg import train as T
from qoe_eeg.dataset import LabeledDataset, fit_normalizer
from qoe_eeg.errors import EmptyAxis, EmptyEvalSet, EmptyTrainSet, InvalidKind, TooFewExamples
from qoe_eeg.nn.model import ModelConfig, build_model, forward_batch, param_count
from qoe_eeg.nn.ops import softmax_crossentropy

SMALL = ModelConfig(units1=4, units2=4, head_hidden=8)
FAST = T.TrainConfig(epochs=2, folds=3, seed=0)


class _Fixed:
    """Stand-in model returning preset logits."""

    def __init__(self, logits):
        self._logits = np.asarray(logits, dtype=float)
        self.normalization = None

    def logits(self, x):
        return self._logits


def test_train_config_defaults():
    assert T.TrainConfig().epochs == 100 and T.TrainConfig().folds == 10
    assert T.TrainConfig.for_architecture("transformer").epochs == 150
    with pytest.raises(ValueError):
        T.TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        T.TrainConfig(folds=1)


def test_training_is_deterministic():
    ds = toy_dataset([0, 1, 2] * 4, signal=1.0)
    a, ha = T.train_model(ds, SMALL, FAST, range(12))
    b, hb = T.train_model(ds, SMALL, FAST, range(12))
    assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)
    assert ha == hb and len(ha) == 2


@pytest.mark.parametrize("seed", range(4))
def test_fresh_model_loss_near_ln3(seed):
    ds = toy_dataset([0, 1, 2] * 10, t=8, seed=seed)
    ds = ds.with_normalization(fit_normalizer(ds, range(30)))
    x, y = ds.arrays(range(30))
    params = build_model(ModelConfig(), seed=seed)
    ce, _ = softmax_crossentropy(forward_batch(params, ModelConfig(), x), y)
    assert abs(ce - np.log(3)) <= 0.15


def test_history_records_mean_epoch_loss():
    ds = toy_dataset([0, 1, 2] * 4, seed=2)
    _, hist = T.train_model(ds, replace(SMALL, l2=0.0), FAST, range(12))
    assert [h["epoch"] for h in hist] == [0, 1]
    assert all(h["loss"] == h["cross_entropy"] for h in hist)


def test_empty_train_set():
    with pytest.raises(EmptyTrainSet):
        T.train_model(toy_dataset([0, 1, 2]), SMALL, FAST, [])


def test_trailing_singleton_batch_merged():
    chunks = T._batches(np.arange(33), 32)
    assert [len(c) for c in chunks] == [33]
    assert [len(c) for c in T._batches(np.arange(40), 32)] == [32, 8]


# -- metrics -----------------------------------------------------------------------

def test_perfect_predictor():
    ds = toy_dataset([0, 1, 2, 2, 1, 0])
    rep = T.evaluate(_Fixed(np.eye(3)[ds.labels] * 5), ds, range(6))
    assert rep.accuracy == rep.macro_f1 == rep.macro_precision == rep.macro_recall == 1.0
    assert rep.confusion == ((2, 0, 0), (0, 2, 0), (0, 0, 2))


def test_always_class_zero_closed_form():
    ds = toy_dataset([0, 1, 2] * 5)
    rep = T.evaluate(_Fixed(np.zeros((15, 3))), ds, range(15))
    assert rep.accuracy == 1 / 3
    assert rep.per_class_f1 == (0.5, 0.0, 0.0)
    assert rep.macro_f1 == 1 / 6


def test_row_normalized_format():
    conf = [[94, 5, 1], [30, 52, 18], [5, 10, 85]]
    rep = T.report_from_confusion(conf)
    assert np.allclose(np.diag(rep.row_normalized()), T.REFERENCE_CONFUSION_DIAGONAL)
    assert np.allclose(np.sum(rep.row_normalized(), axis=1), 1.0)


def test_empty_eval_set():
    with pytest.raises(EmptyEvalSet):
        T.evaluate(_Fixed(np.zeros((0, 3))), toy_dataset([0]), [])


def test_argmax_ties_go_low():
    assert T.predict(np.array([[1.0, 1.0, 0.0], [0.0, 2.0, 2.0], [3.0, 3.0, 3.0]])).tolist() == [0, 1, 0]


def _brute(y, p):
    tp = [sum(1 for a, b in zip(y, p) if a == b == c) for c in range(3)]
    pred = [sum(1 for b in p if b == c) for c in range(3)]
    true = [sum(1 for a in y if a == c) for c in range(3)]
    f1 = [2 * tp[c] / (pred[c] + true[c]) if pred[c] + true[c] else 0.0 for c in range(3)]
    prec = [tp[c] / pred[c] if pred[c] else 0.0 for c in range(3)]
    rec = [tp[c] / true[c] if true[c] else 0.0 for c in range(3)]
    return sum(tp) / len(y), sum(f1) / 3, sum(prec) / 3, sum(rec) / 3


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=60))
def test_metrics_match_brute_force(pairs):
    y, p = map(np.array, zip(*pairs))
    conf = T.confusion_matrix(y, p)
    rep = T.report_from_confusion(conf)
    acc, f1, prec, rec = _brute(y.tolist(), p.tolist())
    assert rep.accuracy == acc
    assert abs(rep.macro_f1 - f1) < 1e-15
    assert abs(rep.macro_precision - prec) < 1e-15 and abs(rep.macro_recall - rec) < 1e-15
    assert conf.sum(axis=1).tolist() == np.bincount(y, minlength=3).tolist()
    assert conf.sum(axis=0).tolist() == np.bincount(p, minlength=3).tolist()
    assert rep.accuracy == np.trace(conf) / conf.sum()
    assert rep.n == len(y)
    assert all(0 <= v <= 1 for v in (rep.accuracy, rep.macro_f1, rep.macro_precision, rep.macro_recall))
    perm = np.random.default_rng(len(y)).permutation(len(y))
    assert T.report_from_confusion(T.confusion_matrix(y[perm], p[perm])) == rep


def test_metrics_match_sklearn():
    gen = np.random.default_rng(0)
    y, p = gen.integers(0, 3, 200), gen.integers(0, 3, 200)
    rep = T.report_from_confusion(T.confusion_matrix(y, p))
    kw = dict(average="macro", labels=[0, 1, 2], zero_division=0)
    assert abs(rep.macro_f1 - f1_score(y, p, **kw)) < 1e-12
    assert abs(rep.macro_precision - precision_score(y, p, **kw)) < 1e-12
    assert abs(rep.macro_recall - recall_score(y, p, **kw)) < 1e-12


# -- cross-validation ----------------------------------------------------------------

def test_cross_validate_fold_arithmetic():
    ds = toy_dataset([0, 1, 2] * 10)
    res = T.cross_validate(ds, SMALL, replace(FAST, epochs=1, folds=10))
    assert len(res.reports) == 10 and all(r.n == 3 for r in res.reports)
    assert res.std_f1 >= 0
    with pytest.raises(TooFewExamples):
        T.cross_validate(toy_dataset([0, 1, 2]), SMALL, replace(FAST, folds=10))


def test_cross_validate_order_independent():
    labels = [0, 1, 2] * 4
    ds = toy_dataset(labels, signal=0.5)
    folds = T.fold_assignment(ds, FAST)
    perm = np.random.default_rng(7).permutation(len(ds))
    shuffled = LabeledDataset(ds.factor, [ds.examples[i] for i in perm])
    moved = T.FoldAssignment(folds.k, folds.assignment[perm])
    a = T.cross_validate(ds, SMALL, FAST, folds)
    b = T.cross_validate(shuffled, SMALL, FAST, moved)
    assert a.reports == b.reports


# -- grid search ---------------------------------------------------------------------

def test_grid_cell_count_default_axes():
    configs = T.grid_configs(T.DEFAULT_GRID, ModelConfig())
    assert len(configs) == 144
    assert len({repr(c.sort_key()) for c in configs}) == 144
    with pytest.raises(EmptyAxis):
        T.grid_configs({"units1": []}, ModelConfig())


def test_reference_hyperparameters_lie_on_default_grid():
    for row in T.REFERENCE_HYPERPARAMETERS.values():
        for axis, value in row.items():
            assert value in T.DEFAULT_GRID[axis]


def test_tie_break_prefers_smaller_model():
    small, big = replace(SMALL, units1=4), replace(SMALL, units1=8)
    n_small = param_count(build_model(small))
    n_big = param_count(build_model(big))
    cells = [T.GridCell(big, 0.7, 0.0, n_big), T.GridCell(small, 0.7, 0.1, n_small)]
    assert min(cells, key=T._rank_key).config == small
    cells.append(T.GridCell(big, 0.71, 0.0, n_big))
    assert min(cells, key=T._rank_key).mean_f1 == 0.71


def test_singleton_grid():
    ds = toy_dataset([0, 1, 2] * 3)
    res = T.grid_search(ds, {"units1": [4], "units2": [4], "dropout": [0.2], "l2": [0.0]},
                        replace(FAST, epochs=1), SMALL)
    assert len(res.cells) == 1 and res.best == replace(SMALL, dropout=0.2, l2=0.0)
    again = T.grid_search(ds, {"units1": [4], "units2": [4], "dropout": [0.2], "l2": [0.0]},
                          replace(FAST, epochs=1), SMALL)
    assert again.to_dict() == res.to_dict()


# -- ablation -----------------------------------------------------------------------

def test_ablation_units_and_columns():
    cols = toy_dataset([0]).columns
    assert T.ablation_units("band") == ["delta", "theta", "alpha", "beta", "gamma"]
    assert len(T.ablation_units("electrode")) == 8
    assert len(T.columns_without(cols, "band", "alpha")) == 64
    assert len(T.columns_without(cols, "electrode", "O1")) == 70
    assert not any("alpha" in cols[i] for i in T.columns_without(cols, "band", "alpha"))
    with pytest.raises(InvalidKind):
        T.ablation_units("channel")


def test_ablation_report_structure():
    ds = toy_dataset([0, 1, 2] * 3, signal=1.0)
    tc = replace(FAST, epochs=1)
    rep = T.ablate(ds, "band", SMALL, tc)
    assert len(rep.entries) == 5 and rep.retained_width == 64
    assert rep.baseline_f1 == T.cross_validate(ds, SMALL, tc).mean_f1
    for e in rep.entries:
        assert e.delta == rep.baseline_f1 - e.f1
    rep = T.ablate(ds, "electrode", replace(SMALL, architecture="convlstm",
                                            extra={"filters": 2}), tc)
    assert len(rep.entries) == 8 and rep.retained_width == 70
