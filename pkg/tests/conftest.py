import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qoe_eeg import cohort
from qoe_eeg.dataset import FeatureTensor, LabeledDataset, LabeledExample, QoEFactor, assemble, featurize
from qoe_eeg.dsp import column_names

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def toy_dataset(labels, t=5, seed=0, factor="VQ", signal=0.0):
    """Random (T, 80) tensors; ``signal`` shifts every column by the label."""
    gen = np.random.default_rng(seed)
    cols = column_names()
    examples = []
    for i, y in enumerate(labels):
        values = gen.standard_normal((t, len(cols))) + signal * y
        ft = FeatureTensor(values, cols, f"s{i // 9 + 1:02d}", f"v{i % 9 + 1:02d}")
        examples.append(LabeledExample(ft, int(y)))
    return LabeledDataset(QoEFactor(factor), examples)


@pytest.fixture(scope="session")
def cohort_dataset():
    """50-member alpha-tier synthetic cohort, featurized, factor VC."""
    pairs = cohort.make_cohort({"seed": 1}, 50)
    return assemble([(featurize(r), rt) for r, rt in pairs], "VC")


# -- acceptance bookkeeping --------------------------------------------------------

_CRITERIA: dict = {}


class _Recorder:
    def __call__(self, number: int, ok: bool, detail: str) -> None:
        _CRITERIA.setdefault(number, []).append((bool(ok), detail))
        print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {number}: {detail}"


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` logs one check of acceptance criterion ``n``."""
    return _Recorder()


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        checks = _CRITERIA[number]
        ok = all(c[0] for c in checks)
        details = "; ".join(d for _, d in checks)
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {details}")
