from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st

from fairlens.dataset import DatasetTable

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "data"
CONFIGS = ROOT / "configs"


def make_table(sensitive, labels, features=None, names=None) -> DatasetTable:
    sensitive = np.asarray(sensitive, dtype=np.int8)
    if sensitive.ndim == 1:
        sensitive = sensitive.reshape(-1, 1)
    labels = np.asarray(labels, dtype=np.int8)
    n, k = sensitive.shape
    if features is None:
        features = np.zeros((n, 0))
    features = np.asarray(features, dtype=float)
    return DatasetTable(
        features=features,
        sensitive=sensitive,
        labels=labels,
        feature_names=tuple(f"x{i}" for i in range(features.shape[1])),
        sensitive_names=tuple(names or (f"a{j}" for j in range(k))),
        numeric_mask=np.ones(features.shape[1], dtype=bool),
    )


@st.composite
def tables(draw, min_rows=1, max_rows=200, max_attrs=2, n_features=0):
    n = draw(st.integers(min_rows, max_rows))
    k = draw(st.integers(1, max_attrs))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    # skewed rates so that small and empty cells show up
    p_a = draw(st.floats(0.05, 0.95))
    p_y = draw(st.floats(0.05, 0.95))
    a = (rng.random((n, k)) < p_a).astype(np.int8)
    y = (rng.random(n) < p_y).astype(np.int8)
    x = rng.normal(size=(n, n_features))
    return make_table(a, y, x)


# --- acceptance summary lines -------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def acceptance_report():
    def record(number: int, passed: bool, detail: str = "") -> None:
        ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}" + (f"  {detail}" if detail else "")
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
