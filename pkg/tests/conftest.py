from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from annimpute.core import AnnotationMatrix, LabelSchema  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def schema04():
    return LabelSchema(0, 4)


@pytest.fixture
def fixtures_dir():
    return FIXTURES


def random_matrix(rng, n_items=None, n_annotators=None, density=None, schema=None):
    """Random sparse matrix with at least one cell per row."""
    schema = schema or LabelSchema(0, 4)
    n = n_items or int(rng.integers(2, 9))
    m = n_annotators or int(rng.integers(2, 7))
    p = density if density is not None else float(rng.uniform(0.2, 0.9))
    mask = rng.random((n, m)) < p
    mask[np.arange(n), rng.integers(0, m, size=n)] = True
    labels = rng.integers(schema.min_label, schema.max_label + 1, size=(n, m))
    ii, jj = np.nonzero(mask)
    return AnnotationMatrix(n, m, zip(ii.tolist(), jj.tolist(), labels[ii, jj].tolist()), schema)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acceptance.LINES):
        terminalreporter.write_line(acceptance.LINES[n])
