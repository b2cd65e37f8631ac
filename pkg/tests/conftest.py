import json
from pathlib import Path

import numpy as np
import pytest

from meaad import _kernels_py

try:
    from meaad import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None

REGRESSION = json.loads((Path(__file__).parent / "regression_values.json").read_text())

ACCEPTANCE_LINES = []

BACKENDS = [pytest.param(_kernels_py, id="python")]
if _kernels_c is not None:
    BACKENDS.append(pytest.param(_kernels_c, id="cython"))


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture(params=BACKENDS)
def kernel_backend(request, monkeypatch):
    """Route the library's kernel calls through one backend."""
    from meaad import kernels

    for name in ("topk_rows", "membership_counts", "common_counts"):
        monkeypatch.setattr(kernels, name, getattr(request.param, name))
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_unit(rng, *shape):
    v = rng.standard_normal(shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def regression(name):
    entry = REGRESSION[name]
    return entry["value"], entry.get("tol", 0.0)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
