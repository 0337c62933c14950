import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from gfenet.dataset import generate_synthetic_dataset, discover

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_CRITERIA: list[tuple[str, str, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(name, status, detail)``."""

    def record(name, status, detail=""):
        _CRITERIA.append((name, status, detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in _CRITERIA:
        terminalreporter.write_line(f"[{status}] {name}" + (f": {detail}" if detail else ""))


@pytest.fixture(scope="session")
def mouth_dataset():
    return generate_synthetic_dataset(7, 200, 200, {"Mouth"})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def real_data_root():
    root = Path(os.environ.get("GFE_DATA_ROOT", Path(__file__).resolve().parents[1] / "data"))
    return root if discover(root) else None
