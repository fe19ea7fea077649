import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from citgan.data import generate_toy_domains, toy_registry  # noqa: E402

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def registry():
    return toy_registry()


@pytest.fixture(scope="session")
def toy_small():
    return generate_toy_domains(seed=0, per_domain=10, resolution=32)


_RESULTS = pytest.StashKey[dict]()
ACCEPTANCE_IDS = range(1, 9)


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def criterion(request):
    """Record the outcome of one acceptance criterion for the end-of-run summary."""
    results = request.config.stash[_RESULTS]

    def record(number, ok, detail=""):
        results[number] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in ACCEPTANCE_IDS:
        if n not in results:
            terminalreporter.write_line(f"criterion {n}: NOT RUN  (deselected, or errored before a verdict)")
            continue
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
