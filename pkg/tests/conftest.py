import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from irgnm4pi import chebyshev, fourpi, grid  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def report():
    """Record a one-line PASS/FAIL verdict for the terminal summary."""
    def _report(name: str, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return _report


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_model(dims, spacing, power=2, degrees=None, n_sigma=3.0):
    spec = fourpi.CosinePsfSpec.from_optics(len(dims), power=power)
    box = grid.DomainBox.from_dims(dims, spacing, spec.kernel_halfwidths(n_sigma))
    K = fourpi.build_cosine_expansion(spec, box)
    degrees = degrees or [3] * len(dims)
    basis = chebyshev.build_phase_basis(degrees, box.extended_halfwidths)
    return spec, box, fourpi.FourPiModel(K, basis, box.object_dims)


@pytest.fixture(scope="session")
def model_2d():
    return make_model((16, 16), (50.0, 50.0))


@pytest.fixture(scope="session")
def model_3d():
    return make_model((8, 8, 8), (80.0, 80.0, 80.0), degrees=[2, 2, 2])
