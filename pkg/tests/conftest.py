import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from normls.config import RunConfig

# bitwise reproducibility assumes single-threaded BLAS
threadpool_limits(1)

ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str = ""):
    status = "PASS" if passed else "FAIL"
    line = f"criterion {number} [{status}] {title}"
    if detail:
        line += f" :: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture
def tiny_config(tmp_path) -> RunConfig:
    """A run small enough to train in well under a second per epoch."""
    return RunConfig(synthetic_counts=(12, 8, 8), image_size=8, epochs=2, batch_size=8,
                     output_dir=str(tmp_path / "run"), embed=False, tsne_iters=100)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
