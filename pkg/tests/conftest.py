import pytest

from rationale_cf.config import TrainConfig
from rationale_cf.graph import split
from rationale_cf.synthetic import block_dataset


@pytest.fixture(scope="session")
def small_split():
    return split(block_dataset(n_users=40, n_items=40, n_blocks=4, n_interactions=400, seed=0), seed=0)


@pytest.fixture
def small_config():
    return TrainConfig(dim=8, heads=2, anchor_count=8, batch_size=64, max_epochs=3, patience=10)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    """Record one status line per acceptance criterion; shown in the terminal summary."""

    def log(criterion: str, status: str, detail: str) -> None:
        line = f"[{status}] {criterion}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)

    return log


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
