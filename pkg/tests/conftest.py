import pytest

from splitlab.synth import ensure_dataset


@pytest.fixture(scope="session")
def small_data_dir(tmp_path_factory):
    """Small stand-in MNIST and Fashion-MNIST in the standard IDX layout."""
    root = tmp_path_factory.mktemp("data")
    ensure_dataset("mnist", root, n_train=2000, n_test=300, seed=0)
    ensure_dataset("fashion-mnist", root, n_train=2000, n_test=300, seed=0)
    return root


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES):
            terminalreporter.write_line(line)
