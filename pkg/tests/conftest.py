import pytest

from mufia.classifier import NetworkSpec, evaluate, save_weights, train
from mufia.imageio import generate_synthetic_dataset

_VERDICTS = []


@pytest.fixture(scope="session")
def synthetic_split():
    """The reference dataset (k=5, 200 per class, 32px, seed 0) as ``(train, test)``."""
    return generate_synthetic_dataset(5, 200, 32, seed=0).split()


@pytest.fixture(scope="session")
def trained_model(synthetic_split, tmp_path_factory):
    """``(weights, path, clean test accuracy)`` for the default 30-epoch victim network."""
    train_set, test_set = synthetic_split
    weights = train(NetworkSpec(32, 5), train_set, epochs=30, lr=0.01, seed=0)
    path = tmp_path_factory.mktemp("model") / "victim.bin"
    save_weights(weights, path)
    return weights, path, evaluate(weights, test_set)


@pytest.fixture
def verdict(capsys):
    """Print and remember one PASS/FAIL line for an acceptance criterion."""

    def emit(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _VERDICTS.append((number, line))
        with capsys.disabled():
            print("\n" + line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
