import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


def pytest_addoption(parser):
    parser.addoption(
        "--run-extended",
        action="store_true",
        default=False,
        help="run tests marked 'extended' (long CIFAR-scale experiments)",
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-extended"):
        return
    skip = pytest.mark.skip(reason="extended test; enable with --run-extended")
    for item in items:
        if "extended" in item.keywords:
            item.add_marker(skip)
