import os

import numpy as np
import pytest

from liwn import data, kernels

CIFAR10_DIR = os.environ.get("LIWN_CIFAR10_DIR", "")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    old = kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(old)


def write_fake_cifar(directory, kind="cifar10", per_file=10000, seed=0):
    """Random records in the CIFAR binary layout, labels balanced per file."""
    rng = np.random.default_rng(seed)
    os.makedirs(directory, exist_ok=True)
    if kind == "cifar10":
        names = data.CIFAR10_TRAIN + data.CIFAR10_TEST
        classes, label_bytes = 10, 1
        sizes = [per_file] * 6
    else:
        names = data.CIFAR100_TRAIN + data.CIFAR100_TEST
        classes, label_bytes = 100, 2
        sizes = [5 * per_file, per_file]
    for name, n in zip(names, sizes):
        fine = rng.permutation(np.arange(n) % classes).astype(np.uint8)
        labels = fine[:, None] if label_bytes == 1 else np.stack([fine // 5, fine], 1)
        pixels = rng.integers(0, 256, size=(n, 3, 32, 32), dtype=np.uint8)
        with open(os.path.join(directory, name), "wb") as fh:
            fh.write(data.serialize_records(labels, pixels))
    return directory


@pytest.fixture(scope="session")
def fake_cifar10(tmp_path_factory):
    return write_fake_cifar(str(tmp_path_factory.mktemp("cifar10")), "cifar10")


@pytest.fixture(scope="session")
def fake_cifar100(tmp_path_factory):
    return write_fake_cifar(str(tmp_path_factory.mktemp("cifar100")), "cifar100")


RUN_SLOW = os.environ.get("LIWN_RUN_SLOW", "") == "1"
_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def record(request):
    """Log one acceptance line; the lines are repeated in the terminal summary."""
    lines = request.config.stash[_ACCEPTANCE]

    def log(status, criterion, detail):
        line = f"{status} criterion {criterion}: {detail}"
        lines.append(line)
        print(line)

    return log


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
