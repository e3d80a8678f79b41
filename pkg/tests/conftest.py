import numpy as np
import pytest

from fovdistill.nets import LocationConfig, OrientationConfig
from fovdistill.synthworld import Split

TINY_LOC = LocationConfig(sat_size=16, pano_rows=8, pano_cols=32, bev_size=8, bev_extent=8.0,
                          channels=(2, 3, 3))
TINY_ORIENT = OrientationConfig(sat_size=16, pano_rows=8, pano_cols=32, bev_size=8, bev_extent=8.0,
                                channels=(2, 3, 3), hidden=5, n_classes=7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_split(n=8, seed=0, name="tiny", res=0.5) -> Split:
    r = np.random.default_rng(seed)
    theta = r.uniform(-180, 180, n)
    return Split(name, r.random((n, 16, 16, 3)), r.random((n, 8, 32, 3)), r.uniform(4, 12, (n, 2)),
                 theta, theta + r.uniform(-3, 3, n), res)


@pytest.fixture
def tiny_data():
    return {s: tiny_split(8, i, s) for i, s in enumerate(("train", "val", "test_same", "test_cross"))}


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    def record(number: int, title: str, passed: bool, detail: str) -> None:
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
