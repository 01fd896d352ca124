import math

import numpy as np
import pytest

from poleloc.geometry import Point2
from poleloc.polemap import Pole, PoleMap

# filled by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_map(xy, frame="global", classes=None, width=0.3, descriptors=None, ids=None):
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    poles = []
    for i, (x, y) in enumerate(xy.tolist()):
        poles.append(
            Pole(
                i if ids is None else int(ids[i]),
                Point2(x, y),
                width,
                None if classes is None else int(classes[i]),
                None if descriptors is None else tuple(descriptors[i]),
            )
        )
    return PoleMap(poles, frame)


def random_xy(rng, n, extent=50.0, min_sep=2.0):
    pts = []
    while len(pts) < n:
        c = rng.uniform(0, extent, 2)
        if all(math.dist(c, p) >= min_sep for p in pts):
            pts.append(c)
    return np.array(pts).reshape(-1, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
