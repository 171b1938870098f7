import time

import numpy as np
import pytest

from detcal.dataset_io import Detection, GroundTruthObject, ImageInfo
from detcal.geometry import BoundingBox


def det(cx, cy, w, h, conf, image_id=1, category=1):
    return Detection(image_id, category, conf, BoundingBox(cx, cy, w, h))


def gt(cx, cy, w, h, image_id=1, category=1, crowd=False):
    return GroundTruthObject(image_id, category, BoundingBox(cx, cy, w, h), crowd)


def random_boxes(rng, n, extent=100.0, min_size=2.0, max_size=30.0):
    centers = rng.uniform(max_size, extent - max_size, size=(n, 2))
    sizes = rng.uniform(min_size, max_size, size=(n, 2))
    return np.hstack([centers, sizes])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def image():
    return ImageInfo(1, 100, 100)


# acceptance criteria bookkeeping: one line per criterion in the terminal summary
_ACCEPTANCE = pytest.StashKey()


class _Criterion:
    def __init__(self, results, number, title, limit):
        self.results, self.number, self.title, self.limit = results, number, title, limit
        self.ok = False
        self.detail = ""

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        fast = elapsed < self.limit
        passed = exc_type is None and self.ok and fast
        detail = self.detail if exc_type is None else f"{exc_type.__name__}: {exc}"
        self.results[self.number] = (
            f"[{'PASS' if passed else 'FAIL'}] {self.number:>2}. {self.title}: {detail} "
            f"({elapsed:.2f} s, limit {self.limit:g} s)"
        )
        if exc_type is None:
            assert self.ok, f"criterion {self.number} failed: {detail}"
            assert fast, f"criterion {self.number} took {elapsed:.2f} s (limit {self.limit:g} s)"
        return False


@pytest.fixture
def acceptance(request):
    results = request.config.stash.setdefault(_ACCEPTANCE, {})
    return lambda number, title, limit: _Criterion(results, number, title, limit)


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_ACCEPTANCE, None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
