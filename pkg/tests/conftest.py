import numpy as np
import pytest

from enfthin.core import Group, NerveSample, NerveTree, Point, Window


@pytest.fixture
def unit():
    return Window(0.0, 0.0, 1.0, 1.0)


def make_sample(bases, ends_per_tree=None, window=None, sample_id="s1", subject_id="p1",
                group=Group.HEALTHY):
    window = window or Window()
    ends_per_tree = ends_per_tree or [[] for _ in bases]
    trees = [
        NerveTree(k, Point(*b), tuple(Point(*e) for e in ends))
        for k, (b, ends) in enumerate(zip(bases, ends_per_tree))
    ]
    return NerveSample(sample_id, subject_id, group, tuple(trees), window)


@pytest.fixture
def small_sample():
    bases = [(50.0, 50.0), (60.0, 50.0), (200.0, 300.0), (100.0, 400.0)]
    ends = [[(55.0, 60.0), (45.0, 40.0)], [(70.0, 52.0)], [], [(110.0, 410.0), (90.0, 405.0), (100.0, 420.0)]]
    return make_sample(bases, ends)


def random_sample(gen, n_trees, mean_ends=3.0, window=None, **kw):
    window = window or Window()
    bases = np.column_stack([gen.uniform(window.xmin, window.xmax, n_trees),
                             gen.uniform(window.ymin, window.ymax, n_trees)])
    ends = []
    for b in bases:
        k = gen.poisson(mean_ends)
        e = b + gen.normal(0, 10, (k, 2))
        e[:, 0] = np.clip(e[:, 0], window.xmin, window.xmax)
        e[:, 1] = np.clip(e[:, 1], window.ymin, window.ymax)
        ends.append([tuple(p) for p in e])
    return make_sample([tuple(b) for b in bases], ends, window, **kw)


ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record():
    """Store a criterion's outcome for the end-of-run summary, then assert it."""

    def _record(number, ok, detail):
        ACCEPTANCE_RESULTS[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
