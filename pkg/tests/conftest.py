import io

import numpy as np
import pytest

from mrmn.data import InteractionLog, RawInteraction, leave_one_out_split, parse_interactions
from mrmn.params import HyperParams, init_parameters


def make_log(rows):
    """rows: iterable of (user, item, type, timestamp) tuples."""
    return InteractionLog.from_records(RawInteraction(u, i, t, int(ts)) for u, i, t, ts in rows)


def text_log(text):
    return parse_interactions(io.StringIO(text))


@pytest.fixture
def toy_log():
    # 5 users, 12 items, 2 types, enough history for a split
    rng = np.random.default_rng(7)
    rows = []
    for u in range(5):
        items = rng.choice(12, size=6, replace=False)
        for ts, item in enumerate(items):
            ftype = "buy" if ts % 3 == 0 else "view"
            rows.append((f"u{u}", f"i{item}", ftype, ts))
    return make_log(rows)


@pytest.fixture
def toy_dataset(toy_log):
    return leave_one_out_split(toy_log)


@pytest.fixture
def small_hp():
    return HyperParams(dim=4, slots=3, margins={"buy": 0.2, "view": 0.1}, learning_rate=0.05, seed=3)


@pytest.fixture
def small_params(small_hp):
    return init_parameters(small_hp, 5, 12, ["buy", "view"])


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
