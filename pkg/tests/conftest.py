import itertools

import numpy as np
import pytest

from coindie.evaluation import synthetic_pairs


def linear_scan(points, q):
    """Exhaustive nearest neighbor with the lowest-index tie-break."""
    d = points - q
    d2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
    k = int(np.flatnonzero(d2 == d2.min())[0])
    return k, float(d2[k])


def closure_components(A):
    """Components by transitive closure of the adjacency (Warshall)."""
    n = len(A)
    R = A.copy() | np.eye(n, dtype=bool)
    for k in range(n):
        R = R | (R[:, [k]] & R[[k], :])
    seen, comps = set(), []
    for i in range(n):
        if i not in seen:
            comp = sorted(np.flatnonzero(R[i]).tolist())
            seen.update(comp)
            comps.append(comp)
    return comps


def pair_count_ari(x, y):
    """Adjusted Rand index by enumerating every pair of items."""
    a = b = c = d = 0
    for i, j in itertools.combinations(range(len(x)), 2):
        same_x, same_y = x[i] == x[j], y[i] == y[j]
        a += same_x and same_y
        b += same_x and not same_y
        c += same_y and not same_x
        d += not same_x and not same_y
    den = (a + b) * (b + d) + (a + c) * (c + d)
    return None if den == 0 else 2.0 * (a * d - b * c) / den


def set_partitions(n):
    # restricted growth strings enumerate every set partition once
    def rec(prefix, m):
        if len(prefix) == n:
            yield list(prefix)
            return
        for k in range(m + 2):
            yield from rec(prefix + [k], max(m, k))

    yield from rec([0], 0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def coin_pair():
    """One same-die pair at random poses, ~16k points each, with normals."""
    return synthetic_pairs(1, seed=5)[0]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
