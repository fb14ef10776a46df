import itertools
import math

import numpy as np
import pytest


def all_configs(n):
    return np.array(list(itertools.product((-1, 1), repeat=n)), dtype=np.int64)


def enumerate_cw(beta, h, p, n):
    """Brute force over all 2^n spin vectors.

    Returns (log Z with the 2^-n normalisation, pmf over k = number of +1 spins).
    """
    X = all_configs(n)
    xbar = X.sum(axis=1) / n
    logw = n * (beta * xbar**p + h * xbar)
    top = logw.max()
    w = np.exp(logw - top)
    logz = top + math.log(w.sum()) - n * math.log(2)
    k = (X > 0).sum(axis=1)
    pmf = np.bincount(k, weights=w / w.sum(), minlength=n + 1)
    return logz, pmf


def ordered_tuple_hamiltonian(edges, p, x):
    """Sum over ordered distinct index tuples of J * prod x."""
    total = 0.0
    for e, c in edges.items():
        for perm in itertools.permutations(e):
            total += c * np.prod([x[i] for i in perm])
    return total


def ordered_tuple_field(edges, p, x, i):
    """m_i as a sum over ordered (i_2, ..., i_p) with i_1 = i."""
    total = 0.0
    for e, c in edges.items():
        if i not in e:
            continue
        rest = [j for j in e if j != i]
        for perm in itertools.permutations(rest):
            total += c * np.prod([x[j] for j in perm])
    return total


def random_edges(rng, n, p, count):
    combos = list(itertools.combinations(range(n), p))
    pick = rng.choice(len(combos), size=min(count, len(combos)), replace=False)
    return {combos[k]: float(rng.normal()) for k in pick}


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
