import numpy as np
import pytest

from resbp.model import Factor, build_graph, four_cycle_model


def random_tree_model(rng, n, card=2, unary=True):
    """Random tree over ``n`` variables: variable v>0 hangs off a random earlier variable."""
    cards = tuple(int(card) if np.isscalar(card) else int(rng.integers(2, 4)) for _ in range(n))
    factors = []
    for v in range(1, n):
        u = int(rng.integers(0, v))
        scope = (u, v) if rng.random() < 0.5 else (v, u)
        factors.append(Factor(scope, rng.uniform(0.05, 1.0, cards[u] * cards[v])))
    if unary:
        for v in range(n):
            factors.append(Factor((v,), rng.uniform(0.05, 1.0, cards[v])))
    return cards, factors


def random_loopy_model(rng, n, n_pairs, max_card=3, triples=0):
    cards = tuple(int(rng.integers(2, max_card + 1)) for _ in range(n))
    factors = [Factor((v,), rng.uniform(0.1, 1.0, cards[v])) for v in range(n)]
    seen = set()
    while len(seen) < n_pairs:
        a, b = (int(x) for x in rng.choice(n, 2, replace=False))
        if (min(a, b), max(a, b)) in seen:
            continue
        seen.add((min(a, b), max(a, b)))
        factors.append(Factor((a, b), rng.uniform(0.1, 1.0, cards[a] * cards[b])))
    for _ in range(triples):
        scope = tuple(int(x) for x in rng.choice(n, 3, replace=False))
        factors.append(Factor(scope, rng.uniform(0.1, 1.0, int(np.prod([cards[v] for v in scope])))))
    return cards, factors


@pytest.fixture
def four_cycle():
    card, factors = four_cycle_model()
    return build_graph(factors, card, "pairwise")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, filled by test_acceptance.py and printed at the end of the session
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
