import numpy as np
import pytest

from conftest import random_loopy_model, random_tree_model
from resbp.bench import GridSpec, gen_ising_grid
from resbp.errors import DegenerateMessageError
from resbp.model import Factor, build_graph
from resbp.oracle import brute_force_marginals
from resbp.propagation import (FLOOR, MessageState, Variant, compute_beliefs, compute_message, damp,
                               global_distance, make_engine, max_residual, message_distance, normalize,
                               residual, synchronous_update)
from resbp.schedulers import RunConfig, run


def test_first_message_on_four_cycle(four_cycle):
    # cluster 0 = (X0, X1) sends over X1; its only other input (from cluster 3, over X0) is uniform:
    # m(x1) ~ sum_x0 phi(x0, x1) * 0.5 -> (0.25 + 0.5, 0.25 + 0.25) / 1.25
    m = four_cycle.edge_index[(0, 1)]
    assert four_cycle.edges[m].sepset == (1,)
    state = MessageState.uniform(four_cycle)
    assert compute_message(four_cycle, state, m).tolist() == pytest.approx([0.6, 0.4], abs=1e-15)
    eng = make_engine(four_cycle, state, gamma=0.0)
    eng.update(m)
    assert eng.values[four_cycle.layout.msg_off[m]:][:2].tolist() == pytest.approx([0.6, 0.4], abs=1e-15)
    assert np.array_equal(state.values, MessageState.uniform(four_cycle).values)  # not mutated


def test_uniform_potential_gives_uniform_message():
    g = build_graph([Factor((0, 1), np.ones(6))], (2, 3))
    state = MessageState.uniform(g)
    for m in range(g.n_edges):
        t = compute_message(g, state, m)
        assert np.allclose(t, 1.0 / t.size)


def test_damp_examples():
    old = np.array([0.5, 0.5])
    raw = np.array([0.7, 0.3])
    assert damp(old, raw, 0.0).tolist() == raw.tolist()
    assert damp(old, raw, 1.0).tolist() == old.tolist()
    eps = 1e-15
    assert damp(old, np.array([1 - eps, eps]), 0.2) == pytest.approx([0.9, 0.1], abs=1e-12)
    with pytest.raises(ValueError):
        damp(old, raw, 1.5)


def test_distances(four_cycle, rng):
    assert message_distance([0.5, 0.5], [0.6, 0.4]) == pytest.approx(0.1)
    a, b = rng.dirichlet([1, 1, 1]), rng.dirichlet([1, 1, 1])
    assert message_distance(a, b) == message_distance(b, a)
    s = MessageState.random(four_cycle, rng)
    t = s.copy()
    assert global_distance(s, t) == 0
    t[3] = [0.5, 0.5]
    assert global_distance(s, t) == pytest.approx(message_distance(s[3], [0.5, 0.5]))
    u = MessageState.random(four_cycle, rng)
    assert all(global_distance(s, u) >= message_distance(s[m], u[m]) for m in range(8))


def test_normalize_floors_tiny_entries():
    t, n = normalize(np.array([1.0, 1e-320, 3.0]))
    assert n == 1
    assert t[1] >= FLOOR and t.sum() == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(DegenerateMessageError):
        normalize(np.zeros(2))


def test_residual_scales_with_damping(rng):
    card, factors = gen_ising_grid(GridSpec(3, 4.0, 2))
    g = build_graph(factors, card)
    s = MessageState.random(g, rng)
    for m in range(g.n_edges):
        r0 = residual(g, s, m, gamma=0.0)
        assert residual(g, s, m, gamma=1.0) == 0.0
        assert residual(g, s, m, gamma=0.3) == pytest.approx(0.7 * r0, rel=1e-9, abs=1e-15)


def test_engine_matches_reference(rng):
    card, factors = random_loopy_model(rng, 6, 8, triples=1)
    g = build_graph(factors, card)
    s = MessageState.random(g, rng)
    for variant in Variant:
        eng = make_engine(g, s, variant, gamma=0.25)
        ref = np.array([residual(g, s, m, variant, 0.25) for m in range(g.n_edges)])
        assert np.allclose(eng.residuals(), ref, atol=1e-15)
        for m in range(g.n_edges):
            assert np.allclose(eng.message(m), compute_message(g, s, m, variant), atol=1e-15)


def test_synchronous_update_is_history_free(four_cycle, rng):
    s = MessageState.random(four_cycle, rng)
    once = synchronous_update(four_cycle, s)
    again = synchronous_update(four_cycle, s)
    assert np.array_equal(once.values, again.values)
    for m in range(8):
        assert np.array_equal(once[m], compute_message(four_cycle, s, m))


def test_tree_beliefs_are_exact(rng):
    for _ in range(5):
        card, factors = random_tree_model(rng, 8, card=None)
        g = build_graph(factors, card)
        rec, state = run(g, RunConfig("rbp", gamma=0.0, tol=1e-13))
        assert rec.converged
        b = compute_beliefs(g, state)
        ex = brute_force_marginals(card, factors)
        for p, q in zip(b.variables, ex.marginals):
            assert np.allclose(p, q, atol=1e-9)
        for t in b.clusters + b.variables:
            assert t.sum() == pytest.approx(1.0, abs=1e-12)


def test_beliefs_calibrated_at_convergence(rng):
    card, factors = random_loopy_model(rng, 6, 7, max_card=2)
    g = build_graph(factors, card)
    rec, state = run(g, RunConfig("rbp", tol=1e-10))
    assert rec.converged
    assert max_residual(g, state, gamma=0.0) <= 1e-10 / 0.8 + 1e-15
    b = compute_beliefs(g, state)
    for e in g.edges:
        margs = []
        for c in (e.source, e.target):
            scope = g.clusters[c].scope
            axes = tuple(i for i, v in enumerate(scope) if v not in e.sepset)
            margs.append(b.clusters[c].sum(axis=axes).ravel())
        assert np.allclose(*margs, atol=1e-6)


def test_all_uniform_model_gives_uniform_beliefs():
    g = build_graph([Factor((0, 1), np.ones(4)), Factor((1, 2), np.ones(4)), Factor((2, 0), np.ones(4))], (2, 2, 2))
    b = compute_beliefs(g, MessageState.uniform(g))
    assert all(np.allclose(v, 0.5) for v in b.variables)


def test_max_product_tree_finds_map(rng):
    checked = 0
    while checked < 5:
        card, factors = random_tree_model(rng, 10)
        ex = brute_force_marginals(card, factors)
        if not ex.map_unique:
            continue
        g = build_graph(factors, card)
        rec, state = run(g, RunConfig("rbp", "max", gamma=0.0, tol=1e-12))
        assert rec.converged
        b = compute_beliefs(g, state, "max")
        assert tuple(int(np.argmax(v)) for v in b.variables) == ex.map_assignment
        checked += 1


def test_state_checks(four_cycle):
    s = MessageState.uniform(four_cycle)
    s.check()
    s[0] = [0.9, 0.2]
    with pytest.raises(ValueError, match="normalized"):
        s.check()
    with pytest.raises(ValueError):
        MessageState(four_cycle, np.ones(3))
