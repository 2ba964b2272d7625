import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_tree_model
from resbp.analysis import (BatchOperator, FixedPointEstimate, NoFixedPointError, estimate_alpha, find_fixed_point,
                            random_messages, report_csv, residual_progress_bound, solve_rates, contraction_analysis)
from resbp.bench import GridSpec, gen_ising_grid
from resbp.model import build_graph, four_cycle_model
from resbp.oracle import brute_force_marginals
from resbp.propagation import MessageState, compute_beliefs, global_distance, max_residual


@pytest.fixture(scope="module")
def cycle_fp():
    card, factors = four_cycle_model()
    g = build_graph(factors, card, "pairwise")
    return g, find_fixed_point(g)


def secant_oracle(g, fp, m):
    """sup over a dense grid of |f(v) - z_m|_inf / |v - z_i|_inf for a binary single-input message.

    Evaluates the message straight from the original pairwise table, independent of the kernels.
    """
    card, factors = four_cycle_model()
    e = g.edges[m]
    (i,) = g.inputs(m)
    f = factors[g.factor_assignment.index(e.source)]
    t = f.shaped(card)
    x_out, x_in = e.sepset[0], g.edges[i].sepset[0]
    if f.scope.index(x_in) == 1:
        t = t.T  # rows: input variable, columns: output variable
    z_in, z_out = fp.state[i], fp.state[m]
    p = np.linspace(0, 1, 200001)
    p = p[np.abs(p - z_in[0]) >= 1e-6]
    out = p[:, None] * t[0] + (1 - p)[:, None] * t[1]
    out0 = out[:, 0] / out.sum(axis=1)
    return float(np.max(np.abs(out0 - z_out[0]) / np.abs(p - z_in[0])))


def test_fixed_point_certified(cycle_fp):
    g, fp = cycle_fp
    assert fp.residual <= 1e-10
    assert max_residual(g, fp.state, gamma=0.0) <= 1e-10


def test_fixed_point_unique_from_random_starts(cycle_fp, rng):
    g, fp = cycle_fp
    for _ in range(10):
        other = find_fixed_point(g, init=MessageState.random(g, rng))
        assert global_distance(fp.state, other.state) <= 1e-8


def test_tree_fixed_point_is_exact(rng):
    card, factors = random_tree_model(rng, 10)
    g = build_graph(factors, card)
    fp = find_fixed_point(g)
    ex = brute_force_marginals(card, factors)
    for p, q in zip(compute_beliefs(g, fp.state).variables, ex.marginals):
        assert np.allclose(p, q, atol=1e-9)


def test_no_fixed_point_within_budget():
    card, factors = gen_ising_grid(GridSpec(6, 11.0, 1))
    with pytest.raises(NoFixedPointError):
        find_fixed_point(build_graph(factors, card), max_updates=200)


def test_certificate_enforced(cycle_fp):
    g, fp = cycle_fp
    with pytest.raises(NoFixedPointError):
        FixedPointEstimate(MessageState.uniform(g), 1e-3)


def test_alpha_structure(cycle_fp):
    g, fp = cycle_fp
    alpha, used = estimate_alpha(g, fp, 2000, seed=1)
    assert used > 0
    for m in range(g.n_edges):
        for i in range(g.n_edges):
            if i not in g.inputs(m):
                assert alpha[m, i] == 0.0
            else:
                assert alpha[m, i] > 0.0


def test_tree_leaf_rows_are_zero(rng):
    card, factors = random_tree_model(rng, 6, unary=False)
    g = build_graph(factors, card)
    fp = find_fixed_point(g)
    alpha, _ = estimate_alpha(g, fp, 500, seed=2)
    for m in range(g.n_edges):
        if not g.inputs(m):
            assert not alpha[m].any()


def test_alpha_matches_secant_oracle(cycle_fp):
    g, fp = cycle_fp
    alpha, _ = estimate_alpha(g, fp, 100_000, seed=3)
    for m in range(g.n_edges):
        (i,) = g.inputs(m)
        want = secant_oracle(g, fp, m)
        assert alpha[m, i] <= want + 1e-3
        assert alpha[m, i] >= want - 2e-3
    # the reference potentials give a linear map with slope exactly 1/3 on two messages
    assert alpha.max() == pytest.approx(1 / 3, abs=1e-4)


def test_joint_mode(cycle_fp):
    g, fp = cycle_fp
    alpha, used = estimate_alpha(g, fp, 20_000, seed=4, mode="joint")
    assert used == 20_000
    single, _ = estimate_alpha(g, fp, 20_000, seed=4)
    assert np.array_equal(alpha > 0, single > 0)
    # fixed-point error over a near-guard denominator can add a little
    assert alpha.max() <= 1 / 3 + 1e-3
    with pytest.raises(ValueError):
        estimate_alpha(g, fp, 10, mode="nope")


def test_alpha_is_deterministic(cycle_fp):
    g, fp = cycle_fp
    a, _ = estimate_alpha(g, fp, 12_345, seed=7)
    b, _ = estimate_alpha(g, fp, 12_345, seed=7)
    c, _ = estimate_alpha(g, fp, 12_345, seed=8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_solve_rates_constant_cycle():
    a = 0.6
    alpha = np.zeros((4, 4))
    for m in range(4):
        alpha[m, (m - 1) % 4] = a
    rates = solve_rates(alpha, [0, 1, 2, 3])
    assert rates.rho_s == a
    assert rates.rho_a <= a
    # message 0 reads message 3, which comes later in the order, so it keeps the raw factor
    assert rates.rho_m[0] == a
    assert rates.rho_m[3] == pytest.approx(a ** 4)


def test_solve_rates_zero():
    r = solve_rates(np.zeros((5, 5)), range(5))
    assert r.rho_a == 0 and r.rho_s == 0


def test_solve_rates_is_monotone(rng):
    alpha = rng.uniform(0, 0.9, (12, 12)) * (rng.random((12, 12)) < 0.3)
    trace = []
    solve_rates(alpha, rng.permutation(12), trace)
    for before, after in zip(trace, trace[1:]):
        assert np.all(after <= before)


def test_solve_rates_errors():
    with pytest.raises(ValueError):
        solve_rates(np.zeros((2, 3)), [0, 1])
    with pytest.raises(ValueError):
        solve_rates(np.zeros((2, 2)), [0, 0])
    with pytest.warns(RuntimeWarning):
        solve_rates(np.array([[0, 1.5], [0.2, 0]]), [0, 1])


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 10), st.integers(0, 2**32 - 1))
def test_rho_a_never_exceeds_rho_s(n, seed):
    rng = np.random.default_rng(seed)
    alpha = rng.uniform(0, 0.999, (n, n)) * (rng.random((n, n)) < 0.5)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        r = solve_rates(alpha, rng.permutation(n))
    assert r.rho_a <= r.rho_s


def test_rates_on_four_cycle(cycle_fp):
    g, fp = cycle_fp
    alpha, _ = estimate_alpha(g, fp, 20_000, seed=5)
    orders = [np.random.default_rng(k).permutation(8) for k in range(100)]
    ra = [solve_rates(alpha, o).rho_a for o in orders]
    rho_s = alpha.max()
    assert all(r <= rho_s for r in ra)
    assert np.mean(ra) < rho_s


def test_progress_bound_examples():
    assert residual_progress_bound(0.0, 0.7, 0.3) == pytest.approx(0.4)
    assert residual_progress_bound(0.5, 0.7, 0.0) == 0.7
    assert residual_progress_bound(0.0, 0.1, 0.5) == 0.0
    with pytest.raises(ValueError):
        residual_progress_bound(1.0, 0.1, 0.1)
    with pytest.raises(ValueError):
        residual_progress_bound(0.5, -0.1, 0.1)


def test_progress_bound_per_message(cycle_fp):
    g, fp = cycle_fp
    alpha, _ = estimate_alpha(g, fp, 50_000, seed=6)
    op = BatchOperator(g)
    v = random_messages(g, np.random.default_rng(0), 1000)
    z = fp.state.values[None, :]
    dist = op.distances(v, z).max(axis=1)
    fv = op.synchronous(v)
    for m, slot in enumerate(op.slots):
        after = np.abs(fv[:, slot] - z[:, slot]).max(axis=1)
        res = np.abs(fv[:, slot] - v[:, slot]).max(axis=1)
        bound = [residual_progress_bound(alpha[m].max(), d, r) for d, r in zip(dist, res)]
        assert np.all(after <= np.array(bound) + 1e-6)


def test_contraction_audit(cycle_fp):
    g, fp = cycle_fp
    alpha, _ = estimate_alpha(g, fp, 50_000, seed=9)
    op = BatchOperator(g)
    v = random_messages(g, np.random.default_rng(1), 10_000)
    z = fp.state.values[None, :]
    before = op.distances(v, z).max(axis=1)
    after = op.distances(op.synchronous(v), z).max(axis=1)
    assert np.all(after <= alpha.max() * before + 1e-9)


def test_report_csv(cycle_fp):
    g, _ = cycle_fp
    fp, est, per = contraction_analysis(g, 2000, 0, 5)
    text = report_csv(est, per)
    lines = text.splitlines()
    assert lines[0] == "kind,m,i,value"
    assert sum(l.startswith("alpha,") for l in lines) == 8
    assert sum(l.startswith("rho_m,") for l in lines) == 8
    assert sum(l.startswith("rho_a_order,") for l in lines) == 5
    assert any(l.startswith("rho_s,") for l in lines)
