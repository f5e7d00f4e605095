import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from symot.core import (
    NEG_INF,
    CostSpec,
    CostTable,
    Coupling,
    DiscreteMeasure,
    GuardError,
    NInvolution,
    SupportSet,
    VectorFieldFamily,
    build_cost_table,
    cyclic_shift,
    eval_cost,
    pushforward_plan,
)

from helpers import cloud


def test_cyclic_shift_examples():
    assert cyclic_shift((1, 2, 3), 1) == (2, 3, 1)
    assert cyclic_shift((1, 2, 3), 3) == (1, 2, 3)
    assert cyclic_shift((5, 5), 1) == (5, 5)


@given(st.lists(st.integers(0, 9), min_size=1, max_size=6), st.integers(0, 5))
def test_cyclic_shift_n_fold_is_identity(t, k):
    out = tuple(t)
    for _ in range(len(t)):
        out = cyclic_shift(out, k)
    assert out == tuple(t)


def test_eval_cost_examples():
    assert eval_cost(CostSpec("quadratic", 3), [[0.3], [0.3], [0.3]]) == 0.0
    assert eval_cost(CostSpec("plakhov", 2), [0.0, 0.0]) == -2.0
    assert eval_cost(CostSpec("coulomb", 2), [0.0, 0.5]) == -2.0
    zero = VectorFieldFamily(np.zeros((2, 3, 1)))
    assert eval_cost(CostSpec("vector-field", 3, zero), [0.1, 0.4, -0.2], [0, 1, 2]) == 0.0


def test_eval_cost_rejects_bad_inputs():
    with pytest.raises(ValueError):
        eval_cost(CostSpec("plakhov", 3), [0.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        eval_cost(CostSpec("quadratic", 3), [0.0, 1.0])
    with pytest.raises(ValueError):
        CostSpec("vector-field", 3, VectorFieldFamily(np.zeros((1, 2, 1))))
    with pytest.raises(ValueError):
        CostSpec("quadratic", 1)


def test_build_cost_table_examples():
    S = SupportSet.from_points([0.0, 1.0])
    q = build_cost_table(CostSpec("quadratic", 2), S).values
    assert q.shape == (2, 2) and np.all(np.diagonal(q) == 0)
    c = build_cost_table(CostSpec("coulomb", 2), S).values
    assert np.all(np.diagonal(c) == NEG_INF)
    assert c[0, 1] == -1.0
    u = VectorFieldFamily(np.array([[[0.0], [1.0]]]))
    v = build_cost_table(CostSpec("vector-field", 2, u), S).values
    np.testing.assert_array_equal(v, [[0.0, 0.0], [0.0, 1.0]])


def test_table_guard():
    S = SupportSet.from_points(np.linspace(0, 1, 10))
    with pytest.raises(GuardError, match="table guard exceeded"):
        build_cost_table(CostSpec("quadratic", 4), S, cap=1000)


@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 2), st.integers(2, 3))
def test_table_matches_pointwise_evaluation(seed, n, d, N):
    rng = np.random.default_rng(seed)
    S = cloud(rng, n, d)
    fields = VectorFieldFamily(rng.normal(size=(N - 1, n, d)))
    for spec in (CostSpec("quadratic", N), CostSpec("coulomb", N), CostSpec("vector-field", N, fields)):
        table = build_cost_table(spec, S).values
        for t in itertools.product(range(n), repeat=N):
            assert table[t] == pytest.approx(eval_cost(spec, S.points[list(t)], t), rel=1e-12, abs=1e-12)


@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 2), st.integers(2, 4))
def test_quadratic_table_shift_invariant(seed, n, d, N):
    S = cloud(np.random.default_rng(seed), n, d)
    table = build_cost_table(CostSpec("quadratic", N), S).values
    for t in itertools.product(range(n), repeat=N):
        assert table[t] == pytest.approx(table[cyclic_shift(t)], rel=1e-12, abs=1e-12)


def test_support_validation():
    with pytest.raises(ValueError):
        SupportSet(np.array([[0.0], [0.0]]), 1.0)
    with pytest.raises(ValueError):
        SupportSet(np.array([[2.0]]), 1.0)
    with pytest.raises(ValueError):
        DiscreteMeasure(SupportSet.from_points([0.0, 1.0]), np.array([0.5, 0.6]))


def test_coupling_validation():
    with pytest.raises(ValueError):
        Coupling(np.array([[0.5, 0.6], [0.0, -0.1]]))
    with pytest.raises(ValueError):
        Coupling(np.array([[0.5, 0.0], [0.0, 0.0]]))
    pi = Coupling(np.array([[0.5, 0.0], [0.0, 0.5]]))
    c = CostTable(np.array([[NEG_INF, 1.0], [1.0, 2.0]]))
    assert pi.value(c) == NEG_INF


@given(st.permutations(list(range(6))), st.integers(1, 4))
def test_ninvolution_accepts_exactly_order_dividing_n(perm, N):
    p = np.array(perm)
    power = np.arange(6)
    for _ in range(N):
        power = p[power]
    closes = bool(np.array_equal(power, np.arange(6)))
    try:
        NInvolution(tuple(perm), N)
        accepted = True
    except ValueError:
        accepted = False
    assert accepted == closes


@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(2, 3))
def test_pushforward_is_shift_invariant_with_marginal_mu(seed, n, N):
    from symot.involution_search import enumerate_involutions

    mu = DiscreteMeasure.uniform(cloud(np.random.default_rng(seed), n, 1))
    for S in enumerate_involutions(n, N):
        pi = pushforward_plan(S, mu).mass
        for k in range(N):
            np.testing.assert_array_equal(pi.sum(axis=tuple(a for a in range(N) if a != k)), mu.weights)
        np.testing.assert_array_equal(pi, np.moveaxis(pi, 0, -1))


def test_orbit_table_and_cycle_notation():
    S = NInvolution((1, 2, 0, 3), 3)
    np.testing.assert_array_equal(S.orbit_table()[0], [0, 1, 2])
    assert S.cycle_notation() == "(0 1 2)"
    assert NInvolution.identity(3, 2).cycle_notation() == "()"
