import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from symot.core import CostSpec, CostTable, DiscreteMeasure, HamiltonianTable, Potential, SupportSet, build_cost_table
from symot.mmot_solver import (
    c_bar,
    c_legendre,
    dual_violation,
    duality_report,
    entropic_gap_bound,
    refine_potential,
    solve_entropic,
    solve_mk_sym,
    solve_standard_mm,
    symmetric_potential,
)
from symot.symmetrization import shift_table, symmetrize_cost, symmetrize_plan

from helpers import cloud, cost, random_family, uniform

instances = st.tuples(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 2), st.integers(2, 3))


def _vf_instance(seed, n, d, N):
    rng = np.random.default_rng(seed)
    S = cloud(rng, n, d)
    return cost("vector-field", S, N, random_family(rng, S, N)), uniform(S), rng


def test_quadratic_value_zero_with_diagonal_plan():
    S = cloud(np.random.default_rng(1), 4, 2)
    c = cost("quadratic", S, 3)
    value, plan = solve_mk_sym(c, uniform(S))
    assert abs(value) <= 1e-9
    diag = np.zeros_like(plan.mass)
    diag[(np.arange(4),) * 3] = 0.25
    np.testing.assert_allclose(plan.mass, diag, atol=1e-9)


def test_single_atom():
    S = SupportSet.from_points([[0.3, -0.2]])
    c = CostTable(np.full((1, 1, 1), -0.7))
    value, plan = solve_mk_sym(c, uniform(S))
    assert value == pytest.approx(-0.7, abs=1e-12)
    assert plan.mass.item() == 1.0
    rep = duality_report(c, uniform(S))
    assert rep.dk1 == pytest.approx(-0.7, abs=1e-12) and rep.dk2 == pytest.approx(-0.7, abs=1e-12)


def test_plakhov_two_atoms():
    S = SupportSet.from_points([0.0, np.pi])
    c = cost("plakhov", S, 2)
    value, plan = solve_mk_sym(c, uniform(S))
    # symmetric couplings on two atoms: [[a, 1/2 - a], [1/2 - a, a]], a in [0, 1/2]
    oracle = max(2 * a * -2.0 + (1 - 2 * a) * float(c.values[0, 1]) for a in np.linspace(0, 0.5, 101))
    assert value == pytest.approx(oracle, abs=1e-9)
    assert value == pytest.approx(0.0, abs=1e-9)
    np.testing.assert_allclose(plan.mass, [[0.0, 0.5], [0.5, 0.0]], atol=1e-9)


def test_standard_lp_inner_product_on_two_atoms():
    S = SupportSet.from_points([0.0, 1.0])
    c = CostTable(S.points @ S.points.T)
    mu = uniform(S)
    value, plan, pots = solve_standard_mm(c, [mu, mu])
    # vertices of the Birkhoff polytope for n = 2
    oracle = max(0.5 * sum(c.values[i, p[i]] for i in range(2)) for p in itertools.permutations(range(2)))
    assert value == pytest.approx(oracle, abs=1e-12) == 0.5
    np.testing.assert_allclose(plan.mass, [[0.5, 0.0], [0.0, 0.5]], atol=1e-9)


def test_standard_lp_zero_cost():
    S = cloud(np.random.default_rng(0), 3, 1)
    mu = uniform(S)
    value, _, pots = solve_standard_mm(CostTable(np.zeros((3, 3, 3))), [mu] * 3)
    assert value == pytest.approx(0.0, abs=1e-12)
    assert sum(float(mu.weights @ p.values) for p in pots) == pytest.approx(0.0, abs=1e-9)


def test_standard_lp_recovers_quadratic_diagonal():
    S = cloud(np.random.default_rng(5), 5, 2)
    mu = uniform(S)
    value, plan, _ = solve_standard_mm(cost("quadratic", S, 2), [mu, mu])
    assert abs(value) <= 1e-9
    np.testing.assert_allclose(plan.mass, np.eye(5) / 5, atol=1e-9)


@given(instances)
def test_orbit_and_symmetrized_modes_agree(args):
    c, mu, _ = _vf_instance(*args)
    v1, p1 = solve_mk_sym(c, mu, "orbit")
    v2, p2 = solve_mk_sym(c, mu, "symmetrized")
    assert v1 == pytest.approx(v2, abs=1e-8)
    for p in (p1, p2):
        np.testing.assert_allclose(shift_table(p.mass, 1), p.mass, atol=1e-12)
        np.testing.assert_allclose(p.marginal(0), mu.weights, atol=1e-9)


@given(instances)
def test_strong_duality(args):
    c, mu, _ = _vf_instance(*args)
    rep = duality_report(c, mu)
    assert rep.agrees(1e-7), rep.gaps
    assert rep.mk_standard == pytest.approx(rep.mk_sym, abs=1e-8)


@given(instances, st.integers(0, 10_000))
def test_weak_duality_on_random_feasible_pairs(args, seed2):
    c, mu, rng = _vf_instance(*args)
    n, N = c.n, c.N
    csym = symmetrize_cost(c)
    u = rng.normal(size=n)
    u = u + max(0.0, dual_violation(u, csym)) / N
    # mixtures of (x, s_1 x, ..., s_{N-1} x) for permutations s_i have uniform marginals
    prng = np.random.default_rng(seed2)
    mass = np.zeros((n,) * N)
    for w in prng.dirichlet(np.ones(3)):
        perms = [np.arange(n)] + [prng.permutation(n) for _ in range(N - 1)]
        np.add.at(mass, tuple(perms), w / n)
    from symot.core import Coupling

    pi = symmetrize_plan(Coupling(mass))
    assert float(np.sum(csym.values * pi.mass)) <= N * float(mu.weights @ u) + 1e-12


@given(instances)
def test_complementary_slackness(args):
    c, mu, _ = _vf_instance(*args)
    rep = duality_report(c, mu)
    csym = symmetrize_cost(c).values
    u = rep.potential.values
    N = c.N
    total = sum(np.reshape(u, [c.n if k == j else 1 for k in range(N)]) for j in range(N))
    slack = total - csym
    assert np.all(slack[rep.plan.mass > 1e-9] <= 1e-7)


def test_refine_potential_fixed_point_and_monotone():
    S = SupportSet.from_points([0.0, 1.0])
    c = cost("quadratic", S, 2)
    csym = symmetrize_cost(c)
    _, u = symmetric_potential(c, uniform(S))
    out = refine_potential(u, csym)
    assert np.all(out.values <= u.values + 1e-15)
    assert np.abs(c_bar(out.values, csym) - out.values).max() <= 1e-8
    again = refine_potential(out, csym)
    np.testing.assert_allclose(again.values, out.values, atol=1e-10)


@given(instances)
def test_refine_potential_decreases_objective(args):
    c, mu, rng = _vf_instance(*args)
    csym = symmetrize_cost(c)
    u = rng.normal(size=c.n)
    u = u + max(0.0, dual_violation(u, csym)) / c.N + 1e-9
    out = refine_potential(Potential(u), csym)
    assert np.all(out.values <= u + 1e-15)
    assert dual_violation(out.values, csym) <= 1e-9


def test_refine_potential_rejects_infeasible():
    c = CostTable(np.ones((2, 2)))
    with pytest.raises(ValueError):
        refine_potential(Potential(np.zeros(2)), c)


def test_c_legendre_examples():
    S = cloud(np.random.default_rng(2), 4, 2)
    c = cost("quadratic", S, 3)
    zero = HamiltonianTable(np.zeros((4,) * 3))
    np.testing.assert_allclose(c_legendre(zero, c).values, 0.0, atol=1e-15)
    const = HamiltonianTable(np.full((4,) * 3, 0.75))
    np.testing.assert_allclose(c_legendre(const, c).values, -0.75, atol=1e-15)
    rep = duality_report(c, uniform(S))
    np.testing.assert_allclose(c_legendre(rep.hamiltonian, c).values, 3 * rep.potential.values, atol=1e-9)


@given(instances)
def test_legendre_of_h_infinity_is_n_u0(args):
    c, mu, _ = _vf_instance(*args)
    rep = duality_report(c, mu)
    np.testing.assert_allclose(c_legendre(rep.hamiltonian, c).values, c.N * rep.potential.values, atol=1e-8)


def test_c_transform_undefined_at_atom():
    S = SupportSet.from_points([0.0])
    c = cost("coulomb", S, 2)
    with pytest.raises(ValueError, match="c-transform undefined at atom"):
        c_legendre(HamiltonianTable(np.zeros((1, 1))), c)


def test_duality_report_examples():
    S = cloud(np.random.default_rng(4), 4, 1)
    rep = duality_report(cost("quadratic", S, 2), uniform(S))
    for v in (rep.mk_sym, rep.dk1, rep.dk2):
        assert abs(v) <= 1e-9
    S = cloud(np.random.default_rng(6), 4, 2)
    rng = np.random.default_rng(7)
    rep = duality_report(cost("vector-field", S, 2, random_family(rng, S, 2)), uniform(S))
    assert rep.agrees(1e-7)


def test_entropic_quadratic_close_to_zero():
    S = cloud(np.random.default_rng(8), 4, 1)
    value, pi, _ = solve_entropic(cost("quadratic", S, 2), uniform(S), 1e-3)
    assert abs(value) <= 5e-2
    np.testing.assert_allclose(pi.marginal(0), 0.25, atol=1e-6)


def test_entropic_large_epsilon_gives_product_measure():
    S = cloud(np.random.default_rng(9), 3, 1)
    mu = uniform(S)
    _, pi, _ = solve_entropic(cost("quadratic", S, 3), mu, 1e6)
    np.testing.assert_allclose(pi.mass, np.full((3, 3, 3), 1 / 27), atol=1e-6)


def test_entropic_single_atom_exact():
    S = SupportSet.from_points([0.2])
    c = CostTable(np.full((1, 1), 0.4))
    for eps in (1e-3, 1.0, 10.0):
        value, _, _ = solve_entropic(c, uniform(S), eps)
        assert value == pytest.approx(0.4, abs=1e-12)


@given(st.tuples(st.integers(0, 10_000), st.integers(2, 4), st.integers(1, 2), st.integers(2, 3)))
def test_entropic_value_within_bound(args):
    c, mu, _ = _vf_instance(*args)
    eps = 0.05
    value, pi, _ = solve_entropic(c, mu, eps)
    exact, _ = solve_mk_sym(c, mu)
    assert value <= exact + 1e-9
    assert exact - value <= entropic_gap_bound(eps, c.n, c.N) + 1e-9
    np.testing.assert_allclose(shift_table(pi.mass, 1), pi.mass, atol=1e-9)
