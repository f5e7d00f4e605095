import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from symot.core import GuardError, NInvolution, SupportSet, VectorFieldFamily
from symot.involution_search import count_involutions
from symot.monotonicity import (
    check_jointly_n_monotone,
    check_n_cyclically_monotone,
    check_strict,
    monotone_flags,
    pairwise_certificate,
    polar_decompose,
    polarity_value,
    single_field_slot,
)

from helpers import cloud, quadratic_gradient_family, random_family, uniform


def _brute_polarity(family, mu):
    """Min over all permutations with S^N = I, filtered from the full symmetric group."""
    n, N = mu.support.n, family.N
    pts, u = mu.support.points, family.fields
    best = np.inf
    for p in itertools.permutations(range(n)):
        p = np.asarray(p)
        powers = [np.arange(n)]
        for _ in range(N):
            powers.append(p[powers[-1]])
        if not np.array_equal(powers[N], np.arange(n)):
            continue
        val = sum(np.sum(u[l] * (pts - pts[powers[l + 1]])) for l in range(N - 1)) / n
        best = min(best, val)
    return best


def test_cyclic_monotone_examples():
    S = cloud(np.random.default_rng(0), 5, 2)
    assert check_n_cyclically_monotone(S.points, S, 3)[0]
    ok, _, worst = check_n_cyclically_monotone(np.tile([0.3, -1.0], (5, 1)), S, 3)
    assert ok and abs(worst) <= 1e-15
    T = SupportSet.from_points([0.0, 1.0])
    ok, cyc, worst = check_n_cyclically_monotone(-T.points, T, 2)
    assert not ok and worst == -1.0 and set(cyc) == {0, 1}


def test_joint_monotone_examples():
    S = cloud(np.random.default_rng(1), 4, 2)
    same = VectorFieldFamily(np.stack([S.points] * 3))
    assert check_jointly_n_monotone(same, S)[0]
    single = VectorFieldFamily(np.stack([S.points, np.zeros_like(S.points)]))
    assert check_jointly_n_monotone(single, S)[0]
    zero = VectorFieldFamily(np.zeros((2, 4, 2)))
    assert check_jointly_n_monotone(zero, S)[0] and not check_strict(zero, S)
    assert check_strict(same, S)


def test_cycle_guard():
    S = SupportSet.from_points(np.linspace(-1, 1, 10))
    with pytest.raises(GuardError, match="enumeration guard exceeded"):
        check_n_cyclically_monotone(S.points, S, 4, cap=100)


def test_polarity_examples():
    S = cloud(np.random.default_rng(2), 4, 2)
    mu = uniform(S)
    res = polarity_value(VectorFieldFamily(S.points[None]), mu)
    assert abs(res.value) <= 1e-12 and res.involution.is_identity()
    zero = polarity_value(VectorFieldFamily(np.zeros((2, 4, 2))), mu)
    assert zero.value == 0.0 and len(zero.optima) == count_involutions(4, 3)
    T = SupportSet.from_points([-1.0, 1.0])
    neg = polarity_value(VectorFieldFamily(-T.points[None]), uniform(T))
    assert neg.value == pytest.approx(-2.0, abs=1e-12) and neg.involution.perm == (1, 0)


@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 2), st.integers(2, 3))
def test_polarity_matches_brute_force(seed, n, d, N):
    rng = np.random.default_rng(seed)
    S = cloud(rng, n, d)
    fam = random_family(rng, S, N)
    assert polarity_value(fam, uniform(S)).value == pytest.approx(_brute_polarity(fam, uniform(S)), abs=1e-12)


@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 2), st.integers(2, 3))
def test_monotone_implies_zero_polarity_at_identity(seed, n, d, N):
    rng = np.random.default_rng(seed)
    S = cloud(rng, n, d)
    fam = quadratic_gradient_family(rng, S, N)
    # gradients of convex functions are cyclically monotone along every shift
    assert check_jointly_n_monotone(fam, S)[0]
    res = polarity_value(fam, uniform(S))
    assert abs(res.value) <= 1e-9
    assert any(T.is_identity() for T in res.optima)
    if check_strict(fam, S):
        assert res.identity_unique


def test_polar_decompose_examples():
    S = cloud(np.random.default_rng(3), 4, 1)
    rep = polar_decompose(VectorFieldFamily(S.points[None]), uniform(S))
    assert rep.involution.is_identity() and abs(rep.gap) <= 1e-7 and rep.max_residual <= 1e-6
    T = SupportSet.from_points([-1.0, 1.0])
    rep = polar_decompose(VectorFieldFamily(-T.points[None]), uniform(T))
    assert rep.involution.perm == (1, 0) and rep.max_residual <= 1e-6 and rep.certified
    rep = polar_decompose(VectorFieldFamily(np.zeros((2, 4, 1))), uniform(S))
    assert rep.involution.is_identity()
    np.testing.assert_allclose(rep.hamiltonian.values, 0.0, atol=1e-9)
    assert rep.max_residual <= 1e-9


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 2), st.integers(2, 3))
def test_decomposition_sandwich_and_certificate(seed, n, d, N):
    rng = np.random.default_rng(seed)
    S = cloud(rng, n, d)
    fam = random_family(rng, S, N)
    rep = polar_decompose(fam, uniform(S))
    assert rep.mk_cyc <= rep.mk_sym + 1e-7
    if rep.gap <= 1e-7:
        assert float(rep.slot_residuals.max()) <= 1e-6
        assert float(rep.first_slot_residuals.max()) <= 1e-6
        if rep.involution.is_identity():
            assert check_jointly_n_monotone(fam, S)[0]


def test_local_fallback_is_lower_bound_only():
    S = cloud(np.random.default_rng(4), 5, 1)
    rep = polar_decompose(random_family(np.random.default_rng(5), S, 2), uniform(S), cap=3)
    assert rep.method == "local" and rep.lower_bound_only


def test_single_field_slot():
    f = np.zeros((2, 3, 1))
    assert single_field_slot(VectorFieldFamily(f)) is None
    f[1] = 1.0
    assert single_field_slot(VectorFieldFamily(f)) == 1
    f[0] = 1.0
    assert single_field_slot(VectorFieldFamily(f)) is None


@pytest.mark.parametrize("pts", [[-1.0, 1.0], [-1.0, 0.0, 1.0], [-2.0, -1.0, 1.0, 2.0], [-1.0, -0.5, 0.5, 1.0]])
def test_pairwise_certificate_two_slots(pts):
    S = SupportSet.from_points(pts)
    u = -S.points
    rep = polar_decompose(VectorFieldFamily(u[None]), uniform(S))
    cert = rep.single_field
    assert cert is not None and rep.gap <= 1e-7
    assert np.all(np.diagonal(cert.F) == 0.0)
    assert cert.cyclic_max <= 1e-9
    assert float(cert.inclusion_residuals.max()) <= 1e-6


def test_pairwise_certificate_positive_violation_is_reported():
    # three atoms, N = 3: the inclusion has no exact solution; the LP reports the slack
    S = SupportSet.from_points([-1.0, 0.0, 1.0])
    cert = pairwise_certificate(-S.points, NInvolution((1, 2, 0), 3), 1, S.points)
    assert np.all(np.diagonal(cert.F) == 0.0) and cert.cyclic_max <= 1e-9
    assert float(cert.inclusion_residuals.max()) == pytest.approx(0.5, abs=1e-7)


def test_monotone_flags():
    S = cloud(np.random.default_rng(6), 4, 2)
    flags = monotone_flags(VectorFieldFamily(np.stack([S.points, S.points])), S)
    assert flags == {"jointly": True, "strict": True, "cyclic": True}
