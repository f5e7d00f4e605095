"""Kantorovich side: symmetric and standard multi-marginal LPs, dual potentials,
the c-transform fixed point, c-Legendre transforms and an entropic cross-check."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.special import logsumexp

from .core import NEG_INF, CostTable, Coupling, DiscreteMeasure, HamiltonianTable, Potential
from .symmetrization import _tail_sum, hamiltonian_from_potential, symmetrize_cost, symmetrize_plan

FEAS_TOL = 1e-9
LP_TOL = 1e-10


class InfeasibleError(ValueError):
    pass


def _solve_max_lp(obj: np.ndarray, A, b: np.ndarray):
    """max obj.x s.t. A x = b, x >= 0. Returns (value, x, y) with A^T y >= obj."""
    res = linprog(
        -obj,
        A_eq=A,
        b_eq=b,
        bounds=(0, None),
        method="highs",
        options={"primal_feasibility_tolerance": LP_TOL, "dual_feasibility_tolerance": LP_TOL},
    )
    if res.status == 2:
        raise InfeasibleError("no finite-cost symmetric coupling")
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    return -float(res.fun), np.asarray(res.x), -np.asarray(res.eqlin.marginals)


def _check_measure(c: CostTable, mu: DiscreteMeasure) -> None:
    if mu.support.n != c.n:
        raise ValueError("cost table and measure live on different supports")


def _orbits(allowed: np.ndarray):
    """Canonical (lexicographically smallest) rotation of every allowed tuple.

    Returns the canonical flat indices, their orbit sizes, and for every allowed
    flat index the position of its orbit in the canonical list.
    """
    shape = allowed.shape
    N = allowed.ndim
    flat = np.flatnonzero(allowed.ravel())
    tup = np.stack(np.unravel_index(flat, shape), axis=1)
    rots = np.stack(
        [np.ravel_multi_index(tuple(np.roll(tup, -k, axis=1).T), shape) for k in range(N)], axis=1
    )
    canon = rots.min(axis=1)
    size = np.array([len(set(r)) for r in rots.tolist()])
    reps, inverse = np.unique(canon, return_inverse=True)
    rep_size = np.zeros(len(reps), dtype=int)
    rep_size[inverse] = size
    return reps, rep_size, flat, inverse


def solve_mk_sym(c: CostTable, mu: DiscreteMeasure, mode: str = "orbit"):
    """Optimal value and a sigma-invariant optimal coupling with marginal mu."""
    _check_measure(c, mu)
    csym = symmetrize_cost(c)
    if mode == "symmetrized":
        value, plan, _ = solve_standard_mm(csym, [mu] * c.N)
        return value, symmetrize_plan(plan)
    if mode != "orbit":
        raise ValueError(f"unknown mode {mode!r}")
    n, N = c.n, c.N
    allowed = csym.allowed
    if not allowed.any():
        raise InfeasibleError("no finite-cost symmetric coupling")
    reps, rep_size, flat, inverse = _orbits(allowed)
    rep_tup = np.stack(np.unravel_index(reps, c.values.shape), axis=1)
    # z_O = total mass of orbit O; the first marginal weighs atom a by count_a / N
    A = np.zeros((n, len(reps)))
    for k in range(N):
        np.add.at(A, (rep_tup[:, k], np.arange(len(reps))), 1.0 / N)
    obj = csym.values.ravel()[reps]
    value, z, _ = _solve_max_lp(obj, A, mu.weights)
    z = np.clip(z, 0.0, None)
    mass = np.zeros(c.values.size)
    mass[flat] = (z / rep_size)[inverse]
    mass /= mass.sum()
    return value, Coupling(mass.reshape(c.values.shape))


def solve_standard_mm(c: CostTable, marginals):
    """Standard multi-marginal LP. Returns (value, plan, potentials).

    ``potentials[j]`` is the multiplier of slot j, shifted so that the dual
    constraint sum_j u_j(t_j) >= c[t] holds exactly on finite-cost tuples and
    each slot carries an equal share of the value.
    """
    N, n = c.N, c.n
    if len(marginals) != N:
        raise ValueError("need one marginal per slot")
    for m in marginals:
        _check_measure(c, m)
    allowed = c.allowed
    flat = np.flatnonzero(allowed.ravel())
    if flat.size == 0:
        raise InfeasibleError("no finite-cost coupling")
    tup = np.unravel_index(flat, c.values.shape)
    rows = np.concatenate([k * n + tup[k] for k in range(N)])
    cols = np.tile(np.arange(flat.size), N)
    A = sparse.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(N * n, flat.size))
    b = np.concatenate([m.weights for m in marginals])
    obj = c.values.ravel()[flat]
    value, x, y = _solve_max_lp(obj, A, b)
    u = y.reshape(N, n)
    # restore exact dual feasibility, then balance the additive gauge
    slack = obj - sum(u[k][tup[k]] for k in range(N))
    u[0] += max(0.0, float(slack.max()))
    share = np.array([marginals[k].weights @ u[k] for k in range(N)])
    u -= (share - share.sum() / N)[:, None]
    mass = np.zeros(c.values.size)
    mass[flat] = np.clip(x, 0.0, None)
    mass /= mass.sum()
    return value, Coupling(mass.reshape(c.values.shape)), [Potential(r) for r in u]


def c_bar(u: np.ndarray, csym: CostTable) -> np.ndarray:
    """ubar(x) = max over tails of csym(x, y) - sum_i u(y_i)."""
    M = csym.values - _tail_sum(u, csym.N)
    out = M.reshape(csym.n, -1).max(axis=1)
    if not np.all(np.isfinite(out)):
        raise ValueError("c-transform undefined at atom")
    return out


def dual_violation(u: np.ndarray, csym: CostTable) -> float:
    """max over finite tuples of csym[t] - sum_j u(t_j)."""
    M = csym.values - _tail_sum(u, csym.N, start=0)
    return float(M[csym.allowed].max())


def refine_potential(u: Potential, c_sym: CostTable, tol: float = 1e-10, max_iter: int = 10_000) -> Potential:
    """Average u with its c-transform until it reaches the fixed point u = ubar."""
    v = np.array(u.values, dtype=float)
    N = c_sym.N
    if dual_violation(v, c_sym) > FEAS_TOL:
        raise ValueError("input potential is not dual feasible")
    for _ in range(max_iter):
        nxt = (c_bar(v, c_sym) + (N - 1) * v) / N
        # the averaged potential never increases; clamp round-off
        nxt = np.minimum(nxt, v)
        step = float(np.abs(nxt - v).max())
        v = nxt
        if step < tol:
            break
    return Potential(v)


def c_legendre(H: HamiltonianTable, c: CostTable) -> Potential:
    if H.values.shape != c.values.shape:
        raise ValueError("Hamiltonian and cost live on different supports")
    M = np.where(c.allowed, c.values - H.values, NEG_INF)
    out = M.reshape(c.n, -1).max(axis=1)
    if not np.all(np.isfinite(out)):
        raise ValueError("c-transform undefined at atom")
    return Potential(out)


def symmetric_potential(c: CostTable, mu: DiscreteMeasure):
    """Standard LP on the symmetrized cost, slot potentials averaged into one.

    The average of the slot potentials is feasible for the single-potential
    dual because summing the slot constraints over all rotations of a tuple
    gives N times the averaged constraint.
    """
    csym = symmetrize_cost(c)
    value, _, pots = solve_standard_mm(csym, [mu] * c.N)
    u = np.mean([p.values for p in pots], axis=0)
    viol = dual_violation(u, csym)
    if viol > 0:
        u = u + viol / c.N
    return value, Potential(u)


@dataclass(frozen=True)
class DualReport:
    mk_sym: float
    dk1: float
    dk2: float
    mk_standard: float
    plan: Coupling
    potential: Potential
    hamiltonian: HamiltonianTable

    @property
    def gaps(self) -> dict:
        return {
            "mk_sym-dk1": abs(self.mk_sym - self.dk1),
            "mk_sym-dk2": abs(self.mk_sym - self.dk2),
            "dk1-dk2": abs(self.dk1 - self.dk2),
        }

    def agrees(self, tol: float = 1e-7) -> bool:
        return max(self.gaps.values()) <= tol


def duality_report(c: CostTable, mu: DiscreteMeasure) -> DualReport:
    _check_measure(c, mu)
    csym = symmetrize_cost(c)
    mk_sym, plan = solve_mk_sym(c, mu, "orbit")
    mk_standard, u = symmetric_potential(c, mu)
    u0 = refine_potential(u, csym)
    dk1 = c.N * float(mu.weights @ u0.values)
    H = hamiltonian_from_potential(u0, c)
    dk2 = float(mu.weights @ c_legendre(H, c).values)
    return DualReport(mk_sym, dk1, dk2, mk_standard, plan, u0, H)


def _tuple_counts(n: int, N: int) -> np.ndarray:
    """counts[t, a] = number of slots of tuple t holding atom a (C order over tuples)."""
    tup = np.indices((n,) * N).reshape(N, -1)
    counts = np.zeros((tup.shape[1], n))
    for k in range(N):
        np.add.at(counts, (np.arange(tup.shape[1]), tup[k]), 1.0)
    return counts


def _newton_polish(u, cflat, logw, counts, mu, N, epsilon, tol, max_iter=200):
    """Damped Newton on the smooth dual N <mu, u> + eps sum_t w(t) exp((c(t) - sum_j u(t_j)) / eps).

    Its gradient is N (mu - marginal), so stationarity is the marginal condition.
    Atoms without mass carry no constraint and are left alone.
    """
    active = mu > 0

    def dual(v):
        return N * float(mu @ v) + epsilon * math.exp(logsumexp((cflat - counts @ v) / epsilon + logw))

    for _ in range(max_iter):
        pi = np.exp((cflat - counts @ u) / epsilon + logw)
        marg = counts.T @ pi / N
        if float(np.abs(marg - mu).max()) <= tol:
            return u
        g = (N * (mu - marg))[active]
        hess = ((counts[:, active] * pi[:, None]).T @ counts[:, active]) / epsilon
        step = np.zeros_like(u)
        step[active] = -np.linalg.lstsq(hess, g, rcond=None)[0]
        base, slope, t = dual(u), float(g @ step[active]), 1.0
        while t > 1e-12 and dual(u + t * step) > base + 1e-4 * t * slope:
            t *= 0.5
        u = u + t * step
    raise RuntimeError("entropic iteration did not converge")


def solve_entropic(c: CostTable, mu: DiscreteMeasure, epsilon: float, tol: float = 1e-9, max_iter: int = 5_000):
    """Log-domain symmetric Sinkhorn on a single potential, finished by Newton steps.

    Returns (value, coupling, potential). At the fixed point the Gibbs coupling
    has every marginal equal to mu (within ``tol``) and is sigma-invariant.
    Sinkhorn crawls when the coupling nearly concentrates on a few orbits, so
    its output only warm-starts the Newton phase.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    _check_measure(c, mu)
    csym = symmetrize_cost(c)
    n, N = c.n, c.N
    with np.errstate(divide="ignore"):
        logmu = np.log(mu.weights)
    tail_logmu = _tail_sum(logmu, N)
    u = np.zeros(n)
    for _ in range(max_iter):
        K = (csym.values - _tail_sum(u, N)) / epsilon + tail_logmu
        ubar = epsilon * logsumexp(K.reshape(n, -1), axis=1)
        nxt = (ubar + (N - 1) * u) / N
        step = float(np.abs(nxt - u).max())
        u = nxt
        if step < tol:
            break
    logw = _tail_sum(logmu, N, start=0).ravel()
    u = _newton_polish(u, csym.values.ravel(), logw, _tuple_counts(n, N), mu.weights, N, epsilon, tol)
    logpi = (csym.values - _tail_sum(u, N, start=0)) / epsilon + _tail_sum(logmu, N, start=0)
    pi = np.exp(logpi - logsumexp(logpi))
    value = float(np.sum(csym.values[csym.allowed] * pi[csym.allowed]))
    return value, Coupling(pi), Potential(u)


def entropic_gap_bound(epsilon: float, n: int, N: int) -> float:
    return epsilon * N * math.log(max(n, 1))
