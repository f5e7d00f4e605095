"""Cyclic-symmetry algebra on tabulated functions of N support indices."""

from __future__ import annotations

import numpy as np

from .core import NEG_INF, CostTable, Coupling, HamiltonianTable, Potential

ANTISYM_TOL = 1e-10


def shift_table(values: np.ndarray, k: int = 1) -> np.ndarray:
    """Return ``T o sigma^k``, i.e. ``out[t] = values[sigma^k t]``."""
    out = values
    for _ in range(k % values.ndim):
        out = np.moveaxis(out, -1, 0)
    return out


def orbit_sum(values: np.ndarray) -> np.ndarray:
    return sum(shift_table(values, i) for i in range(values.ndim))


def symmetrize_cost(table: CostTable) -> CostTable:
    v = table.values
    # -inf in any rotation propagates to the whole orbit through the mean
    sym = orbit_sum(v) / v.ndim
    sym[~np.isfinite(sym)] = NEG_INF
    return CostTable(sym)


def symmetrize_plan(plan: Coupling) -> Coupling:
    return Coupling(orbit_sum(plan.mass) / plan.N)


def check_antisymmetric(H: HamiltonianTable, tol: float = ANTISYM_TOL) -> tuple[bool, float]:
    resid = float(np.abs(orbit_sum(H.values)).max())
    return resid <= tol, resid


def check_subantisymmetric(H: HamiltonianTable, tol: float = ANTISYM_TOL):
    """Return ``(ok, worst_tuple, residual)``.

    The residual is the larger of the worst orbit sum and the worst diagonal
    magnitude, so ``ok`` is ``residual <= tol``.
    """
    v = H.values
    s = orbit_sum(v)
    worst = np.unravel_index(int(np.argmax(s)), s.shape)
    diag = np.abs(v[(np.arange(v.shape[0]),) * v.ndim])
    resid = float(s[worst])
    if diag.max() > resid:
        i = int(np.argmax(diag))
        worst, resid = (i,) * v.ndim, float(diag[i])
    return resid <= tol, tuple(int(i) for i in worst), resid


def _tail_sum(u: np.ndarray, N: int, start: int = 1) -> np.ndarray:
    """sum_{j >= start} u[t_j] broadcast over an n^N grid."""
    n = u.shape[0]
    out = np.zeros((n,) * N)
    for j in range(start, N):
        shape = [1] * N
        shape[j] = n
        out = out + u.reshape(shape)
    return out


def hamiltonian_from_potential(u0: Potential, c: CostTable) -> HamiltonianTable:
    """H = -c_sym + c + sum_{i>=2} u0(x_i) - (N-1) u0(x_1), zero on forbidden tuples."""
    u = u0.values
    N, n = c.N, c.n
    if u.shape != (n,):
        raise ValueError("potential and cost live on different supports")
    csym = symmetrize_cost(c).values
    ok = c.allowed & np.isfinite(csym)
    diff = np.zeros_like(c.values)
    diff[ok] = c.values[ok] - csym[ok]
    first = np.reshape(u, (n,) + (1,) * (N - 1))
    H = diff + _tail_sum(u, N) - (N - 1) * first
    return HamiltonianTable(H)


def hamiltonian_from_pairwise(F: np.ndarray, N: int) -> HamiltonianTable:
    """Lift a two-variable table to an N-cyclically antisymmetric Hamiltonian.

    H = ((N-1) F(x_1, x_2) - sum_{i=2}^{N} F(x_i, x_{i+1})) / N with x_{N+1} = x_1.
    The correction runs over the whole cycle, so every orbit sum cancels and
    H - F = -(cyclic sum of F) / N, which is >= 0 for sub-antisymmetric F.
    """
    if N < 2:
        raise ValueError("N must be at least 2")
    F = np.asarray(F, dtype=float)
    n = F.shape[0]

    def pair(i: int) -> np.ndarray:
        # F(x_{i+1}, x_{i+2}) on 0-based slots i, i+1 (mod N)
        j = (i + 1) % N
        shape = [1] * N
        shape[i], shape[j] = n, n
        g = F if i < j else F.T
        return g.reshape(shape)

    H = (N - 1) * pair(0)
    for i in range(1, N):
        H = H - pair(i)
    return HamiltonianTable(np.broadcast_to(H, (n,) * N) / N)


def pairwise_as_table(F: np.ndarray, N: int) -> np.ndarray:
    """F(x_1, x_2) viewed as a function of N variables."""
    F = np.asarray(F, dtype=float)
    n = F.shape[0]
    return np.broadcast_to(F.reshape((n, n) + (1,) * (N - 2)), (n,) * N).copy()
