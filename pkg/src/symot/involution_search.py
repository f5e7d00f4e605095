"""Monge side: N-involutions, their exhaustive and local optimization, the
antisymmetric-Hamiltonian test for map families, and argmax map extraction."""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator

import numpy as np

from .core import NEG_INF, CostTable, DiscreteMeasure, GuardError, HamiltonianTable, NInvolution
from .symmetrization import orbit_sum, shift_table

ENUM_CAP = 10**7
MAGIC_TOL = 1e-9


def _divisors(N: int, n: int) -> list[int]:
    return [L for L in range(1, min(N, n) + 1) if N % L == 0]


@lru_cache(maxsize=None)
def count_involutions(n: int, N: int) -> int:
    """Number of permutations of n points whose cycle lengths divide N."""
    if n == 0:
        return 1
    # the cycle through the smallest point has length L: pick its other L-1 points in order
    return sum(math.perm(n - 1, L - 1) * count_involutions(n - L, N) for L in _divisors(N, n))


def enumerate_involutions(n: int, N: int, cap: int = ENUM_CAP) -> Iterator[NInvolution]:
    """Every permutation with S^N = I exactly once, grouped by cycle type."""
    if n < 1 or N < 2:
        raise ValueError("need n >= 1 and N >= 2")
    total = count_involutions(n, N)
    if total > cap:
        raise GuardError(f"enumeration guard exceeded: {total} involutions > {cap}")
    for ctype in _cycle_types(n, N):
        yield from _fillings(ctype, n, N)


def _cycle_types(n: int, N: int) -> list[tuple[int, ...]]:
    """Partitions of n into parts dividing N, parts in non-increasing order."""
    out = []

    def rec(rest: int, top: int, acc: list[int]):
        if rest == 0:
            out.append(tuple(acc))
            return
        for L in reversed(_divisors(N, min(rest, top))):
            rec(rest - L, L, acc + [L])

    rec(n, n, [])
    return sorted(out)


def _fillings(ctype: tuple[int, ...], n: int, N: int) -> Iterator[NInvolution]:
    """All permutations of one cycle type.

    Listing the cycles of a permutation by their smallest points gives a unique
    sequence of lengths, so filling each distinct ordering of the type with
    "the smallest free point opens the next cycle" visits every permutation once.
    """
    for lengths in sorted(set(itertools.permutations(ctype))):
        yield from _canonical(lengths, n, N)


def _canonical(lengths: tuple[int, ...], n: int, N: int) -> Iterator[NInvolution]:
    perm = list(range(n))

    def rec(free: list[int], k: int):
        if k == len(lengths):
            yield NInvolution(tuple(perm), N)
            return
        start, rest = free[0], free[1:]
        for tail in itertools.permutations(rest, lengths[k] - 1):
            cyc = (start,) + tail
            for a, b in zip(cyc, cyc[1:] + cyc[:1]):
                perm[a] = b
            yield from rec([i for i in rest if i not in tail], k + 1)

    yield from rec(list(range(n)), 0)


def involution_value(c: CostTable, mu: DiscreteMeasure, S: NInvolution) -> float:
    """sum_x mu(x) c(x, Sx, ..., S^{N-1}x)."""
    vals = c.values[tuple(S.orbit_table().T)]
    if np.any(~np.isfinite(vals) & (mu.weights > 0)):
        return NEG_INF
    ok = mu.weights > 0
    return float(mu.weights[ok] @ vals[ok])


@dataclass(frozen=True)
class CycSolution:
    involution: NInvolution
    value: float
    method: str
    gap_vs_sym: float | None = None
    optima: tuple = ()


def _require_uniform(mu: DiscreteMeasure) -> None:
    if not mu.is_uniform:
        raise ValueError("involution search needs uniform weights")


def _exact(c: CostTable, mu: DiscreteMeasure, cap: int):
    n, N = c.n, c.N
    best, best_val, optima = None, NEG_INF, []
    for S in enumerate_involutions(n, N, cap):
        v = involution_value(c, mu, S)
        if v == NEG_INF:
            continue
        if best is None or v > best_val + 1e-12:
            best, best_val, optima = S, v, [S]
        elif abs(v - best_val) <= 1e-12:
            optima.append(S)
            if S.perm < best.perm:
                best = S
    return best, best_val, optima


# local search

def _random_involution(n: int, N: int, rng: np.random.Generator) -> list[int]:
    order = rng.permutation(n)
    perm = list(range(n))
    i = 0
    while i < n:
        L = int(rng.choice(_divisors(N, n - i)))
        cyc = order[i : i + L]
        for a, b in zip(cyc, np.roll(cyc, -1)):
            perm[int(a)] = int(b)
        i += L
    return perm


def _cycles(perm: list[int]) -> list[list[int]]:
    seen, out = set(), []
    for s in range(len(perm)):
        if s in seen:
            continue
        cyc, j = [s], perm[s]
        seen.add(s)
        while j != s:
            cyc.append(j)
            seen.add(j)
            j = perm[j]
        out.append(cyc)
    return out


def _from_cycles(cycles: list[list[int]], n: int) -> list[int]:
    perm = list(range(n))
    for cyc in cycles:
        for a, b in zip(cyc, cyc[1:] + cyc[:1]):
            perm[a] = b
    return perm


def _neighbor(perm: list[int], N: int, rng: np.random.Generator) -> list[int]:
    n = len(perm)
    cycles = _cycles(perm)
    move = int(rng.integers(4))
    if move == 3:
        # re-cycle the atoms of a few cycles with a fresh cycle type, so that
        # every cycle type stays reachable (merges alone cannot fuse fixed points when N is odd)
        k = min(len(cycles), int(rng.integers(2, N + 2)))
        pick = sorted(int(v) for v in rng.choice(len(cycles), size=k, replace=False))
        atoms = [a for i in pick for a in cycles[i]]
        sub = _random_involution(len(atoms), N, rng)
        fresh = [[atoms[j] for j in cyc] for cyc in _cycles(sub)]
        rest = [cy for i, cy in enumerate(cycles) if i not in pick]
        return _from_cycles(rest + fresh, n)
    if move == 0:
        # swap two atoms' roles: conjugate by a transposition
        a, b = (int(v) for v in rng.choice(n, size=2, replace=False)) if n > 1 else (0, 0)
        swap = {a: b, b: a}
        return _from_cycles([[swap.get(i, i) for i in cyc] for cyc in cycles], n)
    if move == 1:
        if len(cycles) > 1 and rng.random() < 0.5:
            i, j = (int(v) for v in rng.choice(len(cycles), size=2, replace=False))
            if N % (len(cycles[i]) + len(cycles[j])) == 0:
                merged = cycles[i] + cycles[j]
                rest = [cy for k, cy in enumerate(cycles) if k not in (i, j)]
                return _from_cycles(rest + [merged], n)
            return perm
        i = int(rng.integers(len(cycles)))
        cyc = cycles[i]
        cuts = [k for k in range(1, len(cyc)) if N % k == 0 and N % (len(cyc) - k) == 0]
        if not cuts:
            return perm
        k = int(rng.choice(cuts))
        rest = cycles[:i] + cycles[i + 1 :]
        return _from_cycles(rest + [cyc[:k], cyc[k:]], n)
    # rotate a cycle: replace it by a power coprime to its length
    i = int(rng.integers(len(cycles)))
    cyc = cycles[i]
    L = len(cyc)
    powers = [p for p in range(2, L) if math.gcd(p, L) == 1]
    if not powers:
        return perm
    p = int(rng.choice(powers))
    new = [cyc[(k * p) % L] for k in range(L)]
    return _from_cycles(cycles[:i] + [new] + cycles[i + 1 :], n)


def restart_rng(seed: int, restart: int) -> np.random.Generator:
    """Counter-based stream keyed by (seed, restart)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, restart])))


def _one_restart(c: CostTable, mu: DiscreteMeasure, seed: int, restart: int, moves: int):
    n, N = c.n, c.N
    rng = restart_rng(seed, restart)
    cur = _random_involution(n, N, rng)
    cur_val = involution_value(c, mu, NInvolution(tuple(cur), N))
    best, best_val = cur, cur_val
    for _ in range(moves):
        cand = _neighbor(cur, N, rng)
        v = involution_value(c, mu, NInvolution(tuple(cand), N))
        if v >= cur_val:
            cur, cur_val = cand, v
            if v > best_val:
                best, best_val = cand, v
    return best_val, best


def thread_count() -> int:
    raw = os.environ.get("SYMOT_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _local(c: CostTable, mu: DiscreteMeasure, seed: int, restarts: int, moves: int):
    with ThreadPoolExecutor(max_workers=min(thread_count(), restarts)) as pool:
        results = list(pool.map(lambda r: _one_restart(c, mu, seed, r, moves), range(restarts)))
    best_val, best = NEG_INF, None
    # strict improvement keeps the lowest restart index among ties
    for v, perm in results:
        if best is None or v > best_val:
            best_val, best = v, perm
    return NInvolution(tuple(best), c.N), best_val


def solve_mk_cyc(
    c: CostTable,
    mu: DiscreteMeasure,
    method: str = "exact",
    seed: int = 0,
    restarts: int = 20,
    moves: int = 1000,
    mk_sym: float | None = None,
    cap: int = ENUM_CAP,
) -> CycSolution:
    _require_uniform(mu)
    if mu.support.n != c.n:
        raise ValueError("cost table and measure live on different supports")
    if method == "exact":
        S, val, optima = _exact(c, mu, cap)
        if S is None:
            raise ValueError("no finite-cost involution")
    elif method == "local":
        S, val = _local(c, mu, seed, restarts, moves)
        optima = [S]
        if val == NEG_INF:
            raise ValueError("no finite-cost involution found")
    else:
        raise ValueError(f"unknown method {method!r}")
    gap = None if mk_sym is None else mk_sym - val
    return CycSolution(S, val, method, gap, tuple(optima))


# antisymmetric Hamiltonian test

@dataclass(frozen=True)
class MagicVerdict:
    passed: bool
    structural: bool
    max_random_integral: float
    witness: dict | None = None


def _integral(H: np.ndarray, maps: np.ndarray, w: np.ndarray) -> float:
    """sum_x w(x) H(x, S_1 x, ..., S_{N-1} x); maps has rows (x, S_1 x, ...)."""
    return float(w @ H[tuple(maps.T)])


def _structural(maps: list[np.ndarray], n: int, N: int) -> bool:
    S1 = maps[0]
    if sorted(S1.tolist()) != list(range(n)):
        return False
    # maps[i - 1] must equal S1^i, and S1^N must be the identity
    power = np.arange(n)
    for i in range(1, N + 1):
        power = S1[power]
        if i < N and not np.array_equal(maps[i - 1], power):
            return False
    return bool(np.array_equal(power, np.arange(n)))


def proof_family(points: np.ndarray, S1: np.ndarray, N: int, i: int) -> np.ndarray:
    """H_i(x) = h(x) - 2 h(sigma x) + h(sigma^2 x) with h(x) = |x_i - S_1^i x_N|.

    Written out this is |x_i - S^i x_N| - |S^i x_1 - x_{i+1}| - |x_{i+1} - S^i x_1|
    + |S^i x_2 - x_{i+2}| (slots mod N), a difference k - k o sigma, hence antisymmetric.
    """
    n = points.shape[0]
    Si = np.arange(n)
    for _ in range(i):
        Si = S1[Si]
    dist = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=2)
    # h depends on slots i-1 and N-1 (0-based): |x[a] - x[S^i b]|
    g = dist[:, Si]
    shape = [1] * N
    a, b = (i - 1) % N, N - 1
    if a == b:
        h = np.broadcast_to(np.diagonal(g).reshape([n if k == a else 1 for k in range(N)]), (n,) * N)
    else:
        shape[a], shape[b] = n, n
        h = np.broadcast_to((g if a < b else g.T).reshape(shape), (n,) * N)
    return h - 2 * shift_table(h, 1) + shift_table(h, 2)


def indicator_family(n: int, N: int, atom: int, slot: int) -> np.ndarray:
    """f(x_1) - f(x_slot) with f the indicator of one atom."""
    f = np.zeros(n)
    f[atom] = 1.0
    first = f.reshape((n,) + (1,) * (N - 1))
    other = f.reshape([n if k == slot else 1 for k in range(N)])
    return np.broadcast_to(first - other, (n,) * N).copy()


def random_antisymmetric(n: int, N: int, rng: np.random.Generator) -> np.ndarray:
    G = rng.normal(size=(n,) * N)
    return G - orbit_sum(G) / N


def magic_test(maps, mu: DiscreteMeasure, trials: int = 50, seed: int = 0) -> MagicVerdict:
    _require_uniform(mu)
    n = mu.support.n
    maps = [np.asarray(m, dtype=int) for m in maps]
    N = len(maps) + 1
    if any(m.shape != (n,) or m.min() < 0 or m.max() >= n for m in maps):
        raise ValueError("maps must send every atom to an atom")
    table = np.stack([np.arange(n)] + maps, axis=1)
    w = mu.weights
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(trials):
        if k % 2 == 0:
            H = random_antisymmetric(n, N, rng)
        else:
            f = rng.normal(size=n)
            j = int(rng.integers(1, N))
            first = f.reshape((n,) + (1,) * (N - 1))
            other = f.reshape([n if s == j else 1 for s in range(N)])
            H = np.broadcast_to(first - other, (n,) * N)
        worst = max(worst, abs(_integral(H, table, w)))
    structural = _structural(maps, n, N)
    passed = structural and worst <= MAGIC_TOL
    witness = None
    if not passed:
        witness = _find_witness(mu, maps, table, N)
    return MagicVerdict(passed, structural, worst, witness)


def _find_witness(mu: DiscreteMeasure, maps, table, N: int) -> dict | None:
    n, w = mu.support.n, mu.weights
    best = None
    for slot in range(1, N):
        for atom in range(n):
            val = _integral(indicator_family(n, N, atom, slot), table, w)
            if abs(val) > MAGIC_TOL and (best is None or abs(val) > abs(best["integral"])):
                best = {"family": "indicator", "atom": atom, "slot": slot + 1, "integral": val}
    if best is not None:
        return best
    for i in range(1, N + 1):
        val = _integral(proof_family(mu.support.points, maps[0], N, i), table, w)
        if abs(val) > MAGIC_TOL and (best is None or abs(val) > abs(best["integral"])):
            best = {"family": "distance", "index": i, "integral": val}
    return best


@dataclass(frozen=True)
class ArgmaxMaps:
    maps: list
    unique: np.ndarray
    verdict: MagicVerdict | None


def extract_argmax_maps(H: HamiltonianTable, c: CostTable, mu: DiscreteMeasure | None = None, tol: float = 1e-9):
    n, N = c.n, c.N
    M = np.where(c.allowed, c.values - H.values, NEG_INF).reshape(n, -1)
    if not np.all(np.isfinite(M.max(axis=1))):
        raise ValueError("all tuples forbidden at some atom")
    arg = M.argmax(axis=1)
    best = M[np.arange(n), arg]
    rest = M.copy()
    rest[np.arange(n), arg] = NEG_INF
    second = rest.max(axis=1) if rest.shape[1] > 1 else np.full(n, NEG_INF)
    unique = second < best - tol
    tails = np.stack(np.unravel_index(arg, (n,) * (N - 1)), axis=1)
    maps = [tails[:, k] for k in range(N - 1)]
    verdict = None
    if mu is not None and unique.all() and mu.is_uniform:
        verdict = magic_test(maps, mu)
    return ArgmaxMaps(maps, unique, verdict)
