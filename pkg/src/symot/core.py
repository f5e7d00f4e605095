"""Value types shared by every solver: supports, measures, costs, couplings, involutions.

Atoms are addressed by 0-based indices into a :class:`SupportSet`. An index
tuple ``t`` of length ``N`` names the point ``(x[t[0]], ..., x[t[N-1]])``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

# Forbidden tuples carry NEG_INF. Costs are bounded above, so no +inf ever
# meets it and sums stay NaN-free; solvers always go through ``allowed``.
NEG_INF = float("-inf")

TABLE_CAP = 10**7

COST_FAMILIES = ("quadratic", "plakhov", "coulomb", "vector-field", "table")


class GuardError(ValueError):
    """Raised when a problem exceeds a combinatorial or memory guard."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SupportSet:
    """Ordered distinct points in R^d inside the ball of radius ``radius``."""

    points: np.ndarray
    radius: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError("support needs at least one point given as an (n, d) array")
        if not np.all(np.isfinite(pts)):
            raise ValueError("support points must be finite")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        norms = np.linalg.norm(pts, axis=1)
        if np.any(norms > self.radius * (1 + 1e-12)):
            raise ValueError(f"point of norm {norms.max():.6g} outside radius {self.radius}")
        if len({tuple(p) for p in pts.tolist()}) != len(pts):
            raise ValueError("support points must be pairwise distinct")
        object.__setattr__(self, "points", _freeze(pts))
        object.__setattr__(self, "radius", float(self.radius))

    @classmethod
    def from_points(cls, points, radius: float | None = None) -> "SupportSet":
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if radius is None:
            radius = max(float(np.linalg.norm(pts, axis=1).max()), 1e-12)
        return cls(pts, radius)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class DiscreteMeasure:
    support: SupportSet
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.support.n,):
            raise ValueError("weights length must match the support")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        object.__setattr__(self, "weights", _freeze(w))

    @classmethod
    def uniform(cls, support: SupportSet) -> "DiscreteMeasure":
        return cls(support, np.full(support.n, 1.0 / support.n))

    @property
    def is_uniform(self) -> bool:
        return bool(np.allclose(self.weights, 1.0 / self.support.n, rtol=0, atol=1e-15))


@dataclass(frozen=True)
class VectorFieldFamily:
    """``N - 1`` vector fields tabulated on a support; ``fields[l][i]`` is u_{l+1}(x_i)."""

    fields: np.ndarray
    bound: float | None = None

    def __post_init__(self):
        f = np.asarray(self.fields, dtype=float)
        if f.ndim == 2:
            f = f[:, :, None]
        if f.ndim != 3 or f.shape[0] < 1:
            raise ValueError("fields must have shape (N-1, n, d)")
        if not np.all(np.isfinite(f)):
            raise ValueError("field values must be finite")
        norm = float(np.linalg.norm(f, axis=2).max())
        bound = norm if self.bound is None else float(self.bound)
        if norm > bound * (1 + 1e-12) + 1e-300:
            raise ValueError(f"field norm {norm:.6g} exceeds bound {bound:.6g}")
        object.__setattr__(self, "fields", _freeze(f))
        object.__setattr__(self, "bound", bound)

    @classmethod
    def from_maps(cls, maps: Sequence[Callable], support: SupportSet) -> "VectorFieldFamily":
        return cls(np.stack([[np.atleast_1d(m(p)) for p in support.points] for m in maps]))

    @property
    def N(self) -> int:
        return self.fields.shape[0] + 1

    @property
    def n(self) -> int:
        return self.fields.shape[1]


@dataclass(frozen=True)
class CostSpec:
    family: str
    N: int
    vector_fields: VectorFieldFamily | None = None
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.family not in COST_FAMILIES:
            raise ValueError(f"unknown cost family {self.family!r}")
        if self.N < 2:
            raise ValueError("N must be at least 2")
        if self.family == "vector-field":
            if self.vector_fields is None or self.vector_fields.N != self.N:
                raise ValueError("vector-field cost needs exactly N-1 fields")
        if self.family == "table":
            if self.values is None:
                raise ValueError("table cost needs explicit values")
            v = np.asarray(self.values, dtype=float)
            if v.ndim != self.N or len(set(v.shape)) != 1:
                raise ValueError("table values must be an n^N array")
            object.__setattr__(self, "values", _freeze(v))


def cyclic_shift(t: Sequence[int], k: int = 1) -> tuple:
    """sigma^k of an index tuple: slot 2 moves to slot 1 and slot 1 to slot N."""
    t = tuple(t)
    if not t:
        return t
    k %= len(t)
    return t[k:] + t[:k]


def eval_cost(spec: CostSpec, points: Sequence, indices: Sequence[int] | None = None) -> float:
    """Cost of one N-tuple of points.

    ``indices`` are needed only for the vector-field and table families, whose
    values are attached to atoms rather than coordinates.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] != spec.N:
        raise ValueError(f"expected {spec.N} points, got {x.shape[0]}")
    fam = spec.family
    if fam == "quadratic":
        return -sum(float(np.sum((x[i] - x[j]) ** 2)) for i, j in itertools.combinations(range(spec.N), 2))
    if fam == "plakhov":
        if x.shape[1] != 1 or spec.N != 2:
            raise ValueError("Plakhov cost needs d = 1 and N = 2")
        return -1.0 - math.cos(float(x[0, 0] - x[1, 0]))
    if fam == "coulomb":
        total = 0.0
        for i, j in itertools.combinations(range(spec.N), 2):
            r = float(np.linalg.norm(x[i] - x[j]))
            if r == 0.0:
                return NEG_INF
            total -= 1.0 / r
        return total
    if indices is None:
        raise ValueError(f"{fam} cost needs support indices")
    idx = tuple(int(i) for i in indices)
    if fam == "table":
        return float(spec.values[idx])
    u = spec.vector_fields.fields
    if u.shape[2] != x.shape[1]:
        raise ValueError("dimension mismatch between fields and points")
    return float(sum(u[l, idx[0]] @ x[l + 1] for l in range(spec.N - 1)))


@dataclass(frozen=True)
class CostTable:
    """Dense n^N table of costs; NEG_INF marks forbidden tuples."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim < 2 or len(set(v.shape)) != 1:
            raise ValueError("cost table must be an n^N array with N >= 2")
        if np.any(np.isnan(v)) or np.any(v == np.inf):
            raise ValueError("cost table entries must be finite or NEG_INF")
        object.__setattr__(self, "values", _freeze(v))

    @property
    def N(self) -> int:
        return self.values.ndim

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def allowed(self) -> np.ndarray:
        return np.isfinite(self.values)


def _check_table_size(n: int, N: int, cap: int) -> None:
    if n**N > cap:
        raise GuardError(f"table guard exceeded: {n}^{N} = {n**N} > {cap}")


def build_cost_table(spec: CostSpec, support: SupportSet, cap: int = TABLE_CAP) -> CostTable:
    n, N = support.n, spec.N
    _check_table_size(n, N, cap)
    x = support.points
    fam = spec.family
    if fam == "plakhov" and (support.d != 1 or N != 2):
        raise ValueError("Plakhov cost needs d = 1 and N = 2")
    if fam == "table":
        if spec.values.shape[0] != n:
            raise ValueError("table size does not match the support")
        return CostTable(spec.values)
    if fam == "vector-field":
        u = spec.vector_fields.fields
        if u.shape[1] != n or u.shape[2] != support.d:
            raise ValueError("dimension mismatch between fields and support")
        out = np.zeros((n,) * N)
        for l in range(N - 1):
            # <u_l(x_1), x_{l+2}>
            gram = u[l] @ x.T
            shape = [1] * N
            shape[0], shape[l + 1] = n, n
            out = out + gram.reshape(shape)
        return CostTable(out)

    sq = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=2)
    if fam == "quadratic":
        pair = -sq
    elif fam == "plakhov":
        pair = -1.0 - np.cos(x[:, 0][:, None] - x[:, 0][None, :])
    else:
        with np.errstate(divide="ignore"):
            pair = -1.0 / np.sqrt(sq)
    out = np.zeros((n,) * N)
    for i, j in itertools.combinations(range(N), 2):
        shape = [1] * N
        shape[i], shape[j] = n, n
        out = out + pair.reshape(shape)
    return CostTable(out)


@dataclass(frozen=True)
class Coupling:
    mass: np.ndarray

    def __post_init__(self):
        m = np.array(self.mass, dtype=float)
        if m.ndim < 2 or len(set(m.shape)) != 1:
            raise ValueError("coupling must be an n^N array")
        if np.any(m < -1e-12):
            raise ValueError("coupling entries must be nonnegative")
        m[m < 0] = 0.0
        if abs(m.sum() - 1.0) > 1e-10:
            raise ValueError(f"coupling mass {m.sum()!r} differs from 1")
        object.__setattr__(self, "mass", _freeze(m))

    @property
    def N(self) -> int:
        return self.mass.ndim

    def marginal(self, k: int) -> np.ndarray:
        axes = tuple(a for a in range(self.N) if a != k)
        return self.mass.sum(axis=axes)

    def value(self, cost: CostTable) -> float:
        ok = self.mass > 0
        if np.any(~cost.allowed & ok):
            return NEG_INF
        return float(np.sum(cost.values[ok] * self.mass[ok]))


def _cycles_of(perm: Sequence[int]) -> list[tuple[int, ...]]:
    seen = [False] * len(perm)
    cycles = []
    for s in range(len(perm)):
        if seen[s]:
            continue
        cyc = [s]
        seen[s] = True
        j = perm[s]
        while j != s:
            cyc.append(j)
            seen[j] = True
            j = perm[j]
        cycles.append(tuple(cyc))
    return cycles


@dataclass(frozen=True)
class NInvolution:
    """Permutation of atom indices whose order divides ``N``."""

    perm: tuple
    N: int

    def __post_init__(self):
        p = tuple(int(i) for i in self.perm)
        if sorted(p) != list(range(len(p))):
            raise ValueError("perm is not a permutation")
        if self.N < 1:
            raise ValueError("N must be positive")
        for cyc in _cycles_of(p):
            if self.N % len(cyc):
                raise ValueError(f"cycle {cyc} has length not dividing N = {self.N}")
        object.__setattr__(self, "perm", p)

    @classmethod
    def identity(cls, n: int, N: int) -> "NInvolution":
        return cls(tuple(range(n)), N)

    @property
    def n(self) -> int:
        return len(self.perm)

    def power(self, k: int) -> np.ndarray:
        out = np.arange(self.n)
        p = np.asarray(self.perm)
        for _ in range(k % self.N):
            out = p[out]
        return out

    def orbit_table(self) -> np.ndarray:
        """Row i is (i, S i, ..., S^{N-1} i)."""
        return np.stack([self.power(k) for k in range(self.N)], axis=1)

    def cycles(self) -> list[tuple[int, ...]]:
        return _cycles_of(self.perm)

    def cycle_notation(self) -> str:
        nontrivial = [c for c in self.cycles() if len(c) > 1]
        if not nontrivial:
            return "()"
        return "".join("(" + " ".join(str(i) for i in c) + ")" for c in nontrivial)

    def is_identity(self) -> bool:
        return self.perm == tuple(range(self.n))


@dataclass(frozen=True)
class Potential:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ValueError("potential must be a finite vector")
        object.__setattr__(self, "values", _freeze(v))


@dataclass(frozen=True)
class HamiltonianTable:
    values: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("Hamiltonian entries must be finite")
        object.__setattr__(self, "values", _freeze(v))

    @property
    def N(self) -> int:
        return self.values.ndim

    @property
    def n(self) -> int:
        return self.values.shape[0]


def all_tuples(n: int, N: int):
    return itertools.product(range(n), repeat=N)


def pushforward_plan(S: NInvolution, mu: DiscreteMeasure) -> Coupling:
    """Image of mu under x -> (x, Sx, ..., S^{N-1}x)."""
    mass = np.zeros((S.n,) * S.N)
    mass[tuple(S.orbit_table().T)] = mu.weights
    return Coupling(mass)
