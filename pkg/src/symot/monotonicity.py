"""Monotonicity of vector fields, the polarity value, and polar decomposition
with finite subgradient certificates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .core import (
    CostSpec,
    DiscreteMeasure,
    GuardError,
    HamiltonianTable,
    NInvolution,
    SupportSet,
    VectorFieldFamily,
    build_cost_table,
)
from .involution_search import ENUM_CAP, count_involutions, enumerate_involutions, solve_mk_cyc
from .mmot_solver import duality_report

MONO_TOL = 1e-10
CYCLE_CAP = 10**7
GAP_TOL = 1e-7
CERT_TOL = 1e-6


def _guard(n: int, N: int, cap: int) -> None:
    if n**N > cap:
        raise GuardError(f"enumeration guard exceeded: {n}^{N} cycles > {cap}")


def _pair(table: np.ndarray, i: int, j: int, N: int) -> np.ndarray:
    """A two-index table placed on slots i and j of an n^N grid."""
    n = table.shape[0]
    if i == j:
        shape = [1] * N
        shape[i] = n
        return np.diagonal(table).reshape(shape)
    shape = [1] * N
    shape[i], shape[j] = n, n
    return (table if i < j else table.T).reshape(shape)


def _cycle_sums(fields: np.ndarray, points: np.ndarray, N: int, offsets) -> np.ndarray:
    """T[t] = sum_i sum_l <u_l(x_{t_i}), x_{t_i} - x_{t_{i+k_l}}> over an n^N grid."""
    n = points.shape[0]
    out = np.zeros((n,) * N)
    for u, k in zip(fields, offsets):
        B = u @ points.T  # B[a, b] = <u(x_a), x_b>
        for i in range(N):
            out = out + _pair(B, i, i, N) - _pair(B, i, (i + k) % N, N)
    return out


def _worst(T: np.ndarray) -> tuple[tuple, float]:
    i = np.unravel_index(int(np.argmin(T)), T.shape)
    return tuple(int(a) for a in i), float(T[i])


def check_n_cyclically_monotone(u, support: SupportSet, N: int, cap: int = CYCLE_CAP):
    """Return ``(ok, worst_cycle, worst_sum)`` over all N-cycles of atoms.

    Cycles may repeat atoms, which covers every shorter cycle as well.
    """
    u = np.asarray(u, dtype=float).reshape(support.n, -1)
    _guard(support.n, N, cap)
    T = _cycle_sums(u[None], support.points, N, [1])
    cyc, val = _worst(T)
    return val >= -MONO_TOL, cyc, val


def _joint_sums(family: VectorFieldFamily, support: SupportSet, cap: int) -> np.ndarray:
    if family.n != support.n:
        raise ValueError("family and support have different sizes")
    N = family.N
    _guard(support.n, N, cap)
    return _cycle_sums(family.fields, support.points, N, range(1, N))


def check_jointly_n_monotone(family: VectorFieldFamily, support: SupportSet, cap: int = CYCLE_CAP):
    """Return ``(ok, worst_cycle, worst_sum)`` for the joint cyclic pairing sums."""
    cyc, val = _worst(_joint_sums(family, support, cap))
    return val >= -MONO_TOL, cyc, val


def check_strict(family: VectorFieldFamily, support: SupportSet, cap: int = CYCLE_CAP) -> bool:
    """Joint sums nonnegative everywhere and positive on every cycle with x_1 != x_2."""
    T = _joint_sums(family, support, cap)
    if T.min() < -MONO_TOL:
        return False
    off = T[~np.eye(support.n, dtype=bool)]
    return bool(np.all(off > MONO_TOL))


@dataclass(frozen=True)
class PolarityResult:
    value: float
    involution: NInvolution
    optima: tuple

    @property
    def identity_unique(self) -> bool:
        return len(self.optima) == 1 and self.optima[0].is_identity()


def _require_uniform(mu: DiscreteMeasure) -> None:
    if not mu.is_uniform:
        raise ValueError("involution search needs uniform weights")


def polarity_value(family: VectorFieldFamily, mu: DiscreteMeasure, cap: int = ENUM_CAP, tol: float = 1e-9):
    """Exact min over N-involutions S of sum_x mu(x) sum_l <u_l(x), x - S^l x>."""
    _require_uniform(mu)
    n, N = mu.support.n, family.N
    if family.n != n:
        raise ValueError("family and measure live on different supports")
    pts, w, u = mu.support.points, mu.weights, family.fields
    base = sum(float(w @ np.einsum("ij,ij->i", u[l], pts)) for l in range(N - 1))
    vals = []
    for S in enumerate_involutions(n, N, cap):
        pair = sum(float(w @ np.einsum("ij,ij->i", u[l], pts[S.power(l + 1)])) for l in range(N - 1))
        vals.append((base - pair, S))
    best = min(v for v, _ in vals)
    optima = tuple(S for v, S in vals if v <= best + tol)
    return PolarityResult(best, min(optima, key=lambda S: S.perm), optima)


def vector_field_cost(family: VectorFieldFamily, support: SupportSet):
    """c(x) = sum_l <u_l(x_1), x_{l+1}>."""
    return build_cost_table(CostSpec("vector-field", family.N, family), support)


def slot_residuals(H: np.ndarray, S: NInvolution, family: VectorFieldFamily, points: np.ndarray) -> np.ndarray:
    """Per-atom violation of H(x, y) >= H(x, Sx, ...) + sum_l <u_l(x), y_l - S^l x>."""
    n, N = S.n, S.N
    orb = S.orbit_table()
    out = np.zeros(n)
    for a in range(n):
        lin = np.zeros((n,) * (N - 1))
        base = 0.0
        for l in range(N - 1):
            g = points @ family.fields[l, a]
            shape = [1] * (N - 1)
            shape[l] = n
            lin = lin + g.reshape(shape)
            base += g[orb[a, l + 1]]
        viol = H[tuple(orb[a])] + lin - base - H[a]
        out[a] = max(0.0, float(viol.max()))
    return out


def first_slot_residuals(H: np.ndarray, S: NInvolution, family: VectorFieldFamily, points: np.ndarray) -> np.ndarray:
    """Per-atom violation of H(z, Sx, ...) <= H(x, Sx, ...) + <g(x), z - x>,
    g(x) = -sum_l u_l(S^{N-l} x)."""
    n, N = S.n, S.N
    orb = S.orbit_table()
    out = np.zeros(n)
    for a in range(n):
        g = -sum(family.fields[l, orb[a, (N - l - 1) % N]] for l in range(N - 1))
        tail = tuple(orb[a, 1:])
        col = H[(slice(None),) + tail]
        viol = col - H[tuple(orb[a])] - (points - points[a]) @ g
        out[a] = max(0.0, float(viol.max()))
    return out


@dataclass(frozen=True)
class SingleFieldCertificate:
    """Two-variable F with F(x, x) = 0 paired along T = S^k.

    ``inclusion_residuals[a]`` is the worst violation at atom a of
    F(x, y) >= F(x, Tx) + <u(x), y - Tx> and
    F(z, Tx) <= F(x, Tx) - <u(Tx), z - x>,
    i.e. of (-u(Tx), u(x)) lying in the concave-convex subdifferential of F at (x, Tx).
    """

    F: np.ndarray
    slot: int
    pairing: NInvolution
    diagonal_max: float
    cyclic_max: float
    inclusion_residuals: np.ndarray


def single_field_slot(family: VectorFieldFamily) -> int | None:
    """Index of the only nonzero field if it is the first or the last one."""
    nz = [l for l in range(family.N - 1) if np.any(family.fields[l] != 0)]
    if len(nz) == 1 and nz[0] in (0, family.N - 2):
        return nz[0]
    return None


def _inclusion_residuals(F: np.ndarray, T: np.ndarray, u: np.ndarray, pts: np.ndarray) -> np.ndarray:
    n = F.shape[0]
    out = np.zeros(n)
    for a in range(n):
        conv = F[a, T[a]] + (pts - pts[T[a]]) @ u[a] - F[a]
        conc = F[:, T[a]] - F[a, T[a]] + (pts - pts[a]) @ u[T[a]]
        out[a] = max(0.0, float(conv.max()), float(conc.max()))
    return out


def pairwise_certificate(u: np.ndarray, S: NInvolution, k: int, points: np.ndarray, cap: int = CYCLE_CAP):
    """Find F on support pairs with F(x, x) = 0, every N-cycle sum of F <= 0,
    and the smallest uniform violation of the inclusion at T = S^k.

    Solved as a linear program in the off-diagonal entries of F.
    """
    n, N = S.n, S.N
    _guard(n, N, cap)
    T = S.power(k)
    off = [(a, b) for a in range(n) for b in range(n) if a != b]
    col = {ab: i for i, ab in enumerate(off)}
    nv = len(off) + 1  # last variable is the violation t
    rows, rhs = [], []

    def add(coefs: dict, bound: float):
        r = np.zeros(nv)
        for key, v in coefs.items():
            if key == "t":
                r[-1] += v
            elif key[0] != key[1]:
                r[col[key]] += v
        rows.append(r)
        rhs.append(bound)

    for a in range(n):
        ta = int(T[a])
        for y in range(n):
            # F(a, y) - F(a, Ta) + t >= <u(a), y - Ta>
            coefs = {"t": -1.0}
            coefs[(a, y)] = coefs.get((a, y), 0.0) - 1.0
            coefs[(a, ta)] = coefs.get((a, ta), 0.0) + 1.0
            add(coefs, -float(u[a] @ (points[y] - points[ta])))
        for z in range(n):
            # F(z, Ta) - F(a, Ta) - t <= -<u(Ta), z - a>
            coefs = {"t": -1.0}
            coefs[(z, ta)] = coefs.get((z, ta), 0.0) + 1.0
            coefs[(a, ta)] = coefs.get((a, ta), 0.0) - 1.0
            add(coefs, -float(u[ta] @ (points[z] - points[a])))
    cyc = set()
    for t in np.ndindex(*(n,) * N):
        key = tuple(sorted((t[i], t[(i + 1) % N]) for i in range(N) if t[i] != t[(i + 1) % N]))
        if key and key not in cyc:
            cyc.add(key)
            coefs: dict = {}
            for ab in key:
                coefs[ab] = coefs.get(ab, 0.0) + 1.0
            add(coefs, 0.0)
    A = np.array(rows)
    b = np.array(rhs)
    scale = 2.0 * max(1.0, float(np.abs(b).max())) * n
    cost = np.zeros(nv)
    cost[-1] = 1.0
    bounds = [(-scale, scale)] * len(off) + [(0.0, None)]
    res = linprog(cost, A_ub=A, b_ub=b, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"pairwise certificate LP failed: {res.message}")
    F = np.zeros((n, n))
    for (a, b_), v in zip(off, res.x[:-1]):
        F[a, b_] = v
    sums = np.zeros((n,) * N)
    for i in range(N):
        sums = sums + _pair(F, i, (i + 1) % N, N)
    return SingleFieldCertificate(
        F=F,
        slot=k - 1,
        pairing=NInvolution(tuple(int(i) for i in T), N),
        diagonal_max=float(np.abs(np.diagonal(F)).max()),
        cyclic_max=float(sums.max()),
        inclusion_residuals=_inclusion_residuals(F, T, u, points),
    )


@dataclass(frozen=True)
class CertificateReport:
    involution: NInvolution
    hamiltonian: HamiltonianTable
    slot_residuals: np.ndarray
    first_slot_residuals: np.ndarray
    mk_cyc: float
    mk_sym: float
    gap: float
    monotone_flags: dict
    method: str
    lower_bound_only: bool
    optima: tuple = ()
    single_field: SingleFieldCertificate | None = None
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def max_residual(self) -> float:
        vals = [float(self.slot_residuals.max()), float(self.first_slot_residuals.max())]
        if self.single_field is not None:
            vals.append(float(self.single_field.inclusion_residuals.max()))
        return max(vals)

    @property
    def certified(self) -> bool:
        """Zero-gap instances must carry residuals within tolerance; others are descriptive."""
        if self.gap < -GAP_TOL:
            return False
        return self.gap > GAP_TOL or self.max_residual <= CERT_TOL


def monotone_flags(family: VectorFieldFamily, support: SupportSet) -> dict:
    N = family.N
    joint, _, _ = check_jointly_n_monotone(family, support)
    cyclic = all(check_n_cyclically_monotone(family.fields[l], support, N)[0] for l in range(N - 1))
    return {"jointly": bool(joint), "strict": bool(check_strict(family, support)), "cyclic": bool(cyclic)}


def polar_decompose(
    family: VectorFieldFamily,
    mu: DiscreteMeasure,
    method: str = "auto",
    seed: int = 0,
    restarts: int = 20,
    cap: int = ENUM_CAP,
) -> CertificateReport:
    """Solve both problems for the vector-field cost and certify the decomposition.

    ``method="auto"`` enumerates involutions when their count fits under ``cap``
    and falls back to local search otherwise; the latter marks the report as
    lower-bound-only.
    """
    _require_uniform(mu)
    support = mu.support
    N = family.N
    c = vector_field_cost(family, support)
    rep = duality_report(c, mu)
    if method == "auto":
        method = "exact" if count_involutions(support.n, N) <= cap else "local"
    sol = solve_mk_cyc(c, mu, method, seed=seed, restarts=restarts, mk_sym=rep.mk_sym, cap=cap)
    S = sol.involution
    H = rep.hamiltonian.values
    pts = support.points
    single = None
    slot = single_field_slot(family)
    if slot is not None:
        single = pairwise_certificate(family.fields[slot], S, slot + 1, pts)
    return CertificateReport(
        involution=S,
        hamiltonian=rep.hamiltonian,
        slot_residuals=slot_residuals(H, S, family, pts),
        first_slot_residuals=first_slot_residuals(H, S, family, pts),
        mk_cyc=sol.value,
        mk_sym=rep.mk_sym,
        gap=rep.mk_sym - sol.value,
        monotone_flags=monotone_flags(family, support),
        method=method,
        lower_bound_only=method == "local",
        optima=sol.optima,
        single_field=single,
        extra={"dk1": rep.dk1, "dk2": rep.dk2},
    )
