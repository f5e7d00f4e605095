"""Seeded instance builders shared by the test modules."""

import numpy as np

from symot.core import (
    CostSpec,
    DiscreteMeasure,
    SupportSet,
    VectorFieldFamily,
    build_cost_table,
)
from symot.symmetrization import orbit_sum


def cloud(rng, n, d, radius=1.0):
    """n distinct points drawn uniformly from the ball of the given radius."""
    dirs = rng.normal(size=(n, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    r = rng.uniform(0.05, 1.0, size=(n, 1)) ** (1.0 / d)
    return SupportSet(np.round(dirs * r * radius * (1 - 1e-9), 12), radius)


def uniform(support):
    return DiscreteMeasure.uniform(support)


def random_family(rng, support, N, scale=1.0):
    f = rng.normal(size=(N - 1, support.n, support.d)) * scale
    return VectorFieldFamily(f)


def quadratic_gradient_family(rng, support, N):
    """Fields x -> A_l x + b_l with A_l symmetric positive definite."""
    d = support.d
    fields = []
    for _ in range(N - 1):
        B = rng.normal(size=(d, d))
        A = B @ B.T + 0.1 * np.eye(d)
        b = rng.normal(size=d)
        fields.append(support.points @ A + b)
    return VectorFieldFamily(np.stack(fields))


def cost(family, support, N, fields=None):
    if family == "vector-field":
        return build_cost_table(CostSpec("vector-field", N, fields), support)
    return build_cost_table(CostSpec(family, N), support)


def sub_antisymmetric(rng, n, N, scale=1.0):
    """Antisymmetric part of a Gaussian table minus a nonnegative off-diagonal bump."""
    G = rng.normal(size=(n,) * N) * scale
    A = G - orbit_sum(G) / N
    P = np.abs(rng.normal(size=(n,) * N)) * scale * 0.5
    P[(np.arange(n),) * N] = 0.0
    return A - P


# one (criterion, passed, detail) entry per acceptance check, printed in the terminal summary
ACCEPTANCE: list = []


def record(k, ok, detail):
    ACCEPTANCE.append((k, bool(ok), detail))
    line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
    print(line)
    return line
