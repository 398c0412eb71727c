"""Empirical measure, normalized process values, empirical cdf, and plug-in
estimates of the limiting covariance kernel of the array mean.

The covariance kernel estimators aggregate per-unit (per-cluster) averages
of centered statistic values — the unit-level projection of the statistic.
``docs/variance_estimator.md`` derives why this position-averaged form is
consistent for the limiting covariance and how it relates to the direct
sum over tuple pairs sharing a unit.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .arrays import JointArray, SeparateArray
from .errors import DegenerateSampleError, DomainError, EvaluationError

__all__ = [
    "Statistic",
    "component",
    "indicator_leq",
    "EmpiricalCdf",
    "KernelEstimate",
    "SeparateKernelEstimate",
    "empirical_mean",
    "empirical_process_value",
    "empirical_cdf",
    "estimate_kernel_joint",
    "estimate_kernel_separate",
]

AnyArray = Union[JointArray, SeparateArray]


@dataclass(frozen=True, eq=False)
class Statistic:
    """A real-valued function of one observation vector.

    ``fn`` is applied to the full (M, d) cell block at once and must return
    an (M,) vector; all evaluation in this package is vectorized.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    label: str = "f"

    def __call__(self, values: np.ndarray) -> np.ndarray:
        out = np.asarray(self.fn(values), dtype=float)
        if out.ndim == 0:
            out = np.broadcast_to(out, (values.shape[0],))
        if out.shape != (values.shape[0],):
            raise EvaluationError(
                f"statistic {self.label!r} returned shape {out.shape}, expected {(values.shape[0],)}"
            )
        return out


def component(j: int = 0, label: str | None = None) -> Statistic:
    """Statistic picking coordinate ``j`` of the observation vector."""
    return Statistic(lambda v: v[:, j], label or f"y[{j}]")


def indicator_leq(u: float, j: int = 0) -> Statistic:
    """Statistic 1{y_j <= u}."""
    return Statistic(lambda v: (v[:, j] <= u).astype(float), f"1{{y[{j}]<={u}}}")


def _evaluate(f: Statistic, array: AnyArray) -> np.ndarray:
    values = array.flat_values
    if values.shape[0] == 0:
        raise DomainError("array has no cells")
    out = f(values)
    if not np.all(np.isfinite(out)):
        bad = int(np.flatnonzero(~np.isfinite(out))[0])
        raise EvaluationError(
            f"statistic {f.label!r} is not finite at cell {array.tuple_at(bad)}"
        )
    return out


def empirical_mean(array: AnyArray, f: Statistic) -> float:
    """Equal-weight mean of ``f`` over all cells."""
    return float(np.mean(_evaluate(f, array)))


def empirical_process_value(array: AnyArray, f: Statistic, pf: float) -> float:
    """Root-rate-normalized deviation of the empirical mean from ``pf``.

    The rate count is the unit count for joint arrays and the smallest
    dimension for grids.
    """
    if not np.isfinite(pf):
        raise DomainError(f"population moment must be finite, got {pf}")
    return math.sqrt(array.rate_count) * (empirical_mean(array, f) - pf)


@dataclass(frozen=True, eq=False)
class EmpiricalCdf:
    """Right-continuous step function with jumps at observed values."""

    support: np.ndarray   # sorted distinct observed values
    cum: np.ndarray       # cdf evaluated at each support point

    def __call__(self, u) -> np.ndarray | float:
        u = np.asarray(u, dtype=float)
        pos = np.searchsorted(self.support, u, side="right")
        out = np.where(pos > 0, self.cum[np.maximum(pos - 1, 0)], 0.0)
        return float(out) if out.ndim == 0 else out

    @property
    def jump_points(self) -> np.ndarray:
        return self.support

    def quantile(self, tau: float) -> float:
        """Left-continuous generalized inverse: inf{y : F(y) >= tau}."""
        if not 0.0 < tau < 1.0:
            raise DomainError(f"quantile level must be in (0, 1), got {tau}")
        pos = int(np.searchsorted(self.cum, tau, side="left"))
        return float(self.support[min(pos, len(self.support) - 1)])


def empirical_cdf(array: AnyArray, comp: int = 0) -> EmpiricalCdf:
    """Empirical cdf of one coordinate of the cells, equal cell weights."""
    if not 0 <= comp < array.d:
        raise DomainError(f"component {comp} out of range for d={array.d}")
    vals = _evaluate(component(comp), array)
    support, counts = np.unique(vals, return_counts=True)
    return EmpiricalCdf(support=support, cum=np.cumsum(counts) / vals.shape[0])


# ---------------------------------------------------------------------------
# covariance kernel plug-ins
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class KernelEstimate:
    """Plug-in estimate of the limiting covariance of the normalized mean.

    ``value`` equals ``(k^2 / n) * sum_a g_first[a] * g_second[a]`` where
    the ``g`` vectors are the per-unit averages of the centered statistic
    over all tuples containing that unit.
    """

    value: float
    g_first: np.ndarray
    g_second: np.ndarray
    n: int
    k: int

    def variance(self) -> float:
        """Nonnegative version for variance use (diagonal clamped at zero)."""
        if self.value < 0.0:
            warnings.warn(
                "covariance kernel estimate clamped at 0; the limit variance may be "
                "degenerate and normal/bootstrap approximations unreliable",
                RuntimeWarning,
                stacklevel=2,
            )
            return 0.0
        return self.value


@dataclass(frozen=True, eq=False)
class SeparateKernelEstimate:
    """Covariance estimate for grid arrays: per-dimension projections weighted
    by the dimension balance ratios min(dims)/dims[j]."""

    value: float
    g_first: tuple[np.ndarray, ...]
    g_second: tuple[np.ndarray, ...]
    lambdas: tuple[float, ...]
    dims: tuple[int, ...]

    def variance(self) -> float:
        if self.value < 0.0:
            warnings.warn(
                "covariance kernel estimate clamped at 0; the limit variance may be "
                "degenerate and normal/bootstrap approximations unreliable",
                RuntimeWarning,
                stacklevel=2,
            )
            return 0.0
        return self.value


def unit_projections(array: JointArray, centered: np.ndarray) -> np.ndarray:
    """Per-unit averages of a centered cell vector over tuples containing the unit.

    Each unit appears in exactly ``k * (n-1)! / (n-k)!`` tuples; the divisor
    is that exact count.
    """
    n, k = array.n, array.k
    idx = array.index
    sums = np.zeros(n)
    for p in range(k):
        sums += np.bincount(idx[:, p] - 1, weights=centered, minlength=n)
    count = k * math.perm(n - 1, k - 1)
    return sums / count


def estimate_kernel_joint(array: JointArray, f1: Statistic, f2: Statistic | None = None) -> KernelEstimate:
    """Covariance kernel estimate for a joint array.

    Symmetric in the two statistics and nonnegative on the diagonal by
    construction (it is a sum of products of matched projections).
    """
    n, k = array.n, array.k
    if n <= k:
        raise DegenerateSampleError(
            f"kernel estimation needs n > k, got n={n}, k={k}"
        )
    v1 = _evaluate(f1, array)
    e1 = v1 - v1.mean()
    g1 = unit_projections(array, e1)
    if f2 is None or f2 is f1:
        g2 = g1
    else:
        v2 = _evaluate(f2, array)
        g2 = unit_projections(array, v2 - v2.mean())
    value = (k * k / n) * float(np.sum(g1 * g2))
    return KernelEstimate(value=value, g_first=g1, g_second=g2, n=n, k=k)


def dimension_projections(array: SeparateArray, centered_grid: np.ndarray) -> list[np.ndarray]:
    """Per-dimension slice averages of a centered grid (one vector per axis)."""
    k = array.k
    return [
        centered_grid.mean(axis=tuple(j for j in range(k) if j != axis))
        for axis in range(k)
    ]


def estimate_kernel_separate(array: SeparateArray, f1: Statistic,
                             f2: Statistic | None = None) -> SeparateKernelEstimate:
    """Covariance kernel estimate for a grid array.

    Sums per-dimension projection products with weights min(dims)/dims[j],
    so strongly unbalanced dimensions contribute proportionally less.
    """
    dims = array.dims
    if any(x < 2 for x in dims):
        raise DegenerateSampleError(
            f"kernel estimation needs every dimension >= 2, got {dims}"
        )
    nmin = min(dims)
    v1 = _evaluate(f1, array)
    grid1 = (v1 - v1.mean()).reshape(dims)
    g1 = dimension_projections(array, grid1)
    if f2 is None or f2 is f1:
        g2 = g1
    else:
        v2 = _evaluate(f2, array)
        g2 = dimension_projections(array, (v2 - v2.mean()).reshape(dims))
    lambdas = tuple(nmin / x for x in dims)
    value = float(
        sum(lam * np.sum(a * b) / nj for lam, nj, a, b in zip(lambdas, dims, g1, g2))
    )
    return SeparateKernelEstimate(
        value=value,
        g_first=tuple(g1),
        g_second=tuple(g2),
        lambdas=lambdas,
        dims=dims,
    )
