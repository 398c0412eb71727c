"""Resampling schemes for exchangeable arrays and replicate post-processing.

Three schemes are provided:

* unit multinomial resampling for joint arrays — a tuple enters the
  replicate with weight equal to the product of its units' multiplicities;
* per-dimension multinomial ("pigeonhole") resampling for grid arrays;
* a multiplier perturbation of per-unit projection terms (k = 2 only).

Replicates are always drawn from per-replicate keyed substreams, so a
replicate set is bit-identical for a fixed plan no matter how many worker
threads evaluate it.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .arrays import JointArray, SeparateArray
from .empirical import Statistic, _evaluate
from .errors import DomainError, PlanError
from .rng import TAG_MULTIPLIER, TAG_REPLICATE, substream

__all__ = [
    "POLYADIC",
    "PIGEONHOLE",
    "MULTIPLIER",
    "BootstrapPlan",
    "UnitWeights",
    "ReplicateSet",
    "draw_polyadic_weights",
    "draw_pigeonhole_weights",
    "bootstrap_process_joint",
    "bootstrap_process_separate",
    "multiplier_process",
    "percentile_interval",
    "tail_pvalue",
]

POLYADIC = "polyadic-multinomial"
PIGEONHOLE = "pigeonhole"
MULTIPLIER = "multiplier"

_SCHEMES = (POLYADIC, PIGEONHOLE, MULTIPLIER)
_MULTIPLIER_DISTS = ("standard-normal", "rademacher")
_RECENTERINGS = ("sample-mean", "conditional-mean")


@dataclass(frozen=True)
class BootstrapPlan:
    """Scheme, replicate count, seed, and scheme options.

    ``multiplier`` selects the mean-0 variance-1 multiplier law (multiplier
    scheme only).  ``recenter`` picks the centering of weighted-mean
    replicates: ``"sample-mean"`` (the default, centered at the plain
    empirical mean) or ``"conditional-mean"`` (centered at the weighted
    mean's conditional expectation given the data — a diagnostic mode; the
    two coincide asymptotically).
    """

    scheme: str
    b: int
    seed: int
    multiplier: str = "standard-normal"
    recenter: str = "sample-mean"

    def __post_init__(self):
        if self.scheme not in _SCHEMES:
            raise PlanError(f"unknown scheme {self.scheme!r}; expected one of {_SCHEMES}")
        if self.b < 1:
            raise PlanError(f"replicate count must be >= 1, got {self.b}")
        if self.multiplier not in _MULTIPLIER_DISTS:
            raise PlanError(
                f"unknown multiplier distribution {self.multiplier!r}; "
                f"expected one of {_MULTIPLIER_DISTS}"
            )
        if self.recenter not in _RECENTERINGS:
            raise PlanError(
                f"unknown recentering {self.recenter!r}; expected one of {_RECENTERINGS}"
            )


@dataclass(frozen=True, eq=False)
class UnitWeights:
    """Nonnegative integer resampling multiplicities, one vector per dimension.

    Joint arrays use a single vector (all tuple positions draw from the
    same population); grids use one vector per dimension.  Each vector sums
    to its dimension's unit count.
    """

    per_dim: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "per_dim", tuple(np.asarray(w, dtype=np.int64) for w in self.per_dim)
        )
        for w in self.per_dim:
            if w.ndim != 1 or len(w) < 1:
                raise DomainError("each weight vector must be a nonempty 1-d array")
            if (w < 0).any() or w.sum() != len(w):
                raise DomainError(
                    f"weight vector must be nonnegative and sum to its length {len(w)}"
                )

    def cell_weights_joint(self, index: np.ndarray) -> np.ndarray:
        """Per-tuple weights: product of the (single) vector over tuple entries."""
        (w,) = self.per_dim
        out = w[index[:, 0] - 1].astype(float)
        for p in range(1, index.shape[1]):
            out *= w[index[:, p] - 1]
        return out

    def cell_weights_grid(self) -> np.ndarray:
        """Dense grid of per-cell weights: outer product across dimensions."""
        out = self.per_dim[0].astype(float)
        for w in self.per_dim[1:]:
            out = np.multiply.outer(out, w.astype(float))
        return out


@dataclass(frozen=True, eq=False)
class ReplicateSet:
    """Replicated values of a normalized process (or estimator) quantity.

    ``scale`` is the root-rate factor the draws carry (sqrt(n) for joint,
    sqrt(min dims) for grids); interval construction divides by it to get
    back to the estimator's units.
    """

    draws: np.ndarray
    scheme: str
    seed: int
    scale: float

    @property
    def b(self) -> int:
        return len(self.draws)


def draw_polyadic_weights(n: int, rng: np.random.Generator) -> UnitWeights:
    """Multiplicity vector of n uniform unit draws with replacement."""
    if n < 1:
        raise DomainError(f"unit count must be >= 1, got {n}")
    return UnitWeights(per_dim=(rng.multinomial(n, np.full(n, 1.0 / n)),))


def draw_pigeonhole_weights(dims: Sequence[int], rng: np.random.Generator) -> UnitWeights:
    """Independent multiplicity vectors, one per grid dimension."""
    dims = tuple(int(x) for x in dims)
    if len(dims) < 1 or any(x < 1 for x in dims):
        raise DomainError(f"grid dimensions must all be >= 1, got {dims}")
    return UnitWeights(
        per_dim=tuple(rng.multinomial(nj, np.full(nj, 1.0 / nj)) for nj in dims)
    )


def _joint_replicate_value(fv: np.ndarray, index: np.ndarray, n: int, m: int,
                           weights: UnitWeights, center: float) -> float:
    """One weighted-mean replicate for a joint array (shared by sampling and
    by the exhaustive-enumeration oracle in the tests)."""
    wcells = weights.cell_weights_joint(index)
    return math.sqrt(n) * (float(wcells @ fv) / m - center)


def _separate_replicate_value(fv_flat: np.ndarray, weights: UnitWeights,
                              m: int, root: float) -> float:
    wcells = weights.cell_weights_grid().reshape(-1)
    return root * float((wcells - 1.0) @ fv_flat) / m


def _run_replicates(b: int, threads: int, one) -> np.ndarray:
    """Evaluate ``one(b_index) -> float`` for every replicate.

    Results land in a preallocated array indexed by replicate, so the
    aggregation order (and hence the result) is independent of the thread
    count.
    """
    draws = np.empty(b)
    if threads <= 1:
        for i in range(b):
            draws[i] = one(i)
        return draws
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for i, val in enumerate(pool.map(one, range(b), chunksize=max(1, b // (4 * threads)))):
            draws[i] = val
    return draws


def bootstrap_process_joint(array: JointArray, f: Statistic, plan: BootstrapPlan,
                            threads: int = 1) -> ReplicateSet:
    """Unit-multinomial bootstrap replicates of the normalized mean deviation.

    Each replicate draws unit multiplicities, weights every tuple by the
    product of its units' multiplicities, and returns
    ``sqrt(n) * (weighted mean - center)``.
    """
    if plan.scheme != POLYADIC:
        raise PlanError(f"plan scheme is {plan.scheme!r}; this operation needs {POLYADIC!r}")
    n, k, m = array.n, array.k, array.m
    fv = _evaluate(f, array)
    pn = fv.mean()
    if plan.recenter == "sample-mean":
        center = pn
    else:
        center = (m / n ** k) * pn
    index = array.index
    root = math.sqrt(n)
    pvals = np.full(n, 1.0 / n)

    def one(i: int) -> float:
        rng = substream(plan.seed, TAG_REPLICATE, i)
        weights = UnitWeights(per_dim=(rng.multinomial(n, pvals),))
        return _joint_replicate_value(fv, index, n, m, weights, center)

    draws = _run_replicates(plan.b, threads, one)
    return ReplicateSet(draws=draws, scheme=plan.scheme, seed=plan.seed, scale=root)


def bootstrap_process_separate(array: SeparateArray, f: Statistic, plan: BootstrapPlan,
                               threads: int = 1) -> ReplicateSet:
    """Pigeonhole bootstrap replicates for grid arrays.

    Each replicate is ``sqrt(min dims) * mean((W - 1) * f)`` with cell
    weights the product of independent per-dimension multiplicities.
    """
    if plan.scheme != PIGEONHOLE:
        raise PlanError(f"plan scheme is {plan.scheme!r}; this operation needs {PIGEONHOLE!r}")
    dims, m = array.dims, array.m
    fv = _evaluate(f, array)
    root = math.sqrt(min(dims))

    def one(i: int) -> float:
        rng = substream(plan.seed, TAG_REPLICATE, i)
        weights = draw_pigeonhole_weights(dims, rng)
        return _separate_replicate_value(fv, weights, m, root)

    draws = _run_replicates(plan.b, threads, one)
    return ReplicateSet(draws=draws, scheme=plan.scheme, seed=plan.seed, scale=root)


def _unit_sum_terms(array: JointArray, fv: np.ndarray) -> np.ndarray:
    """Per-unit centered projection sums used by the multiplier scheme:
    mean of f over tuples containing the unit (either position), doubled,
    minus twice the overall mean."""
    n = array.n
    idx = array.index
    sums = np.bincount(idx[:, 0] - 1, weights=fv, minlength=n)
    sums += np.bincount(idx[:, 1] - 1, weights=fv, minlength=n)
    return sums / (n - 1) - 2.0 * fv.mean()


def _draw_multipliers(rng: np.random.Generator, dist: str, n: int) -> np.ndarray:
    if dist == "standard-normal":
        return rng.standard_normal(n)
    return rng.integers(0, 2, size=n) * 2.0 - 1.0


def multiplier_process(array: JointArray, f: Statistic, plan: BootstrapPlan,
                       threads: int = 1) -> ReplicateSet:
    """Multiplier bootstrap for dyadic (k = 2) arrays.

    Each replicate perturbs the per-unit projection terms with i.i.d.
    mean-0 variance-1 multipliers; its conditional variance given the data
    equals the plug-in covariance kernel estimate exactly.
    """
    if plan.scheme != MULTIPLIER:
        raise PlanError(f"plan scheme is {plan.scheme!r}; this operation needs {MULTIPLIER!r}")
    if array.k != 2:
        raise DomainError(
            f"the multiplier scheme is defined for k=2 arrays only, got k={array.k}"
        )
    n = array.n
    fv = _evaluate(f, array)
    terms = _unit_sum_terms(array, fv)
    root = math.sqrt(n)

    def one(i: int) -> float:
        rng = substream(plan.seed, TAG_MULTIPLIER, i)
        xi = _draw_multipliers(rng, plan.multiplier, n)
        return float(xi @ terms) / root

    draws = _run_replicates(plan.b, threads, one)
    return ReplicateSet(draws=draws, scheme=plan.scheme, seed=plan.seed, scale=root)


def percentile_interval(reps: ReplicateSet, point: float, level: float) -> tuple[float, float]:
    """Percentile-method interval centered on the point estimate.

    Uses linear-interpolation (type 7) quantiles of the draws divided by
    the replicate scale: ``[point + q_lo/scale, point + q_hi/scale]``.
    """
    if not 0.0 < level < 1.0:
        raise DomainError(f"level must be in (0, 1), got {level}")
    if reps.b < 20:
        raise DomainError(f"too few replicates for an interval: {reps.b} < 20")
    alpha = 1.0 - level
    q_lo, q_hi = np.quantile(reps.draws, [alpha / 2.0, 1.0 - alpha / 2.0], method="linear")
    return (point + q_lo / reps.scale, point + q_hi / reps.scale)


def tail_pvalue(reps: ReplicateSet, observed: float) -> float:
    """Upper-tail bootstrap p-value with the add-one correction.

    ``(1 + #{draws >= observed}) / (B + 1)``.  Ties count as exceedances,
    which keeps the p-value conservative and equal to 1 on degenerate
    all-equal data.
    """
    if reps.b < 1:
        raise DomainError("empty replicate set")
    return float((1 + np.sum(reps.draws >= observed)) / (reps.b + 1))
