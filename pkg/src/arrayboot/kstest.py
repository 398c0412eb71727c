"""Paired Kolmogorov–Smirnov test for distributional stability across two
components of a dyadic array, with bootstrap p-values under competing
dependence assumptions.

The statistic is the sup over thresholds of the absolute difference of the
two components' empirical cdfs.  Both empirical cdfs are step functions
jumping only at observed values, so the sup is attained on the pooled set
of observed values and evaluation is restricted to that grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arrays import JointArray, rank_combinations
from .bootstrap import POLYADIC, BootstrapPlan, ReplicateSet, _run_replicates, tail_pvalue
from .errors import DomainError, PlanError
from .rng import TAG_REPLICATE, substream

__all__ = ["ASSUMPTIONS", "KsResult", "ks_paired", "ks_compare_assumptions"]

# report order is frozen: independence first, dyadic exchangeability last
ASSUMPTIONS = ("iid", "pairwise", "oneway-exporter", "oneway-importer", "dyadic")


@dataclass(frozen=True, eq=False)
class KsResult:
    """Paired KS statistic with bootstrap p-values keyed by assumption."""

    statistic: float
    pvalues: dict[str, float]
    b: int
    argmax: float

    def __post_init__(self):
        if not 0.0 <= self.statistic <= 1.0:
            raise DomainError(f"KS statistic must be in [0, 1], got {self.statistic}")


class _PairedKs:
    """Precomputed sort/grid structures shared by all replicates."""

    def __init__(self, array: JointArray, comp_a: int, comp_b: int):
        if array.k != 2:
            raise DomainError(f"paired KS test is defined for k=2 arrays, got k={array.k}")
        if array.d < 2:
            raise DomainError(f"need at least two components, array has d={array.d}")
        if comp_a == comp_b:
            raise DomainError("the two components must be distinct")
        for c in (comp_a, comp_b):
            if not 0 <= c < array.d:
                raise DomainError(f"component {c} out of range for d={array.d}")
        self.array = array
        self.m = array.m
        va = array.values[:, comp_a]
        vb = array.values[:, comp_b]
        self.order_a = np.argsort(va, kind="stable")
        self.order_b = np.argsort(vb, kind="stable")
        sa = va[self.order_a]
        sb = vb[self.order_b]
        self.grid = np.unique(np.concatenate([sa, sb]))
        # of cells with value <= u, per grid point, for each component
        self.pos_a = np.searchsorted(sa, self.grid, side="right")
        self.pos_b = np.searchsorted(sb, self.grid, side="right")
        diffs = np.abs(self.pos_a - self.pos_b) / self.m
        top = int(np.argmax(diffs))
        self.statistic = float(diffs[top])
        self.argmax = float(self.grid[top])

    def replicate_sup(self, delta: np.ndarray) -> float:
        """Sup over the grid of |mean(delta * (1a - 1b))| for cell weights-minus-one."""
        ca = np.cumsum(delta[self.order_a])
        cb = np.cumsum(delta[self.order_b])
        fa = np.where(self.pos_a > 0, ca[self.pos_a - 1], 0.0)
        fb = np.where(self.pos_b > 0, cb[self.pos_b - 1], 0.0)
        return float(np.max(np.abs(fa - fb)) / self.m)


def _delta_factory(prep: _PairedKs, assumption: str):
    """Per-replicate (weights - 1) cell vectors for one dependence assumption."""
    array = prep.array
    n, m = array.n, array.m
    index = array.index
    if assumption == "dyadic":
        pvals = np.full(n, 1.0 / n)

        def draw(rng):
            w = rng.multinomial(n, pvals)
            return (w[index[:, 0] - 1] * w[index[:, 1] - 1]).astype(float) - 1.0

    elif assumption == "iid":
        pvals = np.full(m, 1.0 / m)

        def draw(rng):
            return rng.multinomial(m, pvals).astype(float) - 1.0

    elif assumption == "pairwise":
        pair_ranks = rank_combinations(np.sort(index, axis=1), n)
        npairs = m // 2
        pvals = np.full(npairs, 1.0 / npairs)

        def draw(rng):
            w = rng.multinomial(npairs, pvals)
            return w[pair_ranks].astype(float) - 1.0

    elif assumption in ("oneway-exporter", "oneway-importer"):
        col = 0 if assumption == "oneway-exporter" else 1
        pvals = np.full(n, 1.0 / n)

        def draw(rng):
            w = rng.multinomial(n, pvals)
            return w[index[:, col] - 1].astype(float) - 1.0

    else:
        raise DomainError(f"unknown assumption {assumption!r}; expected one of {ASSUMPTIONS}")
    return draw


def _bootstrap_pvalue(prep: _PairedKs, assumption: str, b: int, seed: int,
                      threads: int = 1) -> float:
    draw = _delta_factory(prep, assumption)
    tag = ASSUMPTIONS.index(assumption)

    def one(i: int) -> float:
        rng = substream(seed, TAG_REPLICATE, tag, i)
        return prep.replicate_sup(draw(rng))

    draws = _run_replicates(b, threads, one)
    reps = ReplicateSet(draws=draws, scheme=assumption, seed=seed, scale=1.0)
    return tail_pvalue(reps, prep.statistic)


def ks_paired(array: JointArray, comp_a: int, comp_b: int, plan: BootstrapPlan,
              threads: int = 1) -> KsResult:
    """Paired KS statistic with the dyadic (unit-multinomial) bootstrap p-value."""
    if plan.scheme != POLYADIC:
        raise PlanError(f"plan scheme is {plan.scheme!r}; the paired KS test needs {POLYADIC!r}")
    prep = _PairedKs(array, comp_a, comp_b)
    p = _bootstrap_pvalue(prep, "dyadic", plan.b, plan.seed, threads)
    return KsResult(statistic=prep.statistic, pvalues={"dyadic": p}, b=plan.b,
                    argmax=prep.argmax)


def ks_compare_assumptions(array: JointArray, comp_a: int, comp_b: int, b: int, seed: int,
                           assumptions: tuple[str, ...] = ASSUMPTIONS,
                           threads: int = 1) -> KsResult:
    """Paired KS statistic with bootstrap p-values under several dependence
    assumptions, each resampled at the matching granularity:

    * ``iid`` — multinomial over cells;
    * ``pairwise`` — multinomial over unordered pairs, both orientations
      inheriting the pair's weight;
    * ``oneway-exporter`` / ``oneway-importer`` — multinomial over first /
      second index units, cells inheriting that unit's weight;
    * ``dyadic`` — unit multinomial with product cell weights.
    """
    if b < 1:
        raise DomainError(f"replicate count must be >= 1, got {b}")
    prep = _PairedKs(array, comp_a, comp_b)
    unknown = [a for a in assumptions if a not in ASSUMPTIONS]
    if unknown:
        raise DomainError(f"unknown assumptions {unknown}; expected among {ASSUMPTIONS}")
    pvalues = {
        name: _bootstrap_pvalue(prep, name, b, seed, threads)
        for name in ASSUMPTIONS
        if name in assumptions
    }
    return KsResult(statistic=prep.statistic, pvalues=pvalues, b=b, argmax=prep.argmax)
