"""Moment-based estimation on dyadic arrays: generic root-finding for moment
conditions, Poisson pseudo maximum likelihood for multiplicative (gravity)
models, plug-in quantiles, and variance estimates under competing
dependence assumptions.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import qr
from scipy.special import ndtr, ndtri

from .arrays import JointArray, LoadedTable, rank_tuples
from .bootstrap import (
    POLYADIC,
    BootstrapPlan,
    ReplicateSet,
    _run_replicates,
    percentile_interval,
)
from .empirical import Statistic, empirical_cdf, unit_projections
from .errors import (
    CollinearityError,
    DomainError,
    InferenceError,
    NonConvergenceError,
    PlanError,
    RankError,
)
from .rng import TAG_REPLICATE, substream

__all__ = [
    "ASSUMPTION_ORDER",
    "MomentModel",
    "GravityData",
    "ZFit",
    "PpmlFit",
    "BootstrapInference",
    "QuantileEstimate",
    "InferenceReport",
    "zestimate",
    "ppml_fit",
    "ppml_bootstrap_pvalues",
    "variance_compare",
    "quantile_estimate",
    "ppml_inference",
]

ASSUMPTION_ORDER = (
    "iid",
    "pairwise",
    "oneway-exporter",
    "oneway-importer",
    "dyadic-kernel",
    "dyadic-bootstrap",
)

_SCORE_TOL = 1e-8
_STEP_TOL = 1e-10
_MAX_ITER = 200
_MAX_HALVINGS = 45


# ---------------------------------------------------------------------------
# generic moment estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MomentModel:
    """A p-dimensional moment condition on single observations.

    ``psi(values, theta)`` maps the (M, d) cell block and a parameter to the
    (M, p) matrix of moment contributions.  ``jacobian(values, theta)``
    optionally returns the (p, p) derivative of the *mean* moment; when
    absent a central finite difference is used.
    """

    psi: Callable[[np.ndarray, np.ndarray], np.ndarray]
    p: int
    jacobian: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    label: str = ""


@dataclass(frozen=True, eq=False)
class ZFit:
    theta: np.ndarray
    iterations: int
    score_norm: float


def _fd_jacobian(mean_moment, theta: np.ndarray) -> np.ndarray:
    p = len(theta)
    jac = np.empty((p, p))
    for j in range(p):
        h = 1e-6 * (1.0 + abs(theta[j]))
        up = theta.copy()
        dn = theta.copy()
        up[j] += h
        dn[j] -= h
        jac[:, j] = (mean_moment(up) - mean_moment(dn)) / (2.0 * h)
    return jac


def zestimate(array: JointArray, model: MomentModel, theta0: Sequence[float],
              max_iter: int = _MAX_ITER) -> ZFit:
    """Newton iterations with step-halving on the mean moment condition.

    Stops when the max-norm of the mean moment falls below
    ``1e-8 * (1 + max-norm at the starting point)``.
    """
    values = array.flat_values
    theta = np.asarray(theta0, dtype=float).copy()
    if theta.shape != (model.p,):
        raise DomainError(f"starting point has shape {theta.shape}, expected {(model.p,)}")

    def mean_moment(th: np.ndarray) -> np.ndarray:
        out = np.asarray(model.psi(values, th), dtype=float)
        if out.shape != (values.shape[0], model.p):
            raise DomainError(
                f"moment function returned shape {out.shape}, "
                f"expected {(values.shape[0], model.p)}"
            )
        return out.mean(axis=0)

    g = mean_moment(theta)
    scale = 1.0 + float(np.max(np.abs(g)))
    target = _SCORE_TOL * scale
    norm = float(np.max(np.abs(g)))
    for it in range(1, max_iter + 1):
        if norm <= target:
            return ZFit(theta=theta, iterations=it - 1, score_norm=norm)
        if model.jacobian is not None:
            jac = np.asarray(model.jacobian(values, theta), dtype=float)
        else:
            jac = _fd_jacobian(mean_moment, theta)
        try:
            step = np.linalg.solve(jac, -g)
        except np.linalg.LinAlgError:
            raise RankError("singular jacobian in moment-condition solve") from None
        lam = 1.0
        for _ in range(_MAX_HALVINGS):
            cand = theta + lam * step
            g_new = mean_moment(cand)
            norm_new = float(np.max(np.abs(g_new)))
            if np.isfinite(norm_new) and (norm_new < norm or norm_new <= target):
                theta, g, norm = cand, g_new, norm_new
                break
            lam *= 0.5
        else:
            raise NonConvergenceError(
                f"line search stalled at iteration {it} (norm {norm:.3e})",
                last_iterate=theta, norm=norm,
            )
    if norm <= target:
        return ZFit(theta=theta, iterations=max_iter, score_norm=norm)
    raise NonConvergenceError(
        f"no convergence in {max_iter} iterations (norm {norm:.3e}, target {target:.3e})",
        last_iterate=theta, norm=norm,
    )


# ---------------------------------------------------------------------------
# gravity data and PPML
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GravityData:
    """Nonnegative flows and regressors on every ordered pair of n units.

    ``x`` includes the leading intercept column; rows are aligned with the
    lexicographic pair order of ``JointArray``.
    """

    n: int
    index: np.ndarray          # (M, 2) pair tuples
    flows: np.ndarray          # (M,)
    x: np.ndarray              # (M, q) including intercept
    columns: list[str]

    def __post_init__(self):
        flows = np.asarray(self.flows, dtype=float)
        x = np.asarray(self.x, dtype=float)
        m = self.n * (self.n - 1)
        if flows.shape != (m,) or x.shape[0] != m:
            raise DomainError(f"expected {m} ordered pairs, got {flows.shape} / {x.shape}")
        if (flows < 0).any():
            raise DomainError("flows must be nonnegative")
        if not np.all(np.isfinite(flows)) or not np.all(np.isfinite(x)):
            raise DomainError("flows and regressors must be finite")
        if x.shape[1] != len(self.columns):
            raise DomainError(f"{x.shape[1]} regressor columns but {len(self.columns)} names")
        if not np.all(x[:, 0] == 1.0):
            raise DomainError("first regressor column must be the intercept (all ones)")
        object.__setattr__(self, "flows", flows)
        object.__setattr__(self, "x", x)

    @property
    def m(self) -> int:
        return len(self.flows)

    @classmethod
    def from_table(cls, table: LoadedTable, flow: str, regressors: Sequence[str]) -> "GravityData":
        """Build from a loaded dyadic CSV by column name (intercept prepended)."""
        names = table.value_names
        missing = [c for c in [flow, *regressors] if c not in names]
        if missing:
            raise DomainError(f"column(s) not in input: {', '.join(missing)}")
        cols = [names.index(c) for c in regressors]
        arr = table.array
        x = np.column_stack([np.ones(arr.m), arr.values[:, cols]])
        return cls(
            n=arr.n,
            index=arr.index,
            flows=arr.values[:, names.index(flow)],
            x=x,
            columns=["intercept", *regressors],
        )

    @classmethod
    def from_array(cls, array: JointArray, flow_comp: int = 0,
                   regressor_comps: Sequence[int] = (), names: Sequence[str] | None = None) -> "GravityData":
        regressor_comps = list(regressor_comps)
        if names is None:
            names = [f"x{j}" for j in regressor_comps]
        x = np.column_stack([np.ones(array.m), array.values[:, regressor_comps]])
        return cls(n=array.n, index=array.index, flows=array.values[:, flow_comp],
                   x=x, columns=["intercept", *names])


@dataclass(frozen=True, eq=False)
class PpmlFit:
    theta: np.ndarray
    iterations: int
    score_norm: float
    mu: np.ndarray


def _check_rank(x: np.ndarray, weights: np.ndarray, columns: list[str]) -> None:
    active = weights > 0
    xw = x[active] * np.sqrt(weights[active])[:, None]
    _, r, piv = qr(xw, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(xw.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    if rank < x.shape[1]:
        bad = [columns[j] for j in sorted(piv[rank:])]
        raise CollinearityError(
            f"design matrix is rank deficient; offending column(s): {', '.join(bad)}",
            columns=bad,
        )


def _quasi_deviance(eta: np.ndarray, t: np.ndarray, w: np.ndarray) -> float:
    """Negative quasi log-likelihood sum(w * (exp(eta) - t*eta)); +inf on overflow."""
    with np.errstate(over="ignore"):
        mu = np.exp(eta)
    val = float(np.sum(w * mu) - np.sum(w * t * eta))
    return val if np.isfinite(val) else np.inf


def ppml_fit(data: GravityData, weights: np.ndarray | None = None,
             theta0: np.ndarray | None = None, max_iter: int = _MAX_ITER,
             check_rank: bool = True) -> PpmlFit:
    """Poisson pseudo maximum likelihood via iteratively reweighted least squares.

    Solves ``sum_i w_i x_i' (t_i - exp(x_i theta)) = 0`` with step-halving
    on the quasi-deviance.  Convergence requires the mean score max-norm
    below ``1e-8 * (1 + mean flow)`` and a relative parameter change below
    ``1e-10``.
    """
    x, t = data.x, data.flows
    m, q = x.shape
    w = np.ones(m) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (m,) or (w < 0).any():
        raise DomainError("weights must be a nonnegative vector, one per ordered pair")
    wtot = float(w.sum())
    if wtot <= 0:
        raise DomainError("all weights are zero")
    mean_flow = float((w @ t) / wtot)
    if mean_flow <= 0:
        raise DomainError("weighted mean flow is zero; the multiplicative model is undefined")
    if check_rank:
        _check_rank(x, w, data.columns)
    scale = 1.0 + mean_flow
    target = _SCORE_TOL * scale
    if theta0 is None:
        theta = np.zeros(q)
        theta[0] = math.log(mean_flow)
    else:
        theta = np.asarray(theta0, dtype=float).copy()
    eta = x @ theta
    obj = _quasi_deviance(eta, t, w)
    if not np.isfinite(obj):
        raise DomainError("starting point overflows the exponential mean")
    rel_step = np.inf
    for it in range(1, max_iter + 1):
        mu = np.exp(eta)
        resid = w * (t - mu)
        score = (x.T @ resid) / m
        norm = float(np.max(np.abs(score)))
        if norm <= target and rel_step <= _STEP_TOL:
            return PpmlFit(theta=theta, iterations=it - 1, score_norm=norm, mu=mu)
        info = x.T @ (x * (w * mu)[:, None])
        try:
            step = np.linalg.solve(info, x.T @ resid)
        except np.linalg.LinAlgError:
            raise CollinearityError(
                "weighted information matrix is singular (resampled design may have "
                "lost a column)", columns=[]
            ) from None
        lam = 1.0
        for _ in range(_MAX_HALVINGS):
            cand = theta + lam * step
            eta_new = x @ cand
            obj_new = _quasi_deviance(eta_new, t, w)
            # near the optimum the deviance improvement drops below its own
            # floating-point resolution; accept any non-increasing step there
            if obj_new < obj + 1e-12 * (1.0 + abs(obj)) and np.isfinite(obj_new):
                rel_step = float(np.linalg.norm(lam * step) / max(1.0, np.linalg.norm(cand)))
                theta, eta, obj = cand, eta_new, obj_new
                break
            lam *= 0.5
        else:
            if not np.isfinite(_quasi_deviance(x @ (theta + step), t, w)):
                raise NonConvergenceError(
                    f"exponential overflow persisted through step halving at iteration {it}",
                    last_iterate=theta, norm=norm,
                )
            # objective already at its floor; accept convergence if score is tiny
            if norm <= target:
                return PpmlFit(theta=theta, iterations=it, score_norm=norm, mu=np.exp(eta))
            raise NonConvergenceError(
                f"step halving stalled at iteration {it} (score norm {norm:.3e})",
                last_iterate=theta, norm=norm,
            )
    mu = np.exp(eta)
    norm = float(np.max(np.abs((x.T @ (w * (t - mu))) / m)))
    if norm <= target and rel_step <= _STEP_TOL:
        return PpmlFit(theta=theta, iterations=max_iter, score_norm=norm, mu=mu)
    raise NonConvergenceError(
        f"no convergence in {max_iter} iterations (score norm {norm:.3e})",
        last_iterate=theta, norm=norm,
    )


# ---------------------------------------------------------------------------
# variance estimation under competing dependence assumptions
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class VarianceEntry:
    se: np.ndarray
    pvalues: np.ndarray
    cov: np.ndarray
    clamped: bool = False
    degenerate: np.ndarray | None = None  # bool per coordinate


def _psd_clamp(b: np.ndarray) -> tuple[np.ndarray, bool]:
    b = 0.5 * (b + b.T)
    vals, vecs = np.linalg.eigh(b)
    tol = -1e-12 * max(1.0, float(np.max(np.abs(vals))))
    if vals.min() >= tol:
        return b, False
    clamped = vals.min() < tol
    vals = np.clip(vals, 0.0, None)
    return (vecs * vals) @ vecs.T, bool(clamped)


def variance_compare(data: GravityData, fit: PpmlFit, level: float = 0.95) -> dict[str, VarianceEntry]:
    """Sandwich variances of the PPML coefficients under named dependence
    assumptions: independent pairs, pairwise (orientation) clustering,
    one-way clustering on either index, and the dyadic projection kernel.
    """
    x, t, mu = data.x, data.flows, fit.mu
    idx = data.index
    n, q = data.n, x.shape[1]
    scores = x * (t - mu)[:, None]           # (M, q) moment contributions
    bread = x.T @ (x * mu[:, None])          # (q, q)
    try:
        bread_inv = np.linalg.inv(bread)
    except np.linalg.LinAlgError:
        raise RankError("information matrix is singular at the fitted point") from None

    meats: dict[str, np.ndarray] = {}
    meats["iid"] = scores.T @ scores
    rev = rank_tuples(idx[:, ::-1], n)
    meats["pairwise"] = meats["iid"] + scores.T @ scores[rev]
    for name, col in (("oneway-exporter", 0), ("oneway-importer", 1)):
        sums = np.zeros((n, q))
        np.add.at(sums, idx[:, col] - 1, scores)
        meats[name] = sums.T @ sums
    center = scores.mean(axis=0)
    proj = np.zeros((n, q))
    np.add.at(proj, idx[:, 0] - 1, scores - center)
    np.add.at(proj, idx[:, 1] - 1, scores - center)
    meats["dyadic-kernel"] = proj.T @ proj

    out: dict[str, VarianceEntry] = {}
    theta = fit.theta
    for name, meat in meats.items():
        meat, clamped = _psd_clamp(meat)
        if clamped:
            warnings.warn(
                f"{name} variance assembly was not positive semidefinite; negative "
                "eigenvalues clamped to zero", RuntimeWarning, stacklevel=2,
            )
        cov = bread_inv @ meat @ bread_inv.T
        var = np.clip(np.diag(cov), 0.0, None)
        se = np.sqrt(var)
        degenerate = se <= 1e-12 * (1.0 + np.abs(theta))
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(degenerate, np.nan, np.abs(theta) / np.where(se > 0, se, np.nan))
        pv = 2.0 * (1.0 - ndtr(z))
        if name == "dyadic-kernel" and degenerate.any():
            warnings.warn(
                "dyadic projection variance is (numerically) zero for some "
                "coordinates; the limit may be degenerate and normal-approximation "
                "p-values are withheld for them", RuntimeWarning, stacklevel=2,
            )
        out[name] = VarianceEntry(se=se, pvalues=pv, cov=cov, clamped=clamped,
                                  degenerate=degenerate)
    return out


# ---------------------------------------------------------------------------
# bootstrap inference for PPML
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BootstrapInference:
    pvalues: np.ndarray
    se: np.ndarray
    draws: np.ndarray          # (b_used, p) replicate coefficients
    b_requested: int
    dropped: int

    @property
    def b_used(self) -> int:
        return len(self.draws)


def ppml_bootstrap_pvalues(data: GravityData, plan: BootstrapPlan,
                           fit: PpmlFit | None = None, threads: int = 1,
                           max_failure_share: float = 0.10) -> BootstrapInference:
    """Replicate the PPML fit under unit-multinomial resampling.

    Each replicate weights every pair's score contribution by the product
    of its units' multiplicities and refits, warm-starting at the full-data
    coefficients.  The p-value for a zero null on coordinate j is the
    add-one-corrected share of replicates with
    ``|theta*_j - theta_j| >= |theta_j|``.  Replicates that fail to refit
    are dropped and counted; more than ``max_failure_share`` failures
    invalidates the report.
    """
    if plan.scheme != POLYADIC:
        raise PlanError(f"plan scheme is {plan.scheme!r}; PPML bootstrap needs {POLYADIC!r}")
    if fit is None:
        fit = ppml_fit(data)
    n = data.n
    idx = data.index
    pvals = np.full(n, 1.0 / n)
    theta = fit.theta

    def one(i: int):
        rng = substream(plan.seed, TAG_REPLICATE, i)
        w_units = rng.multinomial(n, pvals)
        w = (w_units[idx[:, 0] - 1] * w_units[idx[:, 1] - 1]).astype(float)
        try:
            refit = ppml_fit(data, weights=w, theta0=theta, check_rank=False)
        except (NonConvergenceError, RankError, DomainError):
            return None
        return refit.theta

    results = [None] * plan.b
    if threads <= 1:
        for i in range(plan.b):
            results[i] = one(i)
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            for i, val in enumerate(pool.map(one, range(plan.b))):
                results[i] = val
    kept = [r for r in results if r is not None]
    dropped = plan.b - len(kept)
    if dropped > max_failure_share * plan.b:
        raise InferenceError(
            f"{dropped}/{plan.b} bootstrap refits failed; report unusable"
        )
    draws = np.asarray(kept)
    b_used = len(draws)
    exceed = np.abs(draws - theta) >= np.abs(theta)
    pvalues = (1.0 + exceed.sum(axis=0)) / (b_used + 1.0)
    se = draws.std(axis=0, ddof=1) if b_used > 1 else np.full(len(theta), np.nan)
    return BootstrapInference(pvalues=pvalues, se=se, draws=draws,
                              b_requested=plan.b, dropped=dropped)


# ---------------------------------------------------------------------------
# plug-in quantiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class QuantileEstimate:
    point: float
    interval: tuple[float, float]
    replicates: ReplicateSet
    tied: bool
    dropped: int


def quantile_estimate(array: JointArray, comp: int, tau: float, plan: BootstrapPlan,
                      level: float = 0.95, threads: int = 1) -> QuantileEstimate:
    """Plug-in quantile (left-continuous inverse of the empirical cdf) with a
    unit-multinomial bootstrap percentile interval.

    Warns when the quantile lands on a tied observed value: the functional
    is not smooth at atoms and the interval may be unreliable there.
    """
    if plan.scheme != POLYADIC:
        raise PlanError(f"plan scheme is {plan.scheme!r}; quantile bootstrap needs {POLYADIC!r}")
    if not 0.0 < tau < 1.0:
        raise DomainError(f"quantile level must be in (0, 1), got {tau}")
    cdf = empirical_cdf(array, comp)
    point = cdf.quantile(tau)
    vals = array.values[:, comp]
    # a continuous exchangeable process produces at most k! copies of a value
    # (one per tuple orientation); more duplicates suggest a population atom
    tied = bool(np.sum(vals == point) > math.factorial(array.k))
    if tied:
        warnings.warn(
            f"quantile estimate sits on a tied value ({point}); interval may be "
            "unreliable at atoms", RuntimeWarning, stacklevel=2,
        )
    order = np.argsort(vals, kind="stable")
    sorted_vals = vals[order]
    n = array.n
    idx = array.index
    pvals = np.full(n, 1.0 / n)
    root = math.sqrt(n)

    def one(i: int) -> float:
        rng = substream(plan.seed, TAG_REPLICATE, i)
        w_units = rng.multinomial(n, pvals)
        w = (w_units[idx[:, 0] - 1] * w_units[idx[:, 1] - 1]).astype(float)
        cw = np.cumsum(w[order])
        total = cw[-1]
        if total <= 0:
            return np.nan
        pos = int(np.searchsorted(cw, tau * total, side="left"))
        return root * (float(sorted_vals[min(pos, len(cw) - 1)]) - point)

    draws = _run_replicates(plan.b, threads, one)
    keep = np.isfinite(draws)
    dropped = int(np.sum(~keep))
    if dropped > 0.1 * plan.b:
        raise InferenceError(f"{dropped}/{plan.b} replicates had zero total weight")
    reps = ReplicateSet(draws=draws[keep], scheme=plan.scheme, seed=plan.seed, scale=root)
    interval = percentile_interval(reps, point, level)
    return QuantileEstimate(point=point, interval=interval, replicates=reps,
                            tied=tied, dropped=dropped)


# ---------------------------------------------------------------------------
# assembled report
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class InferenceReport:
    """Point estimates with standard errors, p-values, and intervals keyed by
    dependence assumption, plus fit/bootstrap diagnostics."""

    columns: list[str]
    theta: np.ndarray
    se: dict[str, np.ndarray]
    pvalues: dict[str, np.ndarray]
    ci: dict[str, np.ndarray]
    level: float
    diagnostics: dict

    def to_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "coefficients": [float(v) for v in self.theta],
            "level": self.level,
            "se": {k: [float(x) for x in v] for k, v in self.se.items()},
            "pvalues": {k: [None if np.isnan(x) else float(x) for x in v]
                        for k, v in self.pvalues.items()},
            "ci": {k: [[float(a), float(b)] for a, b in v] for k, v in self.ci.items()},
            "diagnostics": self.diagnostics,
        }


def ppml_inference(data: GravityData, plan: BootstrapPlan | None = None,
                   level: float = 0.95, threads: int = 1) -> InferenceReport:
    """Fit PPML and assemble the full comparison report.

    Always includes the sandwich assumptions; adds the dyadic bootstrap
    column when a plan is supplied.
    """
    fit = ppml_fit(data)
    entries = variance_compare(data, fit, level=level)
    z = float(ndtri(0.5 + level / 2.0))
    se: dict[str, np.ndarray] = {}
    pvalues: dict[str, np.ndarray] = {}
    ci: dict[str, np.ndarray] = {}
    for name in ASSUMPTION_ORDER[:-1]:
        entry = entries[name]
        se[name] = entry.se
        pvalues[name] = entry.pvalues
        ci[name] = np.column_stack([fit.theta - z * entry.se, fit.theta + z * entry.se])
    diagnostics = {
        "iterations": fit.iterations,
        "score_norm": fit.score_norm,
        "n_units": data.n,
        "n_pairs": data.m,
        "degenerate_dyadic_kernel": [bool(v) for v in entries["dyadic-kernel"].degenerate],
    }
    if plan is not None:
        boot = ppml_bootstrap_pvalues(data, plan, fit=fit, threads=threads)
        se["dyadic-bootstrap"] = boot.se
        pvalues["dyadic-bootstrap"] = boot.pvalues
        alpha = 1.0 - level
        lo = np.quantile(boot.draws, alpha / 2.0, axis=0, method="linear")
        hi = np.quantile(boot.draws, 1.0 - alpha / 2.0, axis=0, method="linear")
        # percentile interval from the replicate coefficient draws
        ci["dyadic-bootstrap"] = np.column_stack([lo, hi])
        diagnostics["bootstrap_b"] = boot.b_requested
        diagnostics["bootstrap_dropped"] = boot.dropped
    return InferenceReport(
        columns=list(data.columns),
        theta=fit.theta,
        se=se,
        pvalues=pvalues,
        ci=ci,
        level=level,
        diagnostics=diagnostics,
    )
