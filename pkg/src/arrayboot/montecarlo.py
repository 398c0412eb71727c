"""Monte Carlo studies verifying the limit behavior of the estimators at desk
scale: variance of the normalized mean against its analytic limit, bootstrap
interval coverage (joint and grid schemes), and the non-Gaussian limit law in
the degenerate product case.

Data generating processes are registered by name so that study
configurations are plain serializable text.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtri
from scipy.stats import poisson as _poisson

from .arrays import AhkModel, generate_joint, generate_separate
from .bootstrap import (
    PIGEONHOLE,
    POLYADIC,
    BootstrapPlan,
    bootstrap_process_joint,
    bootstrap_process_separate,
    percentile_interval,
)
from .empirical import component, empirical_mean, estimate_kernel_joint, estimate_kernel_separate
from .errors import ConfigError, InferenceError
from .rng import child_seed, substream

__all__ = [
    "DGPS",
    "RegisteredDgp",
    "McConfig",
    "McSummary",
    "parse_config",
    "load_config",
    "run_study",
    "clt_variance_study",
    "coverage_study",
    "degenerate_limit_study",
    "ks_distance",
    "GRAVITY_THETA",
]


# ---------------------------------------------------------------------------
# registered data generating processes
# ---------------------------------------------------------------------------

def _split_uniform(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split one uniform into two (26-bit) near-independent uniforms.

    The half-step offset keeps both outputs inside the open interval, so
    normal/Poisson inverse-cdf transforms stay finite.
    """
    z = np.floor(np.asarray(u) * 2.0 ** 52).astype(np.int64)
    hi = ((z >> 26) + 0.5) / 2.0 ** 26
    lo = ((z & ((1 << 26) - 1)) + 0.5) / 2.0 ** 26
    return hi, lo


def _tau_additive(u1, u2, u12):
    return u1 + u2 + u12


def _tau_product_normal(u1, u2, u12):
    return ndtri(u1) * ndtri(u2)


def _tau_iid_pair(u1, u2, u12):
    hi, lo = _split_uniform(u12)
    return np.where(u1 < u2, hi, lo)


def _tau_dyadic_null(u1, u2, u12):
    ea, eb = _split_uniform(u12)
    ya = u1 + u2 + ea
    yb = (1.0 - u1) + u2 + eb
    return np.stack([ya, yb], axis=-1)


# identified coefficients: the intercept absorbs the means of the omitted
# log-normal unit effects (2 * 0.4^2 / 2 on top of the structural 0.3)
GRAVITY_THETA = np.array([0.3 + 0.16, 0.5, -0.4, 0.3])
_GRAVITY_OMEGA_SD = 0.4


def _tau_poisson_gravity(u1, u2, u12):
    """Poisson flows with observed unit/pair regressors plus omitted unit
    effects, so every coefficient has a non-degenerate dyadic limit law."""
    ua1, ub1 = _split_uniform(u1)
    ua2, ub2 = _split_uniform(u2)
    g1 = 0.5 * ndtri(ua1)
    g2 = 0.5 * ndtri(ua2)
    omega = _GRAVITY_OMEGA_SD * (ndtri(ub1) + ndtri(ub2))
    u_pair, u_draw = _split_uniform(u12)
    xp = u_pair
    eta = 0.3 + 0.5 * g1 - 0.4 * g2 + 0.3 * xp
    # clip the inverse-cdf argument away from 1 to keep the count finite
    flows = _poisson.ppf(np.minimum(u_draw, 1.0 - 1e-12), np.exp(eta + omega))
    return np.stack([flows, g1, g2, xp], axis=-1)


@dataclass(frozen=True)
class RegisteredDgp:
    """A named process: the latent-factor model plus its analytic targets."""

    name: str
    kind: str                               # "joint" | "separate"
    model: AhkModel
    d: int
    mean: float | None                      # analytic mean of component 0
    kernel: float | None = None             # analytic limit covariance (joint, f = comp 0)
    kernel_lambda: Callable[[tuple[int, ...]], float] | None = None   # separate analogue
    description: str = ""


def _separable_kernel(dims: tuple[int, ...]) -> float:
    nmin = min(dims)
    return sum((nmin / nj) / 12.0 for nj in dims)


DGPS: dict[str, RegisteredDgp] = {
    dgp.name: dgp
    for dgp in [
        RegisteredDgp(
            name="additive-uniform",
            kind="joint",
            model=AhkModel(k=2, tau=_tau_additive, label="additive-uniform"),
            d=1,
            mean=1.5,
            kernel=1.0 / 3.0,
            description="sum of both unit factors and the pair factor, all Uniform(0,1)",
        ),
        RegisteredDgp(
            name="separable-additive",
            kind="separate",
            model=AhkModel(k=2, tau=_tau_additive, label="separable-additive"),
            d=1,
            mean=1.5,
            kernel_lambda=_separable_kernel,
            description="sum of row, column, and cell factors, all Uniform(0,1)",
        ),
        RegisteredDgp(
            name="product-degenerate",
            kind="joint",
            model=AhkModel(k=2, tau=_tau_product_normal, label="product-degenerate"),
            d=1,
            mean=0.0,
            kernel=0.0,
            description="product of standard-normal unit factors (degenerate limit)",
        ),
        RegisteredDgp(
            name="iid-pair",
            kind="joint",
            model=AhkModel(k=2, tau=_tau_iid_pair, label="iid-pair"),
            d=1,
            mean=0.5,
            kernel=0.0,
            description="independent Uniform(0,1) per ordered pair (degenerate limit)",
        ),
        RegisteredDgp(
            name="dyadic-null",
            kind="joint",
            model=AhkModel(k=2, tau=_tau_dyadic_null, label="dyadic-null"),
            d=2,
            mean=1.5,
            description="two components with equal marginals but opposite loading on "
                        "the first-unit factor (null of equal distributions holds)",
        ),
        RegisteredDgp(
            name="poisson-gravity",
            kind="joint",
            model=AhkModel(k=2, tau=_tau_poisson_gravity, label="poisson-gravity"),
            d=4,
            mean=None,
            description="Poisson flows with log-mean linear in unit and pair factors "
                        "(components: flow, exporter factor, importer factor, pair factor)",
        ),
    ]
}


def get_dgp(name: str) -> RegisteredDgp:
    if name not in DGPS:
        raise ConfigError(f"unknown dgp {name!r}; registered: {', '.join(sorted(DGPS))}")
    return DGPS[name]


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_STUDIES = ("clt-variance", "coverage", "degenerate-limit")


@dataclass(frozen=True)
class McConfig:
    """One study run: process, sizes, scheme, and pre-registered bands.

    ``bands`` maps a metric name to its acceptance interval; a study passes
    when every banded metric lands inside its interval.  Bands are fixed in
    the config up front, never derived from the results.
    """

    study: str
    dgp: str
    replications: int
    seed: int
    n: int | None = None
    dims: tuple[int, ...] | None = None
    scheme: str | None = None
    b: int = 199
    level: float = 0.95
    truth: float | None = None
    statistic: int = 0
    reference_draws: int = 1_000_000
    threads: int = 1
    bands: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.study not in _STUDIES:
            raise ConfigError(f"unknown study {self.study!r}; expected one of {_STUDIES}")
        if self.replications < 50:
            raise ConfigError(f"replications must be >= 50, got {self.replications}")
        if self.b < 19:
            raise ConfigError(f"bootstrap replicates must be >= 19, got {self.b}")
        if not 0.0 < self.level < 1.0:
            raise ConfigError(f"level must be in (0, 1), got {self.level}")
        get_dgp(self.dgp)


@dataclass(frozen=True)
class BandResult:
    lo: float
    hi: float
    value: float
    passed: bool


@dataclass(frozen=True)
class McSummary:
    """Study outcome: metrics, band verdicts, and reproducibility info."""

    study: str
    metrics: dict[str, float]
    bands: dict[str, BandResult]
    passed: bool
    replications: int
    seed: int
    runtime_s: float
    notes: dict

    def to_dict(self) -> dict:
        return {
            "study": self.study,
            "metrics": {k: float(v) for k, v in self.metrics.items()},
            "bands": {
                k: {"lo": v.lo, "hi": v.hi, "value": v.value, "passed": v.passed}
                for k, v in self.bands.items()
            },
            "passed": self.passed,
            "replications": self.replications,
            "seed": self.seed,
            "notes": self.notes,
        }


_CONFIG_KEYS = {
    "study", "dgp", "n", "dims", "scheme", "b", "replications", "seed",
    "level", "truth", "statistic", "reference_draws", "threads",
}


def parse_config(text: str) -> McConfig:
    """Parse a ``key = value`` study configuration.

    ``#`` starts a comment; ``dims`` uses ``AxB`` syntax; ``band_<metric>``
    entries give ``lo,hi`` acceptance intervals.
    """
    fields: dict = {}
    bands: dict[str, tuple[float, float]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        try:
            if key.startswith("band_"):
                lo, hi = (float(x) for x in value.split(","))
                bands[key[len("band_"):]] = (lo, hi)
            elif key == "dims":
                dims = tuple(int(x) for x in value.lower().split("x"))
                if len(dims) < 2:
                    raise ValueError("need at least two dimensions")
                fields["dims"] = dims
            elif key in ("n", "b", "replications", "seed", "statistic",
                         "reference_draws", "threads"):
                fields[key] = int(value)
            elif key in ("level", "truth"):
                fields[key] = float(value)
            elif key in ("study", "dgp", "scheme"):
                fields[key] = value
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    missing = [k for k in ("study", "dgp", "replications", "seed") if k not in fields]
    if missing:
        raise ConfigError(f"missing required key(s): {', '.join(missing)}")
    return McConfig(bands=bands, **fields)


def load_config(path) -> McConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def _evaluate_bands(config: McConfig, metrics: dict[str, float]) -> dict[str, BandResult]:
    out = {}
    for name, (lo, hi) in config.bands.items():
        if name not in metrics:
            raise ConfigError(
                f"band on unknown metric {name!r}; available: {', '.join(sorted(metrics))}"
            )
        value = metrics[name]
        out[name] = BandResult(lo=lo, hi=hi, value=value,
                               passed=bool(lo <= value <= hi))
    return out


def _map_runs(r: int, threads: int, one) -> list:
    if threads <= 1:
        return [one(i) for i in range(r)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(r)))


# ---------------------------------------------------------------------------
# studies
# ---------------------------------------------------------------------------

def ks_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sample Kolmogorov-Smirnov distance between scalar samples."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / len(a)
    fb = np.searchsorted(b, grid, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


def clt_variance_study(config: McConfig) -> McSummary:
    """Sample variance of the root-n-normalized mean across simulated arrays,
    compared to the analytic limit covariance and to the plug-in estimate."""
    t0 = time.perf_counter()
    dgp = get_dgp(config.dgp)
    if dgp.kind != "joint":
        raise ConfigError(f"clt-variance study needs a joint dgp, got {config.dgp!r}")
    if config.n is None:
        raise ConfigError("clt-variance study needs n")
    truth = config.truth if config.truth is not None else dgp.mean
    if truth is None:
        raise ConfigError(f"dgp {config.dgp!r} has no analytic mean; set truth in the config")
    f = component(config.statistic)
    n, r = config.n, config.replications
    root = math.sqrt(n)

    def one(i: int) -> tuple[float, float]:
        array = generate_joint(dgp.model, n, child_seed(config.seed, i))
        g = root * (empirical_mean(array, f) - truth)
        khat = estimate_kernel_joint(array, f).value
        return g, khat

    results = _map_runs(r, config.threads, one)
    gs = np.array([x[0] for x in results])
    khats = np.array([x[1] for x in results])
    variance = float(gs.var(ddof=1))
    kernel_mean = float(khats.mean())
    metrics = {
        "variance": variance,
        "variance_mc_se": variance * math.sqrt(2.0 / (r - 1)),
        "kernel_mean": kernel_mean,
        "kernel_agreement": variance / kernel_mean if kernel_mean > 0 else np.inf,
    }
    if dgp.kernel is not None and dgp.kernel > 0:
        metrics["variance_ratio"] = variance / dgp.kernel
    bands = _evaluate_bands(config, metrics)
    return McSummary(
        study=config.study, metrics=metrics, bands=bands,
        passed=all(b.passed for b in bands.values()),
        replications=r, seed=config.seed,
        runtime_s=time.perf_counter() - t0,
        notes={"dgp": config.dgp, "n": n},
    )


def _degenerate_flag_joint(khat_value: float, cell_var: float, n: int, k: int) -> bool:
    # twice the level the plug-in would sit at if cells were fully independent
    return khat_value < 2.0 * k * cell_var / (n - 1)


def _degenerate_flag_separate(value: float, cell_var: float, dims: tuple[int, ...],
                              lambdas: tuple[float, ...]) -> bool:
    m = float(np.prod(dims))
    indep_level = sum(lam * cell_var * nj / m for lam, nj in zip(lambdas, dims))
    return value < 2.0 * indep_level


def coverage_study(config: McConfig) -> McSummary:
    """Share of runs whose bootstrap percentile interval covers the true mean."""
    t0 = time.perf_counter()
    dgp = get_dgp(config.dgp)
    truth = config.truth if config.truth is not None else dgp.mean
    if truth is None:
        raise ConfigError(f"dgp {config.dgp!r} has no analytic mean; set truth in the config")
    f = component(config.statistic)
    r = config.replications
    scheme = config.scheme or (POLYADIC if dgp.kind == "joint" else PIGEONHOLE)

    if dgp.kind == "joint":
        if scheme != POLYADIC:
            raise ConfigError(f"joint dgp needs scheme {POLYADIC!r}, got {scheme!r}")
        if config.n is None:
            raise ConfigError("coverage study on a joint dgp needs n")
    else:
        if scheme != PIGEONHOLE:
            raise ConfigError(f"separate dgp needs scheme {PIGEONHOLE!r}, got {scheme!r}")
        if config.dims is None:
            raise ConfigError("coverage study on a separate dgp needs dims")

    def one(i: int) -> tuple[bool, bool, float]:
        seed_i = child_seed(config.seed, i)
        plan = BootstrapPlan(scheme=scheme, b=config.b, seed=seed_i)
        if dgp.kind == "joint":
            array = generate_joint(dgp.model, config.n, seed_i)
            khat = estimate_kernel_joint(array, f)
            cell_var = float(array.values[:, config.statistic].var())
            flagged = _degenerate_flag_joint(khat.value, cell_var, array.n, array.k)
            reps = bootstrap_process_joint(array, f, plan)
        else:
            array = generate_separate(dgp.model, config.dims, seed_i)
            khat = estimate_kernel_separate(array, f)
            cell_var = float(array.flat_values[:, config.statistic].var())
            flagged = _degenerate_flag_separate(khat.value, cell_var, array.dims,
                                                khat.lambdas)
            reps = bootstrap_process_separate(array, f, plan)
        point = empirical_mean(array, f)
        lo, hi = percentile_interval(reps, point, config.level)
        return bool(lo <= truth <= hi), flagged, hi - lo

    results = _map_runs(r, config.threads, one)
    covered = np.array([x[0] for x in results])
    flags = np.array([x[1] for x in results])
    widths = np.array([x[2] for x in results])
    degenerate_share = float(flags.mean())
    if degenerate_share > 0.20:
        raise InferenceError(
            f"degeneracy flagged in {degenerate_share:.0%} of runs (> 20%); "
            "the bootstrap target variance looks degenerate for this process"
        )
    coverage = float(covered.mean())
    metrics = {
        "coverage": coverage,
        "coverage_mc_se": math.sqrt(max(coverage * (1 - coverage), 1e-12) / r),
        "mean_interval_width": float(widths.mean()),
        "degenerate_share": degenerate_share,
    }
    bands = _evaluate_bands(config, metrics)
    return McSummary(
        study=config.study, metrics=metrics, bands=bands,
        passed=all(b.passed for b in bands.values()),
        replications=r, seed=config.seed,
        runtime_s=time.perf_counter() - t0,
        notes={"dgp": config.dgp, "scheme": scheme, "b": config.b,
               "n": config.n, "dims": list(config.dims) if config.dims else None,
               "level": config.level, "truth": truth},
    )


def degenerate_limit_study(config: McConfig) -> McSummary:
    """Distribution of n times the array mean under the degenerate product
    process, compared to the centered chi-square (one degree) law."""
    t0 = time.perf_counter()
    dgp = get_dgp(config.dgp)
    if config.dgp != "product-degenerate":
        raise ConfigError(
            "degenerate-limit study compares against the centered chi-square law, "
            f"which is the limit of the product process only; got {config.dgp!r}"
        )
    if config.n is None:
        raise ConfigError("degenerate-limit study needs n")
    truth = config.truth if config.truth is not None else dgp.mean
    f = component(config.statistic)
    n, r = config.n, config.replications

    def one(i: int) -> float:
        array = generate_joint(dgp.model, n, child_seed(config.seed, i))
        return n * (empirical_mean(array, f) - truth)

    tracked = np.array(_map_runs(r, config.threads, one))
    reference = substream(config.seed, 0xD1).chisquare(1, config.reference_draws) - 1.0
    mean = float(tracked.mean())
    variance = float(tracked.var(ddof=1))
    metrics = {
        "mean": mean,
        "mean_mc_se": float(tracked.std(ddof=1) / math.sqrt(r)),
        "variance": variance,
        "variance_mc_se": variance * math.sqrt(2.0 / (r - 1)),
        "ks_distance": ks_distance(tracked, reference),
    }
    bands = _evaluate_bands(config, metrics)
    return McSummary(
        study=config.study, metrics=metrics, bands=bands,
        passed=all(b.passed for b in bands.values()),
        replications=r, seed=config.seed,
        runtime_s=time.perf_counter() - t0,
        notes={"dgp": config.dgp, "n": n, "reference_draws": config.reference_draws},
    )


_STUDY_FUNCS = {
    "clt-variance": clt_variance_study,
    "coverage": coverage_study,
    "degenerate-limit": degenerate_limit_study,
}


def run_study(config: McConfig) -> McSummary:
    return _STUDY_FUNCS[config.study](config)
