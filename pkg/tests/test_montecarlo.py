import numpy as np
import pytest

from arrayboot.errors import ConfigError, InferenceError
from arrayboot.montecarlo import (
    DGPS,
    McConfig,
    clt_variance_study,
    coverage_study,
    degenerate_limit_study,
    ks_distance,
    parse_config,
    run_study,
)
from arrayboot.rng import substream


class TestRegistry:
    def test_catalog_names(self):
        assert {"additive-uniform", "separable-additive", "product-degenerate",
                "iid-pair", "dyadic-null", "poisson-gravity"} <= set(DGPS)

    def test_iid_pair_orientations_independent(self):
        from arrayboot.arrays import generate_joint

        model = DGPS["iid-pair"].model
        fwd, rev = [], []
        for s in range(400):
            arr = generate_joint(model, 2, seed=s)
            fwd.append(arr.cell((1, 2))[0])
            rev.append(arr.cell((2, 1))[0])
        corr = np.corrcoef(fwd, rev)[0, 1]
        assert abs(corr) < 0.12
        assert np.mean(fwd) == pytest.approx(0.5, abs=0.05)

    def test_dyadic_null_equal_marginals(self):
        # within one array the two components' means differ by a unit-level
        # Op(n^-1/2) term (that is the dyadic dependence); the marginal laws
        # are equal, so pooling across arrays must align the distributions
        from arrayboot.arrays import generate_joint

        pooled_a, pooled_b = [], []
        for s in range(60):
            arr = generate_joint(DGPS["dyadic-null"].model, 20, seed=1000 + s)
            pooled_a.append(arr.values[:, 0])
            pooled_b.append(arr.values[:, 1])
        a = np.concatenate(pooled_a)
        b = np.concatenate(pooled_b)
        assert a.mean() == pytest.approx(b.mean(), abs=0.02)
        assert a.std() == pytest.approx(b.std(), rel=0.02)
        assert ks_distance(a, b) < 0.02


class TestConfigParsing:
    def test_full_roundtrip(self):
        cfg = parse_config(
            """
            # comment
            study = coverage
            dgp = additive-uniform
            n = 50
            b = 99          # replicates
            replications = 60
            seed = 7
            level = 0.9
            truth = 1.5
            band_coverage = 0.8, 0.99
            """
        )
        assert cfg.study == "coverage"
        assert cfg.bands == {"coverage": (0.8, 0.99)}
        assert cfg.level == 0.9

    def test_dims_syntax(self):
        cfg = parse_config(
            "study = coverage\ndgp = separable-additive\ndims = 4x9\n"
            "replications = 50\nseed = 1\nscheme = pigeonhole\n"
        )
        assert cfg.dims == (4, 9)

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config("study = coverage\ndgp = additive-uniform\nreplications = 50\nseed = 1\nfrobnicate = 3\n")

    def test_missing_required(self):
        with pytest.raises(ConfigError, match="missing required"):
            parse_config("study = coverage\n")

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="bad value"):
            parse_config("study = coverage\ndgp = additive-uniform\nreplications = soon\nseed = 1\n")

    def test_unknown_dgp(self):
        with pytest.raises(ConfigError, match="unknown dgp"):
            parse_config("study = coverage\ndgp = nope\nreplications = 50\nseed = 1\n")

    def test_replication_floor(self):
        with pytest.raises(ConfigError, match="replications"):
            McConfig(study="coverage", dgp="additive-uniform", replications=10, seed=1)

    def test_band_on_unknown_metric(self):
        cfg = McConfig(study="clt-variance", dgp="additive-uniform", replications=60,
                       seed=1, n=20, bands={"nonexistent": (0.0, 1.0)})
        with pytest.raises(ConfigError, match="unknown metric"):
            clt_variance_study(cfg)


class TestStudies:
    def test_clt_variance_small(self):
        cfg = McConfig(study="clt-variance", dgp="additive-uniform", replications=400,
                       seed=11, n=40, bands={"variance_ratio": (0.75, 1.30)})
        s = clt_variance_study(cfg)
        assert s.passed
        assert s.metrics["variance_mc_se"] > 0

    def test_clt_variance_degenerate_process_shrinks(self):
        cfg = McConfig(study="clt-variance", dgp="product-degenerate", replications=200,
                       seed=12, n=60)
        s = clt_variance_study(cfg)
        # limit covariance is zero: the normalized-mean variance is O(1/n)
        assert s.metrics["variance"] < 0.1

    def test_clt_variance_constant_process(self):
        from arrayboot.arrays import AhkModel
        from arrayboot.montecarlo import RegisteredDgp
        import arrayboot.montecarlo as mc

        name = "constant-test"
        mc.DGPS[name] = RegisteredDgp(
            name=name, kind="joint",
            model=AhkModel(k=2, tau=lambda u1, u2, u12: 2.0),
            d=1, mean=2.0, kernel=0.0,
        )
        try:
            cfg = McConfig(study="clt-variance", dgp=name, replications=60, seed=13, n=10)
            s = clt_variance_study(cfg)
            assert s.metrics["variance"] == 0.0
        finally:
            del mc.DGPS[name]

    def test_coverage_small(self):
        cfg = McConfig(study="coverage", dgp="additive-uniform", replications=60,
                       seed=14, n=30, b=99, level=0.95,
                       bands={"coverage": (0.80, 1.0)})
        s = coverage_study(cfg)
        assert s.passed
        assert s.metrics["coverage_mc_se"] == pytest.approx(
            np.sqrt(s.metrics["coverage"] * (1 - s.metrics["coverage"]) / 60), rel=1e-6
        )

    def test_coverage_separate_small(self):
        cfg = McConfig(study="coverage", dgp="separable-additive", replications=60,
                       seed=15, dims=(10, 40), b=99, level=0.95,
                       bands={"coverage": (0.75, 1.0)})
        s = coverage_study(cfg)
        assert s.passed

    def test_coverage_aborts_on_degenerate_process(self):
        cfg = McConfig(study="coverage", dgp="iid-pair", replications=50,
                       seed=16, n=30, b=29)
        with pytest.raises(InferenceError, match="degenerac"):
            coverage_study(cfg)

    def test_coverage_scheme_mismatch(self):
        cfg = McConfig(study="coverage", dgp="additive-uniform", replications=50,
                       seed=17, n=20, scheme="pigeonhole")
        with pytest.raises(ConfigError, match="scheme"):
            coverage_study(cfg)

    def test_degenerate_limit_small(self):
        cfg = McConfig(study="degenerate-limit", dgp="product-degenerate",
                       replications=300, seed=18, n=80, reference_draws=200_000,
                       bands={"mean": (-0.3, 0.3), "variance": (1.2, 2.8)})
        s = degenerate_limit_study(cfg)
        assert s.passed
        assert s.metrics["ks_distance"] < 0.2

    def test_degenerate_limit_rejects_other_dgp(self):
        cfg = McConfig(study="degenerate-limit", dgp="additive-uniform",
                       replications=60, seed=19, n=20)
        with pytest.raises(ConfigError, match="product"):
            degenerate_limit_study(cfg)

    def test_studies_reproducible(self):
        cfg = McConfig(study="clt-variance", dgp="additive-uniform", replications=80,
                       seed=20, n=25)
        a = clt_variance_study(cfg)
        b = run_study(cfg)
        assert a.metrics == b.metrics

    def test_threaded_run_matches_serial(self):
        base = dict(study="clt-variance", dgp="additive-uniform", replications=80,
                    seed=21, n=25)
        a = clt_variance_study(McConfig(**base))
        b = clt_variance_study(McConfig(**base, threads=3))
        assert a.metrics == b.metrics


class TestKsDistance:
    def test_identical_samples(self):
        x = substream(1, 1).standard_normal(500)
        assert ks_distance(x, x) == 0.0

    def test_disjoint_samples(self):
        assert ks_distance(np.zeros(10), np.ones(10)) == 1.0

    def test_matches_scipy(self):
        from scipy.stats import ks_2samp

        a = substream(2, 1).standard_normal(400)
        b = substream(2, 2).standard_normal(600) + 0.3
        assert ks_distance(a, b) == pytest.approx(ks_2samp(a, b).statistic, abs=1e-12)
