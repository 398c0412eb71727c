import math

import numpy as np
import pytest

from arrayboot.arrays import AhkModel, JointArray, generate_joint, relabel
from arrayboot.bootstrap import PIGEONHOLE, POLYADIC, BootstrapPlan, UnitWeights
from arrayboot.errors import DomainError, PlanError
from arrayboot.kstest import ASSUMPTIONS, _PairedKs, ks_compare_assumptions, ks_paired
from arrayboot.rng import child_seed

from oracles import brute_ks_statistic, multinomial_outcomes

TWO_COMP = AhkModel(
    k=2,
    tau=lambda u1, u2, u12: np.stack([u1 + u2 + u12, u2 + 2.0 * u12], axis=-1),
)


def make_array(n=8, seed=1, model=TWO_COMP):
    return generate_joint(model, n, seed=seed)


class TestStatistic:
    def test_identical_components_zero(self):
        model = AhkModel(k=2, tau=lambda u1, u2, u12: np.stack([u1 + u12, u1 + u12], axis=-1))
        res = ks_compare_assumptions(make_array(model=model), 0, 1, b=99, seed=1)
        assert res.statistic == 0.0

    def test_disjoint_supports_one(self):
        model = AhkModel(k=2, tau=lambda u1, u2, u12: np.stack([0.0 * u1, 0.0 * u1 + 1.0], axis=-1))
        res = ks_compare_assumptions(make_array(model=model), 0, 1, b=99, seed=1)
        assert res.statistic == 1.0

    @pytest.mark.parametrize("seed", [3, 4, 5, 6])
    def test_brute_force_oracle(self, seed):
        arr = make_array(n=3, seed=seed)
        prep = _PairedKs(arr, 0, 1)
        want = brute_ks_statistic(arr.values[:, 0], arr.values[:, 1])
        assert prep.statistic == pytest.approx(want, abs=1e-14)

    def test_argmax_attains_statistic(self):
        arr = make_array(n=6, seed=7)
        prep = _PairedKs(arr, 0, 1)
        m = arr.m
        fa = np.sum(arr.values[:, 0] <= prep.argmax) / m
        fb = np.sum(arr.values[:, 1] <= prep.argmax) / m
        assert abs(fa - fb) == pytest.approx(prep.statistic, abs=1e-14)

    def test_invariant_under_relabeling(self):
        arr = make_array(n=7, seed=8)
        perm = np.random.default_rng(0).permutation(np.arange(1, 8))
        a = _PairedKs(arr, 0, 1).statistic
        b = _PairedKs(relabel(arr, perm), 0, 1).statistic
        assert a == pytest.approx(b, abs=1e-14)

    def test_invariant_under_common_monotone_transform(self):
        arr = make_array(n=7, seed=9)
        transformed = JointArray(n=7, k=2, values=np.exp(2.0 * arr.values))
        a = _PairedKs(arr, 0, 1).statistic
        b = _PairedKs(transformed, 0, 1).statistic
        assert a == pytest.approx(b, abs=1e-14)

    def test_statistic_in_unit_interval(self):
        for seed in range(5):
            s = _PairedKs(make_array(seed=seed), 0, 1).statistic
            assert 0.0 <= s <= 1.0


class TestValidation:
    def test_needs_two_components(self):
        arr = generate_joint(AhkModel(k=2, tau=lambda u1, u2, u12: u1), 5, seed=1)
        with pytest.raises(DomainError, match="two components"):
            ks_compare_assumptions(arr, 0, 1, b=9, seed=1)

    def test_distinct_components(self):
        with pytest.raises(DomainError, match="distinct"):
            ks_compare_assumptions(make_array(), 1, 1, b=9, seed=1)

    def test_k2_only(self):
        model = AhkModel(
            k=3,
            tau=lambda u1, u2, u3, u12, u13, u23, u123: np.stack([u1, u2], axis=-1),
        )
        arr = generate_joint(model, 5, seed=1)
        with pytest.raises(DomainError, match="k=2"):
            ks_compare_assumptions(arr, 0, 1, b=9, seed=1)

    def test_plan_scheme_checked(self):
        with pytest.raises(PlanError):
            ks_paired(make_array(), 0, 1, BootstrapPlan(scheme=PIGEONHOLE, b=9, seed=1))

    def test_unknown_assumption(self):
        with pytest.raises(DomainError, match="unknown assumptions"):
            ks_compare_assumptions(make_array(), 0, 1, b=9, seed=1, assumptions=("banana",))


class TestBootstrap:
    def test_all_ones_weights_zero_sup(self):
        arr = make_array(n=6, seed=10)
        prep = _PairedKs(arr, 0, 1)
        assert prep.replicate_sup(np.zeros(arr.m)) == 0.0

    def test_identical_components_pvalues_one(self):
        model = AhkModel(k=2, tau=lambda u1, u2, u12: np.stack([u1 + u12, u1 + u12], axis=-1))
        res = ks_compare_assumptions(make_array(model=model), 0, 1, b=99, seed=2)
        assert all(p == 1.0 for p in res.pvalues.values())

    def test_pvalues_in_unit_interval(self):
        res = ks_compare_assumptions(make_array(seed=11), 0, 1, b=99, seed=3)
        assert set(res.pvalues) == set(ASSUMPTIONS)
        for p in res.pvalues.values():
            assert 0.0 < p <= 1.0

    def test_ks_paired_matches_dyadic_column(self):
        arr = make_array(seed=12)
        plan = BootstrapPlan(scheme=POLYADIC, b=149, seed=4)
        single = ks_paired(arr, 0, 1, plan)
        multi = ks_compare_assumptions(arr, 0, 1, b=149, seed=4)
        assert single.pvalues["dyadic"] == multi.pvalues["dyadic"]
        assert single.statistic == multi.statistic

    def test_reproducible_and_thread_invariant(self):
        arr = make_array(seed=13)
        a = ks_compare_assumptions(arr, 0, 1, b=59, seed=5)
        b = ks_compare_assumptions(arr, 0, 1, b=59, seed=5, threads=3)
        assert a.pvalues == b.pvalues

    def test_subset_of_assumptions(self):
        res = ks_compare_assumptions(make_array(seed=14), 0, 1, b=39, seed=6,
                                     assumptions=("iid", "dyadic"))
        assert list(res.pvalues) == ["iid", "dyadic"]

    def test_dyadic_replicates_match_enumeration(self):
        """For n=3 the dyadic weight draw has 10 outcomes; the replicate sup
        distribution must match the enumerated one."""
        n = 3
        arr = make_array(n=n, seed=15)
        prep = _PairedKs(arr, 0, 1)
        idx = arr.index
        outcome_prob: dict[float, float] = {}
        for weights, prob in multinomial_outcomes(n):
            w = np.asarray(weights, dtype=np.int64)
            delta = (w[idx[:, 0] - 1] * w[idx[:, 1] - 1]).astype(float) - 1.0
            val = round(prep.replicate_sup(delta), 13)
            outcome_prob[val] = outcome_prob.get(val, 0.0) + prob
        b = 5000
        from arrayboot.kstest import _delta_factory
        from arrayboot.rng import TAG_REPLICATE, substream

        draw = _delta_factory(prep, "dyadic")
        tag = ASSUMPTIONS.index("dyadic")
        draws = np.array([
            prep.replicate_sup(draw(substream(77, TAG_REPLICATE, tag, i))) for i in range(b)
        ])
        assert set(np.round(draws, 13)).issubset(set(outcome_prob))
        for val, prob in outcome_prob.items():
            freq = np.mean(np.round(draws, 13) == val)
            tol = 4 * math.sqrt(prob * (1 - prob) / b) + 1e-9
            assert abs(freq - prob) < tol

    def test_weight_conservation_per_scheme(self):
        from arrayboot.kstest import _delta_factory
        from arrayboot.rng import substream

        arr = make_array(n=6, seed=16)
        prep = _PairedKs(arr, 0, 1)
        for name in ("iid", "pairwise", "oneway-exporter", "oneway-importer"):
            delta = _delta_factory(prep, name)(substream(1, 2, 3))
            assert delta.sum() == pytest.approx(0.0, abs=1e-9), name

    def test_pairwise_orientations_share_weight(self):
        from arrayboot.kstest import _delta_factory
        from arrayboot.rng import substream

        arr = make_array(n=5, seed=17)
        prep = _PairedKs(arr, 0, 1)
        delta = _delta_factory(prep, "pairwise")(substream(2, 3, 4))
        idx = arr.index
        w = {tuple(t): d for t, d in zip(map(tuple, idx), delta)}
        for i, j in w:
            assert w[(i, j)] == w[(j, i)]

    def test_oneway_exporter_weights_follow_first_index(self):
        from arrayboot.kstest import _delta_factory
        from arrayboot.rng import substream

        arr = make_array(n=5, seed=18)
        prep = _PairedKs(arr, 0, 1)
        delta = _delta_factory(prep, "oneway-exporter")(substream(3, 4, 5))
        idx = arr.index
        per_unit = {}
        for t, d in zip(map(tuple, idx), delta):
            per_unit.setdefault(t[0], set()).add(round(float(d), 12))
        for vals in per_unit.values():
            assert len(vals) == 1
