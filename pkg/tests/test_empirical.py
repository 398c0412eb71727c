import math

import numpy as np
import pytest

from arrayboot.arrays import AhkModel, JointArray, generate_joint, generate_separate, relabel
from arrayboot.empirical import (
    Statistic,
    component,
    empirical_cdf,
    empirical_mean,
    empirical_process_value,
    estimate_kernel_joint,
    estimate_kernel_separate,
    indicator_leq,
)
from arrayboot.errors import DegenerateSampleError, DomainError, EvaluationError
from arrayboot.rng import child_seed

from oracles import brute_kernel_joint

ADDITIVE = AhkModel(k=2, tau=lambda u1, u2, u12: u1 + u2 + u12)
PAIR_ONLY = AhkModel(k=2, tau=lambda u1, u2, u12: u12)
F = component(0)


def two_cell_array(a, b):
    """n=2, k=2 array with cells (1,2)=a and (2,1)=b."""
    return JointArray(n=2, k=2, values=np.asarray([[a], [b]]))


class TestEmpiricalMean:
    def test_constant(self):
        arr = generate_joint(AhkModel(k=2, tau=lambda u1, u2, u12: 7.0), 4, seed=1)
        assert empirical_mean(arr, F) == 7.0

    def test_two_cells(self):
        assert empirical_mean(two_cell_array(3.0, 5.0), F) == pytest.approx(4.0)

    def test_n3_hand_sum(self):
        arr = JointArray(n=3, k=2, values=np.arange(1.0, 7.0))
        assert empirical_mean(arr, F) == pytest.approx(3.5)

    def test_non_finite_identifies_cell(self):
        vals = np.ones((6, 1))
        vals[3, 0] = np.inf
        arr = JointArray(n=3, k=2, values=vals)
        with pytest.raises(EvaluationError, match=r"\(2, 3\)"):
            empirical_mean(arr, F)

    def test_relabel_invariance(self):
        arr = generate_joint(ADDITIVE, 15, seed=2)
        perm = np.random.default_rng(3).permutation(np.arange(1, 16))
        assert empirical_mean(relabel(arr, perm), F) == pytest.approx(
            empirical_mean(arr, F), rel=1e-12
        )

    def test_grid_mean(self):
        arr = generate_separate(AhkModel(k=2, tau=lambda u1, u2, u12: 2.5), (3, 5), seed=1)
        assert empirical_mean(arr, F) == 2.5


class TestProcessValue:
    def test_zero_at_own_mean(self):
        arr = generate_joint(ADDITIVE, 10, seed=4)
        pf = empirical_mean(arr, F)
        assert empirical_process_value(arr, F, pf) == 0.0

    def test_constant_at_population_value(self):
        arr = generate_joint(AhkModel(k=2, tau=lambda u1, u2, u12: 2.0), 9, seed=1)
        assert empirical_process_value(arr, F, 2.0) == 0.0

    def test_root_n_scaling(self):
        arr = generate_joint(AhkModel(k=2, tau=lambda u1, u2, u12: 1.0), 4, seed=1)
        assert empirical_process_value(arr, F, 0.0) == pytest.approx(2.0)

    def test_grid_uses_smallest_dimension(self):
        arr = generate_separate(AhkModel(k=2, tau=lambda u1, u2, u12: 1.0), (9, 25), seed=1)
        assert empirical_process_value(arr, F, 0.0) == pytest.approx(3.0)

    def test_rejects_non_finite_target(self):
        arr = generate_joint(ADDITIVE, 5, seed=1)
        with pytest.raises(DomainError):
            empirical_process_value(arr, F, np.nan)


class TestEmpiricalCdf:
    def test_single_value_step(self):
        arr = generate_joint(AhkModel(k=2, tau=lambda u1, u2, u12: 3.0), 4, seed=1)
        cdf = empirical_cdf(arr)
        assert cdf(2.999) == 0.0
        assert cdf(3.0) == 1.0
        assert cdf(10.0) == 1.0

    def test_one_at_max(self):
        arr = generate_joint(ADDITIVE, 8, seed=5)
        cdf = empirical_cdf(arr)
        assert cdf(arr.values.max()) == 1.0

    def test_two_values(self):
        cdf = empirical_cdf(two_cell_array(1.0, 3.0))
        assert cdf(2.0) == 0.5
        assert cdf(0.5) == 0.0
        assert cdf(3.0) == 1.0

    def test_right_continuous_nondecreasing(self):
        arr = generate_joint(ADDITIVE, 10, seed=6)
        cdf = empirical_cdf(arr)
        grid = np.linspace(arr.values.min() - 0.5, arr.values.max() + 0.5, 300)
        vals = cdf(grid)
        assert np.all(np.diff(vals) >= 0)
        for v in cdf.jump_points[:10]:
            assert cdf(v) == pytest.approx(cdf(v + 1e-12), abs=1e-9)

    def test_jump_mass_multiples(self):
        arr = generate_joint(ADDITIVE, 6, seed=7)
        cdf = empirical_cdf(arr)
        masses = np.diff(np.concatenate([[0.0], cdf.cum])) * arr.m
        assert np.allclose(masses, np.round(masses))

    def test_matches_indicator_mean_at_jumps(self):
        arr = generate_joint(ADDITIVE, 7, seed=8)
        cdf = empirical_cdf(arr)
        for u in cdf.jump_points:
            assert cdf(u) == pytest.approx(empirical_mean(arr, indicator_leq(u)))

    def test_quantile_left_continuous_convention(self):
        cdf = empirical_cdf(two_cell_array(1.0, 3.0))
        assert cdf.quantile(0.5) == 1.0
        assert cdf.quantile(0.5 + 1e-9) == 3.0

    def test_bad_component(self):
        with pytest.raises(DomainError):
            empirical_cdf(two_cell_array(1.0, 2.0), comp=3)


class TestKernelJoint:
    def test_constant_statistic_zero(self):
        arr = generate_joint(ADDITIVE, 10, seed=9)
        est = estimate_kernel_joint(arr, Statistic(lambda v: np.full(len(v), 3.3), "c"))
        assert est.value == pytest.approx(0.0, abs=1e-25)

    def test_additive_limit_one_third(self):
        vals = [
            estimate_kernel_joint(generate_joint(ADDITIVE, 100, child_seed(100, s)), F).value
            for s in range(40)
        ]
        assert np.mean(vals) == pytest.approx(1.0 / 3.0, abs=0.02)

    def test_iid_cells_near_zero(self):
        vals = [
            estimate_kernel_joint(generate_joint(PAIR_ONLY, 100, child_seed(200, s)), F).value
            for s in range(10)
        ]
        assert 0.0 <= np.mean(vals) < 0.02

    def test_degenerate_sample_rejected(self):
        arr = generate_joint(ADDITIVE, 2, seed=1)
        with pytest.raises(DegenerateSampleError):
            estimate_kernel_joint(arr, F)

    def test_symmetry_in_statistics(self):
        arr = generate_joint(
            AhkModel(k=2, tau=lambda u1, u2, u12: np.stack([u1 + u12, u2 * u12], axis=-1)),
            12, seed=10,
        )
        f1, f2 = component(0), component(1)
        a = estimate_kernel_joint(arr, f1, f2)
        b = estimate_kernel_joint(arr, f2, f1)
        assert a.value == pytest.approx(b.value, rel=1e-14)

    def test_diagonal_nonnegative(self):
        for s in range(5):
            arr = generate_joint(PAIR_ONLY, 8, seed=s)
            assert estimate_kernel_joint(arr, F).value >= 0.0

    def test_projection_identity(self):
        arr = generate_joint(ADDITIVE, 9, seed=11)
        est = estimate_kernel_joint(arr, F)
        recomputed = (est.k ** 2 / est.n) * float(np.sum(est.g_first * est.g_second))
        assert est.value == pytest.approx(recomputed, rel=1e-15)

    @pytest.mark.parametrize("n", [3, 4, 5, 6])
    def test_brute_force_oracle(self, n):
        arr = generate_joint(ADDITIVE, n, seed=n)
        got = estimate_kernel_joint(arr, F).value
        want = brute_kernel_joint(arr, arr.values[:, 0])
        assert got == pytest.approx(want, rel=1e-12)

    def test_brute_force_oracle_two_stats(self):
        arr = generate_joint(
            AhkModel(k=2, tau=lambda u1, u2, u12: np.stack([u1 + u12, u2 - u12], axis=-1)),
            5, seed=21,
        )
        got = estimate_kernel_joint(arr, component(0), component(1)).value
        want = brute_kernel_joint(arr, arr.values[:, 0], arr.values[:, 1])
        assert got == pytest.approx(want, rel=1e-12)

    def test_variance_clamp_passthrough(self):
        arr = generate_joint(ADDITIVE, 8, seed=1)
        est = estimate_kernel_joint(arr, F)
        assert est.variance() == est.value


class TestKernelSeparate:
    def test_constant_zero(self):
        arr = generate_separate(ADDITIVE, (5, 7), seed=1)
        est = estimate_kernel_separate(arr, Statistic(lambda v: np.zeros(len(v)), "c"))
        assert est.value == pytest.approx(0.0, abs=1e-25)

    def test_balanced_limit(self):
        vals = [
            estimate_kernel_separate(
                generate_separate(ADDITIVE, (60, 60), child_seed(300, s)), F
            ).value
            for s in range(20)
        ]
        assert np.mean(vals) == pytest.approx(1.0 / 6.0, rel=0.10)

    def test_unbalanced_limit(self):
        vals = [
            estimate_kernel_separate(
                generate_separate(ADDITIVE, (100, 400), child_seed(301, s)), F
            ).value
            for s in range(10)
        ]
        assert np.mean(vals) == pytest.approx(5.0 / 48.0, rel=0.10)

    def test_lambda_weights(self):
        arr = generate_separate(ADDITIVE, (10, 40), seed=2)
        est = estimate_kernel_separate(arr, F)
        assert est.lambdas == (1.0, 0.25)

    def test_small_dimension_rejected(self):
        arr = generate_separate(ADDITIVE, (1, 5), seed=1)
        with pytest.raises(DegenerateSampleError):
            estimate_kernel_separate(arr, F)

    def test_projection_identity(self):
        arr = generate_separate(ADDITIVE, (6, 9), seed=3)
        est = estimate_kernel_separate(arr, F)
        recomputed = sum(
            lam * float(np.sum(a * b)) / nj
            for lam, nj, a, b in zip(est.lambdas, est.dims, est.g_first, est.g_second)
        )
        assert est.value == pytest.approx(recomputed, rel=1e-15)
