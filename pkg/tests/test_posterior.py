import numpy as np
import pytest

from cdmd.ctmc import ForwardKernel, build_uniform_generator, forward_kernel
from cdmd.errors import DegenerateDistributionError, IllConditionedError, SingularKernelError
from cdmd.oracle import DataDistribution, exact_marginal, exact_posterior, exact_ratios
from cdmd.posterior import (
    COND_LIMIT,
    RatioMatrix,
    build_ratio_matrix,
    model_conditional,
    recover_posterior_from_ratios,
    sanitize_distribution,
)
from cdmd.score_model import ScoreTable, fit_from_oracle

from conftest import random_data

K075 = ForwardKernel(0.1, [[0.75, 0.25], [0.25, 0.75]])


class TestRatioMatrix:
    def test_two_state_by_hand(self):
        rm = build_ratio_matrix(K075, 0)
        # A[1, 0] = 0.25/0.75, A[1, 1] = 0.75/0.25
        np.testing.assert_allclose(rm.A, [[1, 1], [1 / 3, 3]], rtol=1e-14)

    def test_row_x_is_ones(self, gen4, schedule, rng):
        for t in rng.uniform(0.01, 1, 5):
            k = forward_kernel(gen4, schedule, t)
            for x in range(4):
                assert np.array_equal(build_ratio_matrix(k, x).A[x], np.ones(4))

    def test_identity_kernel_rejected(self):
        with pytest.raises(SingularKernelError):
            build_ratio_matrix(ForwardKernel(0.0, np.eye(3)), 1)

    def test_near_zero_time_is_ill_conditioned(self, gen4, schedule):
        rm = build_ratio_matrix(forward_kernel(gen4, schedule, 1e-4), 0)
        assert np.all(np.isfinite(rm.A))
        assert rm.cond_estimate > 1e3

    def test_over_limit_raises(self):
        rm = RatioMatrix(0.1, 0, np.eye(2), 10 * COND_LIMIT)
        with pytest.raises(IllConditionedError):
            recover_posterior_from_ratios(rm, [1.0, 1.0])


class TestRecovery:
    def test_two_state(self):
        data = DataDistribution([0.8, 0.2])
        m = exact_marginal(data, K075)
        p = recover_posterior_from_ratios(build_ratio_matrix(K075, 0), exact_ratios(m, 0))
        np.testing.assert_allclose(p, [0.6 / 0.65, 0.05 / 0.65], atol=1e-12)

    def test_one_hot_consistency(self, gen4, schedule):
        rm = build_ratio_matrix(forward_kernel(gen4, schedule, 0.5), 2)
        for j in range(4):
            np.testing.assert_allclose(recover_posterior_from_ratios(rm, rm.A[:, j]), np.eye(4)[j], atol=1e-10)

    @pytest.mark.parametrize("n", [2, 3, 4, 8, 16])
    def test_exact_ratios_give_bayes(self, n, schedule, rng):
        gen = build_uniform_generator(n)
        for _ in range(20):
            d = random_data(rng, n)
            k = forward_kernel(gen, schedule, rng.uniform(0.05, 1))
            m = exact_marginal(d, k)
            for x in range(n):
                rm = build_ratio_matrix(k, x)
                p = recover_posterior_from_ratios(rm, exact_ratios(m, x))
                np.testing.assert_allclose(p, exact_posterior(d, k, m, x), atol=1e-8, rtol=0)
                np.testing.assert_allclose(rm.A @ p, exact_ratios(m, x), atol=1e-10, rtol=0)

    def test_perturbation_bound(self, data4, gen4, schedule, rng):
        k = forward_kernel(gen4, schedule, 0.4)
        m = exact_marginal(data4, k)
        for x in range(4):
            rm = build_ratio_matrix(k, x)
            noisy = exact_ratios(m, x) + 1e-6 * rng.uniform(-1, 1, 4)
            p = recover_posterior_from_ratios(rm, noisy)
            assert np.max(np.abs(p - exact_posterior(data4, k, m, x))) <= rm.cond_estimate * 1e-6


class TestModelConditional:
    def test_teacher_at_centers(self, data4, gen4, schedule):
        table = fit_from_oracle(data4, gen4, schedule, 8)
        for tc in table.centers()[1:]:
            k = forward_kernel(gen4, schedule, tc)
            m = exact_marginal(data4, k)
            for x in range(4):
                np.testing.assert_allclose(model_conditional(table, k, tc, x), exact_posterior(data4, k, m, x),
                                           atol=1e-8, rtol=0)

    def test_unit_scores_give_uniform_data_posterior(self, gen4, schedule, rng):
        table = ScoreTable.zeros(4)
        uniform = DataDistribution(np.full(4, 0.25))
        for t in rng.uniform(0.05, 1, 5):
            k = forward_kernel(gen4, schedule, t)
            m = exact_marginal(uniform, k)
            for x in range(4):
                np.testing.assert_allclose(model_conditional(table, k, t, x), exact_posterior(uniform, k, m, x),
                                           atol=1e-8, rtol=0)


class TestSanitize:
    def test_valid_unchanged(self):
        v = np.array([0.2, 0.3, 0.5])
        out, viol = sanitize_distribution(v, return_violation=True)
        np.testing.assert_array_equal(out, v)
        assert viol == 0.0

    def test_clamp(self):
        out, viol = sanitize_distribution([1.1, -0.1], return_violation=True)
        np.testing.assert_allclose(out, [1.0, 0.0])
        assert viol == pytest.approx(0.2)

    def test_renormalize(self):
        np.testing.assert_allclose(sanitize_distribution([0.5, 0.3, 0.4]), [5 / 12, 3 / 12, 4 / 12])

    def test_degenerate(self):
        with pytest.raises(DegenerateDistributionError):
            sanitize_distribution([-0.5, 0.0])
