import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from cdmd.ctmc import (
    BaseGenerator,
    ForwardKernel,
    NoiseSchedule,
    StateSpace,
    _clean_stochastic,
    build_uniform_generator,
    forward_kernel,
    forward_kernel_series_oracle,
    forward_sample,
    integrated_noise,
    reverse_rate_matrix,
    transition_kernel,
)
from cdmd.errors import DomainError, NumericalError
from cdmd.oracle import DataDistribution, exact_marginal


class TestUniformGenerator:
    def test_two_states(self):
        gen = build_uniform_generator(StateSpace(2))
        np.testing.assert_array_equal(gen.Q, [[-1.0, 1.0], [1.0, -1.0]])

    def test_single_state(self):
        gen = build_uniform_generator(StateSpace(1))
        np.testing.assert_array_equal(gen.Q, [[0.0]])
        np.testing.assert_array_equal(forward_kernel(gen, NoiseSchedule.constant(), 0.7).P, [[1.0]])

    def test_three_states_against_dense_eig(self):
        gen = build_uniform_generator(StateSpace(3))
        ref = np.sort(np.linalg.eigvals(gen.Q).real)
        np.testing.assert_allclose(np.sort(gen.eigvals), ref, atol=1e-12)
        np.testing.assert_allclose(np.sort(gen.eigvals), [-3.0, -3.0, 0.0])
        np.testing.assert_allclose((gen.S * gen.eigvals) @ gen.S_inv, gen.Q, atol=1e-10)

    @pytest.mark.parametrize("n", [2, 3, 5, 8, 16])
    def test_invariants(self, n):
        gen = build_uniform_generator(n)
        np.testing.assert_allclose(gen.Q.sum(axis=1), 0.0, atol=1e-12)
        off = gen.Q[~np.eye(n, dtype=bool)]
        assert np.all(off >= 0)
        np.testing.assert_array_equal(gen.S[:, 0], np.ones(n))
        np.testing.assert_allclose(gen.S @ gen.S_inv, np.eye(n), atol=1e-14)

    def test_rejects_bad_generator(self):
        Q = np.array([[-1.0, 2.0], [1.0, -1.0]])
        with pytest.raises(DomainError):
            BaseGenerator.from_rate_matrix(Q)

    def test_from_rate_matrix_matches_uniform(self):
        gen = build_uniform_generator(4)
        other = BaseGenerator.from_rate_matrix(gen.Q)
        sched = NoiseSchedule.constant()
        np.testing.assert_allclose(forward_kernel(other, sched, 0.3).P, forward_kernel(gen, sched, 0.3).P, atol=1e-12)

    def test_state_space_validation(self):
        with pytest.raises(DomainError):
            StateSpace(0)


class TestNoiseSchedule:
    def test_constant(self):
        assert integrated_noise(NoiseSchedule.constant(1.0), 0.5) == 0.5

    @pytest.mark.parametrize("sched", [NoiseSchedule.constant(2.0), NoiseSchedule.geometric(0.05, 100.0)])
    def test_zero(self, sched):
        assert integrated_noise(sched, 0.0) == 0.0

    @pytest.mark.parametrize("a,b,T", [(0.05, 100.0, 1.0), (0.3, 0.2, 2.0), (1.0, 1.0, 1.5)])
    def test_geometric_against_quadrature(self, a, b, T):
        sched = NoiseSchedule.geometric(a, b, T)
        ref, _ = integrate.quad(lambda u: a * b**u, 0, T, epsabs=1e-13, epsrel=1e-13)
        assert abs(integrated_noise(sched, T) - ref) < 1e-10

    def test_strictly_increasing(self):
        sched = NoiseSchedule.geometric(0.05, 100.0)
        vals = sched.integrated(np.linspace(0, 1, 200))
        assert np.all(np.diff(vals) > 0)

    @pytest.mark.parametrize("t", [-1e-9, 1.0 + 1e-9, float("nan")])
    def test_domain(self, t):
        with pytest.raises(DomainError):
            integrated_noise(NoiseSchedule.constant(), t)

    def test_rejects_bad_params(self):
        with pytest.raises(DomainError):
            NoiseSchedule("constant", {"c": -1.0})
        with pytest.raises(DomainError):
            NoiseSchedule("geometric", {"a": 1.0})
        with pytest.raises(DomainError):
            NoiseSchedule("cosine", {})


class TestForwardKernel:
    def test_identity_at_zero(self, gen4, schedule):
        assert np.array_equal(forward_kernel(gen4, schedule, 0.0).P, np.eye(4))

    def test_two_state_half_decay(self):
        # e^{-2 tau} = 1/2  =>  stay probability (1 + 1/2) / 2
        gen = build_uniform_generator(2)
        t = math.log(2) / 2
        P = forward_kernel(gen, NoiseSchedule.constant(1.0), t).P
        expected = np.array([[0.75, 0.25], [0.25, 0.75]])
        np.testing.assert_allclose(P, expected, atol=1e-12)
        np.testing.assert_allclose(forward_kernel_series_oracle(gen, t).P, expected, atol=1e-10)

    def test_random_times_match_series(self, gen4, schedule, rng):
        for t in rng.uniform(0, 1, 10):
            P = forward_kernel(gen4, schedule, t).P
            ref = forward_kernel_series_oracle(gen4, schedule.integrated(t)).P
            np.testing.assert_allclose(P, ref, atol=1e-9, rtol=0)

    def test_series_oracle_identity_and_stochastic(self):
        gen = build_uniform_generator(8)
        np.testing.assert_array_equal(forward_kernel_series_oracle(gen, 0.0).P, np.eye(8))
        P = forward_kernel_series_oracle(gen, 3.0).P
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(2, 16), s=st.floats(0, 1), t=st.floats(0, 1))
    def test_chapman_kolmogorov(self, n, s, t):
        s, t = min(s, t), max(s, t)
        gen = build_uniform_generator(n)
        sched = NoiseSchedule.geometric(0.05, 100.0)
        lhs = forward_kernel(gen, sched, t).P
        rhs = forward_kernel(gen, sched, s).P @ transition_kernel(gen, sched, s, t).P
        np.testing.assert_allclose(lhs, rhs, atol=1e-9, rtol=0)

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(2, 16), t=st.floats(0, 1))
    def test_row_stochastic(self, n, t):
        P = forward_kernel(build_uniform_generator(n), NoiseSchedule.geometric(0.05, 100.0), t).P
        assert P.min() >= 0 and P.max() <= 1
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-10)

    @pytest.mark.parametrize("n", [2, 4, 9])
    @pytest.mark.parametrize("tau", [0.1, 0.5, 2.0])
    def test_uniform_limit_rate(self, n, tau):
        gen = build_uniform_generator(n)
        P = forward_kernel(gen, NoiseSchedule.constant(tau), 1.0).P
        assert np.max(np.abs(P - 1.0 / n)) <= math.exp(-n * tau)

    def test_clean_rejects_large_negative(self):
        with pytest.raises(NumericalError):
            _clean_stochastic(np.array([[1.0 + 1e-6, -1e-6], [0.5, 0.5]]))

    def test_clean_rejects_row_sum(self):
        with pytest.raises(NumericalError):
            _clean_stochastic(np.array([[0.9, 0.2], [0.5, 0.5]]))

    def test_clean_clamps_roundoff(self):
        P = _clean_stochastic(np.array([[1.0 + 5e-13, -5e-13], [0.5, 0.5]]))
        assert P[0, 1] == 0.0 and P[0, 0] == 1.0

    def test_transition_kernel_order(self, gen4, schedule):
        with pytest.raises(DomainError):
            transition_kernel(gen4, schedule, 0.6, 0.5)


class TestForwardSample:
    def test_identity_kernel(self, rng):
        k = ForwardKernel(0.0, np.eye(5))
        for x0 in range(5):
            assert forward_sample(k, x0, rng) == x0

    def test_binomial_frequency(self):
        k = ForwardKernel(0.1, [[0.75, 0.25], [0.25, 0.75]])
        rng = np.random.default_rng(7)
        n = 100_000
        hits = sum(forward_sample(k, 0, rng) == 0 for _ in range(n))
        se = math.sqrt(0.75 * 0.25 / n)
        assert abs(hits / n - 0.75) < 3 * se

    def test_deterministic(self):
        k = ForwardKernel(0.1, [[0.2, 0.3, 0.5]] * 3)
        a = [forward_sample(k, 1, r) for r in [np.random.default_rng(3)] for _ in range(50)]
        b = [forward_sample(k, 1, r) for r in [np.random.default_rng(3)] for _ in range(50)]
        assert a == b

    def test_bad_state(self, rng):
        with pytest.raises(DomainError):
            forward_sample(ForwardKernel(0.0, np.eye(2)), 2, rng)


class TestReverseRate:
    def test_unit_ratios_give_forward_rates(self, gen4, schedule):
        R = reverse_rate_matrix(gen4, schedule, 0.4, np.ones((4, 4)))
        np.testing.assert_allclose(R, schedule.sigma(0.4) * gen4.Q, atol=1e-15)

    def test_rows_sum_to_zero(self, gen4, schedule, rng):
        R = reverse_rate_matrix(gen4, schedule, 0.7, rng.uniform(0.1, 10, (4, 4)))
        np.testing.assert_allclose(R.sum(axis=1), 0.0, atol=1e-12)

    def test_rejects_nonpositive(self, gen4, schedule):
        r = np.ones((4, 4))
        r[1, 2] = 0.0
        with pytest.raises(DomainError):
            reverse_rate_matrix(gen4, schedule, 0.5, r)

    def test_reverse_ctmc_recovers_data(self):
        gen = build_uniform_generator(2)
        sched = NoiseSchedule.geometric(0.05, 100.0)
        data = DataDistribution([0.8, 0.2])
        t0, steps = 0.5, 1000
        dist = exact_marginal(data, forward_kernel(gen, sched, t0)).pt
        times = np.linspace(t0, 0.0, steps + 1)
        for t, s in zip(times[:-1], times[1:]):
            pt = exact_marginal(data, forward_kernel(gen, sched, t)).pt
            R = reverse_rate_matrix(gen, sched, t, pt[None, :] / pt[:, None])
            dist = dist @ (np.eye(2) + (t - s) * R)
        assert 0.5 * np.abs(dist - data.p0).sum() < 1e-3
