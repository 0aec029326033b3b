"""Numerical identity checks run by ``cdmd verify``.

Every check compares two independently computed quantities and reports the
largest deviation against a fixed tolerance.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .ctmc import forward_kernel, forward_kernel_series_oracle, transition_kernel
from .oracle import (
    DataDistribution,
    check_markov_mixture,
    exact_marginal,
    exact_posterior,
    exact_ratios,
    exact_reverse_conditional,
    jensen_gap_check,
    markov_joint,
)
from .posterior import build_ratio_matrix, recover_posterior_from_ratios
from .sampler import euler_step_matrix


@dataclass
class CheckResult:
    name: str
    deviation: float
    tolerance: float
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def _check(name, deviation, tolerance, **details):
    return CheckResult(name, float(deviation), tolerance, bool(deviation <= tolerance), details)


def random_distribution(rng, n, floor=1e-3):
    p = np.maximum(rng.dirichlet(np.ones(n)), floor)
    return DataDistribution(p / p.sum())


def check_generator(gen):
    recon = (gen.S * gen.eigvals) @ gen.S_inv
    return _check("generator_eigendecomposition", np.max(np.abs(recon - gen.Q)), 1e-10)


def check_kernel_vs_series(gen, schedule, rng, n=50):
    dev = 0.0
    for t in rng.uniform(0, schedule.T, n):
        P = forward_kernel(gen, schedule, t).P
        ref = forward_kernel_series_oracle(gen, schedule.integrated(t)).P
        dev = max(dev, np.max(np.abs(P - ref)))
    return _check("kernel_vs_series_oracle", dev, 1e-9, instances=n)


def check_row_stochastic(gen, schedule, rng, n=50):
    dev = 0.0
    for t in rng.uniform(0, schedule.T, n):
        P = forward_kernel(gen, schedule, t).P
        dev = max(dev, np.max(np.abs(P.sum(axis=1) - 1.0)), -min(P.min(), 0.0))
    return _check("kernel_row_stochastic", dev, 1e-10, instances=n)


def check_chapman_kolmogorov(gen, schedule, rng, n=20):
    dev = 0.0
    for _ in range(n):
        s, t = np.sort(rng.uniform(0, schedule.T, 2))
        lhs = forward_kernel(gen, schedule, t).P
        rhs = forward_kernel(gen, schedule, s).P @ transition_kernel(gen, schedule, s, t).P
        dev = max(dev, np.max(np.abs(lhs - rhs)))
    return _check("chapman_kolmogorov", dev, 1e-9, instances=n)


def check_markov_mixture_identity(data, gen, schedule, rng, n=20):
    dev = 0.0
    for i in range(n):
        d = data if i == 0 else random_distribution(rng, gen.N)
        s, t = np.sort(rng.uniform(1e-3 * schedule.T, schedule.T, 2))
        dev = max(dev, check_markov_mixture(d, gen, schedule, s, t))
    return _check("markov_mixture", dev, 1e-9, instances=n)


def check_posterior_recovery(data, gen, schedule, rng, n=20):
    dev = 0.0
    for i in range(n):
        d = data if i == 0 else random_distribution(rng, gen.N)
        t = rng.uniform(0.05 * schedule.T, schedule.T)
        k = forward_kernel(gen, schedule, t)
        m = exact_marginal(d, k)
        for x in range(gen.N):
            rec = recover_posterior_from_ratios(build_ratio_matrix(k, x), exact_ratios(m, x))
            dev = max(dev, np.max(np.abs(rec - exact_posterior(d, k, m, x))))
    return _check("posterior_recovery", dev, 1e-8, instances=n)


def euler_local_error(data, gen, schedule, t, h):
    """Largest row TV between the Euler step with exact scores and the exact reverse step."""
    pt = exact_marginal(data, forward_kernel(gen, schedule, t)).pt
    scores = pt[None, :] / pt[:, None]
    P, _ = euler_step_matrix(scores, gen.Q, schedule.sigma(t), h)
    exact = exact_reverse_conditional(data, gen, schedule, t - h, t)
    return 0.5 * float(np.max(np.abs(P - exact).sum(axis=1)))


def check_euler_order(data, gen, schedule, rng, n=10, h=2e-3):
    worst = np.inf
    for i in range(n):
        d = data if i == 0 else random_distribution(rng, gen.N)
        t = rng.uniform(0.2 * schedule.T, schedule.T)
        e1 = euler_local_error(d, gen, schedule, t, h)
        e2 = euler_local_error(d, gen, schedule, t, h / 2)
        worst = min(worst, e1 / e2)
    # deviation is the shortfall below the required halving factor
    return _check("euler_local_order", max(0.0, 3.5 - worst), 0.0, min_reduction=worst, instances=n)


def check_jensen(data, gen, schedule, rng, n=100):
    gap = -np.inf
    n_states = gen.N
    for _ in range(n):
        p0 = rng.dirichlet(np.ones(n_states))
        A = rng.dirichlet(np.ones(n_states), size=n_states)
        B = rng.dirichlet(np.ones(n_states), size=n_states)
        teacher = rng.normal(size=(n_states, 2))
        tm, sm = jensen_gap_check(markov_joint(p0, A, B), teacher, rng.normal(size=(n_states, 2)))
        gap = max(gap, sm - tm)
    # diffusion instance: teacher predicts the posterior mean of x0 from x_t
    s, t = 0.3 * schedule.T, 0.6 * schedule.T
    joint = markov_joint(data.p0, forward_kernel(gen, schedule, s).P, transition_kernel(gen, schedule, s, t).P)
    p_x0_xt = joint.sum(axis=1)
    mean = (np.arange(gen.N) @ p_x0_xt) / p_x0_xt.sum(axis=0)
    tm, sm = jensen_gap_check(joint, mean)
    gap = max(gap, sm - tm)
    return _check("jensen_bound", max(gap, 0.0), 1e-12, instances=n + 1, teacher_mse=tm, student_mse=sm)


def run_all(data, gen, schedule, seed=0):
    rng = np.random.default_rng(seed)
    return [
        check_generator(gen),
        check_kernel_vs_series(gen, schedule, rng),
        check_row_stochastic(gen, schedule, rng),
        check_chapman_kolmogorov(gen, schedule, rng),
        check_markov_mixture_identity(data, gen, schedule, rng),
        check_posterior_recovery(data, gen, schedule, rng),
        check_euler_order(data, gen, schedule, rng),
        check_jensen(data, gen, schedule, rng),
    ]
