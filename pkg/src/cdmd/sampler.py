"""Euler reverse sampler, its exact law, and KL evaluation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .ctmc import categorical
from .errors import DegenerateDistributionError, DomainError

GRID_KINDS = ("uniform", "geometric")


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Decreasing times ``times[0] = T > ... > times[K] = eps``."""

    times: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=np.float64)
        if times.ndim != 1 or times.size < 2:
            raise DomainError("a grid needs at least two times")
        if np.any(np.diff(times) >= 0):
            raise DomainError("grid times must be strictly decreasing")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @property
    def K(self):
        return self.times.size - 1

    @classmethod
    def make(cls, K, T, eps, kind="uniform"):
        if K < 1:
            raise DomainError("need at least one step")
        if not 0 < eps < T:
            raise DomainError("need 0 < eps < T")
        if kind == "uniform":
            times = np.linspace(T, eps, K + 1)
        elif kind == "geometric":
            times = eps * (T / eps) ** np.linspace(1.0, 0.0, K + 1)
        else:
            raise DomainError(f"unknown grid kind {kind!r}")
        times[0], times[-1] = T, eps
        return cls(times)

    def steps(self):
        """``(t, s)`` pairs in sampling order."""
        return list(zip(self.times[:-1], self.times[1:]))


@dataclass(frozen=True, eq=False)
class StepKernel:
    t: float
    s: float
    P: np.ndarray
    violation: float = 0.0


def euler_step_matrix(scores, Q, sigma_t, h):
    """Row-stochastic Euler step from a full score matrix.

    ``scores[x, y]`` approximates ``p_t(y) / p_t(x)`` (diagonal ignored and
    taken as 1). Raw row ``x`` is ``1{y=x} + h*sigma_t*Q[x, y]*scores[x, y]``;
    negative entries are clamped and rows renormalized.

    Returns ``(P, violation)`` where ``violation`` is the largest clamped
    negative mass over rows.
    """
    scores = np.array(scores, dtype=np.float64)
    np.fill_diagonal(scores, 1.0)
    raw = np.eye(scores.shape[0]) + (h * sigma_t) * np.asarray(Q) * scores
    neg = -np.minimum(raw, 0.0).sum(axis=1)
    P = np.maximum(raw, 0.0)
    tot = P.sum(axis=1)
    if np.any(tot <= 0):
        raise DegenerateDistributionError("Euler row has no positive mass")
    return P / tot[:, None], float(neg.max())


def euler_step_kernel(table, gen, schedule, t, s):
    if not table.eps <= s <= t <= table.T:
        raise DomainError(f"need eps <= s <= t <= T, got s={s}, t={t}")
    P, viol = euler_step_matrix(table.score_matrix(t), gen.Q, schedule.sigma(t), t - s)
    return StepKernel(t=float(t), s=float(s), P=P, violation=viol)


def step_kernels(table, gen, schedule, grid):
    return [euler_step_kernel(table, gen, schedule, t, s) for t, s in grid.steps()]


def pushforward_exact(table, gen, schedule, grid, init=None):
    """Law of the K-step sampler's output, by matrix composition.

    ``init`` defaults to the uniform terminal distribution.
    """
    n = table.N
    dist = np.full(n, 1.0 / n) if init is None else np.array(init, dtype=np.float64)
    if dist.shape != (n,) or abs(dist.sum() - 1.0) > 1e-10:
        raise DomainError("init must be a probability vector over the states")
    for step in step_kernels(table, gen, schedule, grid):
        dist = dist @ step.P
    return dist


def sample_trajectory(table, gen, schedule, grid, rng):
    """One sampler run from ``X_T ~ uniform``; returns the ``K + 1`` visited states."""
    n = table.N
    states = [categorical(np.full(n, 1.0 / n), rng.random())]
    for step in step_kernels(table, gen, schedule, grid):
        states.append(categorical(step.P[states[-1]], rng.random()))
    return np.array(states, dtype=np.int64)


def sample_trajectories(table, gen, schedule, grid, n_samples, rng, backend=None):
    """Many independent trajectories at once, shape ``(n_samples, K + 1)``."""
    n = table.N
    mats = np.stack([np.full((n, n), 1.0 / n)] + [k.P for k in step_kernels(table, gen, schedule, grid)])
    cdfs = np.cumsum(mats, axis=2)
    u = rng.random((n_samples, grid.K + 1))
    return kernels.get_backend(backend).trajectories(cdfs, u)


def kl_divergence(p, q):
    """``sum p log(p/q)`` with ``0 log 0 = 0``; ``inf`` if ``p`` is not dominated by ``q``."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    support = p > 0
    if np.any(q[support] <= 0):
        return float("inf")
    val = float(np.sum(p[support] * np.log(p[support] / q[support])))
    return max(val, 0.0)
