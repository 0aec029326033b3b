"""Exact, enumeration-only ground truth: marginals, ratios, posteriors.

Nothing here samples. Every function works on dense arrays small enough to
enumerate, so results are exact up to floating-point round-off.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ctmc import forward_kernel, transition_kernel
from .errors import DomainError


@dataclass(frozen=True, eq=False)
class DataDistribution:
    p0: np.ndarray

    def __post_init__(self):
        p = np.array(self.p0, dtype=np.float64)
        if p.ndim != 1 or p.size < 1:
            raise DomainError("p0 must be a nonempty vector")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise DomainError(f"p0 must be a probability vector (sum={p.sum()!r})")
        if np.count_nonzero(p > 1e-6) < 2:
            raise DomainError("p0 needs at least two states with mass above 1e-6")
        p.setflags(write=False)
        object.__setattr__(self, "p0", p)

    @property
    def N(self):
        return self.p0.size


@dataclass(frozen=True, eq=False)
class ExactMarginal:
    t: float
    pt: np.ndarray


def exact_marginal(data, kernel):
    if kernel.N != data.N:
        raise DomainError("kernel and data distribution disagree on N")
    pt = data.p0 @ kernel.P
    pt.setflags(write=False)
    return ExactMarginal(t=kernel.t, pt=pt)


def exact_ratios(marginal, x):
    """Concrete score ``p_t(y) / p_t(x)`` for every ``y``; entry ``x`` is 1."""
    px = marginal.pt[x]
    if px <= 0:
        raise DomainError(f"p_t({x}) = 0; ratios undefined")
    r = marginal.pt / px
    r[x] = 1.0
    return r


def exact_posterior(data, kernel, marginal, x):
    """Bayes posterior ``p_{0|t}(. | x)``."""
    px = marginal.pt[x]
    if px <= 0:
        raise DomainError(f"p_t({x}) = 0; posterior undefined")
    return kernel.P[:, x] * data.p0 / px


def posterior_matrix(data, kernel):
    """Row ``x`` is ``p_{0|t}(. | x)``; rows with ``p_t(x) = 0`` are left at 0."""
    joint = data.p0[:, None] * kernel.P
    pt = joint.sum(axis=0)
    out = np.zeros_like(joint.T)
    nz = pt > 0
    out[nz] = joint.T[nz] / pt[nz, None]
    return out


def exact_reverse_conditional(data, gen, schedule, s, t):
    """Exact reverse step ``p_{s|t}``: row ``x_t``, column ``x_s``."""
    ps = exact_marginal(data, forward_kernel(gen, schedule, s)).pt
    pt = exact_marginal(data, forward_kernel(gen, schedule, t)).pt
    Pts = transition_kernel(gen, schedule, s, t).P
    return Pts.T * ps[None, :] / pt[:, None]


def check_markov_mixture(data, gen, schedule, s, t):
    """Largest gap in ``p_{0|t} = sum_{x_s} p_{s|t} p_{0|s}`` over all entries."""
    if not 0 < s <= t <= schedule.T:
        raise DomainError(f"need 0 < s <= t <= T, got s={s}, t={t}")
    Ks = forward_kernel(gen, schedule, s)
    Kt = forward_kernel(gen, schedule, t)
    post_s = posterior_matrix(data, Ks)
    post_t = posterior_matrix(data, Kt)
    step = exact_reverse_conditional(data, gen, schedule, s, t)
    return float(np.max(np.abs(post_t - step @ post_s)))


def markov_joint(p0, forward_a, forward_b):
    """Joint of a three-time Markov chain ``x0 -> x_s -> x_t``.

    ``joint[x0, xs, xt] = p0[x0] * forward_a[x0, xs] * forward_b[xs, xt]``.
    """
    p0 = np.asarray(p0, dtype=np.float64)
    return p0[:, None, None] * np.asarray(forward_a)[:, :, None] * np.asarray(forward_b)[None, :, :]


def jensen_gap_check(joint, teacher_values, x0_values=None):
    """Teacher vs. optimal-student squared reconstruction error.

    ``joint[x0, xs, xt]`` is an explicit distribution over triples.
    ``teacher_values[xt]`` is the teacher's real-valued (scalar or vector)
    prediction of ``x0`` from ``xt``. ``x0_values[x0]`` embeds the clean state
    as a real vector; defaults to the state index. The student predicts from
    ``xs`` by averaging the teacher over ``xt | xs``.

    The student can only be worse than the teacher when ``xt`` carries
    information about ``x0`` beyond ``xs``; for a Markov chain
    ``x0 -> xs -> xt`` the student never loses.

    Returns ``(teacher_mse, student_mse)``.
    """
    joint = np.asarray(joint, dtype=np.float64)
    if joint.ndim != 3:
        raise DomainError("joint must be indexed [x0, xs, xt]")
    if np.any(joint < 0) or abs(joint.sum() - 1.0) > 1e-10:
        raise DomainError("joint must be a probability table")
    n0, _, nt = joint.shape
    theta = np.asarray(teacher_values, dtype=np.float64)
    if theta.ndim == 1:
        theta = theta[:, None]
    if theta.shape[0] != nt:
        raise DomainError("need one teacher prediction per x_t")
    if x0_values is None:
        x0_values = np.arange(n0, dtype=np.float64)
    x0v = np.asarray(x0_values, dtype=np.float64)
    if x0v.ndim == 1:
        x0v = x0v[:, None]
    if x0v.shape != (n0, theta.shape[1]):
        raise DomainError("x0 embedding and teacher predictions must share a dimension")

    p_st = joint.sum(axis=0)  # [xs, xt]
    p_s = p_st.sum(axis=1)
    student = np.zeros((joint.shape[1], theta.shape[1]))
    nz = p_s > 0
    student[nz] = (p_st[nz] @ theta) / p_s[nz, None]

    err_t = np.sum((theta[None, :, :] - x0v[:, None, :]) ** 2, axis=-1)  # [x0, xt]
    err_s = np.sum((student[None, :, :] - x0v[:, None, :]) ** 2, axis=-1)  # [x0, xs]
    teacher_mse = float(np.einsum("abc,ac->", joint, err_t))
    student_mse = float(np.einsum("abc,ab->", joint, err_s))
    return teacher_mse, student_mse


def diffusion_joint(data, gen, schedule, s, t):
    """Joint of ``(x0, x_s, x_t)`` under the forward process, ``s <= t``."""
    Ks = forward_kernel(gen, schedule, s).P
    Kst = transition_kernel(gen, schedule, s, t).P
    return markov_joint(data.p0, Ks, Kst)
