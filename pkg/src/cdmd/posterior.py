"""Recover reverse conditionals ``p_{0|t}(. | x)`` from concrete scores.

For a fixed noisy state ``x`` the ratio vector ``r_y = p_t(y) / p_t(x)`` is a
linear image of the posterior, ``r = A p`` with
``A[y, x0] = p_{t|0}(y | x0) / p_{t|0}(x | x0)``. Given a model's scores we
solve that system instead of ever forming ``A^-1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .ctmc import forward_kernel
from .errors import DegenerateDistributionError, DomainError, IllConditionedError, SingularKernelError
from .score_model import eval_score

COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class RatioMatrix:
    t: float
    x: int
    A: np.ndarray
    cond_estimate: float


def ratio_matrix_entries(P, x):
    """``A[y, x0] = P[x0, y] / P[x0, x]``; raises on a zero denominator."""
    P = np.asarray(P)
    denom = P[:, x]
    if np.any(denom <= 0):
        raise SingularKernelError(f"p(x_t={x} | x0) vanishes for some x0; ratio matrix undefined")
    A = (P / denom[:, None]).T
    A[x, :] = 1.0
    return A


def build_ratio_matrix(kernel, x):
    if not 0 <= x < kernel.N:
        raise DomainError(f"state {x} outside [0, {kernel.N})")
    A = ratio_matrix_entries(kernel.P, x)
    A.setflags(write=False)
    with np.errstate(all="ignore"):
        cond = float(np.linalg.cond(A, 1))
    if not np.isfinite(cond):
        cond = np.inf
    return RatioMatrix(t=kernel.t, x=x, A=A, cond_estimate=cond)


def recover_posterior_from_ratios(rm, ratios):
    """Solve ``A p = r``; the raw solution may leave the simplex."""
    if rm.cond_estimate > COND_LIMIT:
        raise IllConditionedError(rm.cond_estimate, COND_LIMIT)
    r = np.asarray(ratios, dtype=np.float64)
    try:
        lu = scipy.linalg.lu_factor(rm.A, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SingularKernelError(str(exc)) from exc
    if np.any(np.diag(lu[0]) == 0):
        raise SingularKernelError("ratio matrix is singular")
    return scipy.linalg.lu_solve(lu, r)


def model_conditional(table, kernel, t, x):
    """Posterior estimate implied by ``table``'s scores at ``(t, x)``.

    ``kernel`` must be ``p_{t|0}`` at the same ``t``.
    """
    scores = eval_score(table, t, x)
    return recover_posterior_from_ratios(build_ratio_matrix(kernel, x), scores)


def model_conditional_at(table, gen, schedule, t, x):
    return model_conditional(table, forward_kernel(gen, schedule, t), t, x)


def sanitize_distribution(v, return_violation=False):
    """Project a raw solve onto the simplex by clamping and renormalizing.

    The violation is the L1 distance from ``v`` to the clamped vector plus
    the leftover mass deficit, i.e. ``sum|min(v,0)| + |sum(max(v,0)) - 1|``.
    """
    v = np.asarray(v, dtype=np.float64)
    c = np.maximum(v, 0.0)
    total = c.sum()
    if not total > 0:
        raise DegenerateDistributionError("no positive mass to renormalize")
    out = c / total
    if not return_violation:
        return out
    violation = float(-np.minimum(v, 0.0).sum() + abs(total - 1.0))
    return out, violation
