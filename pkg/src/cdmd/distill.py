"""Conditional distribution matching distillation for tabular score models.

Each training item draws ``x0 ~ p0``, noises it to ``x_t``, takes one Euler
step with the *student* to an intermediate ``x_s`` (no gradient through the
draw), and then pulls the student's posterior at ``(t, x_t)`` towards the
frozen teacher's posterior at ``(s, x_s)`` with a weighted cross entropy.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg

from . import kernels
from .ctmc import forward_kernel
from .errors import DistillationAborted, DomainError
from .posterior import build_ratio_matrix, recover_posterior_from_ratios, sanitize_distribution
from .sampler import euler_step_matrix
from .score_model import clone_as_student, eval_score

log = logging.getLogger(__name__)

WEIGHT_FNS = ("constant", "inverse_t")
MAX_SKIP_FRACTION = 0.5


@dataclass(frozen=True)
class DistillConfig:
    K: int = 2
    iterations: int = 20000
    learning_rate: float = 0.1
    weight_fn: str = "constant"
    seed: int = 0
    batch: int = 8

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise DomainError("K must be a positive integer")
        if int(self.iterations) != self.iterations or self.iterations < 0:
            raise DomainError("iterations must be a nonnegative integer")
        if not (np.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise DomainError("learning_rate must be positive")
        if self.weight_fn not in WEIGHT_FNS:
            raise DomainError(f"weight_fn must be one of {WEIGHT_FNS}")
        if int(self.batch) != self.batch or self.batch < 1:
            raise DomainError("batch must be a positive integer")
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError("seed must fit in an unsigned 64-bit integer")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class IterationRecord:
    """One optimizer step; ``t``/``s`` are those of the batch's first item."""

    iter: int
    t: float
    s: float
    loss: float
    raw_simplex_violation_teacher: float
    raw_simplex_violation_student: float
    grad_norm: float
    skipped: int = 0


def weight_value(weight_fn, t, T=1.0, eps=None):
    if weight_fn == "constant":
        return 1.0
    if weight_fn == "inverse_t":
        eps = 1e-4 * T if eps is None else eps
        return T / max(t, eps)
    raise DomainError(f"unknown weight function {weight_fn!r}")


def sample_times(config, T, rng, eps=None, size=None):
    """``t ~ U[eps, T]``, ``dt ~ U(0, T/K)``, ``s = max(eps, t - dt)``."""
    eps = 1e-4 * T if eps is None else eps
    t = eps + (T - eps) * rng.random(size)
    dt = (T / config.K) * rng.random(size)
    s = np.maximum(eps, t - dt)
    if size is None:
        return float(t), float(s)
    return t, s


def item_loss_and_grad(student, teacher, gen, schedule, t, s, x_t, x_s, weight=1.0):
    """Loss and gradient for a single ``(t, s, x_t, x_s)`` item, built from the public ops.

    The gradient has the student's parameter shape and is nonzero only at
    ``[bucket(t), x_t, y]`` with ``y != x_t``. Reference implementation for
    the batch kernels.

    Returns ``(loss, grad, info)`` where ``info`` holds both sanitized
    posteriors and their raw simplex violations.
    """
    kt = forward_kernel(gen, schedule, t)
    ks = forward_kernel(gen, schedule, s)
    p_teach = recover_posterior_from_ratios(build_ratio_matrix(ks, x_s), eval_score(teacher, s, x_s))
    q_teach, viol_t = sanitize_distribution(p_teach, return_violation=True)

    rm = build_ratio_matrix(kt, x_t)
    r = eval_score(student, t, x_t)
    p_stud = recover_posterior_from_ratios(rm, r)
    q_stud, viol_s = sanitize_distribution(p_stud, return_violation=True)

    support = q_teach > 0
    live = support & (q_stud > kernels.LOG_FLOOR)
    logq = np.log(np.where(live, q_stud, kernels.LOG_FLOOR))
    loss = -weight * float(np.sum(q_teach[support] * logq[support]))
    g = np.zeros_like(q_stud)
    g[live] = -weight * q_teach[live] / q_stud[live]
    total = np.maximum(p_stud, 0.0).sum()
    dp = np.where(p_stud > 0, (g - np.dot(g, q_stud)) / total, 0.0)
    adj = scipy.linalg.solve(rm.A.T, dp)
    grad = np.zeros_like(student.params)
    row = adj * r
    row[x_t] = 0.0
    grad[student.bucket(t), x_t] = row
    info = {"q_teacher": q_teach, "q_student": q_stud, "viol_teacher": viol_t, "viol_student": viol_s}
    return loss, grad, info


def student_step_row(student, gen, schedule, t, s, x_t):
    P, _ = euler_step_matrix(student.score_matrix(t), gen.Q, schedule.sigma(t), t - s)
    return P[x_t]


def _draw_batch(config, data, schedule, eps, rng):
    # fixed draw order keeps runs reproducible regardless of backend
    B = config.batch
    T = schedule.T
    t, s = sample_times(config, T, rng, eps, size=B)
    u_x0 = rng.random(B)
    u_xt = rng.random(B)
    u_xs = rng.random(B)
    cdf = np.cumsum(data.p0)
    x0 = np.minimum(np.searchsorted(cdf, u_x0 * cdf[-1], side="right"), data.N - 1)
    return t, s, x0, u_xt, u_xs


def distill_iteration(student, teacher, data, gen, schedule, config, rng, iteration=0, backend=None):
    """One SGD step on a batch of ``config.batch`` independent items; mutates ``student``."""
    backend = kernels.get_backend(backend)
    eps = student.eps
    t, s, x0, u_xt, u_xs = _draw_batch(config, data, schedule, eps, rng)
    w = np.array([weight_value(config.weight_fn, ti, schedule.T, eps) for ti in t])
    sig_h = schedule.sigma(t) * (t - s)
    grad, loss, vt, vs, status, _, _ = backend.distill_batch(
        gen.S, gen.eigvals, gen.S_inv, gen.Q, teacher.params, student.params, x0,
        schedule.integrated(t), schedule.integrated(s), sig_h,
        student.bucket(t), teacher.bucket(s), w, u_xt, u_xs,
    )
    good = status == kernels.OK
    n_good = int(good.sum())
    if n_good:
        grad /= n_good
        student.params -= config.learning_rate * grad
        mean = lambda a: float(np.mean(a[good]))  # noqa: E731
        rec = IterationRecord(iteration, float(t[0]), float(s[0]), mean(loss), mean(vt), mean(vs),
                              float(np.linalg.norm(grad)), int(np.count_nonzero(~good)))
    else:
        nan = float("nan")
        rec = IterationRecord(iteration, float(t[0]), float(s[0]), nan, nan, nan, 0.0, len(status))
    return rec


def run_distillation(teacher, data, gen, schedule, config, backend=None, progress=None):
    """Train a student from ``teacher``; returns ``(student, records)``.

    Raises ``DistillationAborted`` when more than half of all items were skipped.
    """
    backend = kernels.get_backend(backend)
    rng = np.random.default_rng(config.seed)
    student = clone_as_student(teacher)
    records = []
    skipped = 0
    for it in range(config.iterations):
        rec = distill_iteration(student, teacher, data, gen, schedule, config, rng, it, backend)
        skipped += rec.skipped
        records.append(rec)
        if progress is not None:
            progress(rec)
    total = config.iterations * config.batch
    if total and skipped > MAX_SKIP_FRACTION * total:
        raise DistillationAborted(
            f"{skipped} of {total} training items were skipped (ill-conditioned or degenerate)",
            skipped, total,
        )
    if skipped:
        log.info("skipped %d of %d training items", skipped, total)
    return student, records
