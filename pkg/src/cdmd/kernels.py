"""Hot loops of the distillation trainer and the trajectory sampler.

Two interchangeable backends expose the same functions:

``NumbaBackend``  per-item loops compiled with ``@njit``.
``NumpyBackend``  the same arithmetic, vectorized over the batch.

``get_backend()`` returns numba unless ``CDMD_DISABLE_NUMBA`` is set. Random
numbers are always drawn by the caller, so both backends consume identical
uniforms and produce the same samples.
"""
from __future__ import annotations

import numpy as np

from . import _accel
from ._accel import njit

COND_LIMIT = 1e12
CLAMP_TOL = 1e-12
LOG_FLOOR = 1e-12

# per-item status codes
OK = 0
ILL_CONDITIONED = 1
SINGULAR = 2
DEGENERATE = 3

STATUS_NAMES = {
    OK: "ok",
    ILL_CONDITIONED: "ill_conditioned",
    SINGULAR: "singular",
    DEGENERATE: "degenerate",
}


# --------------------------------------------------------------------------
# numba kernels

@njit
def _pick(cdf, u):
    target = u * cdf[cdf.shape[0] - 1]
    for i in range(cdf.shape[0]):
        if target < cdf[i]:
            return i
    return cdf.shape[0] - 1


@njit
def _trajectories_nb(cdfs, u):
    n, steps = u.shape
    out = np.empty((n, steps), dtype=np.int64)
    for i in range(n):
        x = _pick(cdfs[0, 0], u[i, 0])
        out[i, 0] = x
        for k in range(1, steps):
            x = _pick(cdfs[k, x], u[i, k])
            out[i, k] = x
    return out


@njit
def _kernel_matrix(S, lam, S_inv, tau, out):
    """``out = clean(S diag(exp(lam tau)) S_inv)``; returns False on a bad entry."""
    n = S.shape[0]
    e = np.exp(lam * tau)
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for k in range(n):
                acc += S[i, k] * e[k] * S_inv[k, j]
            out[i, j] = acc
    for i in range(n):
        tot = 0.0
        for j in range(n):
            if out[i, j] < -CLAMP_TOL:
                return False
            if out[i, j] < 0.0:
                out[i, j] = 0.0
            tot += out[i, j]
        if abs(tot - 1.0) > 1e-8:
            return False
        for j in range(n):
            out[i, j] /= tot
    return True


@njit
def _lu_factor(A, piv):
    """In-place LU with partial pivoting; returns False if a pivot is zero."""
    n = A.shape[0]
    for k in range(n):
        p = k
        best = abs(A[k, k])
        for i in range(k + 1, n):
            if abs(A[i, k]) > best:
                best = abs(A[i, k])
                p = i
        piv[k] = p
        if best == 0.0:
            return False
        if p != k:
            for j in range(n):
                tmp = A[k, j]
                A[k, j] = A[p, j]
                A[p, j] = tmp
        for i in range(k + 1, n):
            A[i, k] /= A[k, k]
            f = A[i, k]
            for j in range(k + 1, n):
                A[i, j] -= f * A[k, j]
    return True


@njit
def _lu_solve(LU, piv, b):
    n = LU.shape[0]
    x = b.copy()
    for k in range(n):
        p = piv[k]
        if p != k:
            tmp = x[k]
            x[k] = x[p]
            x[p] = tmp
    for i in range(n):
        for j in range(i):
            x[i] -= LU[i, j] * x[j]
    for i in range(n - 1, -1, -1):
        for j in range(i + 1, n):
            x[i] -= LU[i, j] * x[j]
        x[i] /= LU[i, i]
    return x


@njit
def _lu_solve_T(LU, piv, b):
    """Solve ``A^T x = b`` from the factorization of ``A``."""
    n = LU.shape[0]
    x = b.copy()
    for i in range(n):
        for j in range(i):
            x[i] -= LU[j, i] * x[j]
        x[i] /= LU[i, i]
    for i in range(n - 1, -1, -1):
        for j in range(i + 1, n):
            x[i] -= LU[j, i] * x[j]
    for k in range(n - 1, -1, -1):
        p = piv[k]
        if p != k:
            tmp = x[k]
            x[k] = x[p]
            x[p] = tmp
    return x


@njit
def _cond1(A, LU, piv):
    """1-norm condition number ``||A||_1 ||A^-1||_1`` from an LU factorization."""
    n = A.shape[0]
    anorm = 0.0
    for j in range(n):
        col = 0.0
        for i in range(n):
            col += abs(A[i, j])
        anorm = max(anorm, col)
    inorm = 0.0
    e = np.zeros(n)
    for j in range(n):
        e[:] = 0.0
        e[j] = 1.0
        c = _lu_solve(LU, piv, e)
        col = 0.0
        for i in range(n):
            col += abs(c[i])
        inorm = max(inorm, col)
    return anorm * inorm


@njit
def _ratio_matrix(P, x, A):
    n = P.shape[0]
    for x0 in range(n):
        d = P[x0, x]
        if d <= 0.0:
            return False
        for y in range(n):
            A[y, x0] = P[x0, y] / d
    for x0 in range(n):
        A[x, x0] = 1.0
    return True


@njit
def _solve_conditional(P, x, scores, A, LU, piv):
    """Raw posterior estimate ``A^-1 scores``; ``LU``/``piv`` keep the factors."""
    n = P.shape[0]
    if not _ratio_matrix(P, x, A):
        return SINGULAR, np.zeros(n)
    LU[:, :] = A
    if not _lu_factor(LU, piv):
        return SINGULAR, np.zeros(n)
    if not _cond1(A, LU, piv) <= COND_LIMIT:
        return ILL_CONDITIONED, np.zeros(n)
    return OK, _lu_solve(LU, piv, scores)


@njit
def _distill_batch_nb(S, lam, S_inv, Q, teacher, student, x0, tau_t, tau_s, sig_h,
                      b_t, b_s, w, u_xt, u_xs, grad, loss, viol_t, viol_s, status, xt_out, xs_out):
    n = S.shape[0]
    B = x0.shape[0]
    Pt = np.empty((n, n))
    Ps = np.empty((n, n))
    A = np.empty((n, n))
    LU = np.empty((n, n))
    piv = np.empty(n, dtype=np.int64)
    row = np.empty(n)
    r_s = np.empty(n)
    r_t = np.empty(n)
    for i in range(B):
        loss[i] = np.nan
        viol_t[i] = np.nan
        viol_s[i] = np.nan
        xt_out[i] = -1
        xs_out[i] = -1
        if not _kernel_matrix(S, lam, S_inv, tau_t[i], Pt):
            status[i] = SINGULAR
            continue
        if not _kernel_matrix(S, lam, S_inv, tau_s[i], Ps):
            status[i] = SINGULAR
            continue
        # forward noising
        cdf = np.cumsum(Pt[x0[i]])
        xt = _pick(cdf, u_xt[i])
        xt_out[i] = xt
        # student scores at (t, x_t) and its Euler step row
        for y in range(n):
            r_t[y] = np.exp(student[b_t[i], xt, y])
        r_t[xt] = 1.0
        tot = 0.0
        for y in range(n):
            v = sig_h[i] * Q[xt, y] * r_t[y]
            if y == xt:
                v += 1.0
            if v < 0.0:
                v = 0.0
            row[y] = v
            tot += v
        if not tot > 0.0:
            status[i] = DEGENERATE
            continue
        xs = _pick(np.cumsum(row), u_xs[i])
        xs_out[i] = xs
        # teacher conditional at (s, x_s)
        for y in range(n):
            r_s[y] = np.exp(teacher[b_s[i], xs, y])
        r_s[xs] = 1.0
        code, p_teach = _solve_conditional(Ps, xs, r_s, A, LU, piv)
        if code != OK:
            status[i] = code
            continue
        neg = 0.0
        pos = 0.0
        for j in range(n):
            if p_teach[j] > 0.0:
                pos += p_teach[j]
            else:
                neg -= p_teach[j]
        if not pos > 0.0:
            status[i] = DEGENERATE
            continue
        q_teach = np.maximum(p_teach, 0.0) / pos
        vt = neg + abs(pos - 1.0)
        # student conditional at (t, x_t); LU keeps the factors for the adjoint solve
        code, p_stud = _solve_conditional(Pt, xt, r_t, A, LU, piv)
        if code != OK:
            status[i] = code
            continue
        neg = 0.0
        pos = 0.0
        for j in range(n):
            if p_stud[j] > 0.0:
                pos += p_stud[j]
            else:
                neg -= p_stud[j]
        if not pos > 0.0:
            status[i] = DEGENERATE
            continue
        q_stud = np.maximum(p_stud, 0.0) / pos
        vs = neg + abs(pos - 1.0)
        # cross entropy with a floored log; floored coordinates get zero gradient
        li = 0.0
        g = np.zeros(n)
        for j in range(n):
            if q_teach[j] > 0.0:
                if q_stud[j] > LOG_FLOOR:
                    li -= q_teach[j] * np.log(q_stud[j])
                    g[j] = -w[i] * q_teach[j] / q_stud[j]
                else:
                    li -= q_teach[j] * np.log(LOG_FLOOR)
        gq = 0.0
        for j in range(n):
            gq += g[j] * q_stud[j]
        dp = np.zeros(n)
        for j in range(n):
            if p_stud[j] > 0.0:
                dp[j] = (g[j] - gq) / pos
        lam_adj = _lu_solve_T(LU, piv, dp)
        for y in range(n):
            if y != xt:
                grad[b_t[i], xt, y] += lam_adj[y] * r_t[y]
        loss[i] = w[i] * li
        viol_t[i] = vt
        viol_s[i] = vs
        status[i] = OK


# --------------------------------------------------------------------------
# numpy kernels

def _pick_np(cdf, u):
    """Vectorized ``_pick``: ``cdf`` is ``(B, n)``, ``u`` is ``(B,)``."""
    target = u * cdf[:, -1]
    idx = np.sum(cdf <= target[:, None], axis=1)
    return np.minimum(idx, cdf.shape[1] - 1)


def _trajectories_np(cdfs, u):
    n, steps = u.shape
    out = np.empty((n, steps), dtype=np.int64)
    x = _pick_np(np.broadcast_to(cdfs[0, 0], (n, cdfs.shape[2])), u[:, 0])
    out[:, 0] = x
    for k in range(1, steps):
        x = _pick_np(cdfs[k, x], u[:, k])
        out[:, k] = x
    return out


def _kernel_stack_np(S, lam, S_inv, tau):
    P = np.einsum("ik,bk,kj->bij", S, np.exp(lam[None, :] * tau[:, None]), S_inv)
    bad = np.any(P < -CLAMP_TOL, axis=(1, 2)) | np.any(np.abs(P.sum(axis=2) - 1.0) > 1e-8, axis=1)
    P = np.maximum(P, 0.0)
    return P / P.sum(axis=2, keepdims=True), bad


def _ratio_stack_np(P, x):
    idx = np.arange(P.shape[0])
    denom = P[idx, :, x]  # [b, x0]
    singular = np.any(denom <= 0.0, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        A = np.swapaxes(P / denom[:, :, None], 1, 2)
    A[idx, x, :] = 1.0
    A[singular] = np.eye(P.shape[1])
    return A, singular


def _solve_stack_np(A, rhs, singular):
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(A, 1)
    ill = ~(cond <= COND_LIMIT) & ~singular
    safe = singular | ill
    A = A.copy()
    A[safe] = np.eye(A.shape[1])
    return np.linalg.solve(A, rhs[:, :, None])[:, :, 0], A, ill


def _sanitize_np(p):
    pos = np.where(p > 0.0, p, 0.0).sum(axis=1)
    neg = -np.where(p > 0.0, 0.0, p).sum(axis=1)
    ok = pos > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.maximum(p, 0.0) / pos[:, None]
    return q, pos, neg + np.abs(pos - 1.0), ok


def _distill_batch_np(S, lam, S_inv, Q, teacher, student, x0, tau_t, tau_s, sig_h,
                      b_t, b_s, w, u_xt, u_xs, grad, loss, viol_t, viol_s, status, xt_out, xs_out):
    B = x0.shape[0]
    n = S.shape[0]
    idx = np.arange(B)
    code = np.zeros(B, dtype=np.int64)

    Pt, bad_t = _kernel_stack_np(S, lam, S_inv, tau_t)
    Ps, bad_s = _kernel_stack_np(S, lam, S_inv, tau_s)
    code[bad_t | bad_s] = SINGULAR

    xt = _pick_np(np.cumsum(Pt[idx, x0], axis=1), u_xt)
    r_t = np.exp(student[b_t, xt])
    r_t[idx, xt] = 1.0
    row = sig_h[:, None] * Q[xt] * r_t
    row[idx, xt] += 1.0
    row = np.maximum(row, 0.0)
    dead = ~(row.sum(axis=1) > 0.0)
    row[dead] = 1.0
    code[(code == OK) & dead] = DEGENERATE
    xs = _pick_np(np.cumsum(row, axis=1), u_xs)

    r_s = np.exp(teacher[b_s, xs])
    r_s[idx, xs] = 1.0
    As, sing_s = _ratio_stack_np(Ps, xs)
    code[(code == OK) & sing_s] = SINGULAR
    p_teach, _, ill_s = _solve_stack_np(As, r_s, sing_s)
    code[(code == OK) & ill_s] = ILL_CONDITIONED
    q_teach, _, vt, ok_t = _sanitize_np(p_teach)
    code[(code == OK) & ~ok_t] = DEGENERATE

    At, sing_t = _ratio_stack_np(Pt, xt)
    code[(code == OK) & sing_t] = SINGULAR
    p_stud, At_safe, ill_t = _solve_stack_np(At, r_t, sing_t)
    code[(code == OK) & ill_t] = ILL_CONDITIONED
    q_stud, pos_s, vs, ok_s = _sanitize_np(p_stud)
    code[(code == OK) & ~ok_s] = DEGENERATE

    support = q_teach > 0.0
    live = support & (q_stud > LOG_FLOOR)
    good = code == OK
    with np.errstate(divide="ignore", invalid="ignore"):
        logq = np.log(np.where(live, q_stud, LOG_FLOOR))
        g = np.where(live, -w[:, None] * q_teach / q_stud, 0.0)
    li = -np.sum(np.where(support & good[:, None], q_teach * logq, 0.0), axis=1)
    g[~good] = 0.0
    gq = np.sum(g * np.where(good[:, None], q_stud, 0.0), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        dp = np.where(p_stud > 0.0, (g - gq[:, None]) / pos_s[:, None], 0.0)
    dp[~good] = 0.0
    lam_adj = np.linalg.solve(np.swapaxes(At_safe, 1, 2), dp[:, :, None])[:, :, 0]
    contrib = lam_adj * r_t
    contrib[idx, xt] = 0.0
    contrib[~good] = 0.0
    # sequential in item order, like the numba loop
    np.add.at(grad, (b_t, xt), contrib)

    status[:] = code
    xt_out[:] = np.where(bad_t | bad_s, -1, xt)
    xs_out[:] = np.where(bad_t | bad_s | dead, -1, xs)
    loss[:] = np.where(good, w * li, np.nan)
    viol_t[:] = np.where(good, vt, np.nan)
    viol_s[:] = np.where(good, vs, np.nan)


# --------------------------------------------------------------------------

class _Backend:
    name = ""

    def __init__(self, trajectories, distill_batch):
        self._traj = trajectories
        self._batch = distill_batch

    def trajectories(self, cdfs, u):
        """States of ``u.shape[0]`` chains; step ``k`` uses row cdfs ``cdfs[k]``.

        ``cdfs[0, 0]`` is the cdf of the initial state.
        """
        return self._traj(np.ascontiguousarray(cdfs, dtype=np.float64), np.ascontiguousarray(u, dtype=np.float64))

    def distill_batch(self, S, lam, S_inv, Q, teacher, student, x0, tau_t, tau_s, sig_h, b_t, b_s, w, u_xt, u_xs):
        """Loss and summed student gradient for a batch of training items.

        Returns ``(grad, loss, viol_teacher, viol_student, status, x_t, x_s)``;
        ``grad`` has the student's shape and sums over items with ``status == OK``.
        """
        B = len(x0)
        f = lambda a: np.ascontiguousarray(a, dtype=np.float64)  # noqa: E731
        ints = lambda a: np.ascontiguousarray(a, dtype=np.int64)  # noqa: E731
        grad = np.zeros_like(f(student))
        loss = np.empty(B)
        vt = np.empty(B)
        vs = np.empty(B)
        status = np.empty(B, dtype=np.int64)
        xt = np.empty(B, dtype=np.int64)
        xs = np.empty(B, dtype=np.int64)
        self._batch(f(S), f(lam), f(S_inv), f(Q), f(teacher), f(student), ints(x0), f(tau_t), f(tau_s),
                    f(sig_h), ints(b_t), ints(b_s), f(w), f(u_xt), f(u_xs), grad, loss, vt, vs, status, xt, xs)
        return grad, loss, vt, vs, status, xt, xs


class NumbaBackend(_Backend):
    name = "numba"

    def __init__(self):
        super().__init__(_trajectories_nb, _distill_batch_nb)


class NumpyBackend(_Backend):
    name = "numpy"

    def __init__(self):
        super().__init__(_trajectories_np, _distill_batch_np)


_BACKENDS = {"numba": NumbaBackend, "numpy": NumpyBackend}


def get_backend(name=None):
    """Backend by name; ``None`` picks numba unless disabled by the environment."""
    if name is None:
        name = "numba" if _accel.USE_NUMBA else "numpy"
    if isinstance(name, _Backend):
        return name
    try:
        return _BACKENDS[name]()
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; choose from {sorted(_BACKENDS)}") from None
