"""Finite-state CTMC: base generator, noise schedule and exact forward kernels.

The forward process has rate matrix ``Q_t = sigma(t) * Q`` with a fixed base
``Q``. Because every ``Q_t`` commutes with every other, the transition kernel
over ``[s, t]`` is ``S diag(exp(lam * tau)) S^-1`` where ``tau`` is the noise
integrated over the interval.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NumericalError

CLAMP_TOL = 1e-12
ROW_SUM_TOL = 1e-8


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class StateSpace:
    size: int

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 1:
            raise DomainError(f"state space size must be a positive integer, got {self.size!r}")

    @property
    def N(self):
        return self.size


@dataclass(frozen=True, eq=False)
class BaseGenerator:
    """Rate matrix ``Q`` together with ``Q = S diag(eigvals) S_inv``."""

    Q: np.ndarray
    S: np.ndarray
    eigvals: np.ndarray
    S_inv: np.ndarray

    def __post_init__(self):
        for name in ("Q", "S", "eigvals", "S_inv"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        Q = self.Q
        n = Q.shape[0]
        if Q.shape != (n, n) or self.S.shape != (n, n) or self.S_inv.shape != (n, n):
            raise DomainError("generator matrices must be square and of equal size")
        if self.eigvals.shape != (n,):
            raise DomainError("need one eigenvalue per state")
        if np.max(np.abs(Q.sum(axis=1))) > 1e-12:
            raise DomainError("generator rows must sum to zero")
        off = Q[~np.eye(n, dtype=bool)]
        if off.size and off.min() < 0:
            raise DomainError("generator off-diagonal rates must be nonnegative")
        recon = (self.S * self.eigvals) @ self.S_inv
        if np.max(np.abs(recon - Q)) > 1e-10:
            raise DomainError("eigendecomposition does not reconstruct Q")

    @property
    def N(self):
        return self.Q.shape[0]

    @classmethod
    def from_rate_matrix(cls, Q):
        """Decompose an arbitrary real-diagonalizable generator numerically."""
        Q = np.asarray(Q, dtype=np.float64)
        w, V = np.linalg.eig(Q)
        if np.max(np.abs(w.imag)) > 1e-12 or np.max(np.abs(V.imag)) > 1e-12:
            raise DomainError("generator is not real-diagonalizable")
        V = V.real
        return cls(Q=Q, S=V, eigvals=w.real, S_inv=np.linalg.inv(V))


def _helmert_basis(n):
    """Columns 1..n-1 of the orthonormal Helmert basis (orthogonal to ones)."""
    H = np.zeros((n, n - 1))
    for k in range(1, n):
        norm = math.sqrt(k * (k + 1))
        H[:k, k - 1] = 1.0 / norm
        H[k, k - 1] = -k / norm
    return H


def build_uniform_generator(space):
    """Uniform generator ``E - N*I``: unit jump rate to every other state.

    Eigenvalue 0 belongs to the all-ones vector; the remaining ``N - 1``
    eigenvalues equal ``-N`` on the orthogonal complement. Both factors are
    written down analytically.
    """
    if not isinstance(space, StateSpace):
        space = StateSpace(int(space))
    n = space.N
    Q = np.ones((n, n)) - n * np.eye(n)
    H = _helmert_basis(n)
    S = np.empty((n, n))
    S[:, 0] = 1.0
    S[:, 1:] = H
    S_inv = np.empty((n, n))
    S_inv[0] = 1.0 / n
    S_inv[1:] = H.T
    eigvals = np.full(n, -float(n))
    eigvals[0] = 0.0
    return BaseGenerator(Q=Q, S=S, eigvals=eigvals, S_inv=S_inv)


@dataclass(frozen=True)
class NoiseSchedule:
    """Scalar rate multiplier ``sigma(t)`` on ``[0, T]``.

    ``constant``: ``sigma(t) = c``.
    ``geometric``: ``sigma(t) = a * b**t``.
    """

    kind: str
    params: dict = field(default_factory=dict)
    T: float = 1.0

    def __post_init__(self):
        required = {"constant": ("c",), "geometric": ("a", "b")}
        if self.kind not in required:
            raise DomainError(f"unknown schedule kind {self.kind!r}")
        if set(self.params) != set(required[self.kind]):
            raise DomainError(f"{self.kind} schedule needs params {required[self.kind]}, got {sorted(self.params)}")
        for k, v in self.params.items():
            if not (np.isfinite(v) and v > 0):
                raise DomainError(f"schedule parameter {k} must be a positive real, got {v!r}")
        if not (np.isfinite(self.T) and self.T > 0):
            raise DomainError(f"terminal time must be positive, got {self.T!r}")
        object.__setattr__(self, "params", {k: float(v) for k, v in self.params.items()})
        object.__setattr__(self, "T", float(self.T))

    @classmethod
    def constant(cls, c=1.0, T=1.0):
        return cls("constant", {"c": c}, T)

    @classmethod
    def geometric(cls, a, b, T=1.0):
        return cls("geometric", {"a": a, "b": b}, T)

    def _check(self, t):
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < 0) or np.any(t > self.T) or np.any(np.isnan(t)):
            raise DomainError(f"time outside [0, {self.T}]: {t}")
        return t

    def sigma(self, t):
        t = self._check(t)
        if self.kind == "constant":
            out = np.full_like(t, self.params["c"])
        else:
            out = self.params["a"] * np.power(self.params["b"], t)
        return out if out.ndim else float(out)

    def integrated(self, t):
        t = self._check(t)
        if self.kind == "constant":
            out = self.params["c"] * t
        else:
            a, b = self.params["a"], self.params["b"]
            lb = math.log(b)
            out = a * t if lb == 0.0 else a * np.expm1(t * lb) / lb
        return out if np.ndim(out) else float(out)

    def to_dict(self):
        return {"kind": self.kind, "params": dict(self.params), "T": self.T}


def integrated_noise(schedule, t):
    return schedule.integrated(t)


@dataclass(frozen=True, eq=False)
class ForwardKernel:
    """``P[i, j] = p(x_t = j | x_start = i)`` over an elapsed noise ``tau``."""

    t: float
    P: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "P", _frozen(self.P))

    @property
    def N(self):
        return self.P.shape[0]


def _clean_stochastic(P):
    """Clamp round-off negatives and renormalize rows; refuse anything worse."""
    if P.min() < -CLAMP_TOL:
        raise NumericalError(f"kernel entry {P.min():.3e} is below the clamp tolerance")
    dev = np.max(np.abs(P.sum(axis=1) - 1.0))
    if dev > ROW_SUM_TOL:
        raise NumericalError(f"kernel row sum deviates from 1 by {dev:.3e}")
    P = np.where(P < 0, 0.0, P)
    return P / P.sum(axis=1, keepdims=True)


def kernel_from_tau(gen, tau):
    """``exp(tau * Q)`` through the stored eigendecomposition."""
    if tau < 0:
        raise DomainError(f"elapsed noise must be nonnegative, got {tau}")
    if tau == 0:
        return np.eye(gen.N)
    P = (gen.S * np.exp(gen.eigvals * tau)) @ gen.S_inv
    return _clean_stochastic(P)


def forward_kernel(gen, schedule, t):
    """Kernel ``p_{t|0}``; exactly the identity at ``t = 0``."""
    tau = schedule.integrated(t)
    return ForwardKernel(t=float(t), P=kernel_from_tau(gen, tau))


def transition_kernel(gen, schedule, s, t):
    """Kernel ``p_{t|s}`` for ``s <= t``; ``t`` is stored as the kernel time."""
    if s > t:
        raise DomainError(f"need s <= t, got s={s}, t={t}")
    tau = schedule.integrated(t) - schedule.integrated(s)
    return ForwardKernel(t=float(t), P=kernel_from_tau(gen, max(tau, 0.0)))


def forward_kernel_series_oracle(gen, tau, terms=40):
    """``exp(tau * Q)`` by scaling and squaring a truncated Taylor series.

    Independent of the eigendecomposition; only meant as a test oracle.
    """
    if tau < 0:
        raise DomainError(f"elapsed noise must be nonnegative, got {tau}")
    A = tau * np.asarray(gen.Q)
    n = A.shape[0]
    norm = np.max(np.sum(np.abs(A), axis=1)) if n else 0.0
    squarings = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    A = A / (2.0 ** squarings)
    E = np.eye(n)
    term = np.eye(n)
    for k in range(1, terms + 1):
        term = term @ A / k
        E = E + term
    for _ in range(squarings):
        E = E @ E
    return ForwardKernel(t=float("nan"), P=E)


def categorical(p, u):
    """Inverse-CDF draw from unnormalized weights ``p`` with ``u`` in ``[0, 1)``."""
    cdf = np.cumsum(p)
    i = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(i, len(cdf) - 1)


def forward_sample(kernel, x0, rng):
    """Draw ``x_t`` from row ``x0`` of ``kernel``."""
    if not 0 <= x0 < kernel.N:
        raise DomainError(f"state {x0} outside [0, {kernel.N})")
    return categorical(kernel.P[x0], rng.random())


def reverse_rate_matrix(gen, schedule, t, ratios):
    """Time-reversal generator from concrete-score ratios.

    ``ratios[x, y]`` approximates ``p_t(y) / p_t(x)``.
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.shape != (gen.N, gen.N):
        raise DomainError(f"ratios must have shape {(gen.N, gen.N)}")
    if not np.all(ratios > 0):
        raise DomainError("concrete-score ratios must be positive")
    Qt = schedule.sigma(t) * np.asarray(gen.Q)
    R = ratios * Qt.T
    np.fill_diagonal(R, 0.0)
    np.fill_diagonal(R, -R.sum(axis=1))
    return R
