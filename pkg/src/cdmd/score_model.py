"""Tabular concrete-score models.

A table stores log-ratios ``theta[b, x, y]`` for ``M`` piecewise-constant time
buckets on ``[eps, T]``. Evaluating returns ``exp(theta)``, so every score is
positive, and the diagonal ``theta[b, x, x]`` is pinned to zero.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .ctmc import forward_kernel
from .errors import DomainError
from .oracle import exact_marginal

ROLES = ("teacher", "student")
DEFAULT_BUCKETS = 32
EPS_FRACTION = 1e-4
FORMAT_TAG = "cdmd-score-table 1"


def min_time(T):
    """Smallest time at which scores and posteriors are queried."""
    return EPS_FRACTION * T


@dataclass(eq=False)
class ScoreTable:
    bucket_edges: np.ndarray
    params: np.ndarray
    role: str = "teacher"

    def __post_init__(self):
        self.bucket_edges = np.array(self.bucket_edges, dtype=np.float64)
        params = np.array(self.params, dtype=np.float64)
        if self.role not in ROLES:
            raise DomainError(f"role must be one of {ROLES}, got {self.role!r}")
        if params.ndim != 3 or params.shape[1] != params.shape[2]:
            raise DomainError("params must have shape (M, N, N)")
        if self.bucket_edges.shape != (params.shape[0] + 1,):
            raise DomainError("need M + 1 bucket edges")
        if np.any(np.diff(self.bucket_edges) <= 0):
            raise DomainError("bucket edges must be strictly increasing")
        if not np.all(np.isfinite(params)):
            raise DomainError("params must be finite")
        idx = np.arange(params.shape[1])
        params[:, idx, idx] = 0.0
        self.params = params
        if self.role == "teacher":
            self.params.setflags(write=False)
        self.bucket_edges.setflags(write=False)

    @property
    def M(self):
        return self.params.shape[0]

    @property
    def N(self):
        return self.params.shape[1]

    @property
    def eps(self):
        return float(self.bucket_edges[0])

    @property
    def T(self):
        return float(self.bucket_edges[-1])

    @classmethod
    def zeros(cls, N, M=DEFAULT_BUCKETS, T=1.0, role="teacher"):
        edges = np.linspace(min_time(T), T, M + 1)
        return cls(edges, np.zeros((M, N, N)), role)

    def bucket(self, t):
        """Index ``b`` with ``edges[b] <= t < edges[b + 1]``; ``t = T`` maps to the last."""
        t_arr = np.asarray(t, dtype=np.float64)
        if np.any(t_arr < self.eps) or np.any(t_arr > self.T) or np.any(np.isnan(t_arr)):
            raise DomainError(f"score queried at t={t} outside [{self.eps}, {self.T}]")
        b = np.searchsorted(self.bucket_edges, t_arr, side="right") - 1
        b = np.minimum(b, self.M - 1)
        return int(b) if b.ndim == 0 else b

    def centers(self):
        e = self.bucket_edges
        return 0.5 * (e[:-1] + e[1:])

    def score_matrix(self, t):
        """All scores at time ``t``: row ``x`` is ``eval_score(t, x)``."""
        return np.exp(self.params[self.bucket(t)])

    def checksum(self):
        return hashlib.sha256(np.ascontiguousarray(self.params).tobytes()).hexdigest()


def eval_score(table, t, x):
    if not 0 <= x < table.N:
        raise DomainError(f"state {x} outside [0, {table.N})")
    s = np.exp(table.params[table.bucket(t), x])
    s[x] = 1.0
    return s


def fit_from_oracle(data, gen, schedule, M=DEFAULT_BUCKETS):
    """Teacher whose scores are the exact ratios at each bucket center."""
    if M < 1:
        raise DomainError("need at least one bucket")
    table = ScoreTable.zeros(data.N, M, schedule.T)
    params = np.zeros((M, data.N, data.N))
    for b, tc in enumerate(table.centers()):
        pt = exact_marginal(data, forward_kernel(gen, schedule, tc)).pt
        logp = np.log(pt)
        params[b] = logp[None, :] - logp[:, None]
    return ScoreTable(table.bucket_edges, params, "teacher")


def clone_as_student(teacher):
    return ScoreTable(teacher.bucket_edges.copy(), teacher.params.copy(), "student")


def save_table(table, path):
    """Write a plain-text table; floats use ``repr`` so reading back is exact."""
    lines = [
        FORMAT_TAG,
        f"M {table.M}",
        f"N {table.N}",
        f"role {table.role}",
        "edges " + " ".join(repr(float(v)) for v in table.bucket_edges),
    ]
    for row in table.params.reshape(-1, table.N):
        lines.append(" ".join(repr(float(v)) for v in row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_table(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != FORMAT_TAG:
        raise DomainError(f"{path}: not a score table file")
    header = {}
    for line in lines[1:5]:
        key, _, value = line.partition(" ")
        header[key] = value
    try:
        M, N = int(header["M"]), int(header["N"])
        edges = [float(v) for v in header["edges"].split()]
        rows = [[float(v) for v in line.split()] for line in lines[5:]]
        params = np.array(rows, dtype=np.float64).reshape(M, N, N)
    except (KeyError, ValueError) as exc:
        raise DomainError(f"{path}: malformed score table ({exc})") from exc
    return ScoreTable(edges, params, header.get("role", ""))
