"""Experiment configuration: a single JSON document with fixed field names."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .ctmc import NoiseSchedule
from .distill import DistillConfig
from .errors import CDMDError, ConfigError
from .oracle import DataDistribution
from .sampler import GRID_KINDS

DEFAULT_GRIDS = (1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024)
P0_FLOOR = 1e-3
_NAMED_P0 = re.compile(r"^(peaked|uniform|random)(?:\((\d+)\))?$")


def named_distribution(name, n, default_seed=0):
    """``uniform``, ``peaked[(seed)]`` or ``random[(seed)]`` over ``n`` states.

    ``peaked`` draws from a sparse Dirichlet(0.5) and ``random`` from a flat
    Dirichlet(1); both floor every entry at 1e-3 before renormalizing.
    """
    m = _NAMED_P0.match(name)
    if not m:
        raise ConfigError("p0", f"unknown distribution {name!r}")
    kind, seed = m.group(1), m.group(2)
    if kind == "uniform":
        return np.full(n, 1.0 / n)
    rng = np.random.default_rng(int(seed) if seed is not None else default_seed)
    p = rng.dirichlet(np.full(n, 0.5 if kind == "peaked" else 1.0))
    p = np.maximum(p, P0_FLOOR)
    return p / p.sum()


@dataclass(frozen=True)
class ExperimentConfig:
    n_states: int = 4
    p0: object = "peaked"
    schedule: dict = field(default_factory=lambda: {"kind": "geometric", "params": {"a": 0.05, "b": 100.0}})
    T: float = 1.0
    score_buckets: int = 32
    grids: tuple = DEFAULT_GRIDS
    grid_kind: str = "uniform"
    distill: DistillConfig = field(default_factory=DistillConfig)
    sampled_histograms: int = 0
    output_dir: str = "runs/default"

    def noise_schedule(self):
        return NoiseSchedule(self.schedule["kind"], self.schedule["params"], self.T)

    def data_distribution(self):
        if isinstance(self.p0, str):
            p = named_distribution(self.p0, self.n_states, self.distill.seed)
        else:
            p = np.asarray(self.p0, dtype=np.float64)
        return DataDistribution(p)

    def with_overrides(self, seed=None, output_dir=None, K=None):
        d = self.to_dict()
        if seed is not None:
            d["distill"]["seed"] = int(seed)
        if K is not None:
            d["distill"]["K"] = int(K)
        if output_dir is not None:
            d["output_dir"] = str(output_dir)
        return from_dict(d)

    def to_dict(self):
        return {
            "n_states": self.n_states,
            "p0": self.p0 if isinstance(self.p0, str) else [float(v) for v in self.p0],
            "schedule": {"kind": self.schedule["kind"], "params": dict(self.schedule["params"])},
            "T": self.T,
            "score_buckets": self.score_buckets,
            "grids": list(self.grids),
            "grid_kind": self.grid_kind,
            "distill": self.distill.to_dict(),
            "sampled_histograms": self.sampled_histograms,
            "output_dir": self.output_dir,
        }


def _expect(d, path, allowed):
    if not isinstance(d, dict):
        raise ConfigError(path, "expected an object")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}" if path else unknown[0], "unknown field")


def _int(value, path, minimum):
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(path, f"expected an integer >= {minimum}, got {value!r}")
    return value


def _real(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value) or value <= 0:
        raise ConfigError(path, f"expected a positive real, got {value!r}")
    return float(value)


def from_dict(d):
    """Validate a parsed config; unknown fields are errors."""
    defaults = ExperimentConfig()
    _expect(d, "", ExperimentConfig.__dataclass_fields__)
    n = _int(d.get("n_states", defaults.n_states), "n_states", 2)
    T = _real(d.get("T", defaults.T), "T")

    sched = d.get("schedule", defaults.schedule)
    _expect(sched, "schedule", ("kind", "params"))
    if sched.get("kind") not in ("constant", "geometric"):
        raise ConfigError("schedule.kind", f"expected 'constant' or 'geometric', got {sched.get('kind')!r}")
    params = sched.get("params", {})
    _expect(params, "schedule.params", ("c",) if sched["kind"] == "constant" else ("a", "b"))
    params = {k: _real(v, f"schedule.params.{k}") for k, v in params.items()}
    schedule = {"kind": sched["kind"], "params": params}
    try:
        NoiseSchedule(schedule["kind"], params, T)
    except CDMDError as exc:
        raise ConfigError("schedule", str(exc)) from exc

    grids = d.get("grids", list(defaults.grids))
    if not isinstance(grids, list) or not grids:
        raise ConfigError("grids", "expected a nonempty list of step counts")
    grids = tuple(_int(k, f"grids[{i}]", 1) for i, k in enumerate(grids))
    grid_kind = d.get("grid_kind", defaults.grid_kind)
    if grid_kind not in GRID_KINDS:
        raise ConfigError("grid_kind", f"expected one of {GRID_KINDS}")

    dd = d.get("distill", defaults.distill.to_dict())
    _expect(dd, "distill", DistillConfig.__dataclass_fields__)
    base = defaults.distill.to_dict()
    base.update(dd)
    for key in ("K", "batch"):
        _int(base[key], f"distill.{key}", 1)
    _int(base["iterations"], "distill.iterations", 0)
    _int(base["seed"], "distill.seed", 0)
    _real(base["learning_rate"], "distill.learning_rate")
    try:
        distill = DistillConfig(**base)
    except CDMDError as exc:
        raise ConfigError("distill", str(exc)) from exc

    p0 = d.get("p0", defaults.p0)
    if not isinstance(p0, str):
        if not isinstance(p0, list) or len(p0) != n:
            raise ConfigError("p0", f"expected a name or a list of {n} probabilities")
        p0 = tuple(float(v) for v in p0)

    cfg = ExperimentConfig(
        n_states=n,
        p0=p0,
        schedule=schedule,
        T=T,
        score_buckets=_int(d.get("score_buckets", defaults.score_buckets), "score_buckets", 1),
        grids=grids,
        grid_kind=grid_kind,
        distill=distill,
        sampled_histograms=_int(d.get("sampled_histograms", 0), "sampled_histograms", 0),
        output_dir=str(d.get("output_dir", defaults.output_dir)),
    )
    try:
        cfg.data_distribution()
    except CDMDError as exc:
        raise ConfigError("p0", str(exc)) from exc
    return cfg


def loads(text):
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON: {exc}") from exc
    return from_dict(d)


def load(path):
    with open(path) as fh:
        return loads(fh.read())


def dumps(cfg):
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
