"""Command line entry point: ``cdmd {verify,distill,eval,sweep}``.

Exit status: 0 success, 1 validation failure (bad config, failed identity
check, missing file), 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod, kernels
from .ctmc import build_uniform_generator
from .distill import run_distillation
from .errors import CDMDError, ConfigError, NumericalError
from .sampler import TimeGrid, kl_divergence, pushforward_exact, sample_trajectories
from .score_model import fit_from_oracle, load_table, min_time, save_table
from .verification import run_all

log = logging.getLogger("cdmd")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2

ITER_HEADER = ["iter", "t", "s", "loss", "viol_teacher", "viol_student", "grad_norm"]
EVAL_HEADER = ["model", "K", "kl", "nfe", "wall_ms"]
SAMPLED_HEADER = ["model", "K", "state", "exact", "empirical", "stderr"]
SWEEP_HEADER = ["seed", "K", "teacher_kl", "student_kl"]

TEACHER_FILE = "teacher.table"
STUDENT_FILE = "student.table"


def _fmt(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


def _setup(cfg):
    return cfg.data_distribution(), build_uniform_generator(cfg.n_states), cfg.noise_schedule()


def run_verify(cfg, out_dir):
    """Run the identity suite; returns ``(exit_code, report)``."""
    data, gen, schedule = _setup(cfg)
    results = run_all(data, gen, schedule, seed=cfg.distill.seed)
    report = {
        "n_states": cfg.n_states,
        "checks": [r.to_dict() for r in results],
        "passed": all(r.passed for r in results),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "verify_report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for r in results:
        log.info("%-30s %s  deviation=%.3e  tol=%.1e", r.name, "PASS" if r.passed else "FAIL", r.deviation, r.tolerance)
    return (EXIT_OK if report["passed"] else EXIT_VALIDATION), report


def run_distill(cfg, out_dir):
    data, gen, schedule = _setup(cfg)
    teacher = fit_from_oracle(data, gen, schedule, cfg.score_buckets)
    checksum = teacher.checksum()
    backend = kernels.get_backend()
    t0 = time.perf_counter()
    student, records = run_distillation(teacher, data, gen, schedule, cfg.distill, backend=backend)
    elapsed = time.perf_counter() - t0
    if teacher.checksum() != checksum:
        raise NumericalError("teacher parameters changed during distillation")

    out_dir.mkdir(parents=True, exist_ok=True)
    save_table(teacher, out_dir / TEACHER_FILE)
    save_table(student, out_dir / STUDENT_FILE)
    write_csv(out_dir / "iterations.csv", ITER_HEADER, (
        (r.iter, r.t, r.s, r.loss, r.raw_simplex_violation_teacher, r.raw_simplex_violation_student, r.grad_norm)
        for r in records
    ))
    manifest = {
        "config": cfg.to_dict(),
        "seed": cfg.distill.seed,
        "code_version": __version__,
        "backend": backend.name,
        "p0": [float(v) for v in data.p0],
        "teacher_checksum": checksum,
        "student_checksum": student.checksum(),
        "skipped_items": int(sum(r.skipped for r in records)),
        "train_seconds": round(elapsed, 3),
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("distilled %d iterations in %.1fs (%s backend)", len(records), elapsed, backend.name)
    return student, records


def evaluate_tables(cfg, tables, rng=None):
    """EvalRows for each (model, K), sorted by model then K.

    ``tables`` maps model name to ScoreTable.
    """
    data, gen, schedule = _setup(cfg)
    rows = []
    sampled = []
    for model in sorted(tables):
        table = tables[model]
        for K in sorted(set(cfg.grids)):
            grid = TimeGrid.make(K, schedule.T, min_time(schedule.T), cfg.grid_kind)
            t0 = time.perf_counter()
            out = pushforward_exact(table, gen, schedule, grid)
            wall_ms = 1e3 * (time.perf_counter() - t0)
            rows.append((model, K, kl_divergence(data.p0, out), K, wall_ms))
            if cfg.sampled_histograms and rng is not None:
                n = cfg.sampled_histograms
                final = sample_trajectories(table, gen, schedule, grid, n, rng)[:, -1]
                emp = np.bincount(final, minlength=table.N) / n
                for x in range(table.N):
                    se = np.sqrt(out[x] * (1 - out[x]) / n)
                    sampled.append((model, K, x, out[x], emp[x], se))
    return rows, sampled


def run_eval(cfg, out_dir, teacher_path=None, student_path=None):
    paths = {
        "teacher": Path(teacher_path) if teacher_path else out_dir / TEACHER_FILE,
        "student": Path(student_path) if student_path else out_dir / STUDENT_FILE,
    }
    tables = {}
    for model, path in paths.items():
        if not path.exists():
            raise FileNotFoundError(f"missing {model} table: {path}")
        tables[model] = load_table(path)
        if tables[model].N != cfg.n_states:
            raise ConfigError("n_states", f"{path} has {tables[model].N} states, config says {cfg.n_states}")
    rng = np.random.default_rng(cfg.distill.seed)
    rows, sampled = evaluate_tables(cfg, tables, rng)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / "eval.csv", EVAL_HEADER, rows)
    if sampled:
        write_csv(out_dir / "sampled.csv", SAMPLED_HEADER, sampled)
    for row in rows:
        log.info("%-8s K=%-5d kl=%.4e", row[0], row[1], row[2])
    return rows


def run_sweep(cfg, out_dir, seeds, targets):
    """Distill and evaluate every (seed, K) pair; one summary row per pair."""
    summary = []
    for seed, K in itertools.product(seeds, targets):
        sub = out_dir / f"seed{seed}_K{K}"
        c = cfg.with_overrides(seed=seed, K=K, output_dir=sub)
        c = cfgmod.from_dict({**c.to_dict(), "grids": sorted(set(c.grids) | {K})})
        run_distill(c, sub)
        rows = run_eval(c, sub)
        kl = {(m, k): v for m, k, v, _, _ in rows}
        summary.append((seed, K, kl[("teacher", K)], kl[("student", K)]))
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / "sweep.csv", SWEEP_HEADER, summary)
    return summary


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser():
    parser = argparse.ArgumentParser(prog="cdmd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON); defaults are used when omitted")
    common.add_argument("--output", help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, help="seed (overrides distill.seed)")
    common.add_argument("--quiet", action="store_true", help="only report errors")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("verify", parents=[common], help="check the exact identities at the configured N")
    sub.add_parser("distill", parents=[common], help="fit a teacher and distill a student")
    ev = sub.add_parser("eval", parents=[common], help="KL of the K-step sampler for teacher and student")
    ev.add_argument("--teacher", help="teacher table (default: <output>/teacher.table)")
    ev.add_argument("--student", help="student table (default: <output>/student.table)")
    sw = sub.add_parser("sweep", parents=[common], help="distill + eval over seeds x target K")
    sw.add_argument("--seeds", type=_int_list, help="comma-separated seeds (default: the config seed)")
    sw.add_argument("--targets", type=_int_list, help="comma-separated target K (default: distill.K)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg = cfgmod.load(args.config) if args.config else cfgmod.ExperimentConfig()
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed", "must fit in an unsigned 64-bit integer")
        cfg = cfg.with_overrides(seed=args.seed, output_dir=args.output)
        out_dir = Path(cfg.output_dir)
        if args.command == "verify":
            code, _ = run_verify(cfg, out_dir)
            return code
        if args.command == "distill":
            run_distill(cfg, out_dir)
        elif args.command == "eval":
            run_eval(cfg, out_dir, args.teacher, args.student)
        elif args.command == "sweep":
            run_sweep(cfg, out_dir, args.seeds or [cfg.distill.seed], args.targets or [cfg.distill.K])
        return EXIT_OK
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except CDMDError as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
