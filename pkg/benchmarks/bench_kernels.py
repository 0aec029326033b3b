"""Numba vs numpy backend timings for the two hot kernels.

    python benchmarks/bench_kernels.py [--repeat 5] [--batch 8 64 512]

Both backends get identical inputs; outputs are compared before timing.
The first numba call (compilation, or loading the on-disk cache) is
reported separately.
"""
import argparse
import time

import numpy as np

from cdmd import kernels
from cdmd.ctmc import NoiseSchedule, build_uniform_generator
from cdmd.distill import DistillConfig, sample_times
from cdmd.oracle import DataDistribution
from cdmd.sampler import TimeGrid, step_kernels
from cdmd.score_model import clone_as_student, fit_from_oracle, min_time


def batch_args(n_states, batch, seed=0):
    rng = np.random.default_rng(seed)
    sched = NoiseSchedule.geometric(0.05, 100.0)
    gen = build_uniform_generator(n_states)
    data = DataDistribution(rng.dirichlet(np.ones(n_states)) * 0.9 + 0.1 / n_states)
    teacher = fit_from_oracle(data, gen, sched, 32)
    student = clone_as_student(teacher)
    t, s = sample_times(DistillConfig(K=2), 1.0, rng, teacher.eps, size=batch)
    return dict(
        S=gen.S, lam=gen.eigvals, S_inv=gen.S_inv, Q=gen.Q, teacher=teacher.params, student=student.params,
        x0=rng.choice(n_states, size=batch, p=data.p0), tau_t=sched.integrated(t), tau_s=sched.integrated(s),
        sig_h=sched.sigma(t) * (t - s), b_t=student.bucket(t), b_s=teacher.bucket(s), w=np.ones(batch),
        u_xt=rng.random(batch), u_xs=rng.random(batch),
    ), (teacher, gen, sched)


def trajectory_args(n_states, K, n_samples, seed=0):
    args, (teacher, gen, sched) = batch_args(n_states, 1, seed)
    grid = TimeGrid.make(K, 1.0, min_time(1.0))
    mats = np.stack([np.full((n_states, n_states), 1.0 / n_states)] + [k.P for k in step_kernels(teacher, gen, sched, grid)])
    u = np.random.default_rng(seed).random((n_samples, K + 1))
    return np.cumsum(mats, axis=2), u


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--states", type=int, nargs="+", default=[4, 16])
    ap.add_argument("--batch", type=int, nargs="+", default=[8, 64, 512])
    ap.add_argument("--samples", type=int, default=100_000)
    args = ap.parse_args()

    nb, npy = kernels.get_backend("numba"), kernels.get_backend("numpy")

    t0 = time.perf_counter()
    warm, _ = batch_args(4, 2)
    nb.distill_batch(**warm)
    nb.trajectories(*trajectory_args(4, 2, 10))
    print(f"numba first call (compile or cache load): {time.perf_counter() - t0:.2f}s\n")

    print(f"{'kernel':<14}{'N':>4}{'size':>9}{'numba ms':>11}{'numpy ms':>11}{'speedup':>9}")
    for n in args.states:
        for B in args.batch:
            kw, _ = batch_args(n, B)
            a, b = nb.distill_batch(**kw), npy.distill_batch(**kw)
            assert np.array_equal(a[4], b[4]) and np.allclose(a[0], b[0], atol=1e-10)
            tn = best_of(lambda: nb.distill_batch(**kw), args.repeat)
            tp = best_of(lambda: npy.distill_batch(**kw), args.repeat)
            print(f"{'distill_batch':<14}{n:>4}{B:>9}{1e3 * tn:>11.3f}{1e3 * tp:>11.3f}{tp / tn:>8.1f}x")
        for K in (2, 64):
            cdfs, u = trajectory_args(n, K, args.samples)
            assert np.array_equal(nb.trajectories(cdfs, u), npy.trajectories(cdfs, u))
            tn = best_of(lambda: nb.trajectories(cdfs, u), args.repeat)
            tp = best_of(lambda: npy.trajectories(cdfs, u), args.repeat)
            label = f"traj K={K}"
            print(f"{label:<14}{n:>4}{args.samples:>9}{1e3 * tn:>11.3f}{1e3 * tp:>11.3f}{tp / tn:>8.1f}x")


if __name__ == "__main__":
    main()
