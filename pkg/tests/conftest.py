import numpy as np
import pytest

from cdmd import kernels
from cdmd.ctmc import NoiseSchedule, StateSpace, build_uniform_generator
from cdmd.oracle import DataDistribution

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def schedule():
    return NoiseSchedule.geometric(0.05, 100.0)


@pytest.fixture
def gen4():
    return build_uniform_generator(StateSpace(4))


@pytest.fixture
def data4():
    return DataDistribution([0.5, 0.3, 0.15, 0.05])


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    return kernels.get_backend(request.param)


def random_data(rng, n, floor=1e-3):
    p = np.maximum(rng.dirichlet(np.ones(n)), floor)
    return DataDistribution(p / p.sum())


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def fd_gradient_errors(rng, cases=20, step=1e-5):
    """Relative max-norm error of the analytic item gradient against central differences."""
    from cdmd.ctmc import NoiseSchedule, build_uniform_generator
    from cdmd.distill import item_loss_and_grad
    from cdmd.posterior import model_conditional_at
    from cdmd.score_model import ScoreTable, clone_as_student, fit_from_oracle

    schedule = NoiseSchedule.geometric(0.05, 100.0)
    errors = []
    while len(errors) < cases:
        n = int(rng.integers(2, 7))
        gen = build_uniform_generator(n)
        data = random_data(rng, n, floor=0.02)
        teacher = fit_from_oracle(data, gen, schedule, 8)
        params = teacher.params + rng.normal(scale=0.3, size=teacher.params.shape)
        student = ScoreTable(teacher.bucket_edges, params, "student")
        t = rng.uniform(0.1, 1.0)
        s = rng.uniform(teacher.eps, t)
        xt, xs = (int(v) for v in rng.integers(0, n, 2))
        # stay away from the clamp kink, where the loss is not differentiable
        if np.min(np.abs(model_conditional_at(student, gen, schedule, t, xt))) < 1e-3:
            continue
        w = rng.uniform(0.5, 2.0)
        _, grad, _ = item_loss_and_grad(student, teacher, gen, schedule, t, s, xt, xs, w)
        b = student.bucket(t)
        fd = np.zeros(n)
        for y in range(n):
            if y == xt:
                continue
            vals = []
            for sign in (1, -1):
                probe = clone_as_student(student)
                probe.params[b, xt, y] += sign * step
                vals.append(item_loss_and_grad(probe, teacher, gen, schedule, t, s, xt, xs, w)[0])
            fd[y] = (vals[0] - vals[1]) / (2 * step)
        analytic = grad[b, xt]
        errors.append(np.max(np.abs(analytic - fd)) / max(np.max(np.abs(fd)), 1e-12))
        rest = grad.copy()
        rest[b, xt] = 0.0
        assert not rest.any()
    return np.array(errors)
