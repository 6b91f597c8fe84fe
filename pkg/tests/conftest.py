import numpy as np
import pytest

from gpkoopman.cli import resolve_grid
from gpkoopman.embedding import build_training_set
from gpkoopman.gp import KernelParams, TaskCovariance, diag_task_covariance, fit
from gpkoopman.koopman import decompose
from gpkoopman.swingsim import add_noise, disturbed_init, find_equilibrium, observe, simulate

import helpers


@pytest.fixture(scope="session")
def three_machine_grid():
    return resolve_grid("three-machine")


@pytest.fixture(scope="session")
def ne_grid():
    return resolve_grid("ne10")


@pytest.fixture(scope="session")
def ne_equilibrium(ne_grid):
    return find_equilibrium(ne_grid)


@pytest.fixture(scope="session")
def ne_clean(ne_grid, ne_equilibrium):
    """The paper-style scenario: disturbance at machine 8, 15 Hz, 4 s."""
    init = disturbed_init(ne_grid, ne_equilibrium, gen=8, d_delta=1.5, d_omega=3.0)
    traj = simulate(ne_grid, init, t_end=4.0, output_period=1.0 / 15.0)
    return observe(traj)


@pytest.fixture(scope="session")
def planted_model():
    values, lam_true = helpers.planted_linear(2025)
    ts = build_training_set(helpers.as_sequence(values), 10)
    model = fit(ts, KernelParams(1.0, 64.0),
                TaskCovariance(np.eye(4), np.zeros(4)))
    return model, lam_true, values


@pytest.fixture(scope="session")
def suite_decompositions(planted_model, ne_clean):
    """Representative decompositions the reconstruction criteria sweep over."""
    decs = []

    model, _, _ = planted_model
    decs.append(("planted-linear", decompose(model)))

    values, n_steps, p = helpers.periodic_sequence(42)
    ts = build_training_set(helpers.as_sequence(values[:, : n_steps + 1]), p)
    m = values.shape[0]
    decs.append(("periodic", decompose(
        fit(ts, KernelParams(1.0, 1.0), TaskCovariance(np.eye(m), np.zeros(m)))
    )))

    ts = build_training_set(ne_clean, 15)
    params = KernelParams(16.0, 16.0)
    decs.append(("ne-clean", decompose(fit(ts, params, diag_task_covariance(ts, 0.01)))))

    noisy = add_noise(ne_clean, 0.1, seed=7)
    ts = build_training_set(noisy, 15)
    decs.append(("ne-noisy", decompose(fit(ts, params, diag_task_covariance(ts, 0.01)))))

    return decs
