import numpy as np
import pytest

from tp4dvar import (
    AssimilationProblem,
    CovarianceOperator,
    Lorenz96Params,
    ObservationOperator,
    SeededRng,
    SubInterval,
    generate_observations,
    linear_model,
    lorenz96_model,
    propagate,
    uniform_partition,
)
from tp4dvar.harness import make_reference_initial_condition


@pytest.fixture(scope="session")
def l96_40():
    return lorenz96_model(Lorenz96Params(n=40))


@pytest.fixture(scope="session")
def attractor_state():
    return make_reference_initial_condition(Lorenz96Params(n=40), 200, 0.05)


def build_twin_problem(model, ref0, n_sub=4, sub_len=0.1, steps=2,
                       obs_noise=0.05, bg_noise=0.08, obs_seed=7, bg_seed=99):
    """Small twin problem used across test modules."""
    n = model.n
    part = uniform_partition(0.0, n_sub * sub_len, n_sub, steps)
    hop = ObservationOperator.identity(n)
    obs = generate_observations(model, ref0, part, hop, obs_noise, SeededRng(obs_seed))
    traj = [ref0]
    for iv in part:
        x, _ = propagate(model, traj[-1], iv)
        traj.append(x)
    avg = float(np.mean([np.mean(np.abs(s)) for s in traj]))
    sigma_b = bg_noise * avg
    B0 = CovarianceOperator.scaled_identity(n, sigma_b**2 if sigma_b > 0 else 1.0)
    x_b = B0.sample_gaussian(ref0, SeededRng(bg_seed)) if sigma_b > 0 else ref0.copy()
    return AssimilationProblem(model=model, partition=part, hop=hop, obs=obs, x_b=x_b, B0=B0)


@pytest.fixture(scope="session")
def l96_problem(l96_40, attractor_state):
    return build_twin_problem(l96_40, attractor_state, n_sub=6)


@pytest.fixture(scope="session")
def linear_2d_problem():
    """Tiny linear-Gaussian problem with a closed-form minimizer."""
    A = np.array([[-0.5, 0.3], [-0.2, -0.4]])
    model = linear_model(A)
    ref0 = np.array([1.0, -0.5])
    return build_twin_problem(model, ref0, n_sub=2, sub_len=0.5, steps=5,
                              obs_noise=0.05, bg_noise=0.1, obs_seed=3, bg_seed=4)


def propagator_matrix(model, iv):
    """Dense sub-interval propagator of a linear model, column by column."""
    n = model.n
    M = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        M[:, j], _ = propagate(model, e, iv)
    return M


def normal_equations(prob):
    """Closed-form (A_ne, b_ne) of the serial quadratic cost for linear models.

    Independent assembly: propagator matrices built column-by-column from
    basis vectors, covariances inverted densely.
    """
    n = prob.n
    Binv = np.linalg.inv(np.diag(prob.B0.data) if prob.B0.kind == "diagonal" else prob.B0.data)
    A_ne = Binv.copy()
    b_ne = Binv @ prob.x_b
    M_total = np.eye(n)
    H = np.array([prob.hop.observe(np.eye(n)[:, j]) for j in range(n)]).T
    for k, iv in enumerate(prob.partition):
        M_total = propagator_matrix(prob.model, iv) @ M_total
        R = prob.obs.covariances[k]
        Rinv = np.linalg.inv(np.diag(R.data) if R.kind == "diagonal" else R.data)
        G = H @ M_total
        A_ne += G.T @ Rinv @ G
        b_ne += G.T @ Rinv @ prob.obs.values[k]
    return A_ne, b_ne
