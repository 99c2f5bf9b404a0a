import numpy as np
import pytest

from mfg_nash import (
    PlayerGrid,
    SinglePath,
    SolverOptions,
    TimeGrid,
    TrajectoryGrid,
    boundary_residual,
    constant_trajectory,
    el_residual_collective,
    el_residual_individual,
    eval_hamiltonian,
    eval_lagrangian,
    hamiltonian_residual,
    minimize_action,
    to_hamiltonian,
    velocity,
)
from mfg_nash.optimality import reconstruction_gap

from helpers import (
    closed_form_two_player,
    cosh_mode,
    cosine_problem,
    free_problem,
    quadratic_problem,
    smooth_random_trajectory,
    spread_terminal,
    two_player_terminal,
)


def oracle_trajectory(steps, phi=1.0, psi=1.0, horizon=0.5):
    time = TimeGrid(horizon, steps)
    values = closed_form_two_player(phi, psi, horizon, 1.0, time.nodes())
    return TrajectoryGrid(time, PlayerGrid(2), values)


# ---------------------------------------------------------------------------
# collective residuals
# ---------------------------------------------------------------------------


def test_el_residual_zero_on_constant_free_path():
    time = TimeGrid(1.0, 8)
    traj = constant_trajectory(np.array([[0.2], [-0.4]]), time, PlayerGrid(2))
    report = el_residual_collective(traj, free_problem(horizon=1.0))
    assert report.sup_norm == 0.0
    assert report.l2_norm == 0.0


def test_el_residual_on_continuum_oracle_is_first_order():
    spec = quadratic_problem()
    sups = {}
    for steps in (32, 64, 128):
        report = el_residual_collective(oracle_trajectory(steps), spec)
        sups[steps] = report.sup_norm
        assert report.sup_norm <= 5.0 * (0.5 / steps)
    assert sups[128] < sups[32]


def test_el_residual_linear_path_equals_minus_interaction_field():
    # straight lines have zero momentum rate, so the residual is exactly the
    # negated mean interaction field at each interior node
    spec = quadratic_problem(phi=1.7, psi=0.0)
    time = TimeGrid(0.5, 16)
    nodes = time.nodes()
    values = np.empty((17, 2, 1))
    values[:, 0, 0] = -1.0 + 0.5 * nodes
    values[:, 1, 0] = 1.0 + 0.25 * nodes
    traj = TrajectoryGrid(time, PlayerGrid(2), values)
    report = el_residual_collective(traj, spec)
    mean = values[1:-1].mean(axis=1, keepdims=True)
    expected = -1.7 * (values[1:-1] - mean)
    assert np.max(np.abs(report.per_node - expected)) < 1e-12


def test_boundary_residual_cases():
    free = free_problem(horizon=1.0)
    time = TimeGrid(1.0, 8)
    constant = constant_trajectory(np.array([[1.0], [0.0]]), time, PlayerGrid(2))
    assert boundary_residual(constant, free).sup_norm == 0.0

    # nonzero initial velocity with no initial interaction: residual is -Z[0]
    rng = np.random.default_rng(0)
    traj = smooth_random_trajectory(rng, time, PlayerGrid(2), 1)
    report = boundary_residual(traj, free)
    assert np.max(np.abs(report.per_node + velocity(traj)[0])) == 0.0
    assert report.sup_norm > 0.0


def test_boundary_residual_on_oracle_is_first_order():
    spec = quadratic_problem()
    for steps in (32, 128):
        report = boundary_residual(oracle_trajectory(steps), spec)
        assert report.sup_norm <= 5.0 * (0.5 / steps)


def test_converged_minimizer_residuals_scale_linearly_in_dt():
    # interior residual is the solver's own stationarity condition, so it
    # sits at tolerance scale; the boundary residual carries the genuine
    # first-order quadrature term, so its dt-quotient is the stable constant
    spec = quadratic_problem()
    el_quotients = []
    bd_quotients = []
    for steps in (16, 32, 64):
        result = minimize_action(
            two_player_terminal(), spec, steps, force=True,
            options=SolverOptions(tol=1e-11),
        )
        dt = 0.5 / steps
        el = el_residual_collective(result.trajectory, spec).sup_norm
        bd = boundary_residual(result.trajectory, spec).sup_norm
        assert el <= 5.0 * dt
        assert bd <= 5.0 * dt
        el_quotients.append(el / dt)
        bd_quotients.append(bd / dt)
    assert max(el_quotients) <= 5.0
    assert max(bd_quotients) / min(bd_quotients) < 2.0


def test_random_non_minimizer_residual_stays_bounded_away_from_zero():
    spec = quadratic_problem()
    rng = np.random.default_rng(1)
    sups = []
    for steps in (16, 32, 64):
        time = TimeGrid(0.5, steps)
        rng = np.random.default_rng(1)  # same path at every refinement
        traj = smooth_random_trajectory(rng, time, PlayerGrid(2), 1)
        sups.append(el_residual_collective(traj, spec).sup_norm)
    assert min(sups) > 0.1


# ---------------------------------------------------------------------------
# momentum form
# ---------------------------------------------------------------------------


def test_momentum_equals_velocity_and_duality_closes():
    rng = np.random.default_rng(2)
    spec = cosine_problem(horizon=0.1)
    time = TimeGrid(0.1, 16)
    traj = smooth_random_trajectory(rng, time, PlayerGrid(3), 1)
    state = to_hamiltonian(traj, spec)
    assert np.array_equal(state.momentum, velocity(traj))
    assert reconstruction_gap(state, spec) == 0.0

    vel = velocity(traj)
    for j in (0, 7, 15):
        for i in range(3):
            q, v = traj.values[j, i], vel[j, i]
            value_l, _, _ = eval_lagrangian(spec.lagrangian, q, v)
            value_h, _, _ = eval_hamiltonian(spec.lagrangian, q, v)
            assert abs(value_l + value_h - float(v @ v)) < 1e-12


@pytest.mark.parametrize("seed", range(10))
def test_hamiltonian_residual_matches_el_nodewise(seed):
    rng = np.random.default_rng(seed)
    kinds = [
        quadratic_problem(phi=1.0 + 0.1 * seed, psi=0.5),
        cosine_problem(beta=0.5 + 0.05 * seed, wave=1.0, horizon=0.2),
    ]
    spec = kinds[seed % 2]
    time = TimeGrid(spec.horizon, 12)
    traj = smooth_random_trajectory(rng, time, PlayerGrid(3), 1)
    el = el_residual_collective(traj, spec)
    ham = hamiltonian_residual(to_hamiltonian(traj, spec), spec)
    assert np.max(np.abs(el.per_node - ham.per_node)) < 1e-12


def test_hamiltonian_residual_on_oracle_is_first_order():
    spec = quadratic_problem()
    for steps in (32, 128):
        state = to_hamiltonian(oracle_trajectory(steps), spec)
        assert hamiltonian_residual(state, spec).sup_norm <= 5.0 * (0.5 / steps)


def test_hamiltonian_residual_zero_without_interactions():
    time = TimeGrid(1.0, 8)
    traj = constant_trajectory(np.array([[0.3]]), time, PlayerGrid(1))
    state = to_hamiltonian(traj, free_problem(horizon=1.0))
    assert hamiltonian_residual(state, free_problem(horizon=1.0)).sup_norm == 0.0


# ---------------------------------------------------------------------------
# individual residuals
# ---------------------------------------------------------------------------


def test_individual_residual_constant_path_no_potentials():
    spec = free_problem(horizon=1.0)
    time = TimeGrid(1.0, 8)
    frozen = constant_trajectory(np.array([[0.0], [1.0]]), time, PlayerGrid(2))
    path = SinglePath(time, np.full((9, 1), 0.5))
    residuals = el_residual_individual(path, frozen, spec)
    assert residuals.interior.sup_norm == 0.0
    assert residuals.boundary.sup_norm == 0.0


def test_individual_residual_of_equilibrium_player_matches_collective_order():
    spec = cosine_problem(horizon=0.1)
    steps = 64
    result = minimize_action(spread_terminal(8), spec, steps)
    traj = result.trajectory
    collective_sup = el_residual_collective(traj, spec).sup_norm
    path = SinglePath(traj.time, traj.values[:, 3])
    residuals = el_residual_individual(path, traj, spec)
    # same stationarity system seen through the frozen field: same order
    assert residuals.interior.sup_norm <= 10 * max(collective_sup, 1e-12) + 1e-9
    assert residuals.boundary.sup_norm <= 10 * (0.1 / steps)


def test_individual_residual_cosh_oracle_against_frozen_origin():
    # one frozen player at the origin; the deviator's stationary path is the
    # cosh mode with the free-initial-point condition
    phi, psi, horizon = 1.3, 0.6, 0.5
    spec = quadratic_problem(phi=phi, psi=psi, horizon=horizon)
    for steps in (32, 128):
        time = TimeGrid(horizon, steps)
        frozen = constant_trajectory(np.zeros((1, 1)), time, PlayerGrid(1))
        mode = cosh_mode(phi, psi, horizon, time.nodes())
        path = SinglePath(time, (0.8 * mode / mode[-1])[:, None])
        residuals = el_residual_individual(path, frozen, spec)
        assert residuals.interior.sup_norm <= 5.0 * (horizon / steps)
        assert residuals.boundary.sup_norm <= 5.0 * (horizon / steps)
