import os

import numpy as np
import pytest

from mfg_nash import (
    CheckSettings,
    PlayerGrid,
    SolverOptions,
    TimeGrid,
    build_gradient_field,
    constant_trajectory,
    extract_control,
    individual_cost,
    integrate_control,
    minimize_action,
    nash_deviation_test,
    picard_solve,
    solve_equilibrium,
    velocity,
)
from mfg_nash.value import individual_path_cost

from helpers import (
    cosine_problem,
    free_problem,
    quadratic_problem,
    spread_terminal,
    two_player_terminal,
)

TIGHT = SolverOptions(tol=1e-10, keep_trace=False)


# ---------------------------------------------------------------------------
# controls and deviation costs
# ---------------------------------------------------------------------------


def test_control_integration_reproduces_trajectory():
    spec = cosine_problem(horizon=0.1)
    result = minimize_action(spread_terminal(6), spec, 32, options=TIGHT)
    control = extract_control(result)
    rebuilt = integrate_control(control)
    assert np.max(np.abs(rebuilt - result.trajectory.values)) < 1e-13


def test_individual_cost_zero_for_free_problem():
    spec = free_problem(horizon=1.0)
    time = TimeGrid(1.0, 16)
    collective = constant_trajectory(np.array([[0.0], [2.0]]), time, PlayerGrid(2))
    cost = individual_cost(0, np.zeros((16, 1)), collective, spec)
    assert cost == 0.0


def test_individual_cost_of_equilibrium_control_is_definitional():
    spec = quadratic_problem()
    result = minimize_action(two_player_terminal(), spec, 32, options=TIGHT, force=True)
    traj = result.trajectory
    base_control = velocity(traj)
    for player in (0, 1):
        cost = individual_cost(player, base_control[:, player], traj, spec)
        direct = individual_path_cost(
            traj.values[:, player], traj.values, spec, traj.time.dt
        )
        assert cost == pytest.approx(direct, abs=1e-14)


def test_individual_cost_matches_hand_integrated_closed_form():
    # player at +1 rides the exponential mode; continuum cost is
    # (3/4)(1 - e^{-2T}) + e^{-2T} at unit constants
    spec = quadratic_problem()
    horizon = 0.5
    exact = 0.75 * (1.0 - np.exp(-2 * horizon)) + np.exp(-2 * horizon)
    for steps in (64, 128):
        time = TimeGrid(horizon, steps)
        nodes = time.nodes()
        mode = np.exp(nodes - horizon)
        values = np.stack([-mode, mode], axis=1)[:, :, None]
        from mfg_nash import TrajectoryGrid

        traj = TrajectoryGrid(time, PlayerGrid(2), values)
        control = np.diff(values[:, 1], axis=0) / time.dt
        cost = individual_cost(1, control, traj, spec)
        assert cost == pytest.approx(exact, abs=5.0 * time.dt)


def test_nash_zero_magnitude_deviations_cost_nothing():
    spec = quadratic_problem()
    result = minimize_action(two_player_terminal(), spec, 32, options=TIGHT, force=True)
    report = nash_deviation_test(
        result.trajectory, spec, n_samples=5, magnitudes=(0.0,), seed=0
    )
    assert report.min_gap == 0.0
    assert report.ratios.size == 0


def test_nash_deviations_never_pay_on_quadratic_instance():
    spec = quadratic_problem()
    result = minimize_action(
        two_player_terminal(), spec, 64, options=TIGHT, force=True
    )
    report = nash_deviation_test(
        result.trajectory, spec, n_samples=40, magnitudes=(0.05,), seed=1
    )
    assert report.passed
    assert report.min_gap >= -report.gap_tolerance
    # the cost is exactly quadratic in the deviation, so doubling the
    # magnitude multiplies every gap by four
    assert np.max(np.abs(report.ratios - 4.0)) < 1e-5


def test_nash_deviations_on_cosine_instance():
    spec = cosine_problem(horizon=0.1)
    result = minimize_action(spread_terminal(8), spec, 64, options=TIGHT)
    report = nash_deviation_test(
        result.trajectory, spec, n_samples=40, magnitudes=(0.05,), seed=2
    )
    assert report.passed
    assert np.all(report.ratios >= 3.0) and np.all(report.ratios <= 5.0)


def test_nash_strict_mode_flags_profitable_deviation():
    # negative control: away from the minimizer some deviation must pay
    spec = quadratic_problem()
    traj = constant_trajectory(two_player_terminal(), TimeGrid(0.5, 32), PlayerGrid(2))
    report = nash_deviation_test(traj, spec, n_samples=20, magnitudes=(0.3,), seed=5)
    assert not report.passed and report.min_gap < 0
    with pytest.raises(ValueError, match="profitable deviation"):
        nash_deviation_test(
            traj, spec, n_samples=20, magnitudes=(0.3,), seed=5, strict=True
        )
    # the offending control is retrievable from the report
    offender = min(report.scenarios, key=lambda s: s.gap)
    assert offender.control.shape == (32, 1)


def test_nash_thread_pool_is_deterministic():
    spec = quadratic_problem()
    result = minimize_action(two_player_terminal(), spec, 32, options=TIGHT, force=True)
    serial = nash_deviation_test(result.trajectory, spec, n_samples=10, seed=3)
    os.environ["MFG_NASH_THREADS"] = "4"
    try:
        threaded = nash_deviation_test(result.trajectory, spec, n_samples=10, seed=3)
    finally:
        del os.environ["MFG_NASH_THREADS"]
    assert serial.min_gap == threaded.min_gap
    assert [s.gap for s in serial.scenarios] == [s.gap for s in threaded.scenarios]


# ---------------------------------------------------------------------------
# fixed point
# ---------------------------------------------------------------------------


def test_picard_zero_field_converges_in_one_iteration():
    spec = free_problem(horizon=1.0)
    terminal = np.array([[0.5], [-1.5]])
    trace = picard_solve(
        terminal,
        lambda t, pts: np.zeros_like(np.atleast_2d(pts)),
        spec,
        TimeGrid(1.0, 16),
    )
    assert trace.converged
    assert len(trace.sup_deltas) == 1
    assert trace.sup_deltas[0] == 0.0
    assert np.max(np.abs(trace.fixed_point - terminal[None])) == 0.0


def test_picard_linear_field_matches_closed_forms():
    lam = 1.0
    horizon = 1.0
    steps = 64
    spec = free_problem(horizon=horizon)
    terminal = np.array([[1.0], [-0.5]])
    trace = picard_solve(
        terminal,
        lambda t, pts: lam * np.atleast_2d(pts),
        spec,
        TimeGrid(horizon, steps),
        tol=1e-12,
    )
    assert trace.converged
    dt = horizon / steps
    # exact fixed point of the discrete backward equation
    exponents = steps - np.arange(steps + 1)
    discrete = terminal[None] * (1.0 + lam * dt) ** (-exponents)[:, None, None]
    assert np.max(np.abs(trace.fixed_point - discrete)) < 1e-10
    # continuum solution within first order
    nodes = TimeGrid(horizon, steps).nodes()
    continuum = terminal[None] * np.exp(lam * (nodes - horizon))[:, None, None]
    assert np.max(np.abs(trace.fixed_point - continuum)) < 2.0 * dt
    # contraction: successive sup-deltas decrease after the first iterate
    deltas = np.asarray(trace.sup_deltas)
    assert np.all(np.diff(deltas[1:]) <= 1e-15)


def test_gradient_field_tabulates_initial_slice_exactly():
    spec = quadratic_problem(psi=0.8)
    result = minimize_action(two_player_terminal(), spec, 16, options=TIGHT, force=True)
    field = build_gradient_field(result.trajectory, spec, lattice_points=9)
    from mfg_nash.variational import external_field

    pts = np.array([[0.3], [-0.7]])
    exact = external_field(spec.initial_interaction, pts, result.trajectory.values[0])
    assert np.max(np.abs(field(0.0, pts) - exact)) < 1e-9


def test_picard_fixed_point_tracks_collective_minimizer():
    spec = cosine_problem(horizon=0.1)
    terminal = spread_terminal(4)
    result = minimize_action(terminal, spec, 16, options=TIGHT)
    field = build_gradient_field(result.trajectory, spec, lattice_points=17)
    trace = picard_solve(terminal, field, spec, result.trajectory.time, tol=1e-10)
    assert trace.converged
    distance = np.max(np.abs(trace.fixed_point - result.trajectory.values))
    assert distance < 5e-2


# ---------------------------------------------------------------------------
# end-to-end bundle
# ---------------------------------------------------------------------------


def test_solve_equilibrium_free_instance_passes_everything():
    spec = free_problem(horizon=1.0)
    bundle = solve_equilibrium(
        spec,
        np.array([[0.5], [-0.5]]),
        16,
        settings=CheckSettings(nash_samples=5, uniqueness_starts=3, picard_lattice=9),
        seed=0,
    )
    assert bundle.passed
    assert bundle.result.action.total == 0.0
    report = bundle.to_dict()
    for key in ("condition", "action", "solver", "residuals", "hje", "nash",
                "uniqueness", "picard", "pass"):
        assert key in report
    assert report["nash"]["min_gap"] >= -report["nash"]["gap_tolerance"]
    assert report["picard"]["iters"] == 1


def test_solve_equilibrium_quadratic_bundle_passes():
    spec = quadratic_problem()
    bundle = solve_equilibrium(
        spec,
        two_player_terminal(),
        32,
        settings=CheckSettings(nash_samples=10, uniqueness_starts=3, picard_lattice=9),
        seed=1,
        force=True,
    )
    assert bundle.passed, bundle.to_dict()
    assert set(bundle.timings) >= {"minimize", "residuals", "hje", "nash", "uniqueness", "picard"}


def test_solve_equilibrium_canonical_quadratic_full_bundle():
    # two players, unit quadratic interactions, horizon 1/2, 64 steps
    bundle = solve_equilibrium(
        quadratic_problem(),
        two_player_terminal(),
        64,
        settings=CheckSettings(nash_samples=100, uniqueness_starts=10),
        seed=21,
        force=True,
    )
    assert bundle.passed, bundle.to_dict()


def test_solve_equilibrium_cosine_headline_full_bundle():
    # sixteen players, unit cosine interaction, horizon 1/10, 64 steps
    bundle = solve_equilibrium(
        cosine_problem(),
        spread_terminal(16),
        64,
        settings=CheckSettings(nash_samples=100, uniqueness_starts=10),
        seed=22,
    )
    assert bundle.passed, bundle.to_dict()
    assert bundle.condition["margin"] == pytest.approx(0.47, abs=1e-15)


def test_solve_equilibrium_two_dimensional_instance():
    # exercises the whole stack at d = 2, including bilinear interpolation of
    # the gradient-field lattice inside the fixed-point stage
    from mfg_nash import ProblemSpec, cosine_potential, kinetic_lagrangian, zero_potential

    spec = ProblemSpec(
        dimension=2,
        horizon=0.1,
        lagrangian=kinetic_lagrangian(),
        interaction=cosine_potential(1.0, [1.0, -0.5]),
        initial_interaction=zero_potential(),
    )
    rng = np.random.default_rng(31)
    terminal = rng.uniform(-1.0, 1.0, (4, 2))
    bundle = solve_equilibrium(
        spec,
        terminal,
        16,
        settings=CheckSettings(nash_samples=10, uniqueness_starts=3, picard_lattice=9),
        seed=31,
    )
    assert bundle.passed, bundle.to_dict()


def test_minimize_single_player_ensemble():
    # one atom: the interaction field vanishes and the path stays put
    spec = cosine_problem(horizon=0.1)
    result = minimize_action(np.array([[0.4]]), spec, 16, options=TIGHT)
    assert result.converged
    assert np.max(np.abs(result.trajectory.values - 0.4)) < 1e-12


def test_pipeline_idempotence():
    spec = quadratic_problem()
    first = minimize_action(two_player_terminal(), spec, 32, force=True)
    second = minimize_action(
        two_player_terminal(), spec, 32, force=True,
        start=first.trajectory.values,
    )
    assert second.iterations <= 2
    assert abs(second.action.total - first.action.total) <= 1e-12
