"""Shared instance builders and independent oracles for the test suite."""

import numpy as np

from mfg_nash import (
    ProblemSpec,
    kinetic_lagrangian,
    quadratic_potential,
    cosine_potential,
    zero_potential,
)


def quadratic_problem(phi=1.0, psi=1.0, horizon=0.5, dimension=1):
    """Two-sided quadratic interactions; convex for phi, psi >= 0 but the
    conservative admissibility inequality fails, so solves use force=True."""
    return ProblemSpec(
        dimension=dimension,
        horizon=horizon,
        lagrangian=kinetic_lagrangian(),
        interaction=quadratic_potential(phi),
        initial_interaction=quadratic_potential(psi),
    )


def two_player_terminal():
    return np.array([[-1.0], [1.0]])


def cosine_problem(beta=1.0, wave=1.0, horizon=0.1, dimension=1):
    """Non-convex running interaction admitted by the small-horizon margin."""
    return ProblemSpec(
        dimension=dimension,
        horizon=horizon,
        lagrangian=kinetic_lagrangian(),
        interaction=cosine_potential(beta, [wave] * dimension),
        initial_interaction=zero_potential(),
    )


def free_problem(horizon=1.0, dimension=1):
    """No interactions at all; the minimizer is the constant path."""
    return ProblemSpec(
        dimension=dimension,
        horizon=horizon,
        lagrangian=kinetic_lagrangian(),
        interaction=zero_potential(),
        initial_interaction=zero_potential(),
    )


def spread_terminal(count, dimension=1, low=-1.0, high=1.0):
    atoms = (np.arange(count) + 0.5) / count
    return np.tile((low + (high - low) * atoms)[:, None], (1, dimension))


# ---------------------------------------------------------------------------
# Closed-form oracles for the antisymmetric two-player quadratic instance
# ---------------------------------------------------------------------------


def cosh_mode(phi, psi, horizon, times):
    """Positive-player path: A cosh(w s) + B sinh(w s) with w = sqrt(phi),
    B w = psi A (free-initial-point condition) and value 1 at the horizon."""
    w = np.sqrt(phi)
    denom = np.cosh(w * horizon) + (psi / w) * np.sinh(w * horizon)
    a = 1.0 / denom
    b = psi * a / w
    return a * np.cosh(w * times) + b * np.sinh(w * times)


def cosh_mode_velocity(phi, psi, horizon, times):
    w = np.sqrt(phi)
    denom = np.cosh(w * horizon) + (psi / w) * np.sinh(w * horizon)
    a = 1.0 / denom
    b = psi * a / w
    return a * w * np.sinh(w * times) + b * w * np.cosh(w * times)


def closed_form_two_player(phi, psi, horizon, terminal_scale, times):
    """Trajectory values (M+1, 2, 1) for terminal (-s, +s)."""
    mode = cosh_mode(phi, psi, horizon, times) * terminal_scale
    values = np.empty((times.shape[0], 2, 1))
    values[:, 0, 0] = -mode
    values[:, 1, 0] = mode
    return values


def closed_form_action_total(phi, psi, horizon, terminal_scale=1.0):
    """Total cost of the antisymmetric quadratic instance: half the terminal
    position times the terminal velocity (integration by parts collapses the
    rest and the initial terms cancel through the boundary condition)."""
    end = np.array([horizon])
    g_t = cosh_mode(phi, psi, horizon, end)[0] * terminal_scale
    gdot_t = cosh_mode_velocity(phi, psi, horizon, end)[0] * terminal_scale
    return 0.5 * g_t * gdot_t


def discrete_two_player_oracle(phi, psi, horizon, steps):
    """Exact discrete minimizer of the antisymmetric mode by direct linear solve.

    Solves the tridiagonal stationarity system for nodes 0..steps-1 with the
    node-steps value pinned at 1: interior rows are the second difference
    minus dt^2 phi, row 0 encodes the free-initial-point condition.
    Independent of the descent optimizer.
    """
    dt = horizon / steps
    n = steps  # unknowns: nodes 0..steps-1, node steps pinned to 1
    matrix = np.zeros((n, n))
    rhs = np.zeros(n)
    # row 0: dt*phi*g0 - (g1 - g0)/dt + psi*g0 = 0
    matrix[0, 0] = dt * phi + 1.0 / dt + psi
    if n > 1:
        matrix[0, 1] = -1.0 / dt
    else:
        rhs[0] = 1.0 / dt
    # interior rows j = 1..steps-1: (g_{j+1} - 2 g_j + g_{j-1})/dt = dt*phi*g_j
    for j in range(1, n):
        matrix[j, j - 1] = 1.0 / dt
        matrix[j, j] = -2.0 / dt - dt * phi
        if j + 1 < n:
            matrix[j, j + 1] = 1.0 / dt
        else:
            rhs[j] = -1.0 / dt
    mode = np.linalg.solve(matrix, rhs)
    return np.append(mode, 1.0)


def smooth_random_trajectory(rng, time, players, dimension, terminal=None, scale=1.0):
    """Random smooth ensemble path, optionally pinned at a given terminal."""
    from mfg_nash import TrajectoryGrid

    nodes = time.nodes()
    count = players.count
    values = np.zeros((time.steps + 1, count, dimension))
    for mode in range(1, 4):
        amp = rng.standard_normal((count, dimension)) * scale / mode
        values += amp[None] * np.sin(np.pi * mode * nodes / time.horizon + mode)[:, None, None]
    base = rng.standard_normal((count, dimension)) * scale
    values += base[None]
    if terminal is not None:
        ramp = nodes / time.horizon
        values += ramp[:, None, None] * (np.asarray(terminal) - values[-1])[None]
        values[-1] = terminal
    return TrajectoryGrid(time, players, values)
