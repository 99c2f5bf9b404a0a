"""Value functions by inner minimization and their derivative identities.

The collective value solves the pinned-terminal ensemble problem on a
restricted horizon; the individual value solves one player's path against a
frozen collective field.  Space and time derivatives are finite differences
of re-solves, cross-validated against the momentum formula (the discrete
terminal velocity), and both Hamilton-Jacobi residuals are assembled from
those pieces.  Re-solves warm-start from the center minimizer shifted by a
linear ramp, which cannot change the answer under strict convexity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ensemble import SinglePath, TimeGrid, TrajectoryGrid
from .errors import DimensionError
from .model import ProblemSpec
from .variational import (
    SolverOptions,
    external_energy,
    external_field,
    interaction_energy,
    minimize_action,
    minimize_descent,
)


def default_space_step(reference) -> float:
    return 1e-4 * (1.0 + float(np.max(np.abs(reference))))


def default_time_step(time: TimeGrid) -> float:
    return max(2.0 * time.dt, 1e-3 * time.horizon)


def collective_curvature_bound(spec: ProblemSpec, t: float) -> float:
    """Envelope constant for the second difference of the collective value.

    Uses the lifted running-cost bound max(1, sup |grad^2 g|) and twice the
    interaction Hessian sup (the sharpest constant closing the cross-term
    inequality <H a, b> <= C (|a|^2 + |b|^2)); treated as an order-of-magnitude
    envelope, not a sharp constant.
    """
    run = max(1.0, spec.lagrangian.position_term.hessian_sup)
    inter = 2.0 * spec.interaction.hessian_sup
    return (t / 3.0) * (run + inter) + run / t


def individual_curvature_bound(spec: ProblemSpec, t: float) -> float:
    """Same envelope for the single-player value; the frozen field enters
    without cross terms, so the interaction constant is the plain sup."""
    run = max(1.0, spec.lagrangian.position_term.hessian_sup)
    inter = spec.interaction.hessian_sup
    return (t / 3.0) * (run + inter) + run / t


@dataclass
class ValueProbe:
    horizon: float
    terminal: np.ndarray
    value: float
    minimizer: TrajectoryGrid | SinglePath | None
    converged: bool


@dataclass(frozen=True)
class ValueGradient:
    """Finite-difference and formula branches of the value gradient.

    ``fd`` and ``formula`` carry the per-coordinate derivative of the
    discrete total (weighted by the 1/N quadrature); ``per_player_momentum``
    is the unweighted convention, the momentum grad_v L at the terminal node.
    """

    fd: np.ndarray
    formula: np.ndarray
    per_player_momentum: np.ndarray
    space_step: float

    def max_disagreement(self) -> float:
        return float(np.max(np.abs(self.fd - self.formula)))


@dataclass(frozen=True)
class HJEReport:
    dt_term: float
    hamiltonian_term: float
    interaction_term: float
    residual: float
    time_step: float
    space_step: float

    def to_dict(self) -> dict:
        return {
            "dt_term": self.dt_term,
            "hamiltonian_term": self.hamiltonian_term,
            "interaction_term": self.interaction_term,
            "residual": self.residual,
            "time_step": self.time_step,
            "space_step": self.space_step,
        }


# ---------------------------------------------------------------------------
# Collective value
# ---------------------------------------------------------------------------


def _restricted_steps(t: float, spec_horizon: float, base_steps: int) -> int:
    return max(8, round(base_steps * t / spec_horizon))


def value_collective(
    t: float,
    terminal,
    spec: ProblemSpec,
    base_steps: int,
    options: SolverOptions | None = None,
    start: np.ndarray | None = None,
    force: bool = False,
) -> ValueProbe:
    """Optimal collective cost on [0, t] with the terminal slice pinned.

    The step count scales proportionally from the base grid (at least 8), so
    refinement studies and time differences keep a consistent clock.
    """
    if not 0.0 < t <= spec.horizon + 1e-12:
        raise ValueError("probe time must lie in (0, horizon]")
    steps = _restricted_steps(t, spec.horizon, base_steps)
    result = minimize_action(
        terminal, spec, steps, options=options, horizon=t, start=start, force=force
    )
    return ValueProbe(
        horizon=t,
        terminal=np.asarray(terminal, dtype=float),
        value=result.action.total,
        minimizer=result.trajectory,
        converged=result.converged,
    )


def _ramped_start(minimizer: TrajectoryGrid, delta: np.ndarray) -> np.ndarray:
    """Shift a known minimizer toward a perturbed terminal along a linear ramp."""
    ramp = minimizer.time.nodes() / minimizer.time.horizon
    return minimizer.values + ramp[:, None, None] * delta[None, :, :]


def grad_value_collective(
    t: float,
    terminal,
    spec: ProblemSpec,
    base_steps: int,
    space_step: float | None = None,
    options: SolverOptions | None = None,
    force: bool = False,
    probe: ValueProbe | None = None,
) -> ValueGradient:
    """Terminal-slice gradient of the collective value, two ways.

    (a) central finite differences of re-solves in every coordinate of the
    terminal slice; (b) the momentum formula at the minimizer's terminal node
    with its discrete terminal velocity, carrying the 1/N quadrature weight so
    both branches measure the same discrete-total derivative.
    """
    terminal = np.asarray(terminal, dtype=float)
    h = default_space_step(terminal) if space_step is None else float(space_step)
    if probe is None:
        probe = value_collective(t, terminal, spec, base_steps, options=options, force=force)
    minimizer = probe.minimizer
    count, dim = terminal.shape

    fd = np.empty_like(terminal)
    for i in range(count):
        for a in range(dim):
            delta = np.zeros_like(terminal)
            delta[i, a] = h
            plus = value_collective(
                t, terminal + delta, spec, base_steps, options=options,
                start=_ramped_start(minimizer, delta), force=force,
            )
            minus = value_collective(
                t, terminal - delta, spec, base_steps, options=options,
                start=_ramped_start(minimizer, -delta), force=force,
            )
            fd[i, a] = (plus.value - minus.value) / (2.0 * h)

    terminal_velocity = (minimizer.values[-1] - minimizer.values[-2]) / minimizer.time.dt
    momentum = terminal_velocity  # grad_v L = v for the kinetic family
    formula = momentum / count
    return ValueGradient(
        fd=fd, formula=formula, per_player_momentum=momentum, space_step=h
    )


def hje_residual_collective(
    t: float,
    terminal,
    spec: ProblemSpec,
    base_steps: int,
    time_step: float | None = None,
    options: SolverOptions | None = None,
    force: bool = False,
) -> HJEReport:
    """Residual of the collective Hamilton-Jacobi equation at (t, X).

    The time derivative is a central difference of re-solved values (one-sided
    backward at t = horizon); the momentum enters through the formula branch.
    The time step snaps to a multiple of the base grid spacing so every probe
    shares the same dt.
    """
    terminal = np.asarray(terminal, dtype=float)
    base_dt = spec.horizon / base_steps
    h = default_time_step(TimeGrid(spec.horizon, base_steps)) if time_step is None else float(time_step)
    h = max(2, round(h / base_dt)) * base_dt

    center = value_collective(t, terminal, spec, base_steps, options=options, force=force)
    if t + h <= spec.horizon + 1e-12:
        plus = value_collective(t + h, terminal, spec, base_steps, options=options, force=force)
        minus = value_collective(t - h, terminal, spec, base_steps, options=options, force=force)
        dt_term = (plus.value - minus.value) / (2.0 * h)
    else:
        minus = value_collective(t - h, terminal, spec, base_steps, options=options, force=force)
        dt_term = (center.value - minus.value) / h

    minimizer = center.minimizer
    momentum = (minimizer.values[-1] - minimizer.values[-2]) / minimizer.time.dt
    kinetic = 0.5 * np.sum(momentum * momentum, axis=-1)
    position = spec.lagrangian.position_term.value(terminal)
    hamiltonian_term = float(np.mean(kinetic - position))
    interaction_term = float(interaction_energy(spec.interaction, terminal))
    residual = dt_term + hamiltonian_term - interaction_term
    return HJEReport(
        dt_term=dt_term,
        hamiltonian_term=hamiltonian_term,
        interaction_term=interaction_term,
        residual=residual,
        time_step=h,
        space_step=0.0,
    )


# ---------------------------------------------------------------------------
# Individual value
# ---------------------------------------------------------------------------


def individual_path_cost(
    path_values: np.ndarray, anchors: np.ndarray, spec: ProblemSpec, dt: float
) -> float:
    """One player's total cost along a path against frozen anchor slices.

    anchors[j] holds the frozen ensemble at node j; the running interaction
    uses left endpoints, the initial interaction the node-0 slice.
    """
    vel = np.diff(path_values, axis=0) / dt
    body = path_values[:-1]
    kinetic = 0.5 * np.sum(vel * vel, axis=-1)
    position = spec.lagrangian.position_term.value(body)
    running = external_energy(spec.interaction, body, anchors[:-1])
    total = dt * float(np.sum(kinetic + position + running))
    total += float(external_energy(spec.initial_interaction, path_values[0], anchors[0]))
    return total


def _individual_cost_and_gradient(
    path_values: np.ndarray, anchors: np.ndarray, spec: ProblemSpec, dt: float
):
    steps = path_values.shape[0] - 1
    vel = np.diff(path_values, axis=0) / dt
    body = path_values[:-1]
    total = individual_path_cost(path_values, anchors, spec, dt)
    grad = dt * (
        spec.lagrangian.position_term.gradient(body)
        + external_field(spec.interaction, body, anchors[:-1])
    )
    grad -= vel
    grad[1:] += vel[: steps - 1]
    grad[0] += external_field(spec.initial_interaction, path_values[0], anchors[0])
    return total, grad


def _aligned_index(t: float, dt: float, label: str) -> int:
    index = round(t / dt)
    if abs(index * dt - t) > 1e-9 * max(1.0, t):
        raise ValueError(f"{label} must sit on the frozen grid (multiple of dt={dt})")
    return index


def value_individual(
    t: float,
    point,
    frozen: TrajectoryGrid,
    spec: ProblemSpec,
    options: SolverOptions | None = None,
    start: np.ndarray | None = None,
) -> ValueProbe:
    """Optimal single-player cost to reach ``point`` at time t.

    Runs on the frozen trajectory's clock; at t = 0 the path degenerates to
    the point itself and the value is exactly the initial-interaction term.
    """
    point = np.asarray(point, dtype=float)
    if point.shape != (frozen.dimension,):
        raise DimensionError("point", f"expected ({frozen.dimension},), got {point.shape}")
    dt = frozen.time.dt
    steps = _aligned_index(t, dt, "probe time")
    if steps > frozen.time.steps:
        raise ValueError("frozen trajectory does not cover the probe time")

    if steps == 0:
        value = float(external_energy(spec.initial_interaction, point, frozen.values[0]))
        return ValueProbe(horizon=0.0, terminal=point, value=value, minimizer=None, converged=True)

    options = options or SolverOptions()
    anchors = frozen.values[: steps + 1]
    if start is None:
        start_values = np.broadcast_to(point, (steps + 1, point.shape[0])).copy()
    else:
        start_values = np.array(start, dtype=float)

    # same velocity-coordinate search as the collective solver: the path is
    # rebuilt backward from the pinned endpoint
    def unpack(x: np.ndarray) -> np.ndarray:
        vel = x.reshape(steps, point.shape[0])
        values = np.empty((steps + 1, point.shape[0]))
        values[steps] = point
        values[:-1] = point - dt * np.cumsum(vel[::-1], axis=0)[::-1]
        return values

    def fun(x: np.ndarray) -> float:
        return individual_path_cost(unpack(x), anchors, spec, dt)

    def fun_and_grad(x: np.ndarray):
        total, node_grad = _individual_cost_and_gradient(unpack(x), anchors, spec, dt)
        search_grad = -dt * np.cumsum(node_grad, axis=0)
        return total, search_grad.ravel(), float(np.max(np.abs(node_grad)))

    start_velocity = np.diff(start_values, axis=0) / dt
    outcome = minimize_descent(fun, fun_and_grad, start_velocity.ravel(), options)
    path = SinglePath(TimeGrid(horizon=steps * dt, steps=steps), unpack(outcome.x))
    return ValueProbe(
        horizon=t,
        terminal=point,
        value=outcome.value,
        minimizer=path,
        converged=outcome.converged,
    )


def _ramped_path_start(path: SinglePath, delta: np.ndarray) -> np.ndarray:
    ramp = path.time.nodes() / path.time.horizon
    return path.values + ramp[:, None] * delta[None, :]


@dataclass(frozen=True)
class IndividualValueGradient:
    fd: np.ndarray
    formula: np.ndarray
    space_step: float

    def max_disagreement(self) -> float:
        return float(np.max(np.abs(self.fd - self.formula)))


def grad_value_individual(
    t: float,
    point,
    frozen: TrajectoryGrid,
    spec: ProblemSpec,
    space_step: float | None = None,
    options: SolverOptions | None = None,
    probe: ValueProbe | None = None,
) -> IndividualValueGradient:
    """Point gradient of the individual value: finite differences vs formula."""
    point = np.asarray(point, dtype=float)
    h = default_space_step(point) if space_step is None else float(space_step)
    if probe is None:
        probe = value_individual(t, point, frozen, spec, options=options)
    path = probe.minimizer

    fd = np.empty_like(point)
    for a in range(point.shape[0]):
        delta = np.zeros_like(point)
        delta[a] = h
        plus = value_individual(
            t, point + delta, frozen, spec, options=options,
            start=None if path is None else _ramped_path_start(path, delta),
        )
        minus = value_individual(
            t, point - delta, frozen, spec, options=options,
            start=None if path is None else _ramped_path_start(path, -delta),
        )
        fd[a] = (plus.value - minus.value) / (2.0 * h)

    if path is None:
        formula = external_field(spec.initial_interaction, point, frozen.values[0])
    else:
        formula = (path.values[-1] - path.values[-2]) / path.time.dt
    return IndividualValueGradient(fd=fd, formula=np.asarray(formula), space_step=h)


def hje_residual_individual(
    t: float,
    point,
    frozen: TrajectoryGrid,
    spec: ProblemSpec,
    time_step: float | None = None,
    space_step: float | None = None,
    options: SolverOptions | None = None,
) -> HJEReport:
    """Residual of the single-player Hamilton-Jacobi equation at (t, q).

    The frozen trajectory must be the converged collective minimizer; the
    momentum comes from the minimizer's terminal velocity and the time
    derivative from re-solves at t +/- h on the frozen grid's clock.
    """
    point = np.asarray(point, dtype=float)
    dt = frozen.time.dt
    index = _aligned_index(t, dt, "probe time")
    h = default_time_step(frozen.time) if time_step is None else float(time_step)
    intervals = max(2, round(h / dt))
    h = intervals * dt
    if index - intervals < 0:
        raise ValueError("probe time too close to 0 for the requested time step")

    center = value_individual(t, point, frozen, spec, options=options)
    if index + intervals <= frozen.time.steps:
        plus = value_individual(t + h, point, frozen, spec, options=options)
        minus = value_individual(t - h, point, frozen, spec, options=options)
        dt_term = (plus.value - minus.value) / (2.0 * h)
    else:
        minus = value_individual(t - h, point, frozen, spec, options=options)
        dt_term = (center.value - minus.value) / h

    path = center.minimizer
    momentum = (path.values[-1] - path.values[-2]) / path.time.dt
    hamiltonian_term = float(
        0.5 * momentum @ momentum - spec.lagrangian.position_term.value(point)
    )
    interaction_term = float(
        external_energy(spec.interaction, point, frozen.values[index])
    )
    residual = dt_term + hamiltonian_term - interaction_term
    return HJEReport(
        dt_term=dt_term,
        hamiltonian_term=hamiltonian_term,
        interaction_term=interaction_term,
        residual=residual,
        time_step=h,
        space_step=default_space_step(point) if space_step is None else float(space_step),
    )
