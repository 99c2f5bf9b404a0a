"""Discrete collective action, its exact gradient, and the convex minimizer.

The running cost uses left-endpoint quadrature over forward-difference
velocities, making the assembled gradient the exact derivative of the
discrete total.  Under the small-horizon condition the total is strictly
convex along interpolations, so monotone first-order descent with an Armijo
backtracking line search suffices; trial steps follow a Barzilai-Borwein
update purely to keep iteration counts reasonable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ensemble import PlayerGrid, TimeGrid, TrajectoryGrid, constant_trajectory
from .errors import ConditionNotMetError, DimensionError
from .model import PotentialSpec, ProblemSpec, check_small_time_condition

# ---------------------------------------------------------------------------
# Pairwise interaction helpers (shared by every cost assembly)
# ---------------------------------------------------------------------------


def pair_differences(values: np.ndarray) -> np.ndarray:
    """x_i - x_k over the last two axes: (..., N, d) -> (..., N, N, d)."""
    return values[..., :, None, :] - values[..., None, :, :]


def interaction_energy(pot: PotentialSpec, values: np.ndarray) -> np.ndarray:
    """Half the double mean of the potential over all ordered pairs.

    Self-pairs are included: the potential is even so its gradient vanishes
    at zero, and the constant pot(0)/(2N) per slice cancels in comparisons.
    """
    diffs = pair_differences(values)
    return 0.5 * np.mean(pot.value(diffs), axis=(-2, -1))


def interaction_field(pot: PotentialSpec, values: np.ndarray) -> np.ndarray:
    """Mean interaction gradient felt by each player: (..., N, d)."""
    diffs = pair_differences(values)
    return np.mean(pot.gradient(diffs), axis=-2)


def external_energy(pot: PotentialSpec, point: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Mean potential between a point (..., d) and anchor slices (..., N, d)."""
    diffs = point[..., None, :] - anchors
    return np.mean(pot.value(diffs), axis=-1)


def external_field(pot: PotentialSpec, point: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    diffs = point[..., None, :] - anchors
    return np.mean(pot.gradient(diffs), axis=-2)


# ---------------------------------------------------------------------------
# Action assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ActionBreakdown:
    running_lagrangian: float
    running_interaction: float
    initial_interaction: float
    total: float

    def to_dict(self) -> dict:
        return {
            "running_lagrangian": self.running_lagrangian,
            "running_interaction": self.running_interaction,
            "initial_interaction": self.initial_interaction,
            "total": self.total,
        }


def initial_cost(slice_values, pot: PotentialSpec) -> float:
    """Half double mean of the initial interaction over one ensemble slice."""
    arr = np.asarray(slice_values, dtype=float)
    if arr.ndim != 2:
        raise DimensionError("slice_values", f"expected (N, d), got {arr.shape}")
    return float(interaction_energy(pot, arr))


def _check_traj(traj: TrajectoryGrid, spec: ProblemSpec) -> None:
    if traj.dimension != spec.dimension:
        raise DimensionError(
            "traj", f"dimension {traj.dimension} does not match problem dimension {spec.dimension}"
        )


def action(traj: TrajectoryGrid, spec: ProblemSpec) -> ActionBreakdown:
    """Total collective cost of a trajectory ensemble."""
    _check_traj(traj, spec)
    dt = traj.time.dt
    vals = traj.values
    vel = np.diff(vals, axis=0) / dt
    body = vals[:-1]

    kinetic = 0.5 * np.sum(vel * vel, axis=-1)
    position = spec.lagrangian.position_term.value(body)
    running_lagrangian = float(dt * np.sum(np.mean(kinetic + position, axis=-1)))
    running_interaction = float(dt * np.sum(interaction_energy(spec.interaction, body)))
    initial = initial_cost(vals[0], spec.initial_interaction)
    total = running_lagrangian + running_interaction + initial
    return ActionBreakdown(running_lagrangian, running_interaction, initial, total)


def _gradient_free_nodes(values: np.ndarray, spec: ProblemSpec, dt: float) -> np.ndarray:
    """Exact gradient of the discrete total w.r.t. nodes 0..M-1.

    The interaction term enters through the symmetrized single-copy form:
    evenness folds the two pair derivatives into twice the mean field.
    """
    steps = values.shape[0] - 1
    count = values.shape[1]
    vel = np.diff(values, axis=0) / dt
    body = values[:-1]

    grad_q = spec.lagrangian.position_term.gradient(body)
    phi_field = interaction_field(spec.interaction, body)
    psi_field = interaction_field(spec.initial_interaction, values[0])

    grad = (dt / count) * (grad_q + phi_field)
    # chain terms of the forward-difference velocities: node j appears in the
    # interval-j kinetic term with weight -1/dt and in interval j-1 with +1/dt
    grad -= vel / count
    grad[1:] += vel[: steps - 1] / count
    grad[0] += psi_field / count
    return grad


def action_gradient(traj: TrajectoryGrid, spec: ProblemSpec) -> np.ndarray:
    """Gradient of the total over free nodes (terminal node is pinned)."""
    _check_traj(traj, spec)
    return _gradient_free_nodes(traj.values, spec, traj.time.dt)


def _total_and_gradient(values: np.ndarray, spec: ProblemSpec, dt: float):
    count = values.shape[1]
    vel = np.diff(values, axis=0) / dt
    body = values[:-1]
    kinetic = 0.5 * np.sum(vel * vel, axis=-1)
    position = spec.lagrangian.position_term.value(body)
    total = dt * float(np.sum(np.mean(kinetic + position, axis=-1)))
    total += dt * float(np.sum(interaction_energy(spec.interaction, body)))
    total += float(interaction_energy(spec.initial_interaction, values[0]))
    grad = _gradient_free_nodes(values, spec, dt)
    return total, grad


def _total_only(values: np.ndarray, spec: ProblemSpec, dt: float) -> float:
    vel = np.diff(values, axis=0) / dt
    body = values[:-1]
    kinetic = 0.5 * np.sum(vel * vel, axis=-1)
    position = spec.lagrangian.position_term.value(body)
    total = dt * float(np.sum(np.mean(kinetic + position, axis=-1)))
    total += dt * float(np.sum(interaction_energy(spec.interaction, body)))
    total += float(interaction_energy(spec.initial_interaction, values[0]))
    return total


# ---------------------------------------------------------------------------
# First-order descent engine
# ---------------------------------------------------------------------------


@dataclass
class SolverOptions:
    tol: float = 1e-9
    max_iter: int = 50_000
    armijo_c: float = 1e-4
    armijo_shrink: float = 0.5
    initial_step: float = 1.0
    max_backtracks: int = 80
    # round-off slack in the Armijo test (relative to the objective scale);
    # acceptance still requires no increase, so the trace stays monotone
    armijo_slack: float = 1e-15
    # consecutive slack-only acceptances tolerated before giving up: past the
    # double-precision floor the objective cannot certify further progress
    max_stall: int = 2000
    keep_trace: bool = True


@dataclass
class DescentResult:
    x: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    converged: bool
    objective_trace: np.ndarray


def minimize_descent(fun, fun_and_grad, x0: np.ndarray, options: SolverOptions) -> DescentResult:
    """Monotone gradient descent with Armijo backtracking.

    ``fun_and_grad`` returns ``(value, gradient)`` or
    ``(value, gradient, stop_norm)``; convergence is declared when the stop
    norm (sup of the gradient by default) falls to the tolerance.  The
    accepted step seeds the next trial via the Barzilai-Borwein ratio
    <s, s>/<s, y>; every accepted step still satisfies the Armijo decrease
    test, so the objective trace is non-increasing.
    """

    def evaluate(point):
        out = fun_and_grad(point)
        if len(out) == 2:
            value, grad = out
            stop = float(np.max(np.abs(grad))) if grad.size else 0.0
        else:
            value, grad, stop = out
        return value, grad, stop

    x = np.array(x0, dtype=float)
    value, grad, stop_norm = evaluate(x)
    trace = [value] if options.keep_trace else None
    step = options.initial_step
    iterations = 0
    stalled = 0
    converged = stop_norm <= options.tol

    while not converged and iterations < options.max_iter:
        gg = float(np.dot(grad.ravel(), grad.ravel()))
        slack = options.armijo_slack * (1.0 + abs(value))
        t = step
        accepted = False
        for _ in range(options.max_backtracks):
            candidate = x - t * grad
            candidate_value = fun(candidate)
            if (
                candidate_value <= value - options.armijo_c * t * gg + slack
                and candidate_value <= value
            ):
                accepted = True
                break
            t *= options.armijo_shrink
        if not accepted:
            break  # step underflow: cannot make progress at this precision
        if value - candidate_value <= slack:
            stalled += 1
            if stalled > options.max_stall:
                break  # objective pinned at the round-off floor
        else:
            stalled = 0
        new_value, new_grad, stop_norm = evaluate(candidate)
        s = candidate - x
        y = new_grad - grad
        sy = float(np.dot(s.ravel(), y.ravel()))
        ss = float(np.dot(s.ravel(), s.ravel()))
        yy = float(np.dot(y.ravel(), y.ravel()))
        # alternate the two Barzilai-Borwein ratios; the mix breaks the slow
        # cycles either ratio can fall into on ill-scaled quadratics
        if sy > 0 and np.isfinite(sy):
            ratio = ss / sy if iterations % 2 == 0 or yy == 0.0 else sy / yy
            step = min(max(ratio, 1e-14), 1e14)
        else:
            step = t * 2.0
        x, value, grad = candidate, new_value, new_grad
        iterations += 1
        if options.keep_trace:
            trace.append(value)
        converged = stop_norm <= options.tol

    return DescentResult(
        x=x,
        value=value,
        grad_norm=stop_norm,
        iterations=iterations,
        converged=converged,
        objective_trace=np.asarray(trace if trace is not None else [value]),
    )


# ---------------------------------------------------------------------------
# Collective minimization
# ---------------------------------------------------------------------------


@dataclass
class MinimizeResult:
    trajectory: TrajectoryGrid
    action: ActionBreakdown
    grad_norm: float
    iterations: int
    converged: bool
    objective_trace: np.ndarray

    def to_dict(self) -> dict:
        return {
            "action": self.action.to_dict(),
            "grad_norm": self.grad_norm,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def require_admissible(spec: ProblemSpec, horizon: float, force: bool) -> None:
    report = check_small_time_condition(spec, horizon=horizon)
    if not report.holds and not force:
        raise ConditionNotMetError(
            f"small-horizon condition fails at horizon {horizon}: "
            f"lhs={report.lhs:.6g} >= rhs={report.rhs:.6g}; pass force=True to override"
        )


def minimize_action(
    terminal,
    spec: ProblemSpec,
    steps: int,
    options: SolverOptions | None = None,
    horizon: float | None = None,
    start: np.ndarray | None = None,
    force: bool = False,
) -> MinimizeResult:
    """Minimize the total cost over trajectories pinned at the terminal slice.

    The default start is the constant-in-time extension of the terminal
    slice; under strict convexity the start only affects iteration count.
    Non-convergence within budget is reported on the result, not raised.
    """
    options = options or SolverOptions()
    terminal = np.asarray(terminal, dtype=float)
    if terminal.ndim != 2:
        raise DimensionError("terminal", f"expected (N, d), got {terminal.shape}")
    if terminal.shape[1] != spec.dimension:
        raise DimensionError("terminal", "dimension does not match the problem")
    if not np.all(np.isfinite(terminal)):
        raise DimensionError("terminal", "entries must be finite")

    T = spec.horizon if horizon is None else float(horizon)
    require_admissible(spec, T, force)

    time = TimeGrid(horizon=T, steps=steps)
    players = PlayerGrid(count=terminal.shape[0])
    dt = time.dt

    if start is None:
        start_values = constant_trajectory(terminal, time, players).values
    else:
        start_values = np.asarray(start, dtype=float)
        if start_values.shape != (steps + 1, players.count, spec.dimension):
            raise DimensionError("start", f"expected full grid shape, got {start_values.shape}")

    full = np.array(start_values)
    full[-1] = terminal

    # The search runs in velocity coordinates: nodes are rebuilt backward from
    # the pinned terminal, a bijection on the free nodes under which the
    # kinetic block of the Hessian is a multiple of the identity, so descent
    # converges at a horizon-controlled rate instead of degrading with the
    # grid.  Convergence is still declared on the free-node gradient.
    shape = (steps,) + terminal.shape

    def unpack(x: np.ndarray) -> np.ndarray:
        vel = x.reshape(shape)
        values = np.empty((steps + 1,) + terminal.shape)
        values[-1] = terminal
        values[:-1] = terminal - dt * np.cumsum(vel[::-1], axis=0)[::-1]
        return values

    def fun(x: np.ndarray) -> float:
        return _total_only(unpack(x), spec, dt)

    def fun_and_grad(x: np.ndarray):
        total, node_grad = _total_and_gradient(unpack(x), spec, dt)
        search_grad = -dt * np.cumsum(node_grad, axis=0)
        return total, search_grad.ravel(), float(np.max(np.abs(node_grad)))

    start_velocity = np.diff(full, axis=0) / dt
    outcome = minimize_descent(fun, fun_and_grad, start_velocity.ravel(), options)
    values = unpack(outcome.x)
    trajectory = TrajectoryGrid(time, players, values)
    return MinimizeResult(
        trajectory=trajectory,
        action=action(trajectory, spec),
        grad_norm=outcome.grad_norm,
        iterations=outcome.iterations,
        converged=outcome.converged,
        objective_trace=outcome.objective_trace,
    )


# ---------------------------------------------------------------------------
# Curvature and uniqueness probes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvexityProbe:
    eps: np.ndarray
    values: np.ndarray
    second_differences: np.ndarray


def convexity_probe(
    traj: TrajectoryGrid, other: TrajectoryGrid, spec: ProblemSpec, n_eps: int = 9
) -> ConvexityProbe:
    """Sample the total cost along the interpolation and difference it twice.

    Both endpoints must share the terminal slice exactly; the centered second
    differences are all nonnegative (up to round-off) whenever the
    small-horizon condition holds, non-convex interactions included.
    """
    if not traj.same_grid(other):
        raise DimensionError("other", "grids and dimensions must match")
    if not np.array_equal(traj.terminal, other.terminal):
        raise DimensionError("other", "terminal slices must agree exactly")
    if n_eps < 3:
        raise ValueError("need at least 3 interpolation samples")
    eps = np.linspace(0.0, 1.0, n_eps)
    dt_eps = eps[1] - eps[0]
    delta = other.values - traj.values
    values = np.array(
        [
            _total_only(traj.values + e * delta, spec, traj.time.dt)
            for e in eps
        ]
    )
    second = (values[:-2] - 2.0 * values[1:-1] + values[2:]) / (dt_eps * dt_eps)
    return ConvexityProbe(eps=eps, values=values, second_differences=second)


@dataclass(frozen=True)
class UniquenessProbe:
    max_distance: float
    all_converged: bool
    n_starts: int


def uniqueness_probe(
    terminal,
    spec: ProblemSpec,
    steps: int,
    n_starts: int = 10,
    seed: int = 0,
    options: SolverOptions | None = None,
    force: bool = False,
) -> UniquenessProbe:
    """Multi-start check that all descent runs land on the same minimizer.

    The inner solves run at a tightened gradient tolerance (1e-10 by default)
    so the pairwise distances reflect the objective's curvature rather than
    the stopping rule.
    """
    if options is None:
        options = SolverOptions(tol=1e-10)
    terminal = np.asarray(terminal, dtype=float)
    rng = np.random.default_rng(seed)
    time = TimeGrid(horizon=spec.horizon, steps=steps)
    players = PlayerGrid(count=terminal.shape[0])
    base = constant_trajectory(terminal, time, players).values
    scale = 0.5 * (1.0 + float(np.max(np.abs(terminal))))
    ramp = 1.0 - time.nodes() / time.horizon  # vanishes at the pinned terminal

    solutions = []
    all_converged = True
    for _ in range(n_starts):
        noise = rng.standard_normal(base.shape) * scale
        start = base + noise * ramp[:, None, None]
        result = minimize_action(
            terminal, spec, steps, options=options, start=start, force=force
        )
        all_converged &= result.converged
        solutions.append(result.trajectory.values)

    max_distance = 0.0
    for a in range(len(solutions)):
        for b in range(a + 1, len(solutions)):
            max_distance = max(
                max_distance, float(np.max(np.abs(solutions[a] - solutions[b])))
            )
    return UniquenessProbe(
        max_distance=max_distance, all_converged=all_converged, n_starts=n_starts
    )
