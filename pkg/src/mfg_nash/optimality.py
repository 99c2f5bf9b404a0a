"""First-order optimality verification.

All residuals are diagnostics over a given trajectory: the collective
Euler-Lagrange residual, the free-initial-point boundary residual, the
momentum-form restatement, and the single-player residual against a frozen
collective field.  The backward difference of the momentum rides on the same
staggered layout as the forward-difference velocities, so the interior
residual is the minimizer's stationarity condition rescaled by dt, not an
independent discretization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ensemble import SinglePath, TrajectoryGrid, velocity
from .errors import DimensionError
from .model import ProblemSpec, velocity_from_momentum
from .reports import ResidualReport, build_report
from .variational import external_field, interaction_field


@dataclass(frozen=True)
class HamiltonianState:
    """Trajectory plus its interval momenta grad_v L(position, velocity)."""

    trajectory: TrajectoryGrid
    momentum: np.ndarray


def to_hamiltonian(traj: TrajectoryGrid, spec: ProblemSpec) -> HamiltonianState:
    """Build the momentum grid; for the kinetic family it equals the velocity grid."""
    del spec  # grad_v L = v for the kinetic-plus-position family
    return HamiltonianState(trajectory=traj, momentum=velocity(traj))


def el_residual_collective(traj: TrajectoryGrid, spec: ProblemSpec) -> ResidualReport:
    """Interior-node residual of the coupled Euler-Lagrange system.

    residual[j] = (Z_j - Z_{j-1})/dt - grad_q L - mean interaction gradient,
    evaluated at interior nodes j = 1..M-1 with interval quantities on the
    left-endpoint layout.
    """
    if traj.time.steps < 2:
        raise DimensionError("traj", "need at least 2 time steps for interior residuals")
    dt = traj.time.dt
    vel = velocity(traj)
    momentum = vel  # grad_v L = v
    interior = traj.values[1:-1]
    momentum_rate = (momentum[1:] - momentum[:-1]) / dt
    grad_q = spec.lagrangian.position_term.gradient(interior)
    field = interaction_field(spec.interaction, interior)
    return build_report("el_collective", momentum_rate - grad_q - field)


def boundary_residual(traj: TrajectoryGrid, spec: ProblemSpec) -> ResidualReport:
    """Free-initial-point condition: mean initial field minus initial momentum."""
    vel = velocity(traj)
    field = interaction_field(spec.initial_interaction, traj.values[0])
    return build_report("el_boundary", field - vel[0])


def hamiltonian_residual(state: HamiltonianState, spec: ProblemSpec) -> ResidualReport:
    """Momentum-form residual; algebraically identical to the EL form here.

    residual[j] = (Z_j - Z_{j-1})/dt + grad_q H(position, Z_j) - mean field.
    """
    traj = state.trajectory
    if traj.time.steps < 2:
        raise DimensionError("state", "need at least 2 time steps for interior residuals")
    dt = traj.time.dt
    momentum = state.momentum
    interior = traj.values[1:-1]
    momentum_rate = (momentum[1:] - momentum[:-1]) / dt
    # grad_q H = -grad g, so -grad_q H equals grad_q L exactly
    grad_q_h = -spec.lagrangian.position_term.gradient(interior)
    field = interaction_field(spec.interaction, interior)
    return build_report("hamiltonian", momentum_rate + grad_q_h - field)


def reconstruction_gap(state: HamiltonianState, spec: ProblemSpec) -> float:
    """Sup gap of the velocity reconstruction v = grad_p H(position, Z)."""
    vel = velocity(state.trajectory)
    rebuilt = velocity_from_momentum(spec.lagrangian, state.trajectory.values[:-1], state.momentum)
    return float(np.max(np.abs(vel - rebuilt))) if vel.size else 0.0


@dataclass(frozen=True)
class IndividualResiduals:
    interior: ResidualReport
    boundary: ResidualReport

    def to_dict(self) -> dict:
        return {"interior": self.interior.to_dict(), "boundary": self.boundary.to_dict()}


def el_residual_individual(
    path: SinglePath, frozen: TrajectoryGrid, spec: ProblemSpec
) -> IndividualResiduals:
    """Single-player residuals against a frozen collective field.

    The interior part matches the collective formula with the interaction
    averaged over the frozen ensemble at full weight; the boundary part is
    the initial-field condition, reported separately.
    """
    if path.time.steps > frozen.time.steps:
        raise DimensionError("frozen", "frozen trajectory must cover the path's horizon")
    if abs(path.time.dt - frozen.time.dt) > 1e-12 * frozen.time.horizon:
        raise DimensionError("frozen", "path and frozen grids must share the time step")
    if path.dimension != frozen.dimension:
        raise DimensionError("path", "dimension mismatch with the frozen trajectory")
    dt = path.time.dt
    steps = path.time.steps
    vel = path.velocity()
    momentum = vel
    anchors = frozen.values[:steps + 1]

    if steps >= 2:
        interior = path.values[1:-1]
        momentum_rate = (momentum[1:] - momentum[:-1]) / dt
        grad_q = spec.lagrangian.position_term.gradient(interior)
        field = external_field(spec.interaction, interior, anchors[1:-1])
        interior_report = build_report("el_individual", momentum_rate - grad_q - field)
    else:
        interior_report = build_report("el_individual", np.zeros((0, path.dimension)))

    initial_field = external_field(
        spec.initial_interaction, path.values[0], anchors[0]
    )
    boundary_report = build_report("el_individual_boundary", initial_field - momentum[0])
    return IndividualResiduals(interior=interior_report, boundary=boundary_report)
