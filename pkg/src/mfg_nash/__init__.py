"""Finite-player variational game solver with equilibrium verification.

Minimizes the collective action of an interacting-player ensemble with
pinned terminal positions, then verifies the equilibrium structure
numerically: Euler-Lagrange and boundary residuals, Hamiltonian duality,
Hamilton-Jacobi residuals for the collective and individual value
functions, unilateral-deviation optimality, multi-start uniqueness, and the
backward fixed point of the trajectory field.
"""

from .ensemble import (
    PlayerGrid,
    SinglePath,
    TimeGrid,
    TrajectoryGrid,
    constant_trajectory,
    h_norm,
    interpolate,
    load_trajectory_csv,
    poincare_check,
    save_trajectory_csv,
    velocity,
)
from .equilibrium import (
    CheckSettings,
    CollectiveControl,
    DeviationScenario,
    EquilibriumBundle,
    GradientField,
    NashTestResult,
    PicardTrace,
    build_gradient_field,
    extract_control,
    individual_cost,
    integrate_control,
    nash_deviation_test,
    picard_solve,
    solve_equilibrium,
)
from .errors import (
    ConditionNotMetError,
    ConfigError,
    DimensionError,
    GridTooSmallError,
)
from .model import (
    DualityProbe,
    LagrangianSpec,
    PotentialSpec,
    ProblemSpec,
    SmallTimeReport,
    check_small_time_condition,
    cosine_potential,
    duality_identities,
    eval_hamiltonian,
    eval_lagrangian,
    fenchel_gap,
    kinetic_lagrangian,
    legendre_oracle,
    quadratic_potential,
    zero_potential,
)
from .optimality import (
    HamiltonianState,
    IndividualResiduals,
    boundary_residual,
    el_residual_collective,
    el_residual_individual,
    hamiltonian_residual,
    to_hamiltonian,
)
from .reports import ResidualReport
from .value import (
    HJEReport,
    ValueGradient,
    ValueProbe,
    collective_curvature_bound,
    grad_value_collective,
    grad_value_individual,
    hje_residual_collective,
    hje_residual_individual,
    individual_curvature_bound,
    value_collective,
    value_individual,
)
from .variational import (
    ActionBreakdown,
    ConvexityProbe,
    MinimizeResult,
    SolverOptions,
    UniquenessProbe,
    action,
    action_gradient,
    convexity_probe,
    initial_cost,
    minimize_action,
    uniqueness_probe,
)

__version__ = "0.1.0"
