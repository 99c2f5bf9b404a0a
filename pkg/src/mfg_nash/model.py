"""Analytic ingredients of the game.

Defines the kinetic-plus-position Lagrangian family together with its
closed-form Hamiltonian dual, the even pairwise interaction potentials with
exact curvature bounds, a brute-force Legendre oracle, and the small-horizon
admissibility inequality that licenses the convex solve downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, GridTooSmallError
from .reports import ResidualReport, build_report

ZERO = "zero"
QUADRATIC = "quadratic"
COSINE = "cosine"
_KINDS = (ZERO, QUADRATIC, COSINE)

KINETIC_PLUS_POSITION = "kinetic_plus_position"

#: Radius of the centered ball on which sampled gradient bounds are quoted.
PROBE_RADIUS = 10.0


# ---------------------------------------------------------------------------
# Potentials
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PotentialSpec:
    """Even potential of a pairwise displacement, with analytic Hessian bounds.

    kinds:
      ``zero``       z -> 0
      ``quadratic``  z -> (coeff / 2) |z|^2
      ``cosine``     z -> coeff * cos(<wave, z>)           (coeff >= 0)

    The curvature constants ``hessian_lower`` (smallest Hessian eigenvalue
    over all displacements) and ``hessian_sup`` (sup of the Hessian operator
    norm) are stored analytically per family; nothing is ever estimated
    numerically, so the admissibility arithmetic downstream stays exact.
    """

    kind: str
    coeff: float = 0.0
    wave: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == COSINE:
            if self.coeff < 0:
                raise ValueError("cosine potential needs a nonnegative coefficient")
            if len(self.wave) == 0:
                raise ValueError("cosine potential needs a wave vector")
        if not np.all(np.isfinite(self.coeff)):
            raise ValueError("potential coefficient must be finite")

    # -- analytic bounds ----------------------------------------------------

    @property
    def wave_array(self) -> np.ndarray:
        return np.asarray(self.wave, dtype=float)

    @property
    def hessian_lower(self) -> float:
        """Exact lower bound c with c*I <= Hessian everywhere."""
        if self.kind == ZERO:
            return 0.0
        if self.kind == QUADRATIC:
            return self.coeff
        return -self.coeff * float(self.wave_array @ self.wave_array)

    @property
    def hessian_sup(self) -> float:
        """Exact sup of the Hessian operator norm."""
        if self.kind == ZERO:
            return 0.0
        if self.kind == QUADRATIC:
            return abs(self.coeff)
        return self.coeff * float(self.wave_array @ self.wave_array)

    @property
    def assumption_compliant(self) -> bool:
        """Whether the potential has a globally bounded gradient."""
        return not (self.kind == QUADRATIC and self.coeff != 0.0)

    @property
    def min_value(self) -> float:
        if self.kind == ZERO:
            return 0.0
        if self.kind == QUADRATIC:
            return 0.0 if self.coeff >= 0 else -np.inf
        return -self.coeff

    def gradient_bound(self, radius: float = PROBE_RADIUS) -> float:
        """Bound on |grad| over the centered ball of the given radius."""
        if self.kind == ZERO:
            return 0.0
        if self.kind == QUADRATIC:
            return abs(self.coeff) * radius
        return self.coeff * float(np.linalg.norm(self.wave_array))

    # -- evaluation (vectorized over leading axes) ---------------------------

    def value(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.kind == ZERO:
            return np.zeros(z.shape[:-1])
        if self.kind == QUADRATIC:
            return 0.5 * self.coeff * np.sum(z * z, axis=-1)
        return self.coeff * np.cos(z @ self.wave_array)

    def gradient(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.kind == ZERO:
            return np.zeros_like(z)
        if self.kind == QUADRATIC:
            return self.coeff * z
        phase = z @ self.wave_array
        return -self.coeff * np.sin(phase)[..., None] * self.wave_array


def zero_potential() -> PotentialSpec:
    return PotentialSpec(ZERO)


def quadratic_potential(coeff: float) -> PotentialSpec:
    return PotentialSpec(QUADRATIC, coeff=float(coeff))


def cosine_potential(coeff: float, wave) -> PotentialSpec:
    wave = np.atleast_1d(np.asarray(wave, dtype=float))
    return PotentialSpec(COSINE, coeff=float(coeff), wave=tuple(wave))


# ---------------------------------------------------------------------------
# Lagrangian / Hamiltonian family
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LagrangianSpec:
    """Running cost L(q, v) = 0.5 |v|^2 + g(q) and its closed-form dual.

    The family keeps the velocity Hessian equal to the identity, so the
    interpolation convexity modulus is exactly 1 and the Legendre transform
    in v inverts in closed form.  ``value_offset`` records the vertical shift
    that would make the position term nonnegative (the shift changes no
    gradient, minimizer, or residual, so evaluation stays unshifted);
    ``coercivity`` refers to the shifted cost: c |v|^2 <= L + offset with
    c = 1/2.  ``position_gradient_bound`` is the sampled-bound constant for
    |grad_q L| quoted on the PROBE_RADIUS box.
    """

    position_term: PotentialSpec
    kind: str = KINETIC_PLUS_POSITION
    convexity_modulus: float = 1.0
    coercivity: float = 0.5
    value_offset: float = field(init=False)
    position_gradient_bound: float = field(init=False)

    def __post_init__(self):
        if self.kind != KINETIC_PLUS_POSITION:
            raise ValueError(f"unsupported Lagrangian kind {self.kind!r}")
        if self.convexity_modulus != 1.0:
            raise ValueError("the kinetic family has convexity modulus exactly 1")
        if not 0.0 < self.coercivity <= 0.5:
            raise ValueError("coercivity constant must lie in (0, 1/2]")
        offset = max(0.0, -self.position_term.min_value)
        object.__setattr__(self, "value_offset", offset)
        object.__setattr__(
            self, "position_gradient_bound", self.position_term.gradient_bound()
        )


def kinetic_lagrangian(position_term: PotentialSpec | None = None) -> LagrangianSpec:
    return LagrangianSpec(position_term or zero_potential())


def _check_point(name: str, x, dimension: int | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise DimensionError(name, f"expected a flat vector, got shape {arr.shape}")
    if dimension is not None and arr.shape[0] != dimension:
        raise DimensionError(name, f"expected length {dimension}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError(name, "entries must be finite")
    return arr


def eval_lagrangian(spec: LagrangianSpec, q, v):
    """Evaluate L with its exact gradients.

    Returns ``(value, grad_q, grad_v)`` where grad_v = v for this family.
    """
    q = _check_point("q", q)
    v = _check_point("v", v, dimension=q.shape[0])
    value = 0.5 * float(v @ v) + float(spec.position_term.value(q))
    return value, spec.position_term.gradient(q), v.copy()


def eval_hamiltonian(spec: LagrangianSpec, q, p):
    """Evaluate the closed-form dual H(q, p) = 0.5 |p|^2 - g(q)."""
    q = _check_point("q", q)
    p = _check_point("p", p, dimension=q.shape[0])
    value = 0.5 * float(p @ p) - float(spec.position_term.value(q))
    return value, -spec.position_term.gradient(q), p.copy()


def velocity_from_momentum(spec: LagrangianSpec, q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """grad_p H for this family, vectorized over leading axes."""
    del spec, q
    return np.asarray(p, dtype=float)


def legendre_oracle(spec: LagrangianSpec, q, p, v_axis) -> float:
    """Brute-force Legendre transform sup_v { <v, p> - L(q, v) } over a lattice.

    ``v_axis`` is a 1-D grid replicated along every coordinate.  The maximizer
    must land strictly inside the lattice; hitting the boundary raises
    GridTooSmallError because the sup was not bracketed.  The scan is
    separable for this family (the conjugand splits across coordinates), but
    the full product lattice is evaluated anyway: the oracle's job is to stay
    independent of the closed form it checks.
    """
    q = _check_point("q", q)
    p = _check_point("p", p, dimension=q.shape[0])
    axis = np.asarray(v_axis, dtype=float)
    if axis.ndim != 1 or axis.size < 3:
        raise DimensionError("v_axis", "need a 1-D grid with at least 3 points")
    d = q.shape[0]
    position_value = float(spec.position_term.value(q))
    size = axis.size
    total = size**d
    chunk = max(1, min(total, 1_000_000 // max(1, d)))

    best = -np.inf
    best_flat = -1
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total))
        block = flat
        v = np.empty((flat.size, d))
        for a in range(d - 1, -1, -1):
            v[:, a] = axis[block % size]
            block = block // size
        candidates = v @ p - 0.5 * np.sum(v * v, axis=1) - position_value
        arg = int(np.argmax(candidates))
        if candidates[arg] > best:
            best = float(candidates[arg])
            best_flat = int(flat[arg])
    indices = []
    block = best_flat
    for _ in range(d):
        indices.append(block % size)
        block = block // size
    if any(i == 0 or i == size - 1 for i in indices):
        raise GridTooSmallError(
            "grid too small: Legendre maximizer landed on the lattice boundary"
        )
    return best


# ---------------------------------------------------------------------------
# Problem definition and admissibility
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProblemSpec:
    """Full game definition: dimension, horizon, running cost, interactions."""

    dimension: int
    horizon: float
    lagrangian: LagrangianSpec
    interaction: PotentialSpec
    initial_interaction: PotentialSpec

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be at least 1")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        for name, pot in (
            ("interaction", self.interaction),
            ("initial_interaction", self.initial_interaction),
            ("position_term", self.lagrangian.position_term),
        ):
            if pot.kind == COSINE and len(pot.wave) != self.dimension:
                raise DimensionError(name, f"wave vector must have length {self.dimension}")


@dataclass(frozen=True)
class SmallTimeReport:
    """Outcome of the admissibility inequality.

    ``lhs`` is T^2 (c_neg + 2 sup) for the running interaction plus
    T (c_neg + 2 sup) for the initial one; ``rhs`` is half the convexity
    modulus; the check holds when ``margin = rhs - lhs`` is positive.
    ``uniqueness_margin`` reports the alternative constant used by the
    uniqueness argument (modulus - T^2/2 (c_neg + sup) - T (c_neg + sup)),
    which differs from the displayed inequality by factors of two; both are
    surfaced rather than reconciled.
    """

    holds: bool
    lhs: float
    rhs: float
    margin: float
    uniqueness_margin: float

    def to_dict(self) -> dict:
        return {
            "holds": self.holds,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "margin": self.margin,
            "uniqueness_margin": self.uniqueness_margin,
        }


def _negative_part(x: float) -> float:
    return max(-x, 0.0)


def check_small_time_condition(
    spec: ProblemSpec, horizon: float | None = None
) -> SmallTimeReport:
    """Evaluate the admissibility inequality with exact constant arithmetic."""
    T = spec.horizon if horizon is None else float(horizon)
    phi, psi = spec.interaction, spec.initial_interaction
    running = _negative_part(phi.hessian_lower) + 2.0 * phi.hessian_sup
    initial = _negative_part(psi.hessian_lower) + 2.0 * psi.hessian_sup
    lhs = T * T * running + T * initial
    rhs = 0.5 * spec.lagrangian.convexity_modulus
    uniqueness_margin = (
        spec.lagrangian.convexity_modulus
        - 0.5 * T * T * (_negative_part(phi.hessian_lower) + phi.hessian_sup)
        - T * (_negative_part(psi.hessian_lower) + psi.hessian_sup)
    )
    margin = rhs - lhs
    return SmallTimeReport(
        holds=margin > 0.0,
        lhs=lhs,
        rhs=rhs,
        margin=margin,
        uniqueness_margin=uniqueness_margin,
    )


# ---------------------------------------------------------------------------
# Duality probes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DualityProbe:
    """A (position, velocity, momentum) triple for convex-duality checks."""

    position: np.ndarray
    velocity: np.ndarray
    momentum: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "position", _check_point("position", self.position))
        object.__setattr__(
            self,
            "velocity",
            _check_point("velocity", self.velocity, self.position.shape[0]),
        )
        if self.momentum is not None:
            object.__setattr__(
                self,
                "momentum",
                _check_point("momentum", self.momentum, self.position.shape[0]),
            )


def fenchel_gap(spec: LagrangianSpec, q, v, p) -> float:
    """L(q, v) + H(q, p) - <v, p>; nonnegative, zero exactly at p = grad_v L."""
    value_l, _, _ = eval_lagrangian(spec, q, v)
    value_h, _, _ = eval_hamiltonian(spec, q, p)
    return value_l + value_h - float(np.asarray(v, dtype=float) @ np.asarray(p, dtype=float))


def duality_identities(probe: DualityProbe, spec: LagrangianSpec) -> ResidualReport:
    """Check the three conjugacy identities at p = grad_v L(q, v).

    Reports the Fenchel gap |L + H - <v, p>|, the gradient cancellation
    |grad_q L + grad_q H|, and the velocity reconstruction |v - grad_p H|.
    All three vanish to round-off for this closed-form family.
    """
    q, v = probe.position, probe.velocity
    _, grad_q_l, grad_v_l = eval_lagrangian(spec, q, v)
    p = grad_v_l
    _, grad_q_h, grad_p_h = eval_hamiltonian(spec, q, p)
    residuals = np.array(
        [
            abs(fenchel_gap(spec, q, v, p)),
            float(np.linalg.norm(grad_q_l + grad_q_h)),
            float(np.linalg.norm(v - grad_p_h)),
        ]
    )
    return build_report("duality", residuals)
