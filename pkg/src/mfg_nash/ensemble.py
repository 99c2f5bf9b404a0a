"""Discrete ensembles: time grids, player atoms, trajectory storage.

The player continuum is replaced by N equal-weight atoms at midpoints
(i - 1/2)/N; paths live on a uniform time grid with forward-difference
velocities and left-endpoint quadrature, so the discrete action downstream
has an exact gradient.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.steps < 1:
            raise ValueError("need at least one time step")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)


@dataclass(frozen=True)
class PlayerGrid:
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("need at least one player")

    @property
    def weight(self) -> float:
        return 1.0 / self.count

    def atoms(self) -> np.ndarray:
        return (np.arange(self.count) + 0.5) / self.count


def _frozen_array(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DimensionError(name, "entries must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TrajectoryGrid:
    """All players' paths: values[j, i] in R^d at node j for player i."""

    time: TimeGrid
    players: PlayerGrid
    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.values, "values")
        expected = (self.time.steps + 1, self.players.count)
        if arr.ndim != 3 or arr.shape[:2] != expected:
            raise DimensionError(
                "values",
                f"expected shape ({expected[0]}, {expected[1]}, d), got {arr.shape}",
            )
        object.__setattr__(self, "values", arr)

    @property
    def dimension(self) -> int:
        return self.values.shape[2]

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    def same_grid(self, other: "TrajectoryGrid") -> bool:
        return (
            self.time == other.time
            and self.players == other.players
            and self.dimension == other.dimension
        )


@dataclass(frozen=True)
class SinglePath:
    """One player's path: values[j] in R^d."""

    time: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.values, "values")
        if arr.ndim != 2 or arr.shape[0] != self.time.steps + 1:
            raise DimensionError(
                "values", f"expected shape ({self.time.steps + 1}, d), got {arr.shape}"
            )
        object.__setattr__(self, "values", arr)

    @property
    def dimension(self) -> int:
        return self.values.shape[1]

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    def velocity(self) -> np.ndarray:
        return np.diff(self.values, axis=0) / self.time.dt


def velocity(traj: TrajectoryGrid) -> np.ndarray:
    """Forward-difference velocities, one per interval: (steps, N, d)."""
    return np.diff(traj.values, axis=0) / traj.time.dt


def h_norm(slice_values, players: PlayerGrid) -> float:
    """Weight-averaged Euclidean norm of an ensemble slice."""
    arr = np.asarray(slice_values, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != players.count:
        raise DimensionError("slice_values", f"expected ({players.count}, d), got {arr.shape}")
    return float(np.sqrt(players.weight * np.sum(arr * arr)))


def interpolate(traj: TrajectoryGrid, other: TrajectoryGrid, eps: float) -> TrajectoryGrid:
    """Pointwise convex combination (1 - eps) traj + eps other."""
    if not traj.same_grid(other):
        raise DimensionError("other", "grids and dimensions must match")
    values = (1.0 - eps) * traj.values + eps * other.values
    return TrajectoryGrid(traj.time, traj.players, values)


def constant_trajectory(terminal, time: TimeGrid, players: PlayerGrid) -> TrajectoryGrid:
    """Constant-in-time extension of a terminal slice."""
    slice_values = np.asarray(terminal, dtype=float)
    if slice_values.ndim != 2 or slice_values.shape[0] != players.count:
        raise DimensionError("terminal", f"expected ({players.count}, d), got {slice_values.shape}")
    values = np.broadcast_to(
        slice_values, (time.steps + 1,) + slice_values.shape
    ).copy()
    return TrajectoryGrid(time, players, values)


def poincare_check(path: SinglePath):
    """Both path-size bounds by velocity energy, for a path vanishing at T.

    Returns ((E, E), (bound_path, bound_initial)) with
    E = sum dt |r_dot|^2, bound_path = (2/T^2) sum dt |r|^2 (left endpoints)
    and bound_initial = |r(0)|^2 / T.  Discretely E >= bound_initial exactly
    and E >= bound_path (1 - dt/T), so callers allow an O(dt) slack.
    """
    if np.any(path.values[-1] != 0.0):
        raise DimensionError("path", "terminal value must be exactly zero")
    dt = path.time.dt
    T = path.time.horizon
    vel = path.velocity()
    energy = float(dt * np.sum(vel * vel))
    body = path.values[:-1]
    bound_path = float((2.0 / (T * T)) * dt * np.sum(body * body))
    bound_initial = float(np.sum(path.values[0] ** 2) / T)
    return (energy, energy), (bound_path, bound_initial)


# ---------------------------------------------------------------------------
# CSV round trip
# ---------------------------------------------------------------------------


def save_trajectory_csv(traj: TrajectoryGrid, path: str) -> None:
    """One row per (node, player): t, omega, x_1..x_d at 17 significant digits."""
    nodes = traj.time.nodes()
    atoms = traj.players.atoms()
    d = traj.dimension
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["t", "omega"] + [f"x_{a + 1}" for a in range(d)])
        for j in range(traj.time.steps + 1):
            for i in range(traj.players.count):
                row = [f"{nodes[j]:.17g}", f"{atoms[i]:.17g}"]
                row += [f"{traj.values[j, i, a]:.17g}" for a in range(d)]
                writer.writerow(row)


def load_trajectory_csv(path: str) -> TrajectoryGrid:
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        d = len(header) - 2
        rows = [(float(r[0]), float(r[1]), [float(x) for x in r[2:]]) for r in reader]
    times = sorted({r[0] for r in rows})
    omegas = sorted({r[1] for r in rows})
    steps = len(times) - 1
    count = len(omegas)
    time = TimeGrid(horizon=times[-1], steps=steps)
    players = PlayerGrid(count=count)
    t_index = {t: j for j, t in enumerate(times)}
    w_index = {w: i for i, w in enumerate(omegas)}
    values = np.empty((steps + 1, count, d))
    for t, w, coords in rows:
        values[t_index[t], w_index[w]] = coords
    return TrajectoryGrid(time, players, values)


def save_control_csv(control: np.ndarray, time: TimeGrid, players: PlayerGrid, path: str) -> None:
    """Controls live on interval left endpoints: one row per (interval, player)."""
    nodes = time.nodes()
    atoms = players.atoms()
    arr = np.asarray(control, dtype=float)
    d = arr.shape[2]
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["t", "omega"] + [f"a_{a + 1}" for a in range(d)])
        for j in range(time.steps):
            for i in range(players.count):
                row = [f"{nodes[j]:.17g}", f"{atoms[i]:.17g}"]
                row += [f"{arr[j, i, a]:.17g}" for a in range(d)]
                writer.writerow(row)
