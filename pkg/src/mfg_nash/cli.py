"""Config-driven command line: check | solve | sweep.

Configs are TOML files with a fixed section/key schema (JSON with the same
nesting is accepted as an alternative encoding).  Unknown sections or keys
are hard errors and every validation problem is reported at once.  Exit
codes: 0 pass, 2 usage or config error, 3 admissibility refused, 4
verification failure, 5 solver non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time as time_module
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .ensemble import save_control_csv, save_trajectory_csv
from .equilibrium import CheckSettings, solve_equilibrium
from .errors import ConditionNotMetError, ConfigError
from .model import (
    COSINE,
    QUADRATIC,
    ZERO,
    PotentialSpec,
    ProblemSpec,
    check_small_time_condition,
    cosine_potential,
    kinetic_lagrangian,
    quadratic_potential,
    zero_potential,
)
from .variational import SolverOptions

EXIT_PASS = 0
EXIT_USAGE = 2
EXIT_CONDITION = 3
EXIT_VERIFICATION = 4
EXIT_NO_CONVERGENCE = 5

_POTENTIAL_KINDS = (ZERO, QUADRATIC, COSINE)
_TERMINAL_KINDS = ("inline", "uniform", "gaussian", "csv")

_SCHEMA = {
    "problem": {
        "dimension": int,
        "horizon": float,
        "position": str,
        "position_coeff": float,
        "position_wave": list,
        "interaction": str,
        "interaction_coeff": float,
        "interaction_wave": list,
        "initial": str,
        "initial_coeff": float,
        "initial_wave": list,
    },
    "grid": {"players": int, "steps": int},
    "terminal": {
        "kind": str,
        "values": list,
        "low": float,
        "high": float,
        "scale": float,
        "path": str,
    },
    "solver": {
        "tol": float,
        "max_iter": int,
        "armijo_c": float,
        "armijo_shrink": float,
    },
    "checks": {
        "el": bool,
        "hje": bool,
        "nash": bool,
        "uniqueness": bool,
        "picard": bool,
        "nash_samples": int,
        "nash_magnitude": float,
        "uniqueness_starts": int,
        "uniqueness_tol": float,
        "picard_lattice": int,
        "picard_tol": float,
        "picard_max_iter": int,
        "picard_distance_tol": float,
        "el_tol_scale": float,
        "hje_tol_scale": float,
        "value_gradient_tol": float,
    },
    "run": {"seed": int, "force": bool, "output_dir": str},
}

_REQUIRED = {
    "problem": ("dimension", "horizon"),
    "grid": ("players", "steps"),
    "terminal": ("kind",),
}


@dataclass
class RunConfig:
    raw: dict
    path: str

    def section(self, name: str) -> dict:
        return self.raw.get(name, {})

    def get(self, section: str, key: str, default=None):
        return self.section(section).get(key, default)


def _coerce(value, kind):
    if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if kind is bool and isinstance(value, bool):
        return value
    if kind is str and isinstance(value, str):
        return value
    if kind is list and isinstance(value, list):
        return value
    raise TypeError


def parse_config(path: str | Path) -> RunConfig:
    """Load and validate a config file, reporting every problem found."""
    path = Path(path)
    errors: list[str] = []
    if not path.is_file():
        raise ConfigError([f"config file not found: {path}"])
    text = path.read_bytes()
    if path.suffix == ".json" or text.lstrip()[:1] == b"{":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"invalid JSON: {exc}"]) from exc
    else:
        try:
            raw = tomllib.loads(text.decode())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError([f"invalid TOML: {exc}"]) from exc

    if not isinstance(raw, dict):
        raise ConfigError(["config root must be a table of sections"])

    for section, body in raw.items():
        if section not in _SCHEMA:
            errors.append(f"unknown section [{section}]")
            continue
        if not isinstance(body, dict):
            errors.append(f"section [{section}] must be a table")
            continue
        for key, value in body.items():
            if key not in _SCHEMA[section]:
                errors.append(f"unknown key {section}.{key}")
                continue
            try:
                body[key] = _coerce(value, _SCHEMA[section][key])
            except TypeError:
                errors.append(
                    f"{section}.{key}: expected {_SCHEMA[section][key].__name__},"
                    f" got {type(value).__name__}"
                )

    for section, keys in _REQUIRED.items():
        for key in keys:
            if key not in raw.get(section, {}):
                errors.append(f"missing required key {section}.{key}")

    config = RunConfig(raw=raw, path=str(path))
    if not errors:
        errors.extend(_validate_semantics(config))
    if errors:
        raise ConfigError(errors)
    return config


def _validate_semantics(config: RunConfig) -> list[str]:
    errors = []
    problem = config.section("problem")
    if problem.get("dimension", 1) < 1:
        errors.append("problem.dimension must be at least 1")
    if problem.get("horizon", 1.0) <= 0:
        errors.append("problem.horizon must be positive")
    for role in ("position", "interaction", "initial"):
        kind = problem.get(role, "zero")
        if kind not in _POTENTIAL_KINDS:
            errors.append(f"problem.{role}: unknown potential kind {kind!r}")
        elif kind == "cosine":
            wave = problem.get(f"{role}_wave")
            if wave is None:
                errors.append(f"problem.{role}_wave is required for cosine potentials")
            elif len(wave) != problem.get("dimension", 1):
                errors.append(f"problem.{role}_wave must have length problem.dimension")
    grid = config.section("grid")
    if grid.get("players", 1) < 1:
        errors.append("grid.players must be at least 1")
    if grid.get("steps", 1) < 2:
        errors.append("grid.steps must be at least 2")
    terminal = config.section("terminal")
    kind = terminal.get("kind")
    if kind is not None and kind not in _TERMINAL_KINDS:
        errors.append(f"terminal.kind must be one of {_TERMINAL_KINDS}")
    if kind == "inline" and "values" not in terminal:
        errors.append("terminal.values is required for inline ensembles")
    if kind == "csv":
        raw_path = terminal.get("path")
        if raw_path is None:
            errors.append("terminal.path is required for csv ensembles")
        else:
            resolved = Path(config.path).parent / raw_path
            if not resolved.is_file():
                errors.append(f"terminal.path does not exist: {resolved}")
    return errors


def _build_potential(problem: dict, role: str) -> PotentialSpec:
    kind = problem.get(role, "zero")
    coeff = problem.get(f"{role}_coeff", 0.0)
    if kind == ZERO:
        return zero_potential()
    if kind == QUADRATIC:
        return quadratic_potential(coeff)
    return cosine_potential(coeff, problem[f"{role}_wave"])


def build_problem(config: RunConfig) -> ProblemSpec:
    problem = config.section("problem")
    return ProblemSpec(
        dimension=problem["dimension"],
        horizon=problem["horizon"],
        lagrangian=kinetic_lagrangian(_build_potential(problem, "position")),
        interaction=_build_potential(problem, "interaction"),
        initial_interaction=_build_potential(problem, "initial"),
    )


def build_terminal(config: RunConfig, seed: int) -> np.ndarray:
    terminal = config.section("terminal")
    grid = config.section("grid")
    count = grid["players"]
    dim = config.section("problem")["dimension"]
    kind = terminal["kind"]
    if kind == "inline":
        values = np.asarray(terminal["values"], dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape != (count, dim):
            raise ConfigError(
                [f"terminal.values must have shape ({count}, {dim}), got {values.shape}"]
            )
        return values
    if kind == "uniform":
        low = terminal.get("low", -1.0)
        high = terminal.get("high", 1.0)
        atoms = (np.arange(count) + 0.5) / count
        return np.tile((low + (high - low) * atoms)[:, None], (1, dim))
    if kind == "gaussian":
        scale = terminal.get("scale", 1.0)
        rng = np.random.default_rng(seed)
        return scale * rng.standard_normal((count, dim))
    resolved = Path(config.path).parent / terminal["path"]
    values = np.loadtxt(resolved, delimiter=",", ndmin=2)
    if values.shape != (count, dim):
        raise ConfigError(
            [f"terminal csv must have shape ({count}, {dim}), got {values.shape}"]
        )
    return values


def build_solver_options(config: RunConfig) -> SolverOptions:
    solver = config.section("solver")
    return SolverOptions(
        tol=solver.get("tol", 1e-9),
        max_iter=solver.get("max_iter", 50_000),
        armijo_c=solver.get("armijo_c", 1e-4),
        armijo_shrink=solver.get("armijo_shrink", 0.5),
        keep_trace=False,
    )


def build_check_settings(config: RunConfig) -> CheckSettings:
    checks = config.section("checks")
    settings = CheckSettings()
    for key, value in checks.items():
        setattr(settings, key, value)
    return settings


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _emit(quiet: bool, message: str) -> None:
    if not quiet:
        print(message)


def cmd_check(config: RunConfig, quiet: bool = False) -> int:
    spec = build_problem(config)
    report = check_small_time_condition(spec)
    _emit(quiet, f"lhs                = {report.lhs:.17g}")
    _emit(quiet, f"rhs                = {report.rhs:.17g}")
    _emit(quiet, f"margin             = {report.margin:.17g}")
    _emit(quiet, f"uniqueness_margin  = {report.uniqueness_margin:.17g}")
    _emit(quiet, "holds" if report.holds else "violated")
    return EXIT_PASS if report.holds else EXIT_CONDITION


def cmd_solve(
    config: RunConfig,
    output_dir: str | None = None,
    seed: int | None = None,
    force: bool = False,
    quiet: bool = False,
) -> int:
    run = config.section("run")
    seed = run.get("seed", 0) if seed is None else seed
    force = force or run.get("force", False)
    out = Path(output_dir or run.get("output_dir", "."))

    spec = build_problem(config)
    condition = check_small_time_condition(spec)
    if not condition.holds and not force:
        _emit(quiet, "admissibility condition violated; rerun with --force to override")
        _emit(quiet, f"margin = {condition.margin:.17g}")
        return EXIT_CONDITION

    terminal = build_terminal(config, seed)
    options = build_solver_options(config)
    settings = build_check_settings(config)

    start = time_module.perf_counter()
    bundle = solve_equilibrium(
        spec,
        terminal,
        config.section("grid")["steps"],
        options=options,
        settings=settings,
        seed=seed,
        force=True,
    )
    elapsed = time_module.perf_counter() - start

    out.mkdir(parents=True, exist_ok=True)
    save_trajectory_csv(bundle.result.trajectory, str(out / "trajectory.csv"))
    save_control_csv(
        bundle.control.control,
        bundle.result.trajectory.time,
        bundle.result.trajectory.players,
        str(out / "control.csv"),
    )
    report = {
        "config": config.raw,
        "seed": seed,
        "force": force,
        **bundle.to_dict(),
        "wall_time": {"total": elapsed, **bundle.timings},
    }
    with open(out / "report.json", "w") as handle:
        json.dump(report, handle, indent=2, sort_keys=True)
        handle.write("\n")

    _emit(quiet, f"action total = {bundle.result.action.total:.12g}")
    _emit(quiet, f"pass = {bundle.passed}")
    if not bundle.result.converged:
        return EXIT_NO_CONVERGENCE
    return EXIT_PASS if bundle.passed else EXIT_VERIFICATION


_SWEEP_PARAMETERS = ("T", "beta", "N", "M")


def cmd_sweep(
    config: RunConfig,
    parameter: str,
    values: list[float],
    output_dir: str | None = None,
    seed: int | None = None,
    force: bool = False,
    quiet: bool = False,
) -> int:
    if parameter not in _SWEEP_PARAMETERS:
        _emit(quiet, f"unknown sweep parameter {parameter!r}")
        return EXIT_USAGE
    if not values:
        _emit(quiet, "no sweep values given")
        return EXIT_USAGE
    if any(not np.isfinite(v) or v <= 0 for v in values):
        _emit(quiet, "sweep values must be finite and positive")
        return EXIT_USAGE
    if parameter == "beta" and config.get("problem", "interaction", "zero") == "zero":
        _emit(quiet, "beta sweep needs a non-zero interaction potential")
        return EXIT_USAGE
    if parameter == "N" and config.get("terminal", "kind") == "inline":
        _emit(quiet, "player-count sweep needs a generated terminal ensemble")
        return EXIT_USAGE

    run = config.section("run")
    seed = run.get("seed", 0) if seed is None else seed
    force = force or run.get("force", False)
    out = Path(output_dir or run.get("output_dir", "."))
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for value in values:
        raw = json.loads(json.dumps(config.raw))  # deep copy of plain data
        if parameter == "T":
            raw["problem"]["horizon"] = float(value)
        elif parameter == "beta":
            raw["problem"]["interaction_coeff"] = float(value)
        elif parameter == "N":
            raw["grid"]["players"] = int(value)
        else:
            raw["grid"]["steps"] = int(value)
        sub = RunConfig(raw=raw, path=config.path)
        spec = build_problem(sub)
        condition = check_small_time_condition(spec)
        row = {
            "value": value,
            "margin": condition.margin,
            "min_nash_gap": "",
            "el_sup": "",
            "boundary_sup": "",
            "hje_residual": "",
            "passed": "",
            "note": "",
        }
        if not condition.holds and not force:
            row["note"] = "condition_refused"
        else:
            try:
                bundle = solve_equilibrium(
                    spec,
                    build_terminal(sub, seed),
                    raw["grid"]["steps"],
                    options=build_solver_options(sub),
                    settings=build_check_settings(sub),
                    seed=seed,
                    force=True,
                )
                checks = bundle.checks
                row["min_nash_gap"] = checks.get("nash", {}).get("min_gap", "")
                row["el_sup"] = checks.get("residuals", {}).get("el_collective", {}).get("sup", "")
                row["boundary_sup"] = checks.get("residuals", {}).get("el_boundary", {}).get("sup", "")
                row["hje_residual"] = checks.get("hje", {}).get("hje_collective", {}).get("residual", "")
                row["passed"] = bundle.passed
                if not bundle.result.converged:
                    row["note"] = "no_convergence"
            except Exception as exc:  # record, never abort the sweep
                row["note"] = f"error: {exc}"
        rows.append(row)
        _emit(quiet, f"{parameter}={value}: margin={row['margin']:.6g} note={row['note']}")

    with open(out / "sweep.csv", "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    return EXIT_PASS


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfg-nash",
        description="Finite-player variational game solver with equilibrium verification",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("check", "solve", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to a TOML or JSON config")
        p.add_argument("--quiet", action="store_true")
        if name in ("solve", "sweep"):
            p.add_argument("--force", action="store_true", help="override the admissibility check")
            p.add_argument("--output", default=None, help="output directory")
            p.add_argument("--seed", type=int, default=None)
        if name == "sweep":
            p.add_argument("--parameter", required=True, choices=_SWEEP_PARAMETERS)
            p.add_argument("--values", required=True, help="comma-separated values")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0

    try:
        config = parse_config(args.config)
    except ConfigError as exc:
        if not args.quiet:
            for message in exc.messages:
                print(f"config error: {message}", file=sys.stderr)
        return EXIT_USAGE

    try:
        if args.command == "check":
            return cmd_check(config, quiet=args.quiet)
        if args.command == "solve":
            return cmd_solve(
                config,
                output_dir=args.output,
                seed=args.seed,
                force=args.force,
                quiet=args.quiet,
            )
        values = [float(v) for v in args.values.split(",") if v.strip()]
        return cmd_sweep(
            config,
            parameter=args.parameter,
            values=values,
            output_dir=args.output,
            seed=args.seed,
            force=args.force,
            quiet=args.quiet,
        )
    except ConfigError as exc:
        if not args.quiet:
            for message in exc.messages:
                print(f"config error: {message}", file=sys.stderr)
        return EXIT_USAGE
    except ConditionNotMetError as exc:
        if not args.quiet:
            print(str(exc), file=sys.stderr)
        return EXIT_CONDITION


if __name__ == "__main__":
    raise SystemExit(main())
