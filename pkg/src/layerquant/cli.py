"""Command line front end.

Subcommands:

* ``gen``: write a synthetic problem file (Gaussian weights and
  activations, optionally with scaled outlier columns).
* ``solve``: run solvers on problem files and write a JSONL report.
* ``compare``: run all solvers, report per-layer objectives relative
  to a baseline solver (in percent) plus per-solver medians.
* ``oracle``: exhaustively solve a small instance and report each
  solver's objective ratio to the optimum.

Reports are line-delimited JSON with sorted keys and a ``schema``
field on every record, so reruns with the same seed and config are
byte-identical once timing fields are stripped (``strip_timing``).
Flags mirror ``RunConfig`` fields one-to-one; the defaults reproduce
the reference hyperparameters (300 iterations, penalty 0.1 growing by
1.1, trace-scaled damping 0.01, error-minimizing clip search over 100
ratios down to 0.8).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .grid import GRANULARITIES, GridSpec, fit_minmax, fit_mse_clip
from .oracle import DEFAULT_BUDGET, brute_force_optimal
from .problem import (
    DAMP_MODES,
    DEFAULT_DAMP_FACTOR,
    DEFAULT_OUTLIER_FACTOR,
    DEFAULT_OUTLIER_FRACTION,
    LayerProblem,
    generate_instance,
)
from .formats import ProblemFile, load_problem, save_problem
from .solvers import (
    FITTING_MODES,
    AdmmConfig,
    QuantizedSolution,
    solve_admmq,
    solve_gptq,
    solve_rtn,
)

__all__ = [
    "REPORT_SCHEMA",
    "SOLVER_NAMES",
    "RunConfig",
    "LayerError",
    "strip_timing",
    "main",
]

REPORT_SCHEMA = 1

SOLVER_NAMES = ("rtn", "gptq", "admmq")

TIMING_FIELDS = ("wall_time",)


class LayerError(RuntimeError):
    """A per-layer failure, carrying the layer's label."""

    def __init__(self, layer: str, cause: Exception):
        super().__init__(f"{layer}: {cause}")
        self.layer = layer
        self.cause = cause


@dataclass(frozen=True)
class RunConfig:
    """Solver and report configuration, one field per CLI flag."""

    solver: str = "all"
    bits: int = 4
    symmetric: bool = False
    granularity: str = "per_channel"
    group_size: int | None = None
    fitting: str = "mse_clip"
    iterations: int = 300
    rho0: float = 0.1
    growth: float = 1.1
    refresh: bool = True
    primal_tolerance: float = 1e-7
    precondition: bool = True
    local_search_rounds: int = 5
    local_search_batch: int = 64
    seed: int = 0
    ridge: float = 0.0
    damp_factor: float = DEFAULT_DAMP_FACTOR
    damp_mode: str = "trace"
    workers: int = 1
    budget: int = DEFAULT_BUDGET
    baseline: str = "gptq"
    trace: bool = False

    def grid_spec(self) -> GridSpec:
        return GridSpec(
            bits=self.bits,
            symmetric=self.symmetric,
            granularity=self.granularity,
            group_size=self.group_size,
        )

    def admm_config(self, *, refresh: bool | None = None) -> AdmmConfig:
        return AdmmConfig(
            iterations=self.iterations,
            rho0=self.rho0,
            growth=self.growth,
            refresh=self.refresh if refresh is None else refresh,
            fitting=self.fitting,
            grid=self.grid_spec(),
            primal_tolerance=self.primal_tolerance,
            precondition=self.precondition,
            local_search_rounds=self.local_search_rounds,
            local_search_batch=self.local_search_batch,
            seed=self.seed,
        )

    def solver_names(self) -> tuple[str, ...]:
        if self.solver == "all":
            return SOLVER_NAMES
        return (self.solver,)

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        fields = {
            name: getattr(args, name)
            for name in cls.__dataclass_fields__
            if hasattr(args, name)
        }
        return cls(**fields)


def strip_timing(record: dict) -> dict:
    """Record without its timing fields, for determinism comparisons."""
    return {k: v for k, v in record.items() if k not in TIMING_FIELDS}


def _record_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True)


def _write_lines(lines: list[str], out: str | None) -> None:
    text = "".join(line + "\n" for line in lines)
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _run_solver(
    name: str, problem: LayerProblem, config: RunConfig, *, refresh=None
) -> tuple[QuantizedSolution, float]:
    start = time.perf_counter()
    if name == "rtn":
        solution = solve_rtn(problem, config.grid_spec(), config.fitting)
    elif name == "gptq":
        solution = solve_gptq(problem, config.grid_spec(), config.fitting)
    elif name == "admmq":
        solution = solve_admmq(problem, config.admm_config(refresh=refresh))
    else:
        raise ValueError(f"unknown solver {name!r}")
    return solution, time.perf_counter() - start


def _refresh_accepted(solution: QuantizedSolution) -> bool:
    if solution.trace is None:
        return False
    return any(row.refresh_accepted for row in solution.trace)


def _load_layer(path: str, config: RunConfig) -> LayerProblem:
    problem_file = load_problem(path)
    return problem_file.to_problem(
        ridge=config.ridge,
        damp_factor=config.damp_factor,
        damp_mode=config.damp_mode,
    )


def _solve_layer(
    path: str, config: RunConfig
) -> tuple[list[dict], list[dict]]:
    """Solve one layer file; returns (layer records, trace records)."""
    try:
        problem = _load_layer(path, config)
        solved: dict[str, tuple[QuantizedSolution, float]] = {}
        for name in config.solver_names():
            solved[name] = _run_solver(name, problem, config)
    except LayerError:
        raise
    except Exception as exc:
        raise LayerError(path, exc) from exc

    baseline = solved.get(config.baseline)
    baseline_objective = baseline[0].objective if baseline else None
    records = []
    traces = []
    for name, (solution, wall) in solved.items():
        if baseline_objective is None or baseline_objective == 0.0:
            relative = None
        else:
            relative = solution.objective / baseline_objective
        records.append(
            {
                "schema": REPORT_SCHEMA,
                "kind": "layer",
                "layer": path,
                "solver": name,
                "bits": config.bits,
                "granularity": config.granularity,
                "objective": solution.objective,
                "relative_error": relative,
                "wall_time": wall,
                "iterations": solution.iterations,
                "refresh_accepted": _refresh_accepted(solution),
                "seed": config.seed,
            }
        )
        if config.trace and solution.trace is not None:
            traces.append(
                {
                    "schema": REPORT_SCHEMA,
                    "kind": "trace",
                    "layer": path,
                    "solver": name,
                    "rows": solution.trace.records(),
                }
            )
    return records, traces


def _solve_layers(
    paths: list[str], config: RunConfig
) -> list[tuple[list[dict], list[dict]]]:
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            return list(
                pool.map(lambda p: _solve_layer(p, config), paths)
            )
    return [_solve_layer(path, config) for path in paths]


def cmd_gen(args: argparse.Namespace) -> int:
    weights, activations = generate_instance(
        args.n,
        args.p,
        args.num_samples,
        outlier_fraction=args.outlier_fraction,
        outlier_factor=args.outlier_factor,
        condition_target=args.condition_target,
        seed=args.seed,
    )
    if args.payload == "hessian":
        payload = activations.T @ activations
    else:
        payload = activations
    dtype = np.float32 if args.dtype == "f32" else np.float64
    problem_file = ProblemFile(
        weights=weights.astype(dtype),
        payload=payload.astype(dtype),
        kind=args.payload,
    )
    save_problem(args.out, problem_file)
    print(
        f"wrote {args.out}: n={args.n} p={args.p} N={args.num_samples} "
        f"payload={args.payload} dtype={args.dtype} seed={args.seed}"
    )
    return 0


def cmd_solve(args: argparse.Namespace) -> int:
    config = RunConfig.from_args(args)
    lines = []
    for records, traces in _solve_layers(args.problems, config):
        lines.extend(_record_line(r) for r in records)
        lines.extend(_record_line(t) for t in traces)
    _write_lines(lines, args.out)
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    config = replace(RunConfig.from_args(args), solver="all")
    results = _solve_layers(args.problems, config)

    percents: dict[str, list[float]] = {name: [] for name in SOLVER_NAMES}
    lines = []
    rows = []
    for records, _ in results:
        by_solver = {r["solver"]: r for r in records}
        base = by_solver[config.baseline]["objective"]
        row = {"layer": records[0]["layer"]}
        for name in SOLVER_NAMES:
            if base == 0.0:
                percent = None
            else:
                percent = 100.0 * by_solver[name]["objective"] / base
                percents[name].append(percent)
            row[name] = percent
            lines.append(
                _record_line(
                    {
                        "schema": REPORT_SCHEMA,
                        "kind": "compare",
                        "layer": row["layer"],
                        "solver": name,
                        "baseline": config.baseline,
                        "objective": by_solver[name]["objective"],
                        "baseline_objective": base,
                        "percent": percent,
                    }
                )
            )
        rows.append(row)

    medians = {
        name: (float(np.median(vals)) if vals else None)
        for name, vals in percents.items()
    }
    for name in SOLVER_NAMES:
        lines.append(
            _record_line(
                {
                    "schema": REPORT_SCHEMA,
                    "kind": "summary",
                    "solver": name,
                    "baseline": config.baseline,
                    "median_percent": medians[name],
                    "layers": len(rows),
                }
            )
        )

    width = max([len(r["layer"]) for r in rows] + [len("median")])
    header = "layer".ljust(width) + "".join(
        f"{name:>10}" for name in SOLVER_NAMES
    )
    table = [header]
    for row in rows:
        cells = "".join(_format_percent(row[name]) for name in SOLVER_NAMES)
        table.append(row["layer"].ljust(width) + cells)
    table.append(
        "median".ljust(width)
        + "".join(_format_percent(medians[name]) for name in SOLVER_NAMES)
    )
    print("\n".join(table))
    if args.out is not None:
        _write_lines(lines, args.out)
    return 0


def _format_percent(value: float | None) -> str:
    return f"{value:>10.2f}" if value is not None else f"{'n/a':>10}"


def cmd_oracle(args: argparse.Namespace) -> int:
    config = RunConfig.from_args(args)
    path = args.problem
    try:
        problem = _load_layer(path, config)
        fit = fit_minmax if config.fitting == "minmax" else fit_mse_clip
        grid = fit(problem.weights, config.grid_spec())
        optimum = brute_force_optimal(problem, grid, budget=config.budget)
        solutions = {}
        for name in SOLVER_NAMES:
            # Refresh would move admmq onto a different grid and break
            # the fixed-grid comparison against the optimum.
            solutions[name] = _run_solver(
                name, problem, config, refresh=False
            )
    except LayerError:
        raise
    except Exception as exc:
        raise LayerError(path, exc) from exc

    lines = [
        _record_line(
            {
                "schema": REPORT_SCHEMA,
                "kind": "oracle",
                "layer": path,
                "solver": "oracle",
                "objective": optimum.objective,
                "ratio": 1.0 if optimum.objective > 0.0 else None,
            }
        )
    ]
    print(f"oracle objective: {optimum.objective:.6e}")
    for name, (solution, _) in solutions.items():
        if optimum.objective > 0.0:
            ratio = solution.objective / optimum.objective
        else:
            ratio = None
        lines.append(
            _record_line(
                {
                    "schema": REPORT_SCHEMA,
                    "kind": "oracle",
                    "layer": path,
                    "solver": name,
                    "objective": solution.objective,
                    "ratio": ratio,
                }
            )
        )
        shown = f"{ratio:.4f}" if ratio is not None else "n/a"
        print(f"{name}: objective {solution.objective:.6e} ratio {shown}")
    if args.out is not None:
        _write_lines(lines, args.out)
    return 0


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    grid = parser.add_argument_group("grid")
    grid.add_argument("--bits", type=int, default=4)
    grid.add_argument("--symmetric", action="store_true")
    grid.add_argument(
        "--granularity", choices=GRANULARITIES, default="per_channel"
    )
    grid.add_argument("--group-size", dest="group_size", type=int)
    grid.add_argument("--fitting", choices=FITTING_MODES, default="mse_clip")

    solver = parser.add_argument_group("solver")
    solver.add_argument("--iterations", type=int, default=300)
    solver.add_argument("--rho0", type=float, default=0.1)
    solver.add_argument("--growth", type=float, default=1.1)
    solver.add_argument(
        "--no-refresh", dest="refresh", action="store_false"
    )
    solver.add_argument(
        "--primal-tolerance",
        dest="primal_tolerance",
        type=float,
        default=1e-7,
    )
    solver.add_argument(
        "--no-precondition", dest="precondition", action="store_false"
    )
    solver.add_argument(
        "--local-search-rounds",
        dest="local_search_rounds",
        type=int,
        default=5,
    )
    solver.add_argument(
        "--local-search-batch",
        dest="local_search_batch",
        type=int,
        default=64,
    )
    solver.add_argument("--seed", type=int, default=0)

    curvature = parser.add_argument_group("curvature")
    curvature.add_argument("--ridge", type=float, default=0.0)
    curvature.add_argument(
        "--damp-factor",
        dest="damp_factor",
        type=float,
        default=DEFAULT_DAMP_FACTOR,
    )
    curvature.add_argument(
        "--damp-mode", dest="damp_mode", choices=DAMP_MODES, default="trace"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="layerquant",
        description="Layer-wise weight quantization solvers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="write a synthetic problem file")
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--p", type=int, required=True)
    gen.add_argument(
        "--num-samples", dest="num_samples", type=int, required=True
    )
    gen.add_argument(
        "--outlier-fraction",
        dest="outlier_fraction",
        type=float,
        default=DEFAULT_OUTLIER_FRACTION,
    )
    gen.add_argument(
        "--outlier-factor",
        dest="outlier_factor",
        type=float,
        default=DEFAULT_OUTLIER_FACTOR,
    )
    gen.add_argument(
        "--condition-target", dest="condition_target", type=float
    )
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument(
        "--payload", choices=("activations", "hessian"), default="activations"
    )
    gen.add_argument("--dtype", choices=("f32", "f64"), default="f64")
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_gen)

    solve = sub.add_parser("solve", help="run solvers, write a report")
    solve.add_argument("problems", nargs="+")
    solve.add_argument(
        "--solver", choices=SOLVER_NAMES + ("all",), default="all"
    )
    solve.add_argument(
        "--baseline", choices=SOLVER_NAMES, default="gptq"
    )
    solve.add_argument("--trace", action="store_true")
    solve.add_argument("--workers", type=int, default=1)
    solve.add_argument("--out")
    _add_config_flags(solve)
    solve.set_defaults(func=cmd_solve)

    compare = sub.add_parser(
        "compare", help="relative objectives vs a baseline solver"
    )
    compare.add_argument("problems", nargs="+")
    compare.add_argument(
        "--baseline", choices=SOLVER_NAMES, default="gptq"
    )
    compare.add_argument("--workers", type=int, default=1)
    compare.add_argument("--out")
    _add_config_flags(compare)
    compare.set_defaults(func=cmd_compare)

    oracle = sub.add_parser(
        "oracle", help="exhaustive optimum and solver ratios"
    )
    oracle.add_argument("problem")
    oracle.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    oracle.add_argument("--out")
    _add_config_flags(oracle)
    oracle.set_defaults(func=cmd_oracle)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LayerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
