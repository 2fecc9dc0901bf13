"""Layer quantization solvers.

Three solvers share one problem and grid vocabulary:

* ``solve_rtn``: fit a grid to the weights and round every entry to its
  nearest grid value. Curvature-blind; the floor any other method must
  beat.
* ``solve_gptq``: round rows in natural order, compensating each row's
  rounding error by updating all later rows with coefficients from an
  upper Cholesky factor of H^-1. One pass, no iteration.
* ``solve_admmq``: operator splitting on the scaled problem. The
  curvature matrix is first rescaled to unit diagonal (the

  preconditioning step), then the iteration alternates

      W  <- (H + rho_t I)^-1 (H W_hat + rho_t D - V)
      D  <- nearest grid point of W + V / rho_t   (in original units)
      V  <- V + rho_t (W - D)

  with a geometrically growing penalty rho_t = rho0 * growth^t. The
  W-step reuses one eigendecomposition of H for every shift. Midway
  through the schedule the grid may be refitted once from the current
  projection target if that cannot increase the projection distance
  (see ``maybe_refresh_grid``). The returned discrete iterate is
  finished with a few pair-swap local search rounds in original
  coordinates.

The continuous/discrete gap ||W - D|| shrinks like 1/rho_t, so the
iteration is stopped early once ||W - D||_F / sqrt(n p) falls below a
tolerance; the trace records enough per-iteration state to audit that
decay.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import CodedMatrix, GridSpec, QuantGrid, fit_minmax, fit_mse_clip, project, round_half_away
from .linalg import solve_shifted, sym_eig
from .local_search import pair_swap_refine
from .problem import LayerProblem, Preconditioner, objective, precondition

__all__ = [
    "FITTING_MODES",
    "AdmmConfig",
    "TraceRow",
    "ConvergenceTrace",
    "RefreshEvent",
    "SolverState",
    "QuantizedSolution",
    "SolverDivergenceError",
    "rho_schedule",
    "residuals",
    "maybe_refresh_grid",
    "solve_rtn",
    "solve_gptq",
    "solve_admmq",
]

logger = logging.getLogger(__name__)

FITTING_MODES = ("minmax", "mse_clip")


class SolverDivergenceError(RuntimeError):
    """Raised when an iterate stops being finite.

    Attributes:
        iteration: index of the iteration that produced the bad value.
    """

    def __init__(self, iteration: int):
        super().__init__(
            f"non-finite iterate at iteration {iteration}; aborting"
        )
        self.iteration = iteration


@dataclass(frozen=True)
class AdmmConfig:
    """Configuration for ``solve_admmq``.

    Attributes:
        iterations: penalty schedule length T.
        rho0: initial penalty, > 0.
        growth: per-iteration penalty factor, > 1.
        refresh: allow one mid-schedule grid refit.
        fitting: grid fitting mode, one of ``FITTING_MODES``.
        grid: grid shape description.
        primal_tolerance: early-stop threshold on the normalized
            continuous/discrete gap ||W - D||_F / sqrt(n p).
        precondition: rescale the curvature matrix to unit diagonal
            before iterating.
        local_search_rounds: pair-swap rounds applied to the result;
            0 disables the refinement.
        local_search_batch: row pairs sampled per refinement round.
        seed: seed for the refinement's pair sampling.
    """

    iterations: int = 300
    rho0: float = 0.1
    growth: float = 1.1
    refresh: bool = True
    fitting: str = "mse_clip"
    grid: GridSpec = field(default_factory=GridSpec)
    primal_tolerance: float = 1e-7
    precondition: bool = True
    local_search_rounds: int = 5
    local_search_batch: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.rho0 <= 0.0:
            raise ValueError(f"rho0 must be positive, got {self.rho0}")
        if self.growth <= 1.0:
            raise ValueError(f"growth must exceed 1, got {self.growth}")
        if self.fitting not in FITTING_MODES:
            raise ValueError(
                f"fitting must be one of {FITTING_MODES}, got {self.fitting!r}"
            )
        if self.primal_tolerance < 0.0:
            raise ValueError("primal_tolerance must be nonnegative")
        if not 0 <= self.local_search_rounds <= 5:
            raise ValueError("local_search_rounds must be in [0, 5]")
        if self.local_search_batch < 1:
            raise ValueError("local_search_batch must be >= 1")


@dataclass(frozen=True)
class TraceRow:
    """Per-iteration convergence record."""

    iteration: int
    rho: float
    primal_residual: float
    step_change: float
    objective: float
    refresh_attempted: bool = False
    refresh_accepted: bool = False
    refresh_distance_old: float = math.nan
    refresh_distance_new: float = math.nan


@dataclass(frozen=True)
class ConvergenceTrace:
    """Ordered trace rows for one solve."""

    rows: tuple[TraceRow, ...]

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    @property
    def final(self) -> TraceRow:
        return self.rows[-1]

    def records(self) -> list[dict]:
        """Rows as plain dicts, for structured reports."""
        return [
            {
                "iteration": row.iteration,
                "rho": row.rho,
                "primal_residual": row.primal_residual,
                "step_change": row.step_change,
                "objective": row.objective,
                "refresh_attempted": row.refresh_attempted,
                "refresh_accepted": row.refresh_accepted,
                "refresh_distance_old": _none_if_nan(row.refresh_distance_old),
                "refresh_distance_new": _none_if_nan(row.refresh_distance_new),
            }
            for row in self.rows
        ]


def _none_if_nan(x: float):
    return None if math.isnan(x) else x


@dataclass(frozen=True)
class RefreshEvent:
    """Outcome of one grid refresh attempt."""

    iteration: int
    accepted: bool
    distance_old: float
    distance_new: float


@dataclass
class SolverState:
    """Mutable splitting state at one iteration.

    ``w``, ``d``, and ``v`` live in preconditioned coordinates;
    ``quantized`` is the on-grid original-coordinate value of ``d``
    (its exact decode, kept alongside because multiplying ``d`` back by
    the preconditioner reintroduces rounding) and ``codes`` its codes.
    """

    w: np.ndarray
    d: np.ndarray
    v: np.ndarray
    rho: float
    iteration: int
    grid: QuantGrid
    preconditioner: Preconditioner
    quantized: np.ndarray
    codes: np.ndarray
    refresh_accepted: bool = False
    refresh_event: RefreshEvent | None = None


@dataclass(frozen=True)
class QuantizedSolution:
    """A solver's output on one problem.

    Attributes:
        solver: producing solver's name.
        quantized: on-grid weights in original coordinates, equal to
            ``coded.decode()`` bit-exactly.
        coded: codes plus grid.
        objective: reconstruction objective at ``quantized``.
        iterations: splitting iterations executed (0 for one-shot
            solvers).
        trace: per-iteration records, when the solver produces them.
    """

    solver: str
    quantized: np.ndarray
    coded: CodedMatrix
    objective: float
    iterations: int = 0
    trace: ConvergenceTrace | None = None


def rho_schedule(config: AdmmConfig, iteration: int) -> float:
    """Penalty value rho0 * growth^iteration."""
    if iteration < 0:
        raise ValueError(f"iteration must be >= 0, got {iteration}")
    return config.rho0 * config.growth**iteration


def residuals(
    state: SolverState, d_previous: np.ndarray
) -> tuple[float, float]:
    """(primal, step) residuals: ||W - D||_F and ||D - D_prev||_F."""
    primal = float(np.linalg.norm(state.w - state.d))
    step = float(np.linalg.norm(state.d - d_previous))
    return primal, step


def fit_grid(values: np.ndarray, spec: GridSpec, fitting: str) -> QuantGrid:
    """Fit a grid with the named fitting mode."""
    if fitting == "minmax":
        return fit_minmax(values, spec)
    if fitting == "mse_clip":
        return fit_mse_clip(values, spec)
    raise ValueError(
        f"fitting must be one of {FITTING_MODES}, got {fitting!r}"
    )


def maybe_refresh_grid(
    state: SolverState, problem: LayerProblem, config: AdmmConfig
) -> SolverState:
    """Refit the grid from the current projection target, if it helps.

    Called after the iteration's dual step. The projection target the
    discrete step used is recovered from the state as D + V / rho: the
    dual step absorbed rho * (W - D), so this equals W + V_prev / rho
    exactly. The grid is refitted on that target (original units) with
    the configured fitting mode and the target re-projected; the new
    grid is kept only when its projection distance does not exceed the
    old one. Acceptance replaces D and compensates the dual variable by
    V += rho * (D_old - D_new), which makes the completed iteration
    identical to one that had used the new grid all along. At most one
    refresh is accepted per solve; rejection leaves the state untouched.
    """
    if not config.refresh or state.refresh_accepted:
        return state
    pre = state.preconditioner
    target = state.d + state.v / state.rho
    target_original = pre.scale[:, None] * target
    new_grid = fit_grid(target_original, config.grid, config.fitting)
    q_new, coded_new = project(target_original, new_grid)
    d_new = pre.inverse[:, None] * q_new
    distance_old = float(np.linalg.norm(state.d - target))
    distance_new = float(np.linalg.norm(d_new - target))
    accepted = distance_new <= distance_old
    state.refresh_event = RefreshEvent(
        iteration=state.iteration,
        accepted=accepted,
        distance_old=distance_old,
        distance_new=distance_new,
    )
    if accepted:
        state.v = state.v + state.rho * (state.d - d_new)
        state.d = d_new
        state.grid = new_grid
        state.quantized = q_new
        state.codes = coded_new.codes
        state.refresh_accepted = True
        logger.debug(
            "grid refresh accepted at iteration %d: %.3e -> %.3e",
            state.iteration,
            distance_old,
            distance_new,
        )
    return state


def solve_rtn(
    problem: LayerProblem,
    spec: GridSpec,
    fitting: str = "mse_clip",
) -> QuantizedSolution:
    """Round every weight to its nearest value on a freshly fitted grid."""
    grid = fit_grid(problem.weights, spec, fitting)
    quantized, coded = project(problem.weights, grid)
    return QuantizedSolution(
        solver="rtn",
        quantized=quantized,
        coded=coded,
        objective=objective(problem, quantized),
    )


def solve_gptq(
    problem: LayerProblem,
    spec: GridSpec,
    fitting: str = "mse_clip",
) -> QuantizedSolution:
    """Round rows in order, compensating errors through later rows.

    With C the upper Cholesky factor of H^-1 (H^-1 = C^T C), rounding
    row i to q_i updates every later row j by

        w_j -= (w_i - q_i) / C[i, i] * C[i, j],

    which is the curvature-optimal correction of the remaining rows for
    the error just committed. The grid is fitted once on the original
    weights and stays fixed.
    """
    grid = fit_grid(problem.weights, spec, fitting)
    scale, zero = grid.expand()
    n = problem.n
    hessian = problem.hessian
    try:
        np.linalg.cholesky(hessian)
        h_inv = np.linalg.solve(hessian, np.eye(n))
        h_inv = 0.5 * (h_inv + h_inv.T)
        c_upper = np.linalg.cholesky(h_inv).T
    except np.linalg.LinAlgError as exc:
        min_eig = float(sym_eig(hessian).eigenvalues[0])
        raise ValueError(
            "hessian must be positive definite for error compensation; "
            f"smallest eigenvalue is {min_eig:.6e}"
        ) from exc

    top = spec.levels - 1
    work = problem.weights.copy()
    codes = np.zeros((n, problem.p), dtype=np.uint8)
    for i in range(n):
        k = np.clip(
            round_half_away((work[i] - zero[i]) / scale[i]), 0.0, top
        )
        codes[i] = k
        q_row = zero[i] + k * scale[i]
        err = (work[i] - q_row) / c_upper[i, i]
        if i + 1 < n:
            work[i + 1 :] -= np.outer(c_upper[i, i + 1 :], err)

    coded = CodedMatrix(codes=codes, grid=grid)
    quantized = coded.decode()
    return QuantizedSolution(
        solver="gptq",
        quantized=quantized,
        coded=coded,
        objective=objective(problem, quantized),
    )


def solve_admmq(
    problem: LayerProblem, config: AdmmConfig | None = None
) -> QuantizedSolution:
    """Operator-splitting solver with a growing penalty.

    See the module docstring for the iteration. Early-stops once the
    normalized gap ||W - D||_F / sqrt(n p) drops below
    ``config.primal_tolerance``; always runs at least one iteration.

    Raises:
        SolverDivergenceError: if an iterate becomes non-finite.
    """
    if config is None:
        config = AdmmConfig()
    if config.precondition:
        scaled, pre = precondition(problem)
    else:
        ones = np.ones(problem.n)
        scaled, pre = problem, Preconditioner(scale=ones, inverse=ones)

    eig = sym_eig(scaled.hessian)
    grid = fit_grid(problem.weights, config.grid, config.fitting)
    hw = scaled.hessian @ scaled.weights
    d = scaled.weights.copy()
    v = np.zeros_like(d)
    quantized = problem.weights
    coded = None
    refresh_accepted = False
    rows: list[TraceRow] = []
    gap_norm = math.sqrt(problem.n * problem.p)

    for t in range(config.iterations):
        rho = rho_schedule(config, t)
        w = solve_shifted(eig, rho, hw + rho * d - v)
        # Checked before projection: the projection's input validation
        # would otherwise mask a blow-up as a generic value error.
        if not np.all(np.isfinite(w)):
            raise SolverDivergenceError(t)
        target = w + v / rho
        quantized, coded = project(pre.scale[:, None] * target, grid)
        d_previous = d
        d = pre.inverse[:, None] * quantized
        v = v + rho * (w - d)
        if not np.all(np.isfinite(v)):
            raise SolverDivergenceError(t)

        refresh_row = (False, False, math.nan, math.nan)
        if (
            config.refresh
            and not refresh_accepted
            and t == config.iterations // 2
        ):
            state = SolverState(
                w=w,
                d=d,
                v=v,
                rho=rho,
                iteration=t,
                grid=grid,
                preconditioner=pre,
                quantized=quantized,
                codes=coded.codes,
                refresh_accepted=refresh_accepted,
            )
            state = maybe_refresh_grid(state, problem, config)
            event = state.refresh_event
            if event is not None:
                refresh_row = (
                    True,
                    event.accepted,
                    event.distance_old,
                    event.distance_new,
                )
            if state.refresh_accepted:
                d, v, grid = state.d, state.v, state.grid
                quantized = state.quantized
                coded = CodedMatrix(codes=state.codes, grid=grid)
                refresh_accepted = True

        primal = float(np.linalg.norm(w - d))
        step = float(np.linalg.norm(d - d_previous))
        rows.append(
            TraceRow(
                iteration=t,
                rho=rho,
                primal_residual=primal,
                step_change=step,
                objective=objective(problem, quantized),
                refresh_attempted=refresh_row[0],
                refresh_accepted=refresh_row[1],
                refresh_distance_old=refresh_row[2],
                refresh_distance_new=refresh_row[3],
            )
        )
        if primal / gap_norm < config.primal_tolerance:
            break

    solution = QuantizedSolution(
        solver="admmq",
        quantized=quantized,
        coded=coded,
        objective=objective(problem, quantized),
        iterations=len(rows),
        trace=ConvergenceTrace(rows=tuple(rows)),
    )
    if config.local_search_rounds > 0:
        solution = pair_swap_refine(
            problem,
            solution,
            rounds=config.local_search_rounds,
            batch_size=config.local_search_batch,
            seed=config.seed,
        )
    return solution
