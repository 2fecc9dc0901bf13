"""Greedy pair-swap refinement of quantized weights.

A quantized matrix can often be improved after the fact by nudging two
entries of the same column one grid step each in opposite or equal
directions: the two perturbations interact only through a single
curvature cross term, so the exact objective change of a candidate move
is a five-coefficient expression in the gradient G = H (W_hat - W_q)
and three entries of H. For rows (a, b) of column j perturbed by
(d1, d2):

    2 * dL = -2 d1 G[a, j] + d1^2 H[a, a]
             -2 d2 G[b, j] + d2^2 H[b, b]
             + 2 d1 d2 H[a, b]

Reported deltas are on the objective's scale (half the raw quadratic
form change), so a predicted gain matches the measured objective
difference directly.

Refinement samples a batch of row pairs per round, scores the best
feasible signed step pair per column for each, applies the single most
improving row pair, and repairs the gradient with a rank-2 update
instead of recomputing it. Columns whose four sign combinations all
increase the objective, or whose codes sit at the representable bounds,
opt out of a move entry-wise.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

import numpy as np

from .grid import CodedMatrix, QuantGrid
from .problem import LayerProblem, objective

if TYPE_CHECKING:
    from .solvers import QuantizedSolution

__all__ = [
    "SwapMove",
    "compute_gradient",
    "pair_swap_delta",
    "pair_swap_refine",
    "MAX_ROUNDS",
]

MAX_ROUNDS = 5
DEFAULT_BATCH_SIZE = 64

_SIGN_PAIRS = ((1, 1), (1, -1), (-1, 1), (-1, -1))


@dataclass(frozen=True)
class SwapMove:
    """A candidate two-row move with its predicted objective change.

    Attributes:
        row_a: first row index.
        row_b: second row index.
        steps: int code steps, shape (2, p), entries in {-1, 0, +1};
            zero columns opted out.
        deltas: value changes steps * scale, shape (2, p).
        gain: predicted objective change; negative improves, 0.0 means
            no column takes part.
    """

    row_a: int
    row_b: int
    steps: np.ndarray
    deltas: np.ndarray
    gain: float

    @property
    def improves(self) -> bool:
        return self.gain < 0.0


def compute_gradient(problem: LayerProblem, w_q) -> np.ndarray:
    """Gradient-like matrix G = H (W_hat - W_q) used by move scoring."""
    w_q = np.asarray(w_q, dtype=np.float64)
    if w_q.shape != problem.weights.shape:
        raise ValueError(
            f"w_q has shape {w_q.shape}, expected {problem.weights.shape}"
        )
    return problem.hessian @ (problem.weights - w_q)


def pair_swap_delta(
    gradient: np.ndarray,
    hessian: np.ndarray,
    grid: QuantGrid,
    codes: np.ndarray,
    row_a: int,
    row_b: int,
) -> SwapMove:
    """Best feasible one-step move on rows (row_a, row_b), per column.

    Each column independently picks the sign combination with the most
    negative predicted objective change among those whose stepped codes
    stay inside [0, 2**bits - 1], and opts out when none is negative.

    Args:
        gradient: G = H (W_hat - W_q), shape (n, p).
        hessian: curvature matrix H, shape (n, n).
        grid: grid the codes live on.
        codes: current codes, shape (n, p).
        row_a: first row index.
        row_b: second row index.

    Returns:
        SwapMove; ``gain == 0.0`` with all-zero steps when no column
        improves.
    """
    if row_a == row_b:
        raise ValueError("row_a and row_b must differ")
    p = codes.shape[1]
    scale, _ = grid.expand()
    top = grid.spec.levels - 1
    c_a = codes[row_a].astype(np.int64)
    c_b = codes[row_b].astype(np.int64)
    step_a = scale[row_a]
    step_b = scale[row_b]
    g_a = gradient[row_a]
    g_b = gradient[row_b]
    h_aa = hessian[row_a, row_a]
    h_bb = hessian[row_b, row_b]
    h_ab = hessian[row_a, row_b]

    gains = np.empty((len(_SIGN_PAIRS), p))
    for idx, (s1, s2) in enumerate(_SIGN_PAIRS):
        d1 = s1 * step_a
        d2 = s2 * step_b
        feasible = (
            (c_a + s1 >= 0)
            & (c_a + s1 <= top)
            & (c_b + s2 >= 0)
            & (c_b + s2 <= top)
        )
        raw = (
            -2.0 * d1 * g_a
            + d1 * d1 * h_aa
            - 2.0 * d2 * g_b
            + d2 * d2 * h_bb
            + 2.0 * d1 * d2 * h_ab
        )
        gains[idx] = np.where(feasible, 0.5 * raw, np.inf)

    choice = np.argmin(gains, axis=0)
    col_gain = gains[choice, np.arange(p)]
    take = col_gain < 0.0

    signs = np.asarray(_SIGN_PAIRS)[choice].T
    steps = np.where(take, signs, 0).astype(np.int64)
    deltas = steps * np.stack([step_a, step_b])
    gain = float(col_gain[take].sum()) if np.any(take) else 0.0
    return SwapMove(
        row_a=row_a, row_b=row_b, steps=steps, deltas=deltas, gain=gain
    )


def apply_move(
    move: SwapMove, w_q: np.ndarray, codes: np.ndarray, grid: QuantGrid
) -> None:
    """Apply a move in place to the value matrix and its codes.

    Touched rows are re-decoded from codes so the value matrix stays
    bit-exact with the grid's affine map.
    """
    scale, zero = grid.expand()
    for k, row in enumerate((move.row_a, move.row_b)):
        codes[row] = (codes[row].astype(np.int64) + move.steps[k]).astype(
            codes.dtype
        )
        w_q[row] = zero[row] + codes[row].astype(np.float64) * scale[row]


def pair_swap_refine(
    problem: LayerProblem,
    solution: "QuantizedSolution",
    *,
    rounds: int = MAX_ROUNDS,
    batch_size: int = DEFAULT_BATCH_SIZE,
    seed: int = 0,
    on_round=None,
) -> "QuantizedSolution":
    """Refine a solution with up to ``rounds`` greedy pair moves.

    Each round draws ``batch_size`` distinct row pairs (all pairs when
    fewer exist), scores them against the maintained gradient, and
    applies the single best improving move; refinement stops early when
    a round finds none.

    Args:
        problem: the problem the solution solves.
        solution: any quantized solution whose codes match its grid.
        rounds: number of rounds, between 1 and ``MAX_ROUNDS``.
        batch_size: row pairs sampled per round, >= 1.
        seed: sampling seed.
        on_round: optional audit hook called after each applied move as
            ``on_round(round_index, move, w_q, gradient)`` with the
            rank-2-maintained gradient; the arrays are live state and
            must not be mutated.

    Returns:
        A refined solution with updated values, codes, and objective.
    """
    if not 1 <= rounds <= MAX_ROUNDS:
        raise ValueError(
            f"rounds must be in [1, {MAX_ROUNDS}], got {rounds}"
        )
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    grid = solution.coded.grid
    n = problem.n
    if n < 2:
        return solution

    w_q = solution.quantized.copy()
    codes = solution.coded.codes.copy()
    gradient = compute_gradient(problem, w_q)
    rows_a, rows_b = np.triu_indices(n, k=1)
    num_pairs = rows_a.shape[0]
    rng = np.random.default_rng(seed)

    for round_index in range(rounds):
        picks = rng.choice(
            num_pairs, size=min(batch_size, num_pairs), replace=False
        )
        best: SwapMove | None = None
        for pick in picks:
            move = pair_swap_delta(
                gradient,
                problem.hessian,
                grid,
                codes,
                int(rows_a[pick]),
                int(rows_b[pick]),
            )
            if move.improves and (best is None or move.gain < best.gain):
                best = move
        if best is None:
            break
        apply_move(best, w_q, codes, grid)
        rows = [best.row_a, best.row_b]
        gradient -= problem.hessian[:, rows] @ best.deltas
        if on_round is not None:
            on_round(round_index, best, w_q, gradient)

    return replace(
        solution,
        quantized=w_q,
        coded=CodedMatrix(codes=codes, grid=grid),
        objective=objective(problem, w_q),
    )
