"""Exhaustive reference solver for desk-scale problems.

The reconstruction objective splits column-wise:

    0.5 * Tr((W - W_hat)^T H (W - W_hat)) = sum_j 0.5 * e_j^T H e_j,

so the global optimum over a fixed grid is found one column at a time
by scoring every assignment of that column's codes. The candidate count
is p * levels^n, which is only tractable for a handful of rows; the
budget guard makes the refusal explicit instead of letting a call hang.

Enumeration runs in lexicographic code order (row 0 most significant)
and keeps strict improvements only, so among equal-objective optima the
lexicographically smallest code vector wins. That makes oracle output
deterministic and safe to freeze into regression tests.
"""

from __future__ import annotations

import numpy as np

from .grid import CodedMatrix, QuantGrid
from .local_search import SwapMove, apply_move
from .problem import LayerProblem, objective
from .solvers import QuantizedSolution

__all__ = [
    "DEFAULT_BUDGET",
    "BudgetExceededError",
    "brute_force_optimal",
    "direct_objective_delta",
]

DEFAULT_BUDGET = 2**24

_CHUNK = 8192


class BudgetExceededError(ValueError):
    """Raised when enumeration would exceed the candidate budget.

    Attributes:
        required: candidate evaluations the problem would need.
        budget: the configured ceiling.
    """

    def __init__(self, required: int, budget: int):
        super().__init__(
            f"exhaustive search needs {required} candidate evaluations, "
            f"budget is {budget}"
        )
        self.required = required
        self.budget = budget


def _column_codes(start: int, stop: int, n: int, levels: int) -> np.ndarray:
    """Code vectors for candidate indices [start, stop), lex order.

    Row 0 is the most significant digit, so ascending indices enumerate
    code vectors in lexicographic order.
    """
    idx = np.arange(start, stop, dtype=np.int64)
    codes = np.empty((idx.size, n), dtype=np.int64)
    for row in range(n - 1, -1, -1):
        codes[:, row] = idx % levels
        idx //= levels
    return codes


def brute_force_optimal(
    problem: LayerProblem,
    grid: QuantGrid,
    *,
    budget: int = DEFAULT_BUDGET,
) -> QuantizedSolution:
    """Globally optimal codes on ``grid`` by exhaustive enumeration.

    Args:
        problem: the layer to solve.
        grid: fixed, already fitted grid; the oracle does not refit.
        budget: maximum candidate evaluations (p * levels^n must not
            exceed it).

    Raises:
        BudgetExceededError: if the candidate count exceeds ``budget``.
    """
    n, p = problem.n, problem.p
    if grid.shape != (n, p):
        raise ValueError(
            f"grid shape {grid.shape} does not match problem ({n}, {p})"
        )
    levels = grid.spec.levels
    total = levels**n
    required = p * total
    if required > budget:
        raise BudgetExceededError(required, budget)

    scale, zero = grid.expand()
    hessian = problem.hessian
    best_codes = np.zeros((n, p), dtype=np.uint8)
    for j in range(p):
        w_col = problem.weights[:, j]
        s_col = scale[:, j]
        z_col = zero[:, j]
        best_value = np.inf
        for start in range(0, total, _CHUNK):
            codes = _column_codes(start, min(start + _CHUNK, total), n, levels)
            errors = z_col + codes * s_col - w_col
            values = 0.5 * np.einsum(
                "cn,nm,cm->c", errors, hessian, errors, optimize=True
            )
            k = int(np.argmin(values))
            if values[k] < best_value:
                best_value = float(values[k])
                best_codes[:, j] = codes[k]

    coded = CodedMatrix(codes=best_codes, grid=grid)
    quantized = coded.decode()
    return QuantizedSolution(
        solver="oracle",
        quantized=quantized,
        coded=coded,
        objective=objective(problem, quantized),
    )


def direct_objective_delta(
    problem: LayerProblem,
    quantized: np.ndarray,
    codes: np.ndarray,
    grid: QuantGrid,
    move: SwapMove,
) -> float:
    """Objective change from ``move``, measured the slow way.

    Applies the move to copies and differences two full objective
    evaluations. Independent of the incremental gain formula on
    purpose: tests compare the two routes against each other.
    """
    before = objective(problem, quantized)
    w_after = quantized.copy()
    codes_after = codes.copy()
    apply_move(move, w_after, codes_after, grid)
    return objective(problem, w_after) - before
