"""Layer-wise post-training weight quantization solvers.

Quantizes one linear layer's weight matrix onto a low-bit affine grid
while minimizing the curvature-weighted reconstruction error measured
on calibration activations. Three solvers share the problem and grid
vocabulary: plain nearest-grid rounding, sequential rounding with error
compensation, and an operator-splitting method with diagonal
preconditioning, a growing penalty, optional mid-run grid refresh, and
pair-swap local search. An exhaustive oracle bounds them all at desk
scale.

Typical use:

    from layerquant import AdmmQuantizer

    q = AdmmQuantizer(bits=3).fit(weights, activations=calibration)
    q.quantized_   # on-grid weights
    q.codes_       # uint8 codes
"""

from .estimators import (
    AdmmQuantizer,
    BaseWeightQuantizer,
    GPTQQuantizer,
    RTNQuantizer,
)
from .formats import (
    ProblemFile,
    load_problem,
    load_solution,
    save_problem,
    save_solution,
)
from .grid import (
    CodedMatrix,
    GridSpec,
    QuantGrid,
    decode,
    fit_minmax,
    fit_mse_clip,
    project,
)
from .linalg import EigenFactorization, JacobiConvergenceError, solve_shifted, sym_eig
from .local_search import (
    SwapMove,
    apply_move,
    compute_gradient,
    pair_swap_delta,
    pair_swap_refine,
)
from .oracle import BudgetExceededError, brute_force_optimal, direct_objective_delta
from .problem import (
    GramAccumulator,
    LayerProblem,
    Preconditioner,
    apply_rotation_transform,
    apply_scaling_transform,
    build_hessian,
    generate_instance,
    objective,
    precondition,
    random_orthogonal,
)
from .solvers import (
    AdmmConfig,
    ConvergenceTrace,
    QuantizedSolution,
    RefreshEvent,
    SolverDivergenceError,
    SolverState,
    TraceRow,
    maybe_refresh_grid,
    rho_schedule,
    solve_admmq,
    solve_gptq,
    solve_rtn,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "AdmmConfig",
    "AdmmQuantizer",
    "BaseWeightQuantizer",
    "BudgetExceededError",
    "CodedMatrix",
    "ConvergenceTrace",
    "EigenFactorization",
    "GPTQQuantizer",
    "GramAccumulator",
    "GridSpec",
    "JacobiConvergenceError",
    "LayerProblem",
    "Preconditioner",
    "ProblemFile",
    "QuantGrid",
    "QuantizedSolution",
    "RTNQuantizer",
    "RefreshEvent",
    "SolverDivergenceError",
    "SolverState",
    "SwapMove",
    "TraceRow",
    "apply_move",
    "apply_rotation_transform",
    "apply_scaling_transform",
    "brute_force_optimal",
    "build_hessian",
    "compute_gradient",
    "decode",
    "direct_objective_delta",
    "fit_minmax",
    "fit_mse_clip",
    "generate_instance",
    "load_problem",
    "load_solution",
    "maybe_refresh_grid",
    "objective",
    "pair_swap_delta",
    "pair_swap_refine",
    "precondition",
    "project",
    "random_orthogonal",
    "rho_schedule",
    "save_problem",
    "save_solution",
    "solve_admmq",
    "solve_gptq",
    "solve_rtn",
    "sym_eig",
    "solve_shifted",
]
