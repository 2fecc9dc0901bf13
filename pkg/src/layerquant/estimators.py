"""Estimator wrappers with the scikit-learn fit/transform contract.

Each quantizer is a transformer over weight matrices: ``fit`` solves
one layer's quantization problem, ``transform`` projects a matrix onto
the fitted grid, and the usual ``get_params``/``set_params``/clone
machinery works for sweeps. The solver output is exposed through fitted
attributes (``quantized_``, ``codes_``, ``grid_``, ``objective_``,
``solution_``).

``fit_transform`` returns the solver's quantized weights rather than
``transform(W)``: for the compensating solvers the two differ, since
``transform`` is plain nearest-grid rounding on the fitted grid.

Calibration data enters through ``fit`` keyword arguments, not the
constructor, so one configured estimator can be cloned across layers:

    AdmmQuantizer(bits=3).fit(w, activations=x).quantized_

Passing ``hessian=`` instead uses a precomputed curvature matrix as is
(no damping is added; include any you want in the matrix).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_float_matrix
from .grid import GridSpec, project
from .problem import LayerProblem
from .solvers import AdmmConfig, solve_admmq, solve_gptq, solve_rtn

__all__ = [
    "BaseWeightQuantizer",
    "RTNQuantizer",
    "GPTQQuantizer",
    "AdmmQuantizer",
]


class BaseWeightQuantizer(TransformerMixin, BaseEstimator):
    """Shared plumbing for the weight quantizer estimators.

    Subclasses implement ``_solve`` and may override ``_default_problem``
    to support fitting without calibration data.
    """

    def __init__(
        self,
        *,
        bits: int = 4,
        symmetric: bool = False,
        granularity: str = "per_channel",
        group_size: int | None = None,
        fitting: str = "mse_clip",
        ridge: float = 0.0,
        damp_factor: float = 0.01,
        damp_mode: str = "trace",
    ):
        self.bits = bits
        self.symmetric = symmetric
        self.granularity = granularity
        self.group_size = group_size
        self.fitting = fitting
        self.ridge = ridge
        self.damp_factor = damp_factor
        self.damp_mode = damp_mode

    def _grid_spec(self) -> GridSpec:
        return GridSpec(
            bits=self.bits,
            symmetric=self.symmetric,
            granularity=self.granularity,
            group_size=self.group_size,
        )

    def _solve(self, problem: LayerProblem):
        raise NotImplementedError

    def _default_problem(self, weights: np.ndarray) -> LayerProblem:
        raise ValueError(
            f"{type(self).__name__}.fit needs calibration data: pass "
            "activations= or hessian="
        )

    def _build_problem(
        self, weights, activations, hessian
    ) -> LayerProblem:
        weights = as_float_matrix(weights, "W")
        if activations is not None and hessian is not None:
            raise ValueError("pass either activations or hessian, not both")
        if activations is not None:
            return LayerProblem.from_activations(
                weights,
                activations,
                ridge=self.ridge,
                damp_factor=self.damp_factor,
                damp_mode=self.damp_mode,
            )
        if hessian is not None:
            return LayerProblem.from_hessian(
                weights, hessian, ridge=self.ridge
            )
        return self._default_problem(weights)

    def fit(self, W, y=None, *, activations=None, hessian=None):
        """Solve the quantization problem for one weight matrix.

        Args:
            W: weights to quantize, shape (n, p).
            y: ignored; present for the scikit-learn contract.
            activations: calibration matrix of shape (N, n); the
                curvature is its Gram matrix plus the configured ridge
                and damping.
            hessian: precomputed curvature matrix, used as is.

        Returns:
            self
        """
        problem = self._build_problem(W, activations, hessian)
        solution = self._solve(problem)
        self.problem_ = problem
        self.solution_ = solution
        self.grid_ = solution.coded.grid
        self.quantized_ = solution.quantized
        self.codes_ = solution.coded.codes
        self.objective_ = solution.objective
        self.n_features_in_ = problem.n
        return self

    def transform(self, W) -> np.ndarray:
        """Project a matrix onto the fitted grid (nearest grid value)."""
        check_is_fitted(self, "grid_")
        weights = as_float_matrix(W, "W")
        if weights.shape != self.grid_.shape:
            raise ValueError(
                f"W has shape {weights.shape}, fitted grid expects "
                f"{self.grid_.shape}"
            )
        decoded, _ = project(weights, self.grid_)
        return decoded

    def fit_transform(self, W, y=None, **fit_params) -> np.ndarray:
        """Fit and return the solver's quantized weights.

        Not ``transform(W)``: the compensating solvers place weights on
        grid points other than the nearest one, and projection would
        undo that.
        """
        return self.fit(W, y, **fit_params).quantized_


class RTNQuantizer(BaseWeightQuantizer):
    """Nearest-grid rounding.

    Works without calibration data; in that case the curvature defaults
    to the identity and the objective is plain squared weight error.
    """

    def _default_problem(self, weights: np.ndarray) -> LayerProblem:
        return LayerProblem.from_hessian(
            weights, np.eye(weights.shape[0]), ridge=self.ridge
        )

    def _solve(self, problem: LayerProblem):
        return solve_rtn(problem, self._grid_spec(), self.fitting)


class GPTQQuantizer(BaseWeightQuantizer):
    """Sequential rounding with error compensation across rows.

    Requires calibration data (``activations=`` or ``hessian=``) and a
    positive definite curvature matrix.
    """

    def _solve(self, problem: LayerProblem):
        return solve_gptq(problem, self._grid_spec(), self.fitting)


class AdmmQuantizer(BaseWeightQuantizer):
    """Operator-splitting quantizer with pair-swap refinement.

    Requires calibration data (``activations=`` or ``hessian=``). The
    extra constructor parameters mirror ``AdmmConfig``.
    """

    def __init__(
        self,
        *,
        bits: int = 4,
        symmetric: bool = False,
        granularity: str = "per_channel",
        group_size: int | None = None,
        fitting: str = "mse_clip",
        ridge: float = 0.0,
        damp_factor: float = 0.01,
        damp_mode: str = "trace",
        iterations: int = 300,
        rho0: float = 0.1,
        growth: float = 1.1,
        refresh: bool = True,
        primal_tolerance: float = 1e-7,
        precondition: bool = True,
        local_search_rounds: int = 5,
        local_search_batch: int = 64,
        seed: int = 0,
    ):
        super().__init__(
            bits=bits,
            symmetric=symmetric,
            granularity=granularity,
            group_size=group_size,
            fitting=fitting,
            ridge=ridge,
            damp_factor=damp_factor,
            damp_mode=damp_mode,
        )
        self.iterations = iterations
        self.rho0 = rho0
        self.growth = growth
        self.refresh = refresh
        self.primal_tolerance = primal_tolerance
        self.precondition = precondition
        self.local_search_rounds = local_search_rounds
        self.local_search_batch = local_search_batch
        self.seed = seed

    def _solve(self, problem: LayerProblem):
        config = AdmmConfig(
            iterations=self.iterations,
            rho0=self.rho0,
            growth=self.growth,
            refresh=self.refresh,
            fitting=self.fitting,
            grid=self._grid_spec(),
            primal_tolerance=self.primal_tolerance,
            precondition=self.precondition,
            local_search_rounds=self.local_search_rounds,
            local_search_batch=self.local_search_batch,
            seed=self.seed,
        )
        return solve_admmq(problem, config)
