"""Layer reconstruction problems.

A problem couples a pre-trained weight matrix W_hat of shape (n, p) with
a symmetric positive semidefinite curvature matrix H of shape (n, n),
normally assembled from calibration activations X of shape (N, n) as

    H = X^T X + ridge * I + damping * I,

where the damping constant is a small multiple of trace(X^T X) (or of
the mean diagonal, by configuration). The quantization quality of a
candidate W is measured by the quadratic reconstruction objective

    objective(W) = 1/2 * trace((W - W_hat)^T H (W - W_hat)),

which for H built from activations equals the squared activation-space
error 1/2 * ||X W - X W_hat||_F^2 plus the ridge term.

The module also provides the diagonal rescaling used to precondition
solvers, exact problem transforms (row scaling, two-sided rotation) that
leave the objective invariant, and a seeded synthetic instance generator
with heavy-tailed "outlier" activation columns.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._validation import as_float_matrix, as_float_vector, check_symmetric

__all__ = [
    "LayerProblem",
    "Preconditioner",
    "GramAccumulator",
    "build_hessian",
    "objective",
    "precondition",
    "apply_scaling_transform",
    "apply_rotation_transform",
    "random_orthogonal",
    "generate_instance",
]

DEFAULT_DAMP_FACTOR = 0.01
DAMP_MODES = ("trace", "mean_diag")

# Outlier generator defaults: a 1/16 fraction of activation columns
# scaled 100x, enough to skew the Hessian diagonal by ~1e4.
DEFAULT_OUTLIER_FRACTION = 1.0 / 16.0
DEFAULT_OUTLIER_FACTOR = 100.0


@dataclass(frozen=True)
class LayerProblem:
    """One layer's quantization problem.

    Attributes:
        weights: pre-trained weights W_hat, shape (n, p).
        hessian: symmetric curvature matrix H, shape (n, n), with any
            ridge and damping already added.
        ridge: ridge constant included in ``hessian``.
        damping: damping constant included in ``hessian``.
    """

    weights: np.ndarray
    hessian: np.ndarray
    ridge: float = 0.0
    damping: float = 0.0

    def __post_init__(self):
        weights = as_float_matrix(self.weights, "weights")
        hessian = as_float_matrix(self.hessian, "hessian")
        check_symmetric(hessian, "hessian")
        if hessian.shape[0] != weights.shape[0]:
            raise ValueError(
                f"hessian is {hessian.shape[0]}x{hessian.shape[1]} but "
                f"weights have {weights.shape[0]} rows"
            )
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "hessian", hessian)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def p(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def from_activations(
        cls,
        weights,
        activations,
        *,
        ridge: float = 0.0,
        damp_factor: float = DEFAULT_DAMP_FACTOR,
        damp_mode: str = "trace",
    ) -> "LayerProblem":
        """Build a problem from calibration activations."""
        weights = as_float_matrix(weights, "weights")
        hessian, damping = build_hessian(
            activations,
            ridge=ridge,
            damp_factor=damp_factor,
            damp_mode=damp_mode,
        )
        if hessian.shape[0] != weights.shape[0]:
            raise ValueError(
                f"activations have {hessian.shape[0]} features but weights "
                f"have {weights.shape[0]} rows"
            )
        return cls(
            weights=weights, hessian=hessian, ridge=ridge, damping=damping
        )

    @classmethod
    def from_hessian(
        cls,
        weights,
        hessian,
        *,
        ridge: float = 0.0,
        damp_factor: float = 0.0,
        damp_mode: str = "trace",
    ) -> "LayerProblem":
        """Build a problem from a precomputed curvature matrix.

        Damping, when requested, is measured on the supplied matrix's
        trace since the underlying activations are unavailable.
        """
        weights = as_float_matrix(weights, "weights")
        hessian = as_float_matrix(hessian, "hessian")
        check_symmetric(hessian, "hessian")
        damping = _damping_constant(
            np.trace(hessian), hessian.shape[0], damp_factor, damp_mode
        )
        n = hessian.shape[0]
        full = hessian + (ridge + damping) * np.eye(n)
        return cls(weights=weights, hessian=full, ridge=ridge, damping=damping)


@dataclass(frozen=True)
class Preconditioner:
    """Diagonal rescaling sigma[i] = 1 / sqrt(H[i, i]).

    Attributes:
        scale: sigma, shape (n,).
        inverse: 1 / sigma, shape (n,).
    """

    scale: np.ndarray
    inverse: np.ndarray


def _damping_constant(
    trace: float, n: int, damp_factor: float, damp_mode: str
) -> float:
    if damp_mode not in DAMP_MODES:
        raise ValueError(
            f"damp_mode must be one of {DAMP_MODES}, got {damp_mode!r}"
        )
    if damp_factor < 0.0:
        raise ValueError(f"damp_factor must be nonnegative, got {damp_factor}")
    if damp_factor == 0.0:
        return 0.0
    base = trace if damp_mode == "trace" else trace / n
    return float(damp_factor * base)


class GramAccumulator:
    """Streaming accumulator for X^T X over calibration batches.

    Batches may arrive in any order; the accumulated matrix agrees with
    the single-shot product up to floating-point summation order.
    """

    def __init__(self, num_features: int):
        if num_features < 1:
            raise ValueError("num_features must be positive")
        self.num_features = num_features
        self.gram = np.zeros((num_features, num_features))
        self.num_samples = 0

    def add(self, batch) -> "GramAccumulator":
        batch = as_float_matrix(batch, "batch")
        if batch.shape[1] != self.num_features:
            raise ValueError(
                f"batch has {batch.shape[1]} features, expected "
                f"{self.num_features}"
            )
        self.gram += batch.T @ batch
        self.num_samples += batch.shape[0]
        return self

    def finalize(
        self,
        *,
        ridge: float = 0.0,
        damp_factor: float = DEFAULT_DAMP_FACTOR,
        damp_mode: str = "trace",
    ) -> tuple[np.ndarray, float]:
        """Return (H, damping) with ridge and damping added."""
        if ridge < 0.0:
            raise ValueError(f"ridge must be nonnegative, got {ridge}")
        damping = _damping_constant(
            float(np.trace(self.gram)), self.num_features, damp_factor,
            damp_mode,
        )
        hessian = self.gram + (ridge + damping) * np.eye(self.num_features)
        return hessian, damping


def build_hessian(
    activations,
    *,
    ridge: float = 0.0,
    damp_factor: float = DEFAULT_DAMP_FACTOR,
    damp_mode: str = "trace",
) -> tuple[np.ndarray, float]:
    """Assemble H = X^T X + (ridge + damping) I from activations.

    Args:
        activations: calibration matrix X, shape (N, n).
        ridge: proximal ridge constant, >= 0.
        damp_factor: damping strength; the added constant is
            damp_factor * trace(X^T X) by default.
        damp_mode: "trace" or "mean_diag"; the latter divides the trace
            by n before applying ``damp_factor``.

    Returns:
        (hessian, damping): the assembled matrix and the damping
        constant actually added to its diagonal.
    """
    activations = as_float_matrix(activations, "activations")
    acc = GramAccumulator(activations.shape[1])
    acc.add(activations)
    return acc.finalize(
        ridge=ridge, damp_factor=damp_factor, damp_mode=damp_mode
    )


def objective(problem: LayerProblem, w) -> float:
    """Quadratic reconstruction error of a candidate weight matrix.

    Returns 1/2 * trace((W - W_hat)^T H (W - W_hat)). Tiny negative
    results from floating-point noise are reported as 0.0; a negative
    value beyond that tolerance means H is not positive semidefinite
    and raises.
    """
    w = as_float_matrix(w, "w")
    if w.shape != problem.weights.shape:
        raise ValueError(
            f"w has shape {w.shape}, expected {problem.weights.shape}"
        )
    err = w - problem.weights
    value = 0.5 * float(np.sum(err * (problem.hessian @ err)))
    if value < 0.0:
        scale = 0.5 * float(
            np.linalg.norm(problem.hessian) * np.linalg.norm(err) ** 2
        )
        if value >= -1e-12 * max(1.0, scale):
            return 0.0
        raise ValueError(
            f"objective is negative ({value:.3e}): hessian is not positive "
            "semidefinite"
        )
    return value


def precondition(
    problem: LayerProblem,
) -> tuple[LayerProblem, Preconditioner]:
    """Rescale the problem so the curvature matrix has unit diagonal.

    With sigma = diag(H)^(-1/2), the scaled problem carries weights
    sigma^-1 * W_hat and curvature sigma H sigma. Evaluating the scaled
    objective at sigma^-1 * W reproduces the original objective at W
    exactly, so solutions map back through multiplication by sigma.

    Raises:
        ValueError: if any diagonal entry of H is not strictly positive.
    """
    diag = np.diag(problem.hessian)
    bad = np.where(diag <= 0.0)[0]
    if bad.size:
        raise ValueError(
            f"hessian diagonal entry {bad[0]} is {diag[bad[0]]:.3e}; "
            "preconditioning requires strictly positive diagonal"
        )
    scale = 1.0 / np.sqrt(diag)
    pre = Preconditioner(scale=scale, inverse=1.0 / scale)
    hessian = problem.hessian * scale[:, None] * scale[None, :]
    weights = problem.weights * pre.inverse[:, None]
    scaled = replace(problem, weights=weights, hessian=hessian)
    return scaled, pre


def apply_scaling_transform(problem: LayerProblem, s) -> LayerProblem:
    """Reparametrize by a positive diagonal row scaling.

    The transformed problem has weights s * W_hat (rows scaled) and
    curvature s^-1 H s^-1, so objectives evaluated at correspondingly
    scaled candidates are unchanged.
    """
    s = as_float_vector(s, "s")
    if s.shape[0] != problem.n:
        raise ValueError(
            f"s has length {s.shape[0]}, expected {problem.n}"
        )
    if np.any(s <= 0.0):
        raise ValueError("scaling entries must be strictly positive")
    inv = 1.0 / s
    return replace(
        problem,
        weights=problem.weights * s[:, None],
        hessian=problem.hessian * inv[:, None] * inv[None, :],
    )


def apply_rotation_transform(problem: LayerProblem, r1, r2) -> LayerProblem:
    """Reparametrize by orthogonal rotations on both sides.

    The transformed problem has weights r1^T W_hat r2 and curvature
    r1^T H r1. Candidates U for the transformed problem map back as
    r1 U r2^T with identical objective.
    """
    r1 = _checked_orthogonal(r1, "r1", problem.n)
    r2 = _checked_orthogonal(r2, "r2", problem.p)
    return replace(
        problem,
        weights=r1.T @ problem.weights @ r2,
        hessian=r1.T @ problem.hessian @ r1,
    )


def _checked_orthogonal(r, name: str, n: int) -> np.ndarray:
    r = as_float_matrix(r, name)
    if r.shape != (n, n):
        raise ValueError(f"{name} must have shape ({n}, {n}), got {r.shape}")
    residual = np.linalg.norm(r.T @ r - np.eye(n))
    if residual > 1e-10 * np.sqrt(n):
        raise ValueError(
            f"{name} is not orthogonal: ||R^T R - I|| = {residual:.3e}"
        )
    return r


def random_orthogonal(
    n: int, seed: int = 0, *, hadamard: bool = False
) -> np.ndarray:
    """Seeded random orthogonal matrix.

    The default draws a Gaussian matrix and orthonormalizes it by QR,
    with column signs fixed so the result is unique. With
    ``hadamard=True`` (n must be a power of two) the result is a
    normalized Hadamard matrix with randomly flipped row signs, which
    applies in O(n^2) without a factorization and spreads mass evenly.
    """
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    rng = np.random.default_rng(seed)
    if hadamard:
        if n & (n - 1):
            raise ValueError(
                f"hadamard construction requires a power of two, got {n}"
            )
        h = np.array([[1.0]])
        while h.shape[0] < n:
            h = np.block([[h, h], [h, -h]])
        signs = rng.choice([-1.0, 1.0], size=n)
        return signs[:, None] * (h / np.sqrt(n))
    gauss = rng.standard_normal((n, n))
    q, r = np.linalg.qr(gauss)
    # Fixing diag(R) > 0 makes the factorization, and hence the draw,
    # unique for a given seed.
    return q * np.sign(np.diag(r))[None, :]


def generate_instance(
    n: int,
    p: int,
    num_samples: int,
    *,
    outlier_fraction: float = DEFAULT_OUTLIER_FRACTION,
    outlier_factor: float = DEFAULT_OUTLIER_FACTOR,
    condition_target: float | None = None,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded synthetic (weights, activations) pair.

    Weights and activations are standard Gaussian. A fraction of
    activation columns is scaled by ``outlier_factor`` to emulate
    heavy-tailed channels; ``outlier_factor=1`` leaves the data plain.
    ``condition_target`` optionally applies a geometric column scaling
    so the Gram matrix diagonal spans roughly that ratio.

    Returns:
        (weights, activations) with shapes (n, p) and (num_samples, n).
    """
    if n < 1 or p < 1 or num_samples < 1:
        raise ValueError("n, p, and num_samples must be positive")
    if not 0.0 <= outlier_fraction <= 1.0:
        raise ValueError(
            f"outlier_fraction must be in [0, 1], got {outlier_fraction}"
        )
    if outlier_factor <= 0.0:
        raise ValueError(
            f"outlier_factor must be positive, got {outlier_factor}"
        )
    rng = np.random.default_rng(seed)
    weights = rng.standard_normal((n, p))
    activations = rng.standard_normal((num_samples, n))
    if condition_target is not None:
        if condition_target < 1.0:
            raise ValueError("condition_target must be >= 1")
        activations = activations * np.geomspace(
            1.0, np.sqrt(condition_target), n
        )
    count = int(round(n * outlier_fraction))
    if outlier_fraction > 0.0 and outlier_factor != 1.0:
        count = max(1, count)
    if count and outlier_factor != 1.0:
        columns = rng.choice(n, size=count, replace=False)
        activations[:, columns] *= outlier_factor
    return weights, activations
