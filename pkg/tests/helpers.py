"""Shared instance builders for the test suite."""

import numpy as np

from layerquant import LayerProblem


def wishart_capped(rng, n, cap=1e3):
    """Random SPD matrix X^T X from 4n Gaussian samples, condition <= cap.

    When the raw Gram matrix is worse conditioned than ``cap``, a
    diagonal lift brings the eigenvalue ratio exactly to the cap.
    """
    x = rng.standard_normal((4 * n, n))
    h = x.T @ x
    evals = np.linalg.eigvalsh(h)
    lo, hi = float(evals[0]), float(evals[-1])
    if hi / lo > cap:
        lift = (hi - cap * lo) / (cap - 1.0)
        h = h + lift * np.eye(n)
    return 0.5 * (h + h.T)


def outlier_gram_problem(seed, n=32, p=8, num_samples=64, factor=100.0):
    """Ill-conditioned problem: Gram matrix with scaled outlier columns.

    The curvature is used as generated (no damping), so the full
    condition-number spread of the outliers reaches the solvers.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((num_samples, n))
    cols = rng.choice(n, size=max(1, n // 16), replace=False)
    x[:, cols] *= factor
    h = x.T @ x
    h = 0.5 * (h + h.T)
    weights = rng.standard_normal((n, p))
    return LayerProblem.from_hessian(weights, h)


def spd_problem(seed, n, p, cap=1e3):
    """Random dense problem over a condition-capped SPD curvature."""
    rng = np.random.default_rng(seed)
    h = wishart_capped(rng, n, cap)
    weights = rng.standard_normal((n, p))
    return LayerProblem.from_hessian(weights, h)


def relative_gap(a, b):
    """|a - b| over the larger magnitude, 0 when both are 0."""
    denom = max(abs(a), abs(b))
    return abs(a - b) / denom if denom > 0.0 else 0.0
