"""Uniform quantization grids: fitting, projection, encoding.

A grid maps integer codes k in [0, 2**bits - 1] to real values
z0 + k * delta. The (delta, z0) pair is shared at one of three
granularities over an (n, p) weight matrix:

* ``per_tensor``: one pair for the whole matrix,
* ``per_channel``: one pair per output column,
* ``group``: one pair per contiguous block of ``group_size`` rows
  within each column.

Fitting returns the per-group parameters as small (row_groups,
col_groups) arrays; projection broadcasts them back over the full
matrix. Projection rounds half away from zero and clamps codes to the
representable range, which makes it the exact per-entry nearest-value
map on the grid. Decoding codes always reproduces projected values
bit-exactly because both run the identical affine expression.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import as_float_matrix, as_float_vector

__all__ = [
    "GRANULARITIES",
    "GridSpec",
    "QuantGrid",
    "CodedMatrix",
    "fit_minmax",
    "fit_mse_clip",
    "project",
    "decode",
]

GRANULARITIES = ("per_tensor", "per_channel", "group")

# Scale floor for groups with zero dynamic range; keeps the affine map
# invertible while projecting the degenerate value exactly.
DEGENERATE_SCALE = 1e-12

MSE_NUM_RATIOS = 100
MSE_MIN_RATIO = 0.8


@dataclass(frozen=True)
class GridSpec:
    """Static description of a quantization grid.

    Attributes:
        bits: code width, between 2 and 8.
        symmetric: if True the grid is centred so code 2**(bits-1) decodes
            to exactly 0 and the largest magnitude maps to the top code.
        granularity: one of ``GRANULARITIES``.
        group_size: rows per group; required iff granularity is "group",
            and must divide the number of rows of any matrix fitted.
    """

    bits: int = 4
    symmetric: bool = False
    granularity: str = "per_channel"
    group_size: int | None = None

    def __post_init__(self):
        if not 2 <= self.bits <= 8:
            raise ValueError(f"bits must be in [2, 8], got {self.bits}")
        if self.granularity not in GRANULARITIES:
            raise ValueError(
                f"granularity must be one of {GRANULARITIES}, got "
                f"{self.granularity!r}"
            )
        if self.granularity == "group":
            if self.group_size is None or self.group_size < 1:
                raise ValueError("group granularity requires group_size >= 1")
        elif self.group_size is not None:
            raise ValueError(
                "group_size is only meaningful for group granularity"
            )

    @property
    def levels(self) -> int:
        return 2**self.bits


@dataclass(frozen=True)
class QuantGrid:
    """Fitted grid parameters for a fixed matrix shape.

    Attributes:
        spec: the GridSpec the grid was fitted under.
        scale: per-group steps, shape (row_groups, col_groups), all > 0.
        zero: per-group offsets, same shape as ``scale``.
        shape: (n, p) of matrices this grid covers.
    """

    spec: GridSpec
    scale: np.ndarray
    zero: np.ndarray
    shape: tuple[int, int]

    def __post_init__(self):
        if self.scale.shape != self.zero.shape:
            raise ValueError("scale and zero must have identical shapes")
        if np.any(self.scale <= 0.0):
            raise ValueError("grid scales must be positive")

    def expand(self) -> tuple[np.ndarray, np.ndarray]:
        """Broadcast per-group parameters to full (n, p) arrays."""
        n, p = self.shape
        row_block = n // self.scale.shape[0]
        scale = np.repeat(self.scale, row_block, axis=0)
        zero = np.repeat(self.zero, row_block, axis=0)
        scale = np.broadcast_to(scale, (n, p))
        zero = np.broadcast_to(zero, (n, p))
        return scale, zero


@dataclass(frozen=True)
class CodedMatrix:
    """Integer codes plus the grid that decodes them.

    Codes are stored as uint8 regardless of the grid's bit width.
    """

    codes: np.ndarray
    grid: QuantGrid

    def __post_init__(self):
        if self.codes.dtype != np.uint8:
            raise ValueError("codes must be stored as uint8")
        if self.codes.shape != self.grid.shape:
            raise ValueError(
                f"codes shape {self.codes.shape} does not match grid shape "
                f"{self.grid.shape}"
            )

    def decode(self) -> np.ndarray:
        return decode(self.codes, self.grid)


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest with exact halves away from zero."""
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def _group_axes(values: np.ndarray, spec: GridSpec) -> tuple[int, int]:
    """Return (row_groups, col_groups) for ``values`` under ``spec``."""
    n, p = values.shape
    if spec.granularity == "per_tensor":
        return 1, 1
    if spec.granularity == "per_channel":
        return 1, p
    if n % spec.group_size != 0:
        raise ValueError(
            f"group_size {spec.group_size} does not divide {n} rows"
        )
    return n // spec.group_size, p


def _grouped(values: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Reshape to (row_groups, row_block, col_groups, col_block)."""
    n, p = values.shape
    rg, cg = _group_axes(values, spec)
    return values.reshape(rg, n // rg, cg, p // cg)


def _grid_from_extremes(
    lo: np.ndarray, hi: np.ndarray, spec: GridSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Per-group (scale, zero) from per-group value extremes."""
    if spec.symmetric:
        mag = np.maximum(np.abs(lo), np.abs(hi))
        scale = np.where(
            mag > 0.0, mag / (2 ** (spec.bits - 1) - 1), DEGENERATE_SCALE
        )
        zero = -(2 ** (spec.bits - 1)) * scale
    else:
        span = hi - lo
        scale = np.where(
            span > 0.0, span / (spec.levels - 1), DEGENERATE_SCALE
        )
        zero = lo.astype(np.float64, copy=True)
    return scale, zero


def fit_minmax(values, spec: GridSpec) -> QuantGrid:
    """Fit grid parameters from per-group value extremes.

    Asymmetric grids span [min, max] of each group exactly. Symmetric
    grids place the largest group magnitude on the top code and 0 on
    code 2**(bits-1). A group with zero dynamic range receives the
    floor scale so its single value still projects exactly.

    Args:
        values: real matrix, shape (n, p).
        spec: grid description.

    Returns:
        QuantGrid covering ``values.shape``.
    """
    values = as_float_matrix(values, "values")
    g = _grouped(values, spec)
    lo = g.min(axis=(1, 3))
    hi = g.max(axis=(1, 3))
    scale, zero = _grid_from_extremes(lo, hi, spec)
    return QuantGrid(spec=spec, scale=scale, zero=zero, shape=values.shape)


def fit_mse_clip(
    values,
    spec: GridSpec,
    hessian_diag=None,
    *,
    num_ratios: int = MSE_NUM_RATIOS,
    min_ratio: float = MSE_MIN_RATIO,
) -> QuantGrid:
    """Fit grid parameters by searching over clipped value ranges.

    Candidate grids shrink each group's extremes towards zero by a ratio
    r from ``num_ratios`` equally spaced values in [min_ratio, 1.0],
    both endpoints included. Each group independently keeps the
    candidate minimizing its summed squared projection error, optionally
    weighted per row by ``hessian_diag``. Candidates are visited from
    r = 1.0 downwards and replaced only on strict improvement, so ties
    resolve to the larger ratio.

    Args:
        values: real matrix, shape (n, p).
        spec: grid description.
        hessian_diag: optional per-row nonnegative weights, shape (n,).
        num_ratios: number of candidate shrink ratios.
        min_ratio: smallest shrink ratio searched.

    Returns:
        QuantGrid covering ``values.shape``.
    """
    values = as_float_matrix(values, "values")
    if not 0.0 < min_ratio <= 1.0:
        raise ValueError(f"min_ratio must be in (0, 1], got {min_ratio}")
    if num_ratios < 1:
        raise ValueError(f"num_ratios must be >= 1, got {num_ratios}")
    g = _grouped(values, spec)
    weights = None
    if hessian_diag is not None:
        hessian_diag = as_float_vector(hessian_diag, "hessian_diag")
        if hessian_diag.shape[0] != values.shape[0]:
            raise ValueError(
                f"hessian_diag has length {hessian_diag.shape[0]}, expected "
                f"{values.shape[0]}"
            )
        if np.any(hessian_diag < 0.0):
            raise ValueError("hessian_diag entries must be nonnegative")
        rg = g.shape[0]
        weights = hessian_diag.reshape(rg, -1)[:, :, None, None]

    lo = g.min(axis=(1, 3))
    hi = g.max(axis=(1, 3))
    top = float(spec.levels - 1)

    best_err = np.full(lo.shape, np.inf)
    best_scale = np.empty(lo.shape)
    best_zero = np.empty(lo.shape)
    for r in np.linspace(min_ratio, 1.0, num_ratios)[::-1]:
        scale, zero = _grid_from_extremes(r * lo, r * hi, spec)
        s4 = scale[:, None, :, None]
        z4 = zero[:, None, :, None]
        codes = np.clip(round_half_away((g - z4) / s4), 0.0, top)
        err = (g - (z4 + codes * s4)) ** 2
        if weights is not None:
            err = err * weights
        err = err.sum(axis=(1, 3))
        better = err < best_err
        best_err = np.where(better, err, best_err)
        best_scale = np.where(better, scale, best_scale)
        best_zero = np.where(better, zero, best_zero)
    return QuantGrid(
        spec=spec, scale=best_scale, zero=best_zero, shape=values.shape
    )


def project(values, grid: QuantGrid) -> tuple[np.ndarray, CodedMatrix]:
    """Map each entry to its nearest grid value.

    Args:
        values: real matrix matching ``grid.shape``.
        grid: fitted grid.

    Returns:
        (quantized, coded): the on-grid matrix and its codes. The
        quantized matrix equals ``coded.decode()`` bit-exactly.
    """
    values = as_float_matrix(values, "values")
    if values.shape != grid.shape:
        raise ValueError(
            f"values shape {values.shape} does not match grid shape "
            f"{grid.shape}"
        )
    scale, zero = grid.expand()
    codes = np.clip(
        round_half_away((values - zero) / scale), 0.0, grid.spec.levels - 1
    ).astype(np.uint8)
    coded = CodedMatrix(codes=codes, grid=grid)
    return coded.decode(), coded


def decode(codes: np.ndarray, grid: QuantGrid) -> np.ndarray:
    """Decode uint8 codes through the grid's affine map."""
    if codes.shape != grid.shape:
        raise ValueError(
            f"codes shape {codes.shape} does not match grid shape "
            f"{grid.shape}"
        )
    if int(codes.max(initial=0)) > grid.spec.levels - 1:
        raise ValueError(
            f"codes exceed the {grid.spec.levels}-level range of the grid"
        )
    scale, zero = grid.expand()
    return zero + codes.astype(np.float64) * scale
