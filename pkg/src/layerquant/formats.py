"""Binary file formats for problems and solutions.

Two little-endian fixed-width formats, built for bit-exact round trips
rather than interchange:

``QSLP`` (problem): header ``<4sHBBIII`` = magic, version, payload
kind, element type, n, p, N; then the row-major weight block (n x p)
and either an activation block (N x n) or a curvature block (n x n),
both in the declared element type (float32 or float64).

``QSLS`` (solution): header ``<4sHBBBBIIIIId`` = magic, version,
solver, bits, flags (bit 0: symmetric), granularity, group size (0 when
not applicable), n, p, row groups, column groups, objective; then the
code block as unsigned bytes regardless of bit width, and the per-group
scale and zero blocks as float64.

Loaders verify magic, version, and that the declared dimensions account
for the file length exactly; curvature payloads are symmetry-checked.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import check_symmetric
from .grid import GRANULARITIES, CodedMatrix, GridSpec, QuantGrid
from .problem import DEFAULT_DAMP_FACTOR, LayerProblem
from .solvers import QuantizedSolution

__all__ = [
    "FORMAT_VERSION",
    "PAYLOAD_KINDS",
    "ProblemFile",
    "save_problem",
    "load_problem",
    "save_solution",
    "load_solution",
]

FORMAT_VERSION = 1

PAYLOAD_KINDS = ("activations", "hessian")

_PROBLEM_MAGIC = b"QSLP"
_PROBLEM_HEADER = struct.Struct("<4sHBBIII")
_KIND_CODES = {"activations": 0, "hessian": 1}
_KIND_NAMES = {code: name for name, code in _KIND_CODES.items()}

_SOLUTION_MAGIC = b"QSLS"
_SOLUTION_HEADER = struct.Struct("<4sHBBBBIIIIId")
_SOLVER_CODES = {"rtn": 0, "gptq": 1, "admmq": 2, "oracle": 3}
_SOLVER_NAMES = {code: name for name, code in _SOLVER_CODES.items()}
_GRANULARITY_CODES = {name: i for i, name in enumerate(GRANULARITIES)}
_GRANULARITY_NAMES = {code: name for name, code in _GRANULARITY_CODES.items()}

# On-disk element types are explicitly little-endian so files written
# on any platform compare byte-identical.
_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}
_DTYPE_WIRE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_FLAG_SYMMETRIC = 1


@dataclass(frozen=True)
class ProblemFile:
    """In-memory form of one problem file.

    Attributes:
        weights: weight matrix, shape (n, p), float32 or float64.
        payload: activations (N, n) or curvature matrix (n, n), same
            dtype as ``weights``.
        kind: "activations" or "hessian".
    """

    weights: np.ndarray
    payload: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in PAYLOAD_KINDS:
            raise ValueError(
                f"kind must be one of {PAYLOAD_KINDS}, got {self.kind!r}"
            )
        weights = np.asarray(self.weights)
        payload = np.asarray(self.payload)
        if weights.ndim != 2 or payload.ndim != 2:
            raise ValueError("weights and payload must be 2-D")
        if weights.dtype != payload.dtype:
            raise ValueError(
                f"weights ({weights.dtype}) and payload ({payload.dtype}) "
                "must share one dtype"
            )
        if weights.dtype not in _DTYPE_CODES:
            raise ValueError(
                f"dtype must be float32 or float64, got {weights.dtype}"
            )
        n = weights.shape[0]
        if self.kind == "activations":
            if payload.shape[1] != n:
                raise ValueError(
                    f"activations have {payload.shape[1]} features, "
                    f"weights have {n} rows"
                )
        else:
            if payload.shape != (n, n):
                raise ValueError(
                    f"curvature payload must be ({n}, {n}), got "
                    f"{payload.shape}"
                )
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "payload", payload)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def p(self) -> int:
        return self.weights.shape[1]

    @property
    def num_samples(self) -> int:
        return self.payload.shape[0] if self.kind == "activations" else 0

    def to_problem(
        self,
        *,
        ridge: float = 0.0,
        damp_factor: float = DEFAULT_DAMP_FACTOR,
        damp_mode: str = "trace",
    ) -> LayerProblem:
        """Assemble the float64 problem this file describes.

        For activation payloads the curvature is built from the Gram
        matrix with the given ridge and damping. For curvature payloads
        the matrix is taken as stored, plus ridge, with damping (when
        requested) measured on the stored trace.
        """
        weights = self.weights.astype(np.float64)
        payload = self.payload.astype(np.float64)
        if self.kind == "activations":
            return LayerProblem.from_activations(
                weights,
                payload,
                ridge=ridge,
                damp_factor=damp_factor,
                damp_mode=damp_mode,
            )
        return LayerProblem.from_hessian(
            weights,
            payload,
            ridge=ridge,
            damp_factor=damp_factor,
            damp_mode=damp_mode,
        )


def save_problem(path, problem_file: ProblemFile) -> None:
    """Write a problem file; see the module docstring for the layout."""
    pf = problem_file
    dtype_code = _DTYPE_CODES[pf.weights.dtype]
    wire = _DTYPE_WIRE[dtype_code]
    header = _PROBLEM_HEADER.pack(
        _PROBLEM_MAGIC,
        FORMAT_VERSION,
        _KIND_CODES[pf.kind],
        dtype_code,
        pf.n,
        pf.p,
        pf.payload.shape[0],
    )
    blob = (
        header
        + pf.weights.astype(wire, copy=False).tobytes()
        + pf.payload.astype(wire, copy=False).tobytes()
    )
    Path(path).write_bytes(blob)


def load_problem(path) -> ProblemFile:
    """Read a problem file back, bit-exactly.

    Raises:
        ValueError: on bad magic, unknown version or codes, a length
            mismatch, or an asymmetric curvature payload.
    """
    raw = Path(path).read_bytes()
    if len(raw) < _PROBLEM_HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, kind_code, dtype_code, n, p, rows = (
        _PROBLEM_HEADER.unpack_from(raw)
    )
    if magic != _PROBLEM_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    if kind_code not in _KIND_NAMES:
        raise ValueError(f"{path}: unknown payload kind {kind_code}")
    if dtype_code not in _DTYPE_WIRE:
        raise ValueError(f"{path}: unknown element type {dtype_code}")
    kind = _KIND_NAMES[kind_code]
    wire = _DTYPE_WIRE[dtype_code]
    if kind == "hessian" and rows != n:
        raise ValueError(
            f"{path}: curvature payload declares {rows} rows for {n} features"
        )
    # Both payload kinds have n columns: activations are (N, n),
    # curvature is (n, n).
    expected = _PROBLEM_HEADER.size + (n * p + rows * n) * wire.itemsize
    if len(raw) != expected:
        raise ValueError(
            f"{path}: file is {len(raw)} bytes, header declares {expected}"
        )
    offset = _PROBLEM_HEADER.size
    weights = np.frombuffer(
        raw, dtype=wire, count=n * p, offset=offset
    ).reshape(n, p)
    offset += n * p * wire.itemsize
    payload = np.frombuffer(
        raw, dtype=wire, count=rows * n, offset=offset
    ).reshape(rows, n)
    # Native-order writable copies; the wire dtype is only a disk detail.
    native = wire.newbyteorder("=")
    weights = weights.astype(native)
    payload = payload.astype(native)
    if kind == "hessian":
        check_symmetric(payload.astype(np.float64), "curvature payload")
    return ProblemFile(weights=weights, payload=payload, kind=kind)


def save_solution(path, solution: QuantizedSolution) -> None:
    """Write a solution file; see the module docstring for the layout."""
    if solution.solver not in _SOLVER_CODES:
        raise ValueError(f"unknown solver name {solution.solver!r}")
    grid = solution.coded.grid
    spec = grid.spec
    n, p = grid.shape
    row_groups, col_groups = grid.scale.shape
    header = _SOLUTION_HEADER.pack(
        _SOLUTION_MAGIC,
        FORMAT_VERSION,
        _SOLVER_CODES[solution.solver],
        spec.bits,
        _FLAG_SYMMETRIC if spec.symmetric else 0,
        _GRANULARITY_CODES[spec.granularity],
        spec.group_size or 0,
        n,
        p,
        row_groups,
        col_groups,
        solution.objective,
    )
    blob = (
        header
        + solution.coded.codes.tobytes()
        + grid.scale.astype("<f8", copy=False).tobytes()
        + grid.zero.astype("<f8", copy=False).tobytes()
    )
    Path(path).write_bytes(blob)


def load_solution(path) -> QuantizedSolution:
    """Read a solution file back into a decoded solution.

    The returned solution carries the stored objective; iteration
    counts and traces are not part of the format.
    """
    raw = Path(path).read_bytes()
    if len(raw) < _SOLUTION_HEADER.size:
        raise ValueError(f"{path}: truncated header")
    (
        magic,
        version,
        solver_code,
        bits,
        flags,
        gran_code,
        group_size,
        n,
        p,
        row_groups,
        col_groups,
        stored_objective,
    ) = _SOLUTION_HEADER.unpack_from(raw)
    if magic != _SOLUTION_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    if solver_code not in _SOLVER_NAMES:
        raise ValueError(f"{path}: unknown solver code {solver_code}")
    if gran_code not in _GRANULARITY_NAMES:
        raise ValueError(f"{path}: unknown granularity code {gran_code}")
    groups = row_groups * col_groups
    expected = _SOLUTION_HEADER.size + n * p + 2 * groups * 8
    if len(raw) != expected:
        raise ValueError(
            f"{path}: file is {len(raw)} bytes, header declares {expected}"
        )
    spec = GridSpec(
        bits=bits,
        symmetric=bool(flags & _FLAG_SYMMETRIC),
        granularity=_GRANULARITY_NAMES[gran_code],
        group_size=group_size or None,
    )
    offset = _SOLUTION_HEADER.size
    codes = (
        np.frombuffer(raw, dtype=np.uint8, count=n * p, offset=offset)
        .reshape(n, p)
        .copy()
    )
    offset += n * p
    scale = np.frombuffer(
        raw, dtype="<f8", count=groups, offset=offset
    ).reshape(row_groups, col_groups).astype(np.float64)
    offset += groups * 8
    zero = np.frombuffer(
        raw, dtype="<f8", count=groups, offset=offset
    ).reshape(row_groups, col_groups).astype(np.float64)
    grid = QuantGrid(spec=spec, scale=scale, zero=zero, shape=(n, p))
    coded = CodedMatrix(codes=codes, grid=grid)
    return QuantizedSolution(
        solver=_SOLVER_NAMES[solver_code],
        quantized=coded.decode(),
        coded=coded,
        objective=stored_objective,
    )
