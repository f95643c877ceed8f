"""Strided matrix views, panel packing, the f64 reference gemm and error metrics."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ContractViolation
from .layout import DEFAULT_KERNEL


class Precision(enum.Enum):
    SINGLE = "single"
    DOUBLE = "double"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32 if self is Precision.SINGLE else np.float64)

    @classmethod
    def of(cls, dtype) -> "Precision":
        dtype = np.dtype(dtype)
        if dtype == np.float32:
            return cls.SINGLE
        if dtype == np.float64:
            return cls.DOUBLE
        raise ContractViolation(f"unsupported element type {dtype}")


class OpFlag(enum.Enum):
    """BLAS operand flag. Data is real, so conjugation is a no-op."""

    N = "n"
    T = "t"
    C = "c"
    H = "h"

    @classmethod
    def parse(cls, value) -> "OpFlag":
        if isinstance(value, OpFlag):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ContractViolation(f"unknown op flag {value!r}") from None

    def normalized(self) -> "OpFlag":
        return {OpFlag.C: OpFlag.N, OpFlag.H: OpFlag.T}.get(self, self)

    @property
    def transposes(self) -> bool:
        return self.normalized() is OpFlag.T


@dataclass(frozen=True)
class MatrixView:
    """A rows x cols window over a flat element buffer.

    Element ``(i, j)`` lives at ``base[offset + i*row_stride + j*col_stride]``.
    Strides are in elements. ``row_stride == 1`` is column-major storage with
    leading dimension ``col_stride``.
    """

    base: np.ndarray
    rows: int
    cols: int
    row_stride: int
    col_stride: int
    offset: int = 0

    def __post_init__(self):
        base = self.base
        if base.ndim != 1 or not base.flags.c_contiguous:
            raise ContractViolation("base must be a contiguous 1-D buffer")
        Precision.of(base.dtype)
        if self.rows < 0 or self.cols < 0 or self.offset < 0:
            raise ContractViolation("negative extent or offset")
        if self.rows == 0 or self.cols == 0:
            return
        rs, cs = self.row_stride, self.col_stride
        if rs < 0 or cs < 0:
            raise ContractViolation("negative strides are not supported")
        last = self.offset + (self.rows - 1) * rs + (self.cols - 1) * cs
        if last >= base.size:
            raise ContractViolation(
                f"view {self.rows}x{self.cols} (strides {rs},{cs}, offset {self.offset}) "
                f"overruns buffer of {base.size}"
            )
        if not _strides_distinct(self.rows, self.cols, rs, cs):
            raise ContractViolation(f"strides ({rs}, {cs}) alias elements of a {self.rows}x{self.cols} view")

    # constructors ---------------------------------------------------------

    @classmethod
    def zeros(cls, rows, cols, dtype=np.float32, order="F", ld=None) -> "MatrixView":
        if order == "F":
            ld = max(rows, 1) if ld is None else ld
            if ld < max(rows, 1):
                raise ContractViolation(f"leading dimension {ld} < rows {rows}")
            buf = np.zeros(max(ld * cols, 1), dtype=dtype)
            return cls(buf, rows, cols, 1, ld)
        ld = max(cols, 1) if ld is None else ld
        if ld < max(cols, 1):
            raise ContractViolation(f"leading dimension {ld} < cols {cols}")
        buf = np.zeros(max(ld * rows, 1), dtype=dtype)
        return cls(buf, rows, cols, ld, 1)

    @classmethod
    def from_array(cls, arr, order="F", dtype=None, ld=None) -> "MatrixView":
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise ContractViolation("expected a 2-D array")
        view = cls.zeros(*arr.shape, dtype=dtype or arr.dtype, order=order, ld=ld)
        view.array()[...] = arr
        return view

    @classmethod
    def from_blas(cls, buf, rows, cols, ld) -> "MatrixView":
        """Column-major operand as passed to a classic gemm (buffer + leading dimension)."""
        if ld < max(rows, 1):
            raise ContractViolation(f"leading dimension {ld} < rows {rows}")
        buf = np.asarray(buf)
        if buf.ndim != 1:
            # an F-ordered 2-D array flattens to a view, anything else copies
            buf = buf.reshape(-1, order="F")
        return cls(buf, rows, cols, 1, ld)

    # accessors ------------------------------------------------------------

    @property
    def elem(self) -> Precision:
        return Precision.of(self.base.dtype)

    @property
    def dtype(self) -> np.dtype:
        return self.base.dtype

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    @property
    def is_column_major(self) -> bool:
        return self.row_stride == 1

    @property
    def is_row_major(self) -> bool:
        return self.col_stride == 1

    def index(self, i: int, j: int) -> int:
        return self.offset + i * self.row_stride + j * self.col_stride

    def array(self) -> np.ndarray:
        """Writable strided ndarray aliasing the view's elements."""
        item = self.base.itemsize
        tail = self.base[self.offset:] if self.rows and self.cols else self.base[:0]
        return as_strided(
            tail,
            shape=(self.rows, self.cols),
            strides=(self.row_stride * item, self.col_stride * item),
            writeable=True,
        )

    def to_numpy(self) -> np.ndarray:
        return np.array(self.array())

    def sub(self, r0: int, c0: int, rows: int, cols: int) -> "MatrixView":
        if r0 < 0 or c0 < 0 or r0 + rows > self.rows or c0 + cols > self.cols:
            raise ContractViolation(f"sub-view [{r0}:{r0 + rows}, {c0}:{c0 + cols}] outside {self.shape}")
        return MatrixView(self.base, rows, cols, self.row_stride, self.col_stride, self.index(r0, c0))

    def transposed(self) -> "MatrixView":
        return MatrixView(self.base, self.cols, self.rows, self.col_stride, self.row_stride, self.offset)

    def with_op(self, op) -> "MatrixView":
        return self.transposed() if OpFlag.parse(op).transposes else self


def _strides_distinct(rows, cols, rs, cs) -> bool:
    if rows == 1 and cols == 1:
        return True
    if rows == 1:
        return cs >= 1
    if cols == 1:
        return rs >= 1
    if rs < 1 or cs < 1:
        return False
    return cs >= rows * rs or rs >= cols * cs


def op_shape(view: MatrixView, op) -> tuple[int, int]:
    return view.with_op(op).shape


# reference gemm -----------------------------------------------------------

def ref_gemm(alpha, A: MatrixView, opA, B: MatrixView, opB, beta, C: MatrixView) -> MatrixView:
    """f64 oracle: ``alpha*op(A)@op(B) + beta*C`` as a fresh column-major view.

    Products are accumulated over k in ascending order, one rounded multiply
    and one rounded add per term, so the result equals a plain triple loop.
    ``beta == 0`` never reads C.
    """
    a = A.with_op(opA)
    b = B.with_op(opB)
    if a.cols != b.rows or a.rows != C.rows or b.cols != C.cols:
        raise ContractViolation(
            f"gemm shapes do not conform: op(A) {a.shape}, op(B) {b.shape}, C {C.shape}"
        )
    av = a.array().astype(np.float64)
    bv = b.array().astype(np.float64)
    acc = np.zeros(C.shape, dtype=np.float64)
    if alpha != 0:
        for k in range(a.cols):
            acc += np.multiply.outer(av[:, k], bv[k, :])
        acc *= float(alpha)
    if beta != 0:
        acc += float(beta) * C.array().astype(np.float64)
    return MatrixView.from_array(acc, order="F", dtype=np.float64)


# packing ------------------------------------------------------------------

def _padded_k(k_len: int, ksub: int) -> int:
    return max(1, math.ceil(k_len / ksub)) * ksub


def pack_a(A: MatrixView, opA, row_offset: int, k_len: int, k_offset: int = 0,
           mr: int = DEFAULT_KERNEL.m, ksub: int = DEFAULT_KERNEL.ksub) -> MatrixView:
    """Copy an ``mr`` x ``k_len`` panel of op(A) into a zero-padded column-major buffer.

    The depth is rounded up to a multiple of ``ksub``; rows or depth beyond
    op(A)'s extent come out as exact zeros.
    """
    a = A.with_op(opA)
    if not 0 <= row_offset < max(a.rows, 1):
        raise ContractViolation(f"row offset {row_offset} outside op(A) with {a.rows} rows")
    kp = _padded_k(k_len, ksub)
    panel = MatrixView.zeros(mr, kp, dtype=A.dtype, order="F")
    vr = min(mr, a.rows - row_offset)
    vk = max(0, min(k_len, a.cols - k_offset))
    if vr > 0 and vk > 0:
        panel.array()[:vr, :vk] = a.array()[row_offset:row_offset + vr, k_offset:k_offset + vk]
    return panel


def pack_b(B: MatrixView, opB, col_offset: int, k_len: int, k_offset: int = 0,
           nr: int = DEFAULT_KERNEL.n, ksub: int = DEFAULT_KERNEL.ksub) -> MatrixView:
    """Row-major ``k_len`` x ``nr`` panel of op(B), zero-padded like :func:`pack_a`."""
    b = B.with_op(opB)
    if not 0 <= col_offset < max(b.cols, 1):
        raise ContractViolation(f"column offset {col_offset} outside op(B) with {b.cols} columns")
    kp = _padded_k(k_len, ksub)
    panel = MatrixView.zeros(kp, nr, dtype=B.dtype, order="C")
    vc = min(nr, b.cols - col_offset)
    vk = max(0, min(k_len, b.rows - k_offset))
    if vc > 0 and vk > 0:
        panel.array()[:vk, :vc] = b.array()[k_offset:k_offset + vk, col_offset:col_offset + vc]
    return panel


# precision ----------------------------------------------------------------

def cast(M: MatrixView, target) -> MatrixView:
    """Column-major copy of M in the target precision (round-to-nearest-even on downcast)."""
    target = target if isinstance(target, Precision) else Precision(target)
    return MatrixView.from_array(M.array(), order="F", dtype=target.dtype)


# error metrics ------------------------------------------------------------

REL_DENOM_FLOOR = 1e-30


@dataclass(frozen=True)
class ErrorReport:
    mean_rel_err: float
    max_rel_err: float
    normalized_residue: float

    RESIDUE_DEFINITION = "max|test - ref| / (norm_scale * eps(test dtype))"


def compare(C_test: MatrixView, C_ref: MatrixView, norm_scale: float = 1.0, eps: float | None = None) -> ErrorReport:
    """Entrywise relative errors of ``C_test`` against ``C_ref``.

    Relative error per entry is ``|t - r| / max(|r|, 1e-30)``; entries where
    both are exactly zero count as zero. The residue is the largest absolute
    difference in units of ``norm_scale * eps``.
    """
    if C_test.shape != C_ref.shape:
        raise ContractViolation(f"shape mismatch {C_test.shape} vs {C_ref.shape}")
    if norm_scale <= 0:
        raise ContractViolation("norm_scale must be positive")
    t = C_test.array().astype(np.float64)
    r = C_ref.array().astype(np.float64)
    if t.size == 0:
        return ErrorReport(0.0, 0.0, 0.0)
    diff = np.abs(t - r)
    rel = np.where(diff == 0, 0.0, diff / np.maximum(np.abs(r), REL_DENOM_FLOOR))
    eps = float(np.finfo(C_test.dtype).eps) if eps is None else eps
    return ErrorReport(
        mean_rel_err=float(rel.mean()),
        max_rel_err=float(rel.max()),
        normalized_residue=float(diff.max() / (norm_scale * eps)),
    )
