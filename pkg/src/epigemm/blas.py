"""BLAS-level sgemm over the fixed-shape micro-kernel, plus the false dgemm.

The outer loops tile ``op(A) @ op(B)`` into ``m x n`` output blocks. For
each column block, op(B) is packed once into a row-major ``Kp x n`` panel;
op(A) is packed once per row block into a column-major ``m x Kp`` panel.
``Kp`` is K rounded up to the kernel's ``ksub``; the zero padding adds
exact zeros to every sum. Tiles at the right or bottom edge run against a
full-size private buffer and only their valid part is copied back.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .host import InnerKernel, InnerKernelRequest
from .layout import DEFAULT_KERNEL, KernelConfig
from .matrix import MatrixView, OpFlag, Precision, cast, pack_a, pack_b


@dataclass
class GemmCall:
    """``C = alpha * op(A) @ op(B) + beta * C`` with op(A) M x K and op(B) K x N."""

    opA: OpFlag
    opB: OpFlag
    M: int
    N: int
    K: int
    alpha: float
    beta: float
    A: MatrixView
    B: MatrixView
    C: MatrixView

    def __post_init__(self):
        self.opA = OpFlag.parse(self.opA)
        self.opB = OpFlag.parse(self.opB)

    def validate(self, precision: Precision) -> None:
        if min(self.M, self.N, self.K) < 0:
            raise ContractViolation("dimensions must be non-negative")
        a, b = self.A.with_op(self.opA), self.B.with_op(self.opB)
        if a.shape != (self.M, self.K) or b.shape != (self.K, self.N) or self.C.shape != (self.M, self.N):
            raise ContractViolation(
                f"shapes do not match M={self.M} N={self.N} K={self.K}: "
                f"op(A) {a.shape}, op(B) {b.shape}, C {self.C.shape}"
            )
        for name in ("A", "B", "C"):
            if getattr(self, name).elem is not precision:
                raise ContractViolation(f"{name} must be {precision.value} precision")

    @property
    def flops(self) -> int:
        return 2 * self.M * self.N * self.K


@dataclass(frozen=True)
class Tile:
    row: int
    col: int
    rows: int
    cols: int


@dataclass(frozen=True)
class BlockPlan:
    tiles: tuple
    padded_k: int
    row_blocks: int
    col_blocks: int


def plan_blocks(M: int, N: int, K: int, cfg: KernelConfig = DEFAULT_KERNEL) -> BlockPlan:
    rb, cb = math.ceil(M / cfg.m), math.ceil(N / cfg.n)
    tiles = tuple(
        Tile(i * cfg.m, j * cfg.n, min(cfg.m, M - i * cfg.m), min(cfg.n, N - j * cfg.n))
        for j in range(cb)
        for i in range(rb)
    )
    return BlockPlan(tiles, math.ceil(K / cfg.ksub) * cfg.ksub, rb, cb)


@dataclass
class GemmStats:
    """Per-call accounting: modelled coprocessor time summed over tiles, and host wall time."""

    plan: BlockPlan | None = None
    tile_timings: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def model_time(self) -> float:
        return sum(t.total_time for t in self.tile_timings)


def _scale_only(C: MatrixView, beta) -> None:
    out = C.array()
    if beta == 0:
        out[...] = 0
    else:
        out[...] = out * out.dtype.type(beta)


def sgemm(call: GemmCall, kernel=None) -> GemmStats:
    """Single precision gemm. ``kernel`` is an :class:`InnerKernel` or a started service."""
    call.validate(Precision.SINGLE)
    kernel = kernel or InnerKernel()
    cfg: KernelConfig = kernel.cfg
    stats = GemmStats()
    t0 = time.perf_counter()
    if call.M == 0 or call.N == 0:
        return stats
    if call.K == 0 or call.alpha == 0:
        _scale_only(call.C, np.float32(call.beta))
        stats.wall_time = time.perf_counter() - t0
        return stats
    plan = plan_blocks(call.M, call.N, call.K, cfg)
    stats.plan = plan
    alpha, beta = np.float32(call.alpha), np.float32(call.beta)
    a_panels = {}
    b_panel, b_col = None, -1
    edge_buf = None
    for tile in plan.tiles:
        if tile.col != b_col:
            b_panel, b_col = pack_b(call.B, call.opB, tile.col, call.K, nr=cfg.n, ksub=cfg.ksub), tile.col
        if tile.row not in a_panels:
            a_panels[tile.row] = pack_a(call.A, call.opA, tile.row, call.K, mr=cfg.m, ksub=cfg.ksub)
        target = call.C.sub(tile.row, tile.col, tile.rows, tile.cols)
        full = (tile.rows, tile.cols) == (cfg.m, cfg.n)
        if full:
            c = target
        else:
            edge_buf = edge_buf or MatrixView.zeros(cfg.m, cfg.n)
            c = edge_buf
            if beta != 0:
                c.array()[:tile.rows, :tile.cols] = target.array()
        req = InnerKernelRequest(a_panels[tile.row], b_panel, c if beta != 0 else None, c, alpha, beta)
        _, timing = kernel.run(req)
        if not full:
            target.array()[...] = c.array()[:tile.rows, :tile.cols]
        stats.tile_timings.append(timing)
    stats.wall_time = time.perf_counter() - t0
    return stats


def dgemm_false(call: GemmCall, kernel=None) -> GemmStats:
    """Double precision interface over the single precision engine.

    Operands and scalars are rounded to single, sgemm runs, and the result is
    widened back into C; accuracy is that of sgemm.
    """
    call.validate(Precision.DOUBLE)
    single = GemmCall(
        call.opA, call.opB, call.M, call.N, call.K,
        float(np.float32(call.alpha)), float(np.float32(call.beta)),
        cast(call.A, Precision.SINGLE), cast(call.B, Precision.SINGLE), cast(call.C, Precision.SINGLE),
    )
    stats = sgemm(single, kernel)
    call.C.array()[...] = single.C.array().astype(np.float64)
    return stats


def _blas_call(transa, transb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc) -> GemmCall:
    opA, opB = OpFlag.parse(transa), OpFlag.parse(transb)
    a_rows, a_cols = (k, m) if opA.transposes else (m, k)
    b_rows, b_cols = (n, k) if opB.transposes else (k, n)
    return GemmCall(
        opA, opB, m, n, k, alpha, beta,
        MatrixView.from_blas(a, a_rows, a_cols, lda),
        MatrixView.from_blas(b, b_rows, b_cols, ldb),
        MatrixView.from_blas(c, m, n, ldc),
    )


def sgemm_(transa, transb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc, kernel=None) -> GemmStats:
    """Reference-BLAS style entry point over flat column-major float32 buffers; C is updated in place."""
    return sgemm(_blas_call(transa, transb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc), kernel)


def dgemm_(transa, transb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc, kernel=None) -> GemmStats:
    """Same as :func:`sgemm_` over float64 buffers, computed in single precision."""
    return dgemm_false(_blas_call(transa, transb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc), kernel)
