"""Coprocessor side of the accelerated gemm: tasks, column iterations, K iterations.

Each core owns ``cols_per_core`` consecutive columns of the task result and
holds them in its RES2 buffer. Partial results travel around the ring
``j -> j+1``; the partial a core computes on K iteration ``it`` is destined for
core ``(j - it - 1) mod cores``, so after ``cores`` hops every block has
collected a contribution from every core and arrives at its owner.

Two buffers carry the travelling partials: RES1 and the current column window
of RES2. Even iterations read RES1 and store into the successor's RES2 window;
odd iterations read the RES2 window and store into the successor's RES1. The
last iteration belongs to the owner, which writes its own window in place.
Before a column iteration each core hands its (possibly accumulated) window to
its successor's RES1, which is where the chain for that block starts.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation, DeviceFault
from .layout import DEFAULT_KERNEL, F32, HCLayout, KernelConfig
from .mesh import BARRIER, Mesh, SharedExternalRAM

CLEAR_AND_RUN = 0
RUN = 1
RUN_AND_SEND = 2
SINGLE_TASK = 3
COMMANDS = (CLEAR_AND_RUN, RUN, RUN_AND_SEND, SINGLE_TASK)


def destination(core: int, iter_k: int, cores: int) -> int:
    """Owner of the partial block that ``core`` computes on K iteration ``iter_k``."""
    return (core - iter_k - 1) % cores


def sub_matmul(a: np.ndarray, b4: np.ndarray, prev: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """``out = prev + a @ b4`` in float32 with a fixed summation order.

    Per output column the previous value is loaded into the accumulator and
    the k products are added one at a time in ascending k, each product and
    each sum rounded to single precision. The 32-row strips of the hardware
    routine are independent, so a whole column is processed at once.
    """
    products = a[:, :, None] * b4[None, :, :]
    acc = np.array(prev, dtype=np.float32, copy=True)
    for k in range(a.shape[1]):
        acc += products[:, k, :]
    if out is not None:
        out[...] = acc
    return acc


def _cm(flat: np.ndarray, rows: int, cols: int) -> np.ndarray:
    # column-major 2-D view of a flat buffer
    return flat.reshape(cols, rows).T


class ControlBlock:
    """``command``, ``selector`` and ``done_flag`` words living in shared RAM."""

    def __init__(self, hc: SharedExternalRAM, offset: int):
        hc.check(offset, HCLayout.CONTROL_BYTES)
        self._words = hc.data[offset:offset + HCLayout.CONTROL_BYTES].view(np.int32)

    @property
    def command(self) -> int:
        return int(self._words[0])

    @command.setter
    def command(self, value: int) -> None:
        self._words[0] = value

    @property
    def selector(self) -> int:
        return int(self._words[1])

    @selector.setter
    def selector(self, value: int) -> None:
        if value not in (0, 1):
            raise ContractViolation(f"selector must be 0 or 1, got {value}")
        self._words[1] = value

    @property
    def done_flag(self) -> bool:
        return bool(self._words[2])

    @done_flag.setter
    def done_flag(self, value: bool) -> None:
        self._words[2] = int(bool(value))


ENGINES = ("cores", "lockstep")


class DeviceKernel:
    """The kernel image loaded onto every core of ``mesh``.

    ``engine="cores"`` runs one generator per core through the mesh scheduler.
    ``engine="lockstep"`` performs each phase for all cores with batched array
    operations over the same memories; stores, barriers and ledger charges are
    identical, and so are the results, bit for bit.
    """

    def __init__(self, mesh: Mesh, cfg: KernelConfig = DEFAULT_KERNEL, layout: HCLayout | None = None,
                 engine: str = "lockstep"):
        if engine not in ENGINES:
            raise ContractViolation(f"unknown engine {engine!r}")
        self.engine = engine
        if mesh.ncores != cfg.cores:
            raise ContractViolation(f"kernel built for {cfg.cores} cores, mesh has {mesh.ncores}")
        self.mesh = mesh
        self.cfg = cfg
        self.layout = layout or HCLayout(cfg)
        for j in range(cfg.cores):
            for name, size in cfg.region_sizes().items():
                mesh.allocate_region(j, name, size)
            spare = mesh.cores[j].size - mesh.cores[j].used_bytes
            if spare > 0:
                mesh.allocate_region(j, "STACK", spare)
        hc = mesh.hc
        lay = self.layout
        for sel in (0, 1):
            hc.allocate(f"a_buf{sel}", lay.a_buf(sel), lay.a_bytes)
            hc.allocate(f"b_buf{sel}", lay.b_buf(sel), lay.b_bytes)
        hc.allocate("c_buf", lay.c_buf, cfg.result_bytes)
        hc.allocate("control", lay.control, HCLayout.CONTROL_BYTES)
        self.control = ControlBlock(hc, lay.control)
        self.control.done_flag = True

        m, kpc, n, nsub = cfg.m, cfg.k_per_core, cfg.n, cfg.nsub
        self._a = [_cm(mesh.local(j, "A"), m, kpc) for j in range(cfg.cores)]
        self._b = [mesh.local(j, "B").reshape(kpc, n) for j in range(cfg.cores)]
        self._res1 = [_cm(mesh.local(j, "RES1"), m, nsub) for j in range(cfg.cores)]
        self._res2_flat = [mesh.local(j, "RES2") for j in range(cfg.cores)]
        self._sub_cycles = int(round(m * kpc * nsub / mesh.params.fma_per_cycle_per_core))
        self._sub_flops = 2 * m * kpc * nsub

        # whole-mesh views for the lockstep engine, laid out (core, column, row)
        C = cfg.cores
        self._a_all = mesh.local_all("A").reshape(C, kpc, m)
        self._b_all = mesh.local_all("B").reshape(C, kpc, n)
        self._res1_all = mesh.local_all("RES1").reshape(C, nsub, m)
        self._res2_all = mesh.local_all("RES2")
        self._core_idx = np.arange(C)

    # accessors for the host side and for tests

    def res1(self, core: int) -> np.ndarray:
        return self._res1[core]

    def res2(self, core: int) -> np.ndarray:
        return _cm(self._res2_flat[core], self.cfg.m, self.cfg.cols_per_core)

    def window(self, core: int, col_iter: int) -> np.ndarray:
        return self.res2(core)[:, col_iter * self.cfg.nsub:(col_iter + 1) * self.cfg.nsub]

    def owned_columns(self, core: int, col_iter: int) -> range:
        start = core * self.cfg.cols_per_core + col_iter * self.cfg.nsub
        return range(start, start + self.cfg.nsub)

    # per-core programs

    def _stage(self, j: int, selector: int) -> None:
        cfg, lay = self.cfg, self.layout
        a_len = F32 * cfg.m * cfg.k_per_core
        b_len = F32 * cfg.k_per_core * cfg.n
        self.mesh.core_fetch(j, lay.a_buf(selector) + j * a_len, "A", a_len)
        self.mesh.core_fetch(j, lay.b_buf(selector) + j * b_len, "B", b_len)

    def _k_program(self, j: int, col: int, it: int):
        cfg = self.cfg
        d = destination(j, it, cfg.cores)
        c0 = d * cfg.cols_per_core + col * cfg.nsub
        b4 = self._b[j][:, c0:c0 + cfg.nsub]
        win = self.window(j, col)
        prev = self._res1[j] if it % 2 == 0 else win
        if it == cfg.cores - 1:
            sub_matmul(self._a[j], b4, prev, out=win)
        else:
            out = sub_matmul(self._a[j], b4, prev)
            if it % 2 == 0:
                region, offset = "RES2", F32 * cfg.m * cfg.nsub * col
            else:
                region, offset = "RES1", 0
            self.mesh.remote_write(j, (j + 1) % cfg.cores, region, offset, out.ravel(order="F"))
        self.mesh.compute(j, self._sub_cycles, self._sub_flops)
        yield BARRIER

    def _column_program(self, j: int, col: int):
        cfg = self.cfg
        handoff = self.window(j, col).ravel(order="F")
        self.mesh.remote_write(j, (j + 1) % cfg.cores, "RES1", 0, handoff, overlapped=False)
        yield BARRIER
        for it in range(cfg.cores):
            yield from self._k_program(j, col, it)

    def _writeback(self, j: int) -> None:
        nbytes = F32 * self.cfg.m * self.cfg.cols_per_core
        self.mesh.core_store(j, "RES2", self.layout.c_buf + j * nbytes, nbytes)

    def _task_program(self, j: int, command: int, selector: int):
        self._stage(j, selector)
        if command in (CLEAR_AND_RUN, SINGLE_TASK):
            self._res2_flat[j][...] = 0
            self.mesh.compute(j, self._res2_flat[j].size)
        yield BARRIER
        for col in range(self.cfg.column_iterations):
            yield from self._column_program(j, col)
        if command in (RUN_AND_SEND, SINGLE_TASK):
            self._writeback(j)

    # lockstep engine: one call performs a phase on every core

    def _window_all(self, col: int) -> np.ndarray:
        w = self.cfg.m * self.cfg.nsub
        return self._res2_all[:, col * w:(col + 1) * w].reshape(self.cfg.cores, self.cfg.nsub, self.cfg.m)

    def _lockstep_k(self, col: int, it: int) -> None:
        cfg = self.cfg
        dest = (self._core_idx - it - 1) % cfg.cores
        cols = (dest * cfg.cols_per_core + col * cfg.nsub)[:, None] + np.arange(cfg.nsub)[None, :]
        b4 = np.take_along_axis(self._b_all, cols[:, None, :], axis=2)  # (core, k, c)
        win = self._window_all(col)
        prev = self._res1_all if it % 2 == 0 else win
        products = self._a_all[:, :, None, :] * b4[:, :, :, None]  # (core, k, c, row)
        acc = np.array(prev, dtype=np.float32, copy=True)
        for k in range(cfg.k_per_core):
            acc += products[:, k]
        if it == cfg.cores - 1:
            win[...] = acc
        elif it % 2 == 0:
            self.mesh.ring_write("RES2", F32 * cfg.m * cfg.nsub * col, acc.reshape(cfg.cores, -1))
        else:
            self.mesh.ring_write("RES1", 0, acc.reshape(cfg.cores, -1))
        self.mesh.compute_all(self._sub_cycles, self._sub_flops)
        self.mesh.barrier()

    def _lockstep_column(self, col: int) -> None:
        self.mesh.ring_write("RES1", 0, self._window_all(col).reshape(self.cfg.cores, -1), overlapped=False)
        self.mesh.barrier()
        for it in range(self.cfg.cores):
            self._lockstep_k(col, it)

    def _lockstep_task(self, command: int, selector: int) -> None:
        for j in range(self.cfg.cores):
            self._stage(j, selector)
        if command in (CLEAR_AND_RUN, SINGLE_TASK):
            self._res2_all[...] = 0
            self.mesh.compute_all(self._res2_all.shape[1])
        self.mesh.barrier()
        for col in range(self.cfg.column_iterations):
            self._lockstep_column(col)
        if command in (RUN_AND_SEND, SINGLE_TASK):
            for j in range(self.cfg.cores):
                self._writeback(j)

    # operations

    def epiphany_task(self, control: ControlBlock | None = None) -> None:
        """Run one task as directed by the shared command and selector words."""
        control = control or self.control
        command, selector = control.command, control.selector
        if command not in COMMANDS:
            raise DeviceFault(f"invalid command {command}")
        if selector not in (0, 1):
            raise DeviceFault(f"invalid buffer selector {selector}")
        control.done_flag = False
        if self.engine == "lockstep":
            self._lockstep_task(command, selector)
        else:
            self.mesh.run([self._task_program(j, command, selector) for j in range(self.cfg.cores)])
        control.done_flag = True

    def column_iteration(self, col_iter_idx: int) -> None:
        if not 0 <= col_iter_idx < self.cfg.column_iterations:
            raise ContractViolation(f"column iteration {col_iter_idx} out of range")
        if self.engine == "lockstep":
            self._lockstep_column(col_iter_idx)
        else:
            self.mesh.run([self._column_program(j, col_iter_idx) for j in range(self.cfg.cores)])

    def k_iteration(self, col_iter_idx: int, iter_k: int) -> None:
        if not 0 <= iter_k < self.cfg.cores:
            raise ContractViolation(f"K iteration {iter_k} out of range")
        if self.engine == "lockstep":
            self._lockstep_k(col_iter_idx, iter_k)
        else:
            self.mesh.run([self._k_program(j, col_iter_idx, iter_k) for j in range(self.cfg.cores)])

    def load_task_inputs(self, selector: int = 0) -> None:
        """Copy every core's slices of the staged task block into local memory."""
        for j in range(self.cfg.cores):
            self._stage(j, selector)

    def writeback_results(self) -> None:
        for j in range(self.cfg.cores):
            self._writeback(j)

    def read_result(self) -> np.ndarray:
        """The assembled ``m x n`` result block in shared RAM (column-major, not accounted)."""
        flat = self.mesh.hc.f32(self.layout.c_buf, self.cfg.m * self.cfg.n)
        return _cm(flat, self.cfg.m, self.cfg.n)
