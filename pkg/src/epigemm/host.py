"""Host half of the micro-kernel: K slicing, double-buffered staging, command sequencing.

The host splits ``a1`` (m x K, column-major) and ``b1`` (K x n, row-major)
into blocks of ``ksub`` along k. Block ``t`` goes to shared-RAM buffer pair
``t % 2`` and the ``selector`` word tells the device which pair to read, so
the host can write block ``t + 1`` while task ``t`` runs. The device keeps
the running sum in its local memory; the result is read back once, after
the last task, and scaled on the host.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .costmodel import KernelProfile, TaskRecord, TimingBreakdown, model_timing
from .device import CLEAR_AND_RUN, RUN, RUN_AND_SEND, SINGLE_TASK, DeviceKernel
from .errors import ContractViolation, DeviceFault
from .layout import DEFAULT_KERNEL, KernelConfig
from .matrix import MatrixView
from .mesh import CostParams, Mesh, MeshConfig


def command_schedule(num_tasks: int) -> list[int]:
    """Clear on the first task, send results on the last, accumulate in between."""
    if num_tasks < 1:
        raise ContractViolation("at least one task is required")
    if num_tasks == 1:
        return [SINGLE_TASK]
    return [CLEAR_AND_RUN] + [RUN] * (num_tasks - 2) + [RUN_AND_SEND]


@dataclass
class InnerKernelRequest:
    a1: MatrixView
    b1: MatrixView
    c_in: MatrixView | None
    c_out: MatrixView
    alpha: float = 1.0
    beta: float = 0.0

    @property
    def K(self) -> int:
        return self.a1.cols

    def validate(self, cfg: KernelConfig = DEFAULT_KERNEL) -> None:
        m, n = cfg.m, cfg.n
        if self.a1.shape[0] != m or self.b1.shape[1] != n:
            raise ContractViolation(f"a1 must be {m} x K and b1 K x {n}, got {self.a1.shape} and {self.b1.shape}")
        if self.b1.rows != self.K:
            raise ContractViolation(f"inner dimensions differ: {self.K} vs {self.b1.rows}")
        if self.K <= 0 or self.K % cfg.ksub:
            raise ContractViolation(f"K={self.K} must be a positive multiple of {cfg.ksub}")
        if self.c_out.shape != (m, n):
            raise ContractViolation(f"c_out must be {m} x {n}")
        if self.beta != 0 and (self.c_in is None or self.c_in.shape != (m, n)):
            raise ContractViolation(f"c_in must be {m} x {n} when beta != 0")
        for name in ("a1", "b1", "c_out"):
            if getattr(self, name).dtype != np.float32:
                raise ContractViolation(f"{name} must be single precision")


def postprocess(acc: np.ndarray, alpha, beta, c_in: MatrixView | None, c_out: MatrixView) -> None:
    """``c_out = alpha*acc + beta*c_in`` in single precision, honouring both views' strides.

    ``beta == 0`` leaves ``c_in`` unread, ``alpha == 0`` ignores ``acc``.
    """
    alpha, beta = np.float32(alpha), np.float32(beta)
    out = c_out.array()
    if alpha == 0:
        scaled = np.zeros(acc.shape, dtype=np.float32)
    else:
        scaled = alpha * acc.astype(np.float32, copy=False)
    if beta != 0:
        scaled = scaled + beta * c_in.array().astype(np.float32, copy=False)
    out[...] = scaled


class InnerKernel:
    """A loaded coprocessor plus the host loop that drives it.

    ``overlap=False`` stages each block only after the previous task has
    finished. Results are the same either way; only the timing model changes.
    """

    def __init__(self, mesh_config: MeshConfig | None = None, params: CostParams | None = None,
                 cfg: KernelConfig = DEFAULT_KERNEL, engine: str = "lockstep", overlap: bool = True):
        mesh_config = mesh_config or MeshConfig(cores=cfg.cores)
        self.cfg = cfg
        self.mesh = Mesh(mesh_config, params)
        self.device = DeviceKernel(self.mesh, cfg, engine=engine)
        self.overlap = overlap
        self.last_profile: KernelProfile | None = None

    @property
    def params(self) -> CostParams:
        return self.mesh.params

    @property
    def ledger(self):
        return self.mesh.ledger

    def _stage(self, req: InnerKernelRequest, t: int, selector: int) -> int:
        ks, lay = self.cfg.ksub, self.device.layout
        a_blk = req.a1.array()[:, t * ks:(t + 1) * ks]
        b_blk = req.b1.array()[t * ks:(t + 1) * ks, :]
        self.mesh.host_write(lay.a_buf(selector), np.asarray(a_blk, dtype=np.float32).ravel(order="F"))
        self.mesh.host_write(lay.b_buf(selector), np.asarray(b_blk, dtype=np.float32).ravel(order="C"))
        return self.cfg.task_input_bytes

    def _issue(self, command: int, selector: int) -> None:
        control = self.device.control
        if not control.done_flag:
            raise DeviceFault("host wrote control words while the device was busy")
        control.command = command
        control.selector = selector
        self.device.epiphany_task(control)

    def run(self, req: InnerKernelRequest) -> tuple[MatrixView, TimingBreakdown]:
        req.validate(self.cfg)
        cfg = self.cfg
        ntasks = req.K // cfg.ksub
        commands = command_schedule(ntasks)
        self.mesh.reset_ledger()
        records = []
        staged = self._stage(req, 0, 0)
        for t, command in enumerate(commands):
            before = self.mesh.ledger.snapshot()
            nxt = 0
            if self.overlap and t + 1 < ntasks:
                nxt = self._stage(req, t + 1, (t + 1) % 2)
            self._issue(command, t % 2)
            if not self.overlap and t + 1 < ntasks:
                nxt = self._stage(req, t + 1, (t + 1) % 2)
            delta = self.mesh.ledger.since(before)
            records.append(TaskRecord(staged, delta.max_core_cycles, delta.hc_to_core_bytes, delta.core_to_hc_bytes))
            staged = nxt
        raw = self.mesh.host_read(self.device.layout.c_buf, cfg.result_bytes).view(np.float32)
        acc = raw.reshape(cfg.n, cfg.m).T
        postprocess(acc, req.alpha, req.beta, req.c_in, req.c_out)
        self.last_profile = KernelProfile(tuple(records), cfg.result_bytes, self.mesh.ledger.flop_count)
        timing = model_timing(self.last_profile, self.mesh.config.clock_hz, self.params, self.overlap)
        return req.c_out, timing

    __call__ = run


def sgemm_inner(req: InnerKernelRequest, kernel: InnerKernel | None = None) -> tuple[MatrixView, TimingBreakdown]:
    """Run one ``m x n x K`` micro-kernel call, on a fresh in-process coprocessor unless one is given."""
    return (kernel or InnerKernel()).run(req)
