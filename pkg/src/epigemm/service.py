"""Long-lived offload service owning the coprocessor.

Coprocessor setup is expensive and must not be repeated per BLAS call, so a
service context initializes the mesh and loads the kernel once, then serves
micro-kernel requests handed over through a host-host shared region (the
request slot). The client copies its operands into the slot, raises
``request_ready`` and waits for ``response_ready``; the service runs the
inner kernel and writes the result into the slot's output area.
"""

from __future__ import annotations

import enum
import struct
import threading
import time

import numpy as np

from .costmodel import TimingBreakdown, model_timing
from .errors import RequestRejected, ServiceError
from .host import InnerKernel, InnerKernelRequest
from .layout import DEFAULT_KERNEL, F32, KernelConfig
from .matrix import MatrixView
from .mesh import CostParams, MeshConfig

# m, n, K, alpha, beta, has_c_in, c_in strides, c_out strides
HEADER = struct.Struct("<3i2fi4q")
HEADER_BYTES = 64


def request_bytes(cfg: KernelConfig, K: int, beta: float) -> tuple[int, int]:
    """Bytes copied into and out of the slot for one request."""
    inbound = HEADER.size + F32 * (cfg.m * K + K * cfg.n)
    if beta != 0:
        inbound += cfg.result_bytes
    return inbound, cfg.result_bytes


class RequestSlot:
    """Single-request host-host shared region with its two flags."""

    def __init__(self, capacity: int = 64 * 2**20):
        self.capacity = capacity
        self.data = np.zeros(capacity, dtype=np.uint8)
        self.request_ready = threading.Event()
        self.response_ready = threading.Event()
        self.trace: list[str] = []
        self.error: BaseException | None = None
        self.timing: TimingBreakdown | None = None
        self.profile = None

    def f32(self, offset: int, count: int) -> np.ndarray:
        end = offset + F32 * count
        if end > self.capacity:
            raise ServiceError(f"request needs {end} bytes, slot holds {self.capacity}")
        return self.data[offset:end].view(np.float32)

    def areas(self, cfg: KernelConfig, K: int) -> dict[str, int]:
        a = HEADER_BYTES
        b = a + F32 * cfg.m * K
        c_in = b + F32 * K * cfg.n
        c_out = c_in + cfg.result_bytes
        return {"a1": a, "b1": b, "c_in": c_in, "c_out": c_out, "end": c_out + cfg.result_bytes}

    def raise_flag(self, name: str) -> None:
        self.trace.append(name)
        getattr(self, name).set()


class ServiceState(enum.Enum):
    STOPPED = "stopped"
    READY = "ready"
    BUSY = "busy"


class OffloadService:
    """The coprocessor service. ``run`` is an alias of :meth:`submit` so the
    service can stand in for an :class:`~epigemm.host.InnerKernel`."""

    def __init__(self, mesh_config: MeshConfig | None = None, params: CostParams | None = None,
                 cfg: KernelConfig = DEFAULT_KERNEL, engine: str = "lockstep", slot_bytes: int = 64 * 2**20):
        self._mesh_config = mesh_config
        self._params = params
        self.cfg = cfg
        self.engine = engine
        self._slot_bytes = slot_bytes
        self.state = ServiceState.STOPPED
        self.kernel: InnerKernel | None = None
        self.slot: RequestSlot | None = None
        self.kernel_loaded = False
        self.init_wall_time = 0.0
        self._thread: threading.Thread | None = None
        self._stopping = threading.Event()
        self._client = threading.Lock()
        self._started_once = False

    # lifecycle

    def start(self) -> "OffloadService":
        if self.state is not ServiceState.STOPPED or self._started_once:
            raise ServiceError("service already started")
        t0 = time.perf_counter()
        self.kernel = InnerKernel(self._mesh_config, self._params, self.cfg, engine=self.engine)
        self.kernel_loaded = True
        self.slot = RequestSlot(self._slot_bytes)
        self._stopping.clear()
        self._thread = threading.Thread(target=self._serve, name="offload-service", daemon=True)
        self._thread.start()
        self.init_wall_time = time.perf_counter() - t0
        self._started_once = True
        self.state = ServiceState.READY
        return self

    def stop(self) -> None:
        if self.state is ServiceState.STOPPED:
            raise ServiceError("service is not running")
        if not self._client.acquire(blocking=False):
            raise ServiceError("cannot stop while a request is in flight")
        try:
            self._stopping.set()
            self._thread.join()
            self._thread = None
            self.kernel = None
            self.kernel_loaded = False
            self.state = ServiceState.STOPPED
        finally:
            self._client.release()

    def __enter__(self):
        return self.start() if self.state is ServiceState.STOPPED else self

    def __exit__(self, *exc):
        if self.state is not ServiceState.STOPPED:
            self.stop()

    @property
    def ledger(self):
        return self.kernel.ledger if self.kernel else None

    # client side

    def submit(self, req: InnerKernelRequest) -> tuple[MatrixView, TimingBreakdown]:
        if self.state is ServiceState.STOPPED:
            raise ServiceError("service is stopped")
        if not self._client.acquire(blocking=False):
            raise RequestRejected("a request is already outstanding")
        try:
            self.state = ServiceState.BUSY
            req.validate(self.cfg)
            return self._roundtrip(req)
        finally:
            self.state = ServiceState.READY
            self._client.release()

    run = submit

    def _roundtrip(self, req: InnerKernelRequest) -> tuple[MatrixView, TimingBreakdown]:
        cfg, slot, K = self.cfg, self.slot, req.K
        areas = slot.areas(cfg, K)
        has_c = req.beta != 0
        c_in_strides = (req.c_in.row_stride, req.c_in.col_stride) if has_c else (0, 0)
        HEADER.pack_into(slot.data, 0, cfg.m, cfg.n, K, req.alpha, req.beta, int(has_c),
                         *c_in_strides, req.c_out.row_stride, req.c_out.col_stride)
        slot.f32(areas["a1"], cfg.m * K)[...] = req.a1.array().ravel(order="F")
        slot.f32(areas["b1"], K * cfg.n)[...] = req.b1.array().ravel(order="C")
        if has_c:
            slot.f32(areas["c_in"], cfg.m * cfg.n)[...] = req.c_in.array().ravel(order="F")
        slot.error = None
        slot.raise_flag("request_ready")
        slot.response_ready.wait()
        slot.response_ready.clear()
        if slot.error is not None:
            raise slot.error
        out = slot.f32(areas["c_out"], cfg.m * cfg.n).reshape(cfg.n, cfg.m).T
        req.c_out.array()[...] = out
        inbound, outbound = request_bytes(cfg, K, req.beta)
        profile = slot.profile.with_handoff(inbound + outbound)
        kernel = self.kernel
        timing = model_timing(profile, kernel.mesh.config.clock_hz, kernel.params, kernel.overlap)
        return req.c_out, timing

    # service side

    def _serve(self) -> None:
        slot = self.slot
        while not self._stopping.is_set():
            if not slot.request_ready.wait(timeout=0.05):
                continue
            slot.request_ready.clear()
            try:
                self._handle(slot)
            except BaseException as exc:  # handed back to the client thread
                slot.error = exc
            slot.raise_flag("response_ready")

    def _handle(self, slot: RequestSlot) -> None:
        m, n, K, alpha, beta, has_c, *_ = HEADER.unpack_from(slot.data, 0)
        areas = slot.areas(self.cfg, K)
        a1 = MatrixView(slot.f32(areas["a1"], m * K), m, K, 1, m)
        b1 = MatrixView(slot.f32(areas["b1"], K * n), K, n, n, 1)
        c_in = MatrixView(slot.f32(areas["c_in"], m * n), m, n, 1, m) if has_c else None
        c_out = MatrixView(slot.f32(areas["c_out"], m * n), m, n, 1, m)
        _, slot.timing = self.kernel.run(InnerKernelRequest(a1, b1, c_in, c_out, alpha, beta))
        slot.profile = self.kernel.last_profile


def service_start(mesh_config: MeshConfig | None = None, params: CostParams | None = None, **kwargs) -> OffloadService:
    return OffloadService(mesh_config, params, **kwargs).start()
