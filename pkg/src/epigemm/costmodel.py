"""Analytic overlap cost model and its calibration against measured kernel timings.

Per task the host stages the next input block while the coprocessor works on
the current one, so a steady-state task costs ``max(staging, device)`` plus a
fixed host/device handshake. Only the first block is staged without overlap
and the result is read back once at the end:

    total = stage[0] + sum_t (max(stage[t+1], device[t]) + handshake) + retrieve

Device time per task is its shared-RAM traffic at ``bw_core_hc`` plus the
slowest core's cycle count at the mesh clock.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import CalibrationError
from .mesh import CostParams


@dataclass(frozen=True)
class TaskRecord:
    stage_bytes: int
    device_cycles: int
    hc_to_core_bytes: int
    core_to_hc_bytes: int


@dataclass(frozen=True)
class KernelProfile:
    """Everything the cost model needs from one inner-kernel run."""

    tasks: tuple
    retrieve_bytes: int
    flop_count: int
    handoff_bytes: int = 0

    def with_handoff(self, nbytes: int) -> "KernelProfile":
        return replace(self, handoff_bytes=nbytes)


@dataclass(frozen=True)
class TimingBreakdown:
    input_stage_time: float
    device_time: float
    post_time: float
    total_time: float
    ir: float
    or_: float
    handoff_time: float = 0.0

    def gflops(self, flops: float) -> float:
        return flops / self.total_time / 1e9


def model_timing(profile: KernelProfile, clock_hz: float, params: CostParams, overlap: bool = True) -> TimingBreakdown:
    stage = [t.stage_bytes / params.bw_host_write_hc for t in profile.tasks]
    device = [
        (t.hc_to_core_bytes + t.core_to_hc_bytes) / params.bw_core_hc + t.device_cycles / clock_hz
        for t in profile.tasks
    ]
    post = profile.retrieve_bytes / params.bw_host_read_hc
    h = params.handshake_s
    if overlap:
        total = stage[0] if stage else 0.0
        for t, d in enumerate(device):
            nxt = stage[t + 1] if t + 1 < len(stage) else 0.0
            total += max(nxt, d) + h
    else:
        total = sum(stage) + sum(device) + h * len(device)
    total += post
    handoff = profile.handoff_bytes / params.bw_hh if profile.handoff_bytes else 0.0
    total += handoff
    input_time = sum(stage)
    return TimingBreakdown(
        input_stage_time=input_time,
        device_time=sum(device),
        post_time=post,
        total_time=total,
        ir=input_time / total,
        or_=post / total,
        handoff_time=handoff,
    )


@dataclass(frozen=True)
class Targets:
    """Measured timings to fit: the three kernel rows, the total, optionally the out-of-process total."""

    input_time: float
    device_time: float
    post_time: float
    total_time: float
    service_total_time: float | None = None

    def __post_init__(self):
        for name in ("input_time", "device_time", "post_time", "total_time"):
            if not getattr(self, name) > 0:
                raise CalibrationError(f"target {name} must be positive")

    @classmethod
    def parse(cls, text: str) -> "Targets":
        values = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            values[key.strip()] = float(value)
        try:
            return cls(**values)
        except TypeError as exc:
            raise CalibrationError(f"bad targets: {exc}") from None


# m=192, n=256, K=4096 reference runs: in-process kernel and the out-of-process service
REFERENCE_TARGETS = Targets(
    input_time=0.094648,
    device_time=0.105652,
    post_time=0.005272,
    total_time=0.114114,
    service_total_time=0.158303,
)


def calibrate(profile: KernelProfile, clock_hz: float, targets: Targets,
              base: CostParams | None = None) -> CostParams:
    """Solve the free rates so ``model_timing(profile)`` reproduces ``targets``.

    Each row pins one parameter in closed form: staging fixes host write
    bandwidth, device time fixes core/shared-RAM bandwidth once compute cycles
    are subtracted, retrieval fixes host read bandwidth, the in-process total
    fixes the per-task handshake, and the service total fixes the host-host
    copy bandwidth over ``profile.handoff_bytes``.
    """
    base = base or CostParams()
    tasks = profile.tasks
    if not tasks:
        raise CalibrationError("profile has no tasks")
    stage_bytes = sum(t.stage_bytes for t in tasks)
    transfer = sum(t.hc_to_core_bytes + t.core_to_hc_bytes for t in tasks)
    compute = sum(t.device_cycles for t in tasks) / clock_hz
    if targets.device_time <= compute:
        raise CalibrationError(
            f"device target {targets.device_time:g}s is below pure compute time {compute:g}s"
        )
    params = replace(
        base,
        bw_host_write_hc=stage_bytes / targets.input_time,
        bw_core_hc=transfer / (targets.device_time - compute),
        bw_host_read_hc=profile.retrieve_bytes / targets.post_time,
        handshake_s=0.0,
    )
    untimed = model_timing(replace(profile, handoff_bytes=0), clock_hz, params)
    slack = targets.total_time - untimed.total_time
    if slack < 0:
        raise CalibrationError(
            f"total target {targets.total_time:g}s is shorter than the overlapped rows allow ({untimed.total_time:g}s)"
        )
    params = replace(params, handshake_s=slack / len(tasks))
    if targets.service_total_time is not None:
        extra = targets.service_total_time - targets.total_time
        if extra <= 0 or not profile.handoff_bytes:
            raise CalibrationError("service total must exceed the in-process total and handoff bytes must be known")
        params = replace(params, bw_hh=profile.handoff_bytes / extra)
    return params
