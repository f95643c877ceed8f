"""Deterministic functional and cost simulation of a scratchpad-mesh coprocessor.

Cores run as Python generators. A core yields whenever it reaches a barrier;
the scheduler steps every core of the workgroup once per phase, in core order,
and then applies the barrier. Stores into another core's memory are buffered
and only land when that barrier completes, so the order in which cores are
stepped inside a phase can never change a result.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import CapacityExceeded, ContractViolation, DeadlockError, NameCollision, OutOfBounds

BARRIER = object()


@dataclass(frozen=True)
class MeshConfig:
    cores: int = 16
    local_mem_bytes: int = 32768
    bank_bytes: int = 8192
    banks: int = 4
    clock_hz: float = 600e6
    hc_ram_bytes: int = 32 * 2**20

    def __post_init__(self):
        if self.cores < 1:
            raise ContractViolation("a mesh needs at least one core")
        if self.banks * self.bank_bytes != self.local_mem_bytes:
            raise ContractViolation("banks * bank_bytes must equal local_mem_bytes")
        if self.clock_hz <= 0:
            raise ContractViolation("clock_hz must be positive")

    @property
    def grid(self) -> tuple[int, int]:
        rows = int(math.isqrt(self.cores))
        while self.cores % rows:
            rows -= 1
        return rows, self.cores // rows


@dataclass(frozen=True)
class CostParams:
    """Rates used to turn ledger counts into model seconds.

    The bandwidth defaults are nominal placeholders; calibrated values live in
    the packaged config file (see :func:`default_cost_params`).
    """

    fma_per_cycle_per_core: float = 1.0
    remote_store_overlapped: bool = True
    barrier_cycles: int = 50
    bw_host_write_hc: float = 100e6
    bw_host_read_hc: float = 100e6
    bw_core_hc: float = 100e6
    bw_hh: float = 1e9
    handshake_s: float = 0.0

    def __post_init__(self):
        for name in ("fma_per_cycle_per_core", "bw_host_write_hc", "bw_host_read_hc", "bw_core_hc", "bw_hh"):
            if not getattr(self, name) > 0:
                raise ContractViolation(f"{name} must be positive")
        if self.barrier_cycles < 0 or self.handshake_s < 0:
            raise ContractViolation("barrier_cycles and handshake_s must be non-negative")

    def scaled_bandwidths(self, factor: float) -> "CostParams":
        return replace(
            self,
            bw_host_write_hc=self.bw_host_write_hc * factor,
            bw_host_read_hc=self.bw_host_read_hc * factor,
            bw_core_hc=self.bw_core_hc * factor,
            bw_hh=self.bw_hh * factor,
        )


# config file ---------------------------------------------------------------

_MESH_KEYS = ("cores", "local_mem_bytes", "clock_hz")
_COST_KEYS = tuple(f.name for f in fields(CostParams))


def _coerce(text: str, like):
    if isinstance(like, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(like, int):
        return int(text)
    return float(text)


def parse_config(text: str) -> tuple[MeshConfig, CostParams]:
    mesh_kw, cost_kw = {}, {}
    mesh_defaults, cost_defaults = MeshConfig(), CostParams()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in _MESH_KEYS:
            mesh_kw[key] = _coerce(value, getattr(mesh_defaults, key))
        elif key in _COST_KEYS:
            cost_kw[key] = _coerce(value, getattr(cost_defaults, key))
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    if "local_mem_bytes" in mesh_kw:
        mesh_kw["bank_bytes"] = mesh_kw["local_mem_bytes"] // mesh_defaults.banks
    return MeshConfig(**mesh_kw), CostParams(**cost_kw)


def format_config(mesh: MeshConfig, params: CostParams, header: str = "") -> str:
    lines = [f"# {h}" for h in header.splitlines()] if header else []
    for key in _MESH_KEYS:
        lines.append(f"{key}={getattr(mesh, key)!r}")
    for key in _COST_KEYS:
        value = getattr(params, key)
        lines.append(f"{key}={str(value).lower() if isinstance(value, bool) else repr(value)}")
    return "\n".join(lines) + "\n"


def load_config(path) -> tuple[MeshConfig, CostParams]:
    return parse_config(Path(path).read_text())


def save_config(path, mesh: MeshConfig, params: CostParams, header: str = "") -> None:
    Path(path).write_text(format_config(mesh, params, header))


DEFAULT_CONFIG_PATH = Path(__file__).with_name("data") / "calibrated.cfg"


def default_cost_params() -> tuple[MeshConfig, CostParams]:
    """Mesh and cost parameters fitted to the reference kernel timings."""
    return load_config(DEFAULT_CONFIG_PATH)


# memories ------------------------------------------------------------------

@dataclass(frozen=True)
class Region:
    name: str
    offset: int
    length: int

    @property
    def end(self) -> int:
        return self.offset + self.length


class CoreLocalMemory:
    """One core's scratchpad: a flat byte array plus a named region map.

    Bank 0 is reserved for kernel code on construction; later regions are
    placed at the lowest free offset after it.
    """

    def __init__(self, size: int = 32768, code_bytes: int = 8192, data: np.ndarray | None = None):
        if not 0 < code_bytes <= size:
            raise ContractViolation("code region must fit in local memory")
        self.size = size
        self.data = np.zeros(size, dtype=np.uint8) if data is None else data
        self.regions: dict[str, Region] = {"CODE": Region("CODE", 0, code_bytes)}
        self._free = code_bytes

    def allocate(self, name: str, length: int) -> Region:
        if length <= 0:
            raise ContractViolation("region length must be positive")
        if name in self.regions:
            raise NameCollision(f"region {name!r} already allocated")
        if self._free + length > self.size:
            raise CapacityExceeded(
                f"region {name!r} of {length} bytes at offset {self._free} exceeds {self.size}-byte local memory"
            )
        region = Region(name, self._free, length)
        self.regions[name] = region
        self._free += length
        return region

    @property
    def used_bytes(self) -> int:
        return sum(r.length for r in self.regions.values())

    def region(self, name: str) -> Region:
        try:
            return self.regions[name]
        except KeyError:
            raise OutOfBounds(f"no region {name!r}") from None

    def f32(self, name: str) -> np.ndarray:
        r = self.region(name)
        return self.data[r.offset:r.end].view(np.float32)


class SharedExternalRAM:
    """Byte-addressed RAM visible to the host and every core."""

    def __init__(self, size: int = 32 * 2**20):
        self.size = size
        self.data = np.zeros(size, dtype=np.uint8)
        self.buffers: dict[str, Region] = {}

    def allocate(self, name: str, offset: int, length: int) -> Region:
        if name in self.buffers:
            raise NameCollision(f"shared buffer {name!r} already defined")
        region = Region(name, offset, length)
        if offset < 0 or region.end > self.size:
            raise CapacityExceeded(f"shared buffer {name!r} [{offset}, {region.end}) outside {self.size} bytes")
        for other in self.buffers.values():
            if offset < other.end and other.offset < region.end:
                raise OutOfBounds(f"shared buffer {name!r} overlaps {other.name!r}")
        self.buffers[name] = region
        return region

    def check(self, offset: int, nbytes: int) -> None:
        if offset < 0 or offset + nbytes > self.size:
            raise OutOfBounds(f"shared RAM access [{offset}, {offset + nbytes}) outside {self.size} bytes")

    def f32(self, offset: int, count: int) -> np.ndarray:
        self.check(offset, 4 * count)
        return self.data[offset:offset + 4 * count].view(np.float32)


# ledger --------------------------------------------------------------------

class Direction(enum.Enum):
    HOST_TO_HC = "host->hc"
    HC_TO_HOST = "hc->host"
    HC_TO_CORE = "hc->core"
    CORE_TO_HC = "core->hc"


@dataclass
class CycleLedger:
    """Monotone counters behind the cost model."""

    cores: int
    compute_cycles: list = field(default=None)
    remote_store_bytes: list = field(default=None)
    host_to_hc_bytes: int = 0
    hc_to_host_bytes: int = 0
    hc_to_core_bytes: int = 0
    core_to_hc_bytes: int = 0
    barrier_count: int = 0
    flop_count: int = 0

    def __post_init__(self):
        if self.compute_cycles is None:
            self.compute_cycles = [0] * self.cores
        if self.remote_store_bytes is None:
            self.remote_store_bytes = [0] * self.cores

    def snapshot(self) -> "CycleLedger":
        return replace(self, compute_cycles=list(self.compute_cycles),
                       remote_store_bytes=list(self.remote_store_bytes))

    def since(self, earlier: "CycleLedger") -> "CycleLedger":
        """Counter increments accumulated after ``earlier`` was taken."""
        out = CycleLedger(self.cores)
        out.compute_cycles = [a - b for a, b in zip(self.compute_cycles, earlier.compute_cycles)]
        out.remote_store_bytes = [a - b for a, b in zip(self.remote_store_bytes, earlier.remote_store_bytes)]
        for name in ("host_to_hc_bytes", "hc_to_host_bytes", "hc_to_core_bytes",
                     "core_to_hc_bytes", "barrier_count", "flop_count"):
            setattr(out, name, getattr(self, name) - getattr(earlier, name))
        return out

    @property
    def max_core_cycles(self) -> int:
        return max(self.compute_cycles)

    def _bytes_field(self, direction: Direction) -> str:
        return {
            Direction.HOST_TO_HC: "host_to_hc_bytes",
            Direction.HC_TO_HOST: "hc_to_host_bytes",
            Direction.HC_TO_CORE: "hc_to_core_bytes",
            Direction.CORE_TO_HC: "core_to_hc_bytes",
        }[direction]


# the mesh ------------------------------------------------------------------

class Mesh:
    """A workgroup of cores, their scratchpads, shared RAM and the ledger."""

    def __init__(self, config: MeshConfig | None = None, params: CostParams | None = None,
                 code_bytes: int = 8192):
        self.config = config or MeshConfig()
        self.params = params or CostParams()
        size = self.config.local_mem_bytes
        # one row per core so identically placed regions can be addressed across the whole mesh
        self._scratch = np.zeros((self.config.cores, size), dtype=np.uint8)
        self.cores = [CoreLocalMemory(size, code_bytes, self._scratch[j]) for j in range(self.config.cores)]
        self.hc = SharedExternalRAM(self.config.hc_ram_bytes)
        self.ledger = CycleLedger(self.config.cores)
        self.phase = 0
        self.phase_hooks: list[Callable[["Mesh"], None]] = []
        self._pending: list[tuple] = []

    @property
    def ncores(self) -> int:
        return self.config.cores

    def reset_ledger(self) -> CycleLedger:
        old, self.ledger = self.ledger, CycleLedger(self.ncores)
        return old

    # local memory

    def allocate_region(self, core_id: int, name: str, length_bytes: int) -> Region:
        return self.cores[core_id].allocate(name, length_bytes)

    def local(self, core_id: int, name: str) -> np.ndarray:
        return self.cores[core_id].f32(name)

    def local_all(self, name: str) -> np.ndarray:
        """``(cores, n)`` float32 view of a region allocated at the same offset on every core."""
        regions = {mem.region(name) for mem in self.cores}
        if len(regions) != 1:
            raise OutOfBounds(f"region {name!r} is not placed identically on every core")
        r = regions.pop()
        return self._scratch[:, r.offset:r.end].view(np.float32)

    def compute(self, core_id: int, cycles: int, flops: int = 0) -> None:
        self.ledger.compute_cycles[core_id] += cycles
        self.ledger.flop_count += flops

    def compute_all(self, cycles: int, flops_per_core: int = 0) -> None:
        cc = self.ledger.compute_cycles
        for j in range(self.ncores):
            cc[j] += cycles
        self.ledger.flop_count += flops_per_core * self.ncores

    def remote_write(self, src_core: int, dst_core: int, region: str, offset: int, values,
                     overlapped: bool = True) -> None:
        """Store ``values`` (as float32) at byte ``offset`` of ``region`` on ``dst_core``.

        The bytes land at the next barrier. When the store is issued alongside
        compute and the cost parameters allow it, it costs no cycles.
        """
        mem = self.cores[dst_core]
        try:
            r = mem.region(region)
        except OutOfBounds:
            raise OutOfBounds(f"core {src_core} stored to missing region {region!r} of core {dst_core}") from None
        payload = np.asarray(values, dtype=np.float32).ravel(order="K").view(np.uint8).copy()
        if offset < 0 or offset + payload.size > r.length:
            raise OutOfBounds(
                f"core {src_core} stored {payload.size} bytes at offset {offset} past region "
                f"{region!r} ({r.length} bytes) of core {dst_core}"
            )
        self._pending.append((dst_core, r.offset + offset, payload))
        self.ledger.remote_store_bytes[src_core] += payload.size
        if not (overlapped and self.params.remote_store_overlapped):
            self.ledger.compute_cycles[src_core] += payload.size // 4

    def ring_write(self, region: str, offset: int, values: np.ndarray, shift: int = 1,
                   overlapped: bool = True) -> None:
        """Every core ``j`` stores row ``j`` of ``values`` into core ``(j + shift) mod cores``.

        Same visibility and accounting as issuing :meth:`remote_write` once per core.
        """
        values = np.asarray(values, dtype=np.float32)
        if values.ndim != 2 or values.shape[0] != self.ncores:
            raise ContractViolation("ring_write needs one row of values per core")
        r = {mem.region(region) for mem in self.cores}
        if len(r) != 1:
            raise OutOfBounds(f"region {region!r} is not placed identically on every core")
        r = r.pop()
        payload = np.ascontiguousarray(values).view(np.uint8).copy()
        nbytes = payload.shape[1]
        if offset < 0 or offset + nbytes > r.length:
            raise OutOfBounds(f"ring store of {nbytes} bytes at offset {offset} past region {region!r} ({r.length} bytes)")
        dst = (np.arange(self.ncores) + shift) % self.ncores
        self._pending.append((dst, r.offset + offset, payload))
        free = overlapped and self.params.remote_store_overlapped
        for j in range(self.ncores):
            self.ledger.remote_store_bytes[j] += nbytes
            if not free:
                self.ledger.compute_cycles[j] += nbytes // 4

    def barrier(self, workgroup: Iterable[int] | None = None) -> None:
        members = range(self.ncores) if workgroup is None else workgroup
        for dst, start, payload in self._pending:
            self._scratch[dst, start:start + payload.shape[-1]] = payload
        self._pending.clear()
        for core in members:
            self.ledger.compute_cycles[core] += self.params.barrier_cycles
        self.ledger.barrier_count += 1
        self.phase += 1
        for hook in self.phase_hooks:
            hook(self)

    @property
    def pending_writes(self) -> int:
        return len(self._pending)

    # shared RAM

    def hc_transfer(self, direction: Direction, byte_count: int) -> float:
        """Account a transfer through shared RAM and return its model time in seconds."""
        if byte_count <= 0:
            raise ContractViolation("transfer size must be positive")
        direction = Direction(direction)
        name = self.ledger._bytes_field(direction)
        setattr(self.ledger, name, getattr(self.ledger, name) + byte_count)
        bw = {
            Direction.HOST_TO_HC: self.params.bw_host_write_hc,
            Direction.HC_TO_HOST: self.params.bw_host_read_hc,
            Direction.HC_TO_CORE: self.params.bw_core_hc,
            Direction.CORE_TO_HC: self.params.bw_core_hc,
        }[direction]
        return byte_count / bw

    def host_write(self, offset: int, values) -> float:
        payload = np.ascontiguousarray(values).reshape(-1).view(np.uint8)
        self.hc.check(offset, payload.size)
        self.hc.data[offset:offset + payload.size] = payload
        return self.hc_transfer(Direction.HOST_TO_HC, payload.size)

    def host_read(self, offset: int, nbytes: int) -> np.ndarray:
        self.hc.check(offset, nbytes)
        out = self.hc.data[offset:offset + nbytes].copy()
        self.hc_transfer(Direction.HC_TO_HOST, nbytes)
        return out

    def core_fetch(self, core_id: int, hc_offset: int, region: str, nbytes: int, local_offset: int = 0) -> None:
        mem = self.cores[core_id]
        r = mem.region(region)
        if local_offset < 0 or local_offset + nbytes > r.length:
            raise OutOfBounds(f"core {core_id} fetch of {nbytes} bytes overruns region {region!r}")
        self.hc.check(hc_offset, nbytes)
        start = r.offset + local_offset
        mem.data[start:start + nbytes] = self.hc.data[hc_offset:hc_offset + nbytes]
        self.hc_transfer(Direction.HC_TO_CORE, nbytes)

    def core_store(self, core_id: int, region: str, hc_offset: int, nbytes: int, local_offset: int = 0) -> None:
        mem = self.cores[core_id]
        r = mem.region(region)
        if local_offset < 0 or local_offset + nbytes > r.length:
            raise OutOfBounds(f"core {core_id} store of {nbytes} bytes overruns region {region!r}")
        self.hc.check(hc_offset, nbytes)
        start = r.offset + local_offset
        self.hc.data[hc_offset:hc_offset + nbytes] = mem.data[start:start + nbytes]
        self.hc_transfer(Direction.CORE_TO_HC, nbytes)

    # scheduling

    def run(self, programs: Sequence[Iterator], workgroup: Sequence[int] | None = None) -> None:
        """Drive one generator per core through barrier-separated phases.

        Every core must reach the same number of barriers. A core that returns
        while others wait at a barrier is reported as a deadlock.
        """
        ids = list(range(len(programs))) if workgroup is None else list(workgroup)
        if len(ids) != len(programs):
            raise ContractViolation("one program per workgroup member")
        active = list(zip(ids, programs))
        while active:
            waiting, finished = [], []
            for core, prog in active:
                try:
                    next(prog)
                except StopIteration:
                    finished.append(core)
                else:
                    waiting.append((core, prog))
            if waiting and finished:
                raise DeadlockError(
                    f"core(s) {finished} terminated while core(s) {[c for c, _ in waiting]} wait at barrier "
                    f"(phase {self.phase})"
                )
            if waiting:
                self.barrier(c for c, _ in waiting)
            active = waiting
