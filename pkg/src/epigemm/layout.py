"""Fixed kernel geometry and the memory layouts derived from it.

Everything here is read-only configuration: the device kernel, the host
micro-kernel and the BLAS layer all agree on these numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

F32 = 4  # bytes per single-precision element


@dataclass(frozen=True)
class KernelConfig:
    """Geometry of one accelerated micro-kernel call.

    ``m`` x ``n`` is the output block, ``ksub`` the depth of one coprocessor
    task, ``nsub`` the width of one subMatmul result.
    """

    m: int = 192
    n: int = 256
    ksub: int = 64
    nsub: int = 4
    cores: int = 16
    code_bytes: int = 8192

    def __post_init__(self):
        if self.ksub % self.cores:
            raise ValueError(f"ksub={self.ksub} not divisible by cores={self.cores}")
        if self.n % (self.nsub * self.cores):
            raise ValueError(f"n={self.n} not divisible by nsub*cores")
        if self.m % 32:
            raise ValueError(f"m={self.m} must be a multiple of the 32-wide vector")

    @property
    def k_per_core(self) -> int:
        return self.ksub // self.cores

    @property
    def cols_per_core(self) -> int:
        return self.n // self.cores

    @property
    def column_iterations(self) -> int:
        # each column iteration finalizes one m x nsub block per core
        return self.n // (self.nsub * self.cores)

    @property
    def strips(self) -> int:
        return self.m // 32

    def region_sizes(self) -> dict[str, int]:
        """Bytes of each per-core buffer, in allocation order."""
        return {
            "A": F32 * self.m * self.k_per_core,
            "B": F32 * self.k_per_core * self.n,
            "RES1": F32 * self.m * self.nsub,
            "RES2": F32 * self.m * self.cols_per_core,
        }

    def resident_bytes(self) -> int:
        return self.code_bytes + sum(self.region_sizes().values())

    @property
    def task_input_bytes(self) -> int:
        return F32 * (self.m * self.ksub + self.ksub * self.n)

    @property
    def result_bytes(self) -> int:
        return F32 * self.m * self.n


DEFAULT_KERNEL = KernelConfig()


@dataclass(frozen=True)
class HCLayout:
    """Byte layout of the host-coprocessor shared RAM.

    ``[a_buf0 | a_buf1 | b_buf0 | b_buf1 | c_buf | control]``, each input
    buffer holding one task block. The control block is three int32 words:
    command, selector, done flag.
    """

    cfg: KernelConfig = field(default_factory=KernelConfig)
    base: int = 0

    @property
    def a_bytes(self) -> int:
        return F32 * self.cfg.m * self.cfg.ksub

    @property
    def b_bytes(self) -> int:
        return F32 * self.cfg.ksub * self.cfg.n

    def a_buf(self, selector: int) -> int:
        return self.base + selector * self.a_bytes

    def b_buf(self, selector: int) -> int:
        return self.base + 2 * self.a_bytes + selector * self.b_bytes

    @property
    def c_buf(self) -> int:
        return self.base + 2 * self.a_bytes + 2 * self.b_bytes

    @property
    def control(self) -> int:
        return self.c_buf + self.cfg.result_bytes

    CONTROL_BYTES = 12

    @property
    def end(self) -> int:
        return self.control + self.CONTROL_BYTES
