"""Single-precision gemm offloaded to a simulated 16-core scratchpad mesh coprocessor."""

from .blas import GemmCall, dgemm_, dgemm_false, plan_blocks, sgemm, sgemm_
from .costmodel import REFERENCE_TARGETS, Targets, TimingBreakdown, calibrate, model_timing
from .device import DeviceKernel, destination, sub_matmul
from .errors import (CalibrationError, CapacityExceeded, ContractViolation, DeadlockError, DeviceFault,
                     NameCollision, OutOfBounds, RequestRejected, ServiceError, SimulationFault)
from .host import InnerKernel, InnerKernelRequest, command_schedule, sgemm_inner
from .layout import DEFAULT_KERNEL, HCLayout, KernelConfig
from .matrix import ErrorReport, MatrixView, OpFlag, Precision, cast, compare, pack_a, pack_b, ref_gemm
from .mesh import CostParams, Mesh, MeshConfig, default_cost_params, load_config, save_config
from .service import OffloadService, service_start

__version__ = "0.1.0"
