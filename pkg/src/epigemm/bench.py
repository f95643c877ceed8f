"""Benchmarks and report emission: kernel time breakdown, testsuite sweeps, calibration.

Reported times are model times from the cost model; host wall-clock time is
carried alongside for context only.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .blas import GemmCall, dgemm_false, sgemm
from .costmodel import REFERENCE_TARGETS, Targets, calibrate
from .errors import ContractViolation
from .host import InnerKernel, InnerKernelRequest
from .layout import DEFAULT_KERNEL, KernelConfig
from .matrix import MatrixView, OpFlag, Precision, compare, ref_gemm
from .mesh import CostParams, MeshConfig, default_cost_params, load_config, save_config
from .service import OffloadService, request_bytes

OPS = "ntch"
ALL_VARIANTS = tuple(a + b for a in OPS for b in OPS)
RESIDUE_THRESHOLD = {Precision.SINGLE: 1e-6, Precision.DOUBLE: 1e-7}
RESIDUE_DEFINITION = (
    "||C_out t - (alpha op(A) (op(B) t) + beta C t)||_2 / ||alpha op(A) (op(B) t) + beta C t||_2, "
    "t a random unit vector, evaluated in the interface precision"
)
OVERLAP_NOTE = "(*) input staging and coprocessor work run in parallel, so their shares add up to more than 100%"


# reports ------------------------------------------------------------------

@dataclass
class BenchRow:
    description: str
    model_time_s: float | None = None
    percent_of_total: float | None = None
    gflops_model: float | None = None
    wall_time_s: float | None = None
    value: float | None = None
    status: str = ""


COLUMNS = tuple(f.name for f in fields(BenchRow))


@dataclass
class BenchReport:
    title: str
    rows: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    value_label: str = "value"

    @property
    def failed(self) -> bool:
        return any(r.status == "FAILED" for r in self.rows)

    def row(self, description: str) -> BenchRow:
        for r in self.rows:
            if r.description == description:
                return r
        raise KeyError(description)

    def to_dict(self) -> dict:
        return {"title": self.title, "value_label": self.value_label,
                "rows": [asdict(r) for r in self.rows], "notes": list(self.notes)}

    @classmethod
    def from_dict(cls, data: dict) -> "BenchReport":
        return cls(data["title"], [BenchRow(**r) for r in data["rows"]], list(data["notes"]), data["value_label"])


def _fmt(v, spec):
    return "" if v is None else format(v, spec)


def _text(report: BenchReport) -> str:
    head = ("Description", "Time (s)", "%", "GFLOPS/s", "Wall (s)", report.value_label, "Status")
    body = [
        (r.description, _fmt(r.model_time_s, ".6f"), _fmt(r.percent_of_total, ".1f"),
         _fmt(r.gflops_model, ".3f"), _fmt(r.wall_time_s, ".3f"), _fmt(r.value, ".3g"), r.status)
        for r in report.rows
    ]
    widths = [max(len(row[i]) for row in [head, *body]) for i in range(len(head))]
    lines = [report.title]
    for row in [head, *body]:
        lines.append(" | ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    lines[2:2] = ["-+-".join("-" * w for w in widths)]
    lines += report.notes
    return "\n".join(lines) + "\n"


def emit_report(report: BenchReport, fmt: str = "text") -> bytes:
    if fmt == "text":
        return _text(report).encode()
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2).encode()
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(COLUMNS)
        for r in report.rows:
            writer.writerow(["" if getattr(r, c) is None else repr(getattr(r, c)) if isinstance(getattr(r, c), float)
                             else getattr(r, c) for c in COLUMNS])
        return buf.getvalue().encode()
    raise ValueError(f"unknown format {fmt!r}")


def parse_json_report(data: bytes) -> BenchReport:
    return BenchReport.from_dict(json.loads(data))


# configuration ------------------------------------------------------------

def load_params(config=None) -> tuple[MeshConfig, CostParams]:
    return load_config(config) if config else default_cost_params()


def _make_kernel(mode: str, config, cfg: KernelConfig = DEFAULT_KERNEL):
    mesh_config, params = load_params(config)
    if mode == "inproc":
        return InnerKernel(mesh_config, params, cfg)
    if mode == "service":
        return OffloadService(mesh_config, params, cfg).start()
    raise ContractViolation(f"unknown mode {mode!r}")


def _release(kernel) -> None:
    if isinstance(kernel, OffloadService):
        kernel.stop()


# kernel benchmark -----------------------------------------------------------

def kernel_inputs(K: int, seed: int, cfg: KernelConfig = DEFAULT_KERNEL) -> InnerKernelRequest:
    """Seeded uniform(-1, 1) micro-kernel operands with alpha=1, beta=0."""
    rng = np.random.default_rng(seed)
    a1 = MatrixView.from_array(rng.uniform(-1, 1, (cfg.m, K)).astype(np.float32), order="F")
    b1 = MatrixView.from_array(rng.uniform(-1, 1, (K, cfg.n)).astype(np.float32), order="C")
    return InnerKernelRequest(a1, b1, None, MatrixView.zeros(cfg.m, cfg.n), 1.0, 0.0)


def run_kernel_bench(K: int = 4096, mode: str = "inproc", seed: int = 0, config=None,
                     cfg: KernelConfig = DEFAULT_KERNEL) -> BenchReport:
    if K <= 0 or K % cfg.ksub:
        raise ContractViolation(f"K={K} must be a positive multiple of {cfg.ksub}")
    req = kernel_inputs(K, seed, cfg)
    kernel = _make_kernel(mode, config, cfg)
    try:
        t0 = time.perf_counter()
        c_out, timing = kernel.run(req)
        wall = time.perf_counter() - t0
    finally:
        _release(kernel)
    t0 = time.perf_counter()
    ref = ref_gemm(1.0, req.a1, "n", req.b1, "n", 0.0, MatrixView.zeros(cfg.m, cfg.n))
    ref_wall = time.perf_counter() - t0
    err = compare(c_out, ref)
    total = timing.total_time

    def share(t):
        return BenchRow(t[0], t[1], 100.0 * t[1] / total)

    where = "same process" if mode == "inproc" else "offload service"
    report = BenchReport(f"sgemm micro-kernel m={cfg.m} n={cfg.n} K={K} ({where})", value_label="error")
    report.rows += [
        share(("Input loading and host preprocessing (*)", timing.input_stage_time)),
        share(("Coprocessor work (*)", timing.device_time)),
        share(("Host data retrieving and postprocessing", timing.post_time)),
    ]
    if mode == "service":
        report.rows.append(share(("Host-host request handoff", timing.handoff_time)))
    report.rows += [
        BenchRow("Total sgemm micro-kernel", total, 100.0, 2 * cfg.m * cfg.n * K / total / 1e9, wall),
        BenchRow("Host reference code (context only)", wall_time_s=ref_wall),
        BenchRow("Mean Relative Error", value=err.mean_rel_err),
        BenchRow("Maximum Relative Error", value=err.max_rel_err),
    ]
    report.notes += [OVERLAP_NOTE, f"ir={timing.ir:.4f} or={timing.or_:.4f}"]
    return report


# testsuite ----------------------------------------------------------------

def _power_of_two_scale(x: np.ndarray) -> np.ndarray:
    """Divide by the smallest power of two not below the Frobenius norm (exact in binary)."""
    norm = float(np.linalg.norm(x))
    if norm == 0:
        return x
    return x / 2.0 ** np.ceil(np.log2(norm))


def gemm_residue(alpha, A: MatrixView, opA, B: MatrixView, opB, beta, C_orig: MatrixView,
                 C_out: MatrixView, rng: np.random.Generator) -> float:
    """Relative residual of ``C_out`` projected onto a random vector (see RESIDUE_DEFINITION)."""
    dtype = C_out.dtype
    t = rng.uniform(-1, 1, C_out.cols)
    t = (t / np.linalg.norm(t)).astype(dtype)
    a, b = A.with_op(opA).array(), B.with_op(opB).array()
    v = C_out.array() @ t
    z = dtype.type(alpha) * (a @ (b @ t))
    if beta != 0:
        z = z + dtype.type(beta) * (C_orig.array() @ t)
    znorm = float(np.linalg.norm(z))
    return float(np.linalg.norm(v - z)) / (znorm if znorm else 1.0)


@dataclass
class VariantRun:
    name: str
    call: GemmCall
    C_orig: MatrixView
    stats: object
    residue: float
    wall: float


def variant_name(variant: str, precision: Precision) -> str:
    kind = "sgemm" if precision is Precision.SINGLE else "dgemm"
    return f"blis_{kind}_{variant}_ccc"


def variant_operands(M, N, K, variant, precision: Precision, seed: int = 0):
    """Column-major A, B, C for one variant; c/h share their data with n/t."""
    opA, opB = OpFlag.parse(variant[0]), OpFlag.parse(variant[1])
    key = [seed, M, N, K, int(opA.transposes), int(opB.transposes)]
    rng = np.random.default_rng(key)
    dtype = precision.dtype
    a_shape = (K, M) if opA.transposes else (M, K)
    b_shape = (N, K) if opB.transposes else (K, N)
    mats = [MatrixView.from_array(_power_of_two_scale(rng.uniform(-1, 1, s)).astype(dtype))
            for s in (a_shape, b_shape, (M, N))]
    return opA, opB, *mats, rng


def run_variant(M, N, K, variant, precision: Precision, kernel, seed: int = 0,
                alpha: float = 1.0, beta: float = 1.0) -> VariantRun:
    opA, opB, A, B, C, rng = variant_operands(M, N, K, variant, precision, seed)
    C_orig = MatrixView.from_array(C.array())
    call = GemmCall(opA, opB, M, N, K, alpha, beta, A, B, C)
    t0 = time.perf_counter()
    stats = (sgemm if precision is Precision.SINGLE else dgemm_false)(call, kernel)
    wall = time.perf_counter() - t0
    res = gemm_residue(alpha, A, opA, B, opB, beta, C_orig, C, rng)
    return VariantRun(variant_name(variant, precision), call, C_orig, stats, res, wall)


def parse_precision(value) -> Precision:
    if isinstance(value, Precision):
        return value
    key = str(value).replace("-", "_").lower()
    if key in ("single", "s"):
        return Precision.SINGLE
    if key in ("false_double", "double", "d"):
        return Precision.DOUBLE
    raise ContractViolation(f"unknown precision {value!r}")


def parse_variants(value) -> tuple:
    if value in (None, "all"):
        return ALL_VARIANTS
    items = value.split(",") if isinstance(value, str) else list(value)
    items = tuple(v.strip().lower() for v in items if v.strip())
    bad = [v for v in items if v not in ALL_VARIANTS]
    if bad or not items:
        raise ContractViolation(f"unknown variants {bad or value!r}")
    return items


def run_testsuite(M: int = 768, N: int = 768, K: int = 768, precision="single", variants="all",
                  mode: str = "service", seed: int = 0, config=None, threshold: float | None = None) -> BenchReport:
    if min(M, N, K) <= 0:
        raise ContractViolation("dimensions must be positive")
    precision = parse_precision(precision)
    variants = parse_variants(variants)
    threshold = RESIDUE_THRESHOLD[precision] if threshold is None else threshold
    kind = "sgemm" if precision is Precision.SINGLE else "false dgemm"
    report = BenchReport(f"BLIS {kind} results (m={M}, n={N}, K={K})", value_label="residue")
    kernel = _make_kernel(mode, config)
    try:
        for variant in variants:
            run = run_variant(M, N, K, variant, precision, kernel, seed)
            t = run.stats.model_time
            report.rows.append(BenchRow(
                run.name, t, None, run.call.flops / t / 1e9 if t else None, run.wall, run.residue,
                "FAILED" if not run.residue <= threshold else "",
            ))
    finally:
        _release(kernel)
    report.notes += [f"residue = {RESIDUE_DEFINITION}", f"threshold {threshold:g}; rows above it are marked FAILED"]
    return report


# calibration --------------------------------------------------------------

def kernel_profile(K: int = 4096, mesh_config: MeshConfig | None = None, cfg: KernelConfig = DEFAULT_KERNEL):
    """Byte and cycle profile of one micro-kernel call, including the service handoff bytes."""
    kernel = InnerKernel(mesh_config, None, cfg)
    req = kernel_inputs(K, 0, cfg)
    kernel.run(req)
    inbound, outbound = request_bytes(cfg, K, req.beta)
    return kernel.last_profile.with_handoff(inbound + outbound)


def calibrate_cost_model(targets: Targets = REFERENCE_TARGETS, K: int = 4096, mesh_config: MeshConfig | None = None,
                         base: CostParams | None = None, out=None) -> CostParams:
    mesh_config = mesh_config or MeshConfig()
    profile = kernel_profile(K, mesh_config)
    params = calibrate(profile, mesh_config.clock_hz, targets, base)
    if out is not None:
        header = f"calibrated at m={DEFAULT_KERNEL.m} n={DEFAULT_KERNEL.n} K={K} against {targets}"
        save_config(Path(out), mesh_config, params, header)
    return params
