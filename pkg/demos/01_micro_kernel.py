"""
One micro-kernel call on the simulated coprocessor
==================================================

A 192 x K block of A times a K x 256 block of B, computed by sixteen
simulated cores, timed by the calibrated cost model and checked against a
double precision reference.
"""

import numpy as np

from epigemm import InnerKernel, MatrixView, compare, default_cost_params, ref_gemm
from epigemm.bench import kernel_inputs

# operands: uniform(-1, 1), a1 column-major and b1 row-major as the kernel expects
K = 1024
req = kernel_inputs(K, seed=0)

# a kernel built from the shipped, calibrated parameters
mesh_config, params = default_cost_params()
kernel = InnerKernel(mesh_config, params)
c, timing = kernel.run(req)

# staging and device work overlap, so the first two rows add up past the total
for label, t in [("input staging", timing.input_stage_time), ("device work", timing.device_time),
                 ("retrieve + scale", timing.post_time), ("total", timing.total_time)]:
    print(f"{label:18s} {t * 1e3:8.3f} ms  {100 * t / timing.total_time:5.1f} %")
print(f"model throughput   {timing.gflops(2 * 192 * 256 * K):.3f} GFLOPS")
print(f"ir = {timing.ir:.3f}, or = {timing.or_:.3f}")

# the ledger counted every multiply-add
print("flops:", kernel.ledger.flop_count, "=", 2 * 192 * 256 * K)

# accuracy against the f64 reference; per-entry relative error grows with K
ref = ref_gemm(1.0, req.a1, "n", req.b1, "n", 0.0, MatrixView.zeros(192, 256))
err = compare(c, ref)
print(f"mean rel err {err.mean_rel_err:.2e}, max rel err {err.max_rel_err:.2e}")
print("largest |C|:", float(np.abs(c.array()).max()))
