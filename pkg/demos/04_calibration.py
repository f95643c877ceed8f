"""
Fitting the cost model and the accumulator trend
================================================

The cost model has one free rate per measured row. Calibration solves them
in closed form from the reference kernel timings; longer K then spreads the
single result retrieval over more work.
"""

from epigemm import InnerKernel, MeshConfig
from epigemm.bench import calibrate_cost_model, kernel_inputs

params = calibrate_cost_model()
print(f"host -> shared RAM  {params.bw_host_write_hc / 1e6:7.2f} MB/s")
print(f"shared RAM -> host  {params.bw_host_read_hc / 1e6:7.2f} MB/s")
print(f"core <-> shared RAM {params.bw_core_hc / 1e6:7.2f} MB/s")
print(f"host <-> host       {params.bw_hh / 1e6:7.2f} MB/s")
print(f"per-task handshake  {params.handshake_s * 1e6:7.2f} us")

# retrieval happens once per call, so its share (or) falls as K grows
for K in (256, 512, 1024, 2048, 4096):
    _, t = InnerKernel(MeshConfig(), params).run(kernel_inputs(K, 0))
    print(f"K={K:5d}  total {t.total_time * 1e3:8.3f} ms  ir {t.ir:.3f}  or {t.or_:.3f}")
