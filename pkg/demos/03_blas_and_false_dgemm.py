"""
Full gemm through the offload service
=====================================

The BLAS layer tiles an arbitrary problem into 192 x 256 blocks and hands
each one to the long-lived service. The double precision entry point is a
thin wrapper: round to single, multiply, widen back.
"""

import numpy as np

from epigemm import GemmCall, MatrixView, OffloadService, default_cost_params, dgemm_false, sgemm
from epigemm.bench import gemm_residue

rng = np.random.default_rng(0)
M, N, K = 500, 300, 200

mesh_config, params = default_cost_params()
with OffloadService(mesh_config, params) as service:
    # single precision, A transposed
    a = rng.uniform(-1, 1, (K, M)).astype(np.float32)
    b = rng.uniform(-1, 1, (K, N)).astype(np.float32)
    c = rng.uniform(-1, 1, (M, N)).astype(np.float32)
    A, B, C = MatrixView.from_array(a), MatrixView.from_array(b), MatrixView.from_array(c)
    stats = sgemm(GemmCall("t", "n", M, N, K, 1.0, 0.5, A, B, C), service)
    print(f"tiles: {len(stats.tile_timings)}, model time {stats.model_time:.4f} s, "
          f"{2 * M * N * K / stats.model_time / 1e9:.3f} GFLOPS")
    r = gemm_residue(1.0, A, "t", B, "n", 0.5, MatrixView.from_array(c), C, rng)
    print(f"sgemm residue {r:.2e}")

    # the same problem through the double precision interface
    a64, b64, c64 = a.astype(np.float64), b.astype(np.float64), c.astype(np.float64)
    C64 = MatrixView.from_array(c64)
    dgemm_false(GemmCall("t", "n", M, N, K, 1.0, 0.5, MatrixView.from_array(a64), MatrixView.from_array(b64),
                         C64), service)
    print("false dgemm equals widened sgemm:", np.array_equal(C64.array(), C.array().astype(np.float64)))
    print("requests served:", service.slot.trace.count("response_ready"))
