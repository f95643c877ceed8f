"""
Watching partial results travel around the ring
===============================================

A four-core desk configuration small enough to follow by eye. Each K
iteration every core multiplies its slice of A by a slice of B and passes
the partial to its neighbour; after four hops each block is home.
"""

import numpy as np

from epigemm import DeviceKernel, KernelConfig, Mesh, MeshConfig, destination
from epigemm.device import SINGLE_TASK

cfg = KernelConfig(m=64, n=64, ksub=16, nsub=4, cores=4)

# who receives what: row = core, column = K iteration
print("destination table")
for j in range(cfg.cores):
    print(f"  core {j}:", [destination(j, it, cfg.cores) for it in range(cfg.cores)])

mesh = Mesh(MeshConfig(cores=4))
dev = DeviceKernel(mesh, cfg, engine="cores")

# stage one task worth of input into shared RAM, buffer pair 0
rng = np.random.default_rng(1)
a = rng.integers(-3, 4, (cfg.m, cfg.ksub)).astype(np.float32)
b = rng.integers(-3, 4, (cfg.ksub, cfg.n)).astype(np.float32)
mesh.host_write(dev.layout.a_buf(0), a.ravel(order="F"))
mesh.host_write(dev.layout.b_buf(0), b.ravel(order="C"))

# after every barrier, count result columns that are final and sit with their owner
exact = a.astype(np.float64) @ b
done = []


def progress(m):
    cols = sum(int(np.array_equal(dev.res2(j)[:, c], exact[:, 16 * j + c]))
               for j in range(cfg.cores) for c in range(cfg.cols_per_core))
    done.append(cols)


mesh.phase_hooks.append(progress)
dev.control.command, dev.control.selector = SINGLE_TASK, 0
dev.epiphany_task()

print("barriers:", mesh.ledger.barrier_count)
print("finished columns after each barrier:", done)
print("matches a @ b:", np.array_equal(dev.read_result(), exact))
