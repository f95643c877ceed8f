import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ring_order_oracle, within_bound
from epigemm.device import CLEAR_AND_RUN, RUN, RUN_AND_SEND, SINGLE_TASK
from epigemm.errors import ContractViolation, DeviceFault
from epigemm.host import InnerKernel, InnerKernelRequest, command_schedule, postprocess, sgemm_inner
from epigemm.layout import DEFAULT_KERNEL, KernelConfig
from epigemm.matrix import MatrixView
from epigemm.mesh import MeshConfig

DESK = KernelConfig(m=64, n=64, ksub=16, nsub=4, cores=4)


def desk_kernel(**kw):
    return InnerKernel(MeshConfig(cores=4), None, DESK, **kw)


def request(rng, cfg, K, alpha=1.0, beta=0.0, c_order="F"):
    a1 = MatrixView.from_array(rng.uniform(-1, 1, (cfg.m, K)).astype(np.float32))
    b1 = MatrixView.from_array(rng.uniform(-1, 1, (K, cfg.n)).astype(np.float32), order="C")
    c_in = MatrixView.from_array(rng.uniform(-1, 1, (cfg.m, cfg.n)).astype(np.float32), order=c_order)
    c_out = MatrixView.zeros(cfg.m, cfg.n, order=c_order)
    return InnerKernelRequest(a1, b1, c_in, c_out, alpha, beta)


@pytest.mark.parametrize("n,want", [
    (1, [SINGLE_TASK]), (2, [CLEAR_AND_RUN, RUN_AND_SEND]), (4, [CLEAR_AND_RUN, RUN, RUN, RUN_AND_SEND])])
def test_command_schedule(n, want):
    assert command_schedule(n) == want


def test_command_schedule_needs_a_task():
    with pytest.raises(ContractViolation):
        command_schedule(0)


@pytest.mark.parametrize("alpha,beta", [(1.0, 0.0), (-1.5, 0.25), (0.5, -2.0)])
def test_inner_kernel_matches_ring_order_oracle(rng, alpha, beta):
    req = request(rng, DEFAULT_KERNEL, 128, alpha, beta)
    out, _ = InnerKernel().run(req)
    want = ring_order_oracle(req.a1.array(), req.b1.array(), alpha=alpha, beta=beta, c_in=req.c_in.array())
    assert np.array_equal(out.array(), want)


def test_inner_kernel_within_forward_error_bound(rng):
    req = request(rng, DEFAULT_KERNEL, 256, 1.0, 1.0)
    out, _ = sgemm_inner(req)
    assert within_bound(out.array(), 1.0, req.a1.array(), req.b1.array(), 1.0, req.c_in.array())


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), tasks=st.integers(1, 5),
       alpha=st.sampled_from([1.0, -2.0, 0.5]), beta=st.sampled_from([0.0, 1.0, -0.75]))
def test_desk_kernel_property(seed, tasks, alpha, beta):
    rng = np.random.default_rng(seed)
    req = request(rng, DESK, DESK.ksub * tasks, alpha, beta)
    k = desk_kernel()
    out, timing = k.run(req)
    want = ring_order_oracle(req.a1.array(), req.b1.array(), 4, 16, alpha, beta, req.c_in.array())
    assert np.array_equal(out.array(), want)
    assert k.ledger.flop_count == 2 * DESK.m * DESK.n * req.K
    assert len(k.last_profile.tasks) == tasks
    assert timing.total_time > 0


def test_beta_zero_ignores_c_in_and_alpha_zero_ignores_product(rng):
    req = request(rng, DEFAULT_KERNEL, 64, 1.0, 0.0)
    req.c_in.array()[...] = np.nan
    out, _ = InnerKernel().run(req)
    assert np.isfinite(out.array()).all()
    req = request(rng, DEFAULT_KERNEL, 64, 0.0, 2.0)
    req.a1.array()[0, 0] = np.inf
    out, _ = InnerKernel().run(req)
    assert np.array_equal(out.array(), np.float32(2.0) * req.c_in.array())


def test_postprocess_honours_strides(rng):
    acc = rng.uniform(-1, 1, (3, 2)).astype(np.float32)
    buf = np.full(20, -7.0, dtype=np.float32)
    c_out = MatrixView(buf, 3, 2, 1, 5)
    c_in = MatrixView.from_array(np.ones((3, 2), np.float32), order="C")
    postprocess(acc, 2.0, 3.0, c_in, c_out)
    assert np.array_equal(c_out.array(), np.float32(2) * acc + np.float32(3))
    assert (buf[[3, 4]] == -7).all() and (buf[8:] == -7).all()


def test_row_major_and_padded_output(rng):
    req = request(rng, DEFAULT_KERNEL, 64, 1.0, 1.0, c_order="C")
    ref, _ = InnerKernel().run(request(np.random.default_rng(12345), DEFAULT_KERNEL, 64, 1.0, 1.0))
    out, _ = InnerKernel().run(req)
    assert np.array_equal(out.array(), ref.array())
    padded = MatrixView.zeros(192, 256, ld=200)
    req.c_out = padded
    InnerKernel().run(req)
    assert np.array_equal(padded.array(), ref.array())
    assert not padded.base.reshape(256, 200)[:, 192:].any()


@pytest.mark.parametrize("mutate", [
    lambda r: setattr(r, "a1", MatrixView.zeros(192, 96)),
    lambda r: setattr(r, "c_out", MatrixView.zeros(192, 255)),
    lambda r: setattr(r, "c_in", None),
    lambda r: setattr(r, "a1", MatrixView.zeros(191, 64)),
    lambda r: setattr(r, "b1", MatrixView.zeros(64, 256, dtype=np.float64)),
])
def test_request_validation(rng, mutate):
    req = request(rng, DEFAULT_KERNEL, 64, 1.0, 1.0)
    mutate(req)
    with pytest.raises(ContractViolation):
        InnerKernel().run(req)


def test_overlap_changes_time_not_values(rng):
    req = request(rng, DESK, 64)
    on, t_on = desk_kernel().run(req)
    on = on.array().copy()
    off, t_off = desk_kernel(overlap=False).run(req)
    assert np.array_equal(on, off.array())
    assert t_off.total_time > t_on.total_time
    assert t_off.input_stage_time == t_on.input_stage_time


def test_staging_traffic_and_double_buffering(rng):
    k = InnerKernel()
    seen = []
    orig = k.device.epiphany_task
    k.device.epiphany_task = lambda control: (seen.append((control.command, control.selector)), orig(control))
    k.run(request(rng, DEFAULT_KERNEL, 256))
    assert seen == [(0, 0), (1, 1), (1, 0), (2, 1)]
    assert k.ledger.host_to_hc_bytes == 4 * DEFAULT_KERNEL.task_input_bytes
    assert k.ledger.hc_to_host_bytes == DEFAULT_KERNEL.result_bytes


def test_host_refuses_to_issue_while_device_busy(rng):
    k = desk_kernel()
    k.device.control.done_flag = False
    with pytest.raises(DeviceFault):
        k.run(request(rng, DESK, 16))
