import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import within_bound
from epigemm.blas import GemmCall, dgemm_, dgemm_false, plan_blocks, sgemm, sgemm_
from epigemm.errors import ContractViolation
from epigemm.host import InnerKernel
from epigemm.matrix import MatrixView, Precision, cast


@pytest.fixture(scope="module")
def kernel():
    return InnerKernel()


def operands(rng, M, N, K, opA, opB, dtype=np.float32):
    a = rng.uniform(-1, 1, (K, M) if opA in "th" else (M, K)).astype(dtype)
    b = rng.uniform(-1, 1, (N, K) if opB in "th" else (K, N)).astype(dtype)
    c = rng.uniform(-1, 1, (M, N)).astype(dtype)
    return a, b, c


def op(x, flag):
    return x.T if flag in "th" else x


def test_plan_counts_tiles_and_pads_k():
    plan = plan_blocks(4096, 4096, 4096)
    assert len(plan.tiles) == 352 and plan.padded_k == 4096
    assert (plan.row_blocks, plan.col_blocks) == (22, 16)
    edge = plan_blocks(193, 257, 65)
    assert edge.padded_k == 128
    assert [(t.row, t.col, t.rows, t.cols) for t in edge.tiles] == [
        (0, 0, 192, 256), (192, 0, 1, 256), (0, 256, 192, 1), (192, 256, 1, 1)]


@settings(max_examples=25, deadline=None)
@given(M=st.integers(1, 260), N=st.integers(1, 300), K=st.integers(1, 140),
       opA=st.sampled_from("ntch"), opB=st.sampled_from("ntch"),
       alpha=st.sampled_from([1.0, -0.75, 2.5]), beta=st.sampled_from([0.0, 1.0, -0.5]),
       seed=st.integers(0, 2**32 - 1))
def test_sgemm_within_forward_error_bound(kernel, M, N, K, opA, opB, alpha, beta, seed):
    rng = np.random.default_rng(seed)
    a, b, c = operands(rng, M, N, K, opA, opB)
    C = MatrixView.from_array(c)
    stats = sgemm(GemmCall(opA, opB, M, N, K, alpha, beta, MatrixView.from_array(a), MatrixView.from_array(b), C),
                  kernel)
    assert within_bound(C.array(), alpha, op(a, opA), op(b, opB), beta, c)
    assert len(stats.tile_timings) == len(plan_blocks(M, N, K).tiles)


def test_conjugate_variants_equal_plain_ones(kernel, rng):
    a, b, c = operands(rng, 100, 70, 90, "t", "n")
    outs = []
    for opA, opB in [("t", "n"), ("h", "c")]:
        C = MatrixView.from_array(c)
        sgemm(GemmCall(opA, opB, 100, 70, 90, 1.0, 1.0, MatrixView.from_array(a), MatrixView.from_array(b), C), kernel)
        outs.append(C.array())
    assert np.array_equal(*outs)


def test_only_valid_region_is_written(kernel, rng):
    M, N, K = 200, 10, 30
    a, b, _ = operands(rng, M, N, K, "n", "n")
    buf = np.full(210 * N, 99.0, dtype=np.float32)
    C = MatrixView.from_blas(buf, M, N, 210)
    sgemm(GemmCall("n", "n", M, N, K, 1.0, 0.0, MatrixView.from_array(a), MatrixView.from_array(b), C), kernel)
    assert (buf.reshape(N, 210)[:, M:] == 99).all()
    assert within_bound(C.array(), 1.0, a, b, 0.0, None)


def test_beta_zero_ignores_nan_in_c(kernel, rng):
    a, b, _ = operands(rng, 10, 300, 5, "n", "n")
    C = MatrixView.from_array(np.full((10, 300), np.nan, dtype=np.float32))
    sgemm(GemmCall("n", "n", 10, 300, 5, 1.0, 0.0, MatrixView.from_array(a), MatrixView.from_array(b), C), kernel)
    assert np.isfinite(C.array()).all()


def test_degenerate_dimensions(kernel):
    c = np.ones((3, 2), dtype=np.float32)
    C = MatrixView.from_array(c)
    empty_a, empty_b = MatrixView.zeros(3, 0), MatrixView.zeros(0, 2)
    stats = sgemm(GemmCall("n", "n", 3, 2, 0, 1.0, 2.0, empty_a, empty_b, C), kernel)
    assert (C.array() == 2).all() and stats.model_time == 0
    sgemm(GemmCall("n", "n", 3, 2, 0, 1.0, 0.0, empty_a, empty_b, C), kernel)
    assert not C.array().any()
    sgemm(GemmCall("n", "n", 0, 2, 4, 1.0, 0.0, MatrixView.zeros(0, 4), MatrixView.zeros(4, 2),
                   MatrixView.zeros(0, 2)), kernel)


def test_alpha_zero_scales_c_only(kernel, rng):
    a, b, c = operands(rng, 4, 4, 4, "n", "n")
    a[0, 0] = np.inf
    C = MatrixView.from_array(c)
    sgemm(GemmCall("n", "n", 4, 4, 4, 0.0, 3.0, MatrixView.from_array(a), MatrixView.from_array(b), C), kernel)
    assert np.array_equal(C.array(), c * np.float32(3))


def test_shape_and_precision_checks(kernel):
    A, B, C = MatrixView.zeros(4, 5), MatrixView.zeros(5, 6), MatrixView.zeros(4, 6)
    with pytest.raises(ContractViolation):
        sgemm(GemmCall("t", "n", 4, 6, 5, 1.0, 0.0, A, B, C), kernel)
    with pytest.raises(ContractViolation):
        sgemm(GemmCall("n", "n", 4, 6, 5, 1.0, 0.0, A, B, MatrixView.zeros(4, 6, dtype=np.float64)), kernel)
    with pytest.raises(ContractViolation):
        dgemm_false(GemmCall("n", "n", 4, 6, 5, 1.0, 0.0, A, B, C), kernel)


@pytest.mark.parametrize("seed", range(3))
def test_false_dgemm_is_sgemm_on_rounded_inputs(kernel, seed):
    rng = np.random.default_rng(seed)
    M, N, K = 150, 260, 70
    a, b, c = operands(rng, M, N, K, "n", "t", np.float64)
    alpha, beta = 1.1, -0.3
    C = MatrixView.from_array(c)
    dgemm_false(GemmCall("n", "t", M, N, K, alpha, beta, MatrixView.from_array(a), MatrixView.from_array(b), C),
                kernel)
    Cs = cast(MatrixView.from_array(c), Precision.SINGLE)
    sgemm(GemmCall("n", "t", M, N, K, float(np.float32(alpha)), float(np.float32(beta)),
                   cast(MatrixView.from_array(a), Precision.SINGLE), cast(MatrixView.from_array(b), Precision.SINGLE),
                   Cs), kernel)
    assert C.dtype == np.float64
    assert np.array_equal(C.array(), Cs.array().astype(np.float64))


def test_classic_entry_points(kernel, rng):
    M, N, K, lda, ldb, ldc = 5, 7, 3, 8, 4, 6
    a = rng.uniform(-1, 1, lda * M).astype(np.float32)   # A stored K x M (transposed), ld 8
    b = rng.uniform(-1, 1, ldb * N).astype(np.float32)   # B stored K x N, ld 4
    c = np.zeros(ldc * N, dtype=np.float32)
    sgemm_("T", "N", M, N, K, 1.0, a, lda, b, ldb, 0.0, c, ldc, kernel=kernel)
    A = a.reshape(M, lda).T[:K]
    B = b.reshape(N, ldb).T[:K]
    assert within_bound(c.reshape(N, ldc).T[:M], 1.0, A.T, B, 0.0, None)
    assert not c.reshape(N, ldc).T[M:].any()
    cd = np.zeros(ldc * N)
    dgemm_("t", "n", M, N, K, 1.0, a.astype(np.float64), lda, b.astype(np.float64), ldb, 0.0, cd, ldc, kernel=kernel)
    assert np.array_equal(cd, c.astype(np.float64))
