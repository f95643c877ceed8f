import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from epigemm.bench import (ALL_VARIANTS, BenchReport, BenchRow, emit_report, gemm_residue, parse_json_report,
                           parse_precision, parse_variants, run_kernel_bench, run_testsuite, variant_name)
from epigemm.errors import ContractViolation
from epigemm.matrix import MatrixView, Precision

FORMATS = ("text", "csv", "json")


def test_empty_report_is_header_only():
    rep = BenchReport("empty")
    assert emit_report(rep, "csv").decode().splitlines() == [
        "description,model_time_s,percent_of_total,gflops_model,wall_time_s,value,status"]
    text = emit_report(rep, "text").decode().splitlines()
    assert text[0] == "empty" and text[1].startswith("Description") and len(text) == 3
    assert json.loads(emit_report(rep, "json"))["rows"] == []


def test_one_row_csv_has_two_lines():
    rep = BenchReport("one", [BenchRow("x", 0.5, 100.0, 1.0, 0.1, 2e-7, "")])
    lines = emit_report(rep, "csv").decode().splitlines()
    assert len(lines) == 2
    row = next(csv.DictReader(io.StringIO("\n".join(lines))))
    assert float(row["model_time_s"]) == 0.5 and float(row["value"]) == 2e-7


def test_unknown_format():
    with pytest.raises(ValueError):
        emit_report(BenchReport("x"), "xml")


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)
# labels are printable text; quotes, commas and newlines must survive quoting
label = st.text(st.characters(blacklist_categories=("Cs", "Cc")) | st.sampled_from('\n,"'), min_size=1, max_size=20)
rows = st.builds(BenchRow, label, st.none() | finite, st.none() | finite,
                 st.none() | finite, st.none() | finite, st.none() | finite, st.sampled_from(["", "FAILED"]))


@given(title=st.text(max_size=30), rows=st.lists(rows, max_size=16), notes=st.lists(st.text(max_size=20), max_size=3))
def test_json_roundtrip(title, rows, notes):
    rep = BenchReport(title, rows, notes, "residue")
    assert parse_json_report(emit_report(rep, "json")) == rep


@given(rows=st.lists(rows, min_size=1, max_size=8))
def test_csv_carries_the_same_values(rows):
    rep = BenchReport("t", rows)
    parsed = list(csv.DictReader(io.StringIO(emit_report(rep, "csv").decode(), newline="")))
    for row, got in zip(rows, parsed):
        for name in ("model_time_s", "percent_of_total", "gflops_model", "wall_time_s", "value"):
            want = getattr(row, name)
            assert (got[name] == "") if want is None else float(got[name]) == want
        assert got["description"] == row.description and got["status"] == row.status


@pytest.fixture(scope="module")
def small_kernel_report():
    return run_kernel_bench(64, "inproc", seed=3)


def test_kernel_bench_rows_well_formed(small_kernel_report):
    rep = small_kernel_report
    total = rep.row("Total sgemm micro-kernel")
    assert total.percent_of_total == 100.0
    for r in rep.rows[:3]:
        assert r.percent_of_total == pytest.approx(100 * r.model_time_s / total.model_time_s)
        assert 0 < r.percent_of_total < 200
    assert total.gflops_model * total.model_time_s == pytest.approx(2 * 192 * 256 * 64 / 1e9, rel=1e-12)
    for name in ("Mean Relative Error", "Maximum Relative Error"):
        assert np.isfinite(rep.row(name).value)
    assert any("parallel" in n for n in rep.notes)


def test_kernel_bench_service_has_handoff_row():
    rep = run_kernel_bench(64, "service", seed=3)
    assert rep.row("Host-host request handoff").model_time_s > 0


def test_kernel_bench_seed_determinism(small_kernel_report):
    again = run_kernel_bench(64, "inproc", seed=3)
    strip = [(r.description, r.model_time_s, r.value) for r in again.rows]
    assert strip == [(r.description, r.model_time_s, r.value) for r in small_kernel_report.rows]


@pytest.mark.parametrize("K", [0, 100, -64])
def test_kernel_bench_rejects_bad_k(K):
    with pytest.raises(ContractViolation):
        run_kernel_bench(K)


def test_kernel_bench_rejects_bad_mode():
    with pytest.raises(ContractViolation):
        run_kernel_bench(64, "remote")


def test_testsuite_rows_and_flags():
    rep = run_testsuite(100, 90, 70, "single", "nn,cn,tc,tn", mode="inproc")
    names = [r.description for r in rep.rows]
    assert names == ["blis_sgemm_nn_ccc", "blis_sgemm_cn_ccc", "blis_sgemm_tc_ccc", "blis_sgemm_tn_ccc"]
    nn, cn, tc, tn = rep.rows
    assert (nn.value, nn.model_time_s) == (cn.value, cn.model_time_s)
    assert (tc.value, tc.model_time_s) == (tn.value, tn.model_time_s)
    assert not rep.failed and all(r.value <= 1e-6 for r in rep.rows)
    for r in rep.rows:
        assert r.gflops_model * r.model_time_s == pytest.approx(2 * 100 * 90 * 70 / 1e9, rel=1e-12)
    strict = run_testsuite(100, 90, 70, "single", "nn", mode="inproc", threshold=1e-12)
    assert strict.failed and strict.rows[0].status == "FAILED"


def test_testsuite_false_double_names():
    rep = run_testsuite(40, 40, 40, "false-double", ["tn"], mode="inproc")
    assert rep.rows[0].description == "blis_dgemm_tn_ccc"


def test_testsuite_rejects_bad_dims():
    with pytest.raises(ContractViolation):
        run_testsuite(0, 1, 1)


def test_variant_and_precision_parsing():
    assert parse_variants("all") == ALL_VARIANTS and len(ALL_VARIANTS) == 16
    assert parse_variants("nn, TH") == ("nn", "th")
    with pytest.raises(ContractViolation):
        parse_variants("nx")
    assert parse_precision("false-double") is Precision.DOUBLE
    with pytest.raises(ContractViolation):
        parse_precision("half")
    assert variant_name("nt", Precision.SINGLE) == "blis_sgemm_nt_ccc"


def test_residue_zero_for_exact_result_and_tracks_perturbation(rng):
    a = rng.uniform(-1, 1, (6, 5))
    b = rng.uniform(-1, 1, (5, 4))
    c = rng.uniform(-1, 1, (6, 4))
    exact = 2.0 * a @ b - c
    A, B, C = (MatrixView.from_array(x) for x in (a, b, c))
    r0 = gemm_residue(2.0, A, "n", B, "n", -1.0, C, MatrixView.from_array(exact), np.random.default_rng(0))
    assert r0 < 1e-15
    bumped = exact + 1e-3 * np.linalg.norm(exact) * np.eye(6, 4)
    r1 = gemm_residue(2.0, A, "n", B, "n", -1.0, C, MatrixView.from_array(bumped), np.random.default_rng(0))
    assert 1e-5 < r1 < 1e-2
