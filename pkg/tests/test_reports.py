import csv

import pytest

from abr_vtrace.harness import EvalResult
from abr_vtrace.qoe import QoEBreakdown
from abr_vtrace.reports import emit_report, read_trace_csv, render, summary_grid


def result(name, totals):
    bds = []
    for i, t in enumerate(totals):
        q, rb = 100.0 + i / 3, 2.0 + i / 7
        bds.append(QoEBreakdown(t, q, rb, q - rb - t, 48))
    return EvalResult(name, [f"t{i}" for i in range(len(totals))], bds)


def test_cdf_fractions(tmp_path):
    path = emit_report([result("bb", [3.0, 1.0, 4.0, 2.0])], "cdf", tmp_path / "cdf.csv")
    rows = list(csv.DictReader(path.open()))
    assert [float(r["cumulative_fraction"]) for r in rows] == [0.25, 0.5, 0.75, 1.0]
    assert [float(r["total"]) for r in rows] == [1.0, 2.0, 3.0, 4.0]


def test_components_identity(tmp_path):
    res = [result("bb", [1.5, -2.0, 30.25, 7.1]), result("mpc", [90.1, 80.3])]
    path = emit_report(res, "components", tmp_path / "c.csv")
    for row in csv.DictReader(path.open()):
        parts = float(row["mean_quality"]) - float(row["mean_rebuffer_penalty"]) - float(row["mean_smoothness_penalty"])
        assert abs(parts - float(row["mean_total"])) < 1e-9


def test_trace_csv_round_trip(tmp_path):
    res = result("rb", [1 / 3, 2.0, -7.25])
    path = emit_report([res], "csv", tmp_path / "t.csv")
    rows = read_trace_csv(path)
    assert len(rows) == 3
    for row, tid, b in zip(rows, res.trace_ids, res.breakdowns):
        assert row["trace_id"] == tid and row["algorithm"] == "rb"
        assert row["total"] == b.total
        assert row["quality_sum"] == b.quality_sum
        assert row["rebuffer_penalty_sum"] == b.rebuffer_penalty_sum
        assert row["smoothness_penalty_sum"] == b.smoothness_penalty_sum


def test_empty_and_unknown_format():
    with pytest.raises(ValueError):
        render([], "csv")
    with pytest.raises(ValueError):
        render([result("bb", [1.0])], "svg")


def test_summary_grid_shape():
    cells = {(a, v, l): 1.0 for a in "xy" for v in ("linear", "log") for l in (0.0, 0.01)}
    lines = summary_grid(cells, ["x", "y"], [0.0, 0.01], ["linear", "log"]).splitlines()
    assert lines[0] == "algorithm,linear@0,linear@0.01,log@0,log@0.01"
    assert len(lines) == 3
