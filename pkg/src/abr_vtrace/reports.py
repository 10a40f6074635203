"""Plot-ready report files from evaluation results."""

from __future__ import annotations

import csv
import io
import statistics
from pathlib import Path
from typing import Sequence

from .harness import EvalResult

FORMATS = ("csv", "cdf", "components")
TRACE_COLUMNS = ["algorithm", "trace_id", "total", "quality_sum", "rebuffer_penalty_sum",
                 "smoothness_penalty_sum"]
COMPONENT_COLUMNS = ["algorithm", "traces", "mean_total", "mean_quality", "mean_rebuffer_penalty",
                     "mean_smoothness_penalty"]


def _write(rows: list[list], header: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(x: float) -> str:
    return repr(float(x))


def trace_rows(results: Sequence[EvalResult]) -> list[list]:
    rows = []
    for res in results:
        for tid, b in zip(res.trace_ids, res.breakdowns):
            rows.append([res.algorithm, tid, _num(b.total), _num(b.quality_sum),
                         _num(b.rebuffer_penalty_sum), _num(b.smoothness_penalty_sum)])
    return rows


def cdf_rows(results: Sequence[EvalResult]) -> list[list]:
    rows = []
    for res in results:
        totals = sorted(res.totals)
        n = len(totals)
        for i, t in enumerate(totals, 1):
            rows.append([res.algorithm, _num(t), _num(i / n)])
    return rows


def component_rows(results: Sequence[EvalResult]) -> list[list]:
    rows = []
    for res in results:
        bs = res.breakdowns
        rows.append([
            res.algorithm, len(bs),
            _num(statistics.fmean(b.total for b in bs)),
            _num(statistics.fmean(b.quality_sum for b in bs)),
            _num(statistics.fmean(b.rebuffer_penalty_sum for b in bs)),
            _num(statistics.fmean(b.smoothness_penalty_sum for b in bs)),
        ])
    return rows


def render(results: Sequence[EvalResult], fmt: str) -> str:
    if not results or any(not r.breakdowns for r in results):
        raise ValueError("cannot report on empty results")
    if fmt == "csv":
        return _write(trace_rows(results), TRACE_COLUMNS)
    if fmt == "cdf":
        return _write(cdf_rows(results), ["algorithm", "total", "cumulative_fraction"])
    if fmt == "components":
        return _write(component_rows(results), COMPONENT_COLUMNS)
    raise ValueError(f"unknown report format {fmt!r}; expected one of {FORMATS}")


def emit_report(results: Sequence[EvalResult], fmt: str, path) -> Path:
    text = render(results, fmt)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def read_trace_csv(path) -> list[dict]:
    """Parse a per-trace report back into dicts with float columns."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for key in TRACE_COLUMNS[2:]:
            row[key] = float(row[key])
    return rows


def summary_grid(cells: dict, algorithms: Sequence[str], losses: Sequence[float],
                 variants: Sequence[str]) -> str:
    """One row per algorithm; one mean-QoE column per (variant, loss) pair."""
    header = ["algorithm"] + [f"{v}@{l:g}" for v in variants for l in losses]
    rows = [[a] + [_num(cells[(a, v, l)]) for v in variants for l in losses] for a in algorithms]
    return _write(rows, header)
