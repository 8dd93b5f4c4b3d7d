"""Evaluation metrics (SU, CCR, ICR) and report files."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .env import EpisodeResult

CSV_COLUMNS = ("seed", "su", "terminated_by_collapse", "items_placed", "collapse_item_count", "reason")
SU_NOTE = "mean SU includes the partial utilization of collapse-terminated episodes"


class EmptyResults(ValueError):
    pass


@dataclass
class MetricsReport:
    method: str
    dataset: str
    episodes: int
    su: float
    ccr: float
    icr: float
    rows: list[dict] = field(default_factory=list)
    config_hash: str = ""
    seeds: list[int] = field(default_factory=list)


def compute_metrics(results: Sequence[EpisodeResult], method: str = "", dataset: str = "",
                    config_hash: str = "") -> MetricsReport:
    if not results:
        raise EmptyResults("no episodes to summarize")
    attempted = sum(r.items_placed for r in results)
    collapse_items = sum(r.collapse_item_count for r in results)
    rows = [
        {"seed": r.seed, "su": r.su, "terminated_by_collapse": int(r.terminated_by_collapse),
         "items_placed": r.items_placed, "collapse_item_count": r.collapse_item_count, "reason": r.reason}
        for r in results
    ]
    return MetricsReport(
        method=method,
        dataset=dataset,
        episodes=len(results),
        su=float(np.mean([r.su for r in results])),
        ccr=sum(r.terminated_by_collapse for r in results) / len(results),
        icr=collapse_items / attempted if attempted else 0.0,
        rows=rows,
        config_hash=config_hash,
        seeds=[r.seed for r in results],
    )


def report_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in report.rows:
        w.writerow({**row, "su": repr(float(row["su"]))})
    return buf.getvalue()


def report_text(report: MetricsReport) -> str:
    lines = [
        f"method={report.method}",
        f"dataset={report.dataset}",
        f"episodes={report.episodes}",
        f"su={report.su!r}",
        f"ccr={report.ccr!r}",
        f"icr={report.icr!r}",
        f"config_hash={report.config_hash}",
        "seeds=" + ",".join(str(s) for s in report.seeds),
        f"note={SU_NOTE}",
    ]
    return "\n".join(lines) + "\n"


def emit_report(report: MetricsReport, out_dir, stem: str | None = None, formats=("csv", "txt")) -> list[Path]:
    """Write the per-episode CSV and the summary text; returns the written paths."""
    if report.episodes == 0:
        raise EmptyResults("refusing to write an empty report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = stem or f"{report.method}_{report.dataset}".strip("_") or "report"
    written = []
    if "csv" in formats:
        p = out / f"{stem}.csv"
        p.write_text(report_csv(report))
        written.append(p)
    if "txt" in formats:
        p = out / f"{stem}.summary.txt"
        p.write_text(report_text(report))
        written.append(p)
    return written
