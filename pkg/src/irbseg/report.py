"""Table-style reports over one or more IRB run logs.

Each iteration of each run becomes one row: run label, per-class IoU in
percent, mIoU, mAcc and the relative mIoU change over the run's first
iteration. Per-class values are rounded to three decimals first and the mIoU
column is the mean of the printed values, so every row is self-consistent.
"""

from __future__ import annotations

import csv
import io
import os
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .irb import IrbRunState  # noqa: E402
from .metrics import mean_acc, mean_iou, relative_improvement  # noqa: E402


class ReportError(ValueError):
    pass


@dataclass(frozen=True)
class ReportRow:
    run: str
    iteration: int
    label: str
    per_class: tuple[float | None, ...]
    miou: float
    macc: float
    improvement: float
    best: bool


def _pct(value: float | None) -> float | None:
    return None if value is None else round(100.0 * value, 3)


def build_rows(runs: Sequence[IrbRunState]) -> tuple[list[str], list[ReportRow]]:
    if not runs:
        raise ReportError("no run logs given")
    class_set = runs[0].class_set
    for run in runs[1:]:
        if run.class_set != class_set:
            raise ReportError(f"run {run.name!r} uses classes {run.class_set.names}, expected {class_set.names}")
    rows = []
    for run in runs:
        baseline = None
        for i, it in enumerate(run.iterations):
            per_class = tuple(_pct(it.report.per_class_iou.get(k)) for k in class_set.ids)
            miou = round(mean_iou(dict(enumerate(per_class))), 3)
            macc = round(mean_acc({k: _pct(it.report.per_class_acc.get(k)) for k in class_set.ids}), 3)
            if baseline is None:
                baseline = miou
            rows.append(
                ReportRow(
                    run=run.name,
                    iteration=i,
                    label=it.allocation.label,
                    per_class=per_class,
                    miou=miou,
                    macc=macc,
                    improvement=round(relative_improvement(miou, baseline), 3) if baseline > 0 else 0.0,
                    best=i == run.best,
                )
            )
    return class_set.names, rows


def _fmt(v: float | None) -> str:
    return "" if v is None else f"{v:.3f}"


def render_csv(names: list[str], rows: list[ReportRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["run", "iteration", "label", *names, "mIoU", "mAcc", "improvement_pct", "best"])
    for r in rows:
        writer.writerow(
            [r.run, r.iteration, r.label, *(_fmt(v) for v in r.per_class), _fmt(r.miou), _fmt(r.macc),
             _fmt(r.improvement), int(r.best)]
        )
    return buf.getvalue()


def render_text(names: list[str], rows: list[ReportRow]) -> str:
    header = ["Run", "TS", *names, "mIoU", "mAcc", "Δ mIoU %", ""]
    body = [
        [r.run, r.label, *((_fmt(v) or "-") for v in r.per_class), _fmt(r.miou), _fmt(r.macc),
         f"{r.improvement:+.3f}", "*" if r.best else ""]
        for r in rows
    ]
    widths = [max(len(str(row[i])) for row in [header] + body) for i in range(len(header))]
    lines = ["  ".join(str(c).rjust(w) for c, w in zip(header, widths)).rstrip()]
    lines.append("-" * len(lines[0]))
    prev = None
    for r, cells in zip(rows, body):
        if prev is not None and r.run != prev:
            lines.append("-" * len(lines[0]))
        prev = r.run
        lines.append("  ".join(str(c).rjust(w) for c, w in zip(cells, widths)).rstrip())
    lines.append("")
    lines.append("* best mIoU within the run; Δ is relative to the run's first iteration")
    return "\n".join(lines) + "\n"


def render_plot(names: list[str], rows: list[ReportRow], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(max(6, 0.9 * len(rows) + 2), 3.6), dpi=100)
    n = len(names)
    width = 0.8 / n
    for k, name in enumerate(names):
        xs = [i + (k - (n - 1) / 2) * width for i in range(len(rows))]
        ax.bar(xs, [r.per_class[k] or 0.0 for r in rows], width, label=name)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels([f"{r.run}\n{r.label}{' *' if r.best else ''}" for r in rows], fontsize=7)
    ax.set_ylabel("IoU (%)")
    ax.set_ylim(0, 100)
    ax.legend(ncol=n, fontsize=7, loc="lower right")
    fig.tight_layout()
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)


def emit_report(
    runs: Sequence[IrbRunState | str | os.PathLike], out_dir: str | os.PathLike, stem: str = "report"
) -> dict[str, Path]:
    """Write ``<stem>.csv``, ``<stem>.txt`` and ``<stem>_iou.png`` under ``out_dir``."""
    runs = [r if isinstance(r, IrbRunState) else IrbRunState.load(r) for r in runs]
    names, rows = build_rows(runs)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out_dir / f"{stem}.csv", "txt": out_dir / f"{stem}.txt", "png": out_dir / f"{stem}_iou.png"}
    paths["csv"].write_text(render_csv(names, rows), encoding="utf-8")
    paths["txt"].write_text(render_text(names, rows), encoding="utf-8")
    render_plot(names, rows, paths["png"])
    return paths
