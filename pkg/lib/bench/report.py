"""
Ladder report output: TSV or Markdown table, plus a PNG bar chart.

Both tables have the two-row shape (worker, storage) with the reference
figures printed beside the measured ones. Reference figures come from
production hardware and are never used as pass/fail tolerances.
"""

from __future__ import annotations

import io
from pathlib import Path
from typing import List

import matplotlib
matplotlib.use("Agg")          # headless
import matplotlib.pyplot as plt
import numpy as np

from lib.bench.ladder import REFERENCE_STORAGE, REFERENCE_WORKER, LadderReport

FORMATS = ("tsv", "md")

MEASURED = "#0072C6"
REFERENCE = "#C8C8C8"
DARK_GRAY = "#595959"
LIGHT_GRAY = "#C8C8C8"
GRID_GRAY = "#E8E8E8"


def _rows(report: LadderReport) -> List[List[str]]:
    def fmt(values, digits):
        return [f"{v:.{digits}f}" for v in values]

    return [
        ["worker (measured)"] + fmt(report.worker_normalized, 2),
        ["worker (reference)"] + fmt(REFERENCE_WORKER, 2),
        ["storage (simulated)"] + fmt(report.storage_normalized, 3),
        ["storage (reference)"] + fmt(REFERENCE_STORAGE, 2),
    ]


def render_tsv(report: LadderReport) -> str:
    lines = ["\t".join(["row"] + list(report.configs))]
    lines += ["\t".join(row) for row in _rows(report)]
    lines.append("")
    lines.append(f"# rows\t{report.rows}")
    lines.append(f"# features\t{report.features}")
    lines.append(f"# mean projection size\t{report.projection_size:.1f}")
    lines.append("# worker batches/s (absolute)\t" + "\t".join(f"{v:.1f}" for v in report.worker))
    lines.append("# storage rows/s (simulated)\t" + "\t".join(f"{v:.0f}" for v in report.storage))
    lines.append(f"# metadata overhead\t{report.storage_overhead:.4f}")
    lines.append(f"# bytes for 80% traffic\t{report.bytes_for_80pct_traffic:.3f}")
    for key, value in report.io_sizes.items():
        lines.append(f"# +CR io size {key}\t{value:.0f}")
    return "\n".join(lines) + "\n"


def render_markdown(report: LadderReport) -> str:
    header = "| | " + " | ".join(report.configs) + " |"
    rule = "|---|" + "---:|" * len(report.configs)
    body = ["| " + " | ".join(row) + " |" for row in _rows(report)]
    lines = ["## Optimization ladder", "", "Normalized to Baseline = 1.00.", "", header, rule, *body, ""]
    lines.append(f"- rows: {report.rows}, features: {report.features}, "
                 f"mean projection size: {report.projection_size:.1f}")
    for note in report.notes():
        lines.append(f"- {note}")
    problems = report.problems()
    lines.append("")
    if problems:
        lines.append("### Directionality problems")
        lines += [f"- {p}" for p in problems]
    else:
        lines.append("All directionality checks hold.")
    if report.io_sizes:
        lines += ["", "### +CR I/O sizes (bytes)", "",
                  "| " + " | ".join(report.io_sizes) + " |",
                  "|" + "---:|" * len(report.io_sizes),
                  "| " + " | ".join(f"{v:.0f}" for v in report.io_sizes.values()) + " |"]
    return "\n".join(lines) + "\n"


def emit_report(report: LadderReport, path, fmt: str = "tsv") -> Path:
    """Write the report as `fmt` (tsv|md); returns the path written."""
    if fmt not in FORMATS:
        raise ValueError(f"unknown report format {fmt!r} (expected tsv or md)")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = render_tsv(report) if fmt == "tsv" else render_markdown(report)
    path.write_text(text, encoding="utf-8")
    return path


def _style_ax(ax):
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    ax.spines["left"].set_visible(False)
    ax.spines["bottom"].set_color(LIGHT_GRAY)
    ax.grid(axis="y", color=GRID_GRAY, linewidth=0.5, alpha=0.8, zorder=0)
    ax.tick_params(colors=DARK_GRAY, labelsize=8)


def ladder_chart_png(report: LadderReport, dpi: int = 150) -> bytes:
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.6), facecolor="white")
    x = np.arange(len(report.configs))
    width = 0.38
    panels = (
        (axes[0], "Worker throughput", report.worker_normalized, REFERENCE_WORKER),
        (axes[1], "Storage throughput", report.storage_normalized, REFERENCE_STORAGE),
    )
    for ax, title, measured, reference in panels:
        ax.bar(x - width / 2, measured, width, color=MEASURED, label="measured", zorder=3)
        ax.bar(x + width / 2, reference, width, color=REFERENCE, label="reference", zorder=3)
        for xi, value in zip(x, measured):
            ax.text(xi - width / 2, value, f"{value:.2f}", ha="center", va="bottom",
                    fontsize=6, color=DARK_GRAY)
        ax.set_xticks(x)
        ax.set_xticklabels(report.configs)
        ax.set_title(title, fontsize=10, color=DARK_GRAY, loc="left")
        ax.axhline(1.0, color=LIGHT_GRAY, linewidth=0.8, linestyle="--", zorder=2)
        _style_ax(ax)
    axes[0].legend(frameon=False, fontsize=7)
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=dpi, bbox_inches="tight", facecolor="white", edgecolor="none")
    plt.close(fig)
    return buf.getvalue()


def render_ladder_chart(report: LadderReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(ladder_chart_png(report))
    return path
