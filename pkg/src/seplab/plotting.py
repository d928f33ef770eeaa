"""Figures and CSV exports for evaluation reports."""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from seplab.report import BUCKET_EDGES, BUCKETS, BucketTable, bucket_by_overlap, csv_rows  # noqa: E402

CSV_FIELDS = ("config_id", "bucket", "n", "mean_si_sdr_db", "mean_improvement_db")


def configure_plt():
    plt.rcParams.update({
        "axes.labelsize": 10,
        "font.size": 10,
        "legend.fontsize": 8,
        "xtick.labelsize": 9,
        "ytick.labelsize": 9,
        "axes.spines.top": False,
        "axes.spines.right": False,
        "figure.figsize": (6.4, 4.0),
        "svg.hashsalt": "seplab",
        "svg.fonttype": "none",
    })


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def write_csv(path, rows, fields) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return path


def _group(records):
    groups = defaultdict(list)
    for r in records:
        groups[r.config_id].append(r)
    return dict(sorted(groups.items()))


def overlap_scatter(records, out_dir) -> list[Path]:
    """SI-SDR against overlap ratio, one colour per config, with bucket means as steps."""
    out_dir = Path(out_dir)
    groups = _group(records)
    edges = (0.0, *BUCKET_EDGES, 1.0)
    fig, ax = plt.subplots()
    rows = []
    colors = plt.cm.tab10(np.linspace(0, 1, 10))
    for k, (cid, recs) in enumerate(groups.items()):
        c = colors[k % 10]
        x = [r.overlap for r in recs]
        y = [r.mean_si_sdr for r in recs]
        ax.scatter(x, y, s=8, color=c, alpha=0.5, label=cid or "model")
        row = bucket_by_overlap(recs)
        for b, mean in enumerate(row.means):
            if mean is not None:
                ax.hlines(mean, edges[b], edges[b + 1], color=c, linewidth=2)
        rows += [{"config_id": cid, "id": r.id, "overlap": r.overlap, "si_sdr_db": r.mean_si_sdr,
                  "improvement_db": r.improvement} for r in recs]
    for e in BUCKET_EDGES:
        ax.axvline(e, color="0.8", linewidth=0.8, zorder=0)
    ax.set_xlabel("overlap ratio")
    ax.set_ylabel("SI-SDR (dB)")
    ax.set_xlim(0, 1)
    if groups:
        ax.legend(frameon=False, ncol=2)
    return [_save(fig, out_dir / "overlap_scatter.svg"),
            write_csv(out_dir / "overlap_scatter.csv", rows,
                      ("config_id", "id", "overlap", "si_sdr_db", "improvement_db"))]


def config_bars(table: BucketTable, out_dir, stem: str = "config_bars") -> list[Path]:
    """Grouped bars: one group per config row, one bar per overlap bucket plus the average."""
    out_dir = Path(out_dir)
    labels = [" / ".join(r.label) for r in table.rows]
    series = [*BUCKETS, "Average"]
    width = 0.8 / len(series)
    fig, ax = plt.subplots(figsize=(max(6.4, 0.9 * len(labels) + 2), 4.0))
    x = np.arange(len(labels))
    for k, name in enumerate(series):
        vals = [(r.means + [r.average])[k] for r in table.rows]
        ax.bar(x + (k - (len(series) - 1) / 2) * width,
               [np.nan if v is None else v for v in vals], width, label=name)
    ax.set_xticks(x, labels, rotation=30, ha="right")
    ax.set_xlabel(" / ".join(table.header))
    ax.set_ylabel("SI-SDR (dB)")
    ax.axhline(0, color="0.5", linewidth=0.8)
    ax.legend(frameon=False, ncol=len(series), title="overlap (%)")
    return [_save(fig, out_dir / f"{stem}.svg"),
            write_csv(out_dir / f"{stem}.csv", csv_rows(table), CSV_FIELDS)]


def emit_plots(records, out_dir, tables: dict[str, BucketTable] | None = None) -> list[Path]:
    """Write the overlap scatter and, per table, a bar chart; each with a CSV of plotted values."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    configure_plt()
    files = overlap_scatter(records, out_dir)
    for name, table in (tables or {}).items():
        if table.rows:
            files += config_bars(table, out_dir, stem=f"{name}_bars")
    return files
