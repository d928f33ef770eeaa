"""Overlap-bucketed SI-SDR tables and their text renderings."""
from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Sequence

import numpy as np

BUCKETS = ("<25", "25-50", "50-75", ">75")
BUCKET_EDGES = (0.25, 0.5, 0.75)
EMPTY = "–"

SIMO_SISO_HEADER = ("SIMO blocks", "SISO blocks")
ENCODER_DECODER_HEADER = ("Encoder blocks", "Decoder blocks")


def bucket_index(overlap: float) -> int:
    """Half-open buckets ``[0, .25) [.25, .5) [.5, .75) [.75, 1]``."""
    return int(np.searchsorted(BUCKET_EDGES, overlap, side="right"))


def round1(x: float | None) -> str:
    """One decimal, halves rounded away from zero on the shortest decimal repr."""
    if x is None:
        return EMPTY
    return str(Decimal(repr(float(x))).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


@dataclass
class BucketRow:
    label: tuple[str, str]
    means: list[float | None]
    counts: list[int] = field(default_factory=lambda: [0] * len(BUCKETS))
    average: float | None = None
    improvement_means: list[float | None] = field(default_factory=lambda: [None] * len(BUCKETS))
    average_improvement: float | None = None
    config_id: str = ""

    @property
    def n(self) -> int:
        return sum(self.counts)

    def cells(self, improvement: bool = False) -> list[str]:
        values = self.improvement_means if improvement else self.means
        avg = self.average_improvement if improvement else self.average
        return [*self.label, *(round1(v) for v in values), round1(avg)]


@dataclass
class BucketTable:
    header: tuple[str, str] = SIMO_SISO_HEADER
    rows: list[BucketRow] = field(default_factory=list)
    caption: str = ""

    def columns(self) -> list[str]:
        return [*self.header, *BUCKETS, "Average"]


def _mean(values):
    return float(np.mean(values)) if len(values) else None


def bucket_by_overlap(records: Iterable, label: tuple[str, str] = ("", ""),
                      config_id: str = "") -> BucketRow:
    """Mean SI-SDR per overlap bucket; the average runs over all records, not bucket means.

    Records need ``overlap``, ``mean_si_sdr`` and ``improvement`` attributes.
    Sums are taken in a canonical order so record order never changes a value.
    """
    by_bucket = [[] for _ in BUCKETS]
    imp_bucket = [[] for _ in BUCKETS]
    every, every_imp = [], []
    for r in sorted(records, key=lambda r: (r.overlap, r.mean_si_sdr, r.improvement)):
        b = bucket_index(r.overlap)
        by_bucket[b].append(r.mean_si_sdr)
        imp_bucket[b].append(r.improvement)
        every.append(r.mean_si_sdr)
        every_imp.append(r.improvement)
    return BucketRow(
        label=tuple(label),
        means=[_mean(v) for v in by_bucket],
        counts=[len(v) for v in by_bucket],
        average=_mean(every),
        improvement_means=[_mean(v) for v in imp_bucket],
        average_improvement=_mean(every_imp),
        config_id=config_id,
    )


def _best_cells(rows: Sequence[BucketRow], improvement: bool) -> list[set[int]]:
    """Per value column, the indices of rows holding the best rounded value."""
    cells = [r.cells(improvement)[2:] for r in rows]
    best = []
    for col in range(len(BUCKETS) + 1):
        vals = [(Decimal(c[col]), i) for i, c in enumerate(cells) if c[col] != EMPTY]
        if not vals:
            best.append(set())
            continue
        top = max(v for v, _ in vals)
        best.append({i for v, i in vals if v == top})
    return best


def _render_rows(table: BucketTable, fmt: str, improvement: bool) -> list[str]:
    header = table.columns()
    best = _best_cells(table.rows, improvement)
    body = []
    for i, row in enumerate(table.rows):
        cells = row.cells(improvement)
        for col in range(len(BUCKETS) + 1):
            if i in best[col]:
                c = cells[2 + col]
                cells[2 + col] = f"**{c}**" if fmt == "markdown" else f"{c}*"
        body.append(cells)
    if fmt == "markdown":
        lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        lines += ["| " + " | ".join(cells) + " |" for cells in body]
        return lines
    widths = [max(len(h), *(len(c[k]) for c in body)) if body else len(h)
              for k, h in enumerate(header)]
    def line(cells):
        return " | ".join(c.rjust(w) for c, w in zip(cells, widths)).rstrip()
    rule = "-+-".join("-" * w for w in widths)
    return [line(header), rule, *(line(c) for c in body)]


def render_table(table: BucketTable, fmt: str = "markdown", reference: BucketTable | None = None,
                 improvement: bool = False) -> str:
    """Render ``table`` as ``markdown`` or ``text``; best value per column is highlighted.

    ``reference`` rows are rendered below as a separate, labelled block.
    """
    if fmt not in ("markdown", "text"):
        raise ValueError(f"unknown format {fmt!r}")
    lines = []
    if table.caption:
        lines += [table.caption, ""]
    lines += _render_rows(table, fmt, improvement)
    if reference is not None:
        title = "published reference" + (f": {reference.caption}" if reference.caption else "")
        lines += ["", title, ""]
        lines += _render_rows(reference, fmt, False)
    return "\n".join(lines) + "\n"


def _published_table(header, rows, caption) -> BucketTable:
    out = []
    for a, b, *vals in rows:
        out.append(BucketRow(label=(str(a), str(b)), means=list(vals[:4]), average=vals[4],
                             config_id=f"published-{a}-{b}"))
    return BucketTable(header=header, rows=out, caption=caption)


PUBLISHED_TABLE1 = _published_table(SIMO_SISO_HEADER, [
    (6, 0, 13.9, 10.0, 7.2, 4.8, 9.0),
    (5, 1, 14.0, 10.1, 7.3, 4.9, 9.1),
    (4, 2, 14.2, 10.4, 7.6, 5.0, 9.4),
    (3, 3, 14.4, 10.5, 7.6, 5.0, 9.4),
    (2, 4, 14.6, 10.6, 7.8, 4.9, 9.5),
    (1, 5, 14.3, 10.3, 7.5, 4.8, 9.2),
    (0, 6, 13.5, 9.5, 6.8, 4.5, 8.6),
], "SIMO-only and mixed SIMO-SISO, SI-SDR (dB) by overlap ratio (%)")

PUBLISHED_TABLE2 = _published_table(ENCODER_DECODER_HEADER, [
    (1, 5, 14.3, 10.3, 7.3, 4.9, 9.3),
    (2, 4, 14.2, 10.2, 7.4, 4.8, 9.1),
    (3, 3, 14.0, 10.0, 7.1, 4.4, 8.9),
    (4, 2, 13.4, 9.3, 6.5, 3.8, 8.3),
    (5, 1, 13.0, 8.9, 6.2, 3.3, 7.9),
], "iterative SISO-only, SI-SDR (dB) by overlap ratio (%)")


def bucket_spread(table: BucketTable) -> list[float | None]:
    """Max minus min of each bucket mean across rows (then of the average)."""
    out = []
    for col in range(len(BUCKETS) + 1):
        vals = [(r.means + [r.average])[col] for r in table.rows]
        vals = [v for v in vals if v is not None]
        out.append(max(vals) - min(vals) if len(vals) > 1 else None)
    return out


def csv_rows(table: BucketTable) -> list[dict]:
    """Rows of the bucket CSV: ``config_id, bucket, n, mean_si_sdr_db, mean_improvement_db``."""
    out = []
    for row in table.rows:
        sdr = row.cells(False)[2:]
        imp = row.cells(True)[2:]
        for k, bucket in enumerate([*BUCKETS, "Average"]):
            n = row.counts[k] if k < len(BUCKETS) else row.n
            out.append({"config_id": row.config_id, "bucket": bucket, "n": n,
                        "mean_si_sdr_db": sdr[k], "mean_improvement_db": imp[k]})
    return out
