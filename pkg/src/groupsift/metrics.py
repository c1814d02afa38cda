"""Ranking evaluation: AUROC, AP, and three human-effort metrics.

The human-effort metrics answer "how much inspection work buys how much
cleanup": the true-positive rate within the first n_outliers entries, the
recall after inspecting 5% of the dataset, and the dataset fraction one
must inspect to reach 95% recall.

AUROC uses the standard half-credit convention for tied scores. The other
four metrics operate on the materialized deterministic order (ties already
broken by image_id), so every metric here is invariant under strictly
monotone transforms of the scores.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Mapping, Sequence

from .errors import DegenerateLabelsError, UnlabeledImageError
from .manifest import ImageRecord, OutlierType
from .ranking import RankedList

REPORT_COLUMNS = (
    "auroc",
    "ap",
    "tpr_at_head",
    "rec_at_5pct",
    "p_at_95rec",
    "n_total",
    "n_outliers",
    "outlier_filter",
)


@dataclass(frozen=True)
class MetricReport:
    auroc: float
    ap: float
    tpr_at_head: float
    rec_at_5pct: float
    p_at_95rec: float
    n_total: int
    n_outliers: int
    outlier_filter: OutlierType | None = None

    def row(self) -> list[str]:
        return [
            repr(self.auroc),
            repr(self.ap),
            repr(self.tpr_at_head),
            repr(self.rec_at_5pct),
            repr(self.p_at_95rec),
            str(self.n_total),
            str(self.n_outliers),
            "" if self.outlier_filter is None else self.outlier_filter.value,
        ]


def _check_positives(ranked_ids: Sequence[str], positives: frozenset[str] | set[str]) -> int:
    n_pos = sum(1 for i in ranked_ids if i in positives)
    if n_pos == 0:
        raise DegenerateLabelsError("no positive labels in the ranking")
    return n_pos


def auroc(ranked: Sequence[tuple[str, float]], positives: set[str]) -> float:
    """Probability a random positive outranks a random negative; ties count 1/2.

    Computed from average ranks over score-tie groups, kept in integer
    arithmetic until the final division so the result is the exact rational
    a pairwise enumeration would produce.
    """
    n = len(ranked)
    n_pos = sum(1 for image_id, _ in ranked if image_id in positives)
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError(f"need both classes, got {n_pos} positives of {n}")

    # ascending score order; tied group members share the average rank
    by_score = sorted(range(n), key=lambda i: ranked[i][1])
    doubled_rank_sum = 0  # 2 * sum of average ranks of positives
    i = 0
    while i < n:
        j = i
        while j < n and ranked[by_score[j]][1] == ranked[by_score[i]][1]:
            j += 1
        # group occupies ranks i+1 .. j (1-based); doubled average = i + j + 1
        doubled_avg = i + j + 1
        for k in range(i, j):
            if ranked[by_score[k]][0] in positives:
                doubled_rank_sum += doubled_avg
        i = j
    return (doubled_rank_sum - n_pos * (n_pos + 1)) / (2 * n_pos * n_neg)


def average_precision(ranked_ids: Sequence[str], positives: set[str]) -> float:
    """Mean of precision-at-rank over every positive, in rank order."""
    n_pos = _check_positives(ranked_ids, positives)
    hits = 0
    total = 0.0
    for rank, image_id in enumerate(ranked_ids, start=1):
        if image_id in positives:
            hits += 1
            total += hits / rank
    return total / n_pos


def tpr_at_head(ranked_ids: Sequence[str], positives: set[str]) -> float:
    """Fraction of positives inside the first n_positives entries."""
    n_pos = _check_positives(ranked_ids, positives)
    head_hits = sum(1 for i in ranked_ids[:n_pos] if i in positives)
    return head_hits / n_pos


def recall_at_fraction(
    ranked_ids: Sequence[str], positives: set[str], p: float = 0.05
) -> float:
    """Recall within the first ceil(p * n) entries."""
    if not 0.0 < p <= 1.0:
        raise ValueError(f"fraction p must be in (0, 1], got {p}")
    n_pos = _check_positives(ranked_ids, positives)
    prefix = math.ceil(p * len(ranked_ids))
    return sum(1 for i in ranked_ids[:prefix] if i in positives) / n_pos


def fraction_at_recall(
    ranked_ids: Sequence[str], positives: set[str], r: float = 0.95
) -> float:
    """Smallest dataset fraction whose prefix reaches recall r.

    The prefix must contain ceil(r * n_positives) positives.
    """
    if not 0.0 < r <= 1.0:
        raise ValueError(f"recall target r must be in (0, 1], got {r}")
    n_pos = _check_positives(ranked_ids, positives)
    required = math.ceil(r * n_pos)
    hits = 0
    for rank, image_id in enumerate(ranked_ids, start=1):
        if image_id in positives:
            hits += 1
            if hits == required:
                return rank / len(ranked_ids)
    raise AssertionError("unreachable: required <= n_pos")


def evaluate(
    ranked: RankedList,
    records: Sequence[ImageRecord],
    outlier_filter: OutlierType | None = None,
    include_other_types: bool = False,
) -> MetricReport:
    """Score a ranking against the manifest's ground-truth labels.

    Every ranked image must carry an outlier label. With outlier_filter
    set, positives are that type only; images of other outlier types are
    excluded from the evaluated population unless include_other_types is
    true, in which case they count as negatives.
    """
    by_id: Mapping[str, ImageRecord] = {r.image_id: r for r in records}
    entries = []
    for e in ranked.entries:
        rec = by_id.get(e.image_id)
        if rec is None or rec.outlier is None:
            raise UnlabeledImageError(f"image_id {e.image_id!r} has no outlier label")
        entries.append((e, rec))

    if outlier_filter is not None and not include_other_types:
        entries = [
            (e, rec)
            for e, rec in entries
            if not (rec.outlier and rec.outlier_type != outlier_filter)
        ]

    def is_positive(rec: ImageRecord) -> bool:
        if not rec.outlier:
            return False
        return outlier_filter is None or rec.outlier_type == outlier_filter

    ranked_ids = [e.image_id for e, _ in entries]
    scored = [(e.image_id, e.score) for e, _ in entries]
    positives = {e.image_id for e, rec in entries if is_positive(rec)}
    n_total = len(entries)
    if not positives or len(positives) == n_total:
        raise DegenerateLabelsError(
            f"{len(positives)} positives of {n_total} leave nothing to separate"
        )

    return MetricReport(
        auroc=auroc(scored, positives),
        ap=average_precision(ranked_ids, positives),
        tpr_at_head=tpr_at_head(ranked_ids, positives),
        rec_at_5pct=recall_at_fraction(ranked_ids, positives, 0.05),
        p_at_95rec=fraction_at_recall(ranked_ids, positives, 0.95),
        n_total=n_total,
        n_outliers=len(positives),
        outlier_filter=outlier_filter,
    )


def save_report_csv(reports: Sequence[MetricReport], dest: str | Path | IO[str]) -> None:
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            save_report_csv(reports, fh)
        return
    writer = csv.writer(dest)
    writer.writerow(REPORT_COLUMNS)
    for report in reports:
        writer.writerow(report.row())


def format_report_table(report: MetricReport) -> str:
    """Fixed-width table in the conventional column order."""
    headers = ["AUROC", "AP", "TPR@Head", "Rec@5%p", "p@95%Rec"]
    values = [
        report.auroc,
        report.ap,
        report.tpr_at_head,
        report.rec_at_5pct,
        report.p_at_95rec,
    ]
    cells = [f"{v:.4f}" for v in values]
    widths = [max(len(h), len(c)) for h, c in zip(headers, cells)]
    head = "  ".join(h.rjust(w) for h, w in zip(headers, widths))
    body = "  ".join(c.rjust(w) for c, w in zip(cells, widths))
    suffix = f"n={report.n_total} outliers={report.n_outliers}"
    if report.outlier_filter is not None:
        suffix += f" type={report.outlier_filter.value}"
    return f"{head}\n{body}\n{suffix}"
