"""Ranked candidate lists shared by the embedding and size rankers.

One RankedList is a single pooled ordering of every input image, scored
by one method. Per-group inspection order is recovered by filtering the
entries on group_key, since normalization never reorders within a group.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Sequence

from .errors import MalformedRowError, MissingColumnError
from .manifest import Grouping

RANKED_CSV_COLUMNS = (
    "rank",
    "image_id",
    "group_key",
    "score",
    "method",
    "grouping",
    "normalized",
    "distance_metric",
)


class Method(str, Enum):
    EMBEDDING = "embedding"
    SIZE = "size"


class DistanceMetric(str, Enum):
    """Cosine is the default; Euclidean is kept for ablation runs."""

    COSINE = "cosine"
    EUCLIDEAN = "euclidean"


@dataclass(frozen=True)
class ScoredImage:
    image_id: str
    group_key: str
    score: float
    rank: int


@dataclass(frozen=True)
class RankedList:
    method: Method
    grouping: Grouping
    normalized: bool
    distance: DistanceMetric | None  # None for size ranking
    entries: tuple[ScoredImage, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> list[str]:
        return [e.image_id for e in self.entries]

    def group_entries(self, group_key: str) -> list[ScoredImage]:
        return [e for e in self.entries if e.group_key == group_key]


def build_ranked_list(
    scored: Iterable[tuple[str, str, float]],
    method: Method,
    grouping: Grouping,
    normalized: bool,
    distance: DistanceMetric | None,
) -> RankedList:
    """Sort (image_id, group_key, score) triples into a deterministic list.

    Scores descend; ties break by image_id ascending. Ranks are 1..N.
    """
    ordered = sorted(scored, key=lambda t: (-t[2], t[0]))
    entries = tuple(
        ScoredImage(image_id=i, group_key=g, score=s, rank=pos)
        for pos, (i, g, s) in enumerate(ordered, start=1)
    )
    return RankedList(
        method=method,
        grouping=grouping,
        normalized=normalized,
        distance=distance,
        entries=entries,
    )


def save_ranked_csv(ranked: RankedList, dest: str | Path | IO[str]) -> None:
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            save_ranked_csv(ranked, fh)
        return
    writer = csv.writer(dest)
    writer.writerow(RANKED_CSV_COLUMNS)
    for e in ranked.entries:
        writer.writerow(
            [
                e.rank,
                e.image_id,
                e.group_key,
                repr(e.score),
                ranked.method.value,
                ranked.grouping.value,
                "true" if ranked.normalized else "false",
                "" if ranked.distance is None else ranked.distance.value,
            ]
        )


def load_ranked_csv(source: str | Path | IO[str]) -> RankedList:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            return load_ranked_csv(fh)

    reader = csv.DictReader(source)
    if reader.fieldnames is None:
        raise MissingColumnError("ranked CSV is empty: no header row")
    missing = [c for c in RANKED_CSV_COLUMNS if c not in reader.fieldnames]
    if missing:
        raise MissingColumnError(f"ranked CSV lacks column(s): {', '.join(missing)}")

    entries: list[ScoredImage] = []
    meta: tuple[str, str, str, str] | None = None
    for row_no, row in enumerate(reader, start=2):
        try:
            entry = ScoredImage(
                image_id=row["image_id"],
                group_key=row["group_key"],
                score=float(row["score"]),
                rank=int(row["rank"]),
            )
        except (TypeError, ValueError):
            raise MalformedRowError(f"ranked CSV row {row_no}: unparseable entry") from None
        row_meta = (row["method"], row["grouping"], row["normalized"], row["distance_metric"])
        if meta is None:
            meta = row_meta
        elif meta != row_meta:
            raise MalformedRowError(f"ranked CSV row {row_no}: inconsistent list metadata")
        entries.append(entry)
    if meta is None:
        raise MalformedRowError("ranked CSV contains no entries")

    method_raw, grouping_raw, normalized_raw, distance_raw = meta
    try:
        method = Method(method_raw)
        grouping = Grouping(grouping_raw)
        distance = DistanceMetric(distance_raw) if distance_raw else None
    except ValueError as exc:
        raise MalformedRowError(f"ranked CSV: {exc}") from None
    entries.sort(key=lambda e: e.rank)
    for pos, e in enumerate(entries, start=1):
        if e.rank != pos:
            raise MalformedRowError(f"ranked CSV: ranks are not contiguous at {e.rank}")
    return RankedList(
        method=method,
        grouping=grouping,
        normalized=normalized_raw == "true",
        distance=distance,
        entries=tuple(entries),
    )
