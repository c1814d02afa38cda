"""Relative specimen-area deviation ranking.

Scores each image by |area - group mean area| / group mean area. The
quantity is already group-relative, so there is no separate normalized
variant; the pooled list is always comparable across groups.
"""

from __future__ import annotations

from typing import Sequence

from .errors import EmptyGroupError, MissingAreaError, ZeroMeanAreaError
from .manifest import Grouping, ImageRecord, group_images
from .ranking import Method, RankedList, build_ranked_list


def group_mean_area(areas: Sequence[int]) -> float:
    """Arithmetic mean of member areas, as float64."""
    if not areas:
        raise EmptyGroupError("mean area of an empty group")
    return sum(float(a) for a in areas) / len(areas)


def area_percent_diff(area: float, mean_area: float) -> float:
    """Relative deviation |a - mean| / mean, for mean > 0."""
    if mean_area <= 0.0:
        raise ZeroMeanAreaError(f"group mean area {mean_area} is not positive")
    return abs(float(area) - mean_area) / mean_area


def rank_size(records: Sequence[ImageRecord], grouping: Grouping) -> RankedList:
    """Pooled ranking by relative area deviation, descending.

    Every record must carry area_px, and every group's mean area must be
    positive (an all-zero-area group indicates a broken segmentation run).
    """
    by_id = {r.image_id: r for r in records}
    groups = group_images(records, grouping)

    scored: list[tuple[str, str, float]] = []
    for key, ids in groups.items():
        areas: list[int] = []
        for image_id in ids:
            area = by_id[image_id].area_px
            if area is None:
                raise MissingAreaError(f"image_id {image_id!r} has no area_px")
            areas.append(area)
        mean = group_mean_area(areas)
        if mean == 0.0:
            raise ZeroMeanAreaError(f"group {key!r} has zero mean area")
        scored.extend(
            (image_id, key, area_percent_diff(area, mean)) for image_id, area in zip(ids, areas)
        )
    return build_ranked_list(scored, Method.SIZE, grouping, normalized=False, distance=None)
