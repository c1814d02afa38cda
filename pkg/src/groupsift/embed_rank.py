"""Prototype-distance outlier scoring for grouped embeddings.

Each group's prototype is the arithmetic mean of its member vectors. An
image's score is its distance to the group prototype, optionally divided
by the group's mean pairwise distance so that tight and dispersed groups
become comparable in one pooled list.

All arithmetic runs in float64 regardless of how embeddings were stored;
prototype sums over ~1e5 members need the headroom.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist

from .errors import (
    DimensionMismatchError,
    EmptyGroupError,
    UnknownImageIdError,
    ZeroNormVectorError,
)
from .manifest import EmbeddingMatrix, Grouping, ImageRecord, group_images
from .ranking import DistanceMetric, Method, RankedList, build_ranked_list


def _pair(z_i: np.ndarray, z_j: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    u = np.asarray(z_i, dtype=np.float64)
    v = np.asarray(z_j, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatchError(f"vector shapes differ: {u.shape} vs {v.shape}")
    return u, v


def cosine_distance(z_i: np.ndarray, z_j: np.ndarray) -> float:
    """1 - cos(angle) of two vectors; orthogonal vectors score 1."""
    u, v = _pair(z_i, z_j)
    return float(_cosine_rows(u[None, :], v)[0])


def euclidean_distance(z_i: np.ndarray, z_j: np.ndarray) -> float:
    u, v = _pair(z_i, z_j)
    return float(np.linalg.norm(u - v))


def _norms(rows: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0.0):
        raise ZeroNormVectorError(f"zero-norm {what} in cosine distance")
    return norms


def _cosine_rows(rows: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Cosine distance of each row to one reference vector, clamped to [0, 2]."""
    row_norms = _norms(rows, "vector")
    ref_norm = float(np.linalg.norm(ref))
    if ref_norm == 0.0:
        raise ZeroNormVectorError("zero-norm reference vector in cosine distance")
    cos = (rows @ ref) / (row_norms * ref_norm)
    return np.clip(1.0 - cos, 0.0, 2.0)


def group_prototype(embeddings: np.ndarray) -> np.ndarray:
    """Elementwise mean of the group's (N, M) member block."""
    block = np.asarray(embeddings, dtype=np.float64)
    if block.ndim != 2 or block.shape[0] == 0:
        raise EmptyGroupError("prototype of an empty group")
    return block.mean(axis=0)


def group_distances(embeddings: np.ndarray, metric: DistanceMetric) -> np.ndarray:
    """Distance of every member to the group prototype, in member order."""
    block = np.asarray(embeddings, dtype=np.float64)
    prototype = group_prototype(block)
    if metric is DistanceMetric.COSINE:
        return _cosine_rows(block, prototype)
    return np.linalg.norm(block - prototype, axis=1)


def mean_pairwise_distance(embeddings: np.ndarray, metric: DistanceMetric) -> float:
    """Mean over all N^2 ordered member pairs, self-pairs included.

    (Self-distances contribute 0, so this is (N-1)/N times the mean over
    distinct pairs.)
    """
    block = np.asarray(embeddings, dtype=np.float64)
    if block.ndim != 2 or block.shape[0] == 0:
        raise EmptyGroupError("mean pairwise distance of an empty group")
    n = block.shape[0]
    if metric is DistanceMetric.COSINE:
        # sum_ij (1 - u_i.u_j) = n^2 - ||sum_i u_i||^2 over unit rows
        unit = block / _norms(block, "vector")[:, None]
        total = unit.sum(axis=0)
        mean = 1.0 - float(total @ total) / (n * n)
        # the subtraction leaves O(eps) residue when all members point the
        # same way; below float noise the true mean is an exact zero
        return mean if mean > 1e-12 else 0.0
    if n == 1:
        return 0.0
    return float(pdist(block).sum() * 2.0 / (n * n))


def normalized_group_distances(embeddings: np.ndarray, metric: DistanceMetric) -> np.ndarray:
    """Prototype distances divided by the group's mean pairwise distance.

    An all-identical group has mean distance 0; its normalized distances
    are defined as 0 (no member is an outlier relative to the group).
    """
    raw = group_distances(embeddings, metric)
    mean = mean_pairwise_distance(embeddings, metric)
    if mean == 0.0:
        return np.zeros_like(raw)
    return raw / mean


def _score_group(
    ids: Sequence[str], block: np.ndarray, normalized: bool, metric: DistanceMetric
) -> list[float]:
    try:
        if normalized:
            distances = normalized_group_distances(block, metric)
        else:
            distances = group_distances(block, metric)
    except ZeroNormVectorError:
        # Re-raise naming a concrete offender for actionable diagnostics.
        norms = np.linalg.norm(np.asarray(block, dtype=np.float64), axis=1)
        zero = [ids[i] for i in np.flatnonzero(norms == 0.0)]
        if zero:
            raise ZeroNormVectorError(f"zero-norm embedding for image_id {zero[0]!r}") from None
        raise
    return [float(d) for d in distances]


def rank_embedding(
    records: Sequence[ImageRecord],
    embeddings: EmbeddingMatrix,
    grouping: Grouping,
    normalized: bool = False,
    metric: DistanceMetric = DistanceMetric.COSINE,
    workers: int = 1,
) -> RankedList:
    """Pooled ranking of all images by prototype distance, descending.

    Singleton groups score 0 (the member is its own prototype) and sink to
    the list tail. Group computations are independent; `workers` > 1 runs
    them on a thread pool with a deterministic final merge.
    """
    missing = [r.image_id for r in records if r.image_id not in embeddings]
    if missing:
        raise UnknownImageIdError(
            f"no embedding for {len(missing)} manifest image(s), first {missing[0]!r}"
        )
    groups = group_images(records, grouping)

    def score(item: tuple[str, list[str]]) -> list[tuple[str, str, float]]:
        key, ids = item
        block = embeddings.submatrix(ids)
        return [(i, key, s) for i, s in zip(ids, _score_group(ids, block, normalized, metric))]

    items = list(groups.items())
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_group = list(pool.map(score, items))
    else:
        per_group = [score(item) for item in items]

    scored = [triple for group in per_group for triple in group]
    return build_ranked_list(scored, Method.EMBEDDING, grouping, normalized, metric)
