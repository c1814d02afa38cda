"""Seeded synthetic datasets for controlled ranking experiments.

Real embeddings come from an external encoder; these generators build
datasets whose ground truth is known by construction, so recovery rates
of the ranking methods can be asserted rather than eyeballed.
"""

from __future__ import annotations

import numpy as np

from .manifest import EmbeddingMatrix, ImageRecord, OutlierType


def _record(
    image_id: str,
    taxon: str,
    specimen: str,
    sample: str,
    outlier: bool,
    outlier_type: OutlierType | None = None,
    area_px: int | None = None,
) -> ImageRecord:
    return ImageRecord(
        image_id=image_id,
        path=f"{taxon}/{image_id}.png",
        taxon=taxon,
        specimen=specimen,
        sample=sample,
        cam="C1",
        area_px=area_px,
        outlier=outlier,
        outlier_type=outlier_type,
    )


def planted_embedding_dataset(
    seed: int,
    n_groups: int = 20,
    group_size: int = 50,
    dim: int = 32,
    sigma: float = 0.05,
) -> tuple[list[ImageRecord], EmbeddingMatrix, set[str]]:
    """Gaussian clusters around distinct unit prototypes, one impostor each.

    Every group holds group_size - 1 members sampled around its own
    prototype and one planted outlier sampled around another group's
    prototype (a misclassified image). Returns records, embeddings, and
    the planted ids.
    """
    if n_groups < 2:
        raise ValueError("need at least two groups to plant impostors")
    rng = np.random.default_rng(seed)
    prototypes = rng.normal(size=(n_groups, dim))
    prototypes /= np.linalg.norm(prototypes, axis=1, keepdims=True)

    records: list[ImageRecord] = []
    ids: list[str] = []
    rows: list[np.ndarray] = []
    planted: set[str] = set()
    for g in range(n_groups):
        taxon = f"T{g:03d}"
        foreign = int(rng.integers(0, n_groups - 1))
        if foreign >= g:
            foreign += 1
        outlier_pos = int(rng.integers(0, group_size))
        for k in range(group_size):
            image_id = f"im_{g:03d}_{k:03d}"
            is_outlier = k == outlier_pos
            center = prototypes[foreign] if is_outlier else prototypes[g]
            rows.append(center + sigma * rng.normal(size=dim))
            ids.append(image_id)
            records.append(
                _record(
                    image_id,
                    taxon=taxon,
                    specimen=f"Sp{g:03d}",
                    sample=f"S{g:03d}",
                    outlier=is_outlier,
                    outlier_type=OutlierType.MISCLASSIFICATION if is_outlier else None,
                )
            )
            if is_outlier:
                planted.add(image_id)
    return records, EmbeddingMatrix(ids, np.vstack(rows)), planted


def planted_size_manifest(
    seed: int,
    n_groups: int = 100,
    group_size: int = 100,
    outliers_per_group: tuple[int, int] = (1, 3),
) -> tuple[list[ImageRecord], set[str]]:
    """Area manifest with per-group size impostors at 10x or 0.1x the mean.

    Inlier areas vary within +-20% of a per-group base, so inlier scores
    are nonzero but far below the planted deviations. Returns records and
    the planted ids.
    """
    rng = np.random.default_rng(seed)
    records: list[ImageRecord] = []
    planted: set[str] = set()
    lo, hi = outliers_per_group
    for g in range(n_groups):
        base = float(10.0 ** rng.uniform(3.0, 5.0))
        n_out = int(rng.integers(lo, hi + 1))
        outlier_pos = set(rng.choice(group_size, size=n_out, replace=False).tolist())
        for k in range(group_size):
            image_id = f"im_{g:03d}_{k:03d}"
            if k in outlier_pos:
                factor = 10.0 if rng.random() < 0.5 else 0.1
                area = max(1, int(round(base * factor)))
                planted.add(image_id)
            else:
                area = max(1, int(round(base * rng.uniform(0.8, 1.2))))
            records.append(
                _record(
                    image_id,
                    taxon=f"T{g:03d}",
                    specimen=f"Sp{g:03d}",
                    sample=f"S{g:03d}",
                    outlier=k in outlier_pos,
                    outlier_type=OutlierType.DETACHED_PARTS if k in outlier_pos else None,
                    area_px=area,
                )
            )
    return records, planted
