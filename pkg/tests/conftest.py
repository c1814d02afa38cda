"""Shared fixtures and builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from groupsift.manifest import EmbeddingMatrix, ImageRecord


def record(
    image_id: str,
    taxon: str = "T1",
    specimen: str = "Sp1",
    sample: str = "S1",
    cam: str = "C1",
    area_px: float | None = None,
    outlier: bool | None = False,
    outlier_type=None,
) -> ImageRecord:
    return ImageRecord(
        image_id=image_id,
        path=f"img/{image_id}.png",
        taxon=taxon,
        specimen=specimen,
        sample=sample,
        cam=cam,
        area_px=area_px,
        outlier=outlier,
        outlier_type=outlier_type,
    )


def embeddings_for(ids: list[str], rows) -> EmbeddingMatrix:
    return EmbeddingMatrix(list(ids), np.asarray(rows, dtype=np.float64))


def unit(deg: float) -> list[float]:
    """Unit vector in 2-D at the given angle in degrees."""
    r = np.deg2rad(deg)
    return [float(np.cos(r)), float(np.sin(r))]


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(42)
