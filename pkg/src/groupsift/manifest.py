"""Dataset model: image records, the grouping hierarchy, and ingestion.

A dataset is described by a CSV manifest (one row per image) plus an
embedding file in either delimited-text or binary form. Records are
immutable after load; all downstream ranking code treats them as shared
read-only inputs.

Grouping hierarchy, coarse to fine: Taxon > Specimen > Sample > Cam.
Group keys are composite (the full ancestor path) so identically named
children of different parents never merge.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    DuplicateIdError,
    HierarchyViolationError,
    MalformedRowError,
    MissingColumnError,
    NonFiniteValueError,
    UnknownImageIdError,
)

MANIFEST_COLUMNS = ("image_id", "path", "taxon", "specimen", "sample", "cam")
OPTIONAL_COLUMNS = ("area_px", "outlier", "outlier_type")

EMBEDDING_MAGIC = b"EMB1"


class OutlierType(str, Enum):
    BUBBLES = "Bubbles"
    DETACHED_PARTS = "DetachedParts"
    FORCEPS = "Forceps"
    MISCLASSIFICATION = "Misclassification"


class Grouping(str, Enum):
    """Level of the hierarchy at which prototypes and mean areas are computed."""

    CAM = "cam"
    SAMPLE = "sample"
    SPECIMEN = "specimen"
    TAXON = "taxon"

    @property
    def key_fields(self) -> tuple[str, ...]:
        """Record fields composing this level's group key, ancestors first."""
        return _KEY_FIELDS[self]

    @property
    def coarseness(self) -> int:
        """Total order: Cam < Sample < Specimen < Taxon."""
        return _COARSENESS[self]


_KEY_FIELDS = {
    Grouping.TAXON: ("taxon",),
    Grouping.SPECIMEN: ("taxon", "specimen"),
    Grouping.SAMPLE: ("taxon", "specimen", "sample"),
    Grouping.CAM: ("taxon", "specimen", "sample", "cam"),
}
_COARSENESS = {Grouping.CAM: 0, Grouping.SAMPLE: 1, Grouping.SPECIMEN: 2, Grouping.TAXON: 3}


@dataclass(frozen=True)
class ImageRecord:
    """One image with its group keys and optional area / ground-truth label."""

    image_id: str
    path: str
    taxon: str
    specimen: str
    sample: str
    cam: str
    area_px: int | None = None
    outlier: bool | None = None
    outlier_type: OutlierType | None = None

    def group_key(self, grouping: Grouping) -> str:
        return compose_group_key(getattr(self, f) for f in grouping.key_fields)


def compose_group_key(parts: Iterable[str]) -> str:
    """Join hierarchy components into one key.

    Embedded separators are escaped so that e.g. taxon "a/b" + specimen "c"
    and taxon "a" + specimen "b/c" yield distinct keys.
    """
    return "/".join(p.replace("\\", "\\\\").replace("/", "\\/") for p in parts)


# ---------------------------------------------------------------------------
# manifest CSV
# ---------------------------------------------------------------------------

_TRUE = {"true", "1", "yes"}
_FALSE = {"false", "0", "no"}


def _parse_outlier(raw: str, row_no: int) -> bool | None:
    text = raw.strip().lower()
    if not text:
        return None
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise MalformedRowError(f"row {row_no}: unparseable outlier flag {raw!r}")


def _parse_row(row: dict[str, str | None], row_no: int) -> ImageRecord:
    for col in MANIFEST_COLUMNS:
        value = row.get(col)
        if value is None:
            raise MalformedRowError(f"row {row_no}: missing value for column {col!r}")
        if not value.strip():
            raise MalformedRowError(f"row {row_no}: empty {col!r}")

    area_px: int | None = None
    raw_area = (row.get("area_px") or "").strip()
    if raw_area:
        try:
            area_px = int(raw_area)
        except ValueError:
            raise MalformedRowError(f"row {row_no}: unparseable area_px {raw_area!r}") from None
        if area_px < 0:
            raise MalformedRowError(f"row {row_no}: negative area_px {area_px}")

    outlier = _parse_outlier(row.get("outlier") or "", row_no)

    outlier_type: OutlierType | None = None
    raw_type = (row.get("outlier_type") or "").strip()
    if raw_type:
        try:
            outlier_type = OutlierType(raw_type)
        except ValueError:
            raise MalformedRowError(f"row {row_no}: unknown outlier_type {raw_type!r}") from None
        if outlier is not True:
            raise MalformedRowError(
                f"row {row_no}: outlier_type {raw_type!r} on a row with outlier != true"
            )

    return ImageRecord(
        image_id=row["image_id"].strip(),
        path=row["path"].strip(),
        taxon=row["taxon"].strip(),
        specimen=row["specimen"].strip(),
        sample=row["sample"].strip(),
        cam=row["cam"].strip(),
        area_px=area_px,
        outlier=outlier,
        outlier_type=outlier_type,
    )


def _check_hierarchy(records: Sequence[ImageRecord]) -> None:
    # Each specimen id belongs to exactly one taxon; each sample id to exactly
    # one (taxon, specimen). Cam sequences are identified by their full path,
    # so no bare-cam check is possible (cam names repeat by design).
    specimen_parent: dict[str, str] = {}
    sample_parent: dict[str, tuple[str, str]] = {}
    for rec in records:
        seen = specimen_parent.setdefault(rec.specimen, rec.taxon)
        if seen != rec.taxon:
            raise HierarchyViolationError(
                f"specimen {rec.specimen!r} appears under taxa {seen!r} and {rec.taxon!r}"
            )
        parent = (rec.taxon, rec.specimen)
        seen_parent = sample_parent.setdefault(rec.sample, parent)
        if seen_parent != parent:
            raise HierarchyViolationError(
                f"sample {rec.sample!r} appears under specimens "
                f"{seen_parent[1]!r} and {rec.specimen!r}"
            )


def load_manifest(source: str | Path | IO[str]) -> list[ImageRecord]:
    """Load and validate a manifest CSV.

    Requires a header row with at least the six identity columns. Rejects
    duplicate ids, malformed values and hierarchy violations.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            return load_manifest(fh)

    reader = csv.DictReader(source)
    header = reader.fieldnames
    if header is None:
        raise MissingColumnError("manifest is empty: no header row")
    missing = [c for c in MANIFEST_COLUMNS if c not in header]
    if missing:
        raise MissingColumnError(f"manifest header lacks column(s): {', '.join(missing)}")

    records: list[ImageRecord] = []
    seen_ids: set[str] = set()
    for row_no, row in enumerate(reader, start=2):
        if row.get(None):
            raise MalformedRowError(f"row {row_no}: more fields than header columns")
        rec = _parse_row(row, row_no)
        if rec.image_id in seen_ids:
            raise DuplicateIdError(f"duplicate image_id {rec.image_id!r} (row {row_no})")
        seen_ids.add(rec.image_id)
        records.append(rec)

    _check_hierarchy(records)
    return records


def save_manifest(records: Iterable[ImageRecord], dest: str | Path | IO[str]) -> None:
    """Write records back to CSV; load_manifest(save_manifest(r)) == r."""
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            save_manifest(records, fh)
        return

    writer = csv.writer(dest)
    writer.writerow(MANIFEST_COLUMNS + OPTIONAL_COLUMNS)
    for rec in records:
        writer.writerow(
            [
                rec.image_id,
                rec.path,
                rec.taxon,
                rec.specimen,
                rec.sample,
                rec.cam,
                "" if rec.area_px is None else str(rec.area_px),
                "" if rec.outlier is None else ("true" if rec.outlier else "false"),
                "" if rec.outlier_type is None else rec.outlier_type.value,
            ]
        )


def group_images(records: Sequence[ImageRecord], grouping: Grouping) -> dict[str, list[str]]:
    """Partition image ids by composite group key at the chosen level.

    Keys appear in first-encounter order; members keep record order.
    """
    groups: dict[str, list[str]] = {}
    for rec in records:
        groups.setdefault(rec.group_key(grouping), []).append(rec.image_id)
    return groups


def with_area(record: ImageRecord, area_px: int) -> ImageRecord:
    """Copy of a record with area_px set (records are frozen)."""
    return replace(record, area_px=area_px)


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------

class EmbeddingMatrix:
    """Dense float64 embeddings indexed by image_id.

    Rows are stored as one contiguous (N, M) array; 32-bit inputs are
    widened on load so all downstream arithmetic runs in float64.
    """

    def __init__(self, ids: Sequence[str], data: np.ndarray):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2:
            raise DimensionMismatchError(f"embedding data must be 2-D, got shape {data.shape}")
        if len(ids) != data.shape[0]:
            raise DimensionMismatchError(
                f"{len(ids)} ids vs {data.shape[0]} embedding rows"
            )
        if data.shape[1] < 1:
            raise DimensionMismatchError("embedding dimension must be >= 1")
        bad = np.argwhere(~np.isfinite(data))
        if bad.size:
            i = int(bad[0, 0])
            raise NonFiniteValueError(f"non-finite embedding component for {ids[i]!r}")
        self._ids = list(ids)
        self._index = {image_id: i for i, image_id in enumerate(self._ids)}
        if len(self._index) != len(self._ids):
            dupes = [i for i in self._index if self._ids.count(i) > 1]
            raise DuplicateIdError(f"duplicate embedding id {dupes[0]!r}")
        self._data = data

    @property
    def dim(self) -> int:
        return self._data.shape[1]

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._index

    def vector(self, image_id: str) -> np.ndarray:
        try:
            return self._data[self._index[image_id]]
        except KeyError:
            raise UnknownImageIdError(f"no embedding for image_id {image_id!r}") from None

    def submatrix(self, image_ids: Sequence[str]) -> np.ndarray:
        """(len(image_ids), M) view-copy in the given order."""
        try:
            rows = [self._index[i] for i in image_ids]
        except KeyError as exc:
            raise UnknownImageIdError(f"no embedding for image_id {exc.args[0]!r}") from None
        return self._data[rows]


def _validate_against_manifest(ids: Sequence[str], records: Sequence[ImageRecord]) -> None:
    known = {r.image_id for r in records}
    for image_id in ids:
        if image_id not in known:
            raise UnknownImageIdError(f"embedding id {image_id!r} not in manifest")


def load_embeddings(
    source: str | Path | IO[bytes],
    records: Sequence[ImageRecord],
    dim: int | None = None,
) -> EmbeddingMatrix:
    """Load embeddings from text or binary form (autodetected by magic bytes).

    Every embedding id must exist in the manifest. `dim`, when given,
    is enforced against the file's column count / declared dimension.
    """
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            return load_embeddings(fh, records, dim=dim)

    head = source.read(4)
    if head == EMBEDDING_MAGIC:
        matrix = _read_binary(source, dim)
    else:
        text = (head + source.read()).decode("utf-8")
        matrix = _read_text(io.StringIO(text), dim)
    _validate_against_manifest(matrix.ids, records)
    return matrix


def _read_text(stream: IO[str], dim: int | None) -> EmbeddingMatrix:
    ids: list[str] = []
    rows: list[list[float]] = []
    width: int | None = dim
    for row_no, row in enumerate(csv.reader(stream), start=1):
        if not row:
            continue
        values_raw = row[1:]
        if row_no == 1 and values_raw:
            # A header row is one whose numeric columns do not parse.
            try:
                [float(v) for v in values_raw]
            except ValueError:
                continue
        if width is None:
            width = len(values_raw)
            if width < 1:
                raise DimensionMismatchError(f"row {row_no}: no embedding columns")
        if len(values_raw) != width:
            raise DimensionMismatchError(
                f"row {row_no} ({row[0]!r}): {len(values_raw)} values, expected {width}"
            )
        try:
            values = [float(v) for v in values_raw]
        except ValueError:
            raise MalformedRowError(f"row {row_no} ({row[0]!r}): unparseable value") from None
        ids.append(row[0])
        rows.append(values)
    if not ids:
        raise MalformedRowError("embedding file contains no rows")
    return EmbeddingMatrix(ids, np.array(rows, dtype=np.float64))


def _read_binary(stream: IO[bytes], dim: int | None) -> EmbeddingMatrix:
    # Layout after the 4 magic bytes: u32 dim, u64 row count, then per row a
    # u16-length-prefixed UTF-8 id followed by dim little-endian float32s.
    header = stream.read(12)
    if len(header) != 12:
        raise MalformedRowError("truncated embedding header")
    width, count = struct.unpack("<IQ", header)
    if width < 1:
        raise DimensionMismatchError(f"declared embedding dimension {width} < 1")
    if dim is not None and width != dim:
        raise DimensionMismatchError(f"declared dimension {width}, expected {dim}")
    ids: list[str] = []
    data = np.empty((count, width), dtype=np.float64)
    row_bytes = width * 4
    for i in range(count):
        raw_len = stream.read(2)
        if len(raw_len) != 2:
            raise MalformedRowError(f"truncated id length at row {i + 1}")
        (id_len,) = struct.unpack("<H", raw_len)
        raw_id = stream.read(id_len)
        if len(raw_id) != id_len:
            raise MalformedRowError(f"truncated id at row {i + 1}")
        raw_vec = stream.read(row_bytes)
        if len(raw_vec) != row_bytes:
            raise MalformedRowError(f"truncated vector at row {i + 1}")
        ids.append(raw_id.decode("utf-8"))
        data[i] = np.frombuffer(raw_vec, dtype="<f4").astype(np.float64)
    return EmbeddingMatrix(ids, data)


def save_embeddings_text(matrix: EmbeddingMatrix, dest: str | Path | IO[str]) -> None:
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            save_embeddings_text(matrix, fh)
        return
    writer = csv.writer(dest)
    for image_id in matrix.ids:
        writer.writerow([image_id] + [repr(float(v)) for v in matrix.vector(image_id)])


def save_embeddings_binary(matrix: EmbeddingMatrix, dest: str | Path | IO[bytes]) -> None:
    if isinstance(dest, (str, Path)):
        with open(dest, "wb") as fh:
            save_embeddings_binary(matrix, fh)
        return
    dest.write(EMBEDDING_MAGIC)
    dest.write(struct.pack("<IQ", matrix.dim, len(matrix)))
    for image_id in matrix.ids:
        raw_id = image_id.encode("utf-8")
        dest.write(struct.pack("<H", len(raw_id)))
        dest.write(raw_id)
        dest.write(matrix.vector(image_id).astype("<f4").tobytes())
