"""Specimen-area extraction from frames against an empty-background calibration.

Pipeline: absolute difference -> threshold -> morphological opening then
closing -> area of the largest connected blob. Pixels outside the image
count as background for all morphological steps.

Image input is limited to portable graymaps/pixmaps (PGM/PPM, ASCII or
binary, 8-bit). Color frames collapse to grayscale with integer Rec. 601
luma weights before differencing.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatchError, MalformedRowError

DEFAULT_THRESHOLD = 20
DEFAULT_MORPH_RADIUS = 1


class Connectivity(Enum):
    FOUR = 4
    EIGHT = 8

    @property
    def structure(self) -> np.ndarray:
        if self is Connectivity.FOUR:
            return np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
        return np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class GrayImage:
    """8-bit grayscale frame, pixels in row-major (height, width) order."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise DimensionMismatchError(f"invalid image size {self.width}x{self.height}")
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.shape != (self.height, self.width):
            raise DimensionMismatchError(
                f"pixel block {px.shape} does not match {self.width}x{self.height}"
            )
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_array(cls, pixels: np.ndarray) -> "GrayImage":
        px = np.asarray(pixels, dtype=np.uint8)
        return cls(width=px.shape[1], height=px.shape[0], pixels=px)


@dataclass(frozen=True)
class SegmentationParams:
    threshold: int = DEFAULT_THRESHOLD
    morph_radius: int = DEFAULT_MORPH_RADIUS
    connectivity: Connectivity = Connectivity.EIGHT

    def __post_init__(self) -> None:
        if not 1 <= self.threshold <= 255:
            raise ValueError(f"threshold must be in 1..255, got {self.threshold}")
        if self.morph_radius < 0:
            raise ValueError(f"morph_radius must be >= 0, got {self.morph_radius}")


def difference_mask(frame: GrayImage, calibration: GrayImage, threshold: int) -> np.ndarray:
    """Boolean mask of pixels whose absolute difference exceeds threshold."""
    if (frame.width, frame.height) != (calibration.width, calibration.height):
        raise DimensionMismatchError(
            f"frame {frame.width}x{frame.height} vs "
            f"calibration {calibration.width}x{calibration.height}"
        )
    a = frame.pixels.astype(np.int16)
    b = calibration.pixels.astype(np.int16)
    return np.abs(a - b) > threshold


def morph_clean(mask: np.ndarray, morph_radius: int) -> np.ndarray:
    """Opening then closing with a square element of side 2*radius + 1.

    Radius 0 is the identity. Outside-image pixels are treated as
    background by every erosion/dilation step.
    """
    if morph_radius == 0:
        return np.asarray(mask, dtype=bool).copy()
    side = 2 * morph_radius + 1
    element = np.ones((side, side), dtype=bool)
    opened = ndimage.binary_opening(mask, structure=element)
    return ndimage.binary_closing(opened, structure=element)


def largest_blob_area(mask: np.ndarray, connectivity: Connectivity = Connectivity.EIGHT) -> int:
    """Pixel count of the largest connected component; 0 for an empty mask."""
    labels, count = ndimage.label(mask, structure=connectivity.structure)
    if count == 0:
        return 0
    return int(np.bincount(labels.ravel())[1:].max())


def extract_area(
    frame: GrayImage,
    calibration: GrayImage,
    params: SegmentationParams = SegmentationParams(),
) -> int:
    """Specimen area of one frame: difference -> clean -> largest blob."""
    mask = difference_mask(frame, calibration, params.threshold)
    mask = morph_clean(mask, params.morph_radius)
    return largest_blob_area(mask, params.connectivity)


# ---------------------------------------------------------------------------
# portable anymap IO
# ---------------------------------------------------------------------------

_PNM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def _read_tokens(data: bytes, count: int, start: int) -> tuple[list[bytes], int]:
    tokens: list[bytes] = []
    pos = start
    while len(tokens) < count:
        m = _PNM_TOKEN.match(data, pos)
        if not m:
            raise MalformedRowError("truncated PNM header")
        tokens.append(m.group(1))
        pos = m.end()
    return tokens, pos


def _luma(rgb: np.ndarray) -> np.ndarray:
    # Integer Rec. 601 weights with round-half-up, exact and deterministic.
    r = rgb[..., 0].astype(np.uint32)
    g = rgb[..., 1].astype(np.uint32)
    b = rgb[..., 2].astype(np.uint32)
    return ((299 * r + 587 * g + 114 * b + 500) // 1000).astype(np.uint8)


def read_pnm(source: str | Path | IO[bytes]) -> GrayImage:
    """Read a P2/P3/P5/P6 image (maxval <= 255); color collapses to luma."""
    if isinstance(source, (str, Path)):
        data = Path(source).read_bytes()
    else:
        data = source.read()
    if len(data) < 2:
        raise MalformedRowError("not a PNM file: too short")
    magic = data[:2]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise MalformedRowError(f"unsupported PNM magic {magic!r}")
    color = magic in (b"P3", b"P6")
    binary = magic in (b"P5", b"P6")

    (w_raw, h_raw, maxval_raw), pos = _read_tokens(data, 3, 2)
    try:
        width, height, maxval = int(w_raw), int(h_raw), int(maxval_raw)
    except ValueError:
        raise MalformedRowError("unparseable PNM header") from None
    if width < 1 or height < 1:
        raise MalformedRowError(f"invalid PNM size {width}x{height}")
    if not 0 < maxval <= 255:
        raise MalformedRowError(f"unsupported PNM maxval {maxval} (8-bit only)")

    channels = 3 if color else 1
    count = width * height * channels
    if binary:
        # exactly one whitespace byte separates header from raster
        raster = data[pos + 1 : pos + 1 + count]
        if len(raster) != count:
            raise MalformedRowError("truncated PNM raster")
        values = np.frombuffer(raster, dtype=np.uint8)
    else:
        tokens, _ = _read_tokens(data, count, pos)
        try:
            values = np.array([int(t) for t in tokens], dtype=np.int32)
        except ValueError:
            raise MalformedRowError("unparseable PNM sample") from None
        if values.min() < 0 or values.max() > maxval:
            raise MalformedRowError("PNM sample out of range")
        values = values.astype(np.uint8)

    if color:
        rgb = values.reshape(height, width, 3)
        return GrayImage(width=width, height=height, pixels=_luma(rgb))
    return GrayImage(width=width, height=height, pixels=values.reshape(height, width))


def write_pgm(image: GrayImage, dest: str | Path | IO[bytes]) -> None:
    """Write a binary P5 graymap."""
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    payload = header + image.pixels.tobytes()
    if isinstance(dest, (str, Path)):
        Path(dest).write_bytes(payload)
    else:
        dest.write(payload)
