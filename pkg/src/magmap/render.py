"""Grayscale rasters of a predicted map slice, written as binary PGM."""
from __future__ import annotations

import re
from pathlib import Path
from typing import Optional

import numpy as np

from .data import MapTable
from .errors import DataError


def slice_table(table: MapTable, z_index: Optional[int] = None):
    """Magnitude and mean-of-diagonal std on one z slice, each shaped (ny, nx).

    Row 0 is the largest y so the raster reads like a map seen from above.
    """
    nx, ny, nz = table.shape
    if nz > 1 and z_index is None:
        raise DataError(f"map lattice has {nz} z levels; choose one with a slice index")
    k = 0 if z_index is None else int(z_index)
    if not 0 <= k < nz:
        raise DataError(f"slice index {k} out of range for {nz} z levels")
    mag = table.magnitude.reshape(nx, ny, nz)[:, :, k]
    var = table.variance.reshape(nx, ny, nz, 3)[:, :, k]
    std = np.sqrt(np.clip(var.mean(axis=-1), 0.0, None))
    return mag.T[::-1], std.T[::-1]


def _minmax(a: np.ndarray) -> np.ndarray:
    lo, hi = np.nanmin(a), np.nanmax(a)
    if not hi > lo:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def magnitude_raster(mag: np.ndarray) -> np.ndarray:
    """8-bit intensities, darker where the magnitude is higher."""
    return np.round(255 * (1.0 - _minmax(mag))).astype(np.uint8)


def certainty(std: np.ndarray) -> np.ndarray:
    """1 at the smallest standard deviation in the image, 0 at the largest.

    A slice with constant std carries no contrast and maps to all ones.
    """
    if np.isnan(std).all():
        raise DataError("map has no variance columns; refit with Lanczos iterations")
    return 1.0 - _minmax(std)


# Header fields are separated by whitespace; exactly one whitespace byte precedes the pixels.
_PGM_HEADER = re.compile(rb"P5\s+(?P<w>\d+)\s+(?P<h>\d+)\s+(?P<maxval>\d+)\s")


def write_pgm(path, image: np.ndarray):
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + image.tobytes())


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    m = _PGM_HEADER.match(buf)
    if m is None or int(m["maxval"]) != 255:
        raise DataError(f"{path} is not an 8-bit binary PGM file")
    w, h = int(m["w"]), int(m["h"])
    data = buf[m.end():m.end() + w * h]
    if len(data) != w * h:
        raise DataError(f"{path}: truncated image data")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


def render(table: MapTable, out_path, certainty_path=None, z_index: Optional[int] = None):
    """Write the magnitude raster and optionally the certainty raster; returns the image shape."""
    mag, std = slice_table(table, z_index)
    write_pgm(out_path, magnitude_raster(mag))
    if certainty_path is not None:
        write_pgm(certainty_path, np.round(255 * certainty(std)).astype(np.uint8))
    return mag.shape
