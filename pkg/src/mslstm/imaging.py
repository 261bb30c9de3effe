"""Binary PGM (P5) output for layer activations and predictions."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataIOError, ShapeError

__all__ = ["to_gray_bytes", "write_pgm", "montage"]


def to_gray_bytes(image: np.ndarray) -> np.ndarray:
    """Min-max normalize a 2-D array to uint8; constant input maps to 128."""
    if image.ndim != 2:
        raise ShapeError(f"expected a 2-D image, got shape {image.shape}")
    lo = float(image.min())
    hi = float(image.max())
    if hi == lo:
        return np.full(image.shape, 128, dtype=np.uint8)
    scaled = (image - lo) * (255.0 / (hi - lo))
    return np.clip(np.rint(scaled), 0, 255).astype(np.uint8)


def write_pgm(path, gray: np.ndarray) -> None:
    """Write uint8 grayscale as binary PGM: header ``P5\\n{w} {h}\\n255\\n``."""
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise ShapeError("write_pgm expects a 2-D uint8 array")
    h, w = gray.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    try:
        with open(Path(path), "wb") as fh:
            fh.write(header)
            fh.write(gray.tobytes())
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def montage(tiles: list[np.ndarray], columns: int, pad: int = 1) -> np.ndarray:
    """Tile equal-sized uint8 images into a grid, mid-gray padding between."""
    if not tiles:
        raise ShapeError("montage needs at least one tile")
    th, tw = tiles[0].shape
    for t in tiles:
        if t.shape != (th, tw):
            raise ShapeError("montage tiles must share one shape")
    rows = (len(tiles) + columns - 1) // columns
    out = np.full(
        (rows * th + (rows - 1) * pad, columns * tw + (columns - 1) * pad), 128, np.uint8
    )
    for i, tile in enumerate(tiles):
        r, c = divmod(i, columns)
        y = r * (th + pad)
        x = c * (tw + pad)
        out[y : y + th, x : x + tw] = tile
    return out
