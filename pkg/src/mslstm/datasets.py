"""Synthetic sequence datasets and the MNIST IDX glyph reader.

Two generators are provided: bouncing-digit sequences in the style of the
classic moving-digit benchmark, and a radar-like field of drifting Gaussian
blobs for exercising the categorical skill scores. Both derive one RNG per
sequence from (seed, sequence index) via a splitmix64 mix, so generation
order and parallelism cannot change the data.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataIOError, FormatError

__all__ = [
    "MovingSpec",
    "AdvectionSpec",
    "SequenceDataset",
    "generate_moving",
    "generate_advection",
    "digit_tracks",
    "read_idx",
    "procedural_glyphs",
    "derive_seed",
    "IDX_IMAGE_MAGIC",
]

IDX_IMAGE_MAGIC = 0x00000803


def derive_seed(seed: int, index: int) -> int:
    """Per-sequence seed: splitmix64 finalizer of (seed XOR index)."""
    z = (seed ^ index) & 0xFFFFFFFFFFFFFFFF
    z = (z + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


@dataclass(frozen=True)
class MovingSpec:
    """Bouncing-digit sequence parameters."""

    count: int = 100
    digits: int = 2
    frames: int = 20
    canvas: int = 64
    glyph: int = 28
    speed_min: float = 2.0
    speed_max: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.glyph >= self.canvas:
            raise ConfigError(f"glyph {self.glyph} leaves no room in canvas {self.canvas}")
        if self.frames < 2:
            raise ConfigError("need at least 2 frames")
        if not (0 < self.speed_min <= self.speed_max):
            raise ConfigError("speed range must satisfy 0 < min <= max")
        if self.count < 1 or self.digits < 1:
            raise ConfigError("count and digits must be positive")


@dataclass(frozen=True)
class AdvectionSpec:
    """Drifting Gaussian-blob field parameters."""

    count: int = 100
    blobs: int = 3
    frames: int = 20
    canvas: int = 64
    amplitude: tuple[float, float] = (0.6, 1.0)
    radius: tuple[float, float] = (4.0, 8.0)
    speed: tuple[float, float] = (0.5, 2.0)
    seed: int = 0

    def __post_init__(self):
        if self.amplitude[0] < 0:
            raise ConfigError("amplitudes must be non-negative")
        if self.count < 1 or self.blobs < 1 or self.frames < 1:
            raise ConfigError("count, blobs and frames must be positive")


@dataclass
class SequenceDataset:
    """A stack of sequences shaped (N, T, c, h, w), values in [0, 1]."""

    sequences: np.ndarray
    split: str = "train"

    def __post_init__(self):
        if self.sequences.ndim != 5:
            raise ConfigError(f"sequences must be rank 5, got {self.sequences.ndim}")

    def __len__(self) -> int:
        return self.sequences.shape[0]

    @property
    def frames(self) -> int:
        return self.sequences.shape[1]


# ---------------------------------------------------------------------------
# glyph sources


def read_idx(path) -> np.ndarray:
    """Read an IDX image file into (count, rows, cols) floats in [0, 1]."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 16:
        raise DataIOError(f"{path}: too short for an IDX image header ({len(raw)} bytes)")
    magic, count, rows, cols = struct.unpack_from(">IIII", raw, 0)
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(
            f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}"
        )
    expected = 16 + count * rows * cols
    if len(raw) < expected:
        raise DataIOError(f"{path}: expected {expected} bytes, got {len(raw)}")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=count * rows * cols, offset=16)
    return pixels.reshape(count, rows, cols).astype(np.float64) / 255.0


# 7-segment endpoints on the unit square (x right, y down)
_SEGMENTS = {
    "a": ((0.18, 0.12), (0.82, 0.12)),
    "b": ((0.82, 0.12), (0.82, 0.50)),
    "c": ((0.82, 0.50), (0.82, 0.88)),
    "d": ((0.18, 0.88), (0.82, 0.88)),
    "e": ((0.18, 0.50), (0.18, 0.88)),
    "f": ((0.18, 0.12), (0.18, 0.50)),
    "g": ((0.18, 0.50), (0.82, 0.50)),
}
_DIGIT_SEGMENTS = [
    "abcdef", "bc", "abged", "abgcd", "fgbc",
    "afgcd", "afgecd", "abc", "abcdefg", "abcdfg",
]


def procedural_glyphs(size: int = 28) -> np.ndarray:
    """Ten seven-segment digits rasterized with thick anti-aliased strokes.

    Offline fallback so no MNIST download is ever required; values in [0, 1].
    """
    ys, xs = np.meshgrid(
        (np.arange(size) + 0.5) / size, (np.arange(size) + 0.5) / size, indexing="ij"
    )
    radius = 0.09
    glyphs = np.zeros((10, size, size))
    for digit, segs in enumerate(_DIGIT_SEGMENTS):
        for seg in segs:
            (x0, y0), (x1, y1) = _SEGMENTS[seg]
            dx, dy = x1 - x0, y1 - y0
            length2 = dx * dx + dy * dy
            t = ((xs - x0) * dx + (ys - y0) * dy) / length2
            t = np.clip(t, 0.0, 1.0)
            dist = np.hypot(xs - (x0 + t * dx), ys - (y0 + t * dy))
            stroke = np.clip((radius - dist) / (0.35 * radius) + 1.0, 0.0, 1.0)
            glyphs[digit] = np.maximum(glyphs[digit], stroke)
    return glyphs


def resize_glyphs(glyphs: np.ndarray, size: int) -> np.ndarray:
    """Area-mean downscale when divisible, else bilinear resampling."""
    src = glyphs.shape[1]
    if src == size:
        return glyphs
    if src % size == 0:
        f = src // size
        out = glyphs.reshape(len(glyphs), size, f, size, f).mean(axis=(2, 4))
        return out / max(out.max(), 1e-12)
    pos = (np.arange(size) + 0.5) * src / size - 0.5
    pos = np.clip(pos, 0, src - 1)
    i0 = np.floor(pos).astype(int)
    i1 = np.minimum(i0 + 1, src - 1)
    frac = pos - i0
    rows = glyphs[:, i0, :] * (1 - frac)[None, :, None] + glyphs[:, i1, :] * frac[None, :, None]
    out = rows[:, :, i0] * (1 - frac)[None, None, :] + rows[:, :, i1] * frac[None, None, :]
    return out


# ---------------------------------------------------------------------------
# bouncing digits


def _bounce(pos: float, vel: float, hi: float) -> tuple[float, float]:
    """Advance one axis by one frame, reflecting elastically off [0, hi]."""
    pos = pos + vel
    while pos < 0.0 or pos > hi:
        if pos < 0.0:
            pos = -pos
            vel = -vel
        else:
            pos = 2.0 * hi - pos
            vel = -vel
    return pos, vel


def digit_tracks(spec: MovingSpec, seq_index: int) -> np.ndarray:
    """Float glyph-origin trajectories for one sequence.

    Returns (digits, frames, 2) positions in (row, col) order. Per digit the
    draws are: row, col uniform over the valid placements, speed uniform in
    the configured range, direction uniform on the circle. This is exactly
    the path the renderer uses, exposed so tests can check it against an
    independent scalar bounce simulation.
    """
    rng = np.random.default_rng(derive_seed(spec.seed, seq_index))
    hi = float(spec.canvas - spec.glyph)
    tracks = np.zeros((spec.digits, spec.frames, 2))
    for d in range(spec.digits):
        row = rng.uniform(0.0, hi)
        col = rng.uniform(0.0, hi)
        speed = rng.uniform(spec.speed_min, spec.speed_max)
        angle = rng.uniform(0.0, 2.0 * np.pi)
        vr = speed * np.sin(angle)
        vc = speed * np.cos(angle)
        tracks[d, 0] = (row, col)
        for t in range(1, spec.frames):
            row, vr = _bounce(row, vr, hi)
            col, vc = _bounce(col, vc, hi)
            tracks[d, t] = (row, col)
    return tracks


def generate_moving(
    spec: MovingSpec,
    glyph_source: np.ndarray | None = None,
    split: str = "train",
    workers: int = 1,
) -> SequenceDataset:
    """Render bouncing-digit sequences onto a square canvas.

    Glyphs come from ``glyph_source`` (for example :func:`read_idx` output)
    or from the procedural fallback; they are resized to ``spec.glyph`` when
    needed. Digits are pasted at the rounded integer origin of each float
    track and overlaps keep the brighter pixel. Each sequence draws from its
    own derived seed, so the result is identical for any worker count.
    """
    if glyph_source is None:
        glyphs = procedural_glyphs(spec.glyph)
    else:
        glyphs = resize_glyphs(np.asarray(glyph_source, dtype=np.float64), spec.glyph)
    if glyphs.ndim != 3 or glyphs.shape[1] != spec.glyph:
        raise ConfigError(f"glyph source must be (n, {spec.glyph}, {spec.glyph})")
    g = spec.glyph
    out = np.zeros((spec.count, spec.frames, 1, spec.canvas, spec.canvas), dtype=np.float32)

    def render(i: int) -> None:
        tracks = digit_tracks(spec, i)
        pick = np.random.default_rng(derive_seed(spec.seed ^ 0xA5A5A5A5, i))
        chosen = pick.integers(0, len(glyphs), size=spec.digits)
        for d in range(spec.digits):
            glyph = glyphs[chosen[d]]
            for t in range(spec.frames):
                r = int(round(tracks[d, t, 0]))
                c = int(round(tracks[d, t, 1]))
                region = out[i, t, 0, r : r + g, c : c + g]
                np.maximum(region, glyph, out=region)

    _run_indexed(render, spec.count, workers)
    return SequenceDataset(np.clip(out, 0.0, 1.0), split=split)


def _run_indexed(fn, count: int, workers: int) -> None:
    """Apply fn(i) for i in range(count), optionally on a thread pool."""
    if workers <= 1:
        for i in range(count):
            fn(i)
        return
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(fn, range(count)))


# ---------------------------------------------------------------------------
# drifting blobs


def generate_advection(
    spec: AdvectionSpec, split: str = "train", workers: int = 1
) -> SequenceDataset:
    """Sum of Gaussian bumps translated by constant per-blob velocities.

    Per sequence the rng draws are: rows, cols, amplitudes, radii, speeds,
    angles (one vector each over blobs). Centers reflect off the canvas
    border; frames are clipped to [0, 1].
    """
    n = spec.canvas
    ys, xs = np.meshgrid(np.arange(n, dtype=np.float64), np.arange(n, dtype=np.float64), indexing="ij")
    out = np.zeros((spec.count, spec.frames, 1, n, n), dtype=np.float32)
    hi = float(n - 1)

    def render(i: int) -> None:
        rng = np.random.default_rng(derive_seed(spec.seed, i))
        rows = rng.uniform(0, hi, spec.blobs)
        cols = rng.uniform(0, hi, spec.blobs)
        amp = rng.uniform(*spec.amplitude, spec.blobs)
        rad = rng.uniform(*spec.radius, spec.blobs)
        speed = rng.uniform(*spec.speed, spec.blobs)
        angle = rng.uniform(0, 2 * np.pi, spec.blobs)
        vr = speed * np.sin(angle)
        vc = speed * np.cos(angle)
        for t in range(spec.frames):
            frame = np.zeros((n, n))
            for bidx in range(spec.blobs):
                d2 = (ys - rows[bidx]) ** 2 + (xs - cols[bidx]) ** 2
                frame += amp[bidx] * np.exp(-d2 / (2.0 * rad[bidx] ** 2))
            out[i, t, 0] = np.clip(frame, 0.0, 1.0)
            for bidx in range(spec.blobs):
                rows[bidx], vr[bidx] = _bounce(rows[bidx], vr[bidx], hi)
                cols[bidx], vc[bidx] = _bounce(cols[bidx], vc[bidx], hi)

    _run_indexed(render, spec.count, workers)
    return SequenceDataset(out, split=split)
