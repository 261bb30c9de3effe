"""Frame-quality metrics and categorical skill scores.

MSE and MAE follow the sum-over-pixels convention: errors are summed over
channels and pixels within a frame, then averaged over frames and sequences,
so a 64x64 frame with constant error 0.1 scores MSE 40.96. SSIM and PSNR
assume data range 1.0. CSI and HSS are computed from a thresholded
contingency table and report None (never NaN) when their denominator is
empty.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError, ShapeError

__all__ = [
    "mse",
    "mae",
    "ssim",
    "psnr",
    "ContingencyTable",
    "contingency",
    "csi",
    "hss",
    "MetricReport",
    "PSNR_CAP",
]

PSNR_CAP = 99.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(pred, target):
    if pred.shape != target.shape:
        raise ShapeError(f"metric operands disagree: {pred.shape} vs {target.shape}")


def _per_frame_sum(err: np.ndarray) -> float:
    # sum over (c, h, w), mean over any leading sequence/frame axes
    if err.ndim < 3:
        raise ShapeError(f"need at least (c, h, w) arrays, got shape {err.shape}")
    summed = err.sum(axis=(-1, -2, -3))
    return float(np.mean(summed))


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    """Per-frame sum of squared error, averaged over leading axes."""
    _check_pair(pred, target)
    diff = np.asarray(pred, np.float64) - np.asarray(target, np.float64)
    return _per_frame_sum(diff * diff)


def mae(pred: np.ndarray, target: np.ndarray) -> float:
    """Per-frame sum of absolute error, averaged over leading axes."""
    _check_pair(pred, target)
    diff = np.asarray(pred, np.float64) - np.asarray(target, np.float64)
    return _per_frame_sum(np.abs(diff))


@lru_cache(maxsize=None)
def _gauss_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    win /= win.sum()
    win.flags.writeable = False
    return win


def _window_means(frame: np.ndarray, win: np.ndarray) -> np.ndarray:
    # valid-mode weighted local means via a sliding-window contraction
    k = win.shape[0]
    view = np.lib.stride_tricks.sliding_window_view(frame, (k, k))
    return np.tensordot(view, win, axes=([2, 3], [0, 1]))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local structural similarity of two single-channel frames.

    11x11 Gaussian window with sigma 1.5, K1 = 0.01, K2 = 0.03, data range
    1.0; the local map is taken over valid window positions only.
    """
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"ssim expects 2-D frames, got {a.shape} and {b.shape}")
    _check_pair(a, b)
    if min(a.shape) < SSIM_WINDOW:
        raise ConfigError(f"frame {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    win = _gauss_window(SSIM_WINDOW, SSIM_SIGMA)
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    mu_a = _window_means(a, win)
    mu_b = _window_means(b, win)
    var_a = _window_means(a * a, win) - mu_a * mu_a
    var_b = _window_means(b * b, win) - mu_b * mu_b
    cov = _window_means(a * b, win) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / mean squared error) for data range 1.0, capped at 99 dB."""
    _check_pair(np.asarray(a), np.asarray(b))
    diff = np.asarray(a, np.float64) - np.asarray(b, np.float64)
    m = float(np.mean(diff * diff))
    if m == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, float(10.0 * np.log10(1.0 / m)))


@dataclass(frozen=True)
class ContingencyTable:
    """Pixel counts of a thresholded forecast against observations."""

    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ContingencyTable") -> "ContingencyTable":
        return ContingencyTable(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )


def contingency(pred: np.ndarray, obs: np.ndarray, tau: float) -> ContingencyTable:
    """Binarize both fields at >= tau and count hits/misses/false alarms."""
    _check_pair(np.asarray(pred), np.asarray(obs))
    p = np.asarray(pred) >= tau
    o = np.asarray(obs) >= tau
    tp = int(np.count_nonzero(p & o))
    fp = int(np.count_nonzero(p & ~o))
    fn = int(np.count_nonzero(~p & o))
    tn = int(np.count_nonzero(~p & ~o))
    return ContingencyTable(tp, fp, fn, tn)


def csi(t: ContingencyTable) -> float | None:
    """Critical success index tp / (tp + fn + fp); None when undefined."""
    den = t.tp + t.fn + t.fp
    if den == 0:
        return None
    return t.tp / den


def hss(t: ContingencyTable) -> float | None:
    """Heidke skill score; None when the denominator vanishes."""
    den = (t.tp + t.fn) * (t.fn + t.tn) + (t.tp + t.fp) * (t.fp + t.tn)
    if den == 0:
        return None
    return 2.0 * (t.tp * t.tn - t.fn * t.fp) / den


@dataclass
class MetricReport:
    """Per-frame and overall metric rows, CSV-serializable.

    ``frames[i]`` holds the metrics of prediction step i averaged over
    sequences; ``overall`` aggregates all steps. Skill scores are present
    only when thresholds were requested, and individual entries may be None
    when undefined.
    """

    frames: list[dict]
    overall: dict
    thresholds: tuple[float, ...] = ()

    def header(self) -> str:
        cols = ["frame", "mse", "mae", "ssim", "psnr"]
        for tau in self.thresholds:
            cols.append(f"csi_{tau:g}")
            cols.append(f"hss_{tau:g}")
        return ",".join(cols)

    def _row(self, label, row) -> str:
        cells = [label]
        for key in ("mse", "mae", "ssim", "psnr"):
            cells.append(f"{row[key]:.6f}")
        for tau in self.thresholds:
            for kind in ("csi", "hss"):
                value = row.get(f"{kind}_{tau:g}")
                cells.append("" if value is None else f"{value:.6f}")
        return ",".join(cells)

    def to_csv(self) -> str:
        lines = [self.header()]
        for i, row in enumerate(self.frames):
            lines.append(self._row(str(i), row))
        lines.append(self._row("overall", self.overall))
        return "\n".join(lines) + "\n"
