"""Patch-blur noise injection and face-size statistics.

Noise injection simulates localized degradation: with some probability an
image's face box is split into a grid and one random cell is blurred with a
separable Gaussian kernel of random odd size. Padding is taken by mirroring
inside the cell (half-sample symmetric), so the operation reads and writes
nothing outside the chosen cell and, because the kernel is normalized and
symmetric, preserves the cell's mean intensity exactly.

The statistics half measures how much of each image the face occupies,
sorted per race for plotting.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .corpus import FeatureStore, ImageRecord
from .distributions import RACES, Race
from .seeds import stream

__all__ = [
    "NoiseConfig",
    "PixelImage",
    "gaussian_kernel",
    "inject_patch_blur",
    "augment_features",
    "face_ratio",
    "ratio_curve",
    "write_ratio_csv",
    "load_png",
    "save_png",
]


@dataclass(frozen=True)
class NoiseConfig:
    """Injection probability plus the blur geometry.

    Kernel sizes are the odd values in [kmin, kmax]; ``variance`` is the
    Gaussian's sigma squared in pixels squared.
    """

    p: float
    grid: int = 4
    kmin: int = 11
    kmax: int = 21
    variance: float = 1.5
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("injection probability must lie in [0, 1]")
        if self.grid < 1:
            raise ValueError("grid must be at least 1")
        if self.kmin < 1 or self.kmin > self.kmax:
            raise ValueError("need 1 <= kmin <= kmax")
        if not self.kernel_sizes():
            raise ValueError(f"no odd kernel size in [{self.kmin}, {self.kmax}]")
        if self.variance <= 0:
            raise ValueError("variance must be positive")

    def kernel_sizes(self) -> tuple[int, ...]:
        return tuple(k for k in range(self.kmin, self.kmax + 1) if k % 2)


class PixelImage:
    """Row-major float intensities in [0,1]; grayscale or multi-channel."""

    def __init__(self, pixels: np.ndarray):
        pixels = np.asarray(pixels, dtype=np.float64)
        if pixels.ndim not in (2, 3):
            raise ValueError("pixels must be HxW or HxWxC")
        if pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise ValueError("image dimensions must be positive")
        if pixels.min() < 0.0 or pixels.max() > 1.0:
            raise ValueError("intensities must lie in [0, 1]")
        self.pixels = pixels

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else self.pixels.shape[2]


def gaussian_kernel(size: int, variance: float) -> np.ndarray:
    """Normalized 1-D Gaussian weights centered on an odd-size window."""
    if size < 1 or size % 2 == 0:
        raise ValueError("kernel size must be odd and positive")
    if variance <= 0:
        raise ValueError("variance must be positive")
    c = (size - 1) / 2
    i = np.arange(size, dtype=np.float64)
    w = np.exp(-((i - c) ** 2) / (2.0 * variance))
    return w / w.sum()


def _mirror_indices(offsets: np.ndarray, n: int) -> np.ndarray:
    # Half-sample symmetric extension: ... 1 0 | 0 1 .. n-1 | n-1 n-2 ...
    m = offsets % (2 * n)
    return np.where(m < n, m, 2 * n - 1 - m)


def _blur_axis(cell: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    n = cell.shape[axis]
    c = (len(kernel) - 1) // 2
    idx = _mirror_indices(np.arange(-c, n + c), n)
    padded = np.take(cell, idx, axis=axis)
    windows = np.lib.stride_tricks.sliding_window_view(padded, len(kernel), axis=axis)
    return windows @ kernel


def _cell_bounds(origin: int, extent: int, grid: int, index: int) -> tuple[int, int]:
    base = extent // grid
    lo = origin + base * index
    hi = origin + extent if index == grid - 1 else lo + base
    return lo, hi


def inject_patch_blur(
    img: PixelImage,
    box: tuple[int, int, int, int],
    cfg: NoiseConfig,
    rng: np.random.Generator,
) -> PixelImage:
    """Maybe blur one random grid cell of the face box; never touch the rest.

    With probability 1-p the input image is returned as-is. Otherwise one of
    the grid x grid cells (remainder pixels going to the last row/column) is
    blurred separably with a random odd kernel size from the configured
    range, mirroring at the cell border so the blur is confined to the cell.
    """
    x, y, w, h = box
    if w <= 0 or h <= 0:
        raise ValueError("face box has zero area")
    if x < 0 or y < 0 or x + w > img.width or y + h > img.height:
        raise ValueError("face box outside image")

    if rng.random() >= cfg.p:
        return img

    cell_index = int(rng.integers(cfg.grid * cfg.grid))
    sizes = cfg.kernel_sizes()
    size = sizes[int(rng.integers(len(sizes)))]
    row, col = divmod(cell_index, cfg.grid)
    y0, y1 = _cell_bounds(y, h, cfg.grid, row)
    x0, x1 = _cell_bounds(x, w, cfg.grid, col)

    out = img.pixels.copy()
    if y1 > y0 and x1 > x0:
        kernel = gaussian_kernel(size, cfg.variance)
        cell = out[y0:y1, x0:x1]
        cell = _blur_axis(cell, kernel, axis=1)
        cell = _blur_axis(cell, kernel, axis=0)
        out[y0:y1, x0:x1] = cell
    return PixelImage(np.clip(out, 0.0, 1.0))


def augment_features(
    store: FeatureStore, records: list[ImageRecord], cfg: NoiseConfig
) -> FeatureStore:
    """Apply patch blur to feature vectors viewed as square pixel grids.

    The store's dimension must be a perfect square; each vector is reshaped
    to side x side, blurred under its own RNG stream keyed on (seed, image
    id), and flattened back. With p=0 the output equals the input bit for
    bit.
    """
    side = math.isqrt(store.dim)
    if side * side != store.dim:
        raise ValueError(f"feature dim {store.dim} is not a perfect square")
    by_id = {rec.image_id: rec for rec in records}
    rows = []
    for iid in store.ids:
        rec = by_id.get(iid)
        if rec is None:
            raise ValueError(f"no catalog record for image {iid}")
        if rec.box is None:
            raise ValueError(f"image {iid} has no face box")
        vec = store.get(iid).astype(np.float64)
        img = PixelImage(vec.reshape(side, side))
        img = inject_patch_blur(img, rec.box, cfg, stream(cfg.seed, "augment", iid))
        rows.append(img.pixels.reshape(-1))
    return FeatureStore(store.ids, np.stack(rows))


def face_ratio(record: ImageRecord) -> float:
    """Face box area over image area."""
    if record.box is None or record.size is None:
        raise ValueError(f"{record.image_id}: missing face box or image size")
    _, _, w, h = record.box
    iw, ih = record.size
    return (w * h) / (iw * ih)


def ratio_curve(records: list[ImageRecord]) -> dict[Race, np.ndarray]:
    """Ascending per-race face-ratio curves (index axis is implicit)."""
    grouped: dict[Race, list[float]] = {}
    for rec in records:
        grouped.setdefault(rec.race, []).append(face_ratio(rec))
    return {race: np.sort(np.array(vals)) for race, vals in grouped.items()}


def write_ratio_csv(curves: dict[Race, np.ndarray], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["race", "index", "ratio"])
        for race in RACES:
            for i, v in enumerate(curves.get(race, ())):
                writer.writerow([race.label, i, f"{v:.9g}"])


def load_png(path: str | Path) -> PixelImage:
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return PixelImage(arr)


def save_png(img: PixelImage, path: str | Path) -> None:
    arr = np.clip(np.round(img.pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")
