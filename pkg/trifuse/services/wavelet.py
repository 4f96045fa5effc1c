"""
Wavelet Service
Orthonormal multi-level 2D Haar analysis and synthesis

Bands per level (1D pair a = (x0 + x1)/√2, d = (x0 - x1)/√2):
    A = column-approx of row-approx
    V = column-detail of row-approx
    H = column-approx of row-detail
    D = column-detail of row-detail

Odd lengths are extended by one mirrored sample. The coarse coefficient of
that boundary pair is scaled by 1/√2 so it equals the sample itself; together
with its zero detail the step stays orthonormal, so reconstruction is exact
and energy is preserved on every size.
"""
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from trifuse.core.exceptions import ArgumentError, ShapeError

SQRT2 = np.sqrt(2.0)
MAX_LEVELS = 3


@dataclass
class DetailBands:
    """Directional detail bands of one level, (h, w, C) each"""
    v: np.ndarray
    h: np.ndarray
    d: np.ndarray

    def as_tuple(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.v, self.h, self.d


@dataclass
class WaveletPyramid:
    """
    Multi-level Haar decomposition

    ``details`` is finest first. ``sizes[j]`` is the (height, width) of the
    signal that level j + 1 decomposed, so ``sizes[0]`` is the input size.
    """
    levels: int
    approx: np.ndarray
    details: List[DetailBands]
    sizes: List[Tuple[int, int]] = field(default_factory=list)

    def coefficient_energy(self) -> float:
        total = float(np.sum(np.square(self.approx, dtype=np.float64)))
        for bands in self.details:
            for band in bands.as_tuple():
                total += float(np.sum(np.square(band, dtype=np.float64)))
        return total

    def scaled(self, s: float) -> "WaveletPyramid":
        return WaveletPyramid(
            levels=self.levels,
            approx=self.approx * s,
            details=[DetailBands(b.v * s, b.h * s, b.d * s) for b in self.details],
            sizes=list(self.sizes),
        )


def _analysis(x: np.ndarray, axis: int) -> Tuple[np.ndarray, np.ndarray]:
    n = x.shape[axis]
    odd = n % 2 == 1
    if odd:
        last = np.take(x, [n - 1], axis=axis)
        x = np.concatenate([x, last], axis=axis)
    even = np.take(x, np.arange(0, x.shape[axis], 2), axis=axis)
    odd_s = np.take(x, np.arange(1, x.shape[axis], 2), axis=axis)
    a = (even + odd_s) / SQRT2
    d = (even - odd_s) / SQRT2
    if odd:
        index = [slice(None)] * a.ndim
        index[axis] = -1
        a[tuple(index)] /= SQRT2
    return a, d


def _synthesis(a: np.ndarray, d: np.ndarray, axis: int, n: int) -> np.ndarray:
    m = (n + 1) // 2
    if a.shape[axis] != m or d.shape != a.shape:
        raise ShapeError(
            f"band length {a.shape[axis]} along axis {axis} does not match signal length {n}"
        )
    if n % 2:
        a = a.copy()
        index = [slice(None)] * a.ndim
        index[axis] = -1
        a[tuple(index)] *= SQRT2
    x0 = (a + d) / SQRT2
    x1 = (a - d) / SQRT2
    shape = list(a.shape)
    shape[axis] = 2 * m
    out = np.empty(shape, dtype=np.float64)
    even = [slice(None)] * a.ndim
    odd = [slice(None)] * a.ndim
    even[axis] = slice(0, None, 2)
    odd[axis] = slice(1, None, 2)
    out[tuple(even)] = x0
    out[tuple(odd)] = x1
    return np.take(out, np.arange(n), axis=axis)


def dwt_level(x: np.ndarray) -> Tuple[np.ndarray, DetailBands]:
    """One analysis level on an (H, W, ...) array"""
    row_a, row_d = _analysis(x, axis=1)
    a, v = _analysis(row_a, axis=0)
    h, d = _analysis(row_d, axis=0)
    return a, DetailBands(v=v, h=h, d=d)


def idwt_level(a: np.ndarray, bands: DetailBands, size: Tuple[int, int]) -> np.ndarray:
    """Inverse of ``dwt_level`` back to an array of spatial ``size``"""
    rows, cols = size
    shapes = {band.shape for band in bands.as_tuple()} | {a.shape}
    if len(shapes) != 1:
        raise ShapeError(f"bands of one level must share a shape, got {sorted(shapes)}")
    row_a = _synthesis(a, bands.v, axis=0, n=rows)
    row_d = _synthesis(bands.h, bands.d, axis=0, n=rows)
    return _synthesis(row_a, row_d, axis=1, n=cols)


def dwt2(img: np.ndarray, k: int) -> WaveletPyramid:
    """
    k-level orthonormal Haar decomposition, per channel

    Args:
        img: (H, W) or (H, W, C) array
        k: Levels, 1 to 3

    Returns:
        WaveletPyramid with float64 bands
    """
    if k not in range(1, MAX_LEVELS + 1):
        raise ArgumentError(f"wavelet levels must be in 1..{MAX_LEVELS}, got {k}")
    x = np.asarray(img, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3:
        raise ShapeError(f"expected (H, W, C) input, got shape {x.shape}")
    if min(x.shape[:2]) < 2 ** k:
        raise ArgumentError(f"image {x.shape[:2]} too small for {k} levels (needs >= {2 ** k})")

    details: List[DetailBands] = []
    sizes: List[Tuple[int, int]] = []
    for _ in range(k):
        sizes.append((x.shape[0], x.shape[1]))
        x, bands = dwt_level(x)
        details.append(bands)
    return WaveletPyramid(levels=k, approx=x, details=details, sizes=sizes)


def idwt2(pyr: WaveletPyramid) -> np.ndarray:
    """
    Inverse of ``dwt2``; no clamping is applied

    Args:
        pyr: Pyramid from ``dwt2`` (possibly modified)

    Returns:
        float64 (H, W, C) array
    """
    if len(pyr.details) != pyr.levels or len(pyr.sizes) != pyr.levels:
        raise ShapeError(
            f"pyramid declares {pyr.levels} levels but holds {len(pyr.details)} detail sets "
            f"and {len(pyr.sizes)} sizes"
        )
    x = np.asarray(pyr.approx, dtype=np.float64)
    for bands, size in zip(reversed(pyr.details), reversed(pyr.sizes)):
        x = idwt_level(x, DetailBands(*(np.asarray(b, dtype=np.float64) for b in bands.as_tuple())), size)
    return x
