"""
Imaging Service
Image I/O, parametric low-light synthesis, patch extraction and dataset manifests

Images are numpy arrays of shape (H, W, C), C in {1, 3}, float32 in [0, 1].
"""
import json
import math
import os
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from PIL import Image
from pydantic import ValidationError

from trifuse.core.exceptions import ArgumentError, ConfigError, EmptyDatasetError, ImageFormatError, ShapeError
from trifuse.models.schemas import (
    DatasetEntry,
    DatasetManifest,
    DegradationLevel,
    DegradationParams,
    Split,
)

IMAGE_SUFFIXES = (".png", ".ppm")
MANIFEST_NAME = "manifest.json"

# Luma weights (ITU-R BT.601)
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)

PathLike = Union[str, Path]


def as_image(data: np.ndarray) -> np.ndarray:
    """
    Validate and normalize an array into an image tensor

    Args:
        data: (H, W) or (H, W, C) array

    Returns:
        float32 (H, W, C) array
    """
    arr = np.asarray(data)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ShapeError(f"expected (H, W, 1|3) image, got shape {arr.shape}")
    arr = arr.astype(np.float32, copy=False)
    if not np.all(np.isfinite(arr)):
        raise ArgumentError("image contains non-finite values")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ArgumentError("image intensities must lie in [0, 1]")
    return arr


def load_image(path: PathLike) -> np.ndarray:
    """
    Load a PNG or binary PPM (P6) file

    Args:
        path: Image file

    Returns:
        float32 (H, W, C) array scaled by 1/255
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"image not found: {path}")
    try:
        with Image.open(path) as im:
            fmt = im.format
            if fmt == "PPM":
                with open(path, "rb") as fh:
                    if fh.read(2) != b"P6":
                        raise ImageFormatError(f"{path}: only binary P6 PPM is supported")
            elif fmt != "PNG":
                raise ImageFormatError(f"{path}: unsupported format {fmt}")
            if im.mode in ("P", "RGBA", "LA", "CMYK"):
                im = im.convert("L" if im.mode == "LA" else "RGB")
            if im.mode not in ("L", "RGB"):
                raise ImageFormatError(f"{path}: unsupported pixel mode {im.mode}")
            data = np.asarray(im, dtype=np.uint8)
    except ImageFormatError:
        raise
    except OSError as e:
        raise OSError(f"cannot read image {path}: {e}") from e
    return as_image(data.astype(np.float32) / 255.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(img: np.ndarray, path: PathLike) -> Path:
    """
    Write an image as 8-bit PNG or PPM (P6), chosen by suffix

    Args:
        img: (H, W, C) array in [0, 1]
        path: Destination; parent directories are created

    Returns:
        The written path
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix not in IMAGE_SUFFIXES:
        raise ImageFormatError(f"{path}: cannot write {suffix or 'suffix-less'} files, use .png or .ppm")
    data = to_uint8(as_image(img))
    if data.shape[2] == 1:
        data = data[:, :, 0]
        if suffix == ".ppm":
            data = np.repeat(data[:, :, None], 3, axis=2)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(data).save(path, format="PNG" if suffix == ".png" else "PPM")
    return path


def luminance(img: np.ndarray) -> np.ndarray:
    """(H, W) luma plane; grayscale images pass through"""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[:, :, 0]
    return img @ LUMA_WEIGHTS


def mean_luminance(img: np.ndarray) -> float:
    return float(luminance(img).mean())


def synthesize_low_light(img: np.ndarray, params: DegradationParams, seed: int) -> np.ndarray:
    """
    Darken an image: clamp(gain * img ** gamma + N(0, noise_sigma²), 0, 1)

    Args:
        img: Well-exposed image
        params: Level parameters
        seed: Noise seed

    Returns:
        Degraded image, same shape
    """
    img = as_image(img)
    out = params.gain * np.power(img, params.gamma, dtype=np.float32)
    if params.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        out = out + rng.normal(0.0, params.noise_sigma, size=img.shape).astype(np.float32)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def reflect_pad(img: np.ndarray, size: int) -> np.ndarray:
    """Reflect-pad so both spatial dims are at least ``size``, source centred"""
    h, w = img.shape[:2]
    pad_h, pad_w = max(0, size - h), max(0, size - w)
    if not pad_h and not pad_w:
        return img
    widths = [(pad_h // 2, pad_h - pad_h // 2), (pad_w // 2, pad_w - pad_w // 2)]
    widths += [(0, 0)] * (img.ndim - 2)
    return np.pad(img, widths, mode="reflect")


def pad_to_multiple(img: np.ndarray, multiple: int) -> np.ndarray:
    """Reflect-pad bottom and right edges up to the next multiple of ``multiple``"""
    h, w = img.shape[:2]
    pad_h, pad_w = -h % multiple, -w % multiple
    if not pad_h and not pad_w:
        return img
    widths = [(0, pad_h), (0, pad_w)] + [(0, 0)] * (img.ndim - 2)
    return np.pad(img, widths, mode="reflect" if min(h, w) > 1 else "edge")


def to_batch(images: Sequence[np.ndarray]) -> np.ndarray:
    """Stack (H, W, C) arrays into a (B, C, H, W) float64 batch"""
    return np.stack([np.asarray(im, dtype=np.float64).transpose(2, 0, 1) for im in images])


def from_batch(batch: np.ndarray) -> List[np.ndarray]:
    """Split a (B, C, H, W) batch back into (H, W, C) arrays"""
    return [np.asarray(item).transpose(1, 2, 0) for item in batch]


def _crop_corners(shape: Tuple[int, int], size: int, count: int, seed: int) -> List[Tuple[int, int]]:
    if size < 8:
        raise ArgumentError(f"patch size must be >= 8, got {size}")
    if count <= 0:
        raise ArgumentError(f"patch count must be positive, got {count}")
    rng = np.random.default_rng(seed)
    h, w = shape
    return [
        (int(rng.integers(0, h - size + 1)), int(rng.integers(0, w - size + 1)))
        for _ in range(count)
    ]


def extract_patches(img: np.ndarray, size: int, count: int, seed: int) -> List[np.ndarray]:
    """
    Random size×size crops, reflect-padding undersized images first

    Args:
        img: Source image
        size: Patch side (>= 8)
        count: Number of patches (> 0)
        seed: Crop seed

    Returns:
        List of patches
    """
    img = reflect_pad(as_image(img), size)
    corners = _crop_corners(img.shape[:2], size, count, seed)
    return [img[y:y + size, x:x + size].copy() for y, x in corners]


def extract_paired_patches(
    low: np.ndarray,
    high: np.ndarray,
    size: int,
    count: int,
    seed: int,
) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Crops of a low/high pair taken at identical coordinates"""
    low, high = as_image(low), as_image(high)
    if low.shape != high.shape:
        raise ShapeError(f"paired images differ in shape: {low.shape} vs {high.shape}")
    low, high = reflect_pad(low, size), reflect_pad(high, size)
    corners = _crop_corners(low.shape[:2], size, count, seed)
    return [
        (low[y:y + size, x:x + size].copy(), high[y:y + size, x:x + size].copy())
        for y, x in corners
    ]


def list_images(directory: PathLike) -> List[Path]:
    """Image files of a directory, lexicographically sorted by name"""
    directory = Path(directory)
    if not directory.is_dir():
        raise NotADirectoryError(f"not a directory: {directory}")
    return sorted(
        (p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES),
        key=lambda p: p.name,
    )


def split_counts(n: int, split_fracs: Sequence[float]) -> Tuple[int, int, int]:
    """Train/val/test counts; the remainder goes to test"""
    train_frac, val_frac = split_fracs
    if train_frac < 0 or val_frac < 0 or train_frac + val_frac > 1.0 + 1e-12:
        raise ArgumentError(f"split fractions must be non-negative and sum to <= 1, got {split_fracs}")
    n_train = min(n, int(math.floor(n * train_frac + 1e-9)))
    n_val = min(n - n_train, int(math.floor(n * val_frac + 1e-9)))
    return n_train, n_val, n - n_train - n_val


def build_manifest(root: PathLike, split_fracs: Sequence[float] = (0.8, 0.2)) -> DatasetManifest:
    """
    Index ``root/high`` references against ``root/<level>`` degradations

    Images are assigned to splits by lexicographic name order; every level of
    an image shares its split. Files in ``root/low`` (real, unpaired low-light
    captures) become test entries without a reference.

    Args:
        root: Dataset directory
        split_fracs: (train, val) fractions

    Returns:
        The manifest, also written to ``root/manifest.json``
    """
    root = Path(root)
    high_dir = root / "high"
    highs = list_images(high_dir) if high_dir.is_dir() else []
    if not highs:
        raise EmptyDatasetError(f"no reference images under {high_dir}")

    n_train, n_val, _ = split_counts(len(highs), split_fracs)
    entries: List[DatasetEntry] = []
    for index, high in enumerate(highs):
        split = Split.TRAIN if index < n_train else Split.VAL if index < n_train + n_val else Split.TEST
        for level in DegradationLevel:
            low = root / level.value / high.name
            if low.is_file():
                entries.append(DatasetEntry(
                    low=f"{level.value}/{high.name}",
                    high=f"high/{high.name}",
                    split=split,
                    level=level,
                ))

    unpaired_dir = root / "low"
    if unpaired_dir.is_dir():
        for low in list_images(unpaired_dir):
            entries.append(DatasetEntry(low=f"low/{low.name}", split=Split.TEST))

    manifest = DatasetManifest(root=str(root.resolve()), entries=entries)
    write_manifest(manifest, root / MANIFEST_NAME)
    logger.info(f"✅ Manifest: {len(highs)} references, {len(entries)} entries "
                f"({n_train} train / {n_val} val images)")
    return manifest


def write_manifest(manifest: DatasetManifest, path: PathLike) -> Path:
    """Write manifest JSON; the root is stored relative to the file's directory"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    root = os.path.relpath(Path(manifest.root).resolve(), path.parent.resolve())
    document = {
        "root": Path(root).as_posix(),
        "entries": [
            {
                "low": e.low,
                "high": e.high,
                "split": e.split.value,
                "level": e.level.value if e.level else None,
            }
            for e in manifest.entries
        ],
    }
    path.write_text(json.dumps(document, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def read_manifest(path: PathLike) -> DatasetManifest:
    """Load a manifest, resolving its root against the file's directory"""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
        root = (path.parent / document.get("root", ".")).resolve()
        return DatasetManifest(root=str(root), entries=document.get("entries", []))
    except (json.JSONDecodeError, AttributeError, ValidationError) as e:
        raise ConfigError(f"invalid manifest {path}: {e}") from e


def load_pair(manifest: DatasetManifest, entry: DatasetEntry) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    root = Path(manifest.root)
    low = load_image(root / entry.low)
    high = load_image(root / entry.high) if entry.high else None
    return low, high
