"""
Image Quality Service
Full-reference (PSNR, SSIM, MS-SSIM, MSE, MAE) and no-reference (NIQE,
BRISQUE) metrics

Everything works in unit range (L = 1). No-reference metrics run on the
ITU-R 601 luma plane.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from PIL import Image
from scipy import ndimage
from scipy.special import gamma as gamma_fn

from trifuse.core.checkpoint import read_container, write_container
from trifuse.core.exceptions import ArgumentError, CheckpointError, ConfigError, FitError, ShapeError
from trifuse.services.imaging import luminance

FULL_REFERENCE = ("psnr", "ssim", "ms_ssim", "mse", "mae")
NO_REFERENCE = ("brisque", "niqe")
METRIC_ORDER = FULL_REFERENCE + NO_REFERENCE

PSNR_CAP = 100.0
MSE_FLOOR = 1e-10

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
MS_SSIM_WEIGHTS = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])

MSCN_WINDOW = 7
MSCN_SIGMA = 7.0 / 6.0
MSCN_C = 1.0 / 255.0

NIQE_SHARPNESS = 0.75
# Local deviation below this is rounding noise on a flat image
FLAT_SIGMA = 1e-6
MIN_PRISTINE_IMAGES = 10
FEATURES_PER_SCALE = 18

# Shape-parameter grid of the generalized Gaussian fits
_SHAPE_GRID = np.arange(0.2, 10.0 + 1e-9, 0.001)
_GGD_RATIO = gamma_fn(1.0 / _SHAPE_GRID) * gamma_fn(3.0 / _SHAPE_GRID) / gamma_fn(2.0 / _SHAPE_GRID) ** 2
_AGGD_RATIO = gamma_fn(2.0 / _SHAPE_GRID) ** 2 / (gamma_fn(1.0 / _SHAPE_GRID) * gamma_fn(3.0 / _SHAPE_GRID))

PAIR_SHIFTS = ((0, 1), (1, 0), (1, 1), (1, -1))


# -- full reference ------------------------------------------------------------------

def _pair(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    return a, b


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def mae(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10·log10(1 / MSE) in dB, capped at 100 dB"""
    err = mse(a, b)
    if err < MSE_FLOOR:
        return PSNR_CAP
    return float(10.0 * np.log10(1.0 / err))


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


_SSIM_KERNEL = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
_MSCN_KERNEL = gaussian_kernel(MSCN_WINDOW, MSCN_SIGMA)


def _filter_valid(x: np.ndarray) -> np.ndarray:
    r = SSIM_WINDOW // 2
    return ndimage.correlate(x, _SSIM_KERNEL, mode="nearest")[r:-r, r:-r]


def _ssim_terms(a: np.ndarray, b: np.ndarray) -> Tuple[float, float]:
    """Mean SSIM and mean contrast-structure term over every channel"""
    c1, c2 = (SSIM_K1 * 1.0) ** 2, (SSIM_K2 * 1.0) ** 2
    ssim_vals, cs_vals = [], []
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        mu_x, mu_y = _filter_valid(x), _filter_valid(y)
        var_x = _filter_valid(x * x) - mu_x * mu_x
        var_y = _filter_valid(y * y) - mu_y * mu_y
        cov = _filter_valid(x * y) - mu_x * mu_y
        cs = (2.0 * cov + c2) / (var_x + var_y + c2)
        lum = (2.0 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
        ssim_vals.append(np.mean(lum * cs))
        cs_vals.append(np.mean(cs))
    return float(np.mean(ssim_vals)), float(np.mean(cs_vals))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """
    Structural similarity with an 11×11 Gaussian window (σ = 1.5)

    The map is evaluated on the valid region only and averaged over channels.
    """
    a, b = _pair(a, b)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ArgumentError(f"SSIM needs images of at least {SSIM_WINDOW} pixels, got {a.shape[:2]}")
    return _ssim_terms(a, b)[0]


def _halve(x: np.ndarray) -> np.ndarray:
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    x = x[:h, :w]
    return x.reshape(h // 2, 2, w // 2, 2, x.shape[2]).mean(axis=(1, 3))


def ms_ssim_scales(min_dim: int) -> int:
    """Scales that fit: the coarsest scale must still hold one SSIM window"""
    scales = 0
    while scales < len(MS_SSIM_WEIGHTS) and min_dim >= SSIM_WINDOW * 2 ** scales:
        scales += 1
    return scales


def ms_ssim(a: np.ndarray, b: np.ndarray) -> float:
    """
    Multi-scale SSIM with the canonical five weights

    Images smaller than 176 pixels use fewer scales with the leading weights
    renormalized to sum to one. Negative contrast terms are clipped to 0.
    """
    a, b = _pair(a, b)
    scales = ms_ssim_scales(min(a.shape[:2]))
    if scales == 0:
        raise ArgumentError(f"MS-SSIM needs images of at least {SSIM_WINDOW} pixels, got {a.shape[:2]}")
    weights = MS_SSIM_WEIGHTS[:scales] / MS_SSIM_WEIGHTS[:scales].sum()
    result = 1.0
    for level, weight in enumerate(weights):
        full, cs = _ssim_terms(a, b)
        term = full if level == scales - 1 else cs
        result *= max(term, 0.0) ** weight
        if level < scales - 1:
            a, b = _halve(a), _halve(b)
    return float(result)


# -- natural scene statistics --------------------------------------------------------

def mscn(gray: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Mean-subtracted contrast-normalized coefficients

    Returns:
        (MSCN map, local standard deviation map)
    """
    gray = np.asarray(gray, dtype=np.float64)
    mu = ndimage.correlate(gray, _MSCN_KERNEL, mode="nearest")
    sigma = np.sqrt(np.abs(ndimage.correlate(gray * gray, _MSCN_KERNEL, mode="nearest") - mu * mu))
    return (gray - mu) / (sigma + MSCN_C), sigma


def fit_ggd(x: np.ndarray) -> Tuple[float, float]:
    """Symmetric generalized Gaussian fit: (shape, variance)"""
    x = np.asarray(x, dtype=np.float64).ravel()
    var = float(np.mean(x ** 2))
    mean_abs = float(np.mean(np.abs(x)))
    if var <= 0.0 or mean_abs <= 0.0:
        return 2.0, 0.0
    rho = var / mean_abs ** 2
    return float(_SHAPE_GRID[np.argmin(np.abs(rho - _GGD_RATIO))]), var


def fit_aggd(x: np.ndarray) -> Tuple[float, float, float, float]:
    """
    Asymmetric generalized Gaussian fit

    Returns:
        (shape, mean parameter eta, left variance, right variance); an
        all-zero input gives the Gaussian shape with zero spread
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    left, right = x[x < 0], x[x > 0]
    left_std = float(np.sqrt(np.mean(left ** 2))) if left.size else 0.0
    right_std = float(np.sqrt(np.mean(right ** 2))) if right.size else 0.0
    mean_sq = float(np.mean(x ** 2))
    if mean_sq <= 0.0:
        return 2.0, 0.0, 0.0, 0.0
    gamma_hat = left_std / right_std if left_std > 0 and right_std > 0 else 1.0
    r_hat = float(np.mean(np.abs(x))) ** 2 / mean_sq
    r_norm = r_hat * (gamma_hat ** 3 + 1) * (gamma_hat + 1) / (gamma_hat ** 2 + 1) ** 2
    shape = float(_SHAPE_GRID[np.argmin((_AGGD_RATIO - r_norm) ** 2)])
    scale = np.sqrt(gamma_fn(1.0 / shape) / gamma_fn(3.0 / shape))
    eta = (right_std - left_std) * scale * gamma_fn(2.0 / shape) / gamma_fn(1.0 / shape)
    return shape, float(eta), left_std ** 2, right_std ** 2


def _pair_product(m: np.ndarray, dy: int, dx: int) -> np.ndarray:
    h, w = m.shape
    ys, xs = slice(0, h - dy), slice(max(0, -dx), w - max(0, dx))
    yt, xt = slice(dy, h), slice(max(0, dx), w - max(0, -dx))
    return m[ys, xs] * m[yt, xt]


def scale_features(m: np.ndarray) -> np.ndarray:
    """18 statistics of one MSCN map: GGD (shape, variance) + 4 × AGGD of neighbour products"""
    shape, var = fit_ggd(m)
    out = [shape, var]
    for dy, dx in PAIR_SHIFTS:
        out.extend(fit_aggd(_pair_product(m, dy, dx)))
    return np.array(out, dtype=np.float64)


def half_scale(gray: np.ndarray) -> np.ndarray:
    """Bicubic downscale by two"""
    h, w = gray.shape
    im = Image.fromarray(np.ascontiguousarray(gray, dtype=np.float32))
    return np.asarray(im.resize((max(w // 2, 1), max(h // 2, 1)), Image.BICUBIC), dtype=np.float64)


def _gray(img: np.ndarray) -> np.ndarray:
    gray = luminance(img)
    if gray.ndim != 2:
        raise ShapeError(f"cannot reduce shape {np.shape(img)} to a luma plane")
    return gray


# -- NIQE ----------------------------------------------------------------------------

@dataclass
class NiqeModel:
    """Multivariate Gaussian of pristine patch features"""
    mean: np.ndarray
    cov: np.ndarray
    patch_size: int
    sharpness_threshold: float = NIQE_SHARPNESS

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ShapeError(f"covariance {self.cov.shape} does not match mean of size {self.mean.size}")


def patch_features(img: np.ndarray, patch: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-patch 36-dim features over non-overlapping ``patch``×``patch`` blocks

    Returns:
        (features (n, 36), sharpness (n,)), sharpness being the mean local
        deviation of each block at full scale
    """
    if patch < 2 or patch % 2:
        raise ArgumentError(f"patch size must be even and >= 2, got {patch}")
    gray = _gray(img)
    rows, cols = gray.shape[0] // patch, gray.shape[1] // patch
    if rows * cols == 0:
        raise ArgumentError(f"image {gray.shape} is smaller than one {patch}px patch")

    m1, sigma = mscn(gray)
    m2, _ = mscn(half_scale(gray))
    half = patch // 2
    feats, sharp = [], []
    for i in range(rows):
        for j in range(cols):
            block1 = m1[i * patch:(i + 1) * patch, j * patch:(j + 1) * patch]
            block2 = m2[i * half:(i + 1) * half, j * half:(j + 1) * half]
            feats.append(np.concatenate([scale_features(block1), scale_features(block2)]))
            sharp.append(float(sigma[i * patch:(i + 1) * patch, j * patch:(j + 1) * patch].mean()))
    return np.nan_to_num(np.array(feats)), np.array(sharp)


def mvg_distance(mean_a: np.ndarray, cov_a: np.ndarray, mean_b: np.ndarray, cov_b: np.ndarray) -> float:
    """sqrt(dᵀ pinv((Σa + Σb) / 2) d), d = μa - μb"""
    d = np.asarray(mean_a, dtype=np.float64) - np.asarray(mean_b, dtype=np.float64)
    inv = np.linalg.pinv((np.asarray(cov_a) + np.asarray(cov_b)) / 2.0)
    return float(np.sqrt(max(float(d @ inv @ d), 0.0)))


def niqe(img: np.ndarray, model: NiqeModel) -> float:
    """
    Distance between the image's patch-feature MVG and the pristine MVG

    Args:
        img: (H, W, C) or (H, W) image; needs at least two patches
        model: Pristine model

    Returns:
        Score, lower is better
    """
    feats, _ = patch_features(img, model.patch_size)
    if feats.shape[0] < 2:
        raise ArgumentError(f"NIQE needs at least 2 patches of {model.patch_size}px, image gives {feats.shape[0]}")
    return mvg_distance(model.mean, model.cov, feats.mean(axis=0), np.cov(feats, rowvar=False))


def fit_niqe_model(
    pristine: Sequence[np.ndarray],
    patch: int = 32,
    sharpness_threshold: float = NIQE_SHARPNESS,
) -> NiqeModel:
    """
    Fit the pristine MVG from the sharpest patches of each image

    Args:
        pristine: At least 10 well-exposed images
        patch: Patch side in pixels
        sharpness_threshold: Keep patches sharper than this fraction of the
            image's sharpest patch

    Raises:
        FitError: Too few images, or no sharp patches (flat corpus)
    """
    if len(pristine) < MIN_PRISTINE_IMAGES:
        raise FitError(f"need at least {MIN_PRISTINE_IMAGES} pristine images, got {len(pristine)}")
    selected: List[np.ndarray] = []
    for img in pristine:
        feats, sharp = patch_features(img, patch)
        peak = sharp.max()
        if peak <= FLAT_SIGMA:
            continue
        selected.append(feats[sharp > sharpness_threshold * peak])
    if not selected or sum(len(s) for s in selected) < 2:
        raise FitError("no sharp patches in the pristine corpus; every image is flat")
    feats = np.concatenate(selected)
    cov = np.cov(feats, rowvar=False)
    cov = (cov + cov.T) / 2.0
    logger.info(f"✅ NIQE model fitted on {feats.shape[0]} patches from {len(pristine)} images")
    return NiqeModel(mean=feats.mean(axis=0), cov=cov, patch_size=patch, sharpness_threshold=sharpness_threshold)


def save_niqe_model(model: NiqeModel, path: Union[str, Path]) -> None:
    write_container(path, {
        "mean": model.mean,
        "cov": model.cov,
        "patch_size": np.array([model.patch_size]),
        "sharpness_threshold": np.array([model.sharpness_threshold]),
    })


def load_niqe_model(path: Union[str, Path]) -> NiqeModel:
    entries = read_container(path)
    missing = {"mean", "cov"} - set(entries)
    if missing:
        raise CheckpointError(f"{path}: not a NIQE model, missing {sorted(missing)}")
    patch = int(entries["patch_size"][0]) if "patch_size" in entries else 96
    threshold = float(entries["sharpness_threshold"][0]) if "sharpness_threshold" in entries else NIQE_SHARPNESS
    return NiqeModel(mean=entries["mean"], cov=entries["cov"], patch_size=patch, sharpness_threshold=threshold)


# -- BRISQUE -------------------------------------------------------------------------

@dataclass
class BrisqueRegressor:
    """
    Linear (optionally RBF-augmented) quality regressor over BRISQUE features

    Features are min-max scaled to [-1, 1] when bounds are present.
    score = bias + w·f + Σ coef_i · exp(-gamma · ||f - support_i||²)
    """
    weights: np.ndarray
    bias: float = 0.0
    feature_min: Optional[np.ndarray] = None
    feature_max: Optional[np.ndarray] = None
    support: Optional[np.ndarray] = None
    coef: Optional[np.ndarray] = None
    rbf_gamma: float = 0.0

    def scale(self, features: np.ndarray) -> np.ndarray:
        f = np.asarray(features, dtype=np.float64)
        if self.feature_min is None or self.feature_max is None:
            return f
        span = np.where(self.feature_max > self.feature_min, self.feature_max - self.feature_min, 1.0)
        return 2.0 * (f - self.feature_min) / span - 1.0

    def predict(self, features: np.ndarray) -> float:
        f = self.scale(features)
        score = self.bias + float(f @ np.asarray(self.weights, dtype=np.float64))
        if self.support is not None and self.coef is not None and len(self.coef):
            dist = np.sum((np.asarray(self.support) - f) ** 2, axis=1)
            score += float(np.asarray(self.coef) @ np.exp(-self.rbf_gamma * dist))
        return score


def brisque_features(img: np.ndarray) -> np.ndarray:
    """36 features: 18 statistics of the MSCN map at full and half scale"""
    gray = _gray(img)
    m1, _ = mscn(gray)
    m2, _ = mscn(half_scale(gray))
    return np.nan_to_num(np.concatenate([scale_features(m1), scale_features(m2)]))


def fit_brisque_regressor(features: np.ndarray, scores: np.ndarray, ridge: float = 1e-3) -> BrisqueRegressor:
    """
    Ridge-regularized linear regressor on min-max scaled features

    Args:
        features: (n, 36) feature rows
        scores: (n,) target quality scores
        ridge: L2 penalty on the weights

    Raises:
        FitError: Fewer than two samples or mismatched lengths
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(scores, dtype=np.float64).reshape(-1)
    if x.ndim != 2 or x.shape[0] != y.size or y.size < 2:
        raise FitError(f"need matching (n, d) features and n >= 2 scores, got {x.shape} and {y.shape}")
    reg = BrisqueRegressor(weights=np.zeros(x.shape[1]), feature_min=x.min(axis=0), feature_max=x.max(axis=0))
    xs = reg.scale(x)
    x_mean, y_mean = xs.mean(axis=0), y.mean()
    xc = xs - x_mean
    weights = np.linalg.solve(xc.T @ xc + ridge * np.eye(x.shape[1]), xc.T @ (y - y_mean))
    reg.weights = weights
    reg.bias = float(y_mean - x_mean @ weights)
    return reg


def save_brisque_regressor(reg: BrisqueRegressor, path: Union[str, Path]) -> None:
    entries: Dict[str, np.ndarray] = {
        "reg_weights": np.asarray(reg.weights),
        "reg_bias": np.array([reg.bias]),
    }
    if reg.feature_min is not None and reg.feature_max is not None:
        entries["reg_feature_min"] = np.asarray(reg.feature_min)
        entries["reg_feature_max"] = np.asarray(reg.feature_max)
    if reg.support is not None and reg.coef is not None:
        entries["reg_support"] = np.asarray(reg.support)
        entries["reg_coef"] = np.asarray(reg.coef)
        entries["reg_gamma"] = np.array([reg.rbf_gamma])
    write_container(path, entries)


def load_brisque_regressor(path: Union[str, Path]) -> BrisqueRegressor:
    entries = read_container(path)
    if "reg_weights" not in entries:
        raise CheckpointError(f"{path}: not a BRISQUE regressor (no reg_weights entry)")

    def opt(name: str) -> Optional[np.ndarray]:
        return entries[name].astype(np.float64) if name in entries else None

    return BrisqueRegressor(
        weights=entries["reg_weights"].astype(np.float64),
        bias=float(entries["reg_bias"][0]) if "reg_bias" in entries else 0.0,
        feature_min=opt("reg_feature_min"),
        feature_max=opt("reg_feature_max"),
        support=opt("reg_support"),
        coef=opt("reg_coef"),
        rbf_gamma=float(entries["reg_gamma"][0]) if "reg_gamma" in entries else 0.0,
    )


def brisque_score(
    img: np.ndarray,
    regressor: Optional[BrisqueRegressor] = None,
    fallback: Optional[NiqeModel] = None,
) -> float:
    """
    BRISQUE quality score, lower is better

    Uses ``regressor`` when given; otherwise the Mahalanobis distance of the
    image's features to the pristine ``fallback`` model.

    Raises:
        ConfigError: Neither a regressor nor a fallback model
    """
    feats = brisque_features(img)
    if regressor is not None:
        if np.asarray(regressor.weights).size != feats.size:
            raise ConfigError(f"regressor expects {np.asarray(regressor.weights).size} features, got {feats.size}")
        return regressor.predict(feats)
    if fallback is None:
        raise ConfigError("BRISQUE needs a regressor file or a pristine model for the distance fallback")
    inv = np.linalg.pinv(fallback.cov)
    d = feats - fallback.mean
    return float(np.sqrt(max(float(d @ inv @ d), 0.0)))


# -- registry ------------------------------------------------------------------------

@dataclass
class MetricSuite:
    """Requested metrics plus the models the no-reference ones need"""
    metrics: Sequence[str]
    niqe_model: Optional[NiqeModel] = None
    brisque_regressor: Optional[BrisqueRegressor] = None
    _order: List[str] = field(init=False, default_factory=list)

    def __post_init__(self):
        unknown = [m for m in self.metrics if m not in METRIC_ORDER]
        if unknown:
            raise ArgumentError(f"unknown metrics {unknown}; choose from {', '.join(METRIC_ORDER)}")
        if not self.metrics:
            raise ArgumentError("no metrics requested")
        self._order = [m for m in METRIC_ORDER if m in self.metrics]
        if "niqe" in self._order and self.niqe_model is None:
            raise ConfigError("niqe requested without a NIQE model")
        if "brisque" in self._order and self.brisque_regressor is None and self.niqe_model is None:
            raise ConfigError("brisque requested without a regressor or a NIQE model for the fallback")

    @property
    def ordered(self) -> List[str]:
        return list(self._order)

    @property
    def needs_reference(self) -> bool:
        return any(m in FULL_REFERENCE for m in self._order)

    def score(self, pred: np.ndarray, ref: Optional[np.ndarray] = None) -> Dict[str, float]:
        """Every requested metric for one image"""
        if self.needs_reference and ref is None:
            raise ArgumentError("full-reference metrics need a reference image")
        out: Dict[str, float] = {}
        for name in self._order:
            if name == "psnr":
                out[name] = psnr(pred, ref)
            elif name == "ssim":
                out[name] = ssim(pred, ref)
            elif name == "ms_ssim":
                out[name] = ms_ssim(pred, ref)
            elif name == "mse":
                out[name] = mse(pred, ref)
            elif name == "mae":
                out[name] = mae(pred, ref)
            elif name == "niqe":
                out[name] = niqe(pred, self.niqe_model)
            elif name == "brisque":
                out[name] = brisque_score(pred, self.brisque_regressor, self.niqe_model)
        return out
