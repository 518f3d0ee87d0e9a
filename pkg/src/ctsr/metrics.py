"""Quantitative evaluation: ROI noise, Haralick texture distance, PSNR."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .phantoms import Image2D


@dataclass(frozen=True)
class ROISpec:
    """Region of interest in pixel units: center (row, col), half-extents."""

    shape: str  # "ellipse" | "rectangle"
    center: tuple[float, float]
    extents: tuple[float, float]
    role: str = "uniform"  # "uniform" | "textured"

    def __post_init__(self):
        if self.shape not in ("ellipse", "rectangle"):
            raise ValueError(f"unknown ROI shape {self.shape!r}")
        if self.role not in ("uniform", "textured"):
            raise ValueError(f"unknown ROI role {self.role!r}")
        if min(self.extents) <= 0:
            raise ValueError("ROI extents must be positive")

    def mask(self, size: int) -> np.ndarray:
        cr, cc = self.center
        er, ec = self.extents
        if cr - er < -0.5 or cc - ec < -0.5 or cr + er > size - 0.5 or cc + ec > size - 0.5:
            raise ValueError(f"ROI {self} extends outside a {size}x{size} image")
        rows, cols = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
        if self.shape == "rectangle":
            return (np.abs(rows - cr) <= er) & (np.abs(cols - cc) <= ec)
        return ((rows - cr) / er) ** 2 + ((cols - cc) / ec) ** 2 <= 1.0

    @classmethod
    def from_dict(cls, d: dict) -> "ROISpec":
        return cls(d["shape"], tuple(d["center"]), tuple(d["extents"]), d.get("role", "uniform"))

    def to_dict(self) -> dict:
        return {
            "shape": self.shape,
            "center": list(self.center),
            "extents": list(self.extents),
            "role": self.role,
        }


@dataclass(frozen=True)
class HaralickConfig:
    gray_levels: int = 64
    window_hu: tuple[float, float] = (-1000.0, 2000.0)
    offsets: tuple[tuple[int, int], ...] = ((0, 1), (1, 0), (1, 1), (1, -1))
    def __post_init__(self):
        if self.gray_levels < 8:
            raise ValueError("need at least 8 gray levels")
        if any(o == (0, 0) for o in self.offsets):
            raise ValueError("offsets must be nonzero")
        if not self.window_hu[1] > self.window_hu[0]:
            raise ValueError("quantization window must have positive width")


FEATURE_NAMES = (
    "angular_second_moment",
    "contrast",
    "correlation",
    "sum_of_squares_variance",
    "inverse_difference_moment",
    "sum_average",
    "sum_variance",
    "sum_entropy",
    "entropy",
    "difference_variance",
    "difference_entropy",
    "info_correlation_1",
    "info_correlation_2",
)


def roi_std(img: Image2D, roi: ROISpec) -> float:
    """Population standard deviation of HU inside the ROI."""
    m = roi.mask(img.size)
    count = int(m.sum())
    if roi.role == "uniform" and count < 100:
        raise ValueError(f"uniform ROI holds only {count} pixels (minimum 100)")
    return float(img.data[m].std())


def quantize(img: Image2D, cfg: HaralickConfig) -> np.ndarray:
    lo, hi = cfg.window_hu
    q = np.floor((img.data - lo) / (hi - lo) * cfg.gray_levels).astype(np.int64)
    return np.clip(q, 0, cfg.gray_levels - 1)


def glcm(quantized: np.ndarray, roi_mask: np.ndarray, offset: tuple[int, int], levels: int) -> np.ndarray:
    """Symmetric, normalized gray-level co-occurrence matrix for one offset."""
    dr, dc = offset
    n = quantized.shape[0]
    r0, r1 = max(0, -dr), min(n, n - dr)
    c0, c1 = max(0, -dc), min(n, n - dc)
    a = quantized[r0:r1, c0:c1]
    b = quantized[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
    valid = roi_mask[r0:r1, c0:c1] & roi_mask[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
    counts = np.zeros((levels, levels), dtype=np.float64)
    np.add.at(counts, (a[valid], b[valid]), 1.0)
    counts = counts + counts.T
    total = counts.sum()
    if total == 0:
        raise ValueError(f"no co-occurring pixel pairs in ROI for offset {offset}")
    return counts / total


def _features_from_glcm(p: np.ndarray) -> np.ndarray:
    """The 13 classic co-occurrence features of one normalized GLCM."""
    levels = p.shape[0]
    i = np.arange(levels, dtype=np.float64)
    ii, jj = np.meshgrid(i, i, indexing="ij")

    px = p.sum(axis=1)  # symmetric: px == py
    mu = float((i * px).sum())
    var = float(((i - mu) ** 2 * px).sum())
    sigma = math.sqrt(var)

    def plogp(x):
        return float(np.where(x > 0, x * np.log(x + (x <= 0)), 0.0).sum())

    # marginal sums over i+j and |i-j|
    p_sum = np.zeros(2 * levels - 1)
    np.add.at(p_sum, (ii + jj).astype(int).ravel(), p.ravel())
    p_diff = np.zeros(levels)
    np.add.at(p_diff, np.abs(ii - jj).astype(int).ravel(), p.ravel())
    k_sum = np.arange(2 * levels - 1, dtype=np.float64)
    k_diff = np.arange(levels, dtype=np.float64)

    asm = float((p * p).sum())
    contrast = float((((ii - jj) ** 2) * p).sum())
    if sigma > 0:
        correlation = float((((ii - mu) * (jj - mu) * p).sum()) / (sigma * sigma))
    else:
        correlation = 0.0
    sum_of_squares = var
    idm = float((p / (1.0 + (ii - jj) ** 2)).sum())
    sum_avg = float((k_sum * p_sum).sum())
    sum_var = float(((k_sum - sum_avg) ** 2 * p_sum).sum())
    sum_ent = -plogp(p_sum)
    entropy = -plogp(p)
    diff_mean = float((k_diff * p_diff).sum())
    diff_var = float(((k_diff - diff_mean) ** 2 * p_diff).sum())
    diff_ent = -plogp(p_diff)

    hxy = entropy
    hx = -plogp(px)
    pxy_outer = np.outer(px, px)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_outer = np.where(pxy_outer > 0, np.log(pxy_outer + (pxy_outer <= 0)), 0.0)
    hxy1 = -float((p * log_outer).sum())
    hxy2 = -float((pxy_outer * log_outer).sum())
    # symmetric GLCM: hy == hx, so max(hx, hy) == hx
    info1 = (hxy - hxy1) / hx if hx > 0 else 0.0
    info2 = math.sqrt(max(0.0, 1.0 - math.exp(-2.0 * (hxy2 - hxy))))

    return np.array([
        asm, contrast, correlation, sum_of_squares, idm, sum_avg, sum_var,
        sum_ent, entropy, diff_var, diff_ent, info1, info2,
    ])


def haralick_features(img: Image2D, roi: ROISpec, cfg: HaralickConfig = HaralickConfig()) -> np.ndarray:
    """13 co-occurrence features, averaged over the configured offsets."""
    m = roi.mask(img.size)
    rows = np.flatnonzero(m.any(axis=1))
    cols = np.flatnonzero(m.any(axis=0))
    if rows.size < 8 or cols.size < 8:
        raise ValueError(f"ROI bounding box {rows.size}x{cols.size} is smaller than 8x8")
    q = quantize(img, cfg)
    feats = [_features_from_glcm(glcm(q, m, off, cfg.gray_levels)) for off in cfg.offsets]
    return np.mean(feats, axis=0)


class FeatureStandardizer:
    """Per-dimension z-scoring fitted on a reference set of feature vectors.

    Zero-variance dimensions are dropped and remembered so reports can record
    which features were uninformative on the reference set.
    """

    def __init__(self, reference: list[np.ndarray]):
        ref = np.asarray(reference, dtype=np.float64)
        if ref.ndim != 2 or ref.shape[0] < 2:
            raise ValueError("need at least two reference feature vectors")
        self.mean = ref.mean(axis=0)
        self.std = ref.std(axis=0)
        self.kept = np.flatnonzero(self.std > 0)
        self.dropped = [FEATURE_NAMES[i] for i in np.flatnonzero(self.std == 0)]

    def transform(self, v: np.ndarray) -> np.ndarray:
        return (np.asarray(v)[self.kept] - self.mean[self.kept]) / self.std[self.kept]

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "dropped_features": self.dropped,
        }


def haralick_distance(
    a: Image2D,
    b: Image2D,
    roi: ROISpec,
    cfg: HaralickConfig = HaralickConfig(),
    standardizer: FeatureStandardizer | None = None,
) -> float:
    """Euclidean distance between standardized feature vectors of two images.

    Without an explicit standardizer the two images themselves serve as the
    reference set, which preserves the pseudometric identities d(a,a)=0 and
    d(a,b)=d(b,a).
    """
    if a.data.shape != b.data.shape:
        raise ValueError("images must share a grid")
    fa = haralick_features(a, roi, cfg)
    fb = haralick_features(b, roi, cfg)
    if standardizer is None:
        ref = [fa, fb] if not np.allclose(fa, fb) else [fa, fa + 1.0]
        standardizer = FeatureStandardizer(ref)
    return float(np.linalg.norm(standardizer.transform(fa) - standardizer.transform(fb)))


def psnr(a: Image2D, ref: Image2D, roi: ROISpec | None = None) -> float:
    """10 log10(R^2 / MSE) with R the dynamic range of the reference."""
    if a.data.shape != ref.data.shape:
        raise ValueError("images must share a grid")
    if roi is not None:
        m = roi.mask(ref.size)
        diff = a.data[m] - ref.data[m]
        r = float(ref.data[m].max() - ref.data[m].min())
    else:
        diff = a.data - ref.data
        r = float(ref.data.max() - ref.data.min())
    mse = float(np.mean(diff**2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(r * r / mse)
