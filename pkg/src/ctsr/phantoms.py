"""Procedural 2D head-like numerical phantoms with synthetic trabecular bone.

Everything here is deterministic given (spec, seed). Images are plain HU
rasters; physical coordinates are in mm with x pointing right (columns) and
y pointing up (rows counted downward from the top edge).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

HU_MIN = -1000.0
HU_MAX = 3000.0

_AA_SUBGRID = 4  # 4x4 subpixel coverage sampling


@dataclass
class Image2D:
    """Square grid of HU values with isotropic pixel spacing (mm/pixel)."""

    data: np.ndarray
    pixel_spacing: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] != self.data.shape[1]:
            raise ValueError(f"image grid must be square 2D, got {self.data.shape}")
        if not self.pixel_spacing > 0:
            raise ValueError(f"pixel spacing must be positive, got {self.pixel_spacing}")
        if not np.isfinite(self.data).all():
            raise ValueError("image contains non-finite values")

    @property
    def size(self) -> int:
        return self.data.shape[0]

    @property
    def fov_mm(self) -> float:
        return self.size * self.pixel_spacing

    def copy(self) -> "Image2D":
        return Image2D(self.data.copy(), self.pixel_spacing, dict(self.meta))


@dataclass(frozen=True)
class Ellipse:
    """center (x, y) mm, semi-axes (a, b) mm, rotation rad, fill value HU."""

    center: tuple[float, float]
    semi_axes: tuple[float, float]
    rotation: float
    value: float


@dataclass(frozen=True)
class TextureParams:
    """Binarized band-pass texture carved out of an already-rendered region.

    Inside the region a thresholded band-pass random field alternates between
    the rendered HU (solid bone) and rendered HU minus ``amplitude`` (marrow
    pockets). ``fill_fraction`` is the quantile of pixels turned into pockets.
    """

    correlation_length_mm: float = 0.9
    amplitude_hu: float = 1300.0
    fill_fraction: float = 0.5


@dataclass(frozen=True)
class PhantomSpec:
    image_size: int
    pixel_spacing: float
    ellipses: tuple[Ellipse, ...]
    rng_seed: int = 0

    def __post_init__(self):
        if self.image_size < 2:
            raise ValueError("image_size must be >= 2")
        if not self.pixel_spacing > 0:
            raise ValueError("pixel_spacing must be positive")
        half = 0.5 * self.image_size * self.pixel_spacing
        for e in self.ellipses:
            if not (HU_MIN <= e.value <= HU_MAX):
                raise ValueError(f"ellipse value {e.value} HU outside [{HU_MIN}, {HU_MAX}]")
            if min(e.semi_axes) <= 0:
                raise ValueError("ellipse semi-axes must be positive")
            # half-extents of the rotated ellipse bounding box
            a, b = e.semi_axes
            c, s = np.cos(e.rotation), np.sin(e.rotation)
            wx = np.hypot(a * c, b * s)
            wy = np.hypot(a * s, b * c)
            if abs(e.center[0]) + wx > half or abs(e.center[1]) + wy > half:
                raise ValueError(
                    f"ellipse at {e.center} with extents ({wx:.2f}, {wy:.2f}) mm "
                    f"leaves the {2 * half:.2f} mm field of view"
                )


def pixel_centers_mm(size: int, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Physical (x, y) coordinates of pixel centers; y axis points up."""
    idx = np.arange(size, dtype=np.float64)
    x = (idx - (size - 1) / 2.0) * spacing
    y = ((size - 1) / 2.0 - idx) * spacing
    return np.meshgrid(x, y)[0], np.meshgrid(x, y)[1]


def _ellipse_coverage(e: Ellipse, size: int, spacing: float) -> np.ndarray:
    """Area coverage fraction per pixel via a 4x4 subpixel grid."""
    cov = np.zeros((size, size), dtype=np.float64)
    cos_r, sin_r = np.cos(e.rotation), np.sin(e.rotation)
    a, b = e.semi_axes
    idx = np.arange(size, dtype=np.float64)
    offs = (np.arange(_AA_SUBGRID) + 0.5) / _AA_SUBGRID - 0.5
    for dy in offs:
        ys = ((size - 1) / 2.0 - (idx + dy)) * spacing - e.center[1]
        for dx in offs:
            xs = ((idx + dx) - (size - 1) / 2.0) * spacing - e.center[0]
            X, Y = np.meshgrid(xs, ys)
            u = (X * cos_r + Y * sin_r) / a
            v = (-X * sin_r + Y * cos_r) / b
            cov += (u * u + v * v) <= 1.0
    return cov / (_AA_SUBGRID * _AA_SUBGRID)


def render_phantom(spec: PhantomSpec) -> Image2D:
    """Rasterize the layered-ellipse phantom onto a HU grid.

    Ellipses are drawn in list order, each overwriting what is underneath;
    boundaries are area-weighted so partial pixels blend instead of stepping.
    """
    img = np.full((spec.image_size, spec.image_size), HU_MIN, dtype=np.float64)
    for e in spec.ellipses:
        cov = _ellipse_coverage(e, spec.image_size, spec.pixel_spacing)
        img = img * (1.0 - cov) + e.value * cov
    np.clip(img, HU_MIN, HU_MAX, out=img)
    return Image2D(img, spec.pixel_spacing)


def ellipse_mask(e: Ellipse, size: int, spacing: float) -> np.ndarray:
    """Boolean mask of pixel centers strictly inside the ellipse."""
    X, Y = pixel_centers_mm(size, spacing)
    cos_r, sin_r = np.cos(e.rotation), np.sin(e.rotation)
    a, b = e.semi_axes
    u = ((X - e.center[0]) * cos_r + (Y - e.center[1]) * sin_r) / a
    v = (-(X - e.center[0]) * sin_r + (Y - e.center[1]) * cos_r) / b
    return (u * u + v * v) <= 1.0


def bandpass_field(shape: tuple[int, int], sigma_px: float, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean band-pass filtered white noise (difference of Gaussians)."""
    noise = rng.standard_normal(shape)
    lo = ndimage.gaussian_filter(noise, sigma=0.5 * sigma_px, mode="wrap")
    hi = ndimage.gaussian_filter(noise, sigma=sigma_px, mode="wrap")
    return lo - hi


def add_trabecular_texture(
    img: Image2D,
    region: np.ndarray,
    params: TextureParams,
    rng: np.random.Generator,
) -> Image2D:
    """Carve marrow-like pockets into ``region`` of an already-rendered image.

    The pocket pattern is a thresholded band-pass random field; pocket pixels
    drop by ``params.amplitude_hu``, the rest of the region keeps its rendered
    value. Pixels outside the region are untouched.
    """
    region = np.asarray(region, dtype=bool)
    if region.shape != img.data.shape:
        raise ValueError(f"region shape {region.shape} != image shape {img.data.shape}")
    out = img.copy()
    if not region.any() or params.amplitude_hu == 0.0:
        # rng is still consumed so corpora keep identical stream layouts
        # whether or not a given slice carries texture
        _ = bandpass_field(img.data.shape, max(params.correlation_length_mm / img.pixel_spacing, 0.5), rng)
        return out
    sigma_px = max(params.correlation_length_mm / img.pixel_spacing, 0.5)
    f = bandpass_field(img.data.shape, sigma_px, rng)
    cut = np.quantile(f[region], params.fill_fraction)
    pockets = region & (f <= cut)
    out.data[pockets] -= params.amplitude_hu
    np.clip(out.data, HU_MIN, HU_MAX, out=out.data)
    return out


# ---------------------------------------------------------------------------
# The head-like family used by the simulation pipeline. Layout (all mm):
# an outer soft-tissue ellipse, a skull ring, a brain interior, one thick
# bone slab standing in for the temporal bone, plus seed-jittered air
# pockets and soft inclusions. Proportions scale with the field of view so
# the same family renders at any grid size.
# ---------------------------------------------------------------------------

SOFT_TISSUE_HU = 40.0
BRAIN_HU = 45.0
BONE_HU = 1450.0
AIR_HU = -1000.0


@dataclass(frozen=True)
class HeadFamilyConfig:
    image_size: int = 128
    pixel_spacing: float = 0.3
    with_texture: bool = False
    texture: TextureParams = field(default_factory=TextureParams)


def _family_layout(fov: float) -> dict:
    u = fov / 38.4  # proportions tuned on the 128 px / 0.3 mm grid
    return {
        "head": (16.0 * u, 14.6 * u),
        "skull": (14.8 * u, 13.4 * u),
        "brain": (12.4 * u, 11.0 * u),
        "slab_center": (0.0, -8.4 * u),
        "slab": (7.0 * u, 3.4 * u),
        "slab_margin": 0.9 * u,
        "uniform_roi_radius": 2.1 * u,
        "textured_roi_half": (4.4 * u, 1.6 * u),
    }


def head_phantom_spec(seed: int, cfg: HeadFamilyConfig) -> PhantomSpec:
    """Seed-jittered member of the head family (geometry only, no texture)."""
    rng = np.random.default_rng(seed)
    fov = cfg.image_size * cfg.pixel_spacing
    lay = _family_layout(fov)
    u = fov / 38.4

    ellipses = [
        Ellipse((0.0, 0.0), lay["head"], 0.0, SOFT_TISSUE_HU),
        Ellipse((0.0, 0.0), lay["skull"], 0.0, BONE_HU),
        Ellipse((0.0, 0.0), lay["brain"], 0.0, BRAIN_HU),
        Ellipse(lay["slab_center"], lay["slab"], 0.0, BONE_HU),
    ]
    # frontal air sinus, jittered but kept away from the center and the slab
    sx = rng.uniform(-2.5, 2.5) * u
    sy = rng.uniform(6.0, 7.8) * u
    sr = rng.uniform(1.2, 2.0) * u
    ellipses.append(Ellipse((sx, sy), (sr, 0.8 * sr), rng.uniform(0, np.pi), AIR_HU))
    # lateral soft inclusions in the brain
    for side in (-1.0, 1.0):
        cx = side * rng.uniform(5.5, 7.5) * u
        cy = rng.uniform(-1.5, 2.5) * u
        r = rng.uniform(1.0, 2.2) * u
        ellipses.append(
            Ellipse((cx, cy), (r, rng.uniform(0.6, 1.0) * r), rng.uniform(0, np.pi),
                    rng.uniform(15.0, 75.0))
        )
    # small ventricle-like low spot, off the uniform ROI
    vx = rng.uniform(-1.0, 1.0) * u
    vy = rng.uniform(3.2, 4.6) * u
    ellipses.append(Ellipse((vx, vy), (1.4 * u, 0.9 * u), rng.uniform(0, np.pi), 10.0))

    return PhantomSpec(cfg.image_size, cfg.pixel_spacing, tuple(ellipses), rng_seed=seed)


def texture_region(cfg: HeadFamilyConfig) -> np.ndarray:
    """Interior of the bone slab (with a safety margin) on the family grid."""
    fov = cfg.image_size * cfg.pixel_spacing
    lay = _family_layout(fov)
    a, b = lay["slab"]
    m = lay["slab_margin"]
    inner = Ellipse(lay["slab_center"], (a - m, b - m), 0.0, 0.0)
    return ellipse_mask(inner, cfg.image_size, cfg.pixel_spacing)


def make_head_phantom(seed: int, cfg: HeadFamilyConfig) -> Image2D:
    """Render one family member; texture is carved only if cfg asks for it."""
    spec = head_phantom_spec(seed, cfg)
    img = render_phantom(spec)
    rng = np.random.default_rng(seed + 7919)
    if cfg.with_texture:
        img = add_trabecular_texture(img, texture_region(cfg), cfg.texture, rng)
    return img


def family_uniform_roi(cfg: HeadFamilyConfig) -> dict:
    """Uniform-brain ROI of the family, in pixel units (ellipse spec)."""
    lay = _family_layout(cfg.image_size * cfg.pixel_spacing)
    r = lay["uniform_roi_radius"] / cfg.pixel_spacing
    c = (cfg.image_size - 1) / 2.0
    return {"shape": "ellipse", "center": (c, c), "extents": (r, r), "role": "uniform"}


def family_textured_roi(cfg: HeadFamilyConfig) -> dict:
    """Trabecular-slab ROI of the family, in pixel units (rectangle spec)."""
    lay = _family_layout(cfg.image_size * cfg.pixel_spacing)
    hx, hy = lay["textured_roi_half"]
    cx_mm, cy_mm = lay["slab_center"]
    c = (cfg.image_size - 1) / 2.0
    row = c - cy_mm / cfg.pixel_spacing
    col = c + cx_mm / cfg.pixel_spacing
    return {
        "shape": "rectangle",
        "center": (row, col),
        "extents": (hy / cfg.pixel_spacing, hx / cfg.pixel_spacing),
        "role": "textured",
    }


def scaled_family(cfg: HeadFamilyConfig, image_size: int, pixel_spacing: float) -> HeadFamilyConfig:
    """Same anatomy on another grid (texture length stays physical)."""
    return replace(cfg, image_size=image_size, pixel_spacing=pixel_spacing)


def calibration_phantom(image_size: int = 128, pixel_spacing: float = 0.3) -> Image2D:
    """Plain head/skull/brain phantom with a large uniform interior.

    Noise calibration measures ROI standard deviations, so the phantom must
    keep the central region free of inclusions for any ROI size used.
    """
    fov = image_size * pixel_spacing
    lay = _family_layout(fov)
    spec = PhantomSpec(
        image_size,
        pixel_spacing,
        (
            Ellipse((0.0, 0.0), lay["head"], 0.0, SOFT_TISSUE_HU),
            Ellipse((0.0, 0.0), lay["skull"], 0.0, BONE_HU),
            Ellipse((0.0, 0.0), lay["brain"], 0.0, BRAIN_HU),
        ),
    )
    return render_phantom(spec)


def calibration_roi(image_size: int = 128, pixel_spacing: float = 0.3) -> dict:
    """Large centered uniform ROI matched to the calibration phantom."""
    fov = image_size * pixel_spacing
    lay = _family_layout(fov)
    r = 0.7 * min(lay["brain"]) / pixel_spacing
    c = (image_size - 1) / 2.0
    return {"shape": "ellipse", "center": (c, c), "extents": (r, r), "role": "uniform"}
