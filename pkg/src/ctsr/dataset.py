"""Hybrid training corpus construction.

Simulated HR/LR pairs with matched noise levels, bone-only pairs segmented
out of noise-unmatched "real-like" pairs, sinc upsampling of the LR condition
onto the HR grid, projection-noise calibration, and the deterministic patch
batch sampler that feeds training.

All stored pairs live in normalized model space: the configured HU window is
mapped affinely onto [-1, 1].
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import ctsim
from .containers import mask_to_rle, rle_to_mask
from .ctsim import NoiseInjectionParams, ReconSettings, ScanGeometry, Sinogram
from .metrics import ROISpec
from .phantoms import Image2D

BACKGROUND_HU = -1000.0
DEFAULT_WINDOW = (-1000.0, 2000.0)
BONE_THRESHOLD_HU = 300.0
MIN_BONE_PATCH_FRACTION = 0.10

_STRUCT = ndimage.generate_binary_structure(2, 1)  # 3x3 cross


@dataclass
class BoneMask:
    mask: np.ndarray
    threshold_hu: float

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)


@dataclass
class TrainingPair:
    """(HR label, upsampled-LR condition) in normalized model space."""

    x0: np.ndarray
    y: np.ndarray
    source: str  # "sim" | "bone"
    bone_mask: np.ndarray | None = None
    pixel_spacing: float = 0.3
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=np.float32)
        self.y = np.asarray(self.y, dtype=np.float32)
        if self.x0.shape != self.y.shape:
            raise ValueError(f"label shape {self.x0.shape} != condition shape {self.y.shape}")
        if self.source not in ("sim", "bone"):
            raise ValueError(f"unknown pair source {self.source!r}")
        if self.bone_mask is not None:
            self.bone_mask = np.asarray(self.bone_mask, dtype=bool)
            if self.bone_mask.shape != self.x0.shape:
                raise ValueError("bone mask shape differs from image shape")


@dataclass(frozen=True)
class HybridDatasetConfig:
    sim_fraction: float = 48.0 / 64.0
    bone_fraction: float = 16.0 / 64.0
    patch_size: int = 64
    window_hu: tuple[float, float] = DEFAULT_WINDOW
    rng_seed: int = 0

    def __post_init__(self):
        if abs(self.sim_fraction + self.bone_fraction - 1.0) > 1e-9:
            raise ValueError("batch fractions must sum to 1")
        if self.patch_size < 1:
            raise ValueError("patch size must be positive")

    def batch_composition(self, batch_size: int) -> tuple[int, int]:
        n_sim = int(round(self.sim_fraction * batch_size))
        return n_sim, batch_size - n_sim


def normalize_hu(data: np.ndarray, window: tuple[float, float] = DEFAULT_WINDOW) -> np.ndarray:
    lo, hi = window
    return 2.0 * (np.asarray(data, dtype=np.float64) - lo) / (hi - lo) - 1.0


def denormalize_hu(data: np.ndarray, window: tuple[float, float] = DEFAULT_WINDOW) -> np.ndarray:
    lo, hi = window
    return (np.asarray(data, dtype=np.float64) + 1.0) * (hi - lo) / 2.0 + lo


# ---------------------------------------------------------------------------
# Bone segmentation and bone-only pairs
# ---------------------------------------------------------------------------


def segment_bone(img: Image2D, threshold_hu: float = BONE_THRESHOLD_HU) -> BoneMask:
    """Threshold, fill enclosed holes, then open and close with a 3x3 cross.

    The opening removes speckle components too small to contain the
    structuring element; the closing heals single-pixel notches.
    """
    raw = img.data >= threshold_hu
    filled = ndimage.binary_fill_holes(raw, structure=_STRUCT)
    opened = ndimage.binary_opening(filled, structure=_STRUCT)
    closed = ndimage.binary_closing(opened, structure=_STRUCT)
    if not closed.any():
        warnings.warn("bone segmentation produced an empty mask", RuntimeWarning)
    return BoneMask(closed, threshold_hu)


def extract_bone_pair(
    hr: Image2D,
    lr_upsampled: Image2D,
    mask: BoneMask,
    background_hu: float = BACKGROUND_HU,
    window: tuple[float, float] = DEFAULT_WINDOW,
) -> TrainingPair:
    """Blank everything outside the bone mask in both members of the pair."""
    if hr.data.shape != lr_upsampled.data.shape:
        raise ValueError("HR and upsampled LR must share a grid")
    if mask.mask.shape != hr.data.shape:
        raise ValueError("mask shape differs from image shape")
    x0 = np.where(mask.mask, hr.data, background_hu)
    y = np.where(mask.mask, lr_upsampled.data, background_hu)
    return TrainingPair(
        x0=normalize_hu(x0, window),
        y=normalize_hu(y, window),
        source="bone",
        bone_mask=mask.mask.copy(),
        pixel_spacing=hr.pixel_spacing,
        provenance={"threshold_hu": mask.threshold_hu, "background_hu": background_hu},
    )


# ---------------------------------------------------------------------------
# Sinc upsampling (frequency-domain zero padding)
# ---------------------------------------------------------------------------


def sinc_upsample(img: Image2D, factor: int = 2) -> Image2D:
    """Exact band-limited interpolation onto a factor-times-finer grid."""
    if factor < 2 or int(factor) != factor:
        raise ValueError("upsampling factor must be an integer >= 2")
    n = img.size
    m = n * factor
    spec = np.fft.fftshift(np.fft.fft2(img.data))
    out = np.zeros((m, m), dtype=complex)
    off = (m - n) // 2
    out[off : off + n, off : off + n] = spec
    if n % 2 == 0:
        # split the even-length Nyquist bin symmetrically so the
        # interpolant is real and band-limited signals resample exactly
        out[off, :] *= 0.5
        out[off + n, :] = out[off, :]
        out[:, off] *= 0.5
        out[:, off + n] = out[:, off]
    up = np.real(np.fft.ifft2(np.fft.ifftshift(out))) * factor**2
    return Image2D(up, img.pixel_spacing / factor, dict(img.meta))


# ---------------------------------------------------------------------------
# Simulation chains and noise-level calibration
# ---------------------------------------------------------------------------


@dataclass
class SimulatedPair:
    """Reconstructions of one phantom: HU images of both chains."""

    hr: Image2D
    lr: Image2D
    lr_upsampled: Image2D


def simulate_pair(
    phantom: Image2D,
    geom: ScanGeometry,
    noise: NoiseInjectionParams,
    recon: ReconSettings,
    rng: np.random.Generator,
) -> SimulatedPair:
    """Phantom to noise-injected HR/LR reconstructions sharing one noise draw."""
    sino_hr = ctsim.project_image(phantom, geom)
    sino_lr = ctsim.rebin_sinogram(sino_hr, noise.bin_factor)
    noisy_hr, noisy_lr = ctsim.inject_correlated_noise(sino_hr, sino_lr, noise, rng)
    hr = ctsim.reconstruct_fbp(noisy_hr, recon.kernel, recon.hr_size, recon.hr_spacing)
    lr = ctsim.reconstruct_fbp(noisy_lr, recon.kernel, recon.lr_size, recon.lr_spacing)
    return SimulatedPair(hr=hr, lr=lr, lr_upsampled=sinc_upsample(lr, 2))


def _chain_roi_std(
    sinos: list[tuple[Sinogram, Sinogram]],
    chain: str,
    k: float,
    noise: NoiseInjectionParams,
    recon: ReconSettings,
    roi_hr: ROISpec,
    seeds: list[int],
) -> float:
    params = NoiseInjectionParams(
        k_hr=k if chain == "hr" else 0.0,
        k_lr=k if chain == "lr" else 0.0,
        n0_hr=noise.n0_hr,
        n0_lr=noise.n0_lr,
        bin_factor=noise.bin_factor,
    )
    scale = recon.lr_size / recon.hr_size
    roi_lr = ROISpec(
        roi_hr.shape,
        (roi_hr.center[0] * scale, roi_hr.center[1] * scale),
        (max(roi_hr.extents[0] * scale, 1.0), max(roi_hr.extents[1] * scale, 1.0)),
        roi_hr.role,
    )
    stds = []
    for (s_hr, s_lr), seed in zip(sinos, seeds):
        noisy_hr, noisy_lr = ctsim.inject_correlated_noise(
            s_hr, s_lr, params, np.random.default_rng(seed)
        )
        if chain == "hr":
            img = ctsim.reconstruct_fbp(noisy_hr, recon.kernel, recon.hr_size, recon.hr_spacing)
            stds.append(img.data[roi_hr.mask(img.size)].std())
        else:
            img = ctsim.reconstruct_fbp(noisy_lr, recon.kernel, recon.lr_size, recon.lr_spacing)
            stds.append(img.data[roi_lr.mask(img.size)].std())
    return float(np.mean(stds))


def calibrate_noise_levels(
    phantoms: list[Image2D],
    geom: ScanGeometry,
    noise: NoiseInjectionParams,
    recon: ReconSettings,
    target_std_hu: float,
    roi: ROISpec,
    n_realizations: int = 4,
    seed: int = 0,
    k_max: float = 20.0,
    rel_tol: float = 0.01,
) -> tuple[float, float]:
    """Bisect k_hr and k_lr until each chain's ROI std hits the target.

    The same noise realizations are reused at every trial k, so the objective
    is smooth and monotone in k and the bisection is deterministic.
    """
    if target_std_hu < 0:
        raise ValueError("target noise level must be non-negative")
    if target_std_hu == 0.0:
        return 0.0, 0.0

    sinos = []
    for ph in phantoms:
        s_hr = ctsim.project_image(ph, geom)
        sinos.append((s_hr, ctsim.rebin_sinogram(s_hr, noise.bin_factor)))
    seeds = [seed + 1000 * i for i in range(n_realizations)]
    reps = int(np.ceil(n_realizations / len(sinos)))
    sinos = (sinos * reps)[:n_realizations]

    out = []
    for chain in ("hr", "lr"):
        def f(k: float) -> float:
            return _chain_roi_std(sinos, chain, k, noise, recon, roi, seeds) - target_std_hu

        lo, hi = 0.0, k_max
        f_lo, f_hi = f(lo), f(hi)
        if f_lo > 0 or f_hi < 0:
            raise ValueError(
                f"search range [0, {k_max}] does not bracket the target for the {chain} chain: "
                f"std({lo})={f_lo + target_std_hu:.2f}, std({k_max})={f_hi + target_std_hu:.2f}, "
                f"target={target_std_hu:.2f}"
            )
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if f(mid) < 0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= rel_tol * hi:
                break
        out.append(0.5 * (lo + hi))
    return out[0], out[1]


# ---------------------------------------------------------------------------
# Corpus container, persistence, batch sampling
# ---------------------------------------------------------------------------


class HybridCorpus:
    def __init__(self, pairs: list[TrainingPair], cfg: HybridDatasetConfig):
        if not pairs:
            raise ValueError("corpus is empty")
        self.pairs = pairs
        self.cfg = cfg
        self.sim_indices = [i for i, p in enumerate(pairs) if p.source == "sim"]
        self.bone_indices = [i for i, p in enumerate(pairs) if p.source == "bone"]

    def __len__(self) -> int:
        return len(self.pairs)

    def content_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for p in self.pairs:
            h.update(p.source.encode())
            h.update(np.ascontiguousarray(p.x0).tobytes())
            h.update(np.ascontiguousarray(p.y).tobytes())
        return h.hexdigest()

    def save(self, out_dir: str | Path) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        records = []
        for i, p in enumerate(self.pairs):
            stem = f"pair_{i:05d}"
            np.asarray(p.x0, dtype="<f4").tofile(out_dir / f"{stem}_x0.raw")
            np.asarray(p.y, dtype="<f4").tofile(out_dir / f"{stem}_y.raw")
            rec = {
                "stem": stem,
                "source": p.source,
                "shape": list(p.x0.shape),
                "pixel_spacing_mm": p.pixel_spacing,
                "split": p.provenance.get("split", "train"),
                "provenance": p.provenance,
                "bone_mask_rle": mask_to_rle(p.bone_mask) if p.bone_mask is not None else None,
            }
            records.append(rec)
        manifest = {
            "kind": "hybrid_corpus",
            "window_hu": list(self.cfg.window_hu),
            "sim_fraction": self.cfg.sim_fraction,
            "bone_fraction": self.cfg.bone_fraction,
            "patch_size": self.cfg.patch_size,
            "rng_seed": self.cfg.rng_seed,
            "records": records,
        }
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1))
        return out_dir / "manifest.json"

    @classmethod
    def load(cls, out_dir: str | Path) -> "HybridCorpus":
        out_dir = Path(out_dir)
        manifest = json.loads((out_dir / "manifest.json").read_text())
        if manifest.get("kind") != "hybrid_corpus":
            raise ValueError(f"{out_dir}: not a corpus directory")
        cfg = HybridDatasetConfig(
            sim_fraction=manifest["sim_fraction"],
            bone_fraction=manifest["bone_fraction"],
            patch_size=manifest["patch_size"],
            window_hu=tuple(manifest["window_hu"]),
            rng_seed=manifest["rng_seed"],
        )
        pairs = []
        for rec in manifest["records"]:
            shape = tuple(rec["shape"])
            x0 = np.fromfile(out_dir / f"{rec['stem']}_x0.raw", dtype="<f4").reshape(shape)
            y = np.fromfile(out_dir / f"{rec['stem']}_y.raw", dtype="<f4").reshape(shape)
            mask = rle_to_mask(rec["bone_mask_rle"], shape) if rec["bone_mask_rle"] is not None else None
            pairs.append(
                TrainingPair(
                    x0=x0,
                    y=y,
                    source=rec["source"],
                    bone_mask=mask,
                    pixel_spacing=rec["pixel_spacing_mm"],
                    provenance=rec.get("provenance", {}),
                )
            )
        return cls(pairs, cfg)


def build_hybrid_corpus(
    sim_pairs: list[SimulatedPair],
    real_like_pairs: list[SimulatedPair],
    cfg: HybridDatasetConfig,
    bone_threshold_hu: float = BONE_THRESHOLD_HU,
    out_dir: str | Path | None = None,
) -> HybridCorpus:
    """Assemble the training corpus of Fig-style hybrid recipes.

    ``sim_pairs`` go in whole (normalized) as source "sim"; each
    ``real_like_pairs`` member contributes its segmented bone-only pair.
    Real-like slices whose segmentation comes back empty are skipped with a
    warning rather than polluting the bone corpus with blank pairs.
    """
    if not sim_pairs and not real_like_pairs:
        raise ValueError("both input corpora are empty")
    pairs: list[TrainingPair] = []
    for i, sp in enumerate(sim_pairs):
        pairs.append(
            TrainingPair(
                x0=normalize_hu(sp.hr.data, cfg.window_hu),
                y=normalize_hu(sp.lr_upsampled.data, cfg.window_hu),
                source="sim",
                pixel_spacing=sp.hr.pixel_spacing,
                provenance={"index": i},
            )
        )
    for i, rp in enumerate(real_like_pairs):
        mask = segment_bone(rp.hr, bone_threshold_hu)
        if not mask.mask.any():
            continue  # segment_bone already warned
        pair = extract_bone_pair(rp.hr, rp.lr_upsampled, mask, BACKGROUND_HU, cfg.window_hu)
        pair.provenance["index"] = i
        pairs.append(pair)
    corpus = HybridCorpus(pairs, cfg)
    if out_dir is not None:
        corpus.save(out_dir)
    return corpus


def _random_crop_origin(rng: np.random.Generator, img_size: int, patch: int) -> tuple[int, int]:
    r = int(rng.integers(0, img_size - patch + 1))
    c = int(rng.integers(0, img_size - patch + 1))
    return r, c


def sample_patch_batch(
    corpus: HybridCorpus,
    batch_size: int,
    patch_size: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Draw one training batch of aligned (x0, y) patches.

    Composition follows the corpus config exactly; bone slots re-draw crops
    (and, past 100 tries, slices) until at least 10% of the patch is inside
    the bone mask.
    """
    img_size = corpus.pairs[0].x0.shape[0]
    if patch_size > img_size:
        raise ValueError(f"patch size {patch_size} exceeds image size {img_size}")
    n_sim, n_bone = corpus.cfg.batch_composition(batch_size)
    if n_sim > 0 and not corpus.sim_indices:
        raise ValueError("corpus holds no sim pairs but the batch recipe needs them")
    if n_bone > 0 and not corpus.bone_indices:
        raise ValueError("corpus holds no bone pairs but the batch recipe needs them")

    x0s, ys, sources = [], [], []
    for _ in range(n_sim):
        p = corpus.pairs[corpus.sim_indices[int(rng.integers(0, len(corpus.sim_indices)))]]
        r, c = _random_crop_origin(rng, img_size, patch_size)
        x0s.append(p.x0[r : r + patch_size, c : c + patch_size])
        ys.append(p.y[r : r + patch_size, c : c + patch_size])
        sources.append("sim")
    for _ in range(n_bone):
        found = False
        for _slice_try in range(50):  # resample the slice if 100 crops all miss
            p = corpus.pairs[corpus.bone_indices[int(rng.integers(0, len(corpus.bone_indices)))]]
            for _try in range(100):
                r, c = _random_crop_origin(rng, img_size, patch_size)
                frac = p.bone_mask[r : r + patch_size, c : c + patch_size].mean()
                if frac >= MIN_BONE_PATCH_FRACTION:
                    found = True
                    break
            if found:
                break
        if not found:
            raise RuntimeError(
                "no bone patch with >= "
                f"{MIN_BONE_PATCH_FRACTION:.0%} in-mask pixels found after 50 slice resamples"
            )
        x0s.append(p.x0[r : r + patch_size, c : c + patch_size])
        ys.append(p.y[r : r + patch_size, c : c + patch_size])
        sources.append("bone")
    return np.stack(x0s), np.stack(ys), sources
