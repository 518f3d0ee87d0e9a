"""Training and inference orchestration plus the three-arm ablation harness.

The three arms share every byte of configuration except the corpus recipe:

* proposed  - noise-matched simulation pairs plus segmented bone pairs,
              bone-composited inference
* m1        - noise-matched simulation pairs only, plain inference
* m2        - noise-unmatched simulation pairs plus bone pairs (the LR chain
              is calibrated, the HR chain reuses the LR noise scale and so
              comes out noisier), bone-composited inference
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import ctsim, dataset, diffusion, metrics, phantoms
from .containers import config_hash
from .ctsim import NoiseInjectionParams, ReconSettings
from .dataset import HybridCorpus, HybridDatasetConfig, SimulatedPair, TrainingPair
from .diffusion import DiffusionSchedule
from .metrics import FeatureStandardizer, HaralickConfig, ROISpec
from .phantoms import HeadFamilyConfig, Image2D, TextureParams
from .predictor import Checkpoint, ConditionalUNet, UNetConfig, load_checkpoint, save_checkpoint

ARM_NAMES = ("proposed", "m1", "m2")
ARM_RECIPES = {
    "proposed": {"sim": "matched", "bone": True},
    "m1": {"sim": "matched", "bone": False},
    "m2": {"sim": "unmatched", "bone": True},
}


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 20_000  # paper-scale runs use 100k
    batch_size: int = 16  # paper-scale runs use 64
    learning_rate: float = 8e-5
    patch_size: int = 64
    seed: int = 0
    checkpoint_every: int = 5_000

    def __post_init__(self):
        if self.iterations < 1 or self.batch_size < 1:
            raise ValueError("iterations and batch size must be positive")


@dataclass(frozen=True)
class AblationArm:
    name: str

    def __post_init__(self):
        if self.name not in ARM_NAMES:
            raise ValueError(f"unknown arm {self.name!r}; expected one of {ARM_NAMES}")

    @property
    def recipe(self) -> dict:
        return ARM_RECIPES[self.name]


@dataclass
class TrainResult:
    loss_log: list[float]
    checkpoint_path: Path | None
    model: ConditionalUNet


def train(
    cfg: TrainConfig,
    corpus: HybridCorpus,
    model: ConditionalUNet,
    schedule: DiffusionSchedule,
    out_path: str | Path | None = None,
    log_every: int = 100,
    quiet: bool = True,
) -> TrainResult:
    """Minimize the noise-matching objective with Adam.

    Batches mix sim and bone patches per the corpus config; the step index is
    drawn uniformly from 1..T and the injected noise is standard normal.
    Deterministic given the seed (up to floating-point reduction order).
    """
    batch_rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.999), eps=1e-8)
    model.train()

    loss_log: list[float] = []
    saved = None
    t0 = time.time()
    for it in range(cfg.iterations):
        x0_np, y_np, sources = dataset.sample_patch_batch(
            corpus, cfg.batch_size, cfg.patch_size, batch_rng
        )
        x0 = torch.from_numpy(x0_np).float()
        y = torch.from_numpy(y_np).float()
        t = torch.randint(1, schedule.T + 1, (cfg.batch_size,), generator=gen)
        eps = torch.randn(x0.shape, generator=gen)
        loss = diffusion.training_loss(model, x0, y, t, eps, schedule)
        if not torch.isfinite(loss):
            raise RuntimeError(
                f"non-finite training loss at iteration {it} "
                f"(seed {cfg.seed}, batch sources {sources})"
            )
        opt.zero_grad()
        loss.backward()
        opt.step()
        loss_log.append(float(loss.detach()))
        if not quiet and (it + 1) % log_every == 0:
            rate = (it + 1) / (time.time() - t0)
            print(f"  iter {it + 1}/{cfg.iterations} loss {np.mean(loss_log[-log_every:]):.4f} ({rate:.1f} it/s)")
        if out_path is not None and (it + 1) % cfg.checkpoint_every == 0:
            saved = _save(out_path, model, schedule, corpus, cfg, it + 1, loss_log)
    if out_path is not None:
        saved = _save(out_path, model, schedule, corpus, cfg, cfg.iterations, loss_log)
    model.eval()
    return TrainResult(loss_log, saved, model)


def _save(out_path, model, schedule, corpus, cfg, iteration, loss_log) -> Path:
    out_path = Path(out_path)
    save_checkpoint(
        out_path,
        model,
        schedule,
        corpus_hash=corpus.content_hash(),
        window_hu=corpus.cfg.window_hu,
        train_meta={
            "iteration": iteration,
            "seed": cfg.seed,
            "learning_rate": cfg.learning_rate,
            "batch_size": cfg.batch_size,
            "patch_size": cfg.patch_size,
            "final_loss_mean50": float(np.mean(loss_log[-50:])),
        },
    )
    return out_path


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


def _pad_to_divisor(arr: np.ndarray, div: int) -> tuple[np.ndarray, tuple[int, int]]:
    n = arr.shape[0]
    target = int(math.ceil(n / div)) * div
    pad = target - n
    if pad == 0:
        return arr, (0, 0)
    before, after = pad // 2, pad - pad // 2
    return np.pad(arr, ((before, after), (before, after)), mode="symmetric"), (before, after)


def sample_conditioned(
    y_norm: np.ndarray,
    ckpt: Checkpoint,
    seed: int,
    model: ConditionalUNet | None = None,
) -> np.ndarray:
    """Run the reverse chain on a normalized condition; returns model space."""
    model = model if model is not None else ckpt.build_model()
    div = ckpt.config.divisor
    padded, (before, after) = _pad_to_divisor(np.asarray(y_norm, dtype=np.float32), div)
    y = torch.from_numpy(padded)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        x0 = diffusion.sample(y, model, ckpt.schedule, gen, clamp_x0=True)
    out = x0.numpy()
    if before or after:
        out = out[before : out.shape[0] - after, before : out.shape[1] - after]
    return out


def super_resolve(
    lr_image: Image2D,
    ckpt: Checkpoint,
    seed: int = 0,
    model: ConditionalUNet | None = None,
) -> Image2D:
    """Upsample the LR input, run the reverse chain on the full image, return HU."""
    y_img = dataset.sinc_upsample(lr_image, 2)
    y_norm = dataset.normalize_hu(y_img.data, ckpt.window_hu)
    out_norm = sample_conditioned(y_norm, ckpt, seed, model)
    out = dataset.denormalize_hu(out_norm, ckpt.window_hu)
    meta = {"seed": seed, "padded": y_img.size % ckpt.config.divisor != 0}
    return Image2D(out, y_img.pixel_spacing, meta)


def composite_bone(sr_full: Image2D, sr_bone: Image2D, mask: dataset.BoneMask) -> Image2D:
    """Replace in-mask pixels of the full SR image with the bone-only SR."""
    if sr_full.data.shape != sr_bone.data.shape or sr_full.data.shape != mask.mask.shape:
        raise ValueError("composite inputs must share a grid")
    out = np.where(mask.mask, sr_bone.data, sr_full.data)
    return Image2D(out, sr_full.pixel_spacing, dict(sr_full.meta))


def upsample_mask_nearest(mask: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbor mask upsampling for masks segmented on the LR grid."""
    return np.repeat(np.repeat(mask, factor, axis=0), factor, axis=1)


def apply_arm(
    arm: AblationArm,
    lr_image: Image2D,
    ckpt: Checkpoint,
    seed: int,
    test_threshold_hu: float = 250.0,
    model: ConditionalUNet | None = None,
) -> Image2D:
    """Arm-specific inference: plain SR, plus bone-composited SR where the recipe asks.

    The test-time bone mask comes from the upsampled LR input (no HR exists at
    inference); the bone-only pass conditions on the masked LR with blanked
    background, mirroring how bone pairs look in training.
    """
    model = model if model is not None else ckpt.build_model()
    sr_full = super_resolve(lr_image, ckpt, seed, model)
    if not arm.recipe["bone"]:
        return sr_full
    y_img = dataset.sinc_upsample(lr_image, 2)
    mask = dataset.segment_bone(y_img, test_threshold_hu)
    if not mask.mask.any():
        return sr_full
    y_bone = Image2D(
        np.where(mask.mask, y_img.data, dataset.BACKGROUND_HU), y_img.pixel_spacing
    )
    y_bone_norm = dataset.normalize_hu(y_bone.data, ckpt.window_hu)
    sr_bone_norm = sample_conditioned(y_bone_norm, ckpt, seed + 104729, model)
    sr_bone = Image2D(
        dataset.denormalize_hu(sr_bone_norm, ckpt.window_hu), y_img.pixel_spacing
    )
    return composite_bone(sr_full, sr_bone, mask)


# ---------------------------------------------------------------------------
# Experiment profile: everything the desk-scale reproduction needs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentProfile:
    hr_size: int = 128
    hr_spacing: float = 0.3
    lr_size: int = 64
    lr_spacing: float = 0.6
    n_angles: int = 180
    n_detectors: int = 256
    detector_spacing: float | None = None  # None: derived to cover the FOV diagonal
    n0_hr: float = 1.0e4
    n0_lr: float = 4.0e4
    bin_factor: int = 2
    kernel: str = "bone"
    target_noise_hu: float = 25.0
    texture: TextureParams = field(default_factory=TextureParams)
    n_sim: int = 32
    n_real_train: int = 16
    n_test: int = 8
    bone_threshold_hu: float = 300.0
    test_threshold_hu: float = 250.0
    window_hu: tuple[float, float] = (-1000.0, 2000.0)
    T: int = 100
    tau: float = 3.0
    unet: UNetConfig = field(default_factory=UNetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def geometry(self) -> ctsim.ScanGeometry:
        fov = self.hr_size * self.hr_spacing
        if self.detector_spacing is not None:
            return ctsim.ScanGeometry(self.n_angles, self.n_detectors, self.detector_spacing, fov)
        return ctsim.default_geometry(fov, self.n_angles, self.n_detectors)

    def recon(self) -> ReconSettings:
        return ReconSettings(self.kernel, self.hr_size, self.hr_spacing, self.lr_size, self.lr_spacing)

    def schedule(self) -> DiffusionSchedule:
        return diffusion.make_schedule(self.T, "sigmoid", tau=self.tau)

    def family(self, with_texture: bool) -> HeadFamilyConfig:
        return HeadFamilyConfig(self.hr_size, self.hr_spacing, with_texture, self.texture)

    def uniform_roi(self) -> ROISpec:
        return ROISpec.from_dict(phantoms.family_uniform_roi(self.family(False)))

    def textured_roi(self) -> ROISpec:
        return ROISpec.from_dict(phantoms.family_textured_roi(self.family(False)))

    def to_dict(self) -> dict:
        d = {
            k: getattr(self, k)
            for k in (
                "hr_size", "hr_spacing", "lr_size", "lr_spacing", "n_angles", "n_detectors",
                "detector_spacing", "n0_hr", "n0_lr", "bin_factor", "kernel",
                "target_noise_hu", "n_sim", "n_real_train", "n_test", "bone_threshold_hu",
                "test_threshold_hu", "T", "tau", "seed",
            )
        }
        d["window_hu"] = list(self.window_hu)
        d["texture"] = {
            "correlation_length_mm": self.texture.correlation_length_mm,
            "amplitude_hu": self.texture.amplitude_hu,
            "fill_fraction": self.texture.fill_fraction,
        }
        d["unet"] = self.unet.to_dict()
        d["train"] = {
            "iterations": self.train.iterations,
            "batch_size": self.train.batch_size,
            "learning_rate": self.train.learning_rate,
            "patch_size": self.train.patch_size,
            "seed": self.train.seed,
            "checkpoint_every": self.train.checkpoint_every,
        }
        return d


@dataclass
class TestRecord:
    """One held-out slice: LR input, HR reference, index."""

    index: int
    hr: Image2D
    lr: Image2D
    lr_upsampled: Image2D


@dataclass
class ExperimentData:
    k_hr: float
    k_lr: float
    matched: list[SimulatedPair]
    unmatched: list[SimulatedPair]
    real_like: list[SimulatedPair]
    tests: list[TestRecord]


def calibrate_profile(profile: ExperimentProfile, n_realizations: int = 6) -> tuple[float, float]:
    """Calibrated (k_hr, k_lr) for the profile's target image-domain noise."""
    phantom = phantoms.calibration_phantom(profile.hr_size, profile.hr_spacing)
    roi = ROISpec.from_dict(phantoms.calibration_roi(profile.hr_size, profile.hr_spacing))
    base = NoiseInjectionParams(1.0, 1.0, profile.n0_hr, profile.n0_lr, profile.bin_factor)
    return dataset.calibrate_noise_levels(
        [phantom],
        profile.geometry(),
        base,
        profile.recon(),
        profile.target_noise_hu,
        roi,
        n_realizations=n_realizations,
        seed=profile.seed + 31,
    )


def build_experiment_data(
    profile: ExperimentProfile,
    quiet: bool = True,
    ks: tuple[float, float] | None = None,
) -> ExperimentData:
    """Simulate every corpus the three arms need, sharing noiseless sinograms.

    Matched pairs use the calibrated (k_hr, k_lr). Unmatched pairs reuse the
    calibrated LR scale on both chains, so their HR member carries the
    uncalibrated, physically higher reconstruction noise. Real-like pairs
    (bone source and held-out test slices) inject noise into the LR chain
    only. Pass ``ks`` to pin the noise scales and skip calibration.
    """
    k_hr, k_lr = ks if ks is not None else calibrate_profile(profile)
    geom = profile.geometry()
    recon = profile.recon()
    if not quiet:
        print(f"  calibrated k_hr={k_hr:.4f} k_lr={k_lr:.4f}")

    def pairs_for(seeds, family_cfg, params, rng_base) -> list[SimulatedPair]:
        out = []
        for i, s in enumerate(seeds):
            ph = phantoms.make_head_phantom(s, family_cfg)
            rng = np.random.default_rng(rng_base + i)
            out.append(dataset.simulate_pair(ph, geom, params, recon, rng))
        return out

    matched_params = NoiseInjectionParams(k_hr, k_lr, profile.n0_hr, profile.n0_lr, profile.bin_factor)
    unmatched_params = NoiseInjectionParams(k_lr, k_lr, profile.n0_hr, profile.n0_lr, profile.bin_factor)
    real_params = NoiseInjectionParams(0.0, k_lr, profile.n0_hr, profile.n0_lr, profile.bin_factor)

    s0 = profile.seed
    sim_seeds = [s0 + 1000 + i for i in range(profile.n_sim)]
    real_seeds = [s0 + 5000 + i for i in range(profile.n_real_train)]
    test_seeds = [s0 + 9000 + i for i in range(profile.n_test)]

    plain = profile.family(with_texture=False)
    textured = profile.family(with_texture=True)

    matched = pairs_for(sim_seeds, plain, matched_params, s0 + 100_000)
    unmatched = pairs_for(sim_seeds, plain, unmatched_params, s0 + 200_000)
    real_like = pairs_for(real_seeds, textured, real_params, s0 + 300_000)
    test_pairs = pairs_for(test_seeds, textured, real_params, s0 + 400_000)
    tests = [
        TestRecord(i, hr=p.hr, lr=p.lr, lr_upsampled=p.lr_upsampled)
        for i, p in enumerate(test_pairs)
    ]
    return ExperimentData(k_hr, k_lr, matched, unmatched, real_like, tests)


def corpus_for_arm(arm: AblationArm, data: ExperimentData, profile: ExperimentProfile) -> HybridCorpus:
    sim_pairs = data.matched if arm.recipe["sim"] == "matched" else data.unmatched
    if arm.recipe["bone"]:
        cfg = HybridDatasetConfig(
            sim_fraction=48.0 / 64.0,
            bone_fraction=16.0 / 64.0,
            patch_size=profile.train.patch_size,
            window_hu=profile.window_hu,
            rng_seed=profile.seed,
        )
        return dataset.build_hybrid_corpus(
            sim_pairs, data.real_like, cfg, profile.bone_threshold_hu
        )
    cfg = HybridDatasetConfig(
        sim_fraction=1.0,
        bone_fraction=0.0,
        patch_size=profile.train.patch_size,
        window_hu=profile.window_hu,
        rng_seed=profile.seed,
    )
    return dataset.build_hybrid_corpus(sim_pairs, [], cfg, profile.bone_threshold_hu)


def arm_isolation_hash(profile: ExperimentProfile) -> str:
    """Hash of everything the arms share; recipes are the only difference."""
    return config_hash(profile.to_dict())


def train_arm(
    arm: AblationArm,
    data: ExperimentData,
    profile: ExperimentProfile,
    out_path: str | Path | None = None,
    quiet: bool = True,
) -> tuple[Checkpoint, TrainResult]:
    corpus = corpus_for_arm(arm, data, profile)
    torch.manual_seed(profile.train.seed)
    model = ConditionalUNet(profile.unet)
    schedule = profile.schedule()
    result = train(profile.train, corpus, model, schedule, out_path, quiet=quiet)
    blob, layout = model.flat_params()
    ckpt = Checkpoint(
        config=profile.unet,
        schedule=schedule,
        corpus_hash=corpus.content_hash(),
        window_hu=profile.window_hu,
        blob=blob,
        layout=layout,
        train_meta={"arm": arm.name},
    )
    return ckpt, result


# ---------------------------------------------------------------------------
# Ablation evaluation and report
# ---------------------------------------------------------------------------

METHOD_ROWS = ("hr", "lr", "proposed", "m1", "m2")


@dataclass
class AblationReport:
    rows: list[dict]  # long format: case, method, metric, roi, value
    summary: dict  # method -> metric -> median value
    standardizer: dict
    profile: dict

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=["case", "method", "metric", "roi", "value"])
            w.writeheader()
            for row in self.rows:
                w.writerow(row)

    def save(self, out_dir: str | Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        self.to_csv(out_dir / "ablation_detail.csv")
        with open(out_dir / "ablation_summary.csv", "w", newline="") as f:
            metrics_cols = sorted({m for v in self.summary.values() for m in v})
            w = csv.writer(f)
            w.writerow(["method"] + metrics_cols)
            for method in METHOD_ROWS:
                vals = self.summary.get(method, {})
                w.writerow([method] + [f"{vals[m]:.4f}" if m in vals else "n/a" for m in metrics_cols])
        (out_dir / "report_meta.json").write_text(
            json.dumps({"standardizer": self.standardizer, "profile": self.profile}, indent=1)
        )


def evaluate_outputs(
    outputs: dict[str, list[Image2D]],
    tests: list[TestRecord],
    uniform_roi: ROISpec,
    textured_roi: ROISpec,
    haralick_cfg: HaralickConfig | None = None,
    profile_dict: dict | None = None,
) -> AblationReport:
    """Score every method row against the HR references.

    Haralick features are standardized with statistics fitted on the full
    evaluation set (all methods, all slices), then distances to the HR
    reference are Euclidean in that space.
    """
    hcfg = haralick_cfg or HaralickConfig()
    methods = {"hr": [t.hr for t in tests], "lr": [t.lr_upsampled for t in tests], **outputs}

    feats: dict[tuple[str, int], np.ndarray] = {}
    for name, imgs in methods.items():
        for i, img in enumerate(imgs):
            feats[(name, i)] = metrics.haralick_features(img, textured_roi, hcfg)
    standardizer = FeatureStandardizer(list(feats.values()))

    rows = []
    per_method: dict[str, dict[str, list[float]]] = {m: {} for m in methods}

    def add(method, case, metric, roi, value):
        rows.append({"case": case, "method": method, "metric": metric, "roi": roi, "value": value})
        per_method[method].setdefault(metric, []).append(value)

    for name, imgs in methods.items():
        for i, img in enumerate(imgs):
            add(name, i, "std_hu", "uniform", metrics.roi_std(img, uniform_roi))
            if name != "hr":
                d = float(
                    np.linalg.norm(
                        standardizer.transform(feats[(name, i)])
                        - standardizer.transform(feats[("hr", i)])
                    )
                )
                add(name, i, "haralick_distance", "textured", d)
                add(name, i, "psnr_db", "full", metrics.psnr(img, tests[i].hr))

    summary = {
        m: {metric: float(np.median(vals)) for metric, vals in d.items()}
        for m, d in per_method.items()
    }
    return AblationReport(rows, summary, standardizer.to_dict(), profile_dict or {})


def run_ablation(
    arms: list[AblationArm],
    checkpoints: dict[str, Checkpoint],
    tests: list[TestRecord],
    profile: ExperimentProfile,
    quiet: bool = True,
) -> AblationReport:
    """Inference on every held-out slice for every arm, then scoring."""
    for arm in arms:
        if arm.name not in checkpoints:
            raise ValueError(f"missing checkpoint for arm {arm.name!r}")
    outputs: dict[str, list[Image2D]] = {}
    for arm in arms:
        ckpt = checkpoints[arm.name]
        model = ckpt.build_model()
        outs = []
        for rec in tests:
            seed = profile.seed + 17 * rec.index + 3
            outs.append(
                apply_arm(arm, rec.lr, ckpt, seed, profile.test_threshold_hu, model)
            )
            if not quiet:
                print(f"  {arm.name}: slice {rec.index} done")
        outputs[arm.name] = outs
    return evaluate_outputs(
        outputs,
        tests,
        profile.uniform_roi(),
        profile.textured_roi(),
        HaralickConfig(window_hu=profile.window_hu),
        profile.to_dict(),
    )


TREND_CHECKS = (
    ("std_proposed_vs_lr", "STD(proposed) <= 1.15 x STD(LR)"),
    ("std_m2_vs_lr", "STD(m2) >= 1.20 x STD(LR)"),
    ("haralick_proposed_vs_m1", "Haralick distance: proposed < m1"),
    ("psnr_proposed_vs_m1", "PSNR(proposed) >= PSNR(m1) + 1 dB"),
)


def check_trends(report: AblationReport) -> list[dict]:
    """Desk-scale counterparts of the published orderings, on medians."""
    s = report.summary
    results = [
        {
            "name": "std_proposed_vs_lr",
            "passed": s["proposed"]["std_hu"] <= 1.15 * s["lr"]["std_hu"],
            "detail": f"{s['proposed']['std_hu']:.2f} vs 1.15 x {s['lr']['std_hu']:.2f}",
        },
        {
            "name": "std_m2_vs_lr",
            "passed": s["m2"]["std_hu"] >= 1.20 * s["lr"]["std_hu"],
            "detail": f"{s['m2']['std_hu']:.2f} vs 1.20 x {s['lr']['std_hu']:.2f}",
        },
        {
            "name": "haralick_proposed_vs_m1",
            "passed": s["proposed"]["haralick_distance"] < s["m1"]["haralick_distance"],
            "detail": f"{s['proposed']['haralick_distance']:.3f} vs {s['m1']['haralick_distance']:.3f}",
        },
        {
            "name": "psnr_proposed_vs_m1",
            "passed": s["proposed"]["psnr_db"] >= s["m1"]["psnr_db"] + 1.0,
            "detail": f"{s['proposed']['psnr_db']:.2f} vs {s['m1']['psnr_db']:.2f} + 1",
        },
    ]
    return results


def render_figure(
    outputs: dict[str, list[Image2D]],
    tests: list[TestRecord],
    path: str | Path,
    max_slices: int = 3,
) -> None:
    """Comparison panel (HR / LR / arms as columns, slices as rows), PNG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cols = ["hr", "lr"] + [m for m in METHOD_ROWS[2:] if m in outputs]
    n_rows = min(max_slices, len(tests))
    fig, axes = plt.subplots(n_rows, len(cols), figsize=(2.2 * len(cols), 2.2 * n_rows))
    axes = np.atleast_2d(axes)
    for r in range(n_rows):
        imgs = {"hr": tests[r].hr, "lr": tests[r].lr_upsampled, **{m: outputs[m][r] for m in outputs}}
        for c, name in enumerate(cols):
            ax = axes[r, c]
            ax.imshow(imgs[name].data, cmap="gray", vmin=-1000, vmax=2000)
            ax.set_axis_off()
            if r == 0:
                ax.set_title(name.upper() if name in ("hr", "lr") else name)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=130)
    plt.close(fig)
