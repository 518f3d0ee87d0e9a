"""Command-line entry point.

Subcommands cover the full workflow: simulate, build-dataset, train, infer,
evaluate, and the end-to-end reproduce. One JSON or TOML config file drives
everything; each run drops a resolved-config snapshot and stage markers next
to its outputs so interrupted runs can be resumed.

Exit codes: 0 success, 1 config error, 2 runtime failure, 3 trend-check
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import containers, ctsim, dataset, phantoms, pipeline
from .ctsim import NoiseInjectionParams
from .phantoms import TextureParams
from .pipeline import AblationArm, ExperimentProfile, TrainConfig
from .predictor import UNetConfig, load_checkpoint


class ConfigError(ValueError):
    pass


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    text = p.read_text()
    if p.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib

        return tomllib.loads(text)
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"could not parse {p}: {e}") from e


def profile_from_config(cfg: dict) -> ExperimentProfile:
    try:
        kwargs = {
            k: cfg[k]
            for k in (
                "hr_size", "hr_spacing", "lr_size", "lr_spacing", "n_angles", "n_detectors",
                "detector_spacing", "n0_hr", "n0_lr", "bin_factor", "kernel", "target_noise_hu", "n_sim",
                "n_real_train", "n_test", "bone_threshold_hu", "test_threshold_hu", "T",
                "tau", "seed",
            )
            if k in cfg
        }
        if "window_hu" in cfg:
            kwargs["window_hu"] = tuple(cfg["window_hu"])
        if "texture" in cfg:
            kwargs["texture"] = TextureParams(**cfg["texture"])
        if "unet" in cfg:
            kwargs["unet"] = UNetConfig.from_dict({**UNetConfig().to_dict(), **cfg["unet"]})
        if "train" in cfg:
            defaults = pipeline.ExperimentProfile().to_dict()["train"]
            kwargs["train"] = TrainConfig(**{**defaults, **cfg["train"]})
        return ExperimentProfile(**kwargs)
    except (TypeError, ValueError, KeyError) as e:
        raise ConfigError(f"invalid configuration: {e}") from e


def _out_dir(arg: str) -> Path:
    root = os.environ.get("CTSR_OUTPUT_ROOT", ".")
    p = Path(arg)
    out = p if p.is_absolute() else Path(root) / p
    out.mkdir(parents=True, exist_ok=True)
    return out


def _snapshot(out: Path, profile: ExperimentProfile, extra: dict | None = None) -> str:
    resolved = {"profile": profile.to_dict(), **(extra or {})}
    (out / "resolved_config.json").write_text(json.dumps(resolved, indent=1, sort_keys=True))
    return containers.config_hash(resolved)


def _stage_done(out: Path, stage: str, tag: str) -> bool:
    marker = out / f"{stage}.done"
    return marker.exists() and marker.read_text().strip() == tag


def _mark_stage(out: Path, stage: str, tag: str) -> None:
    (out / f"{stage}.done").write_text(tag)


# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    profile = profile_from_config(cfg)
    out = _out_dir(args.out)
    if args.seed is not None:
        profile = profile_from_config({**cfg, "seed": args.seed})
    tag = _snapshot(out, profile, {"command": "simulate", "noise": not args.noise_off})
    if args.resume and _stage_done(out, "simulate", tag):
        print(f"simulate: outputs in {out} are current, skipping")
        return 0

    if args.noise_off:
        k_hr = k_lr = 0.0
    elif "k_hr" in cfg and "k_lr" in cfg:
        k_hr, k_lr = float(cfg["k_hr"]), float(cfg["k_lr"])
    else:
        print("calibrating noise scales ...")
        k_hr, k_lr = pipeline.calibrate_profile(profile)
    geom = profile.geometry()
    recon = profile.recon()
    params = NoiseInjectionParams(k_hr, k_lr, profile.n0_hr, profile.n0_lr, profile.bin_factor)

    n = int(cfg.get("simulate_count", 2))
    family = profile.family(with_texture=bool(cfg.get("simulate_textured", True)))
    manifest = {"k_hr": k_hr, "k_lr": k_lr, "phantoms": []}
    for i in range(n):
        seed = profile.seed + i
        ph = phantoms.make_head_phantom(seed, family)
        sino_hr = ctsim.project_image(ph, geom)
        sino_lr = ctsim.rebin_sinogram(sino_hr, profile.bin_factor)
        rng = np.random.default_rng(seed + 12345)
        noisy_hr, noisy_lr = ctsim.inject_correlated_noise(sino_hr, sino_lr, params, rng)
        rec_hr = ctsim.reconstruct_fbp(noisy_hr, recon.kernel, recon.hr_size, recon.hr_spacing)
        rec_lr = ctsim.reconstruct_fbp(noisy_lr, recon.kernel, recon.lr_size, recon.lr_spacing)
        stem = f"phantom_{seed:05d}"
        artifacts = {
            f"{stem}_sino_hr_clean": (containers.save_sinogram, sino_hr),
            f"{stem}_sino_lr_clean": (containers.save_sinogram, sino_lr),
            f"{stem}_sino_hr_noisy": (containers.save_sinogram, noisy_hr),
            f"{stem}_sino_lr_noisy": (containers.save_sinogram, noisy_lr),
            f"{stem}_recon_hr": (containers.save_image, rec_hr),
            f"{stem}_recon_lr": (containers.save_image, rec_lr),
        }
        for name, (saver, obj) in artifacts.items():
            saver(out / name, obj)
        manifest["phantoms"].append({"seed": seed, "artifacts": sorted(artifacts)})
        print(f"simulated phantom seed={seed} -> 6 artifacts")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    _mark_stage(out, "simulate", tag)
    return 0


def cmd_build_dataset(args) -> int:
    cfg = load_config(args.config)
    profile = profile_from_config(cfg)
    out = _out_dir(args.out)
    tag = _snapshot(out, profile, {"command": "build-dataset"})
    if args.resume and _stage_done(out, "dataset", tag):
        print(f"build-dataset: outputs in {out} are current, skipping")
        return 0
    print("building experiment corpora (simulation + calibration) ...")
    ks = (float(cfg["k_hr"]), float(cfg["k_lr"])) if "k_hr" in cfg and "k_lr" in cfg else None
    data = pipeline.build_experiment_data(profile, quiet=False, ks=ks)
    for arm in pipeline.ARM_NAMES:
        corpus = pipeline.corpus_for_arm(AblationArm(arm), data, profile)
        corpus.save(out / f"corpus_{arm}")
        print(f"  corpus for {arm}: {len(corpus)} pairs")
    tests_dir = out / "tests"
    for rec in data.tests:
        containers.save_image(tests_dir / f"test_{rec.index:03d}_hr", rec.hr)
        containers.save_image(tests_dir / f"test_{rec.index:03d}_lr", rec.lr)
    (out / "calibration.json").write_text(json.dumps({"k_hr": data.k_hr, "k_lr": data.k_lr}))
    _mark_stage(out, "dataset", tag)
    print(f"dataset written to {out}")
    return 0


def _load_tests(data_dir: Path, profile: ExperimentProfile) -> list[pipeline.TestRecord]:
    tests = []
    tests_dir = data_dir / "tests"
    for i in range(profile.n_test):
        hr = containers.load_image(tests_dir / f"test_{i:03d}_hr")
        lr = containers.load_image(tests_dir / f"test_{i:03d}_lr")
        tests.append(pipeline.TestRecord(i, hr, lr, dataset.sinc_upsample(lr, 2)))
    return tests


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    profile = profile_from_config(cfg)
    arm = AblationArm(args.arm)
    data_dir = _out_dir(args.data)
    corpus = dataset.HybridCorpus.load(data_dir / f"corpus_{arm.name}")
    out = _out_dir(args.out)
    ckpt_path = out / f"checkpoint_{arm.name}.ctsr"
    import torch

    torch.manual_seed(profile.train.seed)
    from .predictor import ConditionalUNet

    model = ConditionalUNet(profile.unet)
    print(f"training arm {arm.name}: {profile.train.iterations} iterations ...")
    result = pipeline.train(profile.train, corpus, model, profile.schedule(), ckpt_path, quiet=False)
    print(f"final loss (mean of last 50): {np.mean(result.loss_log[-50:]):.4f}")
    print(f"checkpoint: {ckpt_path}")
    return 0


def cmd_infer(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    lr = containers.load_image(args.input)
    arm = AblationArm(args.arm) if args.arm else None
    if arm is None:
        sr = pipeline.super_resolve(lr, ckpt, seed=args.seed)
    else:
        sr = pipeline.apply_arm(arm, lr, ckpt, seed=args.seed)
    containers.save_image(args.out, sr)
    print(f"super-resolved {args.input} -> {args.out} ({sr.size}x{sr.size})")
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    profile = profile_from_config(cfg)
    data_dir = _out_dir(args.data)
    out = _out_dir(args.out)
    arms = [AblationArm(n) for n in pipeline.ARM_NAMES]
    checkpoints = {}
    for arm in arms:
        path = Path(args.checkpoints) / f"checkpoint_{arm.name}.ctsr"
        if not path.exists():
            print(f"error: missing checkpoint for arm {arm.name!r}: {path}", file=sys.stderr)
            return 2
        checkpoints[arm.name] = load_checkpoint(path)
    tests = _load_tests(data_dir, profile)
    report = pipeline.run_ablation(arms, checkpoints, tests, profile, quiet=False)
    report.save(out)
    outputs = {}  # re-render panel from stored rows is lossy; regenerate lightweight
    print(f"report written to {out}")
    return _print_trends(report)


def _print_trends(report: pipeline.AblationReport) -> int:
    results = pipeline.check_trends(report)
    all_ok = True
    for r in results:
        status = "PASS" if r["passed"] else "FAIL"
        print(f"[{status}] {r['name']}: {r['detail']}")
        all_ok &= r["passed"]
    return 0 if all_ok else 3


def cmd_reproduce(args) -> int:
    cfg = load_config(args.config)
    profile = profile_from_config(cfg)
    out = _out_dir(args.out)
    tag = _snapshot(out, profile, {"command": "reproduce"})

    # stage 1: corpora and held-out tests
    if args.resume and _stage_done(out, "dataset", tag):
        print("stage dataset: current, skipping")
        data = None
    else:
        print("stage dataset: simulating corpora ...")
        ks = (float(cfg["k_hr"]), float(cfg["k_lr"])) if "k_hr" in cfg and "k_lr" in cfg else None
        data = pipeline.build_experiment_data(profile, quiet=False, ks=ks)
        for arm_name in pipeline.ARM_NAMES:
            pipeline.corpus_for_arm(AblationArm(arm_name), data, profile).save(
                out / f"corpus_{arm_name}"
            )
        tests_dir = out / "tests"
        for rec in data.tests:
            containers.save_image(tests_dir / f"test_{rec.index:03d}_hr", rec.hr)
            containers.save_image(tests_dir / f"test_{rec.index:03d}_lr", rec.lr)
        (out / "calibration.json").write_text(json.dumps({"k_hr": data.k_hr, "k_lr": data.k_lr}))
        _mark_stage(out, "dataset", tag)

    # stage 2: one training run per arm
    import torch

    from .predictor import ConditionalUNet

    schedule = profile.schedule()
    checkpoints = {}
    for arm_name in pipeline.ARM_NAMES:
        ckpt_path = out / f"checkpoint_{arm_name}.ctsr"
        stage = f"train_{arm_name}"
        if args.resume and _stage_done(out, stage, tag) and ckpt_path.exists():
            print(f"stage {stage}: current, skipping")
            checkpoints[arm_name] = load_checkpoint(ckpt_path)
            continue
        print(f"stage {stage}: {profile.train.iterations} iterations ...")
        corpus = dataset.HybridCorpus.load(out / f"corpus_{arm_name}")
        torch.manual_seed(profile.train.seed)
        model = ConditionalUNet(profile.unet)
        pipeline.train(profile.train, corpus, model, schedule, ckpt_path, quiet=False)
        checkpoints[arm_name] = load_checkpoint(ckpt_path)
        _mark_stage(out, stage, tag)

    # stage 3: inference, metrics, report, figure
    print("stage evaluate: sampling all arms on held-out slices ...")
    tests = _load_tests(out, profile)
    arms = [AblationArm(n) for n in pipeline.ARM_NAMES]
    outputs = {}
    for arm in arms:
        ckpt = checkpoints[arm.name]
        model = ckpt.build_model()
        outputs[arm.name] = [
            pipeline.apply_arm(arm, rec.lr, ckpt, profile.seed + 17 * rec.index + 3,
                               profile.test_threshold_hu, model)
            for rec in tests
        ]
        print(f"  arm {arm.name}: {len(tests)} slices sampled")
    report = pipeline.evaluate_outputs(
        outputs, tests, profile.uniform_roi(), profile.textured_roi(),
        profile_dict=profile.to_dict(),
    )
    report.save(out)
    pipeline.render_figure(outputs, tests, out / "comparison_panel.png")
    print(f"report and figure written to {out}")
    return _print_trends(report)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ctsr", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="phantoms -> sinograms -> reconstructions")
    p.add_argument("-c", "--config", default=None)
    p.add_argument("--out", default="out/simulate")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--noise-off", action="store_true")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("build-dataset", help="build the three arm corpora and test slices")
    p.add_argument("-c", "--config", default=None)
    p.add_argument("--out", default="out/dataset")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", help="train one ablation arm")
    p.add_argument("-c", "--config", default=None)
    p.add_argument("--arm", required=True, choices=pipeline.ARM_NAMES)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="out/checkpoints")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="super-resolve one stored LR image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--arm", default=None, choices=pipeline.ARM_NAMES)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="score trained arms on the held-out slices")
    p.add_argument("-c", "--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--out", default="out/report")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("reproduce", help="end-to-end desk-scale reproduction")
    p.add_argument("-c", "--config", default=None)
    p.add_argument("--out", default="out/reproduce")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_reproduce)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
