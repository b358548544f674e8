"""Command-line entry point.

One binary with subcommands covering the whole desk-scale experiment:

    gen              procedural dataset with ground truth + manifest
    degrade          manufacture low-quality counterparts
    train-regressor  fit the restoration CNN
    train-diffusion  fit extractor (+codec) and the conditional denoiser
    restore          run the full guided restoration over a split
    evaluate         PSNR/SSIM report as CSV
    curate           four-phase curation over a directory of images
    sweep-s          calibrate the guidance scale

Every command takes --config FILE (JSON) plus flag overrides, accepts
--seed, writes its resolved config snapshot next to its outputs, and is
byte-deterministic given (config, inputs, seed). Exit codes: 0 ok,
2 config error, 3 missing/unusable artifact (including I/O failures),
4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import curation, degradation, diffusion, guidance, humanoid, metrics, models
from . import training
from .errors import ConfigError, MissingArtifactError, NumericError
from .imageio import load_image, save_image
from .rng import item_seed


def _manifest_records(path: str | Path, split: str | None = None) -> list[dict]:
    p = Path(path)
    if not p.is_file():
        raise MissingArtifactError(f"manifest not found: {p}")
    records = humanoid.load_manifest(p)
    if split:
        records = [r for r in records if r.get("split") == split]
    return records


def cmd_gen(cfg: dict) -> int:
    out = Path(cfg["out"])
    cfgmod.write_snapshot(out, "gen", cfg)
    humanoid.generate_dataset(cfg["n"], cfg["seed"], out,
                              test_fraction=cfg["test_fraction"])
    return 0


def cmd_degrade(cfg: dict) -> int:
    manifest = Path(cfg["manifest"])
    records = _manifest_records(manifest)
    out = Path(cfg["out"]) if cfg["out"] else manifest.parent
    (out / "images").mkdir(parents=True, exist_ok=True)
    cfgmod.write_snapshot(out, "degrade", cfg)
    spec = degradation.DegradationSpec(
        blur_sigma=cfg["blur_sigma"], down_factor=cfg["down_factor"],
        noise_sigma=cfg["noise_sigma"],
        jpeg_quality=cfg["jpeg_quality"] if cfg["jpeg_quality"] else None,
        order=cfg["order"])
    src_root = manifest.parent
    degraded_path = out / "manifest_degraded.jsonl"
    with open(degraded_path, "w") as fh:
        for i, rec in enumerate(records):
            hq = load_image(src_root / rec["image"])
            lq = degradation.degrade(hq, spec, item_seed(cfg["seed"], i))
            lq_rel = f"images/{rec['id']}_lq.png"
            save_image(out / lq_rel, lq)
            new_rec = dict(rec)
            for key in ("image", "pose", "attn", "parts"):
                if key in rec:
                    new_rec[key] = Path(
                        os.path.relpath(src_root / rec[key], out)).as_posix()
            new_rec["lq"] = lq_rel
            fh.write(json.dumps(new_rec, sort_keys=True) + "\n")
    return 0


def _train_config(cfg: dict) -> training.TrainConfig:
    return training.TrainConfig(
        learning_rate=cfg["learning_rate"], batch_size=cfg["batch_size"],
        iterations=cfg["iterations"], seed=cfg["seed"],
        checkpoint_interval=cfg["checkpoint_interval"], codec_mode=cfg["codec_mode"])


def cmd_train_regressor(cfg: dict) -> int:
    out = Path(cfg["out"])
    cfgmod.write_snapshot(out, "train-regressor", cfg)
    dataset = training.load_dataset(cfg["manifest"], split="train")
    training.train_regressor(_train_config(cfg), dataset, out_dir=out)
    return 0


def cmd_train_diffusion(cfg: dict) -> int:
    out = Path(cfg["out"])
    cfgmod.write_snapshot(out, "train-diffusion", cfg)
    dataset = training.load_dataset(cfg["manifest"], split="train")
    reg_params = models.load_checkpoint(cfg["regressor"])
    sched = diffusion.build_schedule(cfg["timesteps"], cfg["beta_start"],
                                     cfg["beta_end"], cfg["inference_steps"])
    training.train_diffusion(_train_config(cfg), dataset, reg_params,
                             out_dir=out, sched=sched)
    return 0


def _load_restore_params(cfg: dict) -> models.ModelParams:
    reg = models.load_checkpoint(cfg["regressor"])
    diff = models.load_checkpoint(cfg["diffusion"], expect_arch=reg.arch)
    return reg.merged_with(diff)


def cmd_restore(cfg: dict) -> int:
    out = Path(cfg["out"])
    cfgmod.write_snapshot(out, "restore", cfg)
    (out / "images").mkdir(parents=True, exist_ok=True)
    records = _manifest_records(cfg["manifest"], cfg["split"])
    if cfg["limit"]:
        records = records[:cfg["limit"]]
    params = _load_restore_params(cfg)
    sched = diffusion.build_schedule(cfg["timesteps"], cfg["beta_start"],
                                     cfg["beta_end"], cfg["inference_steps"])
    root = Path(cfg["manifest"]).parent
    bs = max(1, cfg["batch_size"])
    for start in range(0, len(records), bs):
        chunk = records[start:start + bs]
        imgs = np.stack([load_image(root / r["lq"]) for r in chunk])
        captions = [r.get("caption", "") for r in chunk]
        gcfg = guidance.GuidanceConfig(
            scale=cfg["scale"], mode=cfg["gradient_mode"],
            seed=item_seed(cfg["seed"], start), variant=cfg["variant"])
        restored, traces = guidance.guided_sample(imgs, captions, params, sched, gcfg)
        reg_imgs = models.regress_restore(imgs.astype(np.float32), params)
        for j, rec in enumerate(chunk):
            save_image(out / "images" / f"{rec['id']}_restored.png", restored[j])
            save_image(out / "images" / f"{rec['id']}_reg.png", reg_imgs[j])
            with open(out / "images" / f"{rec['id']}_trace.jsonl", "w") as fh:
                for entry in traces[j]:
                    fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return 0


def cmd_evaluate(cfg: dict) -> int:
    records = _manifest_records(cfg["manifest"], cfg["split"])
    if not cfg["candidate_dir"] and not cfg["candidate_field"]:
        raise ConfigError("evaluate needs candidate_dir or candidate_field")
    root = Path(cfg["manifest"]).parent
    report = metrics.MetricReport()
    for rec in records:
        ref = load_image(root / rec["image"])
        if cfg["candidate_field"]:
            cand_path = root / rec[cfg["candidate_field"]]
        else:
            cand_path = Path(cfg["candidate_dir"]) / f"{rec['id']}{cfg['candidate_suffix']}"
        cand = load_image(cand_path)
        report.add(rec["id"], metrics.psnr(cand, ref), metrics.ssim(cand, ref))
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    cfgmod.write_snapshot(out.parent, "evaluate", cfg)
    report.write_csv(out)
    return 0


def cmd_curate(cfg: dict) -> int:
    out = Path(cfg["out"])
    cfgmod.write_snapshot(out, "curate", cfg)
    cur_cfg = curation.CurationConfig(
        min_height=cfg["min_height"], min_width=cfg["min_width"],
        aspect_band=(cfg["aspect_lo"], cfg["aspect_hi"]),
        coverage_tau=cfg["coverage_tau"],
        target_hw=(cfg["target_height"], cfg["target_width"]))
    in_dir = Path(cfg["in_dir"])
    if not in_dir.is_dir():
        raise MissingArtifactError(f"input directory not found: {in_dir}")
    curation.run_curation(in_dir, out, cur_cfg, marks_path=cfg["marks"])
    return 0


def cmd_sweep_s(cfg: dict) -> int:
    records = _manifest_records(cfg["manifest"], cfg["split"])[:cfg["n"]]
    if not records:
        raise MissingArtifactError("no records to sweep over")
    params = _load_restore_params(cfg)
    sched = diffusion.build_schedule(cfg["timesteps"], cfg["beta_start"],
                                     cfg["beta_end"], cfg["inference_steps"])
    root = Path(cfg["manifest"]).parent
    imgs = np.stack([load_image(root / r["lq"]) for r in records])
    captions = [r.get("caption", "") for r in records]
    values = tuple(float(v) for v in cfg["values"].split(","))
    result = guidance.sweep_scale(imgs, captions, params, sched, cfg["seed"],
                                  values=values, variant=cfg["variant"])
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    cfgmod.write_snapshot(out.parent, "sweep-s", cfg)
    payload = {"values": {repr(k): v for k, v in result["values"].items()},
               "best": result["best"]}
    with open(out, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


_COMMANDS = {
    "gen": cmd_gen,
    "degrade": cmd_degrade,
    "train-regressor": cmd_train_regressor,
    "train-diffusion": cmd_train_diffusion,
    "restore": cmd_restore,
    "evaluate": cmd_evaluate,
    "curate": cmd_curate,
    "sweep-s": cmd_sweep_s,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bodyrestore",
        description="Desk-scale human body restoration pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for command, fields in cfgmod.SCHEMAS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", default=None, help="JSON config file")
        for f in fields:
            flag = "--" + f.name.replace("_", "-")
            p.add_argument(flag, dest=f.name, default=None, help=f.help or None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    command = args.command
    try:
        file_cfg = cfgmod.load_config_file(args.config) if args.config else None
        overrides = {f.name: getattr(args, f.name) for f in cfgmod.SCHEMAS[command]}
        resolved = cfgmod.resolve(command, file_cfg, overrides)
        return _COMMANDS[command](resolved)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except MissingArtifactError as exc:
        print(f"error: artifact: {exc}", file=sys.stderr)
        return 3
    except (NumericError, ArithmeticError) as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: artifact: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
