"""Command-line surface.

Subcommands: prepare, train, eval, predict, plot-curve, ablate.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import RunConfig, load_run_config, save_run_config
from .dataset import load_dataset, load_manifest, prepare_dataset, sample_indices
from .errors import DataError, NumericalError, UsageError
from .inference import evaluate_model, predict_maps, write_predictions
from .model import ModelConfig, StackedHourglass
from .preprocess import DEFAULT_DEPTH_SCALE, DEFAULT_THRESHOLD_MM
from .synthdata import SynthParams, write_corpus
from .train import train_model


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="handdepth", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="build/validate a dataset directory")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--synthetic", type=int, metavar="N",
                   help="generate N synthetic samples into the directory first")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t", type=float, default=DEFAULT_THRESHOLD_MM,
                   help="foreground threshold over the scene minimum, mm")
    p.add_argument("--c", type=float, default=DEFAULT_DEPTH_SCALE,
                   help="depth normalization scale, 1/mm")

    p = sub.add_parser("train", help="run the training loop")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", help="override the config's dataset path")
    p.add_argument("--out", help="override the config's output directory")
    p.add_argument("--seed", type=int, help="override the training seed")
    p.add_argument("--max-iterations", type=int, help="cap optimizer steps")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("predict", help="write per-input depth and mask PNGs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("plot-curve", help="render an F(e) curve CSV to an image")
    p.add_argument("--curve", required=True, help="f_curve.csv from eval")
    p.add_argument("--out", required=True, help="output image path")

    p = sub.add_parser("ablate", help="sweep mask/depth stage splits")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the training seed")
    return parser


def _load_config_with_overrides(args) -> RunConfig:
    cfg = load_run_config(args.config)
    if getattr(args, "dataset", None):
        cfg.dataset = args.dataset
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    if getattr(args, "seed", None) is not None:
        cfg.train.seed = args.seed
    return cfg


def _dataset_scale(directory) -> float:
    manifest = load_manifest(directory)
    if manifest and "params" in manifest:
        return float(manifest["params"].get("c_per_mm", DEFAULT_DEPTH_SCALE))
    return DEFAULT_DEPTH_SCALE


def cmd_prepare(args) -> int:
    directory = Path(args.dataset)
    if args.synthetic is not None:
        if args.synthetic < 1:
            raise UsageError("--synthetic needs a positive sample count")
        write_corpus(directory, SynthParams(seed=args.seed, num_samples=args.synthetic))
    manifest = prepare_dataset(directory, t=args.t, c=args.c)
    print(f"accepted {len(manifest['accepted'])} samples, "
          f"rejected {len(manifest['rejected'])} (manifest.json written)")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config_with_overrides(args)
    samples = load_dataset(cfg.require_dataset())
    if not samples:
        raise DataError(f"no usable samples in {cfg.dataset}")
    model = StackedHourglass(cfg.model, seed=cfg.train.seed)
    result = train_model(
        model,
        samples,
        cfg.train,
        cfg.output_dir,
        augment_params=cfg.augment if cfg.use_augmentation else None,
        max_iterations=args.max_iterations,
    )
    save_run_config(cfg, Path(cfg.output_dir) / "run_config.json")
    print(f"trained {len(result.loss_history)} iterations; "
          f"loss {result.initial_loss:.5f} -> {result.final_loss:.5f}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"log: {result.log_path}")
    return 0


def _write_report(report, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.json", "w") as f:
        json.dump(
            {k: v for k, v in report.to_dict().items() if k != "F_curve"},
            f, indent=2, sort_keys=True,
        )
        f.write("\n")
    with open(out_dir / "f_curve.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["threshold_mm", "fraction_below"])
        for e, frac in report.F_curve:
            writer.writerow([f"{e:.10g}", f"{frac:.10g}"])


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    samples = load_dataset(args.dataset)
    if not samples:
        raise DataError(f"no usable samples in {args.dataset}")
    report = evaluate_model(model, samples, c=_dataset_scale(args.dataset))
    _write_report(report, args.out)
    print(f"E = {report.E_mm:.2f} mm, IoU = {report.iou:.3f} "
          f"over {report.sample_count} samples ({report.skipped} skipped)")
    print(f"report: {Path(args.out) / 'report.json'}")
    return 0


def cmd_predict(args) -> int:
    model = load_checkpoint(args.checkpoint)
    directory = Path(args.dataset)
    indices = sample_indices(directory)
    samples = load_dataset(directory)
    if not samples:
        raise DataError(f"no usable samples in {args.dataset}")
    depth_preds, mask_preds = predict_maps(model, samples)
    write_predictions(args.out, indices, depth_preds, mask_preds, c=_dataset_scale(directory))
    print(f"wrote {len(samples)} prediction pairs to {args.out}")
    return 0


def cmd_plot_curve(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(args.curve)
    if not path.exists():
        raise DataError(f"curve file {path} does not exist")
    thresholds, fractions = [], []
    with open(path) as f:
        for row in csv.DictReader(f):
            thresholds.append(float(row["threshold_mm"]))
            fractions.append(float(row["fraction_below"]))
    if not thresholds:
        raise DataError(f"curve file {path} has no rows")

    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.plot(thresholds, fractions, lw=2)
    ax.set_xlabel("error threshold e (mm)")
    ax.set_ylabel("fraction of hand pixels with error < e")
    ax.set_ylim(0, 1.02)
    ax.set_xlim(min(thresholds), max(thresholds))
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    print(f"curve image: {out}")
    return 0


def ablation_splits(total_stages: int) -> list[tuple[int, int]]:
    """All (mask, depth) splits of a fixed total with at least one depth
    stage; for 6 total this covers the published six-stage table rows."""
    return [(m, total_stages - m) for m in range(0, total_stages)]


def cmd_ablate(args) -> int:
    cfg = _load_config_with_overrides(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    dataset_dir = Path(cfg.dataset)
    if not dataset_dir.is_dir() or not sample_indices(dataset_dir):
        write_corpus(dataset_dir, cfg.synth)
    samples = load_dataset(dataset_dir)
    if len(samples) < 10:
        raise DataError(f"ablation needs at least 10 samples, got {len(samples)}")
    n_test = max(1, len(samples) // 5)
    train_samples, test_samples = samples[:-n_test], samples[-n_test:]

    rows = []
    base = cfg.model
    for mask_stages, depth_stages in ablation_splits(base.num_stages):
        model_cfg = ModelConfig(
            num_stages=base.num_stages,
            mask_stages=mask_stages,
            depth_stages=depth_stages,
            feature_width=base.feature_width,
            input_resolution=base.input_resolution,
            output_resolution=base.output_resolution,
            halvings_per_hourglass=base.halvings_per_hourglass,
        )
        model = StackedHourglass(model_cfg, seed=cfg.train.seed)
        split_dir = out_dir / f"m{mask_stages}d{depth_stages}"
        train_model(
            model,
            train_samples,
            cfg.train,
            split_dir,
            augment_params=cfg.augment if cfg.use_augmentation else None,
            checkpoint_every=max(1, cfg.train.epochs),
        )
        report = evaluate_model(model, test_samples)
        label_m = f"{mask_stages} Mask Stage" + ("s" if mask_stages != 1 else "")
        label_d = f"{depth_stages} Depth Stage" + ("s" if depth_stages != 1 else "")
        rows.append((f"{label_m}, {label_d}", mask_stages, depth_stages,
                     report.E_mm, report.iou))
        print(f"{rows[-1][0]}: E = {report.E_mm:.2f} mm, IoU = {report.iou:.3f}")

    csv_path = out_dir / "ablation.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["split", "mask_stages", "depth_stages", "E_mm", "IoU"])
        for row in rows:
            writer.writerow([row[0], row[1], row[2], f"{row[3]:.6g}", f"{row[4]:.6g}"])
    print(f"ablation table: {csv_path}")
    return 0


_COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "plot-curve": cmd_plot_curve,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
