"""Command line entry point: generate, train, eval, ablate, selfcheck."""
from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, describe_keys
from .flatconfig import FlatConfigError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_DIVERGED = 3
EXIT_SELFCHECK = 4

log = logging.getLogger("efs_depth")


def _load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        return RunConfig.load(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _load_manifest(path):
    from .pipeline import DatasetManifest
    return DatasetManifest.load(path)


def _split(cfg: RunConfig, manifest):
    """Training and validation manifests; an existing split assignment wins."""
    from .pipeline import split_dataset
    splits = {r.split for r in manifest.records}
    if {"train", "val"} <= splits:
        return manifest.subset("train"), manifest.subset("val")
    frac = cfg["train.val_fraction"]
    if frac > 0 and len(manifest) >= 2:
        return split_dataset(manifest, 1.0 - frac, cfg["train.split_seed"])
    return manifest, None


def cmd_generate(args) -> int:
    from .pipeline import build_dataset, scene_configs
    cfg = _load_config(args.config)
    scenes = scene_configs(cfg.scene_config(), cfg["scene.count"])
    manifest = build_dataset(scenes, cfg.lens(), cfg.sweep(), cfg.sim(), cfg.encoding(), args.out,
                             force=args.force)
    print(manifest.root / "manifest.txt")
    return EXIT_OK


def cmd_train(args) -> int:
    from .model import EDFFModel
    from .training import save_checkpoint, train, write_trace
    cfg = _load_config(args.config)
    manifest = _load_manifest(args.manifest)
    train_m, val_m = _split(cfg, manifest)
    model_cfg = cfg.model()
    if model_cfg.num_bins != manifest.encoding.num_bins:
        raise ConfigError(f"encoding.num_bins = {model_cfg.num_bins} but the dataset uses {manifest.encoding.num_bins}")
    out = Path(args.out)
    if out.exists() and not args.force:
        raise FileExistsError(f"{out} already exists (use --force to overwrite)")
    model = EDFFModel(model_cfg)

    def progress(row):
        log.info("iter %d epoch %d loss %.4f rmse %.4f", row.iteration, row.epoch, row.loss, row.masked_rmse)

    samples = train_m.load_samples()
    val = val_m.load_samples() if val_m is not None else None
    result = train(model, samples, cfg["train.epochs"], cfg.train(), val_samples=val, progress=progress)
    model.sensor_size = (manifest.encoding.height, manifest.encoding.width)
    save_checkpoint(model, out)
    write_trace(out / "trace.csv", result.trace)
    print(f"checkpoint {out}")
    print(f"iterations {result.iterations} initial_rmse {result.initial_rmse:.6f} final_rmse {result.final_rmse:.6f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import classical_estimator, evaluate, model_estimator, write_report
    from .training import load_checkpoint
    manifest = _load_manifest(args.manifest)
    if args.split:
        manifest = manifest.subset(args.split)
    if args.baseline:
        estimator, name = classical_estimator(), "classical"
    else:
        try:
            model = load_checkpoint(args.checkpoint)
        except (KeyError, ValueError) as exc:
            raise OSError(f"unreadable checkpoint {args.checkpoint}: {exc}") from exc
        estimator, name = model_estimator(model), "edff"
    result = evaluate(manifest, estimator)
    m = result.aggregate
    print("method,rmse_m,absrel,delta1,delta2,delta3,pixels")
    print(f"{name},{m.rmse_m:.6f},{m.absrel:.6f},{m.delta1:.6f},{m.delta2:.6f},{m.delta3:.6f},{m.pixel_count}")
    report = Path(args.report) if args.report else Path(f"eval_{name}.csv")
    write_report(report, f"# method {name}; aggregate is pixel-weighted over samples\n" + result.table_csv())
    print(f"report {report}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .metrics import ablation_run, write_report
    cfg = _load_config(args.config)
    manifest = _load_manifest(args.manifest)
    train_m, val_m = _split(cfg, manifest)
    if val_m is None:
        raise ConfigError("ablation needs a validation split: set train.val_fraction > 0")

    def progress(row):
        status = "failed" if row.metrics is None else f"rmse {row.metrics.rmse_m:.4f}"
        log.info("%s seed %d: %s", row.name, row.seed, status)

    report = ablation_run(train_m, val_m, cfg.model(), cfg["train.epochs"], cfg.train(),
                          seeds=cfg["ablation.seeds"], progress=progress)
    text = report.to_csv()
    sys.stdout.write(text)
    out = Path(args.report) if args.report else Path("ablation.csv")
    write_report(out, text)
    print(f"report {out}")
    return EXIT_DIVERGED if report.failed else EXIT_OK


def cmd_selfcheck(args) -> int:
    from .autodiff import inject_fault
    from .selfcheck import first_failure, run_selfcheck
    ctx = inject_fault(args.inject_fault) if args.inject_fault else contextlib.nullcontext()
    with ctx:
        results = run_selfcheck()
    failed = first_failure(results)
    if failed is not None:
        print(f"selfcheck failed: {failed.name}", file=sys.stderr)
        return EXIT_SELFCHECK
    print("selfcheck passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    epilog = "config keys (one 'key = value' per line):\n" + describe_keys() + (
        "\n\nexit codes: 0 ok, 1 config error, 2 I/O error, 3 training diverged, 4 selfcheck failed"
        "\nEFS_DEPTH_THREADS bounds parallel dataset generation (default: all cores)"
    )
    parser = argparse.ArgumentParser(
        prog="efs-depth", description="Depth from event focal stacks: data, training, evaluation.",
        epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="build a synthetic dataset")
    p.add_argument("--config", help="run configuration file")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--force", action="store_true", help="replace an existing output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train the depth network")
    p.add_argument("--config", help="run configuration file")
    p.add_argument("--manifest", required=True, help="dataset manifest or directory")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--force", action="store_true", help="replace an existing checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or the classical baseline")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", help="checkpoint directory")
    src.add_argument("--baseline", action="store_true", help="use polarity-reversal depth instead of a model")
    p.add_argument("--manifest", required=True, help="dataset manifest or directory")
    p.add_argument("--split", choices=("train", "val", "unassigned"), help="evaluate only this split")
    p.add_argument("--report", help="report file (default eval_<method>.csv)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare the four fusion-module variants")
    p.add_argument("--config", help="run configuration file")
    p.add_argument("--manifest", required=True, help="dataset manifest or directory")
    p.add_argument("--report", help="report file (default ablation.csv)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("selfcheck", help="gradient, encoding and simulator consistency checks")
    p.add_argument("--inject-fault", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    from .pipeline import DatasetError
    from .training import DivergenceError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, FlatConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged: {exc}; last finite loss {exc.last_finite_loss:.6g}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, DatasetError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
