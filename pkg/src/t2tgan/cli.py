"""Command-line entry point: ``t2tgan <command> [options]``.

Exit status is 0 on success, 1 when inputs or options fail validation, and 2
when a run fails after starting.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint
from . import evaluation as ev
from .config import ConfigError, RunConfig, load_config
from .federation import client_rng, init_seed, run_federation
from .nets import GeneratorParams, StructureError, generate, init_bundle, load_bundle, save_bundle
from .signals import DatasetTensor, RecordFormatError, denormalize_abp, load_records, prepare_dataset, synth_paired_dataset
from .training import TrainingError, append_loss_log, train_epoch

log = logging.getLogger("t2tgan")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS lets the global flags appear before or after the command name
    common = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", type=Path, help="run configuration file")
    common.add_argument("--seed", type=int, help="root seed (overrides the config)")
    common.add_argument("--out", type=Path, help="output file or directory")
    common.add_argument("--verbose", "-v", action="store_true")

    p = _Parser(prog="t2tgan", description="Federated PPG-to-ABP translation.", parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth-data", parents=[common], help="write a synthetic paired dataset")
    s.add_argument("--n", type=_positive, required=True, help="number of segments")
    s.add_argument("--coupling", type=float, default=0.0, help="latent HR/SBP/DBP correlation")

    s = sub.add_parser("prepare-data", parents=[common], help="segment and normalise a record file")
    s.add_argument("--in", dest="inp", type=Path, required=True, help="record text file")

    s = sub.add_parser("train", parents=[common], help="train centrally or federated")
    s.add_argument("--mode", choices=("central", "federated"))
    s.add_argument("--data", type=Path, help="training dataset (overrides the config)")
    s.add_argument("--epochs", type=_positive, help="central epochs (overrides the config)")

    s = sub.add_parser("generate", parents=[common], help="translate PPG segments to ABP")
    s.add_argument("--ckpt", type=Path, required=True)
    s.add_argument("--in", dest="inp", type=Path, required=True, help="dataset container with a ppg array")

    s = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on a dataset")
    s.add_argument("--ckpt", type=Path, required=True)
    s.add_argument("--data", type=Path, help="evaluation dataset (overrides the config)")
    s.add_argument("--calibrate", action="store_true", help="also report first-minute calibrated results")
    s.add_argument("--plot", action="store_true", help="write Bland-Altman plots as SVG")
    return p


# ---------------------------------------------------------------------------
# commands


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _require_file(path: Path | None, what: str) -> Path:
    if path is None:
        raise UsageError(f"no {what} given")
    if not path.is_file():
        raise UsageError(f"{what} not found: {path}")
    return path


def _load_dataset(path: Path) -> DatasetTensor:
    try:
        return DatasetTensor.load(path)
    except (checkpoint.CheckpointError, ValueError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def cmd_synth_data(args) -> int:
    if args.out is None:
        raise UsageError("synth-data needs --out <file>")
    cfg = _config(args)
    seed = cfg.federation.seed if args.seed is None else args.seed
    ds = synth_paired_dataset(args.n, seed=seed, abp_scale=cfg.abp_scale, coupling=args.coupling)
    ds.save(args.out)
    log.info("wrote %d segments to %s", len(ds), args.out)
    return EXIT_OK


def cmd_prepare_data(args) -> int:
    if args.out is None:
        raise UsageError("prepare-data needs --out <file>")
    cfg = _config(args)
    try:
        records = load_records(_require_file(args.inp, "record file"))
        ds = prepare_dataset(records, cfg.abp_scale)
    except (RecordFormatError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    ds.save(args.out)
    log.info("wrote %d segments from %d record(s) to %s", len(ds), len(records), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.mode:
        cfg = replace(cfg, mode=args.mode)
    if args.epochs:
        cfg = replace(cfg, epochs=args.epochs)
    data_path = args.data or (Path(cfg.train_data) if cfg.train_data else None)
    dataset = _load_dataset(_require_file(data_path, "training dataset"))
    out = args.out or Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fed = cfg.federation
    if cfg.mode == "federated":
        if len(dataset) < fed.n_clients:
            raise UsageError(f"{len(dataset)} segments cannot be shared among {fed.n_clients} clients")
        run_federation(dataset, fed, cfg.loss, cfg.optimizer, out_dir=out, workers=cfg.workers)
        return EXIT_OK
    # central: same initial weights and batch-order stream as client 0 of a federated run
    bundle = init_bundle(init_seed(fed.seed))
    rng = client_rng(fed.seed, 0)
    losses_path = out / "losses.csv"
    losses_path.unlink(missing_ok=True)
    for epoch in range(1, cfg.epochs + 1):
        bundle, losses = train_epoch(bundle, dataset, rng, fed.batch_size, cfg.loss, cfg.optimizer)
        append_loss_log(losses_path, epoch, losses)
        save_bundle(out / f"epoch_{epoch}.ckpt", bundle)
        log.info("epoch %d total_g %.6f", epoch, losses.total_g)
    return EXIT_OK


def load_generator(path: Path):
    """P2A weights from a full bundle checkpoint."""
    try:
        return load_bundle(_require_file(path, "checkpoint")).g_pa
    except (checkpoint.CheckpointError, StructureError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def _generator_fn(model):
    if isinstance(model, GeneratorParams):
        return lambda x: generate(model, x)
    return model


def cmd_generate(args) -> int:
    if args.out is None:
        raise UsageError("generate needs --out <file>")
    cfg = _config(args)
    gen = _generator_fn(load_generator(args.ckpt))
    try:
        arrays = checkpoint.load(_require_file(args.inp, "input"))
    except checkpoint.CheckpointError as exc:
        raise UsageError(f"{args.inp}: {exc}") from None
    if "ppg" not in arrays:
        raise UsageError(f"{args.inp}: no 'ppg' array")
    ppg = np.atleast_2d(arrays["ppg"])
    scale = tuple(arrays["abp_scale"]) if "abp_scale" in arrays else cfg.abp_scale
    abp = gen(ppg)
    checkpoint.save(
        args.out,
        {
            "abp": abp,
            "abp_mmhg": denormalize_abp(abp, scale),
            "abp_scale": np.asarray(scale, dtype=np.float64),
        },
    )
    log.info("generated %d segments into %s", len(abp), args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    data_path = args.data or (Path(cfg.test_data) if cfg.test_data else None)
    dataset = _load_dataset(_require_file(data_path, "evaluation dataset"))
    model = _generator_fn(load_generator(args.ckpt))
    out = args.out or Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    generated = ev.run_generation(model, dataset)
    variants = [False, True] if args.calibrate else [False]
    reports = [ev.report_from(generated, calibrated) for calibrated in variants]
    ev.write_summary(out / "summary.csv", reports)
    for rep in reports:
        tag = "calibrated" if rep.calibrated else "uncalibrated"
        ev.write_ba_points(out / f"ba_{tag}.csv", rep)
        if args.plot:
            ev.plot_bland_altman(out / f"ba_{tag}.svg", rep)
        ba = rep.bland_altman
        print(f"{tag}: mean {ba.mean_error:.3f} mmHg, sd {ba.sd:.3f} mmHg, AAMI {'pass' if rep.aami_pass else 'fail'}")
    return EXIT_OK


GLOBAL_DEFAULTS = {"config": None, "seed": None, "out": None, "verbose": False}

COMMANDS = {
    "synth-data": cmd_synth_data,
    "prepare-data": cmd_prepare_data,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"t2tgan: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    for name, default in GLOBAL_DEFAULTS.items():
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"t2tgan: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TrainingError, ev.UnusableSegment, ValueError, OSError) as exc:
        print(f"t2tgan: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
