"""Command-line entry point.

Subcommands read a JSON experiment config (``--config``) and write their
outputs under ``--out``.  Exit status is 0 on success, 2 for configuration
errors and 3 when a numerical check aborts the run.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .analysis import codebook_quality
from .channel import ChannelModel, KRONECKER
from .detectors import JointAlphabet
from .errors import ConfigError, CorruptFile, JtrdError, VersionMismatch
from .harness import (
    ExperimentConfig,
    block_length_csv,
    block_length_study,
    convergence_csv,
    convergence_study,
    init_comparison,
    init_comparison_csv,
    load_config,
    sweep,
    train_model,
    write_report,
)
from .trainer import TrainConfig, load_checkpoint, save_checkpoint
from .transmitter import export_codebooks, slot_power_spread

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

log = logging.getLogger("jtrdnet")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON experiment config")
    common.add_argument("--seed", type=int, default=None, help="override the run seed")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--threads", type=int, default=1, help="Monte-Carlo worker threads")
    common.add_argument("--deterministic", action="store_true",
                        help="force a single worker (results are seed-determined either way)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="jtrdnet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train a model, write checkpoint.json")
    ev = sub.add_parser("evaluate", parents=[common], help="BER of a checkpoint and baselines")
    ev.add_argument("--checkpoint", default=None)
    sw = sub.add_parser("sweep", parents=[common], help="train (if needed) and sweep SNRs")
    sw.add_argument("--checkpoint", default=None)
    sw.add_argument("--figure", default="fig7", help="name of the plot_data CSV")
    an = sub.add_parser("analyze", parents=[common], help="pairwise codebook analysis")
    an.add_argument("--checkpoint", default=None)
    an.add_argument("--sigma2", type=float, default=1.0)
    sub.add_parser("init-compare", parents=[common], help="Xavier vs symmetrical interval")
    sub.add_parser("block-length", parents=[common], help="BER versus coherent block length")
    cv = sub.add_parser("convergence", parents=[common],
                        help="iterations to convergence, i.i.d. vs Kronecker")
    cv.add_argument("--rho", type=float, default=0.5)
    return p


def _resolve(args) -> tuple[ExperimentConfig, Path]:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.train = TrainConfig.from_dict({**cfg.train.to_dict(), "seed": args.seed})
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _model_for(args, cfg: ExperimentConfig, out: Path):
    path = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.json"
    if path.exists():
        model, tcfg, channel = load_checkpoint(path)
        if model.cfg != cfg.system:
            raise ConfigError(f"checkpoint {path} was trained for a different system")
        return model
    if args.command != "sweep":
        raise ConfigError(f"no checkpoint at {path}; run 'train' first")
    return _train(cfg, out)


def _train(cfg: ExperimentConfig, out: Path):
    model, tlog = train_model(cfg)
    save_checkpoint(out / "checkpoint.json", model, cfg.train, cfg.channel)
    (out / "train_log.csv").write_text(tlog.to_csv())
    log.info("trained %d iterations, converged at %s", model.iteration, tlog.converged_at)
    return model


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = 1 if args.deterministic else max(1, args.threads)
    try:
        cfg, out = _resolve(args)
        if args.command == "train":
            _train(cfg, out)
        elif args.command in ("evaluate", "sweep"):
            model = _model_for(args, cfg, out)
            report = sweep(cfg, model, threads=threads)
            write_report(report, out, args.figure if args.command == "sweep" else None)
        elif args.command == "analyze":
            model = _model_for(args, cfg, out)
            alphabet = JointAlphabet.from_codebooks(model.codebooks)
            result = {
                "quality": codebook_quality(alphabet, None, cfg.system.N, args.sigma2),
                "slot_power": slot_power_spread(model.codebooks).tolist(),
                "codebooks": export_codebooks(model.codebooks),
            }
            (out / "analysis.json").write_text(json.dumps(result, indent=2))
        elif args.command == "init-compare":
            runs = init_comparison(cfg)
            plot = out / "plot_data"
            plot.mkdir(exist_ok=True)
            (plot / "fig2.csv").write_text(init_comparison_csv(runs))
            summary = {s: [{"seed": r.seed, "user_ber": r.user_ber.tolist(),
                            "imbalance": r.imbalance} for r in rs] for s, rs in runs.items()}
            (out / "init_compare.json").write_text(json.dumps(summary, indent=2))
        elif args.command == "block-length":
            rows = block_length_study(cfg)
            plot = out / "plot_data"
            plot.mkdir(exist_ok=True)
            (plot / "fig5.csv").write_text(block_length_csv(rows))
        elif args.command == "convergence":
            channels = {"iid": ChannelModel(), "kronecker": ChannelModel(KRONECKER, args.rho)}
            counts = convergence_study(cfg, channels, cfg.init_seeds)
            plot = out / "plot_data"
            plot.mkdir(exist_ok=True)
            (plot / "fig13.csv").write_text(convergence_csv(counts))
    except (ConfigError, CorruptFile, VersionMismatch) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except JtrdError as exc:
        print(f"numerical abort: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
