"""Command-line entry point.

    suncet pretrain        --config CFG [--seed N] --out DIR
    suncet finetune        --config CFG --checkpoint CK --out DIR
    suncet lineval         --config CFG --checkpoint CK --out DIR
    suncet eval            --config CFG --checkpoint CK [--out DIR]
    suncet sweep-switchoff --config CFG [--seed N] --out DIR
    suncet report          --baseline M.csv... --comparison M.csv... --out DIR

Exit codes: 0 success, 2 config error, 3 data error, 4 divergence, 5 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .config import TrainConfig, parse_config, serialize_config
from .data import Dataset, bernoulli_split, load_dataset, synthetic_blobs
from .errors import ConfigError, DataError, DivergenceError, SuncetError
from .model import Checkpoint, load_checkpoint, save_checkpoint
from .report import emit_report
from .trainer import (
    CLASSIFIER_HEADER,
    evaluate,
    finetune,
    linear_eval,
    metrics_csv,
    pretrain,
)

log = logging.getLogger("suncet")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4, 5


@dataclass
class RunManifest:
    command: str
    config_path: str | None
    config: TrainConfig
    seed: int
    out_dir: Path | None
    artifacts: dict[str, str] = field(default_factory=dict)

    def begin(self) -> None:
        """Write the resolved config before any compute happens."""
        if self.out_dir is None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / "config.txt").write_text(serialize_config(self.config))
        self.artifacts["config"] = str(self.out_dir / "config.txt")

    def finish(self) -> None:
        if self.out_dir is None:
            return
        doc = {
            "command": self.command,
            "config_path": self.config_path,
            "seed": self.seed,
            "out_dir": str(self.out_dir),
            "artifacts": self.artifacts,
        }
        (self.out_dir / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_data(cfg: TrainConfig) -> tuple[Dataset, Dataset | None]:
    if cfg.dataset_path:
        ds = load_dataset(cfg.dataset_path)
        test = load_dataset(cfg.test_path) if cfg.test_path else None
    else:
        ds = synthetic_blobs(seed=cfg.data_seed)
        test = load_dataset(cfg.test_path) if cfg.test_path else synthetic_blobs(
            n=1000, seed=cfg.data_seed, draw=2)
    if test is not None and test.d_in != ds.d_in:
        raise DataError(f"test set has {test.d_in} features, training set {ds.d_in}")
    return ds, test


def _classifier_outputs(manifest: RunManifest, res, ck: Checkpoint, frozen: bool) -> None:
    out = manifest.out_dir
    if out is None:
        return
    params = ck.params if frozen else res.params
    final = Checkpoint(params, ck.global_step, ck.epoch, ck.rng_seed, ck.rng_counter, res.classifier)
    save_checkpoint(final, out / "checkpoint.snck")
    (out / "metrics.csv").write_text(metrics_csv(res.rows, CLASSIFIER_HEADER))
    manifest.artifacts.update(checkpoint=str(out / "checkpoint.snck"), metrics=str(out / "metrics.csv"))


def cmd_pretrain(manifest: RunManifest, args) -> int:
    cfg = manifest.config
    ds, test = load_data(cfg)
    split = bernoulli_split(ds, cfg.label_fraction, cfg.label_seed)
    res = pretrain(ds, split, cfg, ds_test=test, out_dir=manifest.out_dir, wallclock=args.wallclock)
    if manifest.out_dir is not None:
        manifest.artifacts.update(checkpoint=str(manifest.out_dir / "checkpoint.snck"),
                                  metrics=str(manifest.out_dir / "metrics.csv"))
        if not res.rows:
            save_checkpoint(res.checkpoint, manifest.out_dir / "checkpoint.snck")
            (manifest.out_dir / "metrics.csv").write_text(metrics_csv([]))
    last = res.rows[-1] if res.rows else None
    print(f"pretrain: {len(res.rows)} epochs, {res.ledger.updates_cum} updates, "
          f"{res.ledger.flops_cum} flops, final top1 {last.eval_top1 if last else None}")
    return EXIT_OK


def _need_checkpoint(args) -> Checkpoint:
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required for this command")
    return load_checkpoint(args.checkpoint)


def cmd_finetune(manifest: RunManifest, args) -> int:
    cfg = manifest.config
    ck = _need_checkpoint(args)
    ds, test = load_data(cfg)
    split = bernoulli_split(ds, cfg.label_fraction, cfg.label_seed)
    res = finetune(ds, split, ck, cfg, ds_test=test)
    _classifier_outputs(manifest, res, ck, frozen=False)
    acc = evaluate(res.params, res.classifier, test) if test is not None else None
    print(f"finetune: {cfg.finetune_epochs} epochs, top1 {acc}")
    return EXIT_OK


def cmd_lineval(manifest: RunManifest, args) -> int:
    cfg = manifest.config
    ck = _need_checkpoint(args)
    ds, test = load_data(cfg)
    split = bernoulli_split(ds, cfg.label_fraction, cfg.label_seed)
    res = linear_eval(ds, split, ck.params, cfg, ds_test=test)
    _classifier_outputs(manifest, res, ck, frozen=True)
    acc = evaluate(ck.params, res.classifier, test) if test is not None else None
    print(f"lineval: {cfg.lineval_epochs} epochs, top1 {acc}")
    return EXIT_OK


def cmd_eval(manifest: RunManifest, args) -> int:
    cfg = manifest.config
    ck = _need_checkpoint(args)
    ds, test = load_data(cfg)
    target = test if test is not None else ds
    acc = evaluate(ck.params, ck.classifier, target)
    print(f"top1 {acc!r}")
    if manifest.out_dir is not None:
        (manifest.out_dir / "eval.txt").write_text(f"top1 = {acc!r}\n")
        manifest.artifacts["eval"] = str(manifest.out_dir / "eval.txt")
    return EXIT_OK


SWEEP_HEADER = ["switchoff_epoch", "total_flops", "total_updates", "final_top1", "metrics"]


def cmd_sweep(manifest: RunManifest, args) -> int:
    cfg = manifest.config
    out = manifest.out_dir
    if out is None:
        raise ConfigError("--out is required for sweep-switchoff")
    ds, test = load_data(cfg)
    split = bernoulli_split(ds, cfg.label_fraction, cfg.label_seed)
    table = []
    for off in cfg.sweep_switchoff:
        if off > cfg.epochs:
            raise ConfigError(f"sweep_switchoff: {off} exceeds epochs={cfg.epochs}")
        run_dir = out / f"off_{off}"
        run_cfg = cfg.replace(suncet_off_epoch=off)
        (run_dir).mkdir(parents=True, exist_ok=True)
        (run_dir / "config.txt").write_text(serialize_config(run_cfg))
        res = pretrain(ds, split, run_cfg, ds_test=test, out_dir=run_dir, wallclock=args.wallclock)
        final = res.rows[-1].eval_top1 if res.rows else None
        table.append([off, res.ledger.flops_cum, res.ledger.updates_cum,
                      "" if final is None else repr(final), str(run_dir / "metrics.csv")])
        print(f"switch-off {off}: flops {res.ledger.flops_cum} top1 {final}")
    with open(out / "sweep.tsv", "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        w.writerows(table)
    manifest.artifacts["sweep"] = str(out / "sweep.tsv")
    return EXIT_OK


def cmd_report(manifest: RunManifest, args) -> int:
    if not args.baseline and not args.comparison:
        raise ConfigError("report needs --baseline and/or --comparison metrics files")
    out = manifest.out_dir or Path(".")
    curves, savings = emit_report(args.baseline or [], args.comparison or [], out)
    manifest.artifacts["curves"] = str(curves)
    if savings is not None:
        manifest.artifacts["savings"] = str(savings)
        print(savings.read_text(), end="")
    return EXIT_OK


COMMANDS = {
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "lineval": cmd_lineval,
    "eval": cmd_eval,
    "sweep-switchoff": cmd_sweep,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="suncet", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file (defaults if omitted)")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--checkpoint", help="checkpoint for finetune/lineval/eval")
        p.add_argument("--wallclock", action="store_true",
                       help="fill the wallclock_s metrics column (breaks byte-identical reruns)")
        if name == "report":
            p.add_argument("--baseline", nargs="+", help="baseline metrics CSV(s)")
            p.add_argument("--comparison", nargs="+", help="comparison metrics CSV(s)")
    return parser


def run(command: str, manifest: RunManifest, args) -> int:
    manifest.begin()
    status = COMMANDS[command](manifest, args)
    manifest.finish()
    return status


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config) if args.config else TrainConfig().validate()
        if args.seed is not None:
            cfg = cfg.replace(seed=args.seed)
        manifest = RunManifest(args.command, args.config, cfg, cfg.seed,
                               Path(args.out) if args.out else None)
        return run(args.command, manifest, args)
    except ConfigError as exc:
        print(f"suncet {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"suncet {args.command}: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except DataError as exc:
        print(f"suncet {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, ValueError) as exc:
        code = EXIT_IO if isinstance(exc, OSError) else EXIT_DATA
        print(f"suncet {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code
    except SuncetError as exc:
        print(f"suncet {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
