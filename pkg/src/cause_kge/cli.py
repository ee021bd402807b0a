"""Command-line interface: ``cause-kge {train,evaluate,corrupt,ablate,export}``.

Exit codes: 0 success, 1 configuration or usage error, 2 data or checkpoint
error, 3 training divergence.  ``CAUSE_LOG`` (error, info, debug) sets the
log level.
"""

from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import (
    SPLITS,
    Dataset,
    build_filter_index,
    corrupt_dataset,
    load_dataset,
    noisy_count,
    write_triples,
)
from .errors import CheckpointError, ConfigError, DataError, TrainingDivergence
from .evaluation import evaluate
from .objectives import LOSS_NAMES
from .scoring import VIEWS, InterventionOp
from .train import TrainConfig, train

logger = logging.getLogger("cause_kge")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3
MANIFEST = "manifest.json"
LOG_FILE = "train_log.jsonl"
CHECKPOINT_DIR = "checkpoint"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data errors here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _data_record(data_dir: Path) -> dict:
    return {
        "dir": str(data_dir.resolve()),
        "sha256": {s: _sha256(data_dir / f"{s}.txt") for s in SPLITS},
    }


def read_config(path: str | Path) -> TrainConfig:
    """Read a config file, or the config recorded in a run manifest."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if isinstance(data, dict) and "command" in data and "config" in data:
        data = data["config"]
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return TrainConfig.from_dict(data)


def _run_training(config: TrainConfig, data_dir: Path, out: Path, threads: int, command: str, argv, extra=None):
    started = _now()
    ds = load_dataset(data_dir)
    out.mkdir(parents=True, exist_ok=True)
    filt = build_filter_index(ds.train, ds.valid)
    with open(out / LOG_FILE, "w", encoding="utf-8", newline="\n") as log_fh:

        def on_epoch(rec):
            log_fh.write(json.dumps(rec) + "\n")

        result = train(config, ds.vocab, ds.train, ds.valid, filter_index=filt, threads=threads, on_epoch=on_epoch)
    metrics = {} if result.best_metric is None else {"valid_mrr": result.best_metric}
    ckpt = Checkpoint(config, ds.vocab, result.table, result.epoch, metrics, result.optimizer, extra or {})
    save_checkpoint(out / CHECKPOINT_DIR, ckpt)
    manifest = {
        "command": command,
        "argv": list(argv),
        "version": __version__,
        "config": config.to_dict(),
        "data": _data_record(data_dir),
        "threads": threads,
        "started": started,
        "finished": _now(),
        "outputs": {"checkpoint": CHECKPOINT_DIR, "log": LOG_FILE},
    }
    if extra:
        manifest.update(extra)
    _write_json(out / MANIFEST, manifest)
    logger.info("trained %d epochs; checkpoint at %s", result.epoch, out / CHECKPOINT_DIR)


def cmd_train(args, argv) -> int:
    config = read_config(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    _run_training(config, Path(args.data), Path(args.out), args.threads, "train", argv)
    return EXIT_OK


def cmd_ablate(args, argv) -> int:
    config = read_config(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    if args.drop_loss is None and args.op is None:
        raise UsageError("ablate: give --drop-loss and/or --op")
    ablation = {}
    if args.drop_loss is not None:
        weights = list(config.loss_weights)
        weights[LOSS_NAMES.index(args.drop_loss)] = 0.0
        config = config.replace(loss_weights=tuple(weights))
        ablation["drop_loss"] = args.drop_loss
    if args.op is not None:
        config = config.replace(op=InterventionOp(args.op))
        ablation["op"] = args.op
    extra = {"ablation": ablation}
    _run_training(config, Path(args.data), Path(args.out), args.threads, "ablate", argv, extra)
    return EXIT_OK


def cmd_evaluate(args, argv) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data, ckpt.vocab)
    filt = build_filter_index(ds.train, ds.valid, ds.test)
    op = InterventionOp(args.op) if args.op else ckpt.config.op
    report = evaluate(ckpt.table, ds.split(args.split), filt, args.view, op, args.threads)
    sys.stdout.write(report.to_json() + "\n")
    return EXIT_OK


def cmd_corrupt(args, argv) -> int:
    if not 0.0 <= args.lam <= 1.0:
        raise UsageError("corrupt: --lambda must lie in [0, 1]")
    data_dir, out = Path(args.data), Path(args.out)
    started = _now()
    ds = load_dataset(data_dir)
    noisy = corrupt_dataset(
        ds.train, args.lam, args.seed, ds.vocab.n_entities, known=(ds.valid, ds.test), mode=args.noise_mode
    )
    out.mkdir(parents=True, exist_ok=True)
    # byte copies keep untouched splits identical to the source files
    for name in ("valid", "test"):
        (out / f"{name}.txt").write_bytes((data_dir / f"{name}.txt").read_bytes())
    if noisy == ds.train:
        (out / "train.txt").write_bytes((data_dir / "train.txt").read_bytes())
    else:
        write_triples(out / "train.txt", noisy, ds.vocab)
    manifest = {
        "command": "corrupt",
        "argv": list(argv),
        "version": __version__,
        "lambda": args.lam,
        "seed": args.seed,
        "mode": args.noise_mode,
        "n_noisy": noisy_count(args.lam, len(ds.train)),
        "source": _data_record(data_dir),
        "started": started,
        "finished": _now(),
        "outputs": {s: f"{s}.txt" for s in SPLITS},
    }
    _write_json(out / MANIFEST, manifest)
    return EXIT_OK


def cmd_export(args, argv) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    ent, _ = ckpt.table.view_matrices(args.view, ckpt.config.op)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for name, row in zip(ckpt.vocab.entity_names, ent.tolist()):
            fh.write(name + "\t" + "\t".join(repr(v) for v in row) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cause-kge", description="Train and evaluate causality-enhanced KG embeddings.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def threads(sp):
        sp.add_argument("--threads", type=int, default=1, help="worker threads for evaluation (1 = serial)")

    sp = sub.add_parser("train", help="train CausE embeddings")
    sp.add_argument("--config", required=True, help="JSON config (or a run manifest to replay)")
    sp.add_argument("--data", required=True, help="directory with train.txt, valid.txt, test.txt")
    sp.add_argument("--out", required=True, help="run directory to write")
    sp.add_argument("--seed", type=int, help="override the config seed")
    threads(sp)

    sp = sub.add_parser("evaluate", help="filtered link prediction metrics as JSON")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--view", choices=VIEWS, default="causal")
    sp.add_argument("--split", choices=("valid", "test"), default="test")
    sp.add_argument("--op", choices=[o.value for o in InterventionOp], help="defaults to the trained operator")
    threads(sp)

    sp = sub.add_parser("corrupt", help="write a copy of a dataset with noisy training triples")
    sp.add_argument("--data", required=True)
    sp.add_argument("--lambda", dest="lam", type=float, required=True, help="noise rate in [0, 1]")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--noise-mode", choices=("replace", "append"), default="replace")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("ablate", help="train with one loss term dropped or another operator")
    sp.add_argument("--config", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--drop-loss", choices=LOSS_NAMES)
    sp.add_argument("--op", choices=[o.value for o in InterventionOp])
    sp.add_argument("--seed", type=int, help="override the config seed")
    threads(sp)

    sp = sub.add_parser("export", help="write one view's entity embeddings as TSV")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--view", choices=VIEWS, default="causal")
    sp.add_argument("--out", required=True, help="output TSV file")
    return p


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "corrupt": cmd_corrupt,
    "ablate": cmd_ablate,
    "export": cmd_export,
}


def _setup_logging():
    level = os.environ.get("CAUSE_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.INFO), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be >= 1")
        return COMMANDS[args.command](args, argv)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
