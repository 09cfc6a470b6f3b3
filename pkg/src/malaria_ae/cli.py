"""Command-line runner: ``malaria-ae {train,calibrate,evaluate,predict,reconstruct}``.

Exit codes: 0 success, 2 configuration / invalid argument, 3 data or
checkpoint content, 4 numeric failure, 5 I/O failure. Failures print one
JSON line ``{"error": ..., "exit_code": ..., "message": ...}`` on stderr.
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field

from . import pipeline
from .data import PARASITIZED, UNINFECTED, load_pixels, preprocess, scan_dataset, split
from .errors import CheckpointError, ConfigError, DataError, NumericError
from .model import ModelConfig, build_model, load_checkpoint, save_checkpoint

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4, 5

log = logging.getLogger("malaria_ae")


@dataclass
class RunConfig:
    dataset_root: str = None
    output_dir: str = "."
    seed: int = None
    model: dict = field(default_factory=dict)
    split: dict = field(default_factory=lambda: {
        "train_n": 1607, "val_n": 407, "test_spec": {PARASITIZED: 2757, UNINFECTED: 2755}})
    threshold: dict = field(default_factory=lambda: {"k": 3.0, "source": "validation", "ddof": 1})
    report: dict = field(default_factory=dict)
    strict: bool = False

    @classmethod
    def load(cls, path, strict: bool = False) -> "RunConfig":
        try:
            with open(path) as f:
                raw = json.load(f)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        known = {"dataset_root", "output_dir", "seed", "model", "split", "threshold", "report"}
        if strict:
            unknown = set(raw) - known
            unknown |= {f"split.{k}" for k in set(raw.get("split", {})) - {"train_n", "val_n", "test_spec"}}
            unknown |= {f"threshold.{k}" for k in set(raw.get("threshold", {})) - {"k", "source", "ddof"}}
            if unknown:
                raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(strict=strict)
        for key in ("dataset_root", "output_dir", "seed", "model", "report"):
            if key in raw:
                setattr(cfg, key, raw[key])
        cfg.split = {**cfg.split, **raw.get("split", {})}
        cfg.threshold = {**cfg.threshold, **raw.get("threshold", {})}
        return cfg

    def model_config(self) -> ModelConfig:
        if self.seed is None:
            raise ConfigError("a seed is required (config 'seed' or --seed)")
        if "seed" in self.model:
            raise ConfigError("set the seed at the top level, not inside 'model'")
        return ModelConfig.from_dict({**self.model, "seed": int(self.seed)}, strict=self.strict).validate()

    def splits(self):
        if not self.dataset_root:
            raise ConfigError("config needs 'dataset_root'")
        if not os.path.isdir(self.dataset_root):
            raise ConfigError(f"dataset_root {self.dataset_root!r} does not exist")
        if self.seed is None:
            raise ConfigError("a seed is required (config 'seed' or --seed)")
        manifest = scan_dataset(self.dataset_root)
        if manifest.skipped:
            log.warning("skipped %d unreadable files", len(manifest.skipped))
        s = self.split
        return split(manifest, int(self.seed), int(s["train_n"]), int(s["val_n"]), dict(s["test_spec"]))


def _out_path(args, cfg, name):
    out = args.out if getattr(args, "out", None) else (cfg.output_dir if cfg else ".")
    return os.path.join(out, name)


def _load_config(args) -> RunConfig:
    if not getattr(args, "config", None):
        raise ConfigError(f"'{args.command}' needs --config")
    cfg = RunConfig.load(args.config, strict=args.strict)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    return cfg


def _ensure_dir(path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    mcfg = cfg.model_config()
    train_split, val_split, _ = cfg.splits()
    size = mcfg.input_size
    load_pixels(train_split.records + val_split.records, size)
    model = build_model(mcfg)

    def report(epoch, tr, va):
        log.info("epoch %d/%d train_loss %.6g val_loss %.6g", epoch, mcfg.epochs, tr, va)

    model, history = pipeline.train(model, train_split.images(size), val_split.images(size), on_epoch=report)
    ckpt = os.path.join(cfg.output_dir, "model.ckpt")
    _ensure_dir(ckpt)
    save_checkpoint(model, ckpt)
    pipeline.write_history_csv(history, os.path.join(cfg.output_dir, "history.csv"))
    if history.epochs:
        va = history.val_loss[-1] if history.val_loss else float("nan")
        print(f"epoch {history.epochs} train_loss {history.train_loss[-1]:.9f} val_loss {va:.9f}")
    else:
        print("epoch 0 (no training)")
    return EXIT_OK


def calibration_threshold(cfg: RunConfig, model, source: str, k: float):
    """Threshold over per-image losses of the chosen calibration split."""
    train_split, val_split, _ = cfg.splits()
    chosen = {"validation": val_split, "train": train_split}[source]
    losses = pipeline.per_image_losses(model, chosen.images(model.config.input_size))
    return pipeline.calibrate_threshold(losses, k=k, ddof=int(cfg.threshold.get("ddof", 1)), source=source)


def cmd_calibrate(args) -> int:
    cfg = _load_config(args)
    model = load_checkpoint(args.checkpoint or os.path.join(cfg.output_dir, "model.ckpt"))
    source = args.source or cfg.threshold.get("source", "validation")
    if source not in ("validation", "train"):
        raise ConfigError(f"threshold source must be 'validation' or 'train', got {source!r}")
    k = args.k if args.k is not None else float(cfg.threshold.get("k", 3.0))
    thr = calibration_threshold(cfg, model, source, k)
    path = os.path.join(cfg.output_dir, "threshold.json")
    _ensure_dir(path)
    pipeline.write_json(thr.to_dict(), path)
    print(f"mean {thr.mean:.9g} std {thr.std:.9g} k {thr.k:g} tau {thr.tau:.9g} ({thr.source}, n={thr.n})")
    return EXIT_OK


def _read_threshold(path) -> pipeline.Threshold:
    with open(path) as f:
        try:
            return pipeline.Threshold.from_dict(json.load(f))
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"bad threshold file {path}: {exc}") from exc


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    model = load_checkpoint(args.checkpoint or os.path.join(cfg.output_dir, "model.ckpt"))
    thr = _read_threshold(args.threshold or os.path.join(cfg.output_dir, "threshold.json"))
    _, _, test_split = cfg.splits()
    cm, metrics, rows = pipeline.evaluate(model, thr, test_split)
    os.makedirs(cfg.output_dir, exist_ok=True)
    pipeline.write_json(pipeline.metrics_report(cm, metrics, thr), os.path.join(cfg.output_dir, "metrics.json"))
    pipeline.write_scores_csv(rows, os.path.join(cfg.output_dir, "scores.csv"))
    print(f"accuracy {metrics.accuracy:.4f} precision {metrics.precision:.4f} "
          f"recall {metrics.recall:.4f} f1 {metrics.f1:.4f}")
    return EXIT_OK


def _artifact(args, name, explicit):
    if explicit:
        return explicit
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else None
    return _out_path(args, cfg, name)


def cmd_predict(args) -> int:
    model = load_checkpoint(_artifact(args, "model.ckpt", args.checkpoint))
    thr = _read_threshold(_artifact(args, "threshold.json", args.threshold))
    status = EXIT_OK
    for path in args.images:
        try:
            img = preprocess(path, model.config.input_size)
        except (DataError, OSError) as exc:
            _report_error(exc, EXIT_DATA, path=path)
            status = EXIT_DATA
            continue
        loss = pipeline.per_image_loss(model, img)
        print(f"{path}\t{loss:.9f}\t{pipeline.classify(loss, thr)}")
    return status


def cmd_reconstruct(args) -> int:
    # --out is where the PGMs go; the checkpoint stays in the run's output_dir
    run_dir = RunConfig.load(args.config).output_dir if args.config else "."
    model = load_checkpoint(args.checkpoint or os.path.join(run_dir, "model.ckpt"))
    stems = [os.path.splitext(os.path.basename(p))[0] for p in args.images]
    clashes = sorted({s for s in stems if stems.count(s) > 1})
    if clashes:
        raise ConfigError(f"inputs share output stems {clashes}; reconstruct them in separate runs")
    # decode everything before writing anything, so a bad path leaves no partial output
    images = [preprocess(p, model.config.input_size) for p in args.images]
    out_dir = args.out or run_dir
    os.makedirs(out_dir, exist_ok=True)
    for stem, img in zip(stems, images):
        for written in pipeline.reconstruct(model, img, out_dir, stem):
            print(written)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "reconstruct": cmd_reconstruct,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON run config")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the config seed (u64)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--strict", action="store_true", default=argparse.SUPPRESS,
                        help="reject unknown config keys")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="malaria-ae", parents=[common],
                                     description="Reconstruction-error anomaly detection for cell images.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train on uninfected images")
    p = sub.add_parser("calibrate", parents=[common], help="fit the mean + k*std loss threshold")
    p.add_argument("--checkpoint")
    p.add_argument("--k", type=float)
    p.add_argument("--source", choices=["validation", "train"])
    p = sub.add_parser("evaluate", parents=[common], help="score the test split")
    p.add_argument("--checkpoint")
    p.add_argument("--threshold")
    p = sub.add_parser("predict", parents=[common], help="classify individual images")
    p.add_argument("--checkpoint")
    p.add_argument("--threshold")
    p.add_argument("images", nargs="+")
    p = sub.add_parser("reconstruct", parents=[common], help="write original/reconstruction PGM pairs")
    p.add_argument("--checkpoint")
    p.add_argument("images", nargs="+")
    return parser


def _report_error(exc, code, **extra) -> None:
    msg = {"error": type(exc).__name__, "exit_code": code, "message": str(exc), **extra}
    print(json.dumps(msg), file=sys.stderr)


def exit_code_for(exc) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, CheckpointError)):
        return EXIT_DATA
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, ValueError):
        return EXIT_CONFIG
    raise exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("out", None), ("strict", False), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes, anything else re-raised
        code = exit_code_for(exc)
        _report_error(exc, code)
        return code


if __name__ == "__main__":
    sys.exit(main())
