"""Command-line front end: ``reconfnet <subcommand> ...``.

Exit status: 0 success, 1 usage error, 2 data or format error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (DatasetManifest, fold_split, ingest_directory, load_dataset, save_dataset,
                   synth_generate)
from .errors import FormatError, NumericError
from .evaluation import cross_validate
from .gradcheck import TINY_CONFIG, TINY_LATENT, check_network
from .latent import infer_all
from .network import ModelConfig, init_params, transfer_pretrained
from .training import LOG_HEADER, TrainConfig, lsbp_train, pretrain

log = logging.getLogger("reconfnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_LIMIT = 1e-4

MODEL_KEYS = {f.name: f for f in dataclasses.fields(ModelConfig)}
TRAIN_KEYS = {f.name: f for f in dataclasses.fields(TrainConfig)}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# configuration

def parse_config_text(text, source="<config>"):
    """``key = value`` lines; blank lines and ``#`` comments ignored."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{source}:{n}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def _convert(key, raw):
    if key in MODEL_KEYS:
        default = MODEL_KEYS[key].default
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.replace("x", ",").split(","))
        return int(raw)
    if key == "mode":
        return raw
    return type(TRAIN_KEYS[key].default)(raw)


def build_configs(base_model: dict, settings: dict):
    """Apply string settings on top of ``base_model``; returns (ModelConfig, TrainConfig)."""
    model, train = dict(base_model), {}
    for key, raw in settings.items():
        if key not in MODEL_KEYS and key not in TRAIN_KEYS:
            raise UsageError(f"unknown configuration key {key!r}")
        try:
            value = _convert(key, raw)
        except ValueError:
            raise UsageError(f"bad value for {key}: {raw!r}") from None
        (model if key in MODEL_KEYS else train)[key] = value
    try:
        return ModelConfig(**model), TrainConfig(**train)
    except ValueError as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def _settings(args):
    settings = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        settings.update(parse_config_text(path.read_text(), str(path)))
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        settings[key.strip()] = value.strip()
    if getattr(args, "seed", None) is not None:
        settings["seed"] = str(args.seed)
    if getattr(args, "mode", None):
        settings["mode"] = args.mode
    return settings


def _manifest_model(manifest: DatasetManifest, samples):
    K = len(manifest.class_names) or max(s.label for s in samples)
    return {"A": manifest.A, "frame_h": manifest.frame_h, "frame_w": manifest.frame_w,
            "channels": manifest.channels, "K": K}


def _echo(model: ModelConfig, train: TrainConfig):
    for name in MODEL_KEYS:
        log.info("config %s = %s", name, getattr(model, name))
    for name in TRAIN_KEYS:
        log.info("config %s = %s", name, getattr(train, name))


def _select(samples, manifest, fold, keep):
    """Samples in fold ``fold`` (keep=True) or outside it (keep=False)."""
    if fold is None:
        return samples
    return [s for s, e in zip(samples, manifest.entries) if (e.fold == fold) == keep]


def _log_writer(path):
    if path is None:
        return None, None
    fh = open(path, "w")
    fh.write(LOG_HEADER + "\n")

    def sink(line):
        fh.write(line + "\n")
        fh.flush()
    return sink, fh


# ---------------------------------------------------------------------------
# subcommands

def cmd_preprocess(args):
    manifest = ingest_directory(args.raw_dir, args.out_dir, size=tuple(args.size),
                               folds=args.folds, seed=args.seed or 0)
    log.info("wrote %d samples to %s", len(manifest.entries), args.out_dir)


def cmd_synth(args):
    model, _ = build_configs({}, _settings(args))
    channels = 1 if args.gray else model.channels
    model = model.replace(channels=channels)
    samples, manifest = synth_generate(args.seed or 0, args.classes, args.per_class, model,
                                       n_subjects=args.subjects, noise=args.noise,
                                       channels=channels)
    if args.folds:
        manifest = fold_split(manifest, args.folds, args.seed or 0)
    path = save_dataset(args.out_dir, samples, manifest)
    log.info("wrote %d synthetic samples and %s", len(samples), path)


def _load_for_training(args):
    samples, manifest = load_dataset(args.manifest)
    model, train = build_configs(_manifest_model(manifest, samples), _settings(args))
    samples = _select(samples, manifest, args.exclude_fold, keep=False)
    if not samples:
        raise ValueError("no training samples selected")
    _echo(model, train)
    return samples, model, train


def cmd_pretrain(args):
    samples, model, train = _load_for_training(args)
    if model.channels != 1:
        raise ValueError("pretrain expects a single-channel (gray) dataset")
    train = dataclasses.replace(train, mode="pretrain_2d")
    sink, fh = _log_writer(args.log)
    try:
        params, _ = lsbp_train(samples, init_params(model, train.seed), train, model,
                               log_sink=sink)
    finally:
        if fh:
            fh.close()
    save_checkpoint(params, model, args.out)
    log.info("saved pretrained checkpoint %s", args.out)


def cmd_train(args):
    samples, model, train = _load_for_training(args)
    if args.init_from:
        pre, gray = load_checkpoint(args.init_from)
        start = transfer_pretrained(pre, gray, model, seed=train.seed)
        log.info("initialised from %s", args.init_from)
    else:
        start = init_params(model, train.seed)
    sink, fh = _log_writer(args.log)
    try:
        params, state = lsbp_train(samples, start, train, model, threads=args.threads,
                                   log_sink=sink)
    finally:
        if fh:
            fh.close()
    save_checkpoint(params, model, args.out)
    log.info("saved %s after %d iterations (converged=%s)", args.out, state.iteration,
             state.converged)


def cmd_infer(args):
    params, model = load_checkpoint(args.checkpoint)
    samples, manifest = load_dataset(args.manifest)
    samples = _select(samples, manifest, args.fold, keep=True)
    results = infer_all(samples, params, model, threads=args.threads)
    header = "path,predicted_label,probability," + ",".join(
        f"s{i},t{i}" for i in range(1, model.M + 1))
    lines = [header]
    for s, (y, H, p) in zip(samples, results):
        lines.append(f"{s.path},{y},{p!r}," + ",".join(str(v) for v in H.key()))
    _emit("\n".join(lines) + "\n", args.out)


def cmd_eval(args):
    samples, manifest = load_dataset(args.manifest)
    model, train = build_configs(_manifest_model(manifest, samples), _settings(args))
    if args.folds:
        manifest = fold_split(manifest, args.folds, train.seed)
    folds = [e.fold for e in manifest.entries]
    if len(set(folds)) < 2:
        raise ValueError("eval needs at least two folds; pass --folds")
    _echo(model, train)
    cv = cross_validate(samples, folds, model, train, threads=args.threads)
    _emit(cv.report(manifest.class_names or None) + "\n", args.out)


def cmd_gradcheck(args):
    err, _ = check_network(TINY_CONFIG, TINY_LATENT, seed=args.seed)
    print(f"max_relative_error,{err:.6e}")
    if err > GRADCHECK_LIMIT:
        log.error("gradient check failed: %.3e > %.0e", err, GRADCHECK_LIMIT)
        return EXIT_NUMERIC
    return EXIT_OK


def _emit(text, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="reconfnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, config=True):
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int, default=1)
        if config:
            sp.add_argument("--config", help="file of 'key = value' lines")
            sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                            help="override one config key (repeatable)")

    sp = sub.add_parser("preprocess", help="raw gray/depth frame dirs -> sample containers")
    sp.add_argument("raw_dir")
    sp.add_argument("out_dir")
    sp.add_argument("--size", type=int, nargs=2, default=(60, 80), metavar=("H", "W"))
    sp.add_argument("--folds", type=int, default=1)
    common(sp, config=False)

    sp = sub.add_parser("synth", help="write a synthetic dataset and manifest")
    sp.add_argument("out_dir")
    sp.add_argument("--classes", type=int, default=3)
    sp.add_argument("--per-class", type=int, default=20)
    sp.add_argument("--subjects", type=int, default=4)
    sp.add_argument("--noise", type=float, default=0.05)
    sp.add_argument("--gray", action="store_true", help="single-channel videos for pretraining")
    sp.add_argument("--folds", type=int, default=0)
    common(sp)

    for name, helptext in (("pretrain", "even-split backprop on gray videos"),
                           ("train", "latent structural training")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("manifest")
        sp.add_argument("-o", "--out", required=True, help="checkpoint path")
        sp.add_argument("--log", help="training log (CSV)")
        sp.add_argument("--exclude-fold", type=int, help="train on every other fold")
        if name == "train":
            sp.add_argument("--init-from", help="pretrained gray checkpoint")
            sp.add_argument("--mode", choices=("lsbp", "fixed_even"))
        common(sp)

    sp = sub.add_parser("infer", help="label and segmentation per sample")
    sp.add_argument("checkpoint")
    sp.add_argument("manifest")
    sp.add_argument("-o", "--out")
    sp.add_argument("--fold", type=int, help="only samples of this fold")
    common(sp, config=False)

    sp = sub.add_parser("eval", help="subject-wise cross-validation")
    sp.add_argument("manifest")
    sp.add_argument("--folds", type=int, default=0, help="re-split subjects into N folds")
    sp.add_argument("--mode", choices=("lsbp", "fixed_even"))
    sp.add_argument("-o", "--out")
    common(sp)

    sp = sub.add_parser("gradcheck", help="finite-difference check on a tiny model")
    sp.add_argument("--seed", type=int, default=7)
    return p


COMMANDS = {"preprocess": cmd_preprocess, "synth": cmd_synth, "pretrain": cmd_pretrain,
            "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required")
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be at least 1")
        status = COMMANDS[args.command](args)
        return EXIT_OK if status is None else status
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
