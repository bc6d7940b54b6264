"""``dlpl`` command line: gen-data, train, verify, inspect.

Exit codes: 0 success, 1 runtime or input failure, 2 usage error, 3 numerical divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config, save_config
from .tensor import ConfigurationError

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3
LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

log = logging.getLogger("dlpl")


class UsageError(Exception):
    pass


def setup_logging() -> None:
    level = LOG_LEVELS.get(os.environ.get("DLPL_LOG", "info").lower(), logging.INFO)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(message)s"))
    log.handlers[:] = [handler]
    log.setLevel(level)
    log.propagate = False


def _unit_interval(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {v}")
    return v


def _count(minimum: int):
    def parse(text: str) -> int:
        try:
            v = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
        if v < minimum:
            raise argparse.ArgumentTypeError(f"must be >= {minimum}, got {v}")
        return v
    return parse


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dlpl", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render the synthetic shifted-view segmentation dataset")
    g.add_argument("--out", default="data/dataset.bin")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-train", type=_count(0), default=2000)
    g.add_argument("--n-test", type=_count(0), default=500)
    g.add_argument("--warp-train", type=_unit_interval, default=0.1)
    g.add_argument("--warp-test", type=_unit_interval, default=0.4)
    g.add_argument("--img-size", type=_count(8), default=64)
    g.add_argument("--num-classes", type=_count(2), default=4)

    t = sub.add_parser("train", help="train a DLPL or baseline model",
                       description="Flags override values from --config. Training is "
                                   "bitwise deterministic only with --threads 1; more threads "
                                   "parallelise evaluation only.")
    t.add_argument("--config", help="JSON run configuration")
    t.add_argument("--data", help="dataset file written by gen-data")
    t.add_argument("--out-dir")
    t.add_argument("--baseline", action="store_true", default=None,
                   help="replace every DLPL block by a plain self-attention block")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=_count(1))
    t.add_argument("--threads", type=_count(1))
    t.add_argument("--n-train", type=_count(1), help="use only the first N training samples")
    t.add_argument("--n-test", type=_count(0), help="use only the first N test samples")

    v = sub.add_parser("verify", help="run gradient checks and numerical oracles")
    v.add_argument("--suite", action="append", help="run only this suite (repeatable)")

    i = sub.add_parser("inspect", help="dump per-block feature maps and statistics for one sample")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--sample-index", type=int, default=0)
    i.add_argument("--out-dir", default="inspect")
    i.add_argument("--data", help="dataset file (default: the one recorded with the checkpoint)")
    i.add_argument("--config", help="run configuration (default: config.json beside the checkpoint)")
    i.add_argument("--split", choices=["train", "test"], default="test")
    i.add_argument("--mode", choices=["auto", "self", "transformed"], default="auto")
    return ap


# ------------------------------------------------------------------ commands

def cmd_gen_data(args) -> int:
    from .harness.data import generate_dataset, save_dataset
    t0 = time.time()
    try:
        ds = generate_dataset(args.n_train, args.n_test, args.num_classes, args.img_size,
                              args.warp_train, args.warp_test, seed=args.seed)
    except (ConfigurationError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(out, ds)
    log.info("wrote %s: %d train / %d test samples (%.1fs)", out, args.n_train, args.n_test,
             time.time() - t0)
    return EXIT_OK


def resolve_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {"data": args.data, "out_dir": args.out_dir, "baseline": args.baseline,
                 "seed": args.seed, "epochs": args.epochs, "threads": args.threads,
                 "n_train": args.n_train, "n_test": args.n_test}
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    cfg.validate()
    return cfg


def _first_n(ds, n_train: int, n_test: int):
    from .harness.data import TEST, TRAIN
    idx = np.concatenate([np.flatnonzero(ds.split == TRAIN)[:n_train],
                          np.flatnonzero(ds.split == TEST)[:n_test]])
    return type(ds)(ds.images[idx], ds.labels[idx], ds.view_h[idx], ds.split[idx], ds.num_classes)


def cmd_train(args) -> int:
    from .harness.data import load_dataset
    from .harness.model import SegModel
    from .harness.train import DivergenceError, train, write_run_meta
    try:
        cfg = resolve_run_config(args)
    except (ConfigError, ConfigurationError) as exc:
        raise UsageError(str(exc)) from exc
    data = Path(cfg.data)
    if not data.is_file():
        log.error("dataset not found: %s (create it with `dlpl gen-data --out %s`)", data, data)
        return EXIT_FAIL
    ds = _first_n(load_dataset(data), cfg.n_train, cfg.n_test)
    if ds.img_size != cfg.img_size or ds.num_classes != cfg.num_classes:
        log.error("dataset %s has %dpx images and %d classes; config expects %dpx and %d",
                  data, ds.img_size, ds.num_classes, cfg.img_size, cfg.num_classes)
        return EXIT_FAIL
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(out / "config.json", cfg)
    mcfg = cfg.model_config()
    model = SegModel(mcfg)
    counts = model.parameter_counts()
    log.info("%s model: %d parameters (%s)", "baseline" if mcfg.baseline else "DLPL", counts["total"],
             ", ".join(f"{k}={v}" for k, v in counts.items() if k != "total"))
    t0 = time.time()
    try:
        hist = train(model, ds, mcfg, out_dir=out, threads=cfg.threads)
    except DivergenceError as exc:
        step = exc.history.steps[-1]
        write_run_meta(out, cfg, {"status": "diverged", "step": exc.step, "epoch": exc.epoch,
                                  "losses": {"task": step[2], "rec": step[3], "total": step[4]}})
        log.error("training diverged: %s; last good checkpoint kept in %s", exc, out)
        return EXIT_DIVERGED
    last = hist.epochs[-1]
    write_run_meta(out, cfg, {"status": "ok", "seconds": round(time.time() - t0, 1),
                              "parameters": counts, "final": asdict(last)})
    log.info("done: test mIoU %.2f, train mIoU %.2f (%s)", last.test_miou, last.train_miou, out)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import SUITES, run_suites
    names = args.suite or list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise UsageError(f"unknown suite(s): {', '.join(unknown)}; choose from {', '.join(SUITES)}")
    results = run_suites(names, echo=print)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_FAIL if failed else EXIT_OK


def _inspect_config(args) -> RunConfig:
    path = Path(args.config) if args.config else Path(args.checkpoint).with_name("config.json")
    return load_config(path) if path.is_file() else RunConfig()


def cmd_inspect(args) -> int:
    from .bundle import BundleFormatError
    from .harness.data import TEST, TRAIN, load_dataset
    from .harness.metrics import confusion_matrix, metrics_from_confusion
    from .harness.model import pointness_scores
    from .harness.train import load_checkpoint, predict
    from .harness.viz import dump_feature_maps
    from .pia import SELF, TRANSFORMED
    from .space import log_density_and_responsibilities, responsibility_entropy

    try:
        cfg = _inspect_config(args)
    except ConfigError as exc:
        log.error("bad configuration: %s", exc)
        return EXIT_FAIL
    if not Path(args.checkpoint).is_file():
        log.error("checkpoint not found: %s", args.checkpoint)
        return EXIT_FAIL
    try:
        model, epoch = load_checkpoint(args.checkpoint, cfg.model_config())
    except (BundleFormatError, OSError, KeyError, ValueError) as exc:
        log.error("cannot load checkpoint %s: %s", args.checkpoint, exc)
        return EXIT_FAIL
    data = Path(args.data or cfg.data)
    if not data.is_file():
        log.error("dataset not found: %s", data)
        return EXIT_FAIL
    ds = load_dataset(data).subset(TEST if args.split == "test" else TRAIN)
    if not 0 <= args.sample_index < len(ds):
        raise UsageError(f"--sample-index {args.sample_index} out of range for {len(ds)} "
                         f"{args.split} samples")
    sample = ds[args.sample_index]
    ready = bool(model.spaces) and all(s.initialized for s in model.spaces)
    mode = {"auto": TRANSFORMED if ready else SELF, "self": SELF, "transformed": TRANSFORMED}[args.mode]
    scores = pointness_scores(sample.image[None], model.cfg)
    try:
        dump = dump_feature_maps(model, sample.image, args.out_dir, mode, scores,
                                 tag=f"{args.split}{args.sample_index}")
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_FAIL
    pred = predict(model, sample.image[None], scores, mode)
    seg = metrics_from_confusion(confusion_matrix(pred, sample.labels[None], ds.num_classes))
    entropies = []
    for i, d in enumerate(dump.diagnostics):
        if d.transform:
            entropies.append(d.transform[0].entropy)
        elif model.spaces and model.spaces[i].initialized:
            _, r = log_density_and_responsibilities(model.spaces[i], d.perspective[0].ravel())
            entropies.append(responsibility_entropy(r))
        else:
            entropies.append(float("nan"))
    stats = {"sample": args.sample_index, "split": args.split, "epoch": epoch, "mode": mode,
             "miou": round(seg.miou, 4),
             "rec_loss": [round(d.rec_loss, 6) for d in dump.diagnostics],
             "responsibility_entropy": [round(e, 6) for e in entropies]}
    print("stats " + " ".join(
        [f"sample={args.sample_index}", f"mode={mode}", f"miou={seg.miou:.2f}"]
        + [f"block{i}_entropy={e:.4f}" for i, e in enumerate(entropies)]))
    for i, d in enumerate(dump.diagnostics):
        for line in (d.transform[0].lines() if d.transform else []):
            log.debug("block%d %s", i, line)
    (Path(args.out_dir) / "stats.json").write_text(json.dumps(stats, indent=2) + "\n")
    log.info("wrote %d graymaps to %s", len(dump.files), args.out_dir)
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "verify": cmd_verify, "inspect": cmd_inspect}


def main(argv=None) -> int:
    setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"dlpl {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ConfigError) as exc:
        log.error("%s", exc)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
