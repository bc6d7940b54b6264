"""Training with task cross-entropy plus weighted reconstruction loss, and evaluation."""
from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import tensor as T
from ..bundle import load_bundle, save_bundle
from ..config import ModelConfig
from ..optim import Adam
from ..pia import SELF, TRANSFORMED, PiaSchedule
from .data import TEST, TRAIN, Dataset
from .metrics import SegMetrics, confusion_matrix, metrics_from_confusion
from .model import SegModel, pointness_scores

log = logging.getLogger("dlpl")

CSV_HEADER = ["epoch", "task_loss", "rec_loss", "total", "train_miou", "test_miou", "mode"]


class DivergenceError(RuntimeError):
    def __init__(self, step: int, epoch: int, history: "History"):
        super().__init__(f"loss became non-finite at step {step} (epoch {epoch})")
        self.step = step
        self.epoch = epoch
        self.history = history


@dataclass
class EpochRecord:
    epoch: int
    task_loss: float
    rec_loss: float
    total: float
    train_miou: float
    test_miou: float
    mode: str
    block_modes: list = field(default_factory=list)


@dataclass
class History:
    epochs: list = field(default_factory=list)
    steps: list = field(default_factory=list)      # (step, epoch, task, rec, total)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in self.epochs:
                w.writerow([r.epoch] + [repr(float(v)) for v in
                                        (r.task_loss, r.rec_loss, r.total, r.train_miou, r.test_miou)]
                           + [r.mode])


def predict(model: SegModel, images: np.ndarray, scores: np.ndarray, mode: str) -> np.ndarray:
    with T.no_grad():
        res = model.forward(images, scores, mode)
    s = model.cfg.img_size
    return res.logits.data.argmax(axis=-1).reshape(len(images), s, s)


def evaluate(model: SegModel, ds: Dataset, mode: str = SELF, scores: np.ndarray | None = None,
             batch_size: int = 32, threads: int = 1) -> SegMetrics:
    if len(ds) == 0:
        raise ValueError("cannot evaluate an empty split")
    if scores is None:
        scores = pointness_scores(ds.images, model.cfg)
    starts = range(0, len(ds), batch_size)

    def one(i):
        sl = slice(i, i + batch_size)
        pred = predict(model, ds.images[sl], scores[sl], mode)
        return confusion_matrix(pred, ds.labels[sl], ds.num_classes)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            confs = list(pool.map(one, starts))
    else:
        confs = [one(i) for i in starts]
    return metrics_from_confusion(sum(confs))


def save_checkpoint(path, model: SegModel, epoch: int) -> None:
    rec = model.state_records()
    rec["meta.epoch"] = np.array([float(epoch)])
    save_bundle(path, rec)


def load_checkpoint(path, cfg: ModelConfig) -> tuple:
    records = load_bundle(path)
    model = SegModel(cfg)
    model.load_records(records)
    epoch = int(records.get("meta.epoch", np.array([-1.0]))[0])
    return model, epoch


def train(model: SegModel, dataset: Dataset, cfg: ModelConfig | None = None,
          out_dir=None, threads: int = 1, eval_every: int = 1) -> History:
    """Mini-batch Adam on cross-entropy + lambda * mean block reconstruction loss.

    Perspective spaces are EMA-updated after every step; the transformed path
    switches on at ceil(warmup_fraction * epochs).  When ``out_dir`` is given,
    ``history.csv`` and ``checkpoint.bin`` are written after each epoch.
    """
    cfg = cfg or model.cfg
    train_ds, test_ds = dataset.subset(TRAIN), dataset.subset(TEST)
    train_scores = pointness_scores(train_ds.images, cfg)
    test_scores = pointness_scores(test_ds.images, cfg) if len(test_ds) else None
    schedule = PiaSchedule(cfg.warmup_fraction, cfg.epochs)
    opt = Adam(model.params, cfg.learning_rate)
    rng = np.random.default_rng([cfg.seed, 99])
    hist = History()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    step = 0
    n = len(train_ds)
    for epoch in range(cfg.epochs):
        mode = SELF if model.is_baseline else schedule.mode(epoch)
        order = rng.permutation(n)
        conf = np.zeros((dataset.num_classes, dataset.num_classes), dtype=np.int64)
        sums = np.zeros(3)
        batches = 0
        block_modes = set()
        t0 = time.time()
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            opt.zero_grad()
            res = model.forward(train_ds.images[idx], train_scores[idx], mode)
            labels = train_ds.labels[idx].reshape(len(idx), -1).astype(np.int64)
            task = T.cross_entropy(res.logits, labels)
            rec = res.rec_loss
            total = task if cfg.rec_weight == 0 else T.add(task, T.mul(rec, cfg.rec_weight))
            values = (float(task.data), float(rec.data), float(total.data))
            if not all(np.isfinite(values)):
                hist.steps.append((step, epoch) + values)
                raise DivergenceError(step, epoch, hist)
            total.backward()
            opt.step()
            if res.perspectives:
                model.update_spaces(res.perspectives)
            block_modes.update(d.mode for d in res.diagnostics)
            pred = res.logits.data.argmax(axis=-1)
            conf += confusion_matrix(pred, labels, dataset.num_classes)
            hist.steps.append((step, epoch) + values)
            sums += values
            batches += 1
            step += 1
        task_m, rec_m = sums[0] / batches, sums[1] / batches
        total_m = sums[2] / batches
        test_miou = float("nan")
        if test_scores is not None and (epoch % eval_every == 0 or epoch == cfg.epochs - 1):
            test_miou = evaluate(model, test_ds, mode, test_scores, threads=threads).miou
        train_miou = metrics_from_confusion(conf).miou
        rec_row = EpochRecord(epoch, task_m, rec_m, total_m, train_miou, test_miou, mode,
                              sorted(block_modes))
        hist.epochs.append(rec_row)
        log.info("epoch %d mode=%s task=%.4f rec=%.4f total=%.4f train_miou=%.2f test_miou=%.2f (%.1fs)",
                 epoch, mode, task_m, rec_m, total_m, train_miou, test_miou, time.time() - t0)
        if out is not None:
            hist.write_csv(out / "history.csv")
            save_checkpoint(out / "checkpoint.bin", model, epoch)
    return hist


def write_run_meta(out_dir, cfg, extra: dict | None = None) -> None:
    doc = {"config": asdict(cfg)}
    doc.update(extra or {})
    Path(out_dir, "run.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
