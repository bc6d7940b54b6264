"""Shifted-view directional experiment: DLPL vs plain attention over several seeds.

Each run is cached as soon as it finishes, keyed by its full configuration, so an
interrupted sweep resumes where it stopped and a finished one is read back for free.
"""
from __future__ import annotations

import hashlib
import json
import logging
import statistics
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .config import ModelConfig
from .harness.data import generate_dataset
from .harness.model import SegModel
from .harness.train import train

log = logging.getLogger("dlpl")

REFERENCE_GAP = 58.67 - 52.03      # large-scale reference gap (58.67 vs 52.03 mIoU), reported alongside only
SEEDS = (0, 1, 2)
EPOCHS = 10
BUDGET_SECONDS = 3 * 3600


@dataclass
class DataSpec:
    n_train: int = 2000
    n_test: int = 500
    warp_train: float = 0.1
    warp_test: float = 0.4


@dataclass
class RunResult:
    variant: str
    seed: int
    test_miou: float
    train_miou: float
    cpu_seconds: float
    history: list = field(default_factory=list)       # per-epoch test mIoU


def run_key(cfg: ModelConfig, data: DataSpec) -> str:
    doc = json.dumps({"model": asdict(cfg), "data": asdict(data)}, sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()[:16]


def _load(path: Path) -> dict:
    return json.loads(path.read_text()) if path.is_file() else {"runs": {}}


def run_one(cfg: ModelConfig, data: DataSpec, out_dir: Path | None = None) -> RunResult:
    ds = generate_dataset(data.n_train, data.n_test, cfg.num_classes, cfg.img_size,
                          data.warp_train, data.warp_test, seed=cfg.seed)
    t0 = time.process_time()
    hist = train(SegModel(cfg), ds, cfg, out_dir=out_dir)
    cpu = time.process_time() - t0
    last = hist.epochs[-1]
    return RunResult("baseline" if cfg.baseline else "dlpl", cfg.seed, last.test_miou, last.train_miou,
                     cpu, [r.test_miou for r in hist.epochs])


def directional(cache: Path, seeds=SEEDS, epochs: int = EPOCHS, data: DataSpec | None = None,
                base: ModelConfig | None = None, runs_dir: Path | None = None,
                compute: bool = True) -> dict:
    """Return the sweep summary, training only the runs missing from ``cache``."""
    data = data or DataSpec()
    base = replace(base or ModelConfig(), epochs=epochs)
    cache = Path(cache)
    store = _load(cache)
    results = {}
    for seed in seeds:
        for baseline in (True, False):
            cfg = replace(base, seed=seed, baseline=baseline)
            key = run_key(cfg, data)
            if key not in store["runs"]:
                if not compute:
                    raise FileNotFoundError(f"run {key} ({'baseline' if baseline else 'dlpl'}, "
                                            f"seed {seed}) not in {cache}")
                log.info("training %s seed %d (%d epochs)", "baseline" if baseline else "dlpl", seed, epochs)
                sub = None if runs_dir is None else Path(runs_dir) / f"{'baseline' if baseline else 'dlpl'}_seed{seed}"
                res = run_one(cfg, data, sub)
                store["runs"][key] = asdict(res)
                cache.parent.mkdir(parents=True, exist_ok=True)
                cache.write_text(json.dumps(store, indent=2, sort_keys=True) + "\n")
            results[(seed, baseline)] = RunResult(**store["runs"][key])
    gaps = [results[(s, False)].test_miou - results[(s, True)].test_miou for s in seeds]
    cpu = sum(r.cpu_seconds for r in results.values())
    return {"seeds": list(seeds), "epochs": epochs, "data": asdict(data),
            "dlpl": [results[(s, False)].test_miou for s in seeds],
            "baseline": [results[(s, True)].test_miou for s in seeds],
            "gaps": gaps, "median_gap": statistics.median(gaps), "reference_gap": REFERENCE_GAP,
            "cpu_seconds": cpu, "within_budget": cpu < BUDGET_SECONDS}


def format_summary(summary: dict) -> str:
    rows = [f"{'seed':>4} {'baseline':>9} {'dlpl':>9} {'gap':>7}"]
    for s, b, d, g in zip(summary["seeds"], summary["baseline"], summary["dlpl"], summary["gaps"]):
        rows.append(f"{s:>4} {b:9.2f} {d:9.2f} {g:+7.2f}")
    rows.append(f"median gap {summary['median_gap']:+.2f} mIoU "
                f"(large-scale reference {summary['reference_gap']:.2f})")
    rows.append(f"cpu time {summary['cpu_seconds'] / 3600:.2f} h for {2 * len(summary['seeds'])} runs, "
                f"{summary['epochs']} epochs each")
    return "\n".join(rows)
