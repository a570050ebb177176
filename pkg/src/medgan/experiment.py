"""Desk-scale correction experiment: synthesize, train per mode and seed, evaluate."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

from .config import TrainConfig
from .dataset import DatasetConfig, build_dataset, read_manifest
from .metrics import METRICS
from .train import evaluate, train

DESK_DATA = DatasetConfig(size=64, seed=0, n_train=200, n_val=40)


@dataclass
class RunOutcome:
    mode: str
    seed: int
    method: str
    checkpoint: Path
    report_csv: Path
    rows_csv: Path
    corrected_ssim: float
    corrupted_ssim: float
    means: dict  # metric -> mean over the whole split
    seconds: float

    @property
    def improvement(self) -> float:
        return self.corrected_ssim - self.corrupted_ssim


@dataclass
class ExperimentSummary:
    runs: list = field(default_factory=list)

    def by_mode(self, mode: str) -> list[RunOutcome]:
        return [r for r in self.runs if r.mode == mode]

    def median_improvement(self, mode: str = "medgan") -> float:
        return statistics.median(r.improvement for r in self.by_mode(mode))

    def table(self) -> str:
        lines = ["mode      seed  " + "  ".join(f"{m:>7s}" for m in METRICS) + "  dSSIM    time"]
        baseline_done = False
        for r in self.runs:
            if not baseline_done:
                lines.append(f"{'input':<8s}  {'-':>4s}  {r.corrupted_ssim:7.4f}" + " " * 29 + "   (no correction)")
                baseline_done = True
            cells = "  ".join(f"{r.means[m]:7.4f}" for m in METRICS)
            lines.append(f"{r.mode:<8s}  {r.seed:>4d}  {cells}  {r.improvement:+.4f}  {r.seconds:5.0f}s")
        return "\n".join(lines)


def ensure_dataset(data_dir, config: DatasetConfig = DESK_DATA) -> Path:
    data_dir = Path(data_dir)
    if not (data_dir / "manifest.json").exists():
        build_dataset(config, data_dir)
    read_manifest(data_dir)
    return data_dir


def _split_means(report, method: str) -> dict:
    out = {}
    for m in METRICS:
        vals = [getattr(r, m) for r in report.rows if r.method == method]
        out[m] = sum(vals) / len(vals)
    return out


def run_one(data_dir, out_dir, mode: str, seed: int, max_steps: int = 2000, **overrides) -> RunOutcome:
    """Train one model and evaluate it on the validation split.

    Writes ``{mode}_s{seed}.mgck``, ``.log.csv``, ``.report.csv`` and
    ``.rows.csv`` into ``out_dir``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = out_dir / f"{mode}_s{seed}"
    cfg = TrainConfig(mode=mode, seed=seed, max_steps=max_steps, data=str(data_dir),
                      checkpoint=f"{stem}.mgck", log=f"{stem}.log.csv", **overrides)
    t0 = time.perf_counter()
    result = train(cfg)
    report = evaluate(result.checkpoint, data_dir, "val")
    seconds = time.perf_counter() - t0
    report_csv, rows_csv = Path(f"{stem}.report.csv"), Path(f"{stem}.rows.csv")
    report_csv.write_text(report.to_csv())
    rows_csv.write_text(report.rows_csv())
    method = cfg.method_label
    means = _split_means(report, method)
    return RunOutcome(mode, seed, method, Path(cfg.checkpoint), report_csv, rows_csv, means["ssim"],
                      _split_means(report, "no correction")["ssim"], means, seconds)


def run_experiment(work_dir, modes=("medgan", "pixel", "pix2pix"), seeds=(1, 2, 3), max_steps: int = 2000,
                   progress=None) -> ExperimentSummary:
    work_dir = Path(work_dir)
    data = ensure_dataset(work_dir / "data")
    summary = ExperimentSummary()
    for mode in modes:
        for seed in seeds:
            outcome = run_one(data, work_dir / "runs", mode, seed, max_steps)
            summary.runs.append(outcome)
            if progress:
                progress(outcome)
    return summary
