"""Orchestration: the iterative prune -> recover loop, the direct-pruning
baseline, and the comparison report."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from .checkpoint import save_checkpoint
from .evaluate import MetricSuite
from .model import TransformerModel
from .pruning import CalibrationSet, prune_one
from .recovery import RecoveryConfig, recover


@dataclass
class StopCriterion:
    target_layers: int | None = None
    max_iterations: int | None = None

    def __post_init__(self):
        if self.target_layers is None and self.max_iterations is None:
            raise ValueError("set target_layers and/or max_iterations")
        if self.target_layers is not None and self.target_layers < 1:
            raise ValueError("target_layers must be >= 1")

    def done(self, n_layers: int, iterations: int) -> bool:
        if self.target_layers is not None and n_layers <= self.target_layers:
            return True
        if self.max_iterations is not None and iterations >= self.max_iterations:
            return True
        return False


@dataclass
class IterationLog:
    iteration: int
    phase: str                       # "prune" | "recover"
    dropped_origin_index: int | None = None
    scores: list[float] | None = None
    loss_summary: dict | None = None
    metrics: dict | None = None
    seconds: float = 0.0
    seed: int = 0

    def to_dict(self) -> dict:
        return {"iter": self.iteration, "phase": self.phase,
                "dropped_origin_index": self.dropped_origin_index,
                "scores": self.scores, "loss_summary": self.loss_summary,
                "metrics": self.metrics, "seconds": self.seconds, "seed": self.seed}


class RunLogWriter:
    """Appends one JSON object per phase event; flushed immediately so an
    aborted run keeps everything through its last complete phase."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("")

    def append(self, entry: IterationLog):
        with open(self.path, "a") as f:
            f.write(json.dumps(entry.to_dict()) + "\n")


def _loss_summary(train_log: list[dict]) -> dict | None:
    if not train_log:
        return None
    totals = [row["total"] for row in train_log]
    return {"first": totals[0], "last": totals[-1],
            "min": min(totals), "steps": len(totals)}


def iterate(model: TransformerModel, calib: CalibrationSet, recovery_data,
            recovery_cfg: RecoveryConfig, stop: StopCriterion, *,
            metrics_fn=None, out_dir=None, recovery_enabled: bool = True,
            keep_all_checkpoints: bool = True,
            seed: int = 0) -> tuple[TransformerModel, list[IterationLog]]:
    """Alternate pruning and recovery until the stop criterion is met.

    The teacher for every recovery round is the ORIGINAL input model; the
    student's cumulative drop history drives the layer mapping.
    """
    if stop.target_layers is not None and model.n_layers <= stop.target_layers:
        raise ValueError(f"model already has {model.n_layers} <= target {stop.target_layers} layers")
    teacher = model
    current = model
    logs: list[IterationLog] = []
    writer = RunLogWriter(Path(out_dir) / "run_log.jsonl") if out_dir else None
    previous_ckpts: list[Path] = []

    def emit(entry: IterationLog, ckpt_model=None, ckpt_name=None):
        logs.append(entry)
        if writer:
            writer.append(entry)
        if out_dir and ckpt_model is not None:
            path = Path(out_dir) / ckpt_name
            save_checkpoint(ckpt_model, path)
            if not keep_all_checkpoints:
                for old in previous_ckpts:
                    old.unlink(missing_ok=True)
                previous_ckpts.clear()
            previous_ckpts.append(path)

    j = 0
    while not stop.done(current.n_layers, j):
        j += 1
        t0 = time.monotonic()
        pruned, report = prune_one(current, calib)
        dropped = sorted(set(pruned.drop_history) - set(current.drop_history))[0]
        metrics = metrics_fn(pruned).to_dict() if metrics_fn else None
        emit(IterationLog(iteration=j, phase="prune", dropped_origin_index=dropped,
                          scores=report.scores, metrics=metrics,
                          seconds=time.monotonic() - t0, seed=seed),
             ckpt_model=pruned, ckpt_name=f"iter{j:02d}_pruned.itrb")
        current = pruned

        if recovery_enabled:
            t0 = time.monotonic()
            recovered, train_log = recover(teacher, pruned, recovery_data, recovery_cfg)
            metrics = metrics_fn(recovered).to_dict() if metrics_fn else None
            emit(IterationLog(iteration=j, phase="recover",
                              dropped_origin_index=dropped,
                              loss_summary=_loss_summary(train_log), metrics=metrics,
                              seconds=time.monotonic() - t0, seed=seed),
                 ckpt_model=recovered, ckpt_name=f"iter{j:02d}_recovered.itrb")
            current = recovered
    return current, logs


def direct_prune(model: TransformerModel, calib: CalibrationSet,
                 n_drops: int) -> tuple[TransformerModel, list[IterationLog]]:
    """Remove n_drops blocks consecutively, re-scoring after each removal,
    with no recovery in between."""
    if n_drops >= model.n_layers:
        raise ValueError(f"cannot drop {n_drops} of {model.n_layers} blocks")
    current = model
    logs = []
    for j in range(1, n_drops + 1):
        t0 = time.monotonic()
        pruned, report = prune_one(current, calib)
        dropped = sorted(set(pruned.drop_history) - set(current.drop_history))[0]
        logs.append(IterationLog(iteration=j, phase="prune",
                                 dropped_origin_index=dropped, scores=report.scores,
                                 seconds=time.monotonic() - t0))
        current = pruned
    return current, logs


@dataclass
class ComparisonReport:
    """Per-metric Direct+R vs Iterative+R with diff = direct - iterative."""
    rows: list[dict] = field(default_factory=list)
    average_diff: float = 0.0

    def to_dict(self) -> dict:
        return {"rows": self.rows, "average_diff": self.average_diff}

    def render(self) -> str:
        w = max(len(r["metric"]) for r in self.rows) + 2
        lines = [f"{'metric':<{w}}{'Direct+R':>12}{'Iterative+R':>14}{'Diff':>10}"]
        for r in self.rows:
            lines.append(f"{r['metric']:<{w}}{r['direct']:>12.4f}"
                         f"{r['iterative']:>14.4f}{r['diff']:>10.4f}")
        lines.append(f"{'average diff':<{w}}{'':>12}{'':>14}{self.average_diff:>10.4f}")
        return "\n".join(lines)


def flatten_metrics(suite: MetricSuite | dict) -> dict[str, float]:
    d = suite.to_dict() if isinstance(suite, MetricSuite) else dict(suite)
    flat = {"perplexity": d["perplexity"]}
    for name, v in d.get("probe_accuracies", {}).items():
        flat[f"accuracy:{name}"] = v
    return flat


def compare(direct_metrics, iterative_metrics) -> ComparisonReport:
    """Table of Direct+R, Iterative+R, and their difference per metric."""
    direct = flatten_metrics(direct_metrics)
    iterative = flatten_metrics(iterative_metrics)
    if set(direct) != set(iterative):
        raise ValueError(f"metric sets differ: {sorted(direct)} vs {sorted(iterative)}")
    rows = [{"metric": m, "direct": direct[m], "iterative": iterative[m],
             "diff": direct[m] - iterative[m]} for m in sorted(direct)]
    avg = sum(r["diff"] for r in rows) / len(rows)
    return ComparisonReport(rows=rows, average_diff=avg)
