"""Validation loop: remove ranked classes, retrain, tabulate accuracy.

Removal sets are nested across counts within a strategy, and run seeds are
paired across strategies and counts, so curve comparisons are paired
comparisons. A count-0 baseline (full source set) is always included.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Sequence

import numpy as np

from .errors import InvalidConfigError
from .influence import AggregateInfluence, rank
from .pipeline import (
    SourceSpec,
    TargetSpec,
    TrainConfig,
    TaskData,
    accuracy,
    campaign_tasks,
    evaluate,
    run_seed,
    train_source_model,
    transfer,
)
from .rng import SplitMix64, derive_seed

_RANDOM_STREAM = 0x8A2D

STRATEGIES = ("top", "bottom", "random", "explicit")


@dataclass(frozen=True)
class RemovalSchedule:
    strategy: str
    counts: tuple[int, ...]
    removal_order: tuple[int, ...]  # classes removed in prefix order
    seed: int = 0
    source_ranking: dict = field(default_factory=dict)

    def removal_set(self, count: int) -> tuple[int, ...]:
        if count > len(self.removal_order):
            raise InvalidConfigError(f"count {count} exceeds schedule depth")
        return self.removal_order[:count]


def make_schedule(
    agg: AggregateInfluence,
    strategy: str,
    counts: Sequence[int],
    seed: int = 0,
    explicit: Sequence[int] | None = None,
) -> RemovalSchedule:
    """Removal order for a strategy; prefixes give the per-count removal sets."""
    if strategy not in STRATEGIES:
        raise InvalidConfigError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    counts = tuple(int(c) for c in counts)
    if list(counts) != sorted(counts) or (counts and counts[0] < 0):
        raise InvalidConfigError("counts must be ascending and non-negative")
    k = agg.values.size
    if counts and counts[-1] >= k:
        raise InvalidConfigError(f"cannot remove {counts[-1]} of {k} classes")
    valid_ids = np.flatnonzero(agg.valid)
    if strategy == "top":
        order = rank(agg, "top", valid_ids.size)
    elif strategy == "bottom":
        order = rank(agg, "bottom", valid_ids.size)
    elif strategy == "random":
        stream = SplitMix64(derive_seed(seed, _RANDOM_STREAM))
        perm = stream.permutation(valid_ids.size)
        order = valid_ids[perm].tolist()
    else:
        if explicit is None:
            raise InvalidConfigError("explicit strategy needs an explicit class list")
        order = [int(c) for c in explicit]
        if len(set(order)) != len(order):
            raise InvalidConfigError("explicit removal list contains duplicates")
        for c in order:
            if not 0 <= c < k:
                raise InvalidConfigError(f"explicit class {c} out of range")
    return RemovalSchedule(
        strategy=strategy,
        counts=counts,
        removal_order=tuple(order),
        seed=seed,
        source_ranking=dict(agg.provenance),
    )


@dataclass
class CounterfactualTable:
    rows: list[tuple[str, int, int, float]]  # (strategy, removed_count, run, accuracy)

    def summary(self) -> list[tuple[str, int, float, float, float, int]]:
        """Per (strategy, count): mean, sample std, 95% CI half-width, runs."""
        cells: dict[tuple[str, int], list[float]] = {}
        for strategy, count, _, acc in self.rows:
            cells.setdefault((strategy, count), []).append(acc)
        out = []
        for (strategy, count), accs in sorted(cells.items()):
            arr = np.asarray(accs)
            std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
            half = 1.96 * std / math.sqrt(arr.size) if arr.size > 1 else 0.0
            out.append((strategy, count, float(arr.mean()), std, half, arr.size))
        return out

    def cell(self, strategy: str, count: int) -> np.ndarray:
        return np.asarray(
            [acc for s, c, _, acc in self.rows if s == strategy and c == count]
        )


def _accuracy_of(tasks: TaskData, classes: Sequence[int], config: TrainConfig, seed: int) -> float:
    from dataclasses import replace

    cfg = replace(config, seed=seed)
    model = train_source_model(tasks.source_x, tasks.source_y, classes, cfg)
    transferred = transfer(model, tasks.train_x, tasks.train_y, cfg)
    logits, labels = evaluate(transferred, tasks.test_x, tasks.test_y)
    return accuracy(logits, labels)


def run_counterfactual(
    schedule: RemovalSchedule,
    source_spec: SourceSpec,
    target_spec: TargetSpec,
    config: TrainConfig,
    runs: int,
    tasks: TaskData | None = None,
) -> CounterfactualTable:
    """Retrain on the full class set minus each removal prefix, `runs` times.

    Run r of every cell uses the same derived training seed, so accuracies
    are paired across counts and across strategies built on the same config.
    """
    if runs < 1:
        raise InvalidConfigError("runs must be >= 1")
    if tasks is None:
        tasks = campaign_tasks(source_spec, target_spec, config)
    all_classes = list(range(source_spec.num_classes))
    counts = schedule.counts if 0 in schedule.counts else (0,) + schedule.counts
    rows = []
    for count in counts:
        removed = set(schedule.removal_set(count))
        kept = [c for c in all_classes if c not in removed]
        for r in range(runs):
            try:
                acc = _accuracy_of(tasks, kept, config, run_seed(config.seed, r))
            except Exception as exc:
                raise type(exc)(
                    f"cell (strategy={schedule.strategy}, count={count}, run={r}): {exc}"
                ) from exc
            rows.append((schedule.strategy, count, r, acc))
    return CounterfactualTable(rows=rows)


def merge_tables(tables: Sequence[CounterfactualTable]) -> CounterfactualTable:
    rows: list[tuple[str, int, int, float]] = []
    for t in tables:
        rows.extend(t.rows)
    return CounterfactualTable(rows=rows)


def write_table_csv(table: CounterfactualTable, dest: str | IO[str]) -> None:
    def _emit(fh):
        writer = csv.writer(fh)
        writer.writerow(["strategy", "removed_count", "run", "accuracy"])
        for strategy, count, r, acc in table.rows:
            writer.writerow([strategy, count, r, repr(acc)])

    if hasattr(dest, "write"):
        _emit(dest)
    else:
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            _emit(fh)


def read_table_csv(source: str | IO[str]) -> CounterfactualTable:
    def _parse(fh) -> CounterfactualTable:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["strategy", "removed_count", "run", "accuracy"]:
            raise InvalidConfigError(f"unexpected table header {header}")
        rows = [(s, int(c), int(r), float(a)) for s, c, r, a in reader]
        return CounterfactualTable(rows=rows)

    if hasattr(source, "read"):
        return _parse(source)
    with open(source, "r", newline="", encoding="utf-8") as fh:
        return _parse(fh)


def write_report(table: CounterfactualTable, directory: str) -> dict:
    """Summary CSV, per-strategy curve files, and the max-improvement scalar."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    summary = table.summary()
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "removed_count", "mean", "std", "ci95_half_width", "runs"])
        for row in summary:
            writer.writerow([row[0], row[1], repr(row[2]), repr(row[3]), repr(row[4]), row[5]])
    strategies = sorted({s for s, *_ in summary})
    for strategy in strategies:
        with open(out / f"curve_{strategy}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["removed_count", "mean", "std", "runs"])
            for s, count, mean, std, _, runs in summary:
                if s == strategy:
                    writer.writerow([count, repr(mean), repr(std), runs])
    baseline = next((mean for s, c, mean, *_ in summary if c == 0), None)
    bottom_means = [mean for s, c, mean, *_ in summary if s == "bottom" and c > 0]
    if baseline is not None and bottom_means:
        max_improvement = max(bottom_means) - baseline
    else:
        max_improvement = 0.0
    payload = {"max_improvement": max_improvement, "baseline_mean": baseline}
    (out / "max_improvement.json").write_text(json.dumps(payload, indent=2))
    return payload
