"""Queries over influence matrices and example-level weights.

Projection (which target examples a source class helped most), mistake
debugging (which source classes hurt one example, optionally verified by
paired reruns without the offender), and surfacing of extreme example-level
weights (leakage and mislabeled-point candidates).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .datamodels import DatamodelWeights
from .errors import FlaggedClassError, InvalidConfigError
from .influence import InfluenceMatrix
from .pipeline import (
    SourceSpec,
    TargetSpec,
    TrainConfig,
    TaskData,
    campaign_tasks,
    evaluate,
    run_seed,
    train_source_model,
    transfer,
)


@dataclass
class ProjectionResult:
    class_id: int
    example_ids: list[int]
    influences: list[float]


@dataclass
class DebugReport:
    example_id: int
    class_ids: list[int]
    influences: list[float]
    removed_class: int | None = None
    runs: int = 0
    label_freq_with: np.ndarray | None = None     # (T,) prediction frequencies
    label_freq_without: np.ndarray | None = None


def _order_column(values: np.ndarray, descending: bool) -> np.ndarray:
    ids = np.arange(values.size)
    key = -values if descending else values
    return np.lexsort((ids, key))


def project_class(matrix: InfluenceMatrix, class_id: int, k: int) -> ProjectionResult:
    """Top-k target examples most positively influenced by one source class."""
    if not 0 <= class_id < matrix.num_classes:
        raise InvalidConfigError(f"class {class_id} out of range")
    if not matrix.valid[class_id]:
        raise FlaggedClassError(f"class {class_id} has no valid influence estimate")
    if k > matrix.num_targets:
        raise InvalidConfigError(f"k={k} exceeds {matrix.num_targets} targets")
    row = matrix.values[class_id]
    order = _order_column(row, descending=True)[:k]
    return ProjectionResult(
        class_id=class_id,
        example_ids=order.tolist(),
        influences=row[order].tolist(),
    )


def debug_example(matrix: InfluenceMatrix, example_id: int, k: int) -> DebugReport:
    """Bottom-k source classes for one target example, most negative first."""
    if not 0 <= example_id < matrix.num_targets:
        raise InvalidConfigError(f"example {example_id} out of range")
    col = matrix.values[:, example_id]
    valid_ids = np.flatnonzero(matrix.valid)
    if k > valid_ids.size:
        raise InvalidConfigError(f"k={k} exceeds the {valid_ids.size} valid classes")
    order = np.lexsort((valid_ids, col[valid_ids]))[:k]
    chosen = valid_ids[order]
    return DebugReport(
        example_id=example_id,
        class_ids=chosen.tolist(),
        influences=col[chosen].tolist(),
    )


def paired_label_frequencies(
    source_spec: SourceSpec,
    target_spec: TargetSpec,
    config: TrainConfig,
    class_to_remove: int,
    runs: int = 20,
    tasks: TaskData | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Prediction frequencies with and without one class, paired over runs.

    Returns two (n, T) arrays: the fraction of runs in which each label was
    predicted for each test example, for the full source set and for the
    source set minus `class_to_remove`. Run r uses the same training seed
    in both conditions, mirroring the full-set-removal debugging protocol.
    """
    if tasks is None:
        tasks = campaign_tasks(source_spec, target_spec, config)
    all_classes = list(range(source_spec.num_classes))
    kept = [c for c in all_classes if c != class_to_remove]
    n = tasks.test_y.size
    t = target_spec.num_target_classes
    freq_with = np.zeros((n, t))
    freq_without = np.zeros((n, t))
    for r in range(runs):
        cfg = replace(config, seed=run_seed(config.seed, r))
        for classes, freq in ((all_classes, freq_with), (kept, freq_without)):
            model = train_source_model(tasks.source_x, tasks.source_y, classes, cfg)
            transferred = transfer(model, tasks.train_x, tasks.train_y, cfg)
            logits, _ = evaluate(transferred, tasks.test_x, tasks.test_y)
            preds = logits.argmax(axis=1)
            freq[np.arange(n), preds] += 1.0
    return freq_with / runs, freq_without / runs


def rerun_without(
    source_spec: SourceSpec,
    target_spec: TargetSpec,
    config: TrainConfig,
    example_id: int,
    class_to_remove: int,
    runs: int = 20,
    matrix: InfluenceMatrix | None = None,
    tasks: TaskData | None = None,
) -> DebugReport:
    """Paired rerun stats for one example with/without one source class."""
    freq_with, freq_without = paired_label_frequencies(
        source_spec, target_spec, config, class_to_remove, runs, tasks
    )
    if not 0 <= example_id < freq_with.shape[0]:
        raise InvalidConfigError(f"example {example_id} out of range")
    if matrix is not None:
        base = debug_example(matrix, example_id, min(5, int(matrix.valid.sum())))
        class_ids, influences = base.class_ids, base.influences
    else:
        class_ids, influences = [], []
    return DebugReport(
        example_id=example_id,
        class_ids=class_ids,
        influences=influences,
        removed_class=class_to_remove,
        runs=runs,
        label_freq_with=freq_with[example_id],
        label_freq_without=freq_without[example_id],
    )


def surface_extreme_examples(
    weights: Sequence[DatamodelWeights],
    direction: str,
    k: int,
) -> list[tuple[int, int, float]]:
    """Global top/bottom-k (source datapoint, target example, weight) triples."""
    if direction not in ("top", "bottom"):
        raise InvalidConfigError("direction must be 'top' or 'bottom'")
    if not weights:
        raise InvalidConfigError("no weight vectors given")
    stacked = np.stack([dm.weights for dm in weights])  # (n_targets, L)
    targets = np.asarray([dm.target_id for dm in weights])
    n, length = stacked.shape
    flat = stacked.ravel()
    if k > flat.size:
        raise InvalidConfigError(f"k={k} exceeds {flat.size} pairs")
    source_ids = np.tile(np.arange(length), n)
    target_ids = np.repeat(targets, length)
    key = -flat if direction == "top" else flat
    order = np.lexsort((target_ids, source_ids, key))[:k]
    return [
        (int(source_ids[i]), int(target_ids[i]), float(flat[i]))
        for i in order
    ]
