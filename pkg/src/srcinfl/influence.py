"""Difference-in-means influence of source classes on target predictions.

For each class k and target example j, the influence is the mean derived
output over models whose training subset contained k, minus the mean over
models whose subset did not. Outputs are derived from raw logits by one of
four interchangeable kinds; the ground-truth softmax probability is the
default.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO

import numpy as np

from .errors import DataError, IncompatibleInputsError, InvalidConfigError
from .predlog import PredictionLog, log_digest
from .sampler import SubsetManifest, manifest_digest


class OutputKind(enum.Enum):
    SOFTMAX_CORRECT = "softmax_correct"
    IS_CORRECT = "is_correct"
    RAW_MARGIN = "raw_margin"
    SOFTMAX_MARGIN = "softmax_margin"

    @classmethod
    def parse(cls, name: "str | OutputKind") -> "OutputKind":
        if isinstance(name, OutputKind):
            return name
        try:
            return cls(name.lower())
        except ValueError:
            raise InvalidConfigError(
                f"unknown output kind {name!r}; expected one of "
                f"{[k.value for k in cls]}"
            ) from None


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def derive_output(logits: np.ndarray, label: int, kind: OutputKind) -> float:
    """Scalar derived output for one example's logit vector."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0:
        raise InvalidConfigError("empty logit vector")
    if not 0 <= label < logits.shape[-1]:
        raise InvalidConfigError(f"label {label} out of range for T={logits.shape[-1]}")
    return float(derive_outputs(logits[None, None, :], np.asarray([label]), kind)[0, 0])


def derive_outputs(logits: np.ndarray, labels: np.ndarray, kind: OutputKind) -> np.ndarray:
    """Vectorized derivation: (m, n, T) logits + (n,) labels -> (m, n) float64.

    SOFTMAX_CORRECT: ground-truth softmax probability (max-subtracted).
    IS_CORRECT: 1.0 when argmax equals the label; exact ties at the max
        count as incorrect.
    RAW_MARGIN: logit of the label minus the best other logit.
    SOFTMAX_MARGIN: the same margin computed on softmax probabilities.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    m, n, t = logits.shape
    cols = np.arange(n)
    if kind is OutputKind.SOFTMAX_CORRECT:
        return _softmax(logits)[:, cols, labels]
    if kind is OutputKind.IS_CORRECT:
        correct = logits[:, cols, labels]
        others = logits.copy()
        others[:, cols, labels] = -np.inf
        return (correct > others.max(axis=-1)).astype(np.float64)
    if kind is OutputKind.RAW_MARGIN:
        values = logits
    elif kind is OutputKind.SOFTMAX_MARGIN:
        values = _softmax(logits)
    else:  # pragma: no cover - enum is closed
        raise InvalidConfigError(f"unhandled kind {kind}")
    correct = values[:, cols, labels]
    others = values.copy()
    others[:, cols, labels] = -np.inf
    best_other = others.max(axis=-1)
    if t == 1:
        # Margin against an empty competitor set is zero by convention.
        return np.zeros((m, n))
    return correct - best_other


@dataclass
class InfluenceMatrix:
    values: np.ndarray          # (K, n) float64, zeros where invalid
    included_count: np.ndarray  # (K,) int64
    excluded_count: np.ndarray  # (K,) int64
    valid: np.ndarray           # (K,) bool
    output_kind: OutputKind
    provenance: dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return self.values.shape[0]

    @property
    def num_targets(self) -> int:
        return self.values.shape[1]


@dataclass
class AggregateInfluence:
    values: np.ndarray          # (K,) float64
    valid: np.ndarray           # (K,) bool
    included_count: np.ndarray
    excluded_count: np.ndarray
    output_kind: OutputKind
    provenance: dict = field(default_factory=dict)


def estimate_from_responses(mask: np.ndarray, responses: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Difference in conditional means from an (m, K) mask and (m, n) responses.

    Returns (values, included_count, excluded_count, valid). Classes that
    were never included or never excluded are flagged invalid and their
    rows zeroed rather than left non-finite.
    """
    mask = np.asarray(mask, dtype=np.float64)
    responses = np.asarray(responses, dtype=np.float64)
    if mask.shape[0] != responses.shape[0]:
        raise IncompatibleInputsError(
            f"mask has {mask.shape[0]} rows, responses {responses.shape[0]}"
        )
    m = mask.shape[0]
    included = mask.sum(axis=0).astype(np.int64)
    excluded = m - included
    valid = (included > 0) & (excluded > 0)
    sums_in = mask.T @ responses                       # (K, n)
    sums_all = responses.sum(axis=0)                   # (n,)
    with np.errstate(divide="ignore", invalid="ignore"):
        mean_in = sums_in / included[:, None]
        mean_out = (sums_all[None, :] - sums_in) / excluded[:, None]
        values = mean_in - mean_out
    values[~valid] = 0.0
    return values, included, excluded, valid


def responses_for(manifest: SubsetManifest, log: PredictionLog, kind: OutputKind) -> tuple[np.ndarray, np.ndarray]:
    """Aligned (mask, responses) pair for a manifest/log combination.

    Row r corresponds to log record r; its mask row is the manifest subset
    named by the record's subset index.
    """
    if manifest.num_models != log.num_models:
        raise IncompatibleInputsError(
            f"manifest has {manifest.num_models} subsets, log has {log.num_models} records"
        )
    idx = log.subset_indices.astype(np.int64)
    if idx.size:
        if idx.min() < 0 or idx.max() >= manifest.num_models:
            raise IncompatibleInputsError("log subset index out of manifest range")
        if np.unique(idx).size != idx.size:
            raise IncompatibleInputsError("log contains duplicate subset indices")
    full_mask = manifest.mask_matrix()
    mask = full_mask[idx]
    responses = derive_outputs(log.logits, log.labels.astype(np.int64), kind)
    return mask, responses


def estimate(manifest: SubsetManifest, log: PredictionLog, kind: OutputKind = OutputKind.SOFTMAX_CORRECT) -> InfluenceMatrix:
    """Algorithm-level entry point: per-(class, target) influence matrix."""
    kind = OutputKind.parse(kind)
    mask, responses = responses_for(manifest, log, kind)
    values, included, excluded, valid = estimate_from_responses(mask, responses)
    if not valid.all():
        flagged = np.flatnonzero(~valid).tolist()
        provenance_note = {"invalid_classes": flagged}
    else:
        provenance_note = {}
    return InfluenceMatrix(
        values=values,
        included_count=included,
        excluded_count=excluded,
        valid=valid,
        output_kind=kind,
        provenance={
            "manifest_sha256": manifest_digest(manifest),
            "log_sha256": log_digest(log),
            **provenance_note,
        },
    )


def aggregate(matrix: InfluenceMatrix) -> AggregateInfluence:
    """Mean influence of each class over every target example."""
    return AggregateInfluence(
        values=matrix.values.mean(axis=1),
        valid=matrix.valid.copy(),
        included_count=matrix.included_count.copy(),
        excluded_count=matrix.excluded_count.copy(),
        output_kind=matrix.output_kind,
        provenance=dict(matrix.provenance),
    )


def rank(agg: AggregateInfluence, direction: str, k: int) -> list[int]:
    """Top or bottom k valid classes; exact ties break toward lower class id."""
    if direction not in ("top", "bottom"):
        raise InvalidConfigError(f"direction must be 'top' or 'bottom', got {direction!r}")
    valid_ids = np.flatnonzero(agg.valid)
    if k > valid_ids.size:
        raise InvalidConfigError(f"k={k} exceeds the {valid_ids.size} valid classes")
    vals = agg.values[valid_ids]
    key = -vals if direction == "top" else vals
    order = np.lexsort((valid_ids, key))
    return valid_ids[order[:k]].tolist()


@dataclass
class TargetClassInfluence:
    values: np.ndarray  # (K, T) mean influence per (source class, target class)
    valid: np.ndarray   # (K, T) bool
    counts: np.ndarray  # (T,) examples per target class


def group_by_target_class(matrix: InfluenceMatrix, labels: np.ndarray) -> TargetClassInfluence:
    """Average matrix columns within each target class (per-class barplots)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (matrix.num_targets,):
        raise IncompatibleInputsError("labels length must match matrix targets")
    t = int(labels.max()) + 1 if labels.size else 0
    values = np.zeros((matrix.num_classes, t))
    counts = np.zeros(t, dtype=np.int64)
    for c in range(t):
        cols = labels == c
        counts[c] = cols.sum()
        if counts[c]:
            values[:, c] = matrix.values[:, cols].mean(axis=1)
    valid = matrix.valid[:, None] & (counts > 0)[None, :]
    values[~valid] = 0.0
    return TargetClassInfluence(values=values, valid=valid, counts=counts)


# ---------------------------------------------------------------------------
# Persistence: sidecar JSON + raw float64 block, plus CSV export.

def save_matrix(matrix: InfluenceMatrix, path: str) -> None:
    """Write <path> (K*n float64 LE block) and <path>.json (everything else)."""
    base = Path(path)
    base.write_bytes(matrix.values.astype("<f8").tobytes())
    sidecar = {
        "num_classes": matrix.num_classes,
        "num_targets": matrix.num_targets,
        "output_kind": matrix.output_kind.value,
        "included_count": matrix.included_count.tolist(),
        "excluded_count": matrix.excluded_count.tolist(),
        "valid": matrix.valid.astype(int).tolist(),
        "provenance": matrix.provenance,
    }
    base.with_suffix(base.suffix + ".json").write_text(json.dumps(sidecar, indent=2))


def load_matrix(path: str) -> InfluenceMatrix:
    base = Path(path)
    sidecar = json.loads(base.with_suffix(base.suffix + ".json").read_text())
    k, n = sidecar["num_classes"], sidecar["num_targets"]
    raw = np.frombuffer(base.read_bytes(), dtype="<f8")
    if raw.size != k * n:
        raise DataError(f"matrix block holds {raw.size} values, expected {k * n}")
    return InfluenceMatrix(
        values=raw.reshape(k, n).copy(),
        included_count=np.asarray(sidecar["included_count"], dtype=np.int64),
        excluded_count=np.asarray(sidecar["excluded_count"], dtype=np.int64),
        valid=np.asarray(sidecar["valid"], dtype=bool),
        output_kind=OutputKind.parse(sidecar["output_kind"]),
        provenance=sidecar.get("provenance", {}),
    )


def write_aggregate_csv(agg: AggregateInfluence, dest: str | IO[str]) -> None:
    def _emit(fh):
        writer = csv.writer(fh)
        writer.writerow(["class_id", "influence", "included_count", "excluded_count"])
        for k in range(agg.values.size):
            if not agg.valid[k]:
                continue
            writer.writerow(
                [k, repr(float(agg.values[k])), int(agg.included_count[k]), int(agg.excluded_count[k])]
            )

    if hasattr(dest, "write"):
        _emit(dest)
    else:
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            _emit(fh)
