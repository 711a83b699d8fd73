"""Reliability metrics for influence estimates.

Three questions, three tools: how noisy are the estimates (bootstrap
standard deviation vs. model count), do they predict unseen models'
outputs (held-out Spearman rank correlation of the induced linear model),
and how much of the top ranking is noise (knockoff false-discovery
heuristic). Responses are aggregated as the mean derived output over all
target examples throughout this module.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from .errors import IncompatibleInputsError, InvalidConfigError, UndefinedCorrelationError
from .influence import OutputKind, estimate_from_responses, responses_for
from .predlog import PredictionLog
from .rng import SplitMix64, derive_seed
from .sampler import SamplingConfig, SubsetManifest, sample_manifest

_BOOT_STREAM = 0xB007
_KNOCK_STREAM = 0x40CF
_SPLIT_STREAM = 0x5917


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of their rank range."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation with mean ranks for ties."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise InvalidConfigError("spearman needs two equal-length vectors of size >= 2")
    rx, ry = _average_ranks(x), _average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx @ rx) * (ry @ ry))
    if denom == 0.0:
        raise UndefinedCorrelationError("rank correlation undefined for a constant vector")
    return float(rx @ ry / denom)


def mean_responses(manifest: SubsetManifest, log: PredictionLog, kind: OutputKind) -> tuple[np.ndarray, np.ndarray]:
    """(mask, per-model mean-over-targets response) for a manifest/log pair."""
    mask, responses = responses_for(manifest, log, kind)
    return mask, responses.mean(axis=1)


@dataclass
class BootstrapReport:
    schedule: list[int]
    mean_std: list[float]
    resamples: int
    seed: int


def bootstrap_convergence(
    manifest: SubsetManifest,
    log: PredictionLog,
    kind: OutputKind,
    schedule: Sequence[int],
    resamples: int = 500,
    seed: int = 0,
) -> BootstrapReport:
    """Spread of aggregate influences when N models are resampled with replacement.

    For each N in the ascending schedule: draw N of the m records (with
    replacement) `resamples` times, recompute the aggregate influences, and
    take the per-class standard deviation across resamples, averaged over
    classes that were valid in every resample.
    """
    schedule = [int(v) for v in schedule]
    if schedule != sorted(schedule):
        raise InvalidConfigError("schedule must be ascending")
    if resamples < 2:
        raise InvalidConfigError("need at least 2 resamples")
    mask, ys = mean_responses(manifest, log, OutputKind.parse(kind))
    m = ys.size
    if schedule and schedule[-1] > m:
        raise InvalidConfigError(f"schedule value {schedule[-1]} exceeds the {m} available models")
    stream = SplitMix64(derive_seed(seed, _BOOT_STREAM))
    mean_std: list[float] = []
    for n_models in schedule:
        draws = (stream.u64_array(resamples * n_models) % np.uint64(m)).astype(np.int64)
        draws = draws.reshape(resamples, n_models)
        estimates = np.full((resamples, mask.shape[1]), np.nan)
        for r in range(resamples):
            rows = draws[r]
            values, _, _, valid = estimate_from_responses(mask[rows], ys[rows, None])
            estimates[r, valid] = values[valid, 0]
        always_valid = ~np.isnan(estimates).any(axis=0)
        if not always_valid.any():
            raise InvalidConfigError(f"no class had both sides populated in every resample at N={n_models}")
        stds = estimates[:, always_valid].std(axis=0, ddof=1)
        mean_std.append(float(stds.mean()))
    return BootstrapReport(schedule=schedule, mean_std=mean_std, resamples=resamples, seed=seed)


def write_bootstrap_csv(report: BootstrapReport, dest: str | IO[str]) -> None:
    def _emit(fh):
        writer = csv.writer(fh)
        writer.writerow(["num_models", "mean_std"])
        for n_models, std in zip(report.schedule, report.mean_std):
            writer.writerow([n_models, repr(std)])

    if hasattr(dest, "write"):
        _emit(dest)
    else:
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            _emit(fh)


def split_manifest_log(
    manifest: SubsetManifest,
    log: PredictionLog,
    holdout_fraction: float,
    seed: int = 0,
) -> tuple[tuple[SubsetManifest, PredictionLog], tuple[SubsetManifest, PredictionLog]]:
    """Split aligned (manifest, log) records into train/holdout pairs."""
    if not 0.0 < holdout_fraction < 1.0:
        raise InvalidConfigError("holdout_fraction must lie in (0, 1)")
    if manifest.num_models != log.num_models:
        raise IncompatibleInputsError("manifest and log sizes differ")
    m = log.num_models
    n_hold = max(1, min(m - 1, round(m * holdout_fraction)))
    stream = SplitMix64(derive_seed(seed, _SPLIT_STREAM))
    hold = np.zeros(m, dtype=bool)
    hold[stream.choose(m, n_hold)] = True

    def _take(rows: np.ndarray) -> tuple[SubsetManifest, PredictionLog]:
        subs = [manifest.subsets[int(log.subset_indices[r])] for r in rows]
        cfg = manifest.config
        sub_manifest = SubsetManifest(
            config=SamplingConfig(
                seed=cfg.seed,
                num_classes=cfg.num_classes,
                subset_size=cfg.subset_size,
                num_models=len(subs),
            ),
            subsets=[list(s) for s in subs],
        )
        sub_log = PredictionLog(
            labels=log.labels.copy(),
            subset_indices=np.arange(len(subs), dtype=np.uint32),
            logits=log.logits[rows].copy(),
        )
        return sub_manifest, sub_log

    return _take(np.flatnonzero(~hold)), _take(np.flatnonzero(hold))


def heldout_rank_correlation(
    train: tuple[SubsetManifest, PredictionLog],
    heldout: tuple[SubsetManifest, PredictionLog],
    kind: OutputKind = OutputKind.SOFTMAX_CORRECT,
) -> float:
    """Spearman correlation between held-out outputs and influence predictions.

    Aggregate influences fitted on the training split act as weights of a
    linear model over subset indicators; the intercept is set so the
    training predictions match the training grand mean.
    """
    kind = OutputKind.parse(kind)
    train_manifest, train_log = train
    held_manifest, held_log = heldout
    if train_manifest.num_classes != held_manifest.num_classes:
        raise IncompatibleInputsError("train and held-out splits disagree on K")
    mask_tr, ys_tr = mean_responses(train_manifest, train_log, kind)
    mask_ho, ys_ho = mean_responses(held_manifest, held_log, kind)
    values, _, _, valid = estimate_from_responses(mask_tr, ys_tr[:, None])
    w = np.where(valid, values[:, 0], 0.0)
    intercept = float(ys_tr.mean() - (mask_tr @ w).mean())
    preds = mask_ho @ w + intercept
    return spearman(preds, ys_ho)


@dataclass
class FdrReport:
    k: int
    knockoff_proportion: float
    seed: int
    num_real_features: int
    num_knockoff_features: int


def knockoff_proportion(
    mask_real: np.ndarray,
    mask_knockoff: np.ndarray,
    responses: np.ndarray,
    k: int,
) -> float:
    """Fraction of knockoffs among the top-k features by positive influence."""
    if mask_real.shape != mask_knockoff.shape:
        raise IncompatibleInputsError("real and knockoff mask shapes differ")
    combined = np.concatenate([mask_real, mask_knockoff], axis=1)
    values, _, _, valid = estimate_from_responses(combined, np.asarray(responses, dtype=np.float64)[:, None])
    scores = values[:, 0]
    valid_ids = np.flatnonzero(valid)
    if k > valid_ids.size:
        raise InvalidConfigError(f"k={k} exceeds the {valid_ids.size} valid features")
    order = np.lexsort((valid_ids, -scores[valid_ids]))
    top = valid_ids[order[:k]]
    return float((top >= mask_real.shape[1]).mean())


def knockoff_fdr(
    manifest: SubsetManifest,
    log: PredictionLog,
    kind: OutputKind,
    k: int | None = None,
    seed: int = 0,
) -> FdrReport:
    """Knockoff-based false-discovery heuristic for the top influencers.

    A knockoff mask matrix is drawn from the same fixed-size subset
    distribution as the manifest but independently of the responses; the
    reported proportion of knockoffs inside the top-k positively ranked
    features estimates the false discovery rate (0.5 ~ chance-level).
    This is a heuristic diagnostic, not a controlled FDR procedure.
    """
    kind = OutputKind.parse(kind)
    mask, ys = mean_responses(manifest, log, kind)
    cfg = manifest.config
    if k is None:
        k = min(100, max(1, cfg.num_classes // 2))
    knock_cfg = SamplingConfig(
        seed=derive_seed(seed, _KNOCK_STREAM),
        num_classes=cfg.num_classes,
        subset_size=cfg.subset_size,
        num_models=log.num_models,
    )
    knock_mask = sample_manifest(knock_cfg).mask_matrix()
    proportion = knockoff_proportion(mask, knock_mask, ys, k)
    return FdrReport(
        k=k,
        knockoff_proportion=proportion,
        seed=seed,
        num_real_features=cfg.num_classes,
        num_knockoff_features=cfg.num_classes,
    )


def write_reports_json(reports: dict, dest: str | IO[str]) -> None:
    def _default(obj):
        if isinstance(obj, (BootstrapReport, FdrReport)):
            return obj.__dict__
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        raise TypeError(f"cannot serialize {type(obj)!r}")

    text = json.dumps(reports, indent=2, default=_default)
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        with open(dest, "w", encoding="utf-8") as fh:
            fh.write(text)
