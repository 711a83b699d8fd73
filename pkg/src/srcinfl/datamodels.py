"""Sparse linear mask-to-output regressions as an alternative importance estimator.

Each target example gets its own regression: predict the model's derived
output from the binary inclusion mask of the source classes (or source
datapoints in example mode). LASSO weights then play the role of
influences. Objective scalings are fixed so lambda grids do not depend on
the number of trained models:

    ridge:  (1/m)  * ||y - Xw - b||^2 + lambda * ||w||^2
    lasso:  (1/2m) * ||y - Xw - b||^2 + lambda * ||w||_1

Features are centered by their empirical means and the intercept is never
penalized.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from .errors import InvalidConfigError
from .influence import OutputKind, responses_for
from .predlog import PredictionLog
from .rng import SplitMix64, derive_seed
from .sampler import SubsetManifest

_HOLDOUT_STREAM = 0x44AD


@dataclass(frozen=True)
class RegressionConfig:
    lambda_grid: tuple[float, ...] | None = None  # None -> per-target auto grid
    grid_size: int = 20
    grid_decades: float = 3.0
    tolerance: float = 1e-6
    max_iterations: int = 2000
    holdout_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.lambda_grid is not None:
            grid = tuple(float(v) for v in self.lambda_grid)
            if not grid:
                raise InvalidConfigError("lambda_grid must be non-empty")
            if any(v <= 0 for v in grid):
                raise InvalidConfigError("lambda_grid values must be positive")
            if list(grid) != sorted(grid, reverse=True):
                raise InvalidConfigError("lambda_grid must be descending")
            object.__setattr__(self, "lambda_grid", grid)
        if self.tolerance <= 0:
            raise InvalidConfigError("tolerance must be positive")
        if self.max_iterations < 1:
            raise InvalidConfigError("max_iterations must be at least 1")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise InvalidConfigError("holdout_fraction must lie in (0, 1)")


@dataclass
class DatamodelWeights:
    target_id: int
    weights: np.ndarray
    intercept: float
    selected_lambda: float
    holdout_score: float
    converged: bool
    provenance: dict = field(default_factory=dict)

    @property
    def support_size(self) -> int:
        return int(np.count_nonzero(self.weights))


def _center(masks: np.ndarray, responses: np.ndarray):
    x = np.asarray(masks, dtype=np.float64)
    y = np.asarray(responses, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise InvalidConfigError("masks must be (m, K) and responses (m,)")
    if x.shape[0] < 2:
        raise InvalidConfigError("need at least two observations")
    x_mean = x.mean(axis=0)
    y_mean = y.mean()
    return x - x_mean, y - y_mean, x_mean, y_mean


def fit_ridge(masks: np.ndarray, responses: np.ndarray, lam: float) -> tuple[np.ndarray, float]:
    """Exact ridge solution via the normal equations on centered data."""
    if lam <= 0:
        raise InvalidConfigError("ridge lambda must be positive")
    xc, yc, x_mean, y_mean = _center(masks, responses)
    m, k = xc.shape
    if not xc.any():
        warnings.warn("design matrix is constant; returning zero weights", RuntimeWarning)
        return np.zeros(k), float(y_mean)
    gram = xc.T @ xc / m + lam * np.eye(k)
    rhs = xc.T @ yc / m
    w = np.linalg.solve(gram, rhs)
    return w, float(y_mean - x_mean @ w)


def soft_threshold(value: float, threshold: float) -> float:
    if value > threshold:
        return value - threshold
    if value < -threshold:
        return value + threshold
    return 0.0


@dataclass
class LassoResult:
    weights: np.ndarray
    intercept: float
    converged: bool
    iterations: int


def fit_lasso(
    masks: np.ndarray,
    responses: np.ndarray,
    lam: float,
    config: RegressionConfig = RegressionConfig(),
    warm_start: np.ndarray | None = None,
) -> LassoResult:
    """Cyclic coordinate descent with soft thresholding.

    Stops when the largest coefficient update of a full pass falls below
    `tolerance` relative to the largest coefficient magnitude, or after
    `max_iterations` passes (reported via `converged`).
    """
    if lam < 0:
        raise InvalidConfigError("lasso lambda must be non-negative")
    xc, yc, x_mean, y_mean = _center(masks, responses)
    m, k = xc.shape
    xc = np.asfortranarray(xc)
    col_sq = (xc * xc).sum(axis=0) / m
    w = np.zeros(k) if warm_start is None else np.asarray(warm_start, dtype=np.float64).copy()
    r = yc - xc @ w
    converged = False
    iterations = 0
    for iterations in range(1, config.max_iterations + 1):
        delta_max = 0.0
        for j in range(k):
            if col_sq[j] == 0.0:
                continue
            old = w[j]
            rho = xc[:, j] @ r / m + col_sq[j] * old
            new = soft_threshold(rho, lam) / col_sq[j]
            if new != old:
                r += xc[:, j] * (old - new)
                w[j] = new
                delta_max = max(delta_max, abs(new - old))
        scale = max(float(np.abs(w).max(initial=0.0)), 1e-12)
        if delta_max <= config.tolerance * scale:
            converged = True
            break
    return LassoResult(
        weights=w,
        intercept=float(y_mean - x_mean @ w),
        converged=converged,
        iterations=iterations,
    )


def lasso_objective(masks, responses, weights, intercept, lam) -> float:
    x = np.asarray(masks, dtype=np.float64)
    y = np.asarray(responses, dtype=np.float64)
    resid = y - x @ weights - intercept
    return float(resid @ resid / (2 * x.shape[0]) + lam * np.abs(weights).sum())


def lambda_max(masks: np.ndarray, responses: np.ndarray) -> float:
    """Smallest lambda at which the LASSO solution is exactly zero."""
    xc, yc, _, _ = _center(masks, responses)
    return float(np.abs(xc.T @ yc).max() / xc.shape[0])


def _lambda_grid(config: RegressionConfig, masks, responses) -> np.ndarray:
    if config.lambda_grid is not None:
        return np.asarray(config.lambda_grid)
    top = max(lambda_max(masks, responses), 1e-12)
    return np.geomspace(top, top * 10.0 ** (-config.grid_decades), config.grid_size)


def holdout_split(m: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (train_idx, holdout_idx) split of 0..m-1."""
    n_hold = max(1, min(m - 1, round(m * fraction)))
    stream = SplitMix64(derive_seed(seed, _HOLDOUT_STREAM))
    hold = np.sort(stream.choose(m, n_hold))
    train = np.setdiff1d(np.arange(m), hold, assume_unique=True)
    return train, hold


def _fit_one_target(masks, y, config: RegressionConfig, train_idx, hold_idx):
    grid = _lambda_grid(config, masks[train_idx], y[train_idx])
    best = (np.inf, grid[0])
    w = None
    for lam in grid:
        res = fit_lasso(masks[train_idx], y[train_idx], lam, config, warm_start=w)
        w = res.weights
        pred = masks[hold_idx] @ res.weights + res.intercept
        score = float(np.mean((y[hold_idx] - pred) ** 2))
        if score < best[0]:
            best = (score, lam)
    final = fit_lasso(masks, y, best[1], config)
    return final, best


def fit_datamodels(
    manifest: SubsetManifest,
    log: PredictionLog,
    kind: OutputKind = OutputKind.SOFTMAX_CORRECT,
    config: RegressionConfig = RegressionConfig(),
) -> list[DatamodelWeights]:
    """Per-target LASSO datamodels with holdout lambda selection.

    For each target: fit along the lambda grid on the train split, pick the
    lambda with the best holdout squared error, then refit on all models at
    that lambda. Per-target failures are recorded, not raised, so one bad
    column cannot abort a batch.
    """
    kind = OutputKind.parse(kind)
    masks, responses = responses_for(manifest, log, kind)
    masks = masks.astype(np.float64)
    m, n = responses.shape
    train_idx, hold_idx = holdout_split(m, config.holdout_fraction, config.seed)
    out: list[DatamodelWeights] = []
    for j in range(n):
        try:
            final, (score, lam) = _fit_one_target(masks, responses[:, j], config, train_idx, hold_idx)
            out.append(
                DatamodelWeights(
                    target_id=j,
                    weights=final.weights,
                    intercept=final.intercept,
                    selected_lambda=float(lam),
                    holdout_score=score,
                    converged=final.converged,
                )
            )
        except Exception as exc:  # keep the batch alive; surface per-target failure
            out.append(
                DatamodelWeights(
                    target_id=j,
                    weights=np.zeros(masks.shape[1]),
                    intercept=float("nan"),
                    selected_lambda=float("nan"),
                    holdout_score=float("nan"),
                    converged=False,
                    provenance={"error": str(exc)},
                )
            )
    return out


def fit_example_datamodels(
    manifest: SubsetManifest,
    log: PredictionLog,
    kind: OutputKind = OutputKind.SOFTMAX_CORRECT,
    config: RegressionConfig = RegressionConfig(),
) -> list[DatamodelWeights]:
    """Example mode: identical contract, with datapoint ids as features."""
    return fit_datamodels(manifest, log, kind, config)


def write_weights_csv(weights: Sequence[DatamodelWeights], dest: str | IO[str]) -> None:
    """Nonzero entries only: (target_id, class_id, weight)."""
    def _emit(fh):
        writer = csv.writer(fh)
        writer.writerow(["target_id", "class_id", "weight"])
        for dm in weights:
            for k in np.flatnonzero(dm.weights):
                writer.writerow([dm.target_id, int(k), repr(float(dm.weights[k]))])

    if hasattr(dest, "write"):
        _emit(dest)
    else:
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            _emit(fh)


def write_weights_summary(weights: Sequence[DatamodelWeights], dest: str | IO[str]) -> None:
    records = [
        {
            "target_id": dm.target_id,
            "lambda": dm.selected_lambda,
            "holdout_score": dm.holdout_score,
            "support_size": dm.support_size,
            "intercept": dm.intercept,
            "converged": dm.converged,
        }
        for dm in weights
    ]
    text = json.dumps(records, indent=2)
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        with open(dest, "w", encoding="utf-8") as fh:
            fh.write(text)
