"""Desk-scale synthetic transfer pipeline with planted ground truth.

Source tasks are Gaussian clusters around class prototypes in feature
space; target tasks reuse (mixtures of) source prototypes, so which source
classes actually help each target class is known by construction. Three
pathologies can be planted and later rediscovered by the estimators:

* helpful classes - a target class draws its prototype from them;
* redundant clones - several classes share a prototype direction that one
  target class needs, so each clone individually is dispensable;
* harmful classes - their samples sit on top of target prototypes while
  carrying a single conflicting source label, smearing the learned
  representation exactly where the target head needs it to be clean.

Models are one-hidden-layer rectifier networks trained by minibatch SGD
with momentum and weight decay; transfer either freezes the feature layer
(fixed_feature) and fits a fresh head, or updates everything
(full_network). Everything is a pure function of (specs, config, seed).
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidConfigError
from .influence import OutputKind, derive_outputs
from .predlog import PredictionLog
from .rng import MASK64, SplitMix64, derive_seed
from .sampler import SubsetManifest

_TASK_STREAM = 0x7A5C
_INIT_STREAM = 0x1417
_SHUFFLE_STREAM = 0x5F1E
_HEAD_STREAM = 0xEAD0
_VICTIM_STREAM = 0x71C7
_RUN_STREAM = 0x2C41


@dataclass(frozen=True)
class SourceSpec:
    num_classes: int
    feature_dim: int
    samples_per_class: int
    noise_std: float
    prototypes: np.ndarray                      # (K, d)
    redundancy_groups: tuple[tuple[int, ...], ...] = ()
    harmful_classes: frozenset[int] = frozenset()
    harmful_victims: dict = field(default_factory=dict)  # class id -> target class ids
    harmful_noise_scale: float = 1.0
    extra_harmful_samples: int = 0
    harmful_blend: float = 0.5

    def class_sample_counts(self) -> np.ndarray:
        counts = np.full(self.num_classes, self.samples_per_class, dtype=np.int64)
        for cid in self.harmful_classes:
            counts[cid] += self.extra_harmful_samples
        return counts

    def total_samples(self) -> int:
        return int(self.class_sample_counts().sum())

    def validate(self) -> None:
        protos = np.asarray(self.prototypes)
        if protos.shape != (self.num_classes, self.feature_dim):
            raise InvalidConfigError(
                f"prototype matrix must be ({self.num_classes}, {self.feature_dim})"
            )
        if not np.isfinite(protos).all():
            raise InvalidConfigError("prototypes must be finite")
        if self.samples_per_class < 1 or self.noise_std < 0:
            raise InvalidConfigError("need samples_per_class >= 1 and noise_std >= 0")
        if self.harmful_noise_scale <= 0 or self.extra_harmful_samples < 0:
            raise InvalidConfigError("bad harmful-class sampling parameters")
        if not 0.0 <= self.harmful_blend <= 1.0:
            raise InvalidConfigError("harmful_blend must lie in [0, 1]")
        seen: set[int] = set()
        for group in self.redundancy_groups:
            if seen & set(group):
                raise InvalidConfigError("redundancy groups must be disjoint")
            seen |= set(group)
        for cid in self.harmful_classes:
            if not 0 <= cid < self.num_classes:
                raise InvalidConfigError(f"harmful class {cid} out of range")
            if cid not in self.harmful_victims:
                raise InvalidConfigError(f"harmful class {cid} has no victim targets")


@dataclass(frozen=True)
class TargetSpec:
    num_target_classes: int
    n_train: int
    n_test: int
    prototypes: np.ndarray                      # (T, d)
    noise_std: float
    drawn_from: tuple[tuple[int, ...], ...]     # per target class: source class ids
    annotations: dict = field(default_factory=dict)  # free-form planted ground truth
    test_noise_std: float | None = None         # None -> same as noise_std

    def validate(self, feature_dim: int) -> None:
        protos = np.asarray(self.prototypes)
        if self.num_target_classes < 2:
            raise InvalidConfigError("need at least two target classes")
        if protos.shape != (self.num_target_classes, feature_dim):
            raise InvalidConfigError("target prototype shape mismatch")
        if not np.isfinite(protos).all():
            raise InvalidConfigError("target prototypes must be finite")
        if self.n_train < self.num_target_classes or self.n_test < 1:
            raise InvalidConfigError("target split sizes too small")
        if len(self.drawn_from) != self.num_target_classes:
            raise InvalidConfigError("drawn_from must list source classes per target class")


@dataclass(frozen=True)
class TrainConfig:
    hidden_dim: int = 32
    epochs: int = 12
    batch_size: int = 32
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    transfer_mode: str = "fixed_feature"
    transfer_epochs: int | None = None  # defaults to `epochs`

    def __post_init__(self):
        if min(self.hidden_dim, self.batch_size) < 1 or self.epochs < 0:
            raise InvalidConfigError("hidden_dim/batch_size must be positive, epochs >= 0")
        if self.learning_rate < 0 or not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise InvalidConfigError("bad optimizer hyperparameters")
        if self.transfer_mode not in ("fixed_feature", "full_network"):
            raise InvalidConfigError(
                f"transfer_mode must be 'fixed_feature' or 'full_network', got {self.transfer_mode!r}"
            )


@dataclass
class ToyModel:
    w1: np.ndarray  # (hidden, d)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (out, hidden)
    b2: np.ndarray  # (out,)

    def features(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(x @ self.w1.T + self.b1, 0.0)

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.features(x) @ self.w2.T + self.b2

    def copy(self) -> "ToyModel":
        return ToyModel(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())


@dataclass
class TaskData:
    source_x: np.ndarray
    source_y: np.ndarray
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    metadata: dict = field(default_factory=dict)


def generate_tasks(source_spec: SourceSpec, target_spec: TargetSpec, seed: int) -> TaskData:
    """Draw the source dataset and the target train/test splits."""
    source_spec.validate()
    target_spec.validate(source_spec.feature_dim)
    d = source_spec.feature_dim
    k = source_spec.num_classes
    protos = np.asarray(source_spec.prototypes, dtype=np.float64)
    t_protos = np.asarray(target_spec.prototypes, dtype=np.float64)

    noise = SplitMix64(derive_seed(seed, _TASK_STREAM, 0))
    victim_pick = SplitMix64(derive_seed(seed, _VICTIM_STREAM))

    counts = source_spec.class_sample_counts()
    total = int(counts.sum())
    centers = np.repeat(protos, counts, axis=0)
    source_y = np.repeat(np.arange(k, dtype=np.int64), counts)
    noise_scale = np.full(total, source_spec.noise_std)
    for cid in sorted(source_spec.harmful_classes):
        victims = tuple(source_spec.harmful_victims[cid])
        rows = np.flatnonzero(source_y == cid)
        blend = source_spec.harmful_blend
        for r in rows:
            # Each junk sample sits between two victim prototypes (nearer the
            # first), polluting the victims' decision regions under one label.
            a = victims[victim_pick.next_below(len(victims))]
            b = victims[victim_pick.next_below(len(victims))]
            centers[r] = (1.0 - blend) * t_protos[a] + blend * t_protos[b]
        noise_scale[rows] *= source_spec.harmful_noise_scale
    source_x = centers + noise_scale[:, None] * noise.normal(total * d).reshape(-1, d)

    def _draw_targets(count: int, stream_tag: int, sigma: float):
        labels = np.arange(count, dtype=np.int64) % target_spec.num_target_classes
        s = SplitMix64(derive_seed(seed, _TASK_STREAM, stream_tag))
        x = t_protos[labels] + sigma * s.normal(count * d).reshape(-1, d)
        return x, labels

    test_sigma = (
        target_spec.noise_std if target_spec.test_noise_std is None else target_spec.test_noise_std
    )
    train_x, train_y = _draw_targets(target_spec.n_train, 1, target_spec.noise_std)
    test_x, test_y = _draw_targets(target_spec.n_test, 2, test_sigma)

    return TaskData(
        source_x=source_x,
        source_y=source_y,
        train_x=train_x,
        train_y=train_y,
        test_x=test_x,
        test_y=test_y,
        metadata={
            "harmful_classes": sorted(source_spec.harmful_classes),
            "harmful_victims": {int(c): list(v) for c, v in source_spec.harmful_victims.items()},
            "redundancy_groups": [list(g) for g in source_spec.redundancy_groups],
            "drawn_from": [list(g) for g in target_spec.drawn_from],
            **target_spec.annotations,
        },
    )


def _init_layer(stream: SplitMix64, fan_out: int, fan_in: int) -> tuple[np.ndarray, np.ndarray]:
    bound = 1.0 / np.sqrt(fan_in)
    w = stream.uniform(-bound, bound, fan_out * fan_in).reshape(fan_out, fan_in)
    b = stream.uniform(-bound, bound, fan_out)
    return w, b


def init_model(feature_dim: int, hidden_dim: int, out_dim: int, seed: int) -> ToyModel:
    stream = SplitMix64(derive_seed(seed, _INIT_STREAM))
    w1, b1 = _init_layer(stream, hidden_dim, feature_dim)
    w2, b2 = _init_layer(stream, out_dim, hidden_dim)
    return ToyModel(w1, b1, w2, b2)


def _sgd_train(
    model: ToyModel,
    x: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
    epochs: int,
    train_features: bool,
    shuffle_seed: int,
) -> ToyModel:
    """Minibatch cross-entropy SGD with momentum; weight decay on weights only."""
    n = x.shape[0]
    lr, mom, wd = config.learning_rate, config.momentum, config.weight_decay
    vw1 = np.zeros_like(model.w1)
    vb1 = np.zeros_like(model.b1)
    vw2 = np.zeros_like(model.w2)
    vb2 = np.zeros_like(model.b2)
    out_dim = model.w2.shape[0]
    eye = np.eye(out_dim)
    shuffler = SplitMix64(derive_seed(shuffle_seed, _SHUFFLE_STREAM))
    for _ in range(epochs):
        order = shuffler.permutation(n)
        for start in range(0, n, config.batch_size):
            rows = order[start : start + config.batch_size]
            xb, yb = x[rows], y[rows]
            z = xb @ model.w1.T + model.b1
            h = np.maximum(z, 0.0)
            logits = h @ model.w2.T + model.b2
            logits -= logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            dlogits = (p - eye[yb]) / rows.size
            gw2 = dlogits.T @ h + wd * model.w2
            gb2 = dlogits.sum(axis=0)
            vw2 = mom * vw2 + gw2
            vb2 = mom * vb2 + gb2
            if train_features:
                dh = dlogits @ model.w2
                dz = np.where(z > 0.0, dh, 0.0)
                gw1 = dz.T @ xb + wd * model.w1
                gb1 = dz.sum(axis=0)
                vw1 = mom * vw1 + gw1
                vb1 = mom * vb1 + gb1
                model.w1 -= lr * vw1
                model.b1 -= lr * vb1
            model.w2 -= lr * vw2
            model.b2 -= lr * vb2
    return model


def cross_entropy(model: ToyModel, x: np.ndarray, y: np.ndarray) -> float:
    logits = model.logits(x)
    logits = logits - logits.max(axis=1, keepdims=True)
    logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(y.size), y].mean())


def train_source_model(
    source_x: np.ndarray,
    source_y: np.ndarray,
    subset: Sequence[int],
    config: TrainConfig,
) -> ToyModel:
    """Train the source classifier on the subset's examples only.

    Labels are reindexed to 0..s-1 in ascending class-id order, so the head
    width always equals the subset size.
    """
    subset = np.asarray(sorted(subset), dtype=np.int64)
    if subset.size == 0:
        raise InvalidConfigError("subset must be non-empty")
    keep = np.isin(source_y, subset)
    if not keep.any():
        raise InvalidConfigError("source dataset does not cover the subset classes")
    x = source_x[keep]
    y = np.searchsorted(subset, source_y[keep])
    model = init_model(x.shape[1], config.hidden_dim, subset.size, config.seed)
    return _sgd_train(model, x, y, config, config.epochs, True, config.seed)


def transfer(model: ToyModel, train_x: np.ndarray, train_y: np.ndarray, config: TrainConfig) -> ToyModel:
    """Fit to the target task; freezes the feature layer in fixed_feature mode."""
    if train_x.shape[1] != model.w1.shape[1]:
        raise InvalidConfigError(
            f"model expects {model.w1.shape[1]} features, target data has {train_x.shape[1]}"
        )
    out_dim = int(train_y.max()) + 1
    head_stream = SplitMix64(derive_seed(config.seed, _HEAD_STREAM))
    w2, b2 = _init_layer(head_stream, out_dim, model.w1.shape[0])
    transferred = ToyModel(model.w1.copy(), model.b1.copy(), w2, b2)
    epochs = config.epochs if config.transfer_epochs is None else config.transfer_epochs
    return _sgd_train(
        transferred,
        train_x,
        train_y,
        config,
        epochs,
        train_features=(config.transfer_mode == "full_network"),
        shuffle_seed=derive_seed(config.seed, _HEAD_STREAM, 1),
    )


def evaluate(model: ToyModel, test_x: np.ndarray, test_y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Raw pre-softmax outputs, one row per test example, plus the labels."""
    logits = model.logits(test_x)
    return logits, np.asarray(test_y, dtype=np.int64)


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean correctness under the strict tie rule (ties count as wrong)."""
    correct = derive_outputs(
        np.asarray(logits, dtype=np.float64)[None], labels, OutputKind.IS_CORRECT
    )
    return float(correct.mean())


def model_seed(campaign_seed: int, subset_index: int) -> int:
    # Fixed contract so split campaigns agree: per-model seed is an XOR.
    return (campaign_seed ^ subset_index) & MASK64


def train_single(
    tasks: TaskData,
    subset_ids: Sequence[int],
    config: TrainConfig,
    subset_index: int,
    example_mode: bool = False,
) -> np.ndarray:
    """One campaign member: train, transfer, evaluate; returns test logits."""
    cfg = replace(config, seed=model_seed(config.seed, subset_index))
    if example_mode:
        rows = np.asarray(sorted(subset_ids), dtype=np.int64)
        sub_x, sub_y = tasks.source_x[rows], tasks.source_y[rows]
        present = np.unique(sub_y)
        model = train_source_model(sub_x, sub_y, present, cfg)
    else:
        model = train_source_model(tasks.source_x, tasks.source_y, subset_ids, cfg)
    transferred = transfer(model, tasks.train_x, tasks.train_y, cfg)
    logits, _ = evaluate(transferred, tasks.test_x, tasks.test_y)
    return logits


def _campaign_chunk(args) -> list[tuple[int, np.ndarray]]:
    source_spec, target_spec, config, subsets, indices, example_mode = args
    tasks = generate_tasks(source_spec, target_spec, derive_seed(config.seed, _TASK_STREAM))
    return [
        (i, train_single(tasks, subset, config, i, example_mode).astype(np.float32))
        for i, subset in zip(indices, subsets)
    ]


def _run_campaign(
    manifest: SubsetManifest,
    source_spec: SourceSpec,
    target_spec: TargetSpec,
    config: TrainConfig,
    example_mode: bool,
    workers: int,
    tasks: TaskData | None,
) -> PredictionLog:
    if example_mode:
        total = source_spec.total_samples()
        if manifest.num_classes != total:
            raise InvalidConfigError(
                f"datapoint manifest indexes {manifest.num_classes} ids, dataset has {total}"
            )
    elif manifest.num_classes != source_spec.num_classes:
        raise InvalidConfigError(
            f"manifest has {manifest.num_classes} classes, source spec {source_spec.num_classes}"
        )
    if tasks is None:
        tasks = generate_tasks(source_spec, target_spec, derive_seed(config.seed, _TASK_STREAM))
    m = manifest.num_models
    records: list[np.ndarray | None] = [None] * m
    if workers > 1 and m > 1:
        chunks = np.array_split(np.arange(m), min(workers * 4, m))
        jobs = [
            (source_spec, target_spec, config, [manifest.subsets[i] for i in chunk], chunk.tolist(), example_mode)
            for chunk in chunks
            if chunk.size
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for results in pool.map(_campaign_chunk, jobs):
                for i, logits in results:
                    records[i] = logits
    else:
        for i in range(m):
            try:
                records[i] = train_single(tasks, manifest.subsets[i], config, i, example_mode).astype(np.float32)
            except Exception as exc:
                raise type(exc)(f"model for subset {i} failed: {exc}") from exc
    return PredictionLog(
        labels=tasks.test_y.astype(np.uint16),
        subset_indices=np.arange(m, dtype=np.uint32),
        logits=np.stack(records),  # type: ignore[arg-type]
    )


def run_campaign(
    manifest: SubsetManifest,
    source_spec: SourceSpec,
    target_spec: TargetSpec,
    config: TrainConfig,
    workers: int = 1,
    tasks: TaskData | None = None,
) -> PredictionLog:
    """Train/transfer/evaluate one model per manifest subset (class mode)."""
    return _run_campaign(manifest, source_spec, target_spec, config, False, workers, tasks)


def run_example_campaign(
    manifest: SubsetManifest,
    source_spec: SourceSpec,
    target_spec: TargetSpec,
    config: TrainConfig,
    workers: int = 1,
    tasks: TaskData | None = None,
) -> PredictionLog:
    """Campaign over datapoint masks: manifest ids index source datapoints."""
    return _run_campaign(manifest, source_spec, target_spec, config, True, workers, tasks)


def campaign_tasks(source_spec: SourceSpec, target_spec: TargetSpec, config: TrainConfig) -> TaskData:
    """The exact task data a campaign with this config trains on."""
    return generate_tasks(source_spec, target_spec, derive_seed(config.seed, _TASK_STREAM))


def run_seed(campaign_seed: int, run_index: int) -> int:
    """Training seed for repeat-run experiments (counterfactuals, reruns)."""
    return derive_seed(campaign_seed, _RUN_STREAM, run_index)


# ---------------------------------------------------------------------------
# Planted task builders.

def _orthonormal_directions(stream: SplitMix64, dim: int, count: int) -> np.ndarray:
    raw = stream.normal(dim * count).reshape(dim, count)
    q, r = np.linalg.qr(raw)
    return (q * np.sign(np.diag(r))).T  # (count, dim), deterministic signs


def make_planted_specs(
    seed: int = 7,
    feature_dim: int = 48,
    samples_per_class: int = 30,
    noise_std: float = 1.0,
    prototype_scale: float = 3.0,
    num_helpful: int = 5,
    num_redundant: int = 4,
    num_harmful: int = 3,
    num_background: int = 8,
    redundant_overlap: float = 0.8,
    harmful_noise_scale: float = 1.0,
    extra_harmful_samples: int = 30,
    harmful_blend: float = 0.0,
    secondary_weight: float = 0.8,
    n_train: int = 300,
    n_test: int = 200,
) -> tuple[SourceSpec, TargetSpec]:
    """Class-mode planted task: K classes, T = num_helpful + 1 target classes.

    Layout: helpful ids first, then the redundant clone group, then harmful
    classes, then background. Target class c < num_helpful draws mostly from
    helpful class c plus a weaker secondary background class; the last
    target class draws from the clones' shared direction. Harmful classes
    are junk classes: their (oversized) sample clouds scatter over all
    target prototypes under a single label, crowding the representation
    where the target head needs it while teaching no usable direction.
    """
    k = num_helpful + num_redundant + num_harmful + num_background
    t = num_helpful + 1
    if num_background < t:
        raise InvalidConfigError("need at least one background class per target class")
    stream = SplitMix64(derive_seed(seed, 0x9EED))
    dirs = _orthonormal_directions(stream, feature_dim, num_helpful + 1 + num_redundant + num_background)
    helpful_dirs = dirs[:num_helpful]
    shared_dir = dirs[num_helpful]
    clone_extras = dirs[num_helpful + 1 : num_helpful + 1 + num_redundant]
    background_dirs = dirs[num_helpful + 1 + num_redundant :]

    protos = np.zeros((k, feature_dim))
    protos[:num_helpful] = prototype_scale * helpful_dirs
    r0 = num_helpful
    for i in range(num_redundant):
        mix = redundant_overlap * shared_dir + np.sqrt(1 - redundant_overlap**2) * clone_extras[i]
        protos[r0 + i] = prototype_scale * mix
    h0 = r0 + num_redundant
    b0 = h0 + num_harmful
    protos[b0:] = prototype_scale * background_dirs

    # Target prototypes are unit mixtures of a primary source direction and
    # two background directions (one strong, one weak), so every background
    # class carries a genuine, weaker share of some targets' signal.
    t_protos = np.zeros((t, feature_dim))
    drawn: list[tuple[int, ...]] = []
    weak_weight = 0.55 * secondary_weight
    n_strong = min(t, num_background)

    def _mix_target(base: np.ndarray, c: int) -> np.ndarray:
        strong = background_dirs[c % n_strong]
        weak = background_dirs[n_strong + (c % max(num_background - n_strong, 1))] \
            if num_background > n_strong else background_dirs[(c + 1) % n_strong]
        mix = base + secondary_weight * strong + weak_weight * weak
        return prototype_scale * mix / np.linalg.norm(mix)

    def _drawers(c: int) -> tuple[int, ...]:
        strong_id = b0 + (c % n_strong)
        weak_id = b0 + n_strong + (c % max(num_background - n_strong, 1)) \
            if num_background > n_strong else b0 + ((c + 1) % n_strong)
        return (strong_id, weak_id)

    for c in range(num_helpful):
        t_protos[c] = _mix_target(helpful_dirs[c], c)
        drawn.append((c,) + _drawers(c))
    t_protos[num_helpful] = _mix_target(shared_dir, num_helpful)
    drawn.append(tuple(range(r0, r0 + num_redundant)) + _drawers(num_helpful))

    harmful_victims = {h0 + i: tuple(range(t)) for i in range(num_harmful)}
    for cid in harmful_victims:
        protos[cid] = t_protos.mean(axis=0)

    source_spec = SourceSpec(
        num_classes=k,
        feature_dim=feature_dim,
        samples_per_class=samples_per_class,
        noise_std=noise_std,
        prototypes=protos,
        redundancy_groups=(tuple(range(r0, r0 + num_redundant)),),
        harmful_classes=frozenset(harmful_victims),
        harmful_victims=harmful_victims,
        harmful_noise_scale=harmful_noise_scale,
        extra_harmful_samples=extra_harmful_samples,
        harmful_blend=harmful_blend,
    )
    target_spec = TargetSpec(
        num_target_classes=t,
        n_train=n_train,
        n_test=n_test,
        prototypes=t_protos,
        noise_std=noise_std,
        drawn_from=tuple(drawn),
        annotations={
            "helpful_classes": list(range(num_helpful)),
            "secondary_helpful_classes": list(range(b0, b0 + t)),
        },
    )
    return source_spec, target_spec


def make_example_specs(
    seed: int = 7,
    num_classes: int = 6,
    feature_dim: int = 32,
    samples_per_class: int = 16,
    noise_std: float = 0.7,
    prototype_scale: float = 3.0,
    num_target_classes: int = 3,
    n_train: int = 90,
    n_test: int = 48,
    test_noise_std: float | None = 0.3,
) -> tuple[SourceSpec, TargetSpec]:
    """Small clean task for datapoint-mask campaigns (leakage/mislabel demos).

    Target class c draws from source class c; no junk classes. Pathologies
    are planted afterwards with `plant_example_pathologies`.
    """
    if num_target_classes > num_classes:
        raise InvalidConfigError("need at least one source class per target class")
    stream = SplitMix64(derive_seed(seed, 0xE8))
    dirs = _orthonormal_directions(stream, feature_dim, num_classes)
    protos = prototype_scale * dirs
    source_spec = SourceSpec(
        num_classes=num_classes,
        feature_dim=feature_dim,
        samples_per_class=samples_per_class,
        noise_std=noise_std,
        prototypes=protos,
    )
    target_spec = TargetSpec(
        num_target_classes=num_target_classes,
        n_train=n_train,
        n_test=n_test,
        prototypes=protos[:num_target_classes].copy(),
        noise_std=noise_std,
        drawn_from=tuple((c,) for c in range(num_target_classes)),
        test_noise_std=test_noise_std,
    )
    return source_spec, target_spec


def planted_train_config(seed: int = 0, **overrides) -> TrainConfig:
    """Training hyperparameters tuned for the planted task's signal strength."""
    params = dict(
        hidden_dim=12,
        epochs=16,
        batch_size=32,
        learning_rate=0.1,
        momentum=0.9,
        weight_decay=5e-4,
        seed=seed,
        transfer_mode="fixed_feature",
    )
    params.update(overrides)
    return TrainConfig(**params)


@dataclass
class PlantInfo:
    duplicate_source_id: int
    duplicate_target_id: int
    mislabeled_source_id: int
    mislabeled_target_id: int


def plant_example_pathologies(
    tasks: TaskData,
    target_spec: TargetSpec,
    seed: int,
    leak_shift: float = 0.5,
    leak_ortho: float = 2.0,
    mislabel_shift: float = 0.45,
    mislabel_ortho: float = 2.0,
    jitter: float = 0.3,
) -> PlantInfo:
    """Inject a leakage duplicate and a mislabeled point into the source data.

    Two target test examples become boundary cases: each is moved part of
    the way from its own prototype toward a confusable target class. The
    first gets an exact copy inside the source data under its own (correct)
    source label - leakage, which should surface as an extreme positive
    example weight because its inclusion rescues the hard victim. The
    second position is copied into the source data under the confusable
    class's source label - a mislabeled point whose inclusion drags the
    boundary over the victim, surfacing as an extreme negative weight.
    """
    stream = SplitMix64(derive_seed(seed, 0x9A7E))
    d = tasks.source_x.shape[1]
    sigma = target_spec.noise_std if target_spec.noise_std > 0 else 1.0
    t_protos = np.asarray(target_spec.prototypes, dtype=np.float64)
    t = target_spec.num_target_classes

    leak_target = tasks.test_y.size - 2
    bad_target = tasks.test_y.size - 1
    if int(tasks.test_y[leak_target]) == int(tasks.test_y[bad_target]):
        leak_target -= 1  # round-robin labels: step back one to get distinct classes

    def _boundary_position(victim: int, shift: float, ortho: float = 0.0) -> tuple[int, np.ndarray]:
        label = int(tasks.test_y[victim])
        confusable = (label + 1) % t
        noise_dir = stream.normal(d)
        noise_dir /= np.linalg.norm(noise_dir)
        axis = t_protos[confusable] - t_protos[label]
        if ortho > 0.0:
            # Push the victim into a far corner of the decision region so no
            # natural source point anchors the model's behavior there.
            noise_dir -= (noise_dir @ axis) / (axis @ axis) * axis
            noise_dir /= np.linalg.norm(noise_dir)
            offset = ortho * sigma * noise_dir
        else:
            offset = jitter * sigma * noise_dir
        pos = t_protos[label] + shift * axis + offset
        tasks.test_x[victim] = pos
        return confusable, pos

    leak_label = int(tasks.test_y[leak_target])
    _, leak_pos = _boundary_position(leak_target, leak_shift, ortho=leak_ortho)
    leak_class = target_spec.drawn_from[leak_label][0]
    leak_source = int(np.flatnonzero(tasks.source_y == leak_class)[-1])
    tasks.source_x[leak_source] = leak_pos

    bad_label = int(tasks.test_y[bad_target])
    bad_confusable, bad_pos = _boundary_position(bad_target, mislabel_shift, ortho=mislabel_ortho)
    wrong = target_spec.drawn_from[bad_confusable][0]
    candidates = np.flatnonzero(tasks.source_y == wrong)
    bad_source = int(candidates[-1] if candidates[-1] != leak_source else candidates[-2])
    tasks.source_x[bad_source] = bad_pos

    info = PlantInfo(
        duplicate_source_id=leak_source,
        duplicate_target_id=leak_target,
        mislabeled_source_id=bad_source,
        mislabeled_target_id=bad_target,
    )
    tasks.metadata["plants"] = info.__dict__
    return info


def dump_tasks(tasks: TaskData, directory: str) -> None:
    """Raw float32 row-major dumps plus a JSON sidecar describing shapes."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    shapes = {}
    for name in ("source_x", "train_x", "test_x"):
        arr = getattr(tasks, name).astype("<f4")
        (out / f"{name}.f32").write_bytes(arr.tobytes())
        shapes[name] = {"shape": list(arr.shape), "dtype": "float32-le"}
    for name in ("source_y", "train_y", "test_y"):
        arr = getattr(tasks, name).astype("<i4")
        (out / f"{name}.i32").write_bytes(arr.tobytes())
        shapes[name] = {"shape": list(arr.shape), "dtype": "int32-le"}
    (out / "shapes.json").write_text(json.dumps({"arrays": shapes, "metadata": tasks.metadata}, indent=2))
