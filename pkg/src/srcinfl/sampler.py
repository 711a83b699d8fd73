"""Class-subset manifests: who saw which source classes.

A manifest pins down the m subsets S_1..S_m of the class universe 0..K-1
that the training campaign will use. Sampling is deterministic per config
(SplitMix64 + partial Fisher-Yates, see `rng`), so a manifest can be
regenerated bit-identically from its four scalar parameters.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from itertools import combinations
from typing import IO

import numpy as np

from .errors import InvalidConfigError, TooLargeError
from .rng import sample_subset

ENUMERATION_CAP = 10_000


@dataclass(frozen=True)
class SamplingConfig:
    seed: int
    num_classes: int
    subset_size: int
    num_models: int

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise InvalidConfigError("seed must fit in an unsigned 64-bit integer")
        if self.num_classes <= 0:
            raise InvalidConfigError("num_classes must be positive")
        if not 1 <= self.subset_size <= self.num_classes:
            raise InvalidConfigError(
                f"subset_size must be in [1, {self.num_classes}], got {self.subset_size}"
            )
        if self.num_models < 1:
            raise InvalidConfigError("num_models must be at least 1")

    @property
    def subset_ratio(self) -> float:
        return self.subset_size / self.num_classes


@dataclass
class SubsetManifest:
    config: SamplingConfig
    subsets: list[list[int]]

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    @property
    def num_models(self) -> int:
        return len(self.subsets)

    def mask_matrix(self) -> np.ndarray:
        """Boolean m x K inclusion matrix."""
        m, k = len(self.subsets), self.config.num_classes
        mask = np.zeros((m, k), dtype=bool)
        for i, subset in enumerate(self.subsets):
            mask[i, subset] = True
        return mask

    def validate(self) -> None:
        cfg = self.config
        if len(self.subsets) != cfg.num_models:
            raise InvalidConfigError(
                f"manifest holds {len(self.subsets)} subsets, config says {cfg.num_models}"
            )
        for i, subset in enumerate(self.subsets):
            if len(subset) != cfg.subset_size:
                raise InvalidConfigError(f"subset {i} has size {len(subset)}")
            if len(set(subset)) != len(subset):
                raise InvalidConfigError(f"subset {i} contains duplicate ids")
            if subset != sorted(subset):
                raise InvalidConfigError(f"subset {i} is not sorted ascending")
            if subset[0] < 0 or subset[-1] >= cfg.num_classes:
                raise InvalidConfigError(f"subset {i} has out-of-range class ids")


def sample_manifest(config: SamplingConfig) -> SubsetManifest:
    """Draw the m subsets defined by `config`.

    Subsets are sampled independently (collisions between subsets are
    possible and harmless), each from its own SplitMix64 stream, so the
    manifest can be produced in any order or in parallel.
    """
    subsets = [
        sample_subset(config.seed, i, config.num_classes, config.subset_size).tolist()
        for i in range(config.num_models)
    ]
    return SubsetManifest(config=config, subsets=subsets)


def enumerate_manifest(num_classes: int, subset_size: int, cap: int = ENUMERATION_CAP) -> SubsetManifest:
    """All C(K, s) subsets in lexicographic order (exact-oracle mode)."""
    if not 1 <= subset_size <= num_classes:
        raise InvalidConfigError("need 1 <= subset_size <= num_classes")
    total = math.comb(num_classes, subset_size)
    if total > cap:
        raise TooLargeError(
            f"C({num_classes},{subset_size}) = {total} exceeds the enumeration cap of {cap}"
        )
    subsets = [list(c) for c in combinations(range(num_classes), subset_size)]
    config = SamplingConfig(
        seed=0, num_classes=num_classes, subset_size=subset_size, num_models=total
    )
    return SubsetManifest(config=config, subsets=subsets)


def inclusion_stats(manifest: SubsetManifest) -> tuple[np.ndarray, np.ndarray]:
    """Per-class (included_count, excluded_count); the two always sum to m."""
    counts = np.zeros(manifest.num_classes, dtype=np.int64)
    for subset in manifest.subsets:
        counts[subset] += 1
    return counts, manifest.num_models - counts


def manifest_to_json(manifest: SubsetManifest) -> str:
    cfg = manifest.config
    # Field order is part of the file contract; keep it stable.
    return json.dumps(
        {
            "version": 1,
            "seed": cfg.seed,
            "num_classes": cfg.num_classes,
            "subset_size": cfg.subset_size,
            "num_models": cfg.num_models,
            "subsets": manifest.subsets,
        },
        separators=(",", ":"),
    )


def manifest_digest(manifest: SubsetManifest) -> str:
    return hashlib.sha256(manifest_to_json(manifest).encode("utf-8")).hexdigest()


def write_manifest(manifest: SubsetManifest, dest: str | IO[str]) -> None:
    text = manifest_to_json(manifest)
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        with open(dest, "w", encoding="utf-8") as fh:
            fh.write(text)


def read_manifest(source: str | IO[str]) -> SubsetManifest:
    if hasattr(source, "read"):
        payload = json.load(source)
    else:
        with open(source, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    if payload.get("version") != 1:
        raise InvalidConfigError(f"unsupported manifest version {payload.get('version')!r}")
    config = SamplingConfig(
        seed=payload["seed"],
        num_classes=payload["num_classes"],
        subset_size=payload["subset_size"],
        num_models=payload["num_models"],
    )
    manifest = SubsetManifest(config=config, subsets=[list(s) for s in payload["subsets"]])
    manifest.validate()
    return manifest
