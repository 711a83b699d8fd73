import io
import math

import numpy as np
import pytest

from srcinfl.errors import InvalidConfigError, TooLargeError
from srcinfl.rng import GOLDEN, MASK64
from srcinfl.sampler import (
    SamplingConfig,
    enumerate_manifest,
    inclusion_stats,
    manifest_digest,
    read_manifest,
    sample_manifest,
    write_manifest,
)


def oracle_splitmix(seed):
    """Reference SplitMix64, written independently of srcinfl.rng."""
    state = seed & MASK64

    def nxt():
        nonlocal state
        state = (state + 0x9E3779B97F4A7C15) & MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    return nxt


def oracle_subset(seed, index, num_classes, subset_size):
    """Partial Fisher-Yates with the documented per-subset stream seed."""
    nxt = oracle_splitmix(seed ^ ((index + 1) * GOLDEN) & MASK64)
    ids = list(range(num_classes))
    for i in range(subset_size):
        j = i + nxt() % (num_classes - i)
        ids[i], ids[j] = ids[j], ids[i]
    return sorted(ids[:subset_size])


class TestSampleManifest:
    def test_matches_standalone_oracle(self):
        config = SamplingConfig(seed=1, num_classes=6, subset_size=3, num_models=2)
        manifest = sample_manifest(config)
        expected = [oracle_subset(1, i, 6, 3) for i in range(2)]
        assert manifest.subsets == expected

    def test_frozen_golden_value(self):
        # Frozen from the oracle above; guards against silent PRNG drift.
        assert oracle_subset(1, 0, 6, 3) == [2, 3, 4]
        assert oracle_subset(1, 1, 6, 3) == [0, 1, 3]
        manifest = sample_manifest(SamplingConfig(seed=1, num_classes=6, subset_size=3, num_models=2))
        assert manifest.subsets == [[2, 3, 4], [0, 1, 3]]

    def test_deterministic_repeat(self):
        config = SamplingConfig(seed=99, num_classes=30, subset_size=11, num_models=40)
        assert sample_manifest(config).subsets == sample_manifest(config).subsets

    def test_full_universe_subsets(self):
        manifest = sample_manifest(SamplingConfig(seed=5, num_classes=5, subset_size=5, num_models=3))
        assert manifest.subsets == [[0, 1, 2, 3, 4]] * 3

    def test_paper_operating_point(self):
        config = SamplingConfig(seed=3, num_classes=1000, subset_size=500, num_models=7540)
        manifest = sample_manifest(config)
        assert len(manifest.subsets) == 7540
        assert all(len(s) == 500 for s in manifest.subsets)
        manifest.validate()

    def test_invalid_configs(self):
        with pytest.raises(InvalidConfigError):
            SamplingConfig(seed=0, num_classes=4, subset_size=5, num_models=1)
        with pytest.raises(InvalidConfigError):
            SamplingConfig(seed=0, num_classes=4, subset_size=2, num_models=0)

    def test_marginal_balance(self):
        config = SamplingConfig(seed=123, num_classes=10, subset_size=5, num_models=10_000)
        included, _ = inclusion_stats(sample_manifest(config))
        freq = included / config.num_models
        assert freq.min() >= 0.45 and freq.max() <= 0.55


class TestEnumerateManifest:
    def test_k4_s2(self):
        manifest = enumerate_manifest(4, 2)
        assert manifest.subsets == [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]]

    def test_k3_s3(self):
        assert enumerate_manifest(3, 3).subsets == [[0, 1, 2]]

    def test_k5_s2_order(self):
        manifest = enumerate_manifest(5, 2)
        assert len(manifest.subsets) == 10
        assert manifest.subsets[0] == [0, 1]
        assert manifest.subsets[-1] == [3, 4]

    def test_cap(self):
        with pytest.raises(TooLargeError, match=r"184756"):
            enumerate_manifest(20, 10)

    def test_inclusion_counts_match_binomial(self):
        manifest = enumerate_manifest(6, 3)
        included, excluded = inclusion_stats(manifest)
        assert (included == math.comb(5, 2)).all()
        assert (included + excluded == manifest.num_models).all()


class TestInclusionStats:
    def test_enumeration_uniform(self):
        included, _ = inclusion_stats(enumerate_manifest(4, 2))
        assert included.tolist() == [3, 3, 3, 3]

    def test_single_subset(self):
        config = SamplingConfig(seed=0, num_classes=3, subset_size=2, num_models=1)
        manifest = sample_manifest(config)
        manifest.subsets = [[0, 1]]
        included, excluded = inclusion_stats(manifest)
        assert included.tolist() == [1, 1, 0]
        assert excluded.tolist() == [0, 0, 1]


class TestManifestFile:
    def test_round_trip(self, tmp_path):
        manifest = sample_manifest(SamplingConfig(seed=11, num_classes=9, subset_size=4, num_models=6))
        path = tmp_path / "manifest.json"
        write_manifest(manifest, str(path))
        loaded = read_manifest(str(path))
        assert loaded.config == manifest.config
        assert loaded.subsets == manifest.subsets

    def test_field_order(self):
        manifest = sample_manifest(SamplingConfig(seed=2, num_classes=4, subset_size=2, num_models=1))
        buf = io.StringIO()
        write_manifest(manifest, buf)
        text = buf.getvalue()
        keys = ["version", "seed", "num_classes", "subset_size", "num_models", "subsets"]
        positions = [text.index(f'"{k}"') for k in keys]
        assert positions == sorted(positions)

    def test_digest_stable_and_sensitive(self):
        m1 = sample_manifest(SamplingConfig(seed=1, num_classes=5, subset_size=2, num_models=3))
        m2 = sample_manifest(SamplingConfig(seed=1, num_classes=5, subset_size=2, num_models=3))
        m3 = sample_manifest(SamplingConfig(seed=2, num_classes=5, subset_size=2, num_models=3))
        assert manifest_digest(m1) == manifest_digest(m2)
        assert manifest_digest(m1) != manifest_digest(m3)

    def test_rejects_malformed(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"version":1,"seed":0,"num_classes":3,"subset_size":2,"num_models":1,"subsets":[[0,5]]}')
        with pytest.raises(InvalidConfigError):
            read_manifest(str(path))
