import io
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from srcinfl.errors import FlaggedClassError, IncompatibleInputsError, InvalidConfigError
from srcinfl.influence import (
    AggregateInfluence,
    OutputKind,
    aggregate,
    derive_output,
    derive_outputs,
    estimate,
    estimate_from_responses,
    group_by_target_class,
    load_matrix,
    rank,
    save_matrix,
    write_aggregate_csv,
)
from srcinfl.predlog import PredictionLog
from srcinfl.sampler import SamplingConfig, enumerate_manifest, sample_manifest


def log_from_responses(values, labels=None, indices=None):
    """Encode scalar responses as [v, 0] logit rows so RAW_MARGIN recovers v."""
    values = np.asarray(values, dtype=np.float32)  # (m, n)
    m, n = values.shape
    logits = np.zeros((m, n, 2), dtype=np.float32)
    logits[:, :, 0] = values
    return PredictionLog(
        labels=np.zeros(n, dtype=np.uint16) if labels is None else labels,
        subset_indices=np.arange(m, dtype=np.uint32) if indices is None else indices,
        logits=logits,
    )


class TestDeriveOutput:
    def test_raw_margin_and_correctness(self):
        assert derive_output([2.0, 1.0, 0.0], 0, OutputKind.RAW_MARGIN) == 1.0
        assert derive_output([2.0, 1.0, 0.0], 0, OutputKind.IS_CORRECT) == 1.0
        assert derive_output([2.0, 1.0, 0.0], 1, OutputKind.IS_CORRECT) == 0.0

    def test_softmax_correct_against_direct_formula(self):
        got = derive_output([2.0, 1.0, 0.0], 0, OutputKind.SOFTMAX_CORRECT)
        want = math.exp(2) / (math.exp(2) + math.exp(1) + math.exp(0))
        assert got == pytest.approx(want, abs=1e-15)

    def test_equal_logits_margins_vanish(self):
        for kind in (OutputKind.RAW_MARGIN, OutputKind.SOFTMAX_MARGIN):
            assert derive_output([0.5, 0.5, 0.5], 2, kind) == 0.0

    def test_tie_counts_as_incorrect(self):
        assert derive_output([1.0, 1.0], 0, OutputKind.IS_CORRECT) == 0.0

    def test_softmax_margin(self):
        z = np.array([1.0, 3.0, -1.0])
        p = np.exp(z - z.max())
        p /= p.sum()
        got = derive_output(z, 1, OutputKind.SOFTMAX_MARGIN)
        assert got == pytest.approx(p[1] - p[0], abs=1e-15)

    def test_max_subtraction_handles_large_logits(self):
        assert derive_output([1000.0, 999.0], 0, OutputKind.SOFTMAX_CORRECT) == pytest.approx(
            1 / (1 + math.exp(-1)), abs=1e-12
        )

    def test_empty_rejected(self):
        with pytest.raises(InvalidConfigError):
            derive_output(np.zeros(0), 0, OutputKind.RAW_MARGIN)

    def test_parse(self):
        assert OutputKind.parse("raw_margin") is OutputKind.RAW_MARGIN
        with pytest.raises(InvalidConfigError):
            OutputKind.parse("nope")

    @given(
        st.lists(st.floats(-50, 50), min_size=2, max_size=6),
        st.floats(0.1, 10),
        st.floats(-20, 20),
    )
    @settings(max_examples=100, deadline=None)
    def test_raw_margin_affine_covariance(self, logits, a, b):
        # margins scale by a and ignore b under z -> a*z + b (a > 0)
        z = np.asarray(logits)
        base = derive_output(z, 0, OutputKind.RAW_MARGIN)
        scaled = derive_output(a * z + b, 0, OutputKind.RAW_MARGIN)
        assert scaled == pytest.approx(a * base, rel=1e-9, abs=1e-9)


class TestEstimate:
    def brute_force(self, subsets, responses, num_classes):
        """Direct conditional means per the difference-in-means definition."""
        responses = np.asarray(responses, dtype=float)
        values = np.zeros(num_classes)
        valid = np.zeros(num_classes, dtype=bool)
        for k in range(num_classes):
            inside = [responses[i] for i, s in enumerate(subsets) if k in s]
            outside = [responses[i] for i, s in enumerate(subsets) if k not in s]
            if inside and outside:
                values[k] = np.mean(inside) - np.mean(outside)
                valid[k] = True
        return values, valid

    def test_enumeration_oracle_k4(self):
        manifest = enumerate_manifest(4, 2)
        responses = np.array([[1.0 if 1 in s else 0.0] for s in manifest.subsets])
        log = log_from_responses(responses)
        matrix = estimate(manifest, log, OutputKind.RAW_MARGIN)
        expected = np.array([-1 / 3, 1.0, -1 / 3, -1 / 3])
        assert np.abs(matrix.values[:, 0] - expected).max() <= 1e-12
        brute, _ = self.brute_force(manifest.subsets, responses[:, 0], 4)
        assert np.abs(matrix.values[:, 0] - brute).max() <= 1e-12

    def test_enumeration_matches_brute_force_random_f(self):
        manifest = enumerate_manifest(5, 2)
        rng = np.random.default_rng(0)
        responses = rng.normal(size=(manifest.num_models, 1))
        matrix = estimate(manifest, log_from_responses(responses), OutputKind.RAW_MARGIN)
        brute, _ = self.brute_force(manifest.subsets, responses[:, 0], 5)
        assert np.abs(matrix.values[:, 0] - brute).max() <= 1e-12

    def test_constant_outputs_zero_influence(self):
        manifest = enumerate_manifest(4, 2)
        responses = np.full((manifest.num_models, 3), 0.7)
        matrix = estimate(manifest, log_from_responses(responses), OutputKind.RAW_MARGIN)
        assert np.abs(matrix.values).max() == 0.0

    def test_invalid_classes_flagged_not_poisoned(self):
        config = SamplingConfig(seed=0, num_classes=3, subset_size=2, num_models=2)
        manifest = sample_manifest(config)
        manifest.subsets = [[0, 1], [0, 2]]  # class 0 never excluded
        matrix = estimate(manifest, log_from_responses(np.ones((2, 1))), OutputKind.RAW_MARGIN)
        assert not matrix.valid[0]
        assert matrix.valid[1] and matrix.valid[2]
        assert np.isfinite(matrix.values).all()

    def test_count_mismatch(self):
        manifest = enumerate_manifest(4, 2)
        with pytest.raises(IncompatibleInputsError):
            estimate(manifest, log_from_responses(np.ones((3, 1))), OutputKind.RAW_MARGIN)

    def test_affine_equivariance(self):
        manifest = sample_manifest(SamplingConfig(seed=4, num_classes=8, subset_size=4, num_models=60))
        rng = np.random.default_rng(1)
        responses = rng.normal(size=(60, 5))
        base = estimate(manifest, log_from_responses(responses), OutputKind.RAW_MARGIN)
        scaled = estimate(
            manifest, log_from_responses(2.5 * responses + 7.0), OutputKind.RAW_MARGIN
        )
        assert np.abs(scaled.values - 2.5 * base.values).max() <= 1e-12

    def test_zero_under_independence(self):
        # outputs drawn independently of masks: all influences within 3 SEs
        m, k = 2000, 10
        manifest = sample_manifest(SamplingConfig(seed=5, num_classes=k, subset_size=5, num_models=m))
        rng = np.random.default_rng(7)
        responses = rng.normal(size=(m, 1))
        mask = manifest.mask_matrix()
        matrix = estimate(manifest, log_from_responses(responses), OutputKind.RAW_MARGIN)
        for c in range(k):
            inside = responses[mask[:, c], 0]
            outside = responses[~mask[:, c], 0]
            se = math.sqrt(inside.var(ddof=1) / inside.size + outside.var(ddof=1) / outside.size)
            assert abs(matrix.values[c, 0]) < 3 * se

    def test_rank_invariant_under_record_permutation(self):
        manifest = sample_manifest(SamplingConfig(seed=9, num_classes=6, subset_size=3, num_models=40))
        rng = np.random.default_rng(3)
        responses = rng.normal(size=(40, 2))
        log = log_from_responses(responses)
        perm = rng.permutation(40)
        shuffled = log_from_responses(
            responses[perm], indices=np.asarray(perm, dtype=np.uint32)
        )
        a = rank(aggregate(estimate(manifest, log, OutputKind.RAW_MARGIN)), "top", 6)
        b = rank(aggregate(estimate(manifest, shuffled, OutputKind.RAW_MARGIN)), "top", 6)
        assert a == b

    def test_provenance_digests_present(self):
        manifest = enumerate_manifest(4, 2)
        matrix = estimate(manifest, log_from_responses(np.ones((6, 1))), OutputKind.RAW_MARGIN)
        assert "manifest_sha256" in matrix.provenance
        assert "log_sha256" in matrix.provenance


class TestAggregateAndRank:
    def oracle_matrix(self):
        manifest = enumerate_manifest(4, 2)
        responses = np.array([[1.0 if 1 in s else 0.0] for s in manifest.subsets])
        return estimate(manifest, log_from_responses(responses), OutputKind.RAW_MARGIN)

    def test_single_column_aggregate(self):
        matrix = self.oracle_matrix()
        agg = aggregate(matrix)
        assert np.allclose(agg.values, [-1 / 3, 1.0, -1 / 3, -1 / 3], atol=1e-12)

    def test_all_zero(self):
        matrix = self.oracle_matrix()
        matrix.values[:] = 0.0
        assert np.abs(aggregate(matrix).values).max() == 0.0

    def test_rank_top1(self):
        agg = aggregate(self.oracle_matrix())
        assert rank(agg, "top", 1) == [1]

    def test_rank_tie_rule(self):
        agg = aggregate(self.oracle_matrix())
        # classes 0, 2, 3 tie at -1/3; lower ids first
        assert rank(agg, "bottom", 3) == [0, 2, 3]

    def test_top_bottom_are_reversals_up_to_ties(self):
        rng = np.random.default_rng(11)
        values = rng.normal(size=9)
        agg = AggregateInfluence(
            values=values,
            valid=np.ones(9, dtype=bool),
            included_count=np.full(9, 5),
            excluded_count=np.full(9, 5),
            output_kind=OutputKind.RAW_MARGIN,
        )
        assert rank(agg, "top", 9) == rank(agg, "bottom", 9)[::-1]

    def test_rank_excludes_invalid_and_range_checks(self):
        agg = aggregate(self.oracle_matrix())
        agg.valid[1] = False
        assert rank(agg, "top", 3) == [0, 2, 3]
        with pytest.raises(InvalidConfigError):
            rank(agg, "top", 4)

    def test_mean_over_targets(self):
        manifest = enumerate_manifest(4, 2)
        rng = np.random.default_rng(2)
        responses = rng.normal(size=(6, 4))
        matrix = estimate(manifest, log_from_responses(responses), OutputKind.RAW_MARGIN)
        agg = aggregate(matrix)
        assert np.allclose(agg.values, matrix.values.mean(axis=1), atol=0)


class TestGroupByTargetClass:
    def test_single_class_equals_aggregate(self):
        manifest = enumerate_manifest(4, 2)
        rng = np.random.default_rng(4)
        responses = rng.normal(size=(6, 3))
        matrix = estimate(manifest, log_from_responses(responses), OutputKind.RAW_MARGIN)
        grouped = group_by_target_class(matrix, np.zeros(3, dtype=int))
        assert np.allclose(grouped.values[:, 0], aggregate(matrix).values)

    def test_singleton_classes_equal_columns(self):
        manifest = enumerate_manifest(4, 2)
        rng = np.random.default_rng(5)
        responses = rng.normal(size=(6, 3))
        matrix = estimate(manifest, log_from_responses(responses), OutputKind.RAW_MARGIN)
        grouped = group_by_target_class(matrix, np.array([0, 1, 2]))
        assert np.allclose(grouped.values, matrix.values)

    def test_empty_class_invalid(self):
        manifest = enumerate_manifest(4, 2)
        responses = np.ones((6, 2))
        matrix = estimate(manifest, log_from_responses(responses), OutputKind.RAW_MARGIN)
        grouped = group_by_target_class(matrix, np.array([0, 2]))
        assert not grouped.valid[:, 1].any()
        assert grouped.counts.tolist() == [1, 0, 1]


class TestPersistence:
    def test_matrix_round_trip(self, tmp_path):
        manifest = enumerate_manifest(4, 2)
        rng = np.random.default_rng(6)
        matrix = estimate(
            manifest, log_from_responses(rng.normal(size=(6, 3))), OutputKind.RAW_MARGIN
        )
        path = tmp_path / "influence.f64"
        save_matrix(matrix, str(path))
        loaded = load_matrix(str(path))
        assert np.array_equal(loaded.values, matrix.values)
        assert loaded.included_count.tolist() == matrix.included_count.tolist()
        assert loaded.output_kind is matrix.output_kind
        assert loaded.provenance == matrix.provenance

    def test_aggregate_csv(self):
        manifest = enumerate_manifest(4, 2)
        responses = np.array([[1.0 if 1 in s else 0.0] for s in manifest.subsets])
        agg = aggregate(estimate(manifest, log_from_responses(responses), OutputKind.RAW_MARGIN))
        buf = io.StringIO()
        write_aggregate_csv(agg, buf)
        lines = buf.getvalue().strip().splitlines()
        assert lines[0] == "class_id,influence,included_count,excluded_count"
        assert len(lines) == 5
        row1 = lines[2].split(",")
        assert row1[0] == "1" and float(row1[1]) == 1.0
