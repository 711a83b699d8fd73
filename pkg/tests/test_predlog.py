import io
import struct

import numpy as np
import pytest

from srcinfl.errors import (
    DataError,
    DuplicateRecordError,
    FormatError,
    IncompatibleInputsError,
    TruncationError,
)
from srcinfl.predlog import (
    PredictionLog,
    encode_log,
    merge_logs,
    read_log,
    write_log,
    write_log_jsonl,
)


def tiny_log():
    return PredictionLog(
        labels=np.array([0], dtype=np.uint16),
        subset_indices=np.array([0], dtype=np.uint32),
        logits=np.zeros((1, 1, 2), dtype=np.float32),
    )


def random_log(m=5, n=3, t=4, seed=0):
    rng = np.random.default_rng(seed)
    return PredictionLog(
        labels=rng.integers(0, t, size=n).astype(np.uint16),
        subset_indices=np.arange(m, dtype=np.uint32),
        logits=rng.normal(size=(m, n, t)).astype(np.float32),
    )


class TestWrite:
    def test_layout_byte_count(self):
        # magic 8 + version 2 + kind 2 + m 4 + n 4 + T 4 + labels 2 + idx 4 + floats 8
        buf = io.BytesIO()
        count = write_log(tiny_log(), buf)
        assert count == 38
        assert len(buf.getvalue()) == 38

    def test_layout_bytes_exact(self):
        payload = encode_log(tiny_log())
        expected = (
            b"TINFLOG1"
            + struct.pack("<HHIII", 1, 0, 1, 1, 2)
            + struct.pack("<H", 0)
            + struct.pack("<I", 0)
            + struct.pack("<ff", 0.0, 0.0)
        )
        assert payload == expected

    def test_empty_log_is_legal(self):
        log = PredictionLog(
            labels=np.array([0, 1], dtype=np.uint16),
            subset_indices=np.zeros(0, dtype=np.uint32),
            logits=np.zeros((0, 2, 3), dtype=np.float32),
        )
        payload = encode_log(log)
        assert len(payload) == 24 + 2 * 2

    def test_refuses_non_finite(self):
        log = random_log()
        log.logits[3, 1, 2] = np.nan
        with pytest.raises(DataError, match=r"record 3, row 1, col 2"):
            encode_log(log)

    def test_refuses_bad_label(self):
        log = random_log(t=4)
        log.labels[0] = 4
        with pytest.raises(DataError, match="label"):
            encode_log(log)


class TestRead:
    def test_round_trip_preserves_bits(self):
        log = random_log(m=7, n=4, t=3, seed=11)
        buf = io.BytesIO(encode_log(log))
        loaded = read_log(buf)
        assert loaded == log

    def test_round_trip_via_file(self, tmp_path):
        log = random_log(seed=5)
        path = tmp_path / "log.tinflog"
        write_log(log, str(path))
        assert read_log(str(path)) == log
        # write -> read -> write is byte-identical
        assert encode_log(read_log(str(path))) == path.read_bytes()

    def test_bad_magic(self):
        payload = bytearray(encode_log(tiny_log()))
        payload[0] ^= 0xFF
        with pytest.raises(FormatError, match="magic"):
            read_log(io.BytesIO(bytes(payload)))

    def test_truncated_record(self):
        payload = encode_log(random_log())
        with pytest.raises(TruncationError, match="expected"):
            read_log(io.BytesIO(payload[:-3]))

    def test_truncated_header(self):
        with pytest.raises(TruncationError):
            read_log(io.BytesIO(b"TINF"))

    def test_trailing_garbage(self):
        payload = encode_log(tiny_log()) + b"x"
        with pytest.raises(FormatError, match="trailing"):
            read_log(io.BytesIO(payload))

    def test_nan_payload_rejected(self):
        log = tiny_log()
        payload = bytearray(encode_log(log))
        payload[-4:] = struct.pack("<f", float("nan"))
        with pytest.raises(DataError):
            read_log(io.BytesIO(bytes(payload)))


class TestJsonl:
    def test_round_trip(self):
        log = random_log(m=3, n=2, t=2, seed=3)
        buf = io.StringIO()
        write_log_jsonl(log, buf)
        text = buf.getvalue()
        assert text.startswith("{")
        loaded = read_log(io.BytesIO(text.encode()))
        assert loaded.labels.tolist() == log.labels.tolist()
        assert loaded.subset_indices.tolist() == log.subset_indices.tolist()
        assert np.allclose(loaded.logits, log.logits)

    def test_header_required(self):
        body = '{"subset_index": 0, "logits": [[0.0, 1.0]]}\n'
        with pytest.raises(FormatError, match="header"):
            read_log(io.BytesIO(body.encode()))


class TestMerge:
    def test_identity(self):
        log = random_log()
        assert merge_logs([log]) == log

    def test_two_parts_sorted(self):
        log = random_log(m=4, seed=9)
        part_a = PredictionLog(
            labels=log.labels, subset_indices=log.subset_indices[2:], logits=log.logits[2:]
        )
        part_b = PredictionLog(
            labels=log.labels, subset_indices=log.subset_indices[:2], logits=log.logits[:2]
        )
        merged = merge_logs([part_a, part_b])
        assert merged == log

    def test_duplicate_subset_index(self):
        log = random_log()
        with pytest.raises(DuplicateRecordError):
            merge_logs([log, log])

    def test_label_mismatch(self):
        a = random_log(seed=1)
        b = random_log(seed=2)
        b.labels = (b.labels + 1) % b.num_target_classes
        b.subset_indices = b.subset_indices + 100
        with pytest.raises(IncompatibleInputsError):
            merge_logs([a, b])

    def test_shape_mismatch(self):
        a = random_log(n=3)
        b = random_log(n=2)
        b.subset_indices = b.subset_indices + 100
        with pytest.raises(IncompatibleInputsError):
            merge_logs([a, b])
