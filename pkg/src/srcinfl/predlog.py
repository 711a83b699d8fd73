"""Binary prediction-log format shared by the built-in pipeline and external trainers.

Layout (all integers little-endian):

    magic "TINFLOG1" (8) | version u16 = 1 | output_kind u16 = 0 (raw logits)
    | m u32 | n u32 | T u32 | labels n x u16
    | m records of: subset_index u32, logits n*T float32 row-major

Raw logits are the only stored output kind; every derived quantity
(softmax probability, correctness, margins) is computed downstream so one
campaign serves all estimator variants. Floats are 32-bit on disk and
promoted to 64-bit inside the estimators.

Read paths also accept a JSON-lines debug encoding when the payload starts
with "{": a header line {"version":1,"labels":[...]} followed by one record
per line {"subset_index":..., "logits":[[...]]}.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from .errors import DataError, DuplicateRecordError, FormatError, IncompatibleInputsError, TruncationError

MAGIC = b"TINFLOG1"
_HEADER = struct.Struct("<8sHHIII")
RAW_LOGITS_FLAG = 0


@dataclass
class PredictionLog:
    labels: np.ndarray          # (n,) uint16
    subset_indices: np.ndarray  # (m,) uint32
    logits: np.ndarray          # (m, n, T) float32

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint16)
        self.subset_indices = np.ascontiguousarray(self.subset_indices, dtype=np.uint32)
        self.logits = np.ascontiguousarray(self.logits, dtype=np.float32)
        if self.logits.ndim != 3:
            raise DataError(f"logits must be (m, n, T), got shape {self.logits.shape}")
        if self.labels.shape != (self.logits.shape[1],):
            raise DataError("labels length must equal the number of target examples")
        if self.subset_indices.shape != (self.logits.shape[0],):
            raise DataError("one subset index required per record")

    @property
    def num_models(self) -> int:
        return self.logits.shape[0]

    @property
    def num_targets(self) -> int:
        return self.logits.shape[1]

    @property
    def num_target_classes(self) -> int:
        return self.logits.shape[2]

    def validate(self) -> None:
        if self.num_target_classes == 0:
            raise DataError("log has zero target classes")
        if self.labels.size and self.labels.max(initial=0) >= self.num_target_classes:
            bad = int(np.argmax(self.labels >= self.num_target_classes))
            raise DataError(f"label {int(self.labels[bad])} at position {bad} is >= T")
        _check_finite(self.logits)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PredictionLog):
            return NotImplemented
        return (
            self.labels.tobytes() == other.labels.tobytes()
            and self.subset_indices.tobytes() == other.subset_indices.tobytes()
            and self.logits.shape == other.logits.shape
            and self.logits.tobytes() == other.logits.tobytes()
        )


def _check_finite(logits: np.ndarray) -> None:
    finite = np.isfinite(logits)
    if not finite.all():
        rec, row, col = np.argwhere(~finite)[0]
        raise DataError(
            f"non-finite logit at record {rec}, row {row}, col {col}"
        )


def encode_log(log: PredictionLog) -> bytes:
    log.validate()
    m, n, t = log.logits.shape
    out = io.BytesIO()
    out.write(_HEADER.pack(MAGIC, 1, RAW_LOGITS_FLAG, m, n, t))
    out.write(log.labels.astype("<u2").tobytes())
    for i in range(m):
        out.write(struct.pack("<I", int(log.subset_indices[i])))
        out.write(log.logits[i].astype("<f4").tobytes())
    return out.getvalue()


def write_log(log: PredictionLog, dest: str | IO[bytes]) -> int:
    """Serialize `log`; returns the number of bytes written."""
    payload = encode_log(log)
    if hasattr(dest, "write"):
        dest.write(payload)
    else:
        with open(dest, "wb") as fh:
            fh.write(payload)
    return len(payload)


def log_digest(log: PredictionLog) -> str:
    return hashlib.sha256(encode_log(log)).hexdigest()


def _read_exact(stream: IO[bytes], count: int, what: str) -> bytes:
    data = stream.read(count)
    if len(data) != count:
        raise TruncationError(f"expected {count} bytes for {what}, got {len(data)}")
    return data


def _decode_binary(stream: IO[bytes], head: bytes) -> PredictionLog:
    header = head + _read_exact(stream, _HEADER.size - len(head), "header")
    magic, version, kind_flag, m, n, t = _HEADER.unpack(header)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != 1:
        raise FormatError(f"unsupported log version {version}")
    if kind_flag != RAW_LOGITS_FLAG:
        raise FormatError(f"unsupported output-kind flag {kind_flag}")
    labels = np.frombuffer(_read_exact(stream, 2 * n, "labels"), dtype="<u2").copy()
    subset_indices = np.empty(m, dtype=np.uint32)
    logits = np.empty((m, n, t), dtype=np.float32)
    rec_bytes = 4 * n * t
    for i in range(m):
        (subset_indices[i],) = struct.unpack("<I", _read_exact(stream, 4, f"record {i} index"))
        block = _read_exact(stream, rec_bytes, f"record {i} logits")
        logits[i] = np.frombuffer(block, dtype="<f4").reshape(n, t)
    trailing = stream.read(1)
    if trailing:
        raise FormatError("trailing bytes after final record")
    log = PredictionLog(labels=labels, subset_indices=subset_indices, logits=logits)
    log.validate()
    return log


def _decode_jsonl(stream: IO[bytes], head: bytes) -> PredictionLog:
    text = (head + stream.read()).decode("utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError("empty JSON-lines log")
    header = json.loads(lines[0])
    if "labels" not in header:
        raise FormatError("JSON-lines log must start with a header line carrying labels")
    if header.get("version", 1) != 1:
        raise FormatError(f"unsupported log version {header.get('version')!r}")
    labels = np.asarray(header["labels"], dtype=np.uint16)
    indices, blocks = [], []
    for ln in lines[1:]:
        rec = json.loads(ln)
        indices.append(rec["subset_index"])
        blocks.append(np.asarray(rec["logits"], dtype=np.float32))
    if blocks:
        logits = np.stack(blocks)
    else:
        logits = np.empty((0, labels.size, 1), dtype=np.float32)
    log = PredictionLog(
        labels=labels,
        subset_indices=np.asarray(indices, dtype=np.uint32),
        logits=logits,
    )
    log.validate()
    return log


def read_log(source: str | IO[bytes]) -> PredictionLog:
    """Parse a prediction log (binary, or JSON-lines when it starts with '{')."""
    if hasattr(source, "read"):
        return _read_stream(source)
    with open(source, "rb") as fh:
        return _read_stream(fh)


def _read_stream(stream: IO[bytes]) -> PredictionLog:
    head = stream.read(1)
    if not head:
        raise TruncationError("empty log stream")
    if head == b"{":
        return _decode_jsonl(stream, head)
    return _decode_binary(stream, head)


def write_log_jsonl(log: PredictionLog, dest: str | IO[str]) -> None:
    """Debug encoding; larger and slower, but greppable."""
    log.validate()
    lines = [json.dumps({"version": 1, "labels": log.labels.tolist()})]
    for i in range(log.num_models):
        lines.append(
            json.dumps(
                {
                    "subset_index": int(log.subset_indices[i]),
                    "logits": [[float(v) for v in row] for row in log.logits[i]],
                }
            )
        )
    text = "\n".join(lines) + "\n"
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        with open(dest, "w", encoding="utf-8") as fh:
            fh.write(text)


def merge_logs(parts: Sequence[PredictionLog]) -> PredictionLog:
    """Concatenate part-files from a split campaign, sorted by subset index."""
    if not parts:
        raise IncompatibleInputsError("nothing to merge")
    first = parts[0]
    for i, part in enumerate(parts[1:], start=1):
        if part.logits.shape[1:] != first.logits.shape[1:]:
            raise IncompatibleInputsError(
                f"part {i} has target shape {part.logits.shape[1:]}, "
                f"part 0 has {first.logits.shape[1:]}"
            )
        if part.labels.tobytes() != first.labels.tobytes():
            raise IncompatibleInputsError(f"part {i} labels differ from part 0")
    indices = np.concatenate([p.subset_indices for p in parts])
    uniq, counts = np.unique(indices, return_counts=True)
    if (counts > 1).any():
        raise DuplicateRecordError(
            f"subset index {int(uniq[counts > 1][0])} appears in multiple parts"
        )
    logits = np.concatenate([p.logits for p in parts])
    order = np.argsort(indices, kind="stable")
    return PredictionLog(
        labels=first.labels.copy(),
        subset_indices=indices[order],
        logits=logits[order],
    )
