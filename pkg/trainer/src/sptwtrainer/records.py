"""Reader for the spectwin dataset record format and its JSON manifest.

Implemented against the wire format, not the generator package: header
"SPTW" + u32 version + u32 record size, then packed records of 1024x2
float32 features, label byte, combo byte, SNR/SINR float32 (NaN = absent),
u64 seed, and a CRC32 over the record body.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"SPTW"
VERSION = 1
WINDOW = 1024
FEATURE_BYTES = WINDOW * 2 * 4
TRAILER = struct.Struct("<BBffQ")
HEADER = struct.Struct("<4sII")
RECORD_SIZE = FEATURE_BYTES + TRAILER.size + 4

COMBO_NAMES = ("EMPTY", "CELL_ONLY", "RADAR_ONLY", "BOTH")


class DatasetUnreadable(Exception):
    """Record file is missing, corrupt, or from an unsupported version."""


@dataclass
class RecordArrays:
    """Whole record file in memory as parallel arrays."""

    features: np.ndarray  # (N, 1024, 2) float32
    labels: np.ndarray    # (N,) int64
    combos: np.ndarray    # (N,) uint8
    snr_db: np.ndarray    # (N,) float32, NaN where absent
    sinr_db: np.ndarray   # (N,) float32, NaN where absent

    def __len__(self) -> int:
        return self.labels.size


def load_records(path) -> RecordArrays:
    blob = Path(path).read_bytes()
    if len(blob) < HEADER.size:
        raise DatasetUnreadable(f"{path}: missing header")
    magic, version, rec_size = HEADER.unpack_from(blob, 0)
    if magic != MAGIC or version != VERSION or rec_size != RECORD_SIZE:
        raise DatasetUnreadable(f"{path}: unsupported format {magic!r} v{version}")
    body = blob[HEADER.size :]
    n, leftover = divmod(len(body), RECORD_SIZE)
    if leftover:
        raise DatasetUnreadable(f"{path}: trailing {leftover} bytes")

    features = np.empty((n, WINDOW, 2), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    combos = np.empty(n, dtype=np.uint8)
    snrs = np.empty(n, dtype=np.float32)
    sinrs = np.empty(n, dtype=np.float32)
    for i in range(n):
        rec = body[i * RECORD_SIZE : (i + 1) * RECORD_SIZE]
        payload, (crc,) = rec[:-4], struct.unpack("<I", rec[-4:])
        if zlib.crc32(payload) != crc:
            raise DatasetUnreadable(f"{path}: record {i} failed checksum")
        features[i] = np.frombuffer(payload[:FEATURE_BYTES], dtype="<f4").reshape(WINDOW, 2)
        label, combo, snr, sinr, _seed = TRAILER.unpack(payload[FEATURE_BYTES:])
        labels[i], combos[i], snrs[i], sinrs[i] = label, combo, snr, sinr
    return RecordArrays(features, labels, combos, snrs, sinrs)


def load_manifest(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("splits") is None:
        raise DatasetUnreadable(f"{path}: manifest has no train/val/test splits")
    return doc


def split_indices(manifest: dict) -> dict[str, np.ndarray]:
    return {name: np.asarray(idx, dtype=np.int64)
            for name, idx in manifest["splits"].items()}
