"""Binary file of prepared windows.

Layout (little-endian)::

    b"PREP1\\n"
    u32 record count, u32 channels, u32 samples
    per record: u32 length + UTF-8 file path,
                u32 length + UTF-8 patient id,
                u8 label (1 = epileptic),
                channels * samples float32, channel-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .preprocess import EPILEPTIC, NON_EPILEPTIC, PreparedRecording

MAGIC = b"PREP1\n"


class PreparedFormatError(ValueError):
    pass


def encode_prepared(records) -> bytes:
    records = list(records)
    shape = records[0].window.shape if records else (0, 0)
    out = bytearray(MAGIC)
    out += struct.pack("<III", len(records), *shape)
    for r in records:
        if r.window.shape != shape:
            raise PreparedFormatError(f"window {r.window.shape} differs from {shape}")
        for text in (r.file_path, r.patient_id):
            raw = text.encode("utf-8")
            out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<B", int(r.label == EPILEPTIC))
        out += np.ascontiguousarray(r.window, dtype="<f4").tobytes()
    return bytes(out)


def decode_prepared(blob: bytes) -> list:
    if not blob.startswith(MAGIC):
        raise PreparedFormatError("missing PREP1 magic")
    pos = len(MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise PreparedFormatError("prepared file is truncated")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    count, channels, samples = struct.unpack("<III", take(12))
    records = []
    for _ in range(count):
        texts = []
        for _ in range(2):
            (n,) = struct.unpack("<I", take(4))
            texts.append(take(n).decode("utf-8"))
        (label,) = struct.unpack("<B", take(1))
        window = np.frombuffer(take(4 * channels * samples), dtype="<f4")
        records.append(PreparedRecording(
            patient_id=texts[1], label=EPILEPTIC if label else NON_EPILEPTIC,
            window=window.reshape(channels, samples).astype(np.float64), file_path=texts[0],
        ))
    if pos != len(blob):
        raise PreparedFormatError("trailing bytes after the last record")
    return records


def write_prepared(records, path) -> None:
    Path(path).write_bytes(encode_prepared(records))


def read_prepared(path) -> list:
    return decode_prepared(Path(path).read_bytes())
