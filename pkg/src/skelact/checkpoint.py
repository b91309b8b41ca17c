"""Flat binary checkpoint format.

Layout (all integers little-endian):

    magic   4 bytes  b"SKCP"
    version u32      currently 1
    count   u64      number of records
    record  repeated:
        name_len u16, name utf-8
        flags    u8   bit 0: trainable
        ndim     u8
        dims     u64 * ndim
        values   float64 little-endian, C order

Round trips are bit exact: save(load(save(...))) reproduces identical bytes.
"""

import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"SKCP"
VERSION = 1


def write_records(path, records):
    """records: iterable of (name, array, trainable)."""
    records = list(records)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(records)))
        for name, array, trainable in records:
            raw = name.encode("utf-8")
            array = np.ascontiguousarray(array, dtype="<f8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<BB", 1 if trainable else 0, array.ndim))
            fh.write(struct.pack(f"<{array.ndim}Q", *array.shape))
            fh.write(array.tobytes())


def read_records(path):
    """Return the ordered list of (name, array, trainable)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<IQ", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    offset = 16
    records = []
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            flags, ndim = struct.unpack_from("<BB", blob, offset)
            offset += 2
            dims = struct.unpack_from(f"<{ndim}Q", blob, offset)
            offset += 8 * ndim
            n = int(np.prod(dims)) if ndim else 1
            values = np.frombuffer(blob, dtype="<f8", count=n, offset=offset)
            offset += 8 * n
            records.append((name, values.reshape(dims).astype(np.float64),
                            bool(flags & 1)))
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    if offset != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after records")
    return records


def save_store(path, store):
    write_records(path, ((p.name, p.data, p.trainable) for p in store))


def load_store(path, store):
    """Load values into an existing store; names and shapes must match."""
    records = read_records(path)
    by_name = {name: array for name, array, _ in records}
    for p in store:
        if p.name not in by_name:
            raise CheckpointError(f"checkpoint is missing parameter {p.name!r}")
        array = by_name.pop(p.name)
        if array.shape != p.data.shape:
            raise CheckpointError(
                f"shape drift for {p.name!r}: checkpoint {array.shape}, "
                f"model {p.data.shape}")
        p.data[...] = array
    if by_name:
        extra = sorted(by_name)[:5]
        raise CheckpointError(f"checkpoint has unknown parameters: {extra}")
