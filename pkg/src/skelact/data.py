"""Skeleton sequences: NTU .skeleton ingestion, preprocessing, synthetic data.

Sequence tensors are stored (3, T, N): spatial coordinates x frames x joints.
The model batches them channels-last; see model.batch_tensor.
"""

import io
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParseError


@dataclass
class SkeletonSequence:
    data: np.ndarray  # (C, T, N)
    label: int
    sample_id: str

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise DataError(f"sequence tensor must be (C,T,N), got {self.data.shape}")


@dataclass
class DatasetSplit:
    train: list
    test: list
    class_count: int

    def __post_init__(self):
        ids = [s.sample_id for s in self.train] + [s.sample_id for s in self.test]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate sample ids across splits")
        for s in self.train + self.test:
            if not 0 <= s.label < self.class_count:
                raise DataError(
                    f"label {s.label} outside [0, {self.class_count}) "
                    f"for {s.sample_id}")


# -- NTU .skeleton parsing ----------------------------------------------------

class _LineReader:
    def __init__(self, stream):
        self._lines = stream
        self.line_no = 0

    def tokens(self, expected=None):
        while True:
            raw = self._lines.readline()
            if raw == "":
                raise ParseError("unexpected end of file", self.line_no + 1)
            self.line_no += 1
            parts = raw.split()
            if parts:
                break
        if expected is not None and len(parts) != expected:
            raise ParseError(
                f"expected {expected} values, found {len(parts)}", self.line_no)
        return parts

    def number(self, kind=int):
        parts = self.tokens(expected=1)
        try:
            return kind(parts[0])
        except ValueError:
            raise ParseError(f"not a number: {parts[0]!r}", self.line_no) from None


def parse_ntu_skeleton(file, target_frames, topology=None, sample_id=None,
                       label=0):
    """Parse one NTU .skeleton file into a preprocessed SkeletonSequence.

    Selects the body with the highest total coordinate variance over its
    frames, keeps only x/y/z per joint, then centers and resamples to
    `target_frames` frames.
    """
    from .graph import ntu_topology  # cycle-free deferred import

    if topology is None:
        topology = ntu_topology()
    close = None
    if isinstance(file, (str, os.PathLike)):
        if sample_id is None:
            sample_id = os.path.splitext(os.path.basename(file))[0]
        stream = close = open(file, "r", encoding="ascii")
    elif isinstance(file, bytes):
        stream = io.StringIO(file.decode("ascii"))
    elif hasattr(file, "read"):
        content = file.read()
        if isinstance(content, bytes):
            content = content.decode("ascii")
        stream = io.StringIO(content)
    else:
        raise DataError(f"cannot read skeleton data from {type(file).__name__}")
    if sample_id is None:
        sample_id = "ntu-sample"
    try:
        reader = _LineReader(stream)
        frame_count = reader.number()
        if frame_count < 1:
            raise ParseError(f"frame count must be positive, got {frame_count}",
                             reader.line_no)
        bodies = {}  # body id -> list of (frame_index, (25, 3) array)
        for f in range(frame_count):
            body_count = reader.number()
            if body_count < 0:
                raise ParseError(f"negative body count {body_count}", reader.line_no)
            for _ in range(body_count):
                descriptor = reader.tokens(expected=10)
                body_id = descriptor[0]
                joint_count = reader.number()
                if joint_count != topology.joint_count:
                    raise ParseError(
                        f"joint count {joint_count} != {topology.joint_count}",
                        reader.line_no)
                joints = np.empty((topology.joint_count, 3))
                for j in range(topology.joint_count):
                    values = reader.tokens(expected=12)
                    try:
                        joints[j] = [float(values[0]), float(values[1]),
                                     float(values[2])]
                    except ValueError:
                        raise ParseError("bad joint coordinates",
                                         reader.line_no) from None
                bodies.setdefault(body_id, []).append((f, joints))
    finally:
        if close is not None:
            close.close()
    if not bodies:
        raise ParseError("file contains no bodies", 1)

    def body_variance(frames):
        stack = np.stack([j for _, j in frames])  # (F, 25, 3)
        return float(stack.var(axis=0).sum())

    best = max(sorted(bodies), key=lambda b: body_variance(bodies[b]))
    frames = bodies[best]
    data = np.stack([j for _, j in frames]).transpose(2, 0, 1)  # (3, F, 25)
    seq = SkeletonSequence(data=data, label=label, sample_id=sample_id)
    return preprocess(seq, target_frames, topology)


# -- preprocessing ------------------------------------------------------------

def resample_frames(data, target_frames):
    """Linear interpolation of a (C, T, N) block to exactly target_frames."""
    c, t, n = data.shape
    if t == target_frames:
        return data.copy()
    if t == 1:
        return np.repeat(data, target_frames, axis=1)
    pos = np.linspace(0.0, t - 1.0, target_frames)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, t - 1)
    w = pos - lo
    return data[:, lo] * (1.0 - w)[None, :, None] + data[:, hi] * w[None, :, None]


def preprocess(seq, target_frames, topology):
    """Center on the topology's center joint per frame, resample to T frames."""
    if seq.data.shape[1] < 1:
        raise DataError(f"empty sequence {seq.sample_id}")
    if seq.data.shape[2] != topology.joint_count:
        raise DataError(
            f"sequence has {seq.data.shape[2]} joints, topology expects "
            f"{topology.joint_count}")
    centered = seq.data - seq.data[:, :, topology.center_joint][:, :, None]
    return SkeletonSequence(data=resample_frames(centered, target_frames),
                            label=seq.label, sample_id=seq.sample_id)


# -- synthetic generator -------------------------------------------------------

def generate_synthetic(class_count, samples_per_class, frames, topology, seed,
                       noise=0.02):
    """Labeled synthetic motions: per class a distinct angular frequency and a
    distinct moving-joint subset on the real topology, with per-sample phase
    randomization and Gaussian coordinate noise (sigma in meters).

    Deterministic per seed; split 80/20 per class.
    """
    if class_count < 2:
        raise DataError(f"need at least 2 classes, got {class_count}")
    rng = np.random.default_rng(seed)
    n = topology.joint_count
    movable = [j for j in range(n) if j != topology.center_joint]
    classes = []
    for c in range(class_count):
        freq = 1.0 + 0.75 * c
        count = min(6, len(movable))
        joints = rng.choice(movable, size=count, replace=False)
        directions = rng.standard_normal((count, 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        joint_phase = rng.uniform(0.0, 2.0 * np.pi, size=count)
        classes.append((freq, joints, directions, joint_phase))
    t_grid = np.arange(frames) / frames
    train, test = [], []
    for c, (freq, joints, directions, joint_phase) in enumerate(classes):
        sequences = []
        for s in range(samples_per_class):
            phase = rng.uniform(0.0, 2.0 * np.pi)
            data = np.zeros((3, frames, n))
            angle = 2.0 * np.pi * freq * t_grid[None, :] + phase \
                + joint_phase[:, None]  # (J, T)
            wave = 0.25 * np.sin(angle)  # (J, T)
            data[:, :, joints] = np.einsum("jc,jt->ctj", directions, wave)
            if noise > 0:
                data += rng.normal(0.0, noise, size=data.shape)
            sequences.append(SkeletonSequence(
                data=data, label=c, sample_id=f"c{c:02d}-s{s:03d}"))
        cut = int(samples_per_class * 0.8)
        train.extend(sequences[:cut])
        test.extend(sequences[cut:])
    return DatasetSplit(train=train, test=test, class_count=class_count)


# -- dataset files -------------------------------------------------------------

_DS_MAGIC = b"SKDS"
_DS_VERSION = 1


def save_sequences(path, sequences, class_count):
    """One split per file: (sample_id, label, shape, raw float64 values)."""
    with open(path, "wb") as fh:
        fh.write(_DS_MAGIC)
        fh.write(struct.pack("<IIQ", _DS_VERSION, class_count, len(sequences)))
        for seq in sequences:
            raw = seq.sample_id.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            data = np.ascontiguousarray(seq.data, dtype="<f8")
            fh.write(struct.pack("<qB", seq.label, data.ndim))
            fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            fh.write(data.tobytes())


def load_sequences(path):
    """Return (sequences, class_count) from a split file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _DS_MAGIC:
        raise DataError(f"{path}: not a dataset file")
    version, class_count, count = struct.unpack_from("<IIQ", blob, 4)
    if version != _DS_VERSION:
        raise DataError(f"{path}: unsupported dataset version {version}")
    offset = 16
    sequences = []
    for _ in range(count):
        (id_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        sample_id = blob[offset:offset + id_len].decode("utf-8")
        offset += id_len
        label, ndim = struct.unpack_from("<qB", blob, offset)
        offset += 9
        dims = struct.unpack_from(f"<{ndim}Q", blob, offset)
        offset += 8 * ndim
        n = int(np.prod(dims))
        values = np.frombuffer(blob, dtype="<f8", count=n, offset=offset)
        offset += 8 * n
        sequences.append(SkeletonSequence(
            data=values.reshape(dims).astype(np.float64), label=int(label),
            sample_id=sample_id))
    return sequences, int(class_count)


def save_dataset(directory, split):
    os.makedirs(directory, exist_ok=True)
    save_sequences(os.path.join(directory, "train.skds"), split.train,
                   split.class_count)
    save_sequences(os.path.join(directory, "test.skds"), split.test,
                   split.class_count)


def load_dataset(directory):
    train, c1 = load_sequences(os.path.join(directory, "train.skds"))
    test, c2 = load_sequences(os.path.join(directory, "test.skds"))
    if c1 != c2:
        raise DataError("train/test class counts disagree")
    return DatasetSplit(train=train, test=test, class_count=c1)
