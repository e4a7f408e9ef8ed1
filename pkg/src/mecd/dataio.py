"""Patch-embedding dataset container (MECD) and its in-memory model.

A MECD file carries an ordered sequence of object classes, each split into
normal-only training records and mixed test records, where every record is a
spatial grid of patch-embedding vectors. The engine is backbone-agnostic: it
never sees images, only these vectors.

Binary layout (all integers little-endian):

    header   magic b"MECD" | version u32 (= 1) | dimension d u32 | class count u32
    class    name (u32 byte length + UTF-8) | train count u32 | test count u32
             followed by the train records, then the test records
    record   image_id (u32 byte length + UTF-8) | label u8 (0 normal, 1 anomalous)
             grid_h u32 | grid_w u32 | grid_h*grid_w*d float32 values,
             row-major, patch-major then channel

Floats are IEEE-754 32-bit little-endian, so read(write(s)) reproduces s
bit-exactly. Strings are length-prefixed UTF-8. Readers validate every type
invariant and reject malformed input with a record-level location.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import BinaryIO

import numpy as np

MAGIC = b"MECD"
FORMAT_VERSION = 1

_U32 = struct.Struct("<I")
_U8 = struct.Struct("<B")


class DatasetFormatError(Exception):
    """Raised when a dataset violates the MECD format or a type invariant."""


class Label(IntEnum):
    NORMAL = 0
    ANOMALOUS = 1


@dataclass(eq=False)
class EmbeddingRecord:
    """One image's patch-embedding grid plus label and identity.

    ``patches`` has shape (grid_h * grid_w, d), float32, patches in row-major
    grid order.
    """

    image_id: str
    label: Label
    grid_h: int
    grid_w: int
    patches: np.ndarray

    def __post_init__(self) -> None:
        self.label = Label(self.label)
        self.patches = np.ascontiguousarray(self.patches, dtype=np.float32)
        if self.patches.ndim != 2:
            raise DatasetFormatError(
                f"record {self.image_id!r}: patches must be 2-D (n_patches, d), "
                f"got shape {self.patches.shape}"
            )

    @property
    def dimension(self) -> int:
        return int(self.patches.shape[1])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingRecord):
            return NotImplemented
        return (
            self.image_id == other.image_id
            and self.label == other.label
            and self.grid_h == other.grid_h
            and self.grid_w == other.grid_w
            and self.patches.shape == other.patches.shape
            and self.patches.tobytes() == other.patches.tobytes()
        )


@dataclass
class ClassData:
    """All records of one object class: normal-only train, mixed test."""

    name: str
    train: list[EmbeddingRecord] = field(default_factory=list)
    test: list[EmbeddingRecord] = field(default_factory=list)

    def records(self) -> list[EmbeddingRecord]:
        return list(self.train) + list(self.test)


@dataclass
class ClassStream:
    """Ordered classes for sequential introduction; order is significant."""

    dimension: int
    classes: list[ClassData] = field(default_factory=list)

    def class_names(self) -> list[str]:
        return [c.name for c in self.classes]

    def get_class(self, name: str) -> ClassData:
        for c in self.classes:
            if c.name == name:
                return c
        raise KeyError(f"unknown class {name!r}; stream has {self.class_names()}")


def validate_stream(stream: ClassStream) -> None:
    """Check every type invariant; raise DatasetFormatError naming the offender."""
    if stream.dimension < 1:
        raise DatasetFormatError(f"dimension must be >= 1, got {stream.dimension}")
    seen: set[str] = set()
    for cls in stream.classes:
        if cls.name in seen:
            raise DatasetFormatError(f"duplicate class name {cls.name!r}")
        seen.add(cls.name)
        for split, records in (("train", cls.train), ("test", cls.test)):
            for i, rec in enumerate(records):
                where = f"record {i} of class {cls.name!r} ({split})"
                if rec.grid_h < 1 or rec.grid_w < 1:
                    raise DatasetFormatError(
                        f"{where}: grid {rec.grid_h}x{rec.grid_w} must be positive"
                    )
                if rec.patches.shape[0] != rec.grid_h * rec.grid_w:
                    raise DatasetFormatError(
                        f"{where}: {rec.patches.shape[0]} patches != grid "
                        f"{rec.grid_h}x{rec.grid_w}"
                    )
                if rec.dimension != stream.dimension:
                    raise DatasetFormatError(
                        f"{where}: dimension {rec.dimension} != dataset "
                        f"dimension {stream.dimension}"
                    )
                if not np.all(np.isfinite(rec.patches)):
                    bad = int(np.flatnonzero(~np.isfinite(rec.patches).all(axis=1))[0])
                    raise DatasetFormatError(
                        f"{where}: non-finite value in patch {bad}"
                    )
                if split == "train" and rec.label != Label.NORMAL:
                    raise DatasetFormatError(
                        f"{where}: anomalous label inside a train split"
                    )


def write_dataset(stream: ClassStream, sink: BinaryIO) -> None:
    """Serialize a validated ClassStream to the MECD binary format.

    The stream is validated up front; nothing is written on invariant
    violation.
    """
    validate_stream(stream)
    sink.write(MAGIC)
    sink.write(_U32.pack(FORMAT_VERSION))
    sink.write(_U32.pack(stream.dimension))
    sink.write(_U32.pack(len(stream.classes)))
    for cls in stream.classes:
        _write_str(sink, cls.name)
        sink.write(_U32.pack(len(cls.train)))
        sink.write(_U32.pack(len(cls.test)))
        for rec in cls.train:
            _write_record(sink, rec)
        for rec in cls.test:
            _write_record(sink, rec)


def write_dataset_file(stream: ClassStream, path) -> None:
    with open(path, "wb") as sink:
        write_dataset(stream, sink)


def _write_str(sink: BinaryIO, text: str) -> None:
    data = text.encode("utf-8")
    sink.write(_U32.pack(len(data)))
    sink.write(data)


def _write_record(sink: BinaryIO, rec: EmbeddingRecord) -> None:
    _write_str(sink, rec.image_id)
    sink.write(_U8.pack(int(rec.label)))
    sink.write(_U32.pack(rec.grid_h))
    sink.write(_U32.pack(rec.grid_w))
    payload = np.ascontiguousarray(rec.patches, dtype="<f4")
    sink.write(payload.tobytes())


class _Cursor:
    """Sequential reader over an in-memory buffer with located errors."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DatasetFormatError(f"truncated payload at byte {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def u8(self) -> int:
        return _U8.unpack(self.take(1))[0]

    def text(self) -> str:
        n = self.u32()
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as err:
            raise DatasetFormatError(f"invalid UTF-8 string at byte {self.pos}") from err

    def floats(self, count: int) -> np.ndarray:
        raw = self.take(count * 4)
        return np.frombuffer(raw, dtype="<f4").astype(np.float32, copy=True)


def read_dataset(source: BinaryIO | bytes) -> ClassStream:
    """Parse and validate a MECD payload; rejects malformed input."""
    data = source if isinstance(source, bytes) else source.read()
    cur = _Cursor(data)
    if cur.take(4) != MAGIC:
        raise DatasetFormatError("bad magic: not a MECD file")
    version = cur.u32()
    if version != FORMAT_VERSION:
        raise DatasetFormatError(
            f"unsupported version {version}, expected {FORMAT_VERSION}"
        )
    dimension = cur.u32()
    n_classes = cur.u32()
    classes = []
    for _ in range(n_classes):
        name = cur.text()
        n_train = cur.u32()
        n_test = cur.u32()
        train = [_read_record(cur, dimension) for _ in range(n_train)]
        test = [_read_record(cur, dimension) for _ in range(n_test)]
        classes.append(ClassData(name=name, train=train, test=test))
    if cur.pos != len(data):
        raise DatasetFormatError(
            f"{len(data) - cur.pos} trailing bytes after byte {cur.pos}"
        )
    stream = ClassStream(dimension=dimension, classes=classes)
    validate_stream(stream)
    return stream


def read_dataset_file(path) -> ClassStream:
    with open(path, "rb") as source:
        return read_dataset(source)


def _read_record(cur: _Cursor, dimension: int) -> EmbeddingRecord:
    image_id = cur.text()
    raw_label = cur.u8()
    if raw_label not in (0, 1):
        raise DatasetFormatError(
            f"record {image_id!r}: label byte {raw_label} not in {{0, 1}}"
        )
    grid_h = cur.u32()
    grid_w = cur.u32()
    if grid_h < 1 or grid_w < 1:
        raise DatasetFormatError(
            f"record {image_id!r}: grid {grid_h}x{grid_w} must be positive"
        )
    values = cur.floats(grid_h * grid_w * dimension)
    patches = values.reshape(grid_h * grid_w, dimension)
    return EmbeddingRecord(
        image_id=image_id,
        label=Label(raw_label),
        grid_h=grid_h,
        grid_w=grid_w,
        patches=patches,
    )


def stack_patches(records: list[EmbeddingRecord]) -> np.ndarray:
    """Concatenate all patch embeddings of the records into one (n, d) array."""
    if not records:
        raise ValueError("no records to stack")
    return np.concatenate([rec.patches for rec in records], axis=0)
