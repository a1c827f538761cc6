"""On-disk formats: frame datasets, checkpoints, metrics and eye CSVs.

The two binary containers share one philosophy: little-endian, fixed
headers, explicit sizes, no pickling.  ``DMLD`` holds simulated frame
pairs (drive command in, received power out) with their operating
points; ``DMLC`` holds named float64 arrays, which covers model
checkpoints and any scalar metadata stored as 0-d arrays.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .dsp import EyeHistogram, Metrics
from .surrogate.data import FrameDataset

DATASET_MAGIC = b"DMLD"
CHECKPOINT_MAGIC = b"DMLC"
FORMAT_VERSION = 1

METRICS_HEADER = ("approach", "rs_gbd", "ipp_ma", "ibias_ma", "prec_dbm",
                  "ser", "mi_bits", "seed")

_DATASET_HEADER = struct.Struct("<4sIdQQ")      # magic, version, R_s, N, T
_FRAME_META = struct.Struct("<ddIQ")            # bias, swing, pulse, seed
_CHECKPOINT_HEADER = struct.Struct("<4sIQ")     # magic, version, entries


class StorageError(IOError):
    pass


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise StorageError(f"truncated file: expected {n} bytes for {what}, "
                           f"got {len(data)}")
    return data


def _check_magic_version(magic: bytes, version: int, expect: bytes):
    kind = expect.decode()
    if magic != expect:
        raise StorageError(f"not a {kind} file (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise StorageError(f"unsupported {kind} version {version}; this "
                           f"build reads version {FORMAT_VERSION}")


def write_dataset(path, data: FrameDataset):
    path = Path(path)
    n, t = data.commands.shape
    with open(path, "wb") as f:
        f.write(_DATASET_HEADER.pack(DATASET_MAGIC, FORMAT_VERSION,
                                     float(data.symbol_rate), n, t))
        for k in range(n):
            f.write(_FRAME_META.pack(float(data.bias[k]),
                                     float(data.swing[k]),
                                     int(data.square[k]), int(data.seed)))
            f.write(np.ascontiguousarray(data.commands[k], "<f8").tobytes())
            f.write(np.ascontiguousarray(data.received[k], "<f8").tobytes())


def _read_dataset_header(f) -> tuple[float, int, int]:
    magic, version, rate, n, t = _DATASET_HEADER.unpack(
        _read_exact(f, _DATASET_HEADER.size, "dataset header"))
    _check_magic_version(magic, version, DATASET_MAGIC)
    return rate, n, t


def iter_dataset(path) -> Iterator[tuple[float, float, bool, int,
                                         np.ndarray, np.ndarray]]:
    """Stream (bias, swing, square, seed, command, received) per frame."""
    path = Path(path)
    with open(path, "rb") as f:
        _, n, t = _read_dataset_header(f)
        row = 8 * t
        for k in range(n):
            bias, swing, pulse, seed = _FRAME_META.unpack(
                _read_exact(f, _FRAME_META.size, f"frame {k} metadata"))
            command = np.frombuffer(
                _read_exact(f, row, f"frame {k} command"), "<f8")
            received = np.frombuffer(
                _read_exact(f, row, f"frame {k} received"), "<f8")
            yield bias, swing, bool(pulse), seed, command, received


def read_dataset(path) -> FrameDataset:
    path = Path(path)
    with open(path, "rb") as f:
        rate, n, t = _read_dataset_header(f)
        body = n * (_FRAME_META.size + 16 * t)
        actual = path.stat().st_size - _DATASET_HEADER.size
        if actual != body:
            raise StorageError(f"dataset body of {path.name}: expected "
                               f"{body} bytes, got {actual}")
    commands = np.empty((n, t))
    received = np.empty((n, t))
    bias = np.empty(n)
    swing = np.empty(n)
    square = np.empty(n, bool)
    seed = 0
    for k, (b, s, sq, sd, cmd, rec) in enumerate(iter_dataset(path)):
        bias[k], swing[k], square[k], seed = b, s, sq, sd
        commands[k] = cmd
        received[k] = rec
    return FrameDataset(rate, commands, received, bias, swing, square, seed)


def write_checkpoint(path, arrays: dict[str, np.ndarray]):
    """Named float64 arrays; scalars go in as 0-d arrays."""
    path = Path(path)
    with open(path, "wb") as f:
        f.write(_CHECKPOINT_HEADER.pack(CHECKPOINT_MAGIC, FORMAT_VERSION,
                                        len(arrays)))
        for name, value in arrays.items():
            raw = name.encode()
            value = np.asarray(value, dtype=float)
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", value.ndim))
            f.write(struct.pack(f"<{value.ndim}Q", *value.shape))
            f.write(np.ascontiguousarray(value, "<f8").tobytes())


def read_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    arrays: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        magic, version, count = _CHECKPOINT_HEADER.unpack(
            _read_exact(f, _CHECKPOINT_HEADER.size, "checkpoint header"))
        _check_magic_version(magic, version, CHECKPOINT_MAGIC)
        for k in range(count):
            (name_len,) = struct.unpack(
                "<H", _read_exact(f, 2, f"entry {k} name length"))
            name = _read_exact(f, name_len, f"entry {k} name").decode()
            (ndim,) = struct.unpack(
                "<I", _read_exact(f, 4, f"{name!r} rank"))
            shape = struct.unpack(
                f"<{ndim}Q", _read_exact(f, 8 * ndim, f"{name!r} shape"))
            size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            data = np.frombuffer(
                _read_exact(f, 8 * size, f"{name!r} data"), "<f8")
            arrays[name] = data.reshape(shape).copy()
        trailing = f.read(1)
    if trailing:
        raise StorageError(f"{path.name} has data past the last entry")
    return arrays


def _fmt(value: float) -> str:
    return f"{value:.10g}"


def write_metrics_csv(path, rows: Iterable[Metrics]):
    path = Path(path)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_HEADER)
        for m in rows:
            writer.writerow([m.approach, _fmt(m.rs_gbd), _fmt(m.ipp_ma),
                             _fmt(m.ibias_ma), _fmt(m.prec_dbm), _fmt(m.ser),
                             _fmt(m.mi_bits), str(m.seed)])


def read_metrics_csv(path) -> list[Metrics]:
    path = Path(path)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != list(METRICS_HEADER):
            raise StorageError(f"{path.name}: expected metrics header "
                               f"{','.join(METRICS_HEADER)}, got "
                               f"{header}")
        rows = []
        for rec in reader:
            if len(rec) != len(METRICS_HEADER):
                raise StorageError(f"{path.name}: row with {len(rec)} "
                                   f"fields, expected {len(METRICS_HEADER)}")
            rows.append(Metrics(rec[0], float(rec[1]), float(rec[2]),
                                float(rec[3]), float(rec[4]), float(rec[5]),
                                float(rec[6]), int(rec[7])))
    return rows


def write_eye_csv(path, eye: EyeHistogram):
    """Counts grid, one row per sample phase, plus the bin edges."""
    path = Path(path)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["amp_edge"] + [_fmt(e) for e in eye.amp_edges])
        for phase in range(eye.counts.shape[0]):
            writer.writerow([f"phase_{phase}"]
                            + [str(int(c)) for c in eye.counts[phase]])
