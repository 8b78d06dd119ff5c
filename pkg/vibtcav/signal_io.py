"""On-disk formats: signal files, dataset files, network checkpoints, CAV records and JSON
documents. All writes go through a temp file and ``os.replace``."""

import contextlib
import json
import logging
import os
import pathlib
import struct
import tempfile
from typing import Any, Dict, Iterator, List, Mapping, Optional, Tuple, Union

import filelock
import numpy as np
from pathvalidate import sanitize_filename

from vibtcav import __version__, tensor_net
from vibtcav.cav import Cav
from vibtcav.exceptions import ConfigurationError, FormatError
from vibtcav.tensor_net import Network
from vibtcav.training import LABELS, Dataset, SegmentInfo
from vibtcav.utils import canonical_json
from vibtcav.vibration_sim import Signal

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SIGNAL_MAGIC = b"VIBSIG01"
DATASET_MAGIC = b"VIBDAT01"
CHECKPOINT_MAGIC = b"VIBNET01"
LOCK_NAME = ".vibtcav.lock"

PathLike = Union[str, os.PathLike]

_SIGNAL_HEADER = struct.Struct("<Id")
_LENGTH = struct.Struct("<I")


def get_filelock(directory: PathLike, timeout: int = 10) -> filelock.FileLock:
    """Lock guarding every writer of a run directory."""
    path = pathlib.Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    return filelock.FileLock(str(path.resolve() / LOCK_NAME), timeout=timeout)


def sanitize_str(name: str, ext: str = "", max_length: int = 255) -> str:
    """File name from a free-form name; never hidden."""
    if name.startswith("."):
        name = "_" + name
    sanitized = sanitize_filename(name, replacement_text="_", max_len=max_length - len(ext))
    return (sanitized or "_") + ext


def atomic_write(path: PathLike, data: bytes) -> pathlib.Path:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp_name)
        raise
    logger.debug(f"Wrote {path} ({len(data)} bytes)")
    return path


def atomic_write_text(path: PathLike, text: str) -> pathlib.Path:
    return atomic_write(path, text.encode("utf-8"))


# JSON documents


def stamp(document: Mapping[str, Any], config_hash: str) -> Dict[str, Any]:
    stamped = dict(document)
    stamped.update(
        {
            "schema_version": SCHEMA_VERSION,
            "tool_version": __version__,
            "config_hash": config_hash,
        },
    )
    return stamped


def dump_json(document: Any) -> str:
    return json.dumps(document, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path: PathLike, document: Mapping[str, Any], config_hash: str) -> pathlib.Path:
    return atomic_write_text(path, dump_json(stamp(document, config_hash)))


def read_json(path: PathLike) -> Dict[str, Any]:
    raw = pathlib.Path(path).read_bytes()
    try:
        document = json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as err:
        raise FormatError(path, err.start, "not UTF-8 text") from err
    except json.JSONDecodeError as err:
        raise FormatError(path, err.pos, err.msg) from err
    if not isinstance(document, dict):
        raise FormatError(path, 0, "expected a JSON object")
    return document


def write_csv(path: PathLike, header: List[str], rows: List[Mapping[str, Any]]) -> pathlib.Path:
    """Plain comma-separated table; floats keep their shortest round-trip repr."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_csv_cell(row[column]) for column in header))
    return atomic_write_text(path, "\n".join(lines) + "\n")


def _csv_cell(value: Any) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if value is None:
        return ""
    return str(value)


# Signal files


def is_binary_signal(path: PathLike) -> bool:
    with open(path, "rb") as f:
        return f.read(len(SIGNAL_MAGIC)) == SIGNAL_MAGIC


def write_signal_binary(path: PathLike, signal: Signal) -> pathlib.Path:
    """Samples are stored as little-endian f32."""
    payload = np.asarray(signal.samples, dtype="<f4").tobytes()
    header = SIGNAL_MAGIC + _SIGNAL_HEADER.pack(len(signal), float(signal.sample_rate))
    return atomic_write(path, header + payload)


def read_signal_binary(path: PathLike) -> Signal:
    raw = pathlib.Path(path).read_bytes()
    if raw[: len(SIGNAL_MAGIC)] != SIGNAL_MAGIC:
        raise FormatError(path, 0, f"expected magic {SIGNAL_MAGIC!r}")
    offset = len(SIGNAL_MAGIC)
    if len(raw) < offset + _SIGNAL_HEADER.size:
        raise FormatError(path, len(raw), "truncated header")
    count, sample_rate = _SIGNAL_HEADER.unpack_from(raw, offset)
    if not sample_rate > 0:
        raise FormatError(
            path,
            offset + _LENGTH.size,
            f"sample rate must be positive, got {sample_rate}",
        )
    offset += _SIGNAL_HEADER.size
    expected = offset + 4 * count
    if len(raw) != expected:
        raise FormatError(
            path,
            min(len(raw), expected),
            f"header announces {count} samples, payload holds {(len(raw) - offset) / 4:g}",
        )
    samples = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).astype(np.float64)
    if not np.all(np.isfinite(samples)):
        bad = int(np.argmin(np.isfinite(samples)))
        raise FormatError(path, offset + 4 * bad, "non-finite sample")
    return Signal(samples, sample_rate)


def write_signal_csv(path: PathLike, signal: Signal, header: bool = True) -> pathlib.Path:
    """One sample per line, 17 significant digits."""
    lines = ["sample"] if header else []
    lines.extend(f"{value:.17g}" for value in signal.samples)
    return atomic_write_text(path, "\n".join(lines) + "\n")


def _csv_lines(raw: bytes) -> Iterator[Tuple[int, bytes]]:
    offset = 0
    for line in raw.splitlines(keepends=True):
        yield offset, line.strip()
        offset += len(line)


def read_signal_csv(path: PathLike, sample_rate: float) -> Signal:
    if not sample_rate > 0:
        raise ConfigurationError(f"CSV signal {path} needs a positive sample rate")
    raw = pathlib.Path(path).read_bytes()
    values: List[float] = []
    for number, (offset, line) in enumerate(_csv_lines(raw)):
        if not line:
            continue
        cell = line.split(b",")[0]
        try:
            value = float(cell)
        except ValueError as err:
            if number == 0:
                continue  # header
            raise FormatError(path, offset, f"not a number: {cell[:32]!r}") from err
        if not np.isfinite(value):
            raise FormatError(path, offset, f"non-finite sample {cell[:32]!r}")
        values.append(value)
    if not values:
        raise FormatError(path, len(raw), "no samples")
    return Signal(np.asarray(values, dtype=np.float64), sample_rate)


def read_signal(path: PathLike, sample_rate: Optional[float] = None) -> Signal:
    """Binary files carry their rate; CSV files take ``sample_rate``."""
    if is_binary_signal(path):
        return read_signal_binary(path)
    if sample_rate is None:
        raise ConfigurationError(f"{path} is a CSV signal; ingest.sample_rate must be set")
    return read_signal_csv(path, sample_rate)


# Dataset files


def _write_framed(
    path: PathLike,
    magic: bytes,
    header: Mapping[str, Any],
    payload: bytes,
) -> pathlib.Path:
    encoded = canonical_json(header).encode("utf-8")
    return atomic_write(path, magic + _LENGTH.pack(len(encoded)) + encoded + payload)


def _read_framed(path: PathLike, magic: bytes) -> Tuple[Dict[str, Any], bytes, int]:
    raw = pathlib.Path(path).read_bytes()
    if raw[: len(magic)] != magic:
        raise FormatError(path, 0, f"expected magic {magic!r}")
    offset = len(magic)
    if len(raw) < offset + _LENGTH.size:
        raise FormatError(path, len(raw), "truncated header length")
    (length,) = _LENGTH.unpack_from(raw, offset)
    offset += _LENGTH.size
    if len(raw) < offset + length:
        raise FormatError(path, len(raw), f"header of {length} bytes is truncated")
    try:
        header = json.loads(raw[offset : offset + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise FormatError(path, offset, f"header is not JSON: {err}") from err
    if not isinstance(header, dict):
        raise FormatError(path, offset, "header is not a JSON object")
    offset += length
    return header, raw[offset:], offset


def _payload(path: PathLike, payload: bytes, offset: int, count: int) -> np.ndarray:
    if len(payload) != 8 * count:
        raise FormatError(
            path,
            offset + min(len(payload), 8 * count),
            f"expected {count} f64 values, found {len(payload) / 8:g}",
        )
    return np.frombuffer(payload, dtype="<f8", count=count).astype(np.float64)


def write_dataset(path: PathLike, dataset: Dataset) -> pathlib.Path:
    header = {
        "schema_version": SCHEMA_VERSION,
        "count": len(dataset),
        "segment_length": dataset.segment_length,
        "sample_rate": dataset.sample_rate,
        "labels": [int(label) for label in dataset.labels],
        "info": [
            {"rotation_speed": i.rotation_speed, "fault_type": i.fault_type, "source": i.source}
            for i in dataset.info
        ],
    }
    return _write_framed(path, DATASET_MAGIC, header, dataset.segments.astype("<f8").tobytes())


def read_dataset(path: PathLike) -> Dataset:
    header, payload, offset = _read_framed(path, DATASET_MAGIC)
    try:
        count = int(header["count"])
        length = int(header["segment_length"])
        info = [
            SegmentInfo(float(i["rotation_speed"]), str(i["fault_type"]), str(i["source"]))
            for i in header["info"]
        ]
        labels = np.asarray(header["labels"], dtype=np.int64)
        sample_rate = float(header["sample_rate"])
    except (KeyError, TypeError, ValueError) as err:
        raise FormatError(path, len(DATASET_MAGIC), f"bad dataset header: {err}") from err
    if labels.ndim != 1 or len(labels) != count or len(info) != count:
        raise FormatError(path, len(DATASET_MAGIC), f"header describes {count} segments")
    if labels.size and not (labels.min() >= 0 and labels.max() < len(LABELS)):
        raise FormatError(
            path,
            len(DATASET_MAGIC),
            f"labels must lie in [0, {len(LABELS)}), got {labels.min()}..{labels.max()}",
        )
    segments = _payload(path, payload, offset, count * length).reshape(count, length)
    return Dataset(segments, labels, info, sample_rate)


# Network checkpoints


def write_checkpoint(path: PathLike, net: Network) -> pathlib.Path:
    params = tensor_net.parameters(net)
    payload = b"".join(np.asarray(p, dtype="<f8").tobytes() for p in params)
    return _write_framed(path, CHECKPOINT_MAGIC, tensor_net.architecture_descriptor(net), payload)


def read_checkpoint(path: PathLike) -> Network:
    descriptor, payload, offset = _read_framed(path, CHECKPOINT_MAGIC)
    net = tensor_net.network_from_descriptor(descriptor)
    params = tensor_net.parameters(net)
    values = _payload(path, payload, offset, sum(p.size for p in params))
    start = 0
    for param in params:
        param[...] = values[start : start + param.size].reshape(param.shape)
        start += param.size
    return net


# CAV records


def write_cav(path: PathLike, cav: Cav, config_hash: str, **extra: Any) -> pathlib.Path:
    """JSON record at ``path`` plus the direction as raw little-endian f64 next to it."""
    path = pathlib.Path(path)
    direction_path = path.with_suffix(".f64")
    atomic_write(direction_path, cav.direction.astype("<f8").tobytes())
    record = {
        "layer": cav.layer,
        "probe_accuracy": cav.probe_accuracy,
        "bias": cav.bias,
        "dimension": cav.dimension,
        "direction_file": direction_path.name,
        **extra,
    }
    return write_json(path, record, config_hash)


def read_cav(path: PathLike) -> Cav:
    path = pathlib.Path(path)
    record = read_json(path)
    direction_path = path.with_name(record.get("direction_file", path.with_suffix(".f64").name))
    try:
        dimension = int(record["dimension"])
        layer = int(record["layer"])
        probe_accuracy = float(record["probe_accuracy"])
        bias = float(record["bias"])
    except (KeyError, TypeError, ValueError) as err:
        raise FormatError(path, 0, f"bad CAV record: {err!r}") from err
    direction = _payload(direction_path, direction_path.read_bytes(), 0, dimension)
    return Cav(layer=layer, direction=direction, probe_accuracy=probe_accuracy, bias=bias)