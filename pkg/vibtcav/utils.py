import copy
import hashlib
import json
import logging
from types import MappingProxyType
from typing import Any, Dict, Mapping, Tuple

from termcolor import colored

__all__ = (
    "ColorizeFilter",
    "canonical_json",
    "config_hash",
    "deep_merge",
    "derive_seed",
    "parse_assignment",
    "set_dotted",
)


class ColorizeFilter(logging.Filter):
    COLOR_BY_LEVEL = MappingProxyType(
        {
            logging.DEBUG: "blue",
            logging.WARNING: "yellow",
            logging.ERROR: "red",
            logging.INFO: "white",
        },
    )

    def filter(self, record: logging.LogRecord) -> bool:
        record.raw_msg = record.msg
        color = self.COLOR_BY_LEVEL.get(record.levelno)
        if color:
            record.msg = colored(str(record.msg), color)
        return True


def derive_seed(base: int, stage: str, index: int = 0) -> int:
    """Return a 63-bit seed derived from the base seed, a stage name and an index.

    The derivation is SHA-256 over "{base}:{stage}:{index}" and is stable across versions.

    >>> derive_seed(0, "split") == derive_seed(0, "split", 0)
    True
    >>> derive_seed(0, "split") != derive_seed(1, "split")
    True
    >>> 0 <= derive_seed(7, "concept", 3) < 2**63
    True
    """
    digest = hashlib.sha256(f"{base}:{stage}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


def parse_assignment(assignment: str) -> Tuple[str, Any]:
    """Split a KEY=VALUE override into the dotted key and its decoded value.

    >>> parse_assignment('train.epochs=5')
    ('train.epochs', 5)
    >>> parse_assignment('architecture=plain-cnn')
    ('architecture', 'plain-cnn')
    >>> parse_assignment('rotation_speeds=[1797, 1730]')
    ('rotation_speeds', [1797, 1730])
    >>> parse_assignment('epochs')
    Traceback (most recent call last):
        raise ValueError(f"expected KEY=VALUE, got {assignment!r}")
    ValueError: expected KEY=VALUE, got 'epochs'
    """
    key, sep, raw = assignment.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ValueError(f"expected KEY=VALUE, got {assignment!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def set_dotted(document: Dict[str, Any], key: str, value: Any) -> None:
    """Set a value in nested dicts addressed by a dotted path, creating levels as needed.

    >>> doc = {"train": {"epochs": 50}}
    >>> set_dotted(doc, "train.epochs", 3)
    >>> doc
    {'train': {'epochs': 3}}
    >>> set_dotted(doc, "tcav.repetitions", 2)
    >>> doc["tcav"]
    {'repetitions': 2}
    """
    *parents, leaf = key.split(".")
    node = document
    for part in parents:
        child = node.get(part)
        if not isinstance(child, dict):
            child = {}
            node[part] = child
        node = child
    node[leaf] = value


def deep_merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(dict(base))
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def canonical_json(document: Any) -> str:
    return json.dumps(document, sort_keys=True, separators=(",", ":"))


def config_hash(document: Mapping[str, Any]) -> str:
    return hashlib.sha256(canonical_json(document).encode()).hexdigest()
