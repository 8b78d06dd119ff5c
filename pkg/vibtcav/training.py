"""Segmentation, normalization, splits, the training loop and test metrics."""

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from vibtcav import tensor_net
from vibtcav.exceptions import ConfigurationError, DomainError, TrainingError
from vibtcav.tensor_net import Network
from vibtcav.vibration_sim import (
    FAULT_TYPES,
    ConceptSpec,
    Signal,
    draw_params,
    simulate_concept,
)

logger = logging.getLogger(__name__)

LABELS: Dict[str, int] = {name: index for index, name in enumerate(FAULT_TYPES)}
OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True)
class SegmentInfo:
    rotation_speed: float  # rpm
    fault_type: str
    source: str


@dataclass
class Dataset:
    segments: np.ndarray  # (N, d)
    labels: np.ndarray  # (N,)
    info: List[SegmentInfo]
    sample_rate: float

    def __post_init__(self) -> None:
        self.segments = np.asarray(self.segments, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.segments.ndim != 2:
            raise DomainError(f"Segments must form an (N, d) matrix, got {self.segments.shape}")
        if not len(self.segments) == len(self.labels) == len(self.info):
            raise DomainError("Segments, labels and metadata must have the same length")
        if not self.sample_rate > 0:
            raise DomainError(f"Sample rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def segment_length(self) -> int:
        return self.segments.shape[1]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.segments[idx],
            self.labels[idx],
            [self.info[i] for i in idx],
            self.sample_rate,
        )


@dataclass(frozen=True)
class SplitIndices:
    train: List[int]
    val: List[int]
    test: List[int]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 0.01
    optimizer: str = "sgd"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigurationError(f"train.epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"train.batch_size must be at least 1, got {self.batch_size}")
        if not self.learning_rate >= 0 or not math.isfinite(self.learning_rate):
            raise ConfigurationError(
                f"train.learning_rate must be finite and >= 0, got {self.learning_rate}",
            )
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(
                f"train.optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}",
            )


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    train_acc: float
    val_acc: float


@dataclass
class History:
    records: List[EpochRecord] = field(default_factory=list)

    @property
    def best_epoch(self) -> int:
        """Epoch with the lowest validation loss; the earliest one on ties."""
        losses = [r.val_loss for r in self.records]
        return self.records[int(np.argmin(losses))].epoch


def segment(signal: Signal, d: int) -> List[np.ndarray]:
    """Cut the signal into consecutive non-overlapping windows, dropping the remainder."""
    if d < 1:
        raise DomainError(f"Segment length must be at least 1, got {d}")
    count = len(signal) // d
    return [signal.samples[i * d : (i + 1) * d].copy() for i in range(count)]


def normalize(values: np.ndarray) -> np.ndarray:
    """Min-max map onto [-1, 1]; constant segments map to zeros."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise DomainError("Cannot normalize an empty segment")
    lo = values.min()
    hi = values.max()
    if hi == lo:
        return np.zeros_like(values)
    return np.clip(2.0 * (values - lo) / (hi - lo) - 1.0, -1.0, 1.0)


def split(dataset: Dataset, seed: int) -> SplitIndices:
    """Seeded 60/20/20 partition; floor shares for val and test, the remainder goes to train."""
    n = len(dataset)
    if n < 5:
        raise ConfigurationError(f"Need at least 5 segments to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(n * 0.2)
    n_test = int(n * 0.2)
    n_train = n - n_val - n_test
    return SplitIndices(
        train=sorted(order[:n_train].tolist()),
        val=sorted(order[n_train : n_train + n_val].tolist()),
        test=sorted(order[n_train + n_val :].tolist()),
    )


class _Sgd:
    def __init__(self, params: List[np.ndarray], learning_rate: float):
        self.params = params
        self.learning_rate = learning_rate

    def step(self, grads: List[np.ndarray]) -> None:
        for param, grad in zip(self.params, grads):
            param -= self.learning_rate * grad


class _Adam:
    beta1 = 0.9
    beta2 = 0.999
    eps = 1e-8

    def __init__(self, params: List[np.ndarray], learning_rate: float):
        self.params = params
        self.learning_rate = learning_rate
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: List[np.ndarray]) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for param, grad, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            param -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


def _make_optimizer(net: Network, cfg: TrainConfig) -> Union[_Sgd, _Adam]:
    params = tensor_net.parameters(net)
    if cfg.optimizer == "adam":
        return _Adam(params, cfg.learning_rate)
    return _Sgd(params, cfg.learning_rate)


def _loss_and_accuracy(
    net: Network,
    data: Dataset,
    indices: Sequence[int],
    batch_size: int = 256,
) -> Tuple[float, float]:
    total_loss = 0.0
    correct = 0
    for start in range(0, len(indices), batch_size):
        idx = np.asarray(indices[start : start + batch_size], dtype=np.int64)
        value, logits = tensor_net.loss(net, data.segments[idx], data.labels[idx])
        total_loss += value * len(idx)
        correct += int((logits.argmax(axis=1) == data.labels[idx]).sum())
    return total_loss / len(indices), correct / len(indices)


def train(
    net: Network,
    data: Dataset,
    splits: SplitIndices,
    cfg: TrainConfig,
    hide_progress: bool = True,
) -> Tuple[Network, History]:
    """Mini-batch training; returns the checkpoint with the lowest validation loss."""
    if not splits.train or not splits.val:
        raise ConfigurationError("Training needs non-empty train and validation splits")
    if data.segment_length != net.input_size:
        raise DomainError(
            f"Segments have length {data.segment_length}, network expects {net.input_size}",
        )

    rng = np.random.default_rng(cfg.seed)
    optimizer = _make_optimizer(net, cfg)
    train_idx = np.asarray(splits.train, dtype=np.int64)
    history = History()
    best_net: Optional[Network] = None
    best_loss = math.inf

    logger.info(
        f"Training {net.name} for {cfg.epochs} epochs on {len(train_idx)} segments "
        f"({cfg.optimizer}, lr={cfg.learning_rate}, batch={cfg.batch_size})",
    )
    for epoch in tqdm(range(1, cfg.epochs + 1), disable=hide_progress, unit="epoch"):
        order = rng.permutation(train_idx)
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            value, grads = tensor_net.grad_loss_wrt_params(
                net,
                data.segments[batch],
                data.labels[batch],
            )
            if not math.isfinite(value):
                raise TrainingError(epoch, value)
            optimizer.step(grads)

        train_loss, train_acc = _loss_and_accuracy(net, data, splits.train)
        val_loss, val_acc = _loss_and_accuracy(net, data, splits.val)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise TrainingError(epoch, train_loss if not math.isfinite(train_loss) else val_loss)
        history.records.append(EpochRecord(epoch, train_loss, val_loss, train_acc, val_acc))
        logger.debug(
            f"epoch {epoch}: train loss {train_loss:.4f} acc {train_acc:.3f}, "
            f"val loss {val_loss:.4f} acc {val_acc:.3f}",
        )
        if val_loss < best_loss:
            best_loss = val_loss
            best_net = copy.deepcopy(net)

    assert best_net is not None
    logger.info(f"Best epoch {history.best_epoch} with validation loss {best_loss:.4f}")
    return best_net, history


def predict(net: Network, inputs: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Argmax class per input; ties go to the lowest class index."""
    predictions = []
    for start in range(0, len(inputs), batch_size):
        logits, _ = tensor_net.forward_batch(net, inputs[start : start + batch_size])
        predictions.append(logits.argmax(axis=1))
    return np.concatenate(predictions) if predictions else np.zeros(0, dtype=np.int64)


def evaluate(net: Network, data: Dataset, indices: Sequence[int]) -> Tuple[float, np.ndarray]:
    """Accuracy and the C x C confusion matrix (rows: true class, columns: predicted)."""
    idx = np.asarray(indices, dtype=np.int64)
    confusion = np.zeros((net.num_classes, net.num_classes), dtype=np.int64)
    if len(idx) == 0:
        return 0.0, confusion
    predicted = predict(net, data.segments[idx])
    np.add.at(confusion, (data.labels[idx], predicted), 1)
    return float(np.trace(confusion) / len(idx)), confusion


def per_class_recall(confusion: np.ndarray) -> np.ndarray:
    confusion = np.asarray(confusion, dtype=np.float64)
    support = confusion.sum(axis=1)
    recall = np.zeros(len(confusion), dtype=np.float64)
    mask = support > 0
    recall[mask] = np.diag(confusion)[mask] / support[mask]
    return recall


def make_synthetic_task(
    specs: Tuple[ConceptSpec, ConceptSpec, ConceptSpec],
    counts: Tuple[int, int, int],
    seed: int,
    rotation_speed: float = 0.0,
) -> Dataset:
    """Simulate a labeled, normalized healthy/inner/outer dataset.

    Each class draws its segments the way concept positives are drawn: f_char fixed to the
    class target (or drawn from the interval when randomized), the remaining parameters
    from the class spec ranges.
    """
    if len(specs) != len(FAULT_TYPES) or len(counts) != len(FAULT_TYPES):
        raise ConfigurationError("The synthetic task needs one spec and one count per class")
    healthy, inner, outer = specs
    if healthy.a_range != (0.0, 0.0):
        raise ConfigurationError("The healthy class must be pure noise (a_range = [0, 0])")
    for name, spec in (("inner", inner), ("outer", outer)):
        if spec.target_f_char is None:
            raise ConfigurationError(f"The {name} class needs a fixed f_char")
    assert inner.target_f_char is not None and outer.target_f_char is not None
    band = max(inner.exclusion_band, outer.exclusion_band)
    if abs(inner.target_f_char - outer.target_f_char) <= band * outer.target_f_char:
        raise ConfigurationError(
            f"Inner ({inner.target_f_char:.3f} Hz) and outer ({outer.target_f_char:.3f} Hz) "
            f"frequencies overlap within the ±{band:.0%} exclusion band",
        )
    lengths = {spec.length for spec in specs}
    rates = {spec.sample_rate for spec in specs}
    if len(lengths) != 1 or len(rates) != 1:
        raise ConfigurationError("All class specs must share length and sample rate")

    rng = np.random.default_rng(seed)
    segments = []
    labels = []
    info = []
    for fault_type, spec, count in zip(FAULT_TYPES, specs, counts):
        for index in range(count):
            if spec.target_f_char is None:
                f_char = float(rng.uniform(*spec.f_char_interval))
            else:
                f_char = spec.target_f_char
            params = draw_params(spec, f_char, rng)
            noise_seed = int(rng.integers(0, 2**63 - 1))
            signal = simulate_concept(params, spec.length, spec.sample_rate, noise_seed)
            segments.append(normalize(signal.samples))
            labels.append(LABELS[fault_type])
            info.append(SegmentInfo(rotation_speed, fault_type, f"synthetic-{fault_type}-{index}"))

    logger.info(f"Simulated {len(segments)} synthetic segments at {rotation_speed} rpm")
    return Dataset(np.stack(segments), np.asarray(labels), info, specs[0].sample_rate)


def merge_datasets(parts: Sequence[Dataset]) -> Dataset:
    if not parts:
        raise ConfigurationError("Nothing to merge")
    if len({p.segment_length for p in parts}) != 1 or len({p.sample_rate for p in parts}) != 1:
        raise ConfigurationError("Datasets disagree in segment length or sample rate")
    return Dataset(
        np.concatenate([p.segments for p in parts]),
        np.concatenate([p.labels for p in parts]),
        [i for p in parts for i in p.info],
        parts[0].sample_rate,
    )
