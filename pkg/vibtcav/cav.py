"""Concept Activation Vectors: a linear probe on layer activations and its normal vector."""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Union

import numpy as np
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import train_test_split

from vibtcav import tensor_net
from vibtcav.exceptions import DomainError
from vibtcav.tensor_net import Network
from vibtcav.vibration_sim import Signal

logger = logging.getLogger(__name__)

DEFAULT_REGULARIZATION = 1e-3
DEFAULT_HELD_OUT = 0.3
DEFAULT_GATE_THRESHOLD = 0.85
PROBE_TOLERANCE = 1e-6
PROBE_MAX_ITER = 10_000


@dataclass(frozen=True)
class Cav:
    layer: int
    direction: np.ndarray  # unit vector in the flattened layer activation space
    probe_accuracy: float
    bias: float

    def __post_init__(self) -> None:
        norm = float(np.linalg.norm(self.direction))
        if not abs(norm - 1.0) <= 1e-12:
            raise DomainError(f"CAV direction must have unit norm, got {norm}")
        if not 0.0 <= self.probe_accuracy <= 1.0:
            raise DomainError(f"Probe accuracy must lie in [0, 1], got {self.probe_accuracy}")

    @property
    def dimension(self) -> int:
        return len(self.direction)


def _unit(vector: np.ndarray) -> np.ndarray:
    unit = vector / np.linalg.norm(vector)
    # one refinement step brings the norm to within an ulp or two of 1
    return unit / np.linalg.norm(unit)


def collect_activations(
    net: Network,
    signals: Union[Sequence[Signal], np.ndarray],
    layer: int,
    batch_size: int = 256,
) -> np.ndarray:
    """One flattened layer-``layer`` activation row per signal."""
    if not 0 <= layer < len(net):
        raise DomainError(f"Layer index {layer} out of range [0, {len(net)})")
    if isinstance(signals, np.ndarray):
        inputs = np.atleast_2d(np.asarray(signals, dtype=np.float64))
    elif signals:
        inputs = np.stack([s.samples for s in signals])
    else:
        inputs = np.zeros((0, net.input_size))
    rows = []
    for start in range(0, len(inputs), batch_size):
        _, trace = tensor_net.forward_batch(net, inputs[start : start + batch_size])
        batch = trace[layer]
        rows.append(batch.reshape(batch.shape[0], -1))
    width = int(np.prod(net.shapes[layer]))
    return np.concatenate(rows) if rows else np.zeros((0, width))


def train_probe(
    pos: np.ndarray,
    neg: np.ndarray,
    seed: int,
    layer: int = -1,
    regularization: float = DEFAULT_REGULARIZATION,
    held_out: float = DEFAULT_HELD_OUT,
) -> Cav:
    """Fit an L2-regularized logistic probe separating ``pos`` from ``neg``.

    Features are centered on the probe-training portion and divided by one shared scale
    (their overall standard deviation). A single scalar keeps the weight vector parallel
    to its raw-space counterpart, and rescaling all activations by a positive factor leaves
    the fit unchanged. ``probe_accuracy`` is measured on the held-out portion.
    """
    pos = np.atleast_2d(np.asarray(pos, dtype=np.float64))
    neg = np.atleast_2d(np.asarray(neg, dtype=np.float64))
    if len(pos) == 0 or len(neg) == 0:
        raise DomainError("Probe training needs positive and negative examples")
    if pos.shape[1] != neg.shape[1]:
        raise DomainError(f"Column counts differ: {pos.shape[1]} vs {neg.shape[1]}")

    features = np.vstack([pos, neg])
    targets = np.concatenate(
        [np.ones(len(pos), dtype=np.int64), np.zeros(len(neg), dtype=np.int64)],
    )
    stratify = targets if min(len(pos), len(neg)) >= 2 else None
    x_train, x_test, y_train, y_test = train_test_split(
        features,
        targets,
        test_size=held_out,
        random_state=seed % 2**32,
        stratify=stratify,
    )

    mean = x_train.mean(axis=0)
    spread = float(np.std(x_train - mean))
    scale = spread if spread > 0 else 1.0
    z_train = (x_train - mean) / scale
    z_test = (x_test - mean) / scale

    if len(np.unique(y_train)) < 2:
        # a single class in the training portion leaves nothing to separate
        weights = np.zeros(features.shape[1])
        intercept = 0.0
        accuracy = float(np.mean(y_test == y_train[0]))
    else:
        # mean log-loss + (regularization / 2) * |w|^2 in sklearn's parametrization
        probe = LogisticRegression(
            C=1.0 / (regularization * len(z_train)),
            tol=PROBE_TOLERANCE,
            max_iter=PROBE_MAX_ITER,
            solver="lbfgs",
        )
        probe.fit(z_train, y_train)
        weights = probe.coef_.ravel()
        intercept = float(probe.intercept_[0])
        accuracy = float(np.mean(probe.predict(z_test) == y_test))

    raw = weights / scale
    if np.linalg.norm(raw) > 0:
        direction = _unit(raw)
    else:
        gap = pos.mean(axis=0) - neg.mean(axis=0)
        direction = _unit(gap) if np.linalg.norm(gap) > 0 else np.eye(features.shape[1])[0]
        logger.warning("Probe weights vanished; falling back to the centroid direction")
    bias = intercept - float(np.dot(weights, mean)) / scale
    logger.debug(f"probe at layer {layer}: held-out accuracy {accuracy:.3f}")
    return Cav(layer=layer, direction=direction, probe_accuracy=accuracy, bias=bias)


def separability_gate(cav: Cav, threshold: float = DEFAULT_GATE_THRESHOLD) -> bool:
    return cav.probe_accuracy >= threshold


def probe_accuracy_table(
    cavs: Sequence[Cav],
    evaluation_set: str,
    threshold: float = DEFAULT_GATE_THRESHOLD,
) -> List[Dict[str, Any]]:
    """Rows of the separability table: one per repetition."""
    return [
        {
            "evaluation_set": evaluation_set,
            "repetition": repetition,
            "layer": cav.layer,
            "probe_accuracy": cav.probe_accuracy,
            "gate": separability_gate(cav, threshold),
        }
        for repetition, cav in enumerate(cavs)
    ]
