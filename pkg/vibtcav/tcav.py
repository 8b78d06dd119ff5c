"""TCAV scores for vibration concepts with repetition statistics and significance tests."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from tqdm import tqdm

from vibtcav import tensor_net
from vibtcav.cav import (
    DEFAULT_GATE_THRESHOLD,
    Cav,
    collect_activations,
    separability_gate,
    train_probe,
)
from vibtcav.exceptions import ConfigurationError, DomainError
from vibtcav.tensor_net import Network
from vibtcav.training import LABELS, Dataset, normalize
from vibtcav.utils import derive_seed
from vibtcav.vibration_sim import ConceptSpec, Signal, sample_concept_set

logger = logging.getLogger(__name__)

DEFAULT_REPETITIONS = 10
DEFAULT_EXAMPLES_PER_SIDE = 200
DEFAULT_PER_SET = 100
DEFAULT_ALPHA = 0.05


@dataclass
class EvaluationSet:
    signals: np.ndarray  # (N, d)
    class_under_test: int
    fault_type: str
    rotation_speed: float

    def __post_init__(self) -> None:
        self.signals = np.atleast_2d(np.asarray(self.signals, dtype=np.float64))
        if len(self.signals) == 0:
            raise DomainError("An evaluation set needs at least one signal")

    def __len__(self) -> int:
        return len(self.signals)

    @property
    def name(self) -> str:
        return f"{self.fault_type}_{self.rotation_speed:g}rpm"


@dataclass(frozen=True)
class RepetitionResult:
    score: float
    probe_accuracy: float
    gate: bool
    random_score: float
    random_probe_accuracy: float
    cav: Cav = field(repr=False)


@dataclass
class TcavReport:
    evaluation_set: str
    class_under_test: int
    layer: int
    target_f_char: Optional[float]
    scores: List[float]
    probe_accuracies: List[float]
    gates: List[bool]
    random_scores: List[float]
    gate_threshold: float
    alpha: float = DEFAULT_ALPHA
    cavs: List[Cav] = field(default_factory=list, repr=False)

    @property
    def repetitions(self) -> int:
        return len(self.scores)

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores))

    @property
    def std(self) -> float:
        return float(np.std(self.scores))

    @property
    def random_mean(self) -> float:
        return float(np.mean(self.random_scores))

    @property
    def random_std(self) -> float:
        return float(np.std(self.random_scores))

    @property
    def reliable(self) -> bool:
        return all(self.gates)

    @property
    def status(self) -> str:
        return "RELIABLE" if self.reliable else "UNRELIABLE"

    @property
    def welch(self) -> Tuple[float, float]:
        return welch_test(self.scores, self.random_scores)

    @property
    def p_value(self) -> float:
        return self.welch[1]

    @property
    def significant(self) -> bool:
        return self.p_value < self.alpha

    @property
    def confidence_interval(self) -> Tuple[float, float]:
        return mean_confidence_interval(self.scores, 1.0 - self.alpha)

    def to_dict(self) -> Dict[str, Any]:
        t_statistic, p_value = self.welch
        low, high = self.confidence_interval
        document = asdict(self)
        del document["cavs"]
        document.update(
            {
                "repetitions": self.repetitions,
                "mean": self.mean,
                "std": self.std,
                "random_mean": self.random_mean,
                "random_std": self.random_std,
                "t_statistic": t_statistic if math.isfinite(t_statistic) else None,
                "p_value": p_value,
                "significant": self.significant,
                "confidence_interval": {"level": 1.0 - self.alpha, "low": low, "high": high},
                "reliable": self.reliable,
                "status": self.status,
            },
        )
        return document


def welch_test(scores: Sequence[float], baseline: Sequence[float]) -> Tuple[float, float]:
    """Two-sided Welch t-test; samples without spread and equal means give p = 1."""
    a = np.asarray(scores, dtype=np.float64)
    b = np.asarray(baseline, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        return 0.0, 1.0
    if np.var(a) == 0 and np.var(b) == 0:
        if a[0] == b[0]:
            return 0.0, 1.0
        return math.copysign(math.inf, a[0] - b[0]), 0.0
    t_statistic, p_value = stats.ttest_ind(a, b, equal_var=False)
    if math.isnan(p_value):
        return 0.0, 1.0
    return float(t_statistic), float(p_value)


def mean_confidence_interval(values: Sequence[float], level: float = 0.95) -> Tuple[float, float]:
    data = np.asarray(values, dtype=np.float64)
    mean = float(data.mean())
    if len(data) < 2:
        return mean, mean
    sem = float(np.std(data, ddof=1) / math.sqrt(len(data)))
    if sem == 0:
        return mean, mean
    t_crit = float(stats.t.ppf(0.5 + level / 2.0, df=len(data) - 1))
    return mean - t_crit * sem, mean + t_crit * sem


def concept_sensitivity(net: Network, cav: Cav, x: np.ndarray, c: int) -> float:
    """Directional derivative of logit ``c`` along the CAV at the CAV's layer."""
    grad = tensor_net.grad_logit_wrt_activation(net, x, cav.layer, c).reshape(-1)
    if grad.shape != cav.direction.shape:
        raise DomainError(
            f"CAV has dimension {cav.dimension}, layer {cav.layer} has {grad.size} activations",
        )
    return float(grad @ cav.direction)


def concept_sensitivities(
    net: Network,
    cav: Cav,
    inputs: np.ndarray,
    c: int,
    batch_size: int = 256,
) -> np.ndarray:
    values = []
    for start in range(0, len(inputs), batch_size):
        grads = tensor_net.grad_logits_wrt_activation_batch(
            net,
            inputs[start : start + batch_size],
            cav.layer,
            c,
        )
        flat = grads.reshape(grads.shape[0], -1)
        if flat.shape[1] != cav.dimension:
            raise DomainError(
                f"CAV has dimension {cav.dimension}, layer {cav.layer} has {flat.shape[1]} "
                f"activations",
            )
        values.append(flat @ cav.direction)
    return np.concatenate(values) if values else np.zeros(0)


def tcav_score(net: Network, cav: Cav, evaluation_set: EvaluationSet, c: int) -> float:
    """Fraction of the evaluation set with strictly positive concept sensitivity."""
    sensitivities = concept_sensitivities(net, cav, evaluation_set.signals, c)
    return int(np.count_nonzero(sensitivities > 0)) / len(sensitivities)


def _normalized(signals: Sequence[Signal]) -> np.ndarray:
    return np.stack([normalize(signal.samples) for signal in signals])


def _fit_cav(
    net: Network,
    spec: ConceptSpec,
    layer: int,
    examples_per_side: int,
    concept_seed: int,
    probe_seed: int,
) -> Cav:
    concepts = sample_concept_set(spec, examples_per_side, concept_seed)
    # same preprocessing as dataset segments
    pos = collect_activations(net, _normalized(concepts.positives), layer)
    neg = collect_activations(net, _normalized(concepts.negatives), layer)
    return train_probe(pos, neg, probe_seed, layer=layer)


def tcav_experiment(
    net: Network,
    spec: ConceptSpec,
    evaluation_set: EvaluationSet,
    c: int,
    seed: int,
    repetitions: int = DEFAULT_REPETITIONS,
    examples_per_side: int = DEFAULT_EXAMPLES_PER_SIDE,
    gate_threshold: float = DEFAULT_GATE_THRESHOLD,
    layer: Optional[int] = None,
    alpha: float = DEFAULT_ALPHA,
    threads: int = 1,
    hide_progress: bool = True,
) -> TcavReport:
    """Repeat concept sampling, probe fitting and scoring; compare against random concepts.

    Each repetition ``r`` derives its seeds from ``seed``: concept sets from stage
    "concept", random baseline sets from stage "random", probe splits from stage "probe".
    The random baseline draws both example sets with randomized f_char. Concept examples
    are min-max normalized like dataset segments before they reach the network.
    """
    if repetitions < 1:
        raise ConfigurationError(f"tcav.repetitions must be at least 1, got {repetitions}")
    if spec.length != net.input_size:
        raise DomainError(f"Concept length {spec.length} does not match input {net.input_size}")
    if layer is None:
        layer = len(net) - 1
    random_spec = spec.randomized()

    def run(repetition: int) -> RepetitionResult:
        cav = _fit_cav(
            net,
            spec,
            layer,
            examples_per_side,
            derive_seed(seed, "concept", repetition),
            derive_seed(seed, "probe", repetition),
        )
        random_cav = _fit_cav(
            net,
            random_spec,
            layer,
            examples_per_side,
            derive_seed(seed, "random", repetition),
            derive_seed(seed, "probe", repetitions + repetition),
        )
        return RepetitionResult(
            score=tcav_score(net, cav, evaluation_set, c),
            probe_accuracy=cav.probe_accuracy,
            gate=separability_gate(cav, gate_threshold),
            random_score=tcav_score(net, random_cav, evaluation_set, c),
            random_probe_accuracy=random_cav.probe_accuracy,
            cav=cav,
        )

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(
            tqdm(
                pool.map(run, range(repetitions)),
                total=repetitions,
                disable=hide_progress,
                unit="rep",
            ),
        )

    report = TcavReport(
        evaluation_set=evaluation_set.name,
        class_under_test=c,
        layer=layer,
        target_f_char=spec.target_f_char,
        scores=[r.score for r in results],
        probe_accuracies=[r.probe_accuracy for r in results],
        gates=[r.gate for r in results],
        random_scores=[r.random_score for r in results],
        gate_threshold=gate_threshold,
        alpha=alpha,
        cavs=[r.cav for r in results],
    )
    if not report.reliable:
        failed = report.gates.count(False)
        logger.warning(
            f"{evaluation_set.name}: {failed}/{repetitions} probes below the separability "
            f"threshold {gate_threshold}; report is UNRELIABLE",
        )
    logger.info(
        f"{evaluation_set.name}: TCAV {report.mean:.3f} ± {report.std:.3f} "
        f"(random {report.random_mean:.3f}, p={report.p_value:.3g}, {report.status})",
    )
    return report


def build_evaluation_sets(
    dataset: Dataset,
    per_set: int = DEFAULT_PER_SET,
    seed: int = 0,
    indices: Optional[Sequence[int]] = None,
) -> List[EvaluationSet]:
    """One evaluation set per (fault type, rotation speed), sampled without replacement."""
    if per_set < 1:
        raise ConfigurationError(f"tcav.per_set must be at least 1, got {per_set}")
    pool = list(range(len(dataset))) if indices is None else list(indices)
    strata: Dict[Tuple[str, float], List[int]] = {}
    for index in pool:
        info = dataset.info[index]
        strata.setdefault((info.fault_type, info.rotation_speed), []).append(index)

    rng = np.random.default_rng(seed)
    sets = []
    for fault_type in LABELS:
        speeds = sorted({speed for kind, speed in strata if kind == fault_type})
        if not speeds:
            logger.warning(f"No segments of fault type {fault_type}; no evaluation set built")
        for speed in speeds:
            members = np.asarray(strata[(fault_type, speed)], dtype=np.int64)
            if len(members) < per_set:
                logger.warning(
                    f"Only {len(members)} segments for {fault_type} at {speed:g} rpm, "
                    f"using all of them instead of {per_set}",
                )
                chosen = members
            else:
                chosen = np.sort(rng.choice(members, size=per_set, replace=False))
            sets.append(
                EvaluationSet(dataset.segments[chosen], LABELS[fault_type], fault_type, speed),
            )
    return sets
