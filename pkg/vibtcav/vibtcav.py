"""vibtcav tests bearing fault classifiers against simulated vibration concepts

Usage:
    vibtcav simulate [options] [--set <assignment>]... [--concept <fault>] [--count <n>]
    [--csv][--synthetic]
    vibtcav ingest <signal>... [options] [--set <assignment>]...
    vibtcav train [options] [--set <assignment>]... [--dataset <file>]
    vibtcav tcav [options] [--set <assignment>]... [--checkpoint <file>] [--dataset <file>]
    vibtcav report <run_dir>... [options] [--set <assignment>]...

    vibtcav -h | --help
    vibtcav --version


Options:
    -h --help                       Show this screen
    --version                       Show version
    --config [path]                 JSON configuration merged over the packaged defaults
    --seed [seed]                   Base seed (unsigned 64-bit); overrides the config
    --out [dir]                     Output directory; overrides output_dir
    --threads [n]                   Worker threads for TCAV repetitions
    --set [assignment]              Override one config key, e.g. --set train.epochs=5
                                    (dotted path, value parsed as JSON)
    --concept [fault]               Concept to simulate: inner, outer or random
                                    (default: inner and outer)
    --count [n]                     Examples per side of each concept set
                                    (default: tcav.examples_per_side)
    --csv                           Write signals as CSV instead of binary
    --synthetic                     Simulate the labeled synthetic dataset instead
                                    of concept sets
    --dataset [file]                Dataset file (default: <out>/dataset.vibdat, built
                                    from the config when missing)
    --checkpoint [file]             Network checkpoint (default: <out>/model.vibnet)
    --debug                         Set log level to DEBUG
    --error                         Set log level to ERROR
    --hide-progress                 Hide progress bars

Exit codes:
    0 success, 1 domain or configuration error, 2 I/O error,
    3 reports written but at least one failed the separability gate
"""

import hashlib
import logging
import math
import pathlib
import sys
import traceback
import typing
from dataclasses import asdict, dataclass, field, fields
from types import TracebackType
from typing import Any, Dict, List, Mapping, NoReturn, Optional, Set, Tuple, Type

if sys.version_info < (3, 11):
    from typing_extensions import TypedDict
else:
    from typing import TypedDict

import numpy as np
from docopt import docopt
from tqdm import tqdm

from vibtcav import __version__, signal_io, tensor_net, training, utils
from vibtcav.cav import probe_accuracy_table
from vibtcav.exceptions import (
    ConfigurationError,
    DomainError,
    SchemaVersionError,
    VibTcavException,
)
from vibtcav.tcav import TcavReport, build_evaluation_sets, tcav_experiment
from vibtcav.training import LABELS, Dataset, SegmentInfo, TrainConfig
from vibtcav.vibration_sim import (
    FAULT_TYPES,
    BearingGeometry,
    ConceptSpec,
    characteristic_frequency,
    sample_concept_set,
    shaft_frequency,
)

logger = logging.getLogger("vibtcav")
logger.setLevel(logging.INFO)

DEFAULT_CONFIG = pathlib.Path(__file__).with_name("vibtcav.json")
DATASET_FILE = "dataset.vibdat"
CHECKPOINT_FILE = "model.vibnet"
SPLITS_FILE = "splits.json"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_IO = 2
EXIT_GATE = 3

CONCEPT_KINDS = ("inner", "outer", "random")


class VibTcavArgs(TypedDict):
    simulate: bool
    ingest: bool
    train: bool
    tcav: bool
    report: bool
    signal: List[str]
    run_dir: List[str]
    config: Optional[str]
    seed: Optional[str]
    out: Optional[str]
    threads: Optional[str]
    set: List[str]
    concept: Optional[str]
    count: Optional[str]
    csv: bool
    synthetic: bool
    dataset: Optional[str]
    checkpoint: Optional[str]
    debug: bool
    error: bool
    hide_progress: bool


@dataclass(frozen=True)
class DatasetConfig:
    source: str = "synthetic"
    path: Optional[str] = None
    sample_rate: float = 12000.0
    segment_length: int = 2048
    segments_per_class: int = 300
    sigma: float = 0.1

    def __post_init__(self) -> None:
        if self.source not in ("synthetic", "path"):
            raise ConfigurationError(
                f"dataset.source must be 'synthetic' or 'path', got {self.source!r}",
            )
        if self.source == "path" and not self.path:
            raise ConfigurationError("dataset.path is required when dataset.source is 'path'")
        if self.segment_length < 1:
            raise ConfigurationError(
                f"dataset.segment_length must be at least 1, got {self.segment_length}",
            )
        if self.segments_per_class < 1:
            raise ConfigurationError(
                f"dataset.segments_per_class must be at least 1, got {self.segments_per_class}",
            )
        if not self.sample_rate > 0:
            raise ConfigurationError(
                f"dataset.sample_rate must be positive, got {self.sample_rate}",
            )
        if not self.sigma >= 0:
            raise ConfigurationError(f"dataset.sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class ConceptConfig:
    f_res_range: Optional[Tuple[float, float]] = None
    a_range: Tuple[float, float] = (0.5, 2.0)
    tau_periods: Tuple[float, float] = (2.0, 10.0)
    sigma_range: Tuple[float, float] = (0.0, 0.2)
    t0_periods: Tuple[float, float] = (0.0, 1.0)
    f_char_interval_scale: Tuple[float, float] = (0.5, 1.5)
    exclusion_band: float = 0.05

    def spec(
        self,
        target: float,
        sample_rate: float,
        length: int,
        **overrides: Any,
    ) -> ConceptSpec:
        options: Dict[str, Any] = {
            "f_res_range": self.f_res_range,
            "a_range": self.a_range,
            "tau_periods": self.tau_periods,
            "sigma_range": self.sigma_range,
            "t0_periods": self.t0_periods,
            "interval_scale": self.f_char_interval_scale,
            "exclusion_band": self.exclusion_band,
        }
        options.update(overrides)
        return ConceptSpec.for_target(target, sample_rate, length, **options)


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 0.01
    optimizer: str = "sgd"
    split_seed_stage: str = "split"

    def __post_init__(self) -> None:
        self.train_config(0)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            optimizer=self.optimizer,
            seed=seed,
        )


@dataclass(frozen=True)
class TcavConfig:
    repetitions: int = 10
    examples_per_side: int = 200
    per_set: int = 100
    gate_threshold: float = 0.85
    layer: Optional[int] = None
    alpha: float = 0.05

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ConfigurationError(f"tcav.repetitions must be at least 1, got {self.repetitions}")
        if self.examples_per_side < 2:
            raise ConfigurationError(
                f"tcav.examples_per_side must be at least 2, got {self.examples_per_side}",
            )
        if not 0 <= self.gate_threshold <= 1:
            raise ConfigurationError(
                f"tcav.gate_threshold must lie in [0, 1], got {self.gate_threshold}",
            )
        if not 0 < self.alpha < 1:
            raise ConfigurationError(f"tcav.alpha must lie in (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class IngestConfig:
    labels: Dict[str, str] = field(default_factory=dict)
    rotation_speeds: Dict[str, float] = field(default_factory=dict)
    sample_rate: Optional[float] = None

    def __post_init__(self) -> None:
        for stem, fault_type in self.labels.items():
            if fault_type not in FAULT_TYPES:
                raise ConfigurationError(
                    f"ingest.labels.{stem}: unknown label {fault_type!r}, "
                    f"valid labels are {', '.join(FAULT_TYPES)}",
                )


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    output_dir: pathlib.Path
    threads: int
    geometry: BearingGeometry
    rotation_speeds: Tuple[float, ...]
    dataset: DatasetConfig
    concepts: ConceptConfig
    architecture: str
    train: TrainSection
    tcav: TcavConfig
    ingest: IngestConfig
    document: Dict[str, Any] = field(repr=False, compare=False)

    @property
    def config_hash(self) -> str:
        # output location and thread count never change results
        relevant = {k: v for k, v in self.document.items() if k not in ("output_dir", "threads")}
        return utils.config_hash(relevant)

    def seed_for(self, stage: str, index: int = 0) -> int:
        seed = utils.derive_seed(self.seed, stage, index)
        logger.debug(f"seed {stage}[{index}] = {seed}")
        return seed


def handle_exception(
    exc_type: Type[BaseException],
    exc_value: BaseException,
    exc_traceback: Optional[TracebackType],
) -> NoReturn:
    if issubclass(exc_type, KeyboardInterrupt):
        logger.error("Interrupted")
    else:
        logger.error("".join(traceback.format_exception(exc_type, exc_value, exc_traceback)))
    sys.exit(EXIT_ERROR)


sys.excepthook = handle_exception


def _convert(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_convert(v) for v in value)
    return value


def _section(cls: Any, document: Any, key: str) -> Any:
    if not isinstance(document, Mapping):
        raise ConfigurationError(f"{key} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(document) - known)
    if unknown:
        raise ConfigurationError(
            f"Unknown key {key}.{unknown[0]}; valid keys are {', '.join(sorted(known))}",
        )
    try:
        return cls(**{name: _convert(value) for name, value in document.items()})
    except (TypeError, ValueError) as err:
        raise ConfigurationError(f"Invalid {key}: {err}") from err
    except DomainError as err:
        raise ConfigurationError(f"Invalid {key}: {err}") from err


def parse_config(document: Dict[str, Any]) -> ExperimentConfig:
    """Validate a merged configuration document."""
    known = {f.name for f in fields(ExperimentConfig)} - {"document"}
    unknown = sorted(set(document) - known)
    if unknown:
        raise ConfigurationError(
            f"Unknown key {unknown[0]}; valid keys are {', '.join(sorted(known))}",
        )
    missing = sorted(known - set(document))
    if missing:
        raise ConfigurationError(f"Missing configuration key {missing[0]}")
    seed = document["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise ConfigurationError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    threads = document["threads"]
    if not isinstance(threads, int) or threads < 1:
        raise ConfigurationError(f"threads must be a positive integer, got {threads!r}")
    speeds = document["rotation_speeds"]
    if not isinstance(speeds, list) or not speeds:
        raise ConfigurationError("rotation_speeds must be a non-empty list of rpm values")
    if not all(isinstance(s, (int, float)) and s > 0 for s in speeds):
        raise ConfigurationError(f"rotation_speeds must be positive, got {speeds}")
    architecture = document["architecture"]
    if architecture not in tensor_net.PRESETS:
        raise ConfigurationError(
            f"architecture must be one of {', '.join(tensor_net.PRESETS)}, got {architecture!r}",
        )

    return ExperimentConfig(
        seed=seed,
        output_dir=pathlib.Path(str(document["output_dir"])),
        threads=threads,
        geometry=_section(BearingGeometry, document["geometry"], "geometry"),
        rotation_speeds=tuple(float(s) for s in speeds),
        dataset=_section(DatasetConfig, document["dataset"], "dataset"),
        concepts=_section(ConceptConfig, document["concepts"], "concepts"),
        architecture=architecture,
        train=_section(TrainSection, document["train"], "train"),
        tcav=_section(TcavConfig, document["tcav"], "tcav"),
        ingest=_section(IngestConfig, document["ingest"], "ingest"),
        document=document,
    )


def _int_flag(value: str, name: str, minimum: int = 0) -> int:
    try:
        number = int(value)
    except ValueError:
        raise ConfigurationError(f"{name} must be an integer, got {value!r}") from None
    if number < minimum:
        raise ConfigurationError(f"{name} must be at least {minimum}, got {number}")
    return number


def load_config(arguments: VibTcavArgs) -> ExperimentConfig:
    """Packaged defaults, then --config, then --set, then the dedicated flags."""
    document = signal_io.read_json(DEFAULT_CONFIG)
    if arguments["config"]:
        user = signal_io.read_json(arguments["config"])
        document = utils.deep_merge(document, user)
    for assignment in arguments["set"]:
        try:
            key, value = utils.parse_assignment(assignment)
        except ValueError as err:
            raise ConfigurationError(f"--set {err}") from err
        utils.set_dotted(document, key, value)
    if arguments["seed"] is not None:
        document["seed"] = _int_flag(arguments["seed"], "--seed")
    if arguments["out"] is not None:
        document["output_dir"] = arguments["out"]
    if arguments["threads"] is not None:
        document["threads"] = _int_flag(arguments["threads"], "--threads", 1)
    config = parse_config(document)
    logger.debug(f"config hash {config.config_hash}")
    return config


def _sha256(path: pathlib.Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _concept_spec(
    config: ExperimentConfig,
    fault_type: str,
    rpm: float,
    sample_rate: float,
    length: int,
) -> ConceptSpec:
    target = characteristic_frequency(config.geometry, fault_type, shaft_frequency(rpm))
    return config.concepts.spec(target, sample_rate, length)


def synthetic_dataset(config: ExperimentConfig) -> Dataset:
    """The labeled healthy/inner/outer task, one block per rotation speed."""
    ds = config.dataset
    count = ds.segments_per_class
    fixed_sigma = (ds.sigma, ds.sigma)
    parts = []
    for index, rpm in enumerate(config.rotation_speeds):
        f_r = shaft_frequency(rpm)
        inner = characteristic_frequency(config.geometry, "inner", f_r)
        outer = characteristic_frequency(config.geometry, "outer", f_r)
        specs = (
            # healthy: noise only
            config.concepts.spec(
                outer,
                ds.sample_rate,
                ds.segment_length,
                a_range=(0.0, 0.0),
                sigma_range=fixed_sigma,
            ),
            config.concepts.spec(inner, ds.sample_rate, ds.segment_length, sigma_range=fixed_sigma),
            config.concepts.spec(outer, ds.sample_rate, ds.segment_length, sigma_range=fixed_sigma),
        )
        parts.append(
            training.make_synthetic_task(
                specs,
                (count, count, count),
                config.seed_for("synthetic", index),
                rotation_speed=rpm,
            ),
        )
    return training.merge_datasets(parts)


def cmd_simulate(config: ExperimentConfig, arguments: VibTcavArgs) -> int:
    out = config.output_dir
    if arguments["synthetic"]:
        dataset = synthetic_dataset(config)
        with signal_io.get_filelock(out):
            path = signal_io.write_dataset(out / DATASET_FILE, dataset)
            manifest = {
                "kind": "synthetic-dataset",
                "seed": config.seed,
                "rotation_speeds": list(config.rotation_speeds),
                "segments": len(dataset),
                "files": {path.name: _sha256(path)},
            }
            signal_io.write_json(out / "simulate.json", manifest, config.config_hash)
        logger.info(f"Wrote {len(dataset)} synthetic segments to {path}")
        return EXIT_OK

    count = (
        _int_flag(arguments["count"], "--count", 1)
        if arguments["count"] is not None
        else config.tcav.examples_per_side
    )
    kinds = [arguments["concept"]] if arguments["concept"] else ["inner", "outer"]
    for kind in kinds:
        if kind not in CONCEPT_KINDS:
            raise ConfigurationError(f"--concept must be inner, outer or random, got {kind!r}")

    ds = config.dataset
    ext = ".csv" if arguments["csv"] else ".vibsig"
    entries = []
    files: Dict[str, str] = {}
    with signal_io.get_filelock(out):
        for rpm_index, rpm in enumerate(config.rotation_speeds):
            for kind in kinds:
                base = "outer" if kind == "random" else kind
                spec = _concept_spec(config, base, rpm, ds.sample_rate, ds.segment_length)
                if kind == "random":
                    spec = spec.randomized()
                slot = rpm_index * len(CONCEPT_KINDS) + CONCEPT_KINDS.index(kind)
                seed = config.seed_for("simulate", slot)
                concept_set = sample_concept_set(spec, count, seed)
                directory = out / "concepts" / signal_io.sanitize_str(f"{kind}_{rpm:g}rpm")
                sides = (("pos", concept_set.positives), ("neg", concept_set.negatives))
                for side, signals in sides:
                    for i, signal in enumerate(
                        tqdm(signals, disable=arguments["hide_progress"], desc=f"{kind} {side}"),
                    ):
                        path = directory / f"{side}_{i:04d}{ext}"
                        if arguments["csv"]:
                            signal_io.write_signal_csv(path, signal)
                        else:
                            signal_io.write_signal_binary(path, signal)
                        files[path.relative_to(out).as_posix()] = _sha256(path)
                entries.append(
                    {
                        "concept": kind,
                        "rotation_speed": rpm,
                        "seed": seed,
                        "count_per_side": count,
                        "spec": asdict(spec),
                    },
                )
        manifest = {
            "kind": "concept-sets",
            "seed": config.seed,
            "format": "csv" if arguments["csv"] else "binary",
            "concept_sets": entries,
            "files": files,
        }
        signal_io.write_json(out / "simulate.json", manifest, config.config_hash)
    logger.info(f"Wrote {len(files)} signal files under {out / 'concepts'}")
    return EXIT_OK


def _expand_signal_paths(paths: List[str]) -> List[pathlib.Path]:
    expanded: List[pathlib.Path] = []
    for raw in paths:
        path = pathlib.Path(raw)
        if path.is_dir():
            expanded.extend(sorted(p for p in path.iterdir() if p.is_file()))
        else:
            expanded.append(path)
    return expanded


def cmd_ingest(config: ExperimentConfig, arguments: VibTcavArgs) -> int:
    ingest = config.ingest
    sample_rate = ingest.sample_rate or config.dataset.sample_rate
    d = config.dataset.segment_length
    segments: List[np.ndarray] = []
    labels: List[int] = []
    info: List[SegmentInfo] = []
    per_file: Dict[str, Dict[str, Any]] = {}
    rates: Set[float] = set()
    for path in _expand_signal_paths(arguments["signal"]):
        stem = path.stem
        if stem not in ingest.labels:
            known = ", ".join(sorted(ingest.labels)) or "none configured"
            raise ConfigurationError(
                f"No label for signal {stem!r} in ingest.labels (known keys: {known})",
            )
        fault_type = ingest.labels[stem]
        rpm = float(ingest.rotation_speeds.get(stem, config.rotation_speeds[0]))
        signal = signal_io.read_signal(path, sample_rate)
        pieces = training.segment(signal, d)
        if not pieces:
            logger.warning(f"{path} has {len(signal)} samples, fewer than one segment of {d}")
        for i, piece in enumerate(pieces):
            segments.append(training.normalize(piece))
            labels.append(LABELS[fault_type])
            info.append(SegmentInfo(rpm, fault_type, f"{stem}#{i}"))
        rates.add(signal.sample_rate)
        per_file[path.name] = {
            "fault_type": fault_type,
            "rotation_speed": rpm,
            "segments": len(pieces),
            "sha256": _sha256(path),
        }
        logger.info(f"{path}: {len(pieces)} segments of {d} samples ({fault_type}, {rpm:g} rpm)")
    if not segments:
        raise ConfigurationError("No segments could be extracted from the given signals")
    if len(rates) > 1:
        raise ConfigurationError(f"Signals disagree in sample rate: {sorted(rates)}")

    dataset = Dataset(np.stack(segments), np.asarray(labels), info, rates.pop())
    out = config.output_dir
    with signal_io.get_filelock(out):
        path = signal_io.write_dataset(out / DATASET_FILE, dataset)
        manifest = {
            "segments": len(dataset),
            "segment_length": d,
            "sample_rate": dataset.sample_rate,
            "files": per_file,
            "dataset_sha256": _sha256(path),
        }
        signal_io.write_json(out / "ingest.json", manifest, config.config_hash)
    logger.info(f"Wrote {len(dataset)} segments to {path}")
    return EXIT_OK


def _load_dataset(config: ExperimentConfig, explicit: Optional[str]) -> Dataset:
    if explicit:
        return signal_io.read_dataset(explicit)
    if config.dataset.source == "path":
        return signal_io.read_dataset(typing.cast(str, config.dataset.path))
    existing = config.output_dir / DATASET_FILE
    if existing.exists():
        logger.info(f"Using dataset {existing}")
        return signal_io.read_dataset(existing)
    logger.info("Simulating the synthetic dataset")
    dataset = synthetic_dataset(config)
    with signal_io.get_filelock(config.output_dir):
        signal_io.write_dataset(existing, dataset)
    return dataset


def cmd_train(config: ExperimentConfig, arguments: VibTcavArgs) -> int:
    dataset = _load_dataset(config, arguments["dataset"])
    splits = training.split(dataset, config.seed_for(config.train.split_seed_stage))
    net = tensor_net.build_preset(
        config.architecture,
        dataset.segment_length,
        len(FAULT_TYPES),
        config.seed_for("init"),
    )
    logger.info(
        f"Training {net.name} ({tensor_net.parameter_count(net)} parameters) on "
        f"{len(splits.train)}/{len(splits.val)}/{len(splits.test)} segments",
    )
    cfg = config.train.train_config(config.seed_for("train"))
    best, history = training.train(
        net,
        dataset,
        splits,
        cfg,
        hide_progress=arguments["hide_progress"],
    )
    if splits.test:
        accuracy, confusion = training.evaluate(best, dataset, splits.test)
    else:
        logger.warning("The test split is empty")
        accuracy = math.nan
        confusion = np.zeros((len(FAULT_TYPES), len(FAULT_TYPES)), dtype=np.int64)

    out = config.output_dir
    with signal_io.get_filelock(out):
        signal_io.write_checkpoint(out / CHECKPOINT_FILE, best)
        signal_io.write_json(
            out / "architecture.json",
            tensor_net.architecture_descriptor(best),
            config.config_hash,
        )
        signal_io.write_json(
            out / SPLITS_FILE,
            {"train": splits.train, "val": splits.val, "test": splits.test},
            config.config_hash,
        )
        signal_io.write_csv(
            out / "history.csv",
            ["epoch", "train_loss", "val_loss", "train_acc", "val_acc"],
            [asdict(record) for record in history.records],
        )
        summary = {
            "architecture": best.name,
            "parameter_count": tensor_net.parameter_count(best),
            "train_config": asdict(cfg),
            "split_sizes": {
                "train": len(splits.train),
                "val": len(splits.val),
                "test": len(splits.test),
            },
            "best_epoch": history.best_epoch,
            "test_accuracy": None if math.isnan(accuracy) else accuracy,
            "confusion_matrix": confusion.tolist(),
            "class_names": list(FAULT_TYPES),
            "per_class_recall": training.per_class_recall(confusion).tolist(),
        }
        signal_io.write_json(out / "train.json", summary, config.config_hash)
    logger.info(f"Best epoch {history.best_epoch}, test accuracy {accuracy:.3f}")
    return EXIT_OK


def _evaluation_indices(config: ExperimentConfig, dataset: Dataset) -> Optional[List[int]]:
    path = config.output_dir / SPLITS_FILE
    if not path.exists():
        logger.warning(f"{path} not found; evaluation sets are drawn from the whole dataset")
        return None
    indices = [int(i) for i in signal_io.read_json(path)["test"]]
    if any(i >= len(dataset) for i in indices):
        raise ConfigurationError(f"{path} does not belong to a dataset of {len(dataset)} segments")
    return indices


def cmd_tcav(config: ExperimentConfig, arguments: VibTcavArgs) -> int:
    out = config.output_dir
    net = signal_io.read_checkpoint(arguments["checkpoint"] or out / CHECKPOINT_FILE)
    dataset = _load_dataset(config, arguments["dataset"])
    evaluation_sets = build_evaluation_sets(
        dataset,
        config.tcav.per_set,
        config.seed_for("evalsets"),
        _evaluation_indices(config, dataset),
    )
    layer = len(net) - 1 if config.tcav.layer is None else config.tcav.layer
    if layer != len(net) - 1:
        logger.warning(f"Scoring at layer {layer} instead of L-1 = {len(net) - 1}; diagnostic only")

    reports: List[TcavReport] = []
    seeds: Dict[str, int] = {}
    for index, evaluation_set in enumerate(evaluation_sets):
        if evaluation_set.fault_type == "healthy":
            logger.info(f"Skipping {evaluation_set.name}: healthy signals have no fault frequency")
            continue
        spec = _concept_spec(
            config,
            evaluation_set.fault_type,
            evaluation_set.rotation_speed,
            dataset.sample_rate,
            dataset.segment_length,
        )
        seeds[evaluation_set.name] = config.seed_for("tcav", index)
        reports.append(
            tcav_experiment(
                net,
                spec,
                evaluation_set,
                evaluation_set.class_under_test,
                seed=seeds[evaluation_set.name],
                repetitions=config.tcav.repetitions,
                examples_per_side=config.tcav.examples_per_side,
                gate_threshold=config.tcav.gate_threshold,
                layer=layer,
                alpha=config.tcav.alpha,
                threads=config.threads,
                hide_progress=arguments["hide_progress"],
            ),
        )
    if not reports:
        raise ConfigurationError("No faulty evaluation set to score")

    score_rows = []
    probe_rows = []
    with signal_io.get_filelock(out):
        for report in reports:
            name = signal_io.sanitize_str(report.evaluation_set)
            path = out / "tcav" / f"{name}.json"
            signal_io.write_json(path, report.to_dict(), config.config_hash)
            for repetition, cav in enumerate(report.cavs):
                signal_io.write_cav(
                    out / "cavs" / f"{name}_rep{repetition:02d}.json",
                    cav,
                    config.config_hash,
                    evaluation_set=report.evaluation_set,
                    repetition=repetition,
                )
            for repetition in range(report.repetitions):
                score_rows.append(
                    {
                        "evaluation_set": report.evaluation_set,
                        "class_under_test": report.class_under_test,
                        "repetition": repetition,
                        "tcav_score": report.scores[repetition],
                        "random_score": report.random_scores[repetition],
                        "probe_accuracy": report.probe_accuracies[repetition],
                        "gate": report.gates[repetition],
                        "status": report.status,
                    },
                )
            probe_rows.extend(
                probe_accuracy_table(report.cavs, report.evaluation_set, report.gate_threshold),
            )
        signal_io.write_csv(out / "tcav_scores.csv", list(score_rows[0]), score_rows)
        signal_io.write_csv(out / "probe_accuracy.csv", list(probe_rows[0]), probe_rows)
        unreliable = [r.evaluation_set for r in reports if not r.reliable]
        summary = {
            "layer": layer,
            "reports": [r.to_dict() for r in reports],
            "seeds": seeds,
            "unreliable": unreliable,
            "status": "UNRELIABLE" if unreliable else "RELIABLE",
        }
        signal_io.write_json(out / "tcav.json", summary, config.config_hash)

    if unreliable:
        logger.warning(f"Separability gate failed for: {', '.join(unreliable)}")
        return EXIT_GATE
    return EXIT_OK


def _run_dirs(paths: List[str]) -> List[pathlib.Path]:
    runs = []
    for raw in paths:
        path = pathlib.Path(raw)
        if not path.is_dir():
            raise FileNotFoundError(f"Run directory {path} does not exist")
        if (path / "train.json").exists() or (path / "tcav.json").exists():
            runs.append(path)
        else:
            runs.extend(
                sorted(
                    p
                    for p in path.iterdir()
                    if p.is_dir() and ((p / "train.json").exists() or (p / "tcav.json").exists())
                ),
            )
    return runs


def _summary_line(entry: Mapping[str, Any]) -> List[str]:
    lines = [f"run {entry['run']}"]
    train = entry.get("train")
    if train:
        accuracy = train.get("test_accuracy")
        shown = "n/a" if accuracy is None else f"{accuracy:.3f}"
        lines.append(
            f"  {train['architecture']}: best epoch {train['best_epoch']}, test acc {shown}",
        )
    for report in entry.get("tcav", []):
        lines.append(
            f"  {report['evaluation_set']}: TCAV mean {report['mean']:.3f} ± std "
            f"{report['std']:.3f}, random {report['random_mean']:.3f}, "
            f"Welch p {report['p_value']:.3g} [{report['status']}]",
        )
    return lines


def cmd_report(config: ExperimentConfig, arguments: VibTcavArgs) -> int:
    runs = _run_dirs(arguments["run_dir"])
    entries = []
    versions = set()
    for run in runs:
        entry: Dict[str, Any] = {"run": str(run)}
        for name in ("train", "tcav"):
            path = run / f"{name}.json"
            if not path.exists():
                continue
            document = signal_io.read_json(path)
            versions.add(document.get("schema_version"))
            if name == "train":
                entry["train"] = document
            else:
                entry["tcav"] = document["reports"]
                entry["status"] = document["status"]
        entries.append(entry)
    if len(versions) > 1:
        raise SchemaVersionError(versions)

    out = config.output_dir
    if not entries:
        logger.warning("Nothing to report")
        document: Dict[str, Any] = {"status": "nothing to report", "runs": []}
        text = "nothing to report\n"
    else:
        document = {"status": "ok", "runs": entries}
        text = "\n".join(line for entry in entries for line in _summary_line(entry)) + "\n"
    with signal_io.get_filelock(out):
        signal_io.write_json(out / "report.json", document, config.config_hash)
        signal_io.atomic_write_text(out / "report.txt", text)
    sys.stdout.write(text)
    logger.info(f"Consolidated {len(entries)} runs into {out / 'report.json'}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "tcav": cmd_tcav,
    "report": cmd_report,
}


def main() -> None:
    """Main function, parses the command line and runs one subcommand"""
    handler = logging.StreamHandler()
    handler.addFilter(utils.ColorizeFilter())
    logger.addHandler(handler)

    arguments = docopt(__doc__, version=__version__)

    if arguments["--debug"]:
        logger.setLevel(logging.DEBUG)
    elif arguments["--error"]:
        logger.setLevel(logging.ERROR)

    python_args = {}
    for key, value in arguments.items():
        key = key.strip("-<>").replace("-", "_")
        python_args[key] = value
    args = typing.cast(VibTcavArgs, python_args)
    logger.debug(arguments)

    command = next(name for name in COMMANDS if args[name])  # type: ignore[literal-required]
    try:
        config = load_config(args)
        code = COMMANDS[command](config, args)
    except VibTcavException as err:
        logger.error(str(err))
        sys.exit(EXIT_ERROR)
    except OSError as err:
        logger.error(f"I/O error: {err}")
        sys.exit(EXIT_IO)
    sys.exit(code)


if __name__ == "__main__":
    main()
