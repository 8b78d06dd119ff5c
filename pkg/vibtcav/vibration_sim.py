"""Bearing kinematics and simulated vibration concepts.

A vibration concept is a resonance h(t) = exp(-t/tau) * cos(2*pi*f_res*t) excited by a
periodic impulse train with period 1/f_char, plus white Gaussian noise. Positive concept
examples fix f_char, negative ones draw it from an interval around the target.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple

import numpy as np

from vibtcav.exceptions import ConfigurationError, DomainError

logger = logging.getLogger(__name__)

Range = Tuple[float, float]

FAULT_TYPES = ("healthy", "inner", "outer")

DEFAULT_EXCLUSION_BAND = 0.05
DEFAULT_INTERVAL_SCALE = (0.5, 1.5)
DEFAULT_A_RANGE = (0.5, 2.0)
DEFAULT_TAU_PERIODS = (2.0, 10.0)
DEFAULT_SIGMA_RANGE = (0.0, 0.2)
DEFAULT_T0_PERIODS = (0.0, 1.0)


@dataclass(frozen=True)
class BearingGeometry:
    n: int
    d: float  # ball diameter (mm)
    D: float  # pitch diameter (mm)  # noqa: N815
    alpha: float = 0.0  # contact angle (rad)

    def __post_init__(self) -> None:
        if self.n < 1:
            raise DomainError(f"Ball count must be at least 1, got {self.n}")
        if not 0 < self.d < self.D:
            raise DomainError(f"Need 0 < d < D, got d={self.d}, D={self.D}")
        if not 0 <= self.alpha <= math.pi / 2:
            raise DomainError(f"Contact angle must lie in [0, pi/2], got {self.alpha}")

    @property
    def ratio(self) -> float:
        return self.d / self.D * math.cos(self.alpha)


@dataclass(frozen=True)
class ConceptParams:
    f_char: float
    f_res: float
    a: float
    tau: float
    sigma: float
    t0: float = 0.0

    def __post_init__(self) -> None:
        if not self.f_char > 0:
            raise DomainError(f"f_char must be positive, got {self.f_char}")
        if self.f_res < 0:
            raise DomainError(f"f_res must be non-negative, got {self.f_res}")
        if not self.tau > 0:
            raise DomainError(f"tau must be positive, got {self.tau}")
        if self.sigma < 0:
            raise DomainError(f"sigma must be non-negative, got {self.sigma}")
        if self.a < 0:
            raise DomainError(f"Amplitude must be non-negative, got {self.a}")

    @property
    def period(self) -> float:
        return 1.0 / self.f_char


@dataclass(frozen=True)
class Signal:
    samples: np.ndarray
    sample_rate: float

    def __post_init__(self) -> None:
        if not self.sample_rate > 0:
            raise DomainError(f"Sample rate must be positive, got {self.sample_rate}")
        if self.samples.ndim != 1 or len(self.samples) < 1:
            raise DomainError("A signal needs a non-empty one-dimensional sample vector")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def _check_range(name: str, bounds: Range, positive: bool = False) -> None:
    lo, hi = bounds
    if not lo <= hi:
        raise ConfigurationError(f"Range {name} is empty: [{lo}, {hi}]")
    if positive and not lo > 0:
        raise ConfigurationError(f"Range {name} must have a positive lower bound, got {lo}")
    if lo < 0:
        raise ConfigurationError(f"Range {name} must be non-negative, got {lo}")


@dataclass(frozen=True)
class ConceptSpec:
    """Sampling distribution over concept instances.

    ``target_f_char=None`` means "randomized": positives and negatives both draw f_char
    uniformly over ``f_char_interval``, which yields the random concept used as baseline.
    """

    target_f_char: Optional[float]
    f_char_interval: Range
    f_res_range: Range
    a_range: Range
    tau_range: Range
    sigma_range: Range
    t0_range: Range
    sample_rate: float
    length: int
    exclusion_band: float = DEFAULT_EXCLUSION_BAND

    def __post_init__(self) -> None:
        if self.target_f_char is not None and not self.target_f_char > 0:
            raise ConfigurationError(f"Target f_char must be positive, got {self.target_f_char}")
        if self.length < 1:
            raise ConfigurationError(f"Concept length must be at least 1, got {self.length}")
        if not self.sample_rate > 0:
            raise ConfigurationError(f"Sample rate must be positive, got {self.sample_rate}")
        if not 0 <= self.exclusion_band < 1:
            raise ConfigurationError(
                f"Exclusion band must lie in [0, 1), got {self.exclusion_band}",
            )
        _check_range("f_char_interval", self.f_char_interval, positive=True)
        _check_range("f_res_range", self.f_res_range)
        _check_range("a_range", self.a_range)
        _check_range("tau_range", self.tau_range, positive=True)
        _check_range("sigma_range", self.sigma_range)
        _check_range("t0_range", self.t0_range)
        if self.f_res_range[1] >= self.sample_rate / 2:
            raise ConfigurationError(
                f"f_res upper bound {self.f_res_range[1]} Hz is not below the Nyquist "
                f"frequency {self.sample_rate / 2} Hz",
            )

    @classmethod
    def for_target(
        cls,
        target_f_char: float,
        sample_rate: float,
        length: int,
        *,
        f_res_range: Optional[Range] = None,
        a_range: Range = DEFAULT_A_RANGE,
        tau_periods: Range = DEFAULT_TAU_PERIODS,
        sigma_range: Range = DEFAULT_SIGMA_RANGE,
        t0_periods: Range = DEFAULT_T0_PERIODS,
        interval_scale: Range = DEFAULT_INTERVAL_SCALE,
        exclusion_band: float = DEFAULT_EXCLUSION_BAND,
    ) -> "ConceptSpec":
        """Build a spec with the default ranges around ``target_f_char``.

        tau and t0 are given in impulse periods of the target and converted to seconds
        here, so positives and negatives share the same ranges.
        """
        if not target_f_char > 0:
            raise ConfigurationError(f"Target f_char must be positive, got {target_f_char}")
        period = 1.0 / target_f_char
        return cls(
            target_f_char=target_f_char,
            f_char_interval=(interval_scale[0] * target_f_char, interval_scale[1] * target_f_char),
            f_res_range=f_res_range or (sample_rate / 8, sample_rate / 4),
            a_range=a_range,
            tau_range=(tau_periods[0] * period, tau_periods[1] * period),
            sigma_range=sigma_range,
            t0_range=(t0_periods[0] * period, t0_periods[1] * period),
            sample_rate=sample_rate,
            length=length,
            exclusion_band=exclusion_band,
        )

    def randomized(self) -> "ConceptSpec":
        return replace(self, target_f_char=None)

    @property
    def is_random(self) -> bool:
        return self.target_f_char is None

    def negative_intervals(self) -> List[Range]:
        """Feasible f_char intervals for negatives: the interval minus the exclusion band."""
        lo, hi = self.f_char_interval
        if self.target_f_char is None:
            return [(lo, hi)]
        band_lo = (1.0 - self.exclusion_band) * self.target_f_char
        band_hi = (1.0 + self.exclusion_band) * self.target_f_char
        pieces = [(lo, min(hi, band_lo)), (max(lo, band_hi), hi)]
        return [(a, b) for a, b in pieces if b > a]


@dataclass
class ConceptSet:
    positives: List[Signal] = field(default_factory=list)
    negatives: List[Signal] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.positives) != len(self.negatives):
            raise DomainError(
                f"Concept sets need equal sides, got {len(self.positives)} positives "
                f"and {len(self.negatives)} negatives",
            )
        shapes = {(len(s), s.sample_rate) for s in (*self.positives, *self.negatives)}
        if len(shapes) > 1:
            raise DomainError(f"Concept signals disagree in length or sample rate: {shapes}")

    def positive_matrix(self) -> np.ndarray:
        return np.stack([s.samples for s in self.positives])

    def negative_matrix(self) -> np.ndarray:
        return np.stack([s.samples for s in self.negatives])


def shaft_frequency(rpm: float) -> float:
    if rpm < 0:
        raise DomainError(f"Rotation speed must be non-negative, got {rpm} rpm")
    return rpm / 60.0


def bpfo(geometry: BearingGeometry, f_r: float) -> float:
    """Ball pass frequency of the outer ring (Hz)."""
    if f_r < 0:
        raise DomainError(f"Shaft frequency must be non-negative, got {f_r}")
    return geometry.n / 2.0 * f_r * (1.0 - geometry.ratio)


def bpfi(geometry: BearingGeometry, f_r: float) -> float:
    """Ball pass frequency of the inner ring (Hz)."""
    if f_r < 0:
        raise DomainError(f"Shaft frequency must be non-negative, got {f_r}")
    return geometry.n / 2.0 * f_r * (1.0 + geometry.ratio)


def characteristic_frequency(geometry: BearingGeometry, fault_type: str, f_r: float) -> float:
    if fault_type == "inner":
        return bpfi(geometry, f_r)
    if fault_type == "outer":
        return bpfo(geometry, f_r)
    raise DomainError(f"No characteristic fault frequency for fault type {fault_type!r}")


def impulse_train(
    f_char: float,
    a: float,
    t0: float,
    length: int,
    sample_rate: float,
) -> Signal:
    """Impulses of height ``a`` at the samples nearest to k/f_char - t0."""
    if not f_char > 0:
        raise DomainError(f"f_char must be positive, got {f_char}")
    if length < 1:
        raise DomainError(f"Length must be at least 1, got {length}")
    if not sample_rate > 0:
        raise DomainError(f"Sample rate must be positive, got {sample_rate}")
    if 2 * f_char >= sample_rate:
        logger.debug(f"f_char={f_char} Hz is not below half the sample rate {sample_rate} Hz")

    # k range generous by one on each side, filtered after rounding
    k_lo = math.floor((t0 - 1.0 / sample_rate) * f_char) - 1
    k_hi = math.ceil(((length + 1) / sample_rate + t0) * f_char) + 1
    k = np.arange(k_lo, k_hi + 1, dtype=np.float64)
    indices = np.floor((k / f_char - t0) * sample_rate + 0.5).astype(np.int64)
    indices = indices[(indices >= 0) & (indices < length)]

    samples = np.zeros(length, dtype=np.float64)
    samples[indices] = a
    return Signal(samples, sample_rate)


def impulse_response(f_res: float, tau: float, length: int, sample_rate: float) -> Signal:
    if not tau > 0:
        raise DomainError(f"tau must be positive, got {tau}")
    if length < 1:
        raise DomainError(f"Length must be at least 1, got {length}")
    if not sample_rate > 0:
        raise DomainError(f"Sample rate must be positive, got {sample_rate}")
    k = np.arange(length, dtype=np.float64)
    samples = np.exp(-k / (sample_rate * tau)) * np.cos(2.0 * np.pi * f_res * k / sample_rate)
    return Signal(samples, sample_rate)


def simulate_concept(params: ConceptParams, length: int, sample_rate: float, seed: int) -> Signal:
    """Convolve the impulse train with the impulse response and add noise.

    The convolution is causal and truncated to ``length`` samples; the response tail past
    the window is dropped.
    """
    train = impulse_train(params.f_char, params.a, params.t0, length, sample_rate).samples
    response = impulse_response(params.f_res, params.tau, length, sample_rate).samples

    samples = np.zeros(length, dtype=np.float64)
    # shift-and-add over the nonzero impulses
    for position in np.flatnonzero(train):
        samples[position:] += train[position] * response[: length - position]

    if params.sigma > 0:
        rng = np.random.default_rng(seed)
        samples += rng.normal(0.0, params.sigma, size=length)
    return Signal(samples, sample_rate)


def _uniform(rng: np.random.Generator, bounds: Range) -> float:
    lo, hi = bounds
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


def _uniform_union(rng: np.random.Generator, pieces: List[Range]) -> float:
    total = sum(hi - lo for lo, hi in pieces)
    u = float(rng.uniform(0.0, total))
    for lo, hi in pieces:
        width = hi - lo
        if u < width:
            return lo + u
        u -= width
    return pieces[-1][1]


def draw_params(spec: ConceptSpec, f_char: float, rng: np.random.Generator) -> ConceptParams:
    """Draw every parameter but f_char from the spec ranges.

    Positives and negatives go through this same sampler.
    """
    return ConceptParams(
        f_char=f_char,
        f_res=_uniform(rng, spec.f_res_range),
        a=_uniform(rng, spec.a_range),
        tau=_uniform(rng, spec.tau_range),
        sigma=_uniform(rng, spec.sigma_range),
        t0=_uniform(rng, spec.t0_range),
    )


def _simulate_side(
    spec: ConceptSpec,
    count: int,
    rng: np.random.Generator,
    pick_f_char: Callable[[np.random.Generator], float],
) -> List[Signal]:
    signals = []
    for _ in range(count):
        f_char = pick_f_char(rng)
        params = draw_params(spec, f_char, rng)
        noise_seed = int(rng.integers(0, 2**63 - 1))
        logger.debug(f"concept draw {params}")
        signals.append(simulate_concept(params, spec.length, spec.sample_rate, noise_seed))
    return signals


def sample_concept_set(spec: ConceptSpec, count: int, seed: int) -> ConceptSet:
    """Simulate ``count`` positive and ``count`` negative concept examples."""
    if count < 1:
        raise ConfigurationError(f"Concept set size must be at least 1, got {count}")
    pieces = spec.negative_intervals()
    if not pieces:
        raise ConfigurationError(
            f"No feasible negative f_char left in {spec.f_char_interval} after excluding "
            f"±{spec.exclusion_band:.0%} around {spec.target_f_char} Hz",
        )

    rng = np.random.default_rng(seed)
    if spec.target_f_char is None:
        positives = _simulate_side(spec, count, rng, lambda r: _uniform(r, spec.f_char_interval))
    else:
        target: float = spec.target_f_char
        positives = _simulate_side(spec, count, rng, lambda _: target)
    negatives = _simulate_side(spec, count, rng, lambda r: _uniform_union(r, pieces))
    return ConceptSet(positives, negatives)
