import copy
import logging
import math

import numpy as np
import numpy.testing as npt
import pytest
from scipy import stats

from tests.utils import identity_net, tiny_net
from vibtcav import tensor_net, tcav
from vibtcav.cav import Cav
from vibtcav.exceptions import ConfigurationError, DomainError
from vibtcav.tcav import EvaluationSet, TcavReport
from vibtcav.tensor_net import Conv1d, Dense, Flatten, GlobalAvgPool, Network, ReLU
from vibtcav.training import Dataset, SegmentInfo
from vibtcav.vibration_sim import ConceptSpec


def _unit_cav(direction: np.ndarray, layer: int) -> Cav:
    unit = direction / np.linalg.norm(direction)
    return Cav(layer=layer, direction=unit / np.linalg.norm(unit), probe_accuracy=1.0, bias=0.0)


def _blind_net(input_length: int = 64) -> Network:
    """Activations depend on the input, logits do not."""
    net = Network(
        [Conv1d(1, 2, 5), ReLU(), GlobalAvgPool(), Dense(2, 3)],
        input_length=input_length,
        num_classes=3,
    )
    tensor_net.initialize(net, seed=0)
    last = net.layers[-1]
    assert isinstance(last, Dense)
    last.weight[...] = 0.0
    last.bias[...] = [0.3, -0.1, 0.2]
    return net


def _evaluation_set(net: Network, count: int = 8, seed: int = 0, c: int = 2) -> EvaluationSet:
    signals = np.random.default_rng(seed).normal(size=(count, net.input_size))
    return EvaluationSet(signals, c, "outer", 1797.0)


def test_sensitivity_along_gradient() -> None:
    net = tiny_net(seed=3)
    x = np.random.default_rng(0).normal(size=32)
    layer = 3
    grad = tensor_net.grad_logit_wrt_activation(net, x, layer, 1).reshape(-1)

    parallel = _unit_cav(grad, layer)
    assert tcav.concept_sensitivity(net, parallel, x, 1) == pytest.approx(np.linalg.norm(grad))

    negated = Cav(layer, -parallel.direction, 1.0, 0.0)
    assert tcav.concept_sensitivity(net, negated, x, 1) == pytest.approx(-np.linalg.norm(grad))

    other = np.random.default_rng(1).normal(size=grad.size)
    unit_grad = grad / np.linalg.norm(grad)
    orthogonal = _unit_cav(other - (other @ unit_grad) * unit_grad, layer)
    assert tcav.concept_sensitivity(net, orthogonal, x, 1) == pytest.approx(0.0, abs=1e-10)


def test_sensitivity_dimension_mismatch() -> None:
    net = tiny_net()
    with pytest.raises(DomainError):
        tcav.concept_sensitivity(net, _unit_cav(np.ones(3), 5), np.zeros(32), 0)


def test_batched_sensitivities_match_single() -> None:
    net = tiny_net(seed=4)
    inputs = np.random.default_rng(2).normal(size=(5, 32))
    cav = _unit_cav(np.random.default_rng(3).normal(size=4), len(net) - 1)
    batched = tcav.concept_sensitivities(net, cav, inputs, 0, batch_size=2)
    single = [tcav.concept_sensitivity(net, cav, x, 0) for x in inputs]
    npt.assert_allclose(batched, single, rtol=1e-10, atol=1e-14)


def test_score_counts_strictly_positive_sensitivities() -> None:
    net = tiny_net(seed=6)
    evaluation_set = _evaluation_set(net, count=40, seed=4, c=0)
    for trial in range(5):
        cav = _unit_cav(np.random.default_rng(trial).normal(size=4), len(net) - 1)
        naive = sum(tcav.concept_sensitivity(net, cav, x, 0) > 0 for x in evaluation_set.signals)
        assert tcav.tcav_score(net, cav, evaluation_set, 0) == naive / 40


@pytest.mark.parametrize("factor", [1e-3, 0.5, 7.0, 1e6])
def test_score_ignores_positive_rescaling(factor: float) -> None:
    net = tiny_net(seed=9)
    evaluation_set = _evaluation_set(net, count=30, seed=7, c=2)
    cav = _unit_cav(np.random.default_rng(8).normal(size=4), len(net) - 1)
    scaled = copy.copy(cav)
    object.__setattr__(scaled, "direction", factor * cav.direction)
    before = tcav.concept_sensitivities(net, cav, evaluation_set.signals, 2)
    after = tcav.concept_sensitivities(net, scaled, evaluation_set.signals, 2)
    npt.assert_array_equal(np.sign(after), np.sign(before))
    npt.assert_allclose(after, factor * before, rtol=1e-12)
    assert tcav.tcav_score(net, scaled, evaluation_set, 2) == tcav.tcav_score(
        net, cav, evaluation_set, 2,
    )


def test_score_examples() -> None:
    # logit 0 passes x0 through a relu, so the sensitivity along e0 is 1 or 0
    net = Network([ReLU(), Flatten(), Dense(2, 2)], input_length=2, num_classes=2)
    net.layers[2].weight[...] = [[1.0, 0.0], [0.0, 0.0]]  # type: ignore[union-attr]
    cav = _unit_cav(np.array([1.0, 0.0]), 0)
    three_of_four = EvaluationSet(
        np.array([[1.0, 0.0], [2.0, 5.0], [-1.0, 0.0], [0.5, -3.0]]), 0, "inner", 1797.0,
    )
    assert tcav.tcav_score(net, cav, three_of_four, 0) == 0.75

    all_positive = EvaluationSet(np.abs(three_of_four.signals) + 0.1, 0, "inner", 1797.0)
    assert tcav.tcav_score(net, cav, all_positive, 0) == 1.0


def test_aligned_direction_scores_one() -> None:
    net = identity_net(4)
    evaluation_set = EvaluationSet(np.random.default_rng(0).normal(size=(10, 4)), 2, "outer", 1.0)
    assert tcav.tcav_score(net, _unit_cav(np.eye(4)[2], 0), evaluation_set, 2) == 1.0
    assert tcav.tcav_score(net, _unit_cav(-np.eye(4)[2], 0), evaluation_set, 2) == 0.0


def test_constant_logits_score_zero() -> None:
    net = _blind_net()
    cav = _unit_cav(np.array([0.6, 0.8]), len(net) - 1)
    assert tcav.tcav_score(net, cav, _evaluation_set(net), 2) == 0.0


def test_logit_offset_leaves_sensitivities_unchanged() -> None:
    net = tiny_net(seed=8)
    inputs = np.random.default_rng(5).normal(size=(6, 32))
    cav = _unit_cav(np.random.default_rng(6).normal(size=4), len(net) - 1)
    before = tcav.concept_sensitivities(net, cav, inputs, 1)
    net.layers[-1].bias[1] += 10.0  # type: ignore[union-attr]
    npt.assert_array_equal(tcav.concept_sensitivities(net, cav, inputs, 1), before)


def test_empty_evaluation_set() -> None:
    with pytest.raises(DomainError):
        EvaluationSet(np.zeros((0, 4)), 0, "outer", 1797.0)


def test_evaluation_set_name() -> None:
    assert EvaluationSet(np.zeros((1, 4)), 2, "outer", 1797.0).name == "outer_1797rpm"


def test_welch_against_scipy() -> None:
    a = [0.8, 0.9, 0.85, 0.95, 0.7]
    b = [0.5, 0.45, 0.6, 0.4, 0.55]
    t_statistic, p_value = tcav.welch_test(a, b)
    expected = stats.ttest_ind(a, b, equal_var=False)
    assert t_statistic == pytest.approx(expected.statistic)
    assert p_value == pytest.approx(expected.pvalue)


def test_welch_degenerate_samples() -> None:
    assert tcav.welch_test([0.0, 0.0, 0.0], [0.0, 0.0, 0.0]) == (0.0, 1.0)
    t_statistic, p_value = tcav.welch_test([1.0, 1.0], [0.0, 0.0])
    assert t_statistic == math.inf
    assert p_value == 0.0
    assert tcav.welch_test([0.5], [0.1, 0.2]) == (0.0, 1.0)


def test_confidence_interval() -> None:
    low, high = tcav.mean_confidence_interval([0.2, 0.4, 0.6, 0.8], 0.95)
    assert low < 0.5 < high
    assert (low + high) / 2 == pytest.approx(0.5)
    low, high = tcav.mean_confidence_interval([0.3, 0.3, 0.3])
    assert low == pytest.approx(0.3, abs=1e-12)
    assert high == pytest.approx(0.3, abs=1e-12)


def _report(**overrides: object) -> TcavReport:
    fields = {
        "evaluation_set": "outer_1797rpm",
        "class_under_test": 2,
        "layer": 5,
        "target_f_char": 107.36,
        "scores": [0.9, 0.95, 1.0],
        "probe_accuracies": [0.99, 0.97, 0.98],
        "gates": [True, True, True],
        "random_scores": [0.5, 0.4, 0.6],
        "gate_threshold": 0.85,
    }
    fields.update(overrides)
    return TcavReport(**fields)  # type: ignore[arg-type]


def test_report_statistics() -> None:
    report = _report()
    assert report.repetitions == 3
    assert report.mean == pytest.approx(0.95)
    assert report.random_mean == pytest.approx(0.5)
    assert report.significant
    assert report.status == "RELIABLE"
    document = report.to_dict()
    assert "cavs" not in document
    assert document["status"] == "RELIABLE"
    assert document["confidence_interval"]["level"] == pytest.approx(0.95)


def test_failed_gate_marks_report_unreliable() -> None:
    report = _report(gates=[True, False, True])
    assert not report.reliable
    assert report.to_dict()["status"] == "UNRELIABLE"
    assert report.scores == [0.9, 0.95, 1.0]


def test_infinite_statistic_is_not_serialized() -> None:
    report = _report(scores=[1.0, 1.0, 1.0], random_scores=[0.0, 0.0, 0.0])
    document = report.to_dict()
    assert document["t_statistic"] is None
    assert document["p_value"] == 0.0


def test_experiment_on_blind_network() -> None:
    net = _blind_net()
    spec = ConceptSpec.for_target(100.0, 4000.0, 64)
    report = tcav.tcav_experiment(
        net, spec, _evaluation_set(net), 2, seed=0, repetitions=2, examples_per_side=20,
        gate_threshold=0.0,
    )
    assert report.scores == [0.0, 0.0]
    assert report.std == 0.0
    assert report.p_value == 1.0
    assert report.layer == len(net) - 1
    assert report.reliable


def test_experiment_report_fields() -> None:
    net = tiny_net(seed=2, input_length=64)
    spec = ConceptSpec.for_target(100.0, 4000.0, 64)
    evaluation_set = _evaluation_set(net, count=6, c=1)
    kwargs = {"repetitions": 3, "examples_per_side": 20, "gate_threshold": 0.0}
    report = tcav.tcav_experiment(net, spec, evaluation_set, 1, seed=4, **kwargs)
    assert len(report.scores) == len(report.random_scores) == len(report.gates) == 3
    assert all(0.0 <= s <= 1.0 for s in report.scores + report.random_scores)
    assert all(0.0 <= a <= 1.0 for a in report.probe_accuracies)
    assert len(report.cavs) == 3
    assert report.target_f_char == 100.0
    assert report.evaluation_set == "outer_1797rpm"

    threaded = tcav.tcav_experiment(net, spec, evaluation_set, 1, seed=4, threads=3, **kwargs)
    assert threaded.scores == report.scores
    assert threaded.probe_accuracies == report.probe_accuracies


def test_concept_examples_are_normalized(monkeypatch: pytest.MonkeyPatch) -> None:
    seen: list = []
    fit = tcav.train_probe

    def recording_probe(pos: np.ndarray, neg: np.ndarray, seed: int, layer: int) -> Cav:
        seen.extend((pos, neg))
        return fit(pos, neg, seed, layer=layer)

    monkeypatch.setattr(tcav, "train_probe", recording_probe)
    net = _blind_net()
    spec = ConceptSpec.for_target(100.0, 4000.0, 64)
    tcav.tcav_experiment(
        net, spec, _evaluation_set(net), 2, seed=1, repetitions=1, examples_per_side=6,
        gate_threshold=0.0, layer=0,
    )
    assert len(seen) == 4
    for rows in seen:
        assert rows.shape == (6, 64)
        npt.assert_array_equal(rows.min(axis=1), -1.0)
        npt.assert_array_equal(rows.max(axis=1), 1.0)


def test_experiment_warns_when_unreliable(caplog: pytest.LogCaptureFixture) -> None:
    net = _blind_net()
    spec = ConceptSpec.for_target(100.0, 4000.0, 64)
    with caplog.at_level(logging.WARNING, logger="vibtcav.tcav"):
        report = tcav.tcav_experiment(
            net, spec, _evaluation_set(net), 2, seed=0, repetitions=2, examples_per_side=10,
            gate_threshold=1.01,
        )
    assert report.status == "UNRELIABLE"
    assert "UNRELIABLE" in caplog.text


def test_experiment_input_checks() -> None:
    net = _blind_net()
    with pytest.raises(DomainError):
        tcav.tcav_experiment(
            net, ConceptSpec.for_target(100.0, 4000.0, 32), _evaluation_set(net), 2, seed=0,
        )
    with pytest.raises(ConfigurationError):
        tcav.tcav_experiment(
            net,
            ConceptSpec.for_target(100.0, 4000.0, 64),
            _evaluation_set(net),
            2,
            seed=0,
            repetitions=0,
        )


def _stratified_dataset() -> Dataset:
    strata = [("healthy", 1772.0, 120), ("inner", 1797.0, 150), ("outer", 1797.0, 40)]
    info = [
        SegmentInfo(speed, fault, f"{fault}-{i}")
        for fault, speed, count in strata
        for i in range(count)
    ]
    labels = [{"healthy": 0, "inner": 1, "outer": 2}[i.fault_type] for i in info]
    segments = np.arange(len(info), dtype=np.float64)[:, None] * np.ones((1, 8))
    return Dataset(segments, np.asarray(labels), info, 12000.0)


def test_evaluation_sets_per_stratum(caplog: pytest.LogCaptureFixture) -> None:
    dataset = _stratified_dataset()
    with caplog.at_level(logging.WARNING, logger="vibtcav.tcav"):
        sets = tcav.build_evaluation_sets(dataset, per_set=100, seed=0)
    assert [s.name for s in sets] == ["healthy_1772rpm", "inner_1797rpm", "outer_1797rpm"]
    assert [len(s) for s in sets] == [100, 100, 40]
    assert [s.class_under_test for s in sets] == [0, 1, 2]
    assert "Only 40 segments" in caplog.text

    for evaluation_set in sets:
        rows = evaluation_set.signals[:, 0].astype(int)
        assert len(set(rows)) == len(rows)
        assert {dataset.info[i].fault_type for i in rows} == {evaluation_set.fault_type}


def test_evaluation_sets_are_seeded() -> None:
    dataset = _stratified_dataset()
    first = tcav.build_evaluation_sets(dataset, per_set=50, seed=3)
    second = tcav.build_evaluation_sets(dataset, per_set=50, seed=3)
    for a, b in zip(first, second):
        npt.assert_array_equal(a.signals, b.signals)


def test_evaluation_sets_respect_index_subset(caplog: pytest.LogCaptureFixture) -> None:
    dataset = _stratified_dataset()
    with caplog.at_level(logging.WARNING, logger="vibtcav.tcav"):
        sets = tcav.build_evaluation_sets(dataset, per_set=10, seed=0, indices=range(120, 310))
    assert [s.fault_type for s in sets] == ["inner", "outer"]
    assert "No segments of fault type healthy" in caplog.text
