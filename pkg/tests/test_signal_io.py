import json
from pathlib import Path

import numpy as np
import numpy.testing as npt
import pytest

from tests.utils import tiny_net
from vibtcav import __version__, signal_io, tensor_net
from vibtcav.cav import Cav
from vibtcav.exceptions import ConfigurationError, FormatError
from vibtcav.training import Dataset, SegmentInfo
from vibtcav.vibration_sim import Signal


def _signal(count: int = 100) -> Signal:
    samples = np.random.default_rng(0).normal(size=count).astype(np.float32).astype(np.float64)
    return Signal(samples, 12000.0)


def test_binary_signal(tmp_path: Path) -> None:
    path = signal_io.write_signal_binary(tmp_path / "a.vibsig", _signal())
    assert signal_io.is_binary_signal(path)
    loaded = signal_io.read_signal(path)
    npt.assert_array_equal(loaded.samples, _signal().samples)
    assert loaded.sample_rate == 12000.0
    assert path.stat().st_size == 8 + 12 + 4 * 100
    assert not list(tmp_path.glob("*.tmp"))


def test_binary_signal_is_little_endian(tmp_path: Path) -> None:
    path = signal_io.write_signal_binary(tmp_path / "one.vibsig", Signal(np.array([1.0]), 2.0))
    raw = path.read_bytes()
    assert raw[:8] == b"VIBSIG01"
    assert raw[8:12] == b"\x01\x00\x00\x00"
    assert raw[20:] == np.float32(1.0).tobytes()


def test_binary_signal_errors(tmp_path: Path) -> None:
    good = signal_io.write_signal_binary(tmp_path / "good.vibsig", _signal(10)).read_bytes()

    truncated = tmp_path / "truncated.vibsig"
    truncated.write_bytes(good[:-6])
    with pytest.raises(FormatError) as excinfo:
        signal_io.read_signal_binary(truncated)
    assert excinfo.value.offset == len(good) - 6

    bad_magic = tmp_path / "magic.vibsig"
    bad_magic.write_bytes(b"XXXXXXXX" + good[8:])
    with pytest.raises(FormatError) as excinfo:
        signal_io.read_signal_binary(bad_magic)
    assert excinfo.value.offset == 0

    zero_rate = tmp_path / "rate.vibsig"
    zero_rate.write_bytes(good[:12] + np.float64(0.0).tobytes() + good[20:])
    with pytest.raises(FormatError) as excinfo:
        signal_io.read_signal_binary(zero_rate)
    assert excinfo.value.offset == 12

    not_finite = tmp_path / "nan.vibsig"
    not_finite.write_bytes(good[:24] + np.float32(np.nan).tobytes() + good[28:])
    with pytest.raises(FormatError) as excinfo:
        signal_io.read_signal_binary(not_finite)
    assert excinfo.value.offset == 24


def test_csv_signal(tmp_path: Path) -> None:
    signal = Signal(np.array([0.1, -2.5, 1e-300, 3.0]), 1000.0)
    path = signal_io.write_signal_csv(tmp_path / "a.csv", signal)
    assert path.read_text().splitlines()[0] == "sample"
    loaded = signal_io.read_signal(path, sample_rate=1000.0)
    npt.assert_array_equal(loaded.samples, signal.samples)

    bare = signal_io.write_signal_csv(tmp_path / "bare.csv", signal, header=False)
    npt.assert_array_equal(signal_io.read_signal_csv(bare, 1000.0).samples, signal.samples)


def test_csv_signal_errors(tmp_path: Path) -> None:
    path = tmp_path / "broken.csv"
    path.write_text("sample\n1.0\noops\n")
    with pytest.raises(FormatError) as excinfo:
        signal_io.read_signal_csv(path, 1000.0)
    assert excinfo.value.offset == len("sample\n1.0\n")

    with pytest.raises(ConfigurationError):
        signal_io.read_signal(path)

    empty = tmp_path / "empty.csv"
    empty.write_text("sample\n")
    with pytest.raises(FormatError):
        signal_io.read_signal_csv(empty, 1000.0)


def test_dataset_file(tmp_path: Path) -> None:
    info = [SegmentInfo(1797.0, "outer", "a.csv"), SegmentInfo(1772.0, "inner", "b.csv")]
    dataset = Dataset(np.arange(8.0).reshape(2, 4) / 7, np.array([2, 1]), info, 12000.0)
    path = signal_io.write_dataset(tmp_path / "data.vibdat", dataset)
    loaded = signal_io.read_dataset(path)
    npt.assert_array_equal(loaded.segments, dataset.segments)
    npt.assert_array_equal(loaded.labels, dataset.labels)
    assert loaded.info == info
    assert loaded.sample_rate == 12000.0

    raw = path.read_bytes()
    (tmp_path / "short.vibdat").write_bytes(raw[:-8])
    with pytest.raises(FormatError) as excinfo:
        signal_io.read_dataset(tmp_path / "short.vibdat")
    assert excinfo.value.offset == len(raw) - 8

    with pytest.raises(FormatError):
        signal_io.read_dataset(signal_io.write_signal_binary(tmp_path / "x.vibsig", _signal()))


def test_dataset_labels_out_of_range(tmp_path: Path) -> None:
    info = [SegmentInfo(1797.0, "outer", "a.csv"), SegmentInfo(1797.0, "outer", "b.csv")]
    for labels in ([5, 1], [-1, 0]):
        dataset = Dataset(np.zeros((2, 4)), np.array(labels), info, 12000.0)
        path = signal_io.write_dataset(tmp_path / "labels.vibdat", dataset)
        with pytest.raises(FormatError, match="labels must lie in"):
            signal_io.read_dataset(path)


def test_checkpoint(tmp_path: Path) -> None:
    net = tiny_net(seed=3)
    path = signal_io.write_checkpoint(tmp_path / "model.vibnet", net)
    loaded = signal_io.read_checkpoint(path)
    for a, b in zip(tensor_net.parameters(net), tensor_net.parameters(loaded)):
        npt.assert_array_equal(a, b)
    x = np.random.default_rng(0).normal(size=32)
    assert tensor_net.forward(net, x)[0].tobytes() == tensor_net.forward(loaded, x)[0].tobytes()


def test_preset_checkpoint(tmp_path: Path) -> None:
    net = tensor_net.build_preset("res-cnn", 256, 3, seed=1)
    loaded = signal_io.read_checkpoint(signal_io.write_checkpoint(tmp_path / "m.vibnet", net))
    assert tensor_net.architecture_descriptor(loaded) == tensor_net.architecture_descriptor(net)
    assert tensor_net.parameter_count(loaded) == tensor_net.parameter_count(net)


def test_cav_record(tmp_path: Path) -> None:
    direction = np.array([3.0, 4.0]) / 5.0
    cav = Cav(layer=7, direction=direction, probe_accuracy=0.93, bias=-0.25)
    path = signal_io.write_cav(tmp_path / "outer_rep00.json", cav, "abc", repetition=0)
    assert (tmp_path / "outer_rep00.f64").stat().st_size == 16
    record = json.loads(path.read_text())
    assert record["repetition"] == 0
    assert record["config_hash"] == "abc"
    loaded = signal_io.read_cav(path)
    npt.assert_array_equal(loaded.direction, direction)
    assert (loaded.layer, loaded.probe_accuracy, loaded.bias) == (7, 0.93, -0.25)


@pytest.mark.parametrize("key", ["bias", "dimension", "layer", "probe_accuracy"])
def test_cav_record_missing_key(tmp_path: Path, key: str) -> None:
    cav = Cav(layer=2, direction=np.array([0.0, 1.0]), probe_accuracy=0.9, bias=0.0)
    path = signal_io.write_cav(tmp_path / "inner_rep00.json", cav, "abc", repetition=0)
    record = json.loads(path.read_text())
    del record[key]
    path.write_text(json.dumps(record))
    with pytest.raises(FormatError, match=key):
        signal_io.read_cav(path)


def test_stamped_json(tmp_path: Path) -> None:
    path = signal_io.write_json(tmp_path / "run.json", {"b": 1, "a": [1.5]}, "deadbeef")
    document = signal_io.read_json(path)
    assert document["schema_version"] == signal_io.SCHEMA_VERSION
    assert document["tool_version"] == __version__
    assert document["config_hash"] == "deadbeef"
    text = path.read_text()
    assert text.index('"a"') < text.index('"b"')

    with pytest.raises(ValueError, match="not JSON compliant"):
        signal_io.write_json(tmp_path / "nan.json", {"value": float("nan")}, "x")


def test_malformed_json(tmp_path: Path) -> None:
    path = tmp_path / "bad.json"
    path.write_text('{"a": 1,, }')
    with pytest.raises(FormatError) as excinfo:
        signal_io.read_json(path)
    assert excinfo.value.offset == 8

    path.write_text("[1, 2]")
    with pytest.raises(FormatError):
        signal_io.read_json(path)


def test_write_csv(tmp_path: Path) -> None:
    rows = [{"name": "a", "gate": True, "score": 0.5}, {"name": "b", "gate": False, "score": None}]
    path = signal_io.write_csv(tmp_path / "t.csv", ["name", "score", "gate"], rows)
    assert path.read_text() == "name,score,gate\na,0.5,true\nb,,false\n"


@pytest.mark.parametrize(
    ("name", "expected"),
    [("outer_1797rpm", "outer_1797rpm.json"), (".hidden", "_.hidden.json"), ("a/b", "a_b.json")],
)
def test_sanitize_str(name: str, expected: str) -> None:
    assert signal_io.sanitize_str(name, ".json") == expected


def test_filelock_creates_directory(tmp_path: Path) -> None:
    run = tmp_path / "nested" / "run"
    with signal_io.get_filelock(run):
        assert run.is_dir()
