import json
import os
import subprocess
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from vibtcav import tensor_net
from vibtcav.tensor_net import (
    Conv1d,
    Dense,
    GlobalAvgPool,
    MaxPool1d,
    Network,
    ReLU,
    ResidualBlock,
)

REPO_ROOT = Path(__file__).resolve().parent.parent

# small run: a few segments, two epochs, two repetitions
FAST_SETTINGS = (
    "dataset.segment_length=256",
    "dataset.segments_per_class=20",
    "dataset.sample_rate=4000",
    "train.epochs=2",
    "train.batch_size=8",
    "tcav.repetitions=2",
    "tcav.examples_per_side=10",
    "tcav.per_set=4",
    "tcav.gate_threshold=0.0",
)


def call_vibtcav(
    *args: str,
    fast: bool = True,
    encoding: Optional[str] = "utf-8",
) -> subprocess.CompletedProcess:
    settings: List[str] = []
    if fast:
        for assignment in FAST_SETTINGS:
            settings.extend(("--set", assignment))
    env = dict(os.environ)
    env["PYTHONPATH"] = os.pathsep.join(filter(None, (str(REPO_ROOT), env.get("PYTHONPATH"))))
    command = (sys.executable, "-m", "vibtcav.vibtcav", *args, *settings, "--hide-progress")
    return subprocess.run(
        command,
        capture_output=True,
        encoding=encoding,
        errors="ignore" if encoding is not None else None,
        check=False,
        env=env,
    )


def read_json(path: Path) -> Dict[str, Any]:
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def tiny_net(seed: int = 0, input_length: int = 32) -> Network:
    """Conv, pool, residual and dense layers in six layers."""
    net = Network(
        [
            Conv1d(1, 3, 5, stride=2, padding=1),
            ReLU(),
            MaxPool1d(2),
            ResidualBlock(
                [Conv1d(3, 4, 3, padding=1), ReLU(), Conv1d(4, 4, 3, padding=1)],
                projection=Conv1d(3, 4, 1),
            ),
            GlobalAvgPool(),
            Dense(4, 3),
        ],
        input_length=input_length,
        num_classes=3,
    )
    tensor_net.initialize(net, seed)
    rng = np.random.default_rng(seed + 1)
    for param in tensor_net.parameters(net):
        param += rng.normal(0.0, 0.05, size=param.shape)
    return net


def identity_net(size: int) -> Network:
    net = Network([Dense(size, size)], input_length=size, num_classes=size)
    net.layers[0].weight[...] = np.eye(size)  # type: ignore[union-attr]
    return net


def central_difference(
    f: Callable[[], float],
    array: np.ndarray,
    index: Any,
    step: float = 1e-5,
) -> float:
    """Central finite difference of ``f`` with respect to ``array[index]``, in place."""
    original = array[index]
    array[index] = original + step
    plus = f()
    array[index] = original - step
    minus = f()
    array[index] = original
    return (plus - minus) / (2 * step)


def relative_error(analytic: float, numeric: float) -> float:
    scale = max(abs(analytic), abs(numeric), 1e-6)
    return abs(analytic - numeric) / scale


def one_sided_differences(
    f: Callable[[], float],
    array: np.ndarray,
    index: Any,
    step: float = 1e-5,
) -> Tuple[float, float]:
    """Forward and backward differences; they disagree where ``f`` has a kink."""
    original = array[index]
    center = f()
    array[index] = original + step
    plus = f()
    array[index] = original - step
    minus = f()
    array[index] = original
    return (plus - center) / step, (center - minus) / step
