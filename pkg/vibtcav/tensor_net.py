"""Minimal 1D network engine.

Activations are float64 arrays with a leading batch axis: (B, channels, length) for the
convolutional part, (B, features) after flattening or pooling. Every layer kind is a
dataclass holding its hyperparameters and parameter arrays; forward, backward, shape
inference and (de)serialization dispatch on the layer type.

Trace convention: entry ``l`` of an activation trace is the input of layer ``l``, so entry 0
is the network input and entry ``L - 1`` is the representation the final layer consumes.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import singledispatch
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from vibtcav.exceptions import ConfigurationError, DomainError

logger = logging.getLogger(__name__)

Shape = Tuple[int, ...]
Cache = Any

PRESETS = ("plain-cnn", "res-cnn")


def _empty() -> np.ndarray:
    return np.zeros(0, dtype=np.float64)


@dataclass(eq=False)
class Conv1d:
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0
    weight: np.ndarray = field(default_factory=_empty, repr=False)
    bias: np.ndarray = field(default_factory=_empty, repr=False)

    def __post_init__(self) -> None:
        if min(self.in_channels, self.out_channels, self.kernel_size, self.stride) < 1:
            raise DomainError(f"Invalid conv1d hyperparameters: {self}")
        if self.padding < 0:
            raise DomainError(f"Padding must be non-negative, got {self.padding}")
        shape = (self.out_channels, self.in_channels, self.kernel_size)
        if self.weight.shape != shape:
            self.weight = np.zeros(shape, dtype=np.float64)
        if self.bias.shape != (self.out_channels,):
            self.bias = np.zeros(self.out_channels, dtype=np.float64)

    @property
    def fan_in(self) -> int:
        return self.in_channels * self.kernel_size


@dataclass(eq=False)
class Dense:
    in_features: int
    out_features: int
    weight: np.ndarray = field(default_factory=_empty, repr=False)
    bias: np.ndarray = field(default_factory=_empty, repr=False)

    def __post_init__(self) -> None:
        if min(self.in_features, self.out_features) < 1:
            raise DomainError(f"Invalid dense hyperparameters: {self}")
        if self.weight.shape != (self.out_features, self.in_features):
            self.weight = np.zeros((self.out_features, self.in_features), dtype=np.float64)
        if self.bias.shape != (self.out_features,):
            self.bias = np.zeros(self.out_features, dtype=np.float64)

    @property
    def fan_in(self) -> int:
        return self.in_features


@dataclass(eq=False)
class ReLU:
    pass


@dataclass(eq=False)
class MaxPool1d:
    kernel_size: int
    stride: Optional[int] = None

    def __post_init__(self) -> None:
        if self.stride is None:
            self.stride = self.kernel_size
        if self.kernel_size < 1 or self.stride < 1:
            raise DomainError(f"Invalid maxpool1d hyperparameters: {self}")


@dataclass(eq=False)
class GlobalAvgPool:
    pass


@dataclass(eq=False)
class Flatten:
    pass


@dataclass(eq=False)
class ResidualBlock:
    layers: List["Layer"]
    projection: Optional[Conv1d] = None


Layer = Union[Conv1d, Dense, ReLU, MaxPool1d, GlobalAvgPool, Flatten, ResidualBlock]


# Shape inference


@singledispatch
def output_shape(layer: Any, shape: Shape) -> Shape:
    raise NotImplementedError(f"Unknown layer type {type(layer).__name__}")


def _conv_length(length: int, kernel: int, stride: int, padding: int) -> int:
    return (length + 2 * padding - kernel) // stride + 1


@output_shape.register
def _(layer: Conv1d, shape: Shape) -> Shape:
    if len(shape) != 2 or shape[0] != layer.in_channels:
        raise DomainError(f"conv1d expects ({layer.in_channels}, length), got {shape}")
    length = _conv_length(shape[1], layer.kernel_size, layer.stride, layer.padding)
    if length < 1:
        raise DomainError(f"conv1d kernel {layer.kernel_size} does not fit length {shape[1]}")
    return (layer.out_channels, length)


@output_shape.register
def _(layer: Dense, shape: Shape) -> Shape:
    if math.prod(shape) != layer.in_features:
        raise DomainError(f"dense expects {layer.in_features} features, got shape {shape}")
    return (layer.out_features,)


@output_shape.register
def _(layer: ReLU, shape: Shape) -> Shape:
    return shape


@output_shape.register
def _(layer: MaxPool1d, shape: Shape) -> Shape:
    if len(shape) != 2:
        raise DomainError(f"maxpool1d expects (channels, length), got {shape}")
    assert layer.stride is not None
    length = _conv_length(shape[1], layer.kernel_size, layer.stride, 0)
    if length < 1:
        raise DomainError(f"maxpool1d window {layer.kernel_size} does not fit length {shape[1]}")
    return (shape[0], length)


@output_shape.register
def _(layer: GlobalAvgPool, shape: Shape) -> Shape:
    if len(shape) != 2:
        raise DomainError(f"globalavgpool expects (channels, length), got {shape}")
    return (shape[0],)


@output_shape.register
def _(layer: Flatten, shape: Shape) -> Shape:
    return (math.prod(shape),)


@output_shape.register
def _(layer: ResidualBlock, shape: Shape) -> Shape:
    inner = shape
    for sublayer in layer.layers:
        inner = output_shape(sublayer, inner)
    skip = output_shape(layer.projection, shape) if layer.projection is not None else shape
    if inner != skip:
        raise DomainError(f"Residual block branch shape {inner} does not match skip shape {skip}")
    return inner


# Forward pass; each returns the output batch and whatever the backward pass needs


@singledispatch
def layer_forward(layer: Any, x: np.ndarray) -> Tuple[np.ndarray, Cache]:
    raise NotImplementedError(f"Unknown layer type {type(layer).__name__}")


@layer_forward.register
def _(layer: Conv1d, x: np.ndarray) -> Tuple[np.ndarray, Cache]:
    p = layer.padding
    padded = np.pad(x, ((0, 0), (0, 0), (p, p))) if p else x
    windows = sliding_window_view(padded, layer.kernel_size, axis=2)[:, :, :: layer.stride, :]
    y = np.tensordot(windows, layer.weight, axes=([1, 3], [1, 2])).transpose(0, 2, 1)
    return y + layer.bias[None, :, None], (windows, padded.shape, x.shape)


@layer_forward.register
def _(layer: Dense, x: np.ndarray) -> Tuple[np.ndarray, Cache]:
    flat = x.reshape(x.shape[0], -1)
    return flat @ layer.weight.T + layer.bias, (flat, x.shape)


@layer_forward.register
def _(layer: ReLU, x: np.ndarray) -> Tuple[np.ndarray, Cache]:
    active = x > 0
    return np.where(active, x, 0.0), active


@layer_forward.register
def _(layer: MaxPool1d, x: np.ndarray) -> Tuple[np.ndarray, Cache]:
    windows = sliding_window_view(x, layer.kernel_size, axis=2)[:, :, :: layer.stride, :]
    # argmax picks the lowest index among ties
    winners = windows.argmax(axis=-1)
    y = np.take_along_axis(windows, winners[..., None], axis=-1)[..., 0]
    return y, (winners, x.shape)


@layer_forward.register
def _(layer: GlobalAvgPool, x: np.ndarray) -> Tuple[np.ndarray, Cache]:
    return x.mean(axis=2), x.shape


@layer_forward.register
def _(layer: Flatten, x: np.ndarray) -> Tuple[np.ndarray, Cache]:
    return x.reshape(x.shape[0], -1), x.shape


@layer_forward.register
def _(layer: ResidualBlock, x: np.ndarray) -> Tuple[np.ndarray, Cache]:
    h = x
    inner_caches = []
    for sublayer in layer.layers:
        h, cache = layer_forward(sublayer, h)
        inner_caches.append(cache)
    if layer.projection is not None:
        skip, projection_cache = layer_forward(layer.projection, x)
    else:
        skip, projection_cache = x, None
    return h + skip, (inner_caches, projection_cache)


# Backward pass; each returns the input gradient and the parameter gradients in
# layer_parameters order


@singledispatch
def layer_backward(layer: Any, dy: np.ndarray, cache: Cache) -> Tuple[np.ndarray, List[np.ndarray]]:
    raise NotImplementedError(f"Unknown layer type {type(layer).__name__}")


@layer_backward.register
def _(layer: Conv1d, dy: np.ndarray, cache: Cache) -> Tuple[np.ndarray, List[np.ndarray]]:
    windows, padded_shape, input_shape = cache
    out_length = dy.shape[2]
    d_weight = np.tensordot(dy, windows, axes=([0, 2], [0, 2]))
    d_bias = dy.sum(axis=(0, 2))

    d_padded = np.zeros(padded_shape, dtype=np.float64)
    span = layer.stride * (out_length - 1) + 1
    for k in range(layer.kernel_size):
        tap = np.tensordot(dy, layer.weight[:, :, k], axes=([1], [0])).transpose(0, 2, 1)
        d_padded[:, :, k : k + span : layer.stride] += tap
    p = layer.padding
    dx = d_padded[:, :, p : p + input_shape[2]] if p else d_padded
    return dx, [d_weight, d_bias]


@layer_backward.register
def _(layer: Dense, dy: np.ndarray, cache: Cache) -> Tuple[np.ndarray, List[np.ndarray]]:
    flat, input_shape = cache
    dx = (dy @ layer.weight).reshape(input_shape)
    return dx, [dy.T @ flat, dy.sum(axis=0)]


@layer_backward.register
def _(layer: ReLU, dy: np.ndarray, cache: Cache) -> Tuple[np.ndarray, List[np.ndarray]]:
    # zero subgradient at exactly 0
    return np.where(cache, dy, 0.0), []


@layer_backward.register
def _(layer: MaxPool1d, dy: np.ndarray, cache: Cache) -> Tuple[np.ndarray, List[np.ndarray]]:
    winners, input_shape = cache
    assert layer.stride is not None
    positions = winners + layer.stride * np.arange(winners.shape[2])
    dx = np.zeros(input_shape, dtype=np.float64)
    if layer.stride >= layer.kernel_size:
        np.put_along_axis(dx, positions, dy, axis=2)
    else:
        batch, channel, _ = np.ogrid[: dy.shape[0], : dy.shape[1], : dy.shape[2]]
        np.add.at(dx, (batch, channel, positions), dy)
    return dx, []


@layer_backward.register
def _(layer: GlobalAvgPool, dy: np.ndarray, cache: Cache) -> Tuple[np.ndarray, List[np.ndarray]]:
    input_shape = cache
    dx = np.broadcast_to(dy[:, :, None] / input_shape[2], input_shape).copy()
    return dx, []


@layer_backward.register
def _(layer: Flatten, dy: np.ndarray, cache: Cache) -> Tuple[np.ndarray, List[np.ndarray]]:
    return dy.reshape(cache), []


@layer_backward.register
def _(layer: ResidualBlock, dy: np.ndarray, cache: Cache) -> Tuple[np.ndarray, List[np.ndarray]]:
    inner_caches, projection_cache = cache
    dh = dy
    inner_grads: List[List[np.ndarray]] = []
    for sublayer, sub_cache in zip(reversed(layer.layers), reversed(inner_caches)):
        dh, grads = layer_backward(sublayer, dh, sub_cache)
        inner_grads.append(grads)
    flat_grads = [g for grads in reversed(inner_grads) for g in grads]
    if layer.projection is not None:
        d_skip, projection_grads = layer_backward(layer.projection, dy, projection_cache)
        flat_grads.extend(projection_grads)
    else:
        d_skip = dy
    return dh + d_skip, flat_grads


# Parameters and descriptors


@singledispatch
def layer_parameters(layer: Any) -> List[np.ndarray]:
    return []


@layer_parameters.register(Conv1d)
@layer_parameters.register(Dense)
def _(layer: Union[Conv1d, Dense]) -> List[np.ndarray]:
    return [layer.weight, layer.bias]


@layer_parameters.register
def _(layer: ResidualBlock) -> List[np.ndarray]:
    params = [p for sublayer in layer.layers for p in layer_parameters(sublayer)]
    if layer.projection is not None:
        params.extend(layer_parameters(layer.projection))
    return params


@singledispatch
def layer_descriptor(layer: Any) -> Dict[str, Any]:
    raise NotImplementedError(f"Unknown layer type {type(layer).__name__}")


@layer_descriptor.register
def _(layer: Conv1d) -> Dict[str, Any]:
    return {
        "kind": "conv1d",
        "in_channels": layer.in_channels,
        "out_channels": layer.out_channels,
        "kernel_size": layer.kernel_size,
        "stride": layer.stride,
        "padding": layer.padding,
    }


@layer_descriptor.register
def _(layer: Dense) -> Dict[str, Any]:
    return {"kind": "dense", "in_features": layer.in_features, "out_features": layer.out_features}


@layer_descriptor.register
def _(layer: ReLU) -> Dict[str, Any]:
    return {"kind": "relu"}


@layer_descriptor.register
def _(layer: MaxPool1d) -> Dict[str, Any]:
    return {"kind": "maxpool1d", "kernel_size": layer.kernel_size, "stride": layer.stride}


@layer_descriptor.register
def _(layer: GlobalAvgPool) -> Dict[str, Any]:
    return {"kind": "globalavgpool"}


@layer_descriptor.register
def _(layer: Flatten) -> Dict[str, Any]:
    return {"kind": "flatten"}


@layer_descriptor.register
def _(layer: ResidualBlock) -> Dict[str, Any]:
    return {
        "kind": "residual",
        "layers": [layer_descriptor(sublayer) for sublayer in layer.layers],
        "projection": layer_descriptor(layer.projection) if layer.projection else None,
    }


def layer_from_descriptor(descriptor: Dict[str, Any]) -> Layer:
    options = dict(descriptor)
    kind = options.pop("kind", None)
    try:
        if kind == "conv1d":
            return Conv1d(**options)
        if kind == "dense":
            return Dense(**options)
        if kind == "relu":
            return ReLU()
        if kind == "maxpool1d":
            return MaxPool1d(**options)
        if kind == "globalavgpool":
            return GlobalAvgPool()
        if kind == "flatten":
            return Flatten()
        if kind == "residual":
            projection = options.get("projection")
            skip = layer_from_descriptor(projection) if projection else None
            if skip is not None and not isinstance(skip, Conv1d):
                raise DomainError(f"Residual projection must be a conv1d, got {projection}")
            return ResidualBlock([layer_from_descriptor(sub) for sub in options["layers"]], skip)
    except (TypeError, KeyError) as err:
        raise DomainError(f"Invalid {kind} layer descriptor {descriptor}: {err}") from err
    raise DomainError(f"Unknown layer kind {kind!r}")


# Network


@dataclass
class ActivationTrace:
    activations: List[np.ndarray]

    def __len__(self) -> int:
        return len(self.activations)

    def __getitem__(self, layer: int) -> np.ndarray:
        return self.activations[layer]

    def flat(self, layer: int) -> np.ndarray:
        return self.activations[layer].reshape(-1)


@dataclass(eq=False)
class Network:
    layers: List[Layer]
    input_length: int
    num_classes: int
    input_channels: int = 1
    name: str = "custom"
    shapes: List[Shape] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.layers:
            raise DomainError("A network needs at least one layer")
        if self.input_length < 1 or self.input_channels < 1 or self.num_classes < 1:
            raise DomainError(f"Invalid network dimensions for {self.name}")
        shape: Shape = (self.input_channels, self.input_length)
        self.shapes = [shape]
        for layer in self.layers:
            shape = output_shape(layer, shape)
            self.shapes.append(shape)
        if shape != (self.num_classes,):
            raise DomainError(f"Network emits shape {shape}, expected ({self.num_classes},) logits")

    def __len__(self) -> int:
        return len(self.layers)

    @property
    def input_size(self) -> int:
        return self.input_length * self.input_channels


def parameters(net: Network) -> List[np.ndarray]:
    return [p for layer in net.layers for p in layer_parameters(layer)]


def parameter_count(net: Network) -> int:
    return sum(p.size for p in parameters(net))


def _weight_layers(layers: Sequence[Layer]) -> Iterator[Union[Conv1d, Dense]]:
    for layer in layers:
        if isinstance(layer, (Conv1d, Dense)):
            yield layer
        elif isinstance(layer, ResidualBlock):
            yield from _weight_layers(layer.layers)
            if layer.projection is not None:
                yield layer.projection


def initialize(net: Network, seed: int) -> Network:
    """Fan-in scaled uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    for layer in _weight_layers(net.layers):
        bound = math.sqrt(6.0 / layer.fan_in)
        layer.weight[...] = rng.uniform(-bound, bound, size=layer.weight.shape)
        layer.bias[...] = 0.0
    return net


def architecture_descriptor(net: Network) -> Dict[str, Any]:
    return {
        "name": net.name,
        "input_length": net.input_length,
        "input_channels": net.input_channels,
        "num_classes": net.num_classes,
        "parameter_count": parameter_count(net),
        "layers": [layer_descriptor(layer) for layer in net.layers],
    }


def network_from_descriptor(descriptor: Dict[str, Any]) -> Network:
    try:
        return Network(
            layers=[layer_from_descriptor(d) for d in descriptor["layers"]],
            input_length=int(descriptor["input_length"]),
            num_classes=int(descriptor["num_classes"]),
            input_channels=int(descriptor.get("input_channels", 1)),
            name=str(descriptor.get("name", "custom")),
        )
    except KeyError as err:
        raise DomainError(f"Architecture descriptor is missing {err}") from err


def build_preset(
    name: str,
    input_length: int,
    num_classes: int,
    seed: int,
    input_channels: int = 1,
) -> Network:
    """Small stand-ins for the LeNet-like and ResNet-like 1D classifiers.

    Both presets have the same convolutional depth; res-cnn wraps the middle convolutions
    in residual blocks.
    """
    stem: List[Layer] = [Conv1d(input_channels, 8, 16, stride=2), ReLU(), MaxPool1d(4)]
    head: List[Layer] = [GlobalAvgPool(), Dense(32, num_classes)]
    body: List[Layer]
    if name == "plain-cnn":
        body = [
            Conv1d(8, 16, 9, padding=4),
            ReLU(),
            Conv1d(16, 16, 9, padding=4),
            ReLU(),
            MaxPool1d(4),
            Conv1d(16, 32, 9, padding=4),
            ReLU(),
            Conv1d(32, 32, 9, padding=4),
            ReLU(),
        ]
    elif name == "res-cnn":
        body = [
            ResidualBlock(
                [Conv1d(8, 16, 9, padding=4), ReLU(), Conv1d(16, 16, 9, padding=4)],
                projection=Conv1d(8, 16, 1),
            ),
            ReLU(),
            MaxPool1d(4),
            ResidualBlock(
                [Conv1d(16, 32, 9, padding=4), ReLU(), Conv1d(32, 32, 9, padding=4)],
                projection=Conv1d(16, 32, 1),
            ),
            ReLU(),
        ]
    else:
        raise ConfigurationError(f"Unknown architecture preset {name!r}, choose from {PRESETS}")
    net = Network(stem + body + head, input_length, num_classes, input_channels, name=name)
    logger.debug(f"{name}: activation shapes {net.shapes}")
    return initialize(net, seed)


# Passes over whole networks


def _as_batch(net: Network, inputs: np.ndarray) -> np.ndarray:
    batch = np.asarray(inputs, dtype=np.float64)
    if batch.ndim == 1:
        batch = batch[None, :]
    if batch.shape[1:] == (net.input_size,):
        return batch.reshape(batch.shape[0], net.input_channels, net.input_length)
    if batch.shape[1:] == (net.input_channels, net.input_length):
        return batch
    raise DomainError(
        f"Input shape {inputs.shape} does not match {net.input_channels} channel(s) "
        f"of length {net.input_length}",
    )


def _run(
    net: Network,
    activations: np.ndarray,
    start: int = 0,
) -> Tuple[np.ndarray, List[np.ndarray], List[Cache]]:
    trace = []
    caches = []
    for layer in net.layers[start:]:
        trace.append(activations)
        activations, cache = layer_forward(layer, activations)
        caches.append(cache)
    return activations, trace, caches


def _backward(
    net: Network,
    caches: List[Cache],
    d_logits: np.ndarray,
    stop: int = 0,
) -> Tuple[np.ndarray, List[List[np.ndarray]]]:
    """Propagate from the logits down to the input of layer ``stop``.

    ``caches`` must come from a forward pass started at layer 0.
    """
    dy = d_logits
    grads_by_layer: List[List[np.ndarray]] = [[] for _ in net.layers]
    for index in range(len(net.layers) - 1, stop - 1, -1):
        dy, grads = layer_backward(net.layers[index], dy, caches[index])
        grads_by_layer[index] = grads
    return dy, grads_by_layer


def forward_batch(net: Network, inputs: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Logits (B, C) and the per-layer activation batches for a batch of inputs."""
    logits, trace, _ = _run(net, _as_batch(net, inputs))
    return logits, trace


def forward(net: Network, x: np.ndarray) -> Tuple[np.ndarray, ActivationTrace]:
    x = np.asarray(x, dtype=np.float64)
    if x.size != net.input_size:
        raise DomainError(f"Input has {x.size} values, network expects {net.input_size}")
    logits, trace = forward_batch(net, x.reshape(1, -1))
    return logits[0], ActivationTrace([entry[0] for entry in trace])


def forward_from(net: Network, activations: np.ndarray, layer: int) -> np.ndarray:
    """Run layers ``layer..L-1`` on a batch of layer-``layer`` activations."""
    _check_layer(net, layer)
    batch = np.asarray(activations, dtype=np.float64)
    expected = net.shapes[layer]
    if batch.shape[1:] != expected:
        batch = batch.reshape((batch.shape[0], *expected))
    logits, _, _ = _run(net, batch, start=layer)
    return logits


def _check_layer(net: Network, layer: int) -> None:
    if not 0 <= layer < len(net.layers):
        raise DomainError(f"Layer index {layer} out of range [0, {len(net.layers)})")


def _check_class(net: Network, c: int) -> None:
    if not 0 <= c < net.num_classes:
        raise DomainError(f"Class index {c} out of range [0, {net.num_classes})")


def grad_logits_wrt_activation_batch(
    net: Network,
    inputs: np.ndarray,
    layer: int,
    c: int,
) -> np.ndarray:
    """Gradient of logit ``c`` with respect to the layer-``layer`` activations, per example."""
    _check_layer(net, layer)
    _check_class(net, c)
    batch = _as_batch(net, inputs)
    logits, _, caches = _run(net, batch)
    d_logits = np.zeros_like(logits)
    d_logits[:, c] = 1.0
    grad, _ = _backward(net, caches, d_logits, stop=layer)
    return grad


def grad_logit_wrt_activation(net: Network, x: np.ndarray, layer: int, c: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size != net.input_size:
        raise DomainError(f"Input has {x.size} values, network expects {net.input_size}")
    return grad_logits_wrt_activation_batch(net, x.reshape(1, -1), layer, c)[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient with respect to the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(len(labels))
    loss = float(-log_probs[rows, labels].mean())
    d_logits = np.exp(log_probs)
    d_logits[rows, labels] -= 1.0
    return loss, d_logits / len(labels)


def _check_labels(net: Network, labels: np.ndarray, count: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (count,):
        raise DomainError(f"Expected {count} labels, got shape {labels.shape}")
    if count == 0:
        raise DomainError("Cannot compute a loss over an empty batch")
    if labels.min() < 0 or labels.max() >= net.num_classes:
        raise DomainError(f"Labels must lie in [0, {net.num_classes}), got {np.unique(labels)}")
    return labels


def loss(net: Network, inputs: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy and the logits, without gradients."""
    batch = _as_batch(net, inputs)
    labels = _check_labels(net, labels, batch.shape[0])
    logits, _, _ = _run(net, batch)
    value, _ = softmax_cross_entropy(logits, labels)
    return value, logits


def grad_loss_wrt_params(
    net: Network,
    inputs: np.ndarray,
    labels: np.ndarray,
) -> Tuple[float, List[np.ndarray]]:
    """Mean cross-entropy of the batch and its gradient, aligned with ``parameters(net)``."""
    batch = _as_batch(net, inputs)
    labels = _check_labels(net, labels, batch.shape[0])
    logits, _, caches = _run(net, batch)
    value, d_logits = softmax_cross_entropy(logits, labels)
    _, grads_by_layer = _backward(net, caches, d_logits)
    return value, [g for grads in grads_by_layer for g in grads]
