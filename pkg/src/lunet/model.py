"""LuNet architecture: repeated (Conv1D -> ReLU -> MaxPool -> BatchNorm ->
LSTM -> reshape) levels with rising widths, then dropout, a final convolution,
global average pooling and a softmax classifier head."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import (LSTM, BatchNorm, Conv1D, Dense, Dropout, GlobalAvgPool,
                     Layer, MaxPool1D, ReLU, Reshape, Softmax)
from .tensor import Rng


@dataclass
class LuNetSpec:
    """Declarative description of a LuNet stack."""

    input_features: int
    num_classes: int
    levels: tuple[int, ...] = (64, 128, 256)
    kernel_size: int = 3
    pool_size: int = 2
    dropout_rate: float = 0.5
    final_conv_filters: int = 256
    init_seed: int = 0

    def __post_init__(self):
        self.levels = tuple(int(w) for w in self.levels)
        if not self.levels or any(w < 1 for w in self.levels):
            raise ValueError(f"levels must be non-empty positive widths, got {self.levels}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.input_features < 1:
            raise ValueError("input_features must be >= 1")
        if self.kernel_size < 1 or self.pool_size < 1:
            raise ValueError("kernel_size and pool_size must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0,1)")
        if self.final_conv_filters < 1:
            raise ValueError("final_conv_filters must be >= 1")

    def to_mapping(self) -> dict[str, str]:
        return {
            "input_features": str(self.input_features),
            "num_classes": str(self.num_classes),
            "levels": ",".join(str(w) for w in self.levels),
            "kernel_size": str(self.kernel_size),
            "pool_size": str(self.pool_size),
            "dropout_rate": repr(self.dropout_rate),
            "final_conv_filters": str(self.final_conv_filters),
            "init_seed": str(self.init_seed),
        }

    @classmethod
    def from_mapping(cls, m: dict[str, str]) -> "LuNetSpec":
        return cls(
            input_features=int(m["input_features"]),
            num_classes=int(m["num_classes"]),
            levels=tuple(int(w) for w in m["levels"].split(",")),
            kernel_size=int(m["kernel_size"]),
            pool_size=int(m["pool_size"]),
            dropout_rate=float(m["dropout_rate"]),
            final_conv_filters=int(m["final_conv_filters"]),
            init_seed=int(m["init_seed"]),
        )


@dataclass
class LuNetModel:
    spec: LuNetSpec
    layers: list[Layer] = field(default_factory=list)
    shape_trace: list[tuple[str, tuple[int, ...]]] = field(default_factory=list)
    mode: str = "train"
    debug_shapes: bool = False

    @property
    def softmax(self) -> Softmax:
        return self.layers[-1]

    def set_mode(self, mode: str):
        if mode not in ("train", "infer"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode

    def forward(self, x: np.ndarray) -> np.ndarray:
        """[batch, input_features] -> class-probability rows summing to 1."""
        if x.ndim != 2 or x.shape[1] != self.spec.input_features:
            raise ValueError(
                f"expected [batch, {self.spec.input_features}] input, got {x.shape}")
        out = x[:, :, None]
        for layer, (lname, shape) in zip(self.layers, self.shape_trace):
            out = layer.forward(out, mode=self.mode)
            if self.debug_shapes:
                assert out.shape[1:] == shape, (lname, out.shape, shape)
        return out

    def backward(self, delta: np.ndarray, fused_softmax: bool = True) -> np.ndarray:
        """Propagate a loss gradient through the stack.

        With `fused_softmax`, `delta` is (probs - onehot)/batch and enters
        below the softmax layer (the fused softmax + cross-entropy adjoint).
        """
        stack = self.layers[:-1] if fused_softmax else self.layers
        for layer in reversed(stack):
            delta = layer.backward(delta)
        return delta[:, :, 0]

    def predict_class(self, x: np.ndarray) -> np.ndarray:
        """Argmax class per row, computed in infer mode; ties go to the lowest index."""
        prev = self.mode
        self.mode = "infer"
        try:
            probs = self.forward(x)
        finally:
            self.mode = prev
        return np.argmax(probs, axis=1)

    def named_params(self):
        for layer in self.layers:
            for pname, value in layer.params.items():
                yield f"{layer.name}.{pname}", layer, pname, value

    def named_state(self):
        for layer in self.layers:
            for sname, value in layer.state_tensors().items():
                yield f"{layer.name}.{sname}", value

    def zero_grads(self):
        for layer in self.layers:
            layer.zero_grads()

    def dropout_layers(self) -> list[Dropout]:
        return [l for l in self.layers if isinstance(l, Dropout)]


def build(spec: LuNetSpec) -> LuNetModel:
    """Instantiate the layer stack and verify shape agreement level by level."""
    init_rng = Rng(spec.init_seed)
    drop_rng = Rng(spec.init_seed + 1)
    layers: list[Layer] = []
    trace: list[tuple[str, tuple[int, ...]]] = []
    length, channels = spec.input_features, 1

    def push(layer: Layer, shape: tuple[int, ...]):
        layers.append(layer)
        trace.append((layer.name, shape))

    for k, width in enumerate(spec.levels):
        tag = f"level{k}"
        if length < spec.kernel_size:
            raise ValueError(
                f"input length exhausted at {tag}: conv needs length >= "
                f"{spec.kernel_size}, have {length}")
        length = length - spec.kernel_size + 1
        push(Conv1D(channels, width, spec.kernel_size, init_rng, name=f"{tag}.conv"),
             (length, width))
        push(ReLU(name=f"{tag}.relu"), (length, width))
        if length < spec.pool_size:
            raise ValueError(
                f"input length exhausted at {tag}: pool needs length >= "
                f"{spec.pool_size}, have {length}")
        length = length // spec.pool_size
        push(MaxPool1D(spec.pool_size, name=f"{tag}.pool"), (length, width))
        push(BatchNorm(width, name=f"{tag}.bn"), (length, width))
        push(LSTM(width, width, init_rng, return_sequences=True, name=f"{tag}.lstm"),
             (length, width))
        # the LSTM already emits [batch, length, cells]; the bridge is an
        # identity reinterpretation kept so spec variants can repartition
        push(Reshape(length, width, name=f"{tag}.reshape"), (length, width))
        channels = width

    push(Dropout(spec.dropout_rate, drop_rng, name="head.dropout"), (length, channels))
    if length < spec.kernel_size:
        raise ValueError(
            f"input length exhausted at head conv: needs length >= "
            f"{spec.kernel_size}, have {length}")
    length = length - spec.kernel_size + 1
    push(Conv1D(channels, spec.final_conv_filters, spec.kernel_size, init_rng,
                name="head.conv"), (length, spec.final_conv_filters))
    push(ReLU(name="head.relu"), (length, spec.final_conv_filters))
    push(GlobalAvgPool(name="head.gap"), (spec.final_conv_filters,))
    push(Dense(spec.final_conv_filters, spec.num_classes, init_rng, name="head.dense"),
         (spec.num_classes,))
    push(Softmax(name="head.softmax"), (spec.num_classes,))

    return LuNetModel(spec=spec, layers=layers, shape_trace=trace)
