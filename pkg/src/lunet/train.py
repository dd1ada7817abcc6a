"""Loss, RMSprop optimizer, the mini-batch training loop and the
finite-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LuNetModel
from .tensor import Rng

LOG_CLAMP = 1e-12


@dataclass
class RmsPropConfig:
    learning_rate: float = 0.001
    rho: float = 0.9
    epsilon: float = 1e-7

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must be in (0,1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


def one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or np.any(labels < 0) or np.any(labels >= classes):
        raise ValueError("labels must be a 1-D vector of class indices in range")
    out = np.zeros((labels.shape[0], classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def cross_entropy_loss(probs: np.ndarray, labels_onehot: np.ndarray) -> float:
    """Mean over the batch of -sum(y * log(clamp(p, 1e-12, 1)))."""
    if probs.shape != labels_onehot.shape:
        raise ValueError(f"shape mismatch: probs {probs.shape} vs labels {labels_onehot.shape}")
    row_sums = probs.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-6):
        raise ValueError("probability rows must sum to 1 within 1e-6")
    is_onehot = (np.all((labels_onehot == 0.0) | (labels_onehot == 1.0))
                 and np.all(labels_onehot.sum(axis=1) == 1.0))
    if not is_onehot:
        raise ValueError("labels must be one-hot rows")
    clamped = np.clip(probs, LOG_CLAMP, 1.0)
    return float(-(labels_onehot * np.log(clamped)).sum(axis=1).mean())


def cross_entropy_delta(probs: np.ndarray, labels_onehot: np.ndarray) -> np.ndarray:
    """Fused softmax + cross-entropy gradient w.r.t. logits: (p - y)/batch."""
    return (probs - labels_onehot) / probs.shape[0]


class RmsProp:
    """acc <- rho*acc + (1-rho)*g^2; w <- w - lr*g/(sqrt(acc)+eps); grads zeroed."""

    def __init__(self, config: RmsPropConfig | None = None):
        self.config = config or RmsPropConfig()
        self._acc: dict[str, np.ndarray] = {}

    def step(self, model: LuNetModel):
        c = self.config
        for name, layer, pname, value in model.named_params():
            g = layer.grads[pname]
            acc = self._acc.setdefault(name, np.zeros_like(value))
            acc[...] = c.rho * acc + (1.0 - c.rho) * g * g
            value -= c.learning_rate * g / (np.sqrt(acc) + c.epsilon)
            g[...] = 0.0


def iter_batches(n: int, tc: TrainConfig, epoch: int):
    """Deterministic per-seed mini-batch index stream; a trailing batch of a
    single sample is dropped (batch-norm needs >= 2 rows in train mode)."""
    order = Rng(tc.seed + epoch).permutation(n) if tc.shuffle else np.arange(n)
    for start in range(0, n, tc.batch_size):
        batch = order[start:start + tc.batch_size]
        if len(batch) >= 2 or tc.batch_size == 1:
            yield batch


def train_epoch(model: LuNetModel, features: np.ndarray, labels: np.ndarray,
                tc: TrainConfig, optimizer: RmsProp, epoch: int = 0):
    """One pass of shuffled mini-batch SGD; returns (mean loss, train accuracy)."""
    n = features.shape[0]
    if tc.batch_size > n:
        raise ValueError(f"batch_size {tc.batch_size} exceeds dataset size {n}")
    model.set_mode("train")
    classes = model.spec.num_classes
    losses, correct, seen = [], 0, 0
    for batch in iter_batches(n, tc, epoch):
        xb, yb = features[batch], labels[batch]
        probs = model.forward(xb)
        y = one_hot(yb, classes)
        loss = cross_entropy_loss(probs, y)
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite training loss")
        losses.append(loss)
        correct += int(np.sum(np.argmax(probs, axis=1) == yb))
        seen += len(batch)
        model.backward(cross_entropy_delta(probs, y))
        optimizer.step(model)
    return float(np.mean(losses)), correct / seen


def fit(model: LuNetModel, features: np.ndarray, labels: np.ndarray,
        tc: TrainConfig, oc: RmsPropConfig | None = None, log=None):
    """Run `tc.epochs` training epochs; `log(line)` gets one structured line each."""
    optimizer = RmsProp(oc)
    history = []
    for epoch in range(tc.epochs):
        loss, acc = train_epoch(model, features, labels, tc, optimizer, epoch)
        history.append((epoch, loss, acc))
        if log is not None:
            log(f'{{"epoch": {epoch}, "loss": {loss:.6f}, "train_acc": {acc:.6f}}}')
    return history


def _rel_error(a: float, n: float) -> float:
    # scale floor keeps finite-difference noise on near-zero gradients from
    # registering as large relative errors
    return abs(a - n) / max(abs(a) + abs(n), 1e-3)


def gradient_check(loss_fn, entries: dict[str, tuple[np.ndarray, np.ndarray]],
                   step: float = 1e-5, samples: int = 50,
                   seed: int = 0) -> dict[str, float]:
    """Central finite differences against analytic gradients.

    `loss_fn()` must recompute the scalar loss from current tensor values;
    `entries` maps a name to (value tensor, analytic gradient). At least
    `samples` coordinates per tensor are probed (all of them when smaller).
    Returns the max relative error per entry.
    """
    rng = Rng(seed)
    report = {}
    for name, (value, grad) in entries.items():
        flat_v = value.reshape(-1)
        flat_g = grad.reshape(-1)
        size = flat_v.size
        if size <= samples:
            coords = np.arange(size)
        else:
            coords = rng.permutation(size)[:samples]
        worst = 0.0
        for c in coords:
            orig = flat_v[c]
            flat_v[c] = orig + step
            up = loss_fn()
            flat_v[c] = orig - step
            down = loss_fn()
            flat_v[c] = orig
            numeric = (up - down) / (2.0 * step)
            worst = max(worst, _rel_error(float(flat_g[c]), numeric))
        report[name] = worst
    return report


def layer_gradient_entries(layer, x: np.ndarray, include_input: bool = True):
    """(value, grad) map for a layer's parameters plus the probe input."""
    entries = {f"{layer.name}.{p}": (layer.params[p], layer.grads[p]) for p in layer.params}
    if include_input:
        entries["input"] = (x, np.zeros_like(x))
    return entries


def model_gradient_check(model: LuNetModel, x: np.ndarray, labels: np.ndarray,
                         samples: int = 25, seed: int = 0) -> dict[str, float]:
    """Finite-difference check of the whole stack through the fused
    softmax + cross-entropy loss. Dropout masks are frozen for the duration."""
    model.set_mode("train")
    y = one_hot(labels, model.spec.num_classes)
    drops = model.dropout_layers()
    frozen_before = [d.frozen for d in drops]
    model.forward(x)  # draw the masks once
    for d in drops:
        d.frozen = True
    try:
        def loss_fn():
            return cross_entropy_loss(model.forward(x), y)

        model.zero_grads()
        probs = model.forward(x)
        model.backward(cross_entropy_delta(probs, y))
        entries = {name: (value, layer.grads[pname])
                   for name, layer, pname, value in model.named_params()}
        return gradient_check(loss_fn, entries, samples=samples, seed=seed)
    finally:
        for d, f in zip(drops, frozen_before):
            d.frozen = f


def standard_gradient_suite(corrupt: str | None = None, samples: int = 50) -> dict[str, float]:
    """Finite-difference check of every layer type plus a one-level LuNet.

    Returns max relative error per entry. `corrupt` names a layer whose
    parameter gradients get deliberately skewed (fault-injection hook used
    by the gradcheck command's tests).
    """
    from . import layers as L
    from . import model as model_mod
    from .model import LuNetSpec

    results: dict[str, float] = {}

    def check(tag, layer, x, mode="train", weight_seed=11):
        w_holder = {}

        def loss_fn():
            out = layer.forward(x, mode=mode)
            if "w" not in w_holder:
                w_holder["w"] = Rng(weight_seed).normal(out.shape)
            return float((out * w_holder["w"]).sum())

        loss_fn()
        layer.zero_grads()
        layer.forward(x, mode=mode)
        dx = layer.backward(w_holder["w"])
        entries = {f"{tag}.{p}": (layer.params[p], layer.grads[p]) for p in layer.params}
        entries[f"{tag}.input"] = (x, dx)
        if corrupt == tag:
            for p in layer.params:
                entries[f"{tag}.{p}"] = (layer.params[p], layer.grads[p] + 1e-2)
        report = gradient_check(loss_fn, entries, samples=samples)
        results[tag] = max(report.values())

    data_rng = Rng(5)
    check("conv1d", L.Conv1D(3, 4, 3, Rng(2)), data_rng.normal((2, 8, 3)))
    check("maxpool", L.MaxPool1D(2), data_rng.normal((2, 7, 3)))
    check("batchnorm", L.BatchNorm(4), data_rng.normal((6, 4)))
    check("lstm", L.LSTM(3, 4, Rng(3)), data_rng.normal((2, 5, 3)))
    check("dense", L.Dense(4, 3, Rng(4)), data_rng.normal((2, 4)))
    check("relu", L.ReLU(), data_rng.normal((2, 6, 3)))
    check("gap", L.GlobalAvgPool(), data_rng.normal((2, 6, 3)))
    check("reshape", L.Reshape(3, 4), data_rng.normal((2, 6, 2)))

    drop = L.Dropout(0.5, Rng(6))
    x = data_rng.normal((3, 8))
    drop.forward(x)  # draw the mask once, then freeze it
    drop.frozen = True
    check("dropout", drop, x)

    # fused softmax + cross-entropy: gradient w.r.t. logits is (p - y)/batch
    sm = L.Softmax()
    logits = data_rng.normal((4, 3))
    y = one_hot(np.array([0, 2, 1, 1]), 3)

    def sm_loss():
        return cross_entropy_loss(sm.forward(logits), y)

    probs = sm.forward(logits)
    dlogits = cross_entropy_delta(probs, y)
    if corrupt == "softmax_xent":
        dlogits = dlogits + 1e-2
    results["softmax_xent"] = max(gradient_check(
        sm_loss, {"logits": (logits, dlogits)}, samples=samples).values())

    spec = LuNetSpec(input_features=32, num_classes=3, levels=(4,),
                     final_conv_filters=4, init_seed=7)
    m = model_mod.build(spec)
    mx = data_rng.normal((2, 32))
    report = model_gradient_check(m, mx, np.array([0, 2]), samples=10)
    results["lunet_1block"] = max(report.values())
    return results
