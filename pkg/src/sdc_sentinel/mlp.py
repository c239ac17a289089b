"""Multilayer-perceptron detectors: inner-product layers, ReLU, two-way one-hot output.

Training runs in float64 on a :class:`Network`; the frozen, serializable
:class:`DetectorModel` stores float32 parameters and infers in float32.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Sequence

import numpy as np

from . import backend
from .archs import ArchitectureSpec

MODEL_FORMAT = "sdc-sentinel-detector"
MODEL_FORMAT_VERSION = 1
STD_FLOOR = 1e-8
# Standardized features are saturated to this many standard deviations.
INPUT_CLIP = 16.0


class Label(IntEnum):
    CORRECT = 0
    INCORRECT = 1


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "inner_product" or "relu"
    in_dim: int
    out_dim: int

    def __post_init__(self):
        if self.kind not in ("inner_product", "relu"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("layer dimensions must be positive")
        if self.kind == "relu" and self.in_dim != self.out_dim:
            raise ValueError("relu layers preserve dimension")


def layers_for(arch: ArchitectureSpec) -> list[LayerSpec]:
    dims = arch.dims
    layers = []
    for i in range(len(dims) - 1):
        layers.append(LayerSpec("inner_product", dims[i], dims[i + 1]))
        if i < len(dims) - 2:
            layers.append(LayerSpec("relu", dims[i + 1], dims[i + 1]))
    return layers


def _check_chain(layers: Sequence[LayerSpec]) -> None:
    if not layers or layers[-1].kind != "inner_product" or layers[-1].out_dim != 2:
        raise ValueError("final layer must be inner_product with 2 outputs")
    for prev, nxt in zip(layers, layers[1:]):
        if prev.out_dim != nxt.in_dim:
            raise ValueError(f"layer dimension mismatch: {prev} -> {nxt}")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    minibatch_size: int = 64
    initial_tickets: int = 100
    ticket_cap: int = 100
    augment_period_epochs: int = 5
    max_epochs: int = 1000
    rng_seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.minibatch_size < 1 or self.augment_period_epochs < 1 or self.max_epochs < 1:
            raise ValueError("minibatch_size, augment_period_epochs and max_epochs must be >= 1")
        if self.initial_tickets > self.ticket_cap:
            raise ValueError("initial_tickets cannot exceed ticket_cap")


# ---------------------------------------------------------------------------
# primitive layers

def inner_product(W, b, x) -> np.ndarray:
    W = np.asarray(W)
    b = np.asarray(b)
    x = np.asarray(x)
    if W.ndim != 2 or W.shape[1] != x.shape[-1] or b.shape != (W.shape[0],):
        raise ValueError(f"shape mismatch: W{W.shape} b{b.shape} x{x.shape}")
    return x @ W.T + b


def relu(x) -> np.ndarray:
    x = np.asarray(x)
    return np.where(x > 0, x, np.zeros_like(x))


def standardize(x, mean, std, clip=INPUT_CLIP) -> np.ndarray:
    with np.errstate(invalid="ignore", over="ignore"):
        z = (x - mean) / std
    z = np.where(np.isnan(z), clip, z)
    return np.clip(z, -clip, clip)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def loss(logits, label) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    return float(-log_softmax(logits)[int(label)])


# ---------------------------------------------------------------------------
# frozen model

@dataclass
class DetectorModel:
    layers: list[LayerSpec]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    feature_mean: np.ndarray
    feature_std: np.ndarray
    metadata: dict = field(default_factory=dict)
    input_clip: float = INPUT_CLIP

    def __post_init__(self):
        _check_chain(self.layers)
        ips = [l for l in self.layers if l.kind == "inner_product"]
        if len(ips) != len(self.weights) or len(ips) != len(self.biases):
            raise ValueError("one weight matrix and bias per inner_product layer")
        self.weights = [np.ascontiguousarray(w, dtype=np.float32) for w in self.weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float32) for b in self.biases]
        for spec, w, b in zip(ips, self.weights, self.biases):
            if w.shape != (spec.out_dim, spec.in_dim) or b.shape != (spec.out_dim,):
                raise ValueError(f"parameter shapes do not match {spec}")
        self.feature_mean = np.ascontiguousarray(self.feature_mean, dtype=np.float32)
        self.feature_std = np.ascontiguousarray(self.feature_std, dtype=np.float32)
        n = self.layers[0].in_dim
        if self.feature_mean.shape != (n,) or self.feature_std.shape != (n,):
            raise ValueError("normalization vectors must match the input dimension")
        if not np.all(self.feature_std > 0):
            raise ValueError("feature_std components must be positive")
        self._relu_after = [
            i + 1 < len(self.layers) and self.layers[i + 1].kind == "relu"
            for i, l in enumerate(self.layers) if l.kind == "inner_product"
        ]

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def name(self) -> str:
        return self.metadata.get("architecture") or self.architecture.name

    @property
    def architecture(self) -> ArchitectureSpec:
        dims = [self.layers[0].in_dim] + [l.out_dim for l in self.layers if l.kind == "inner_product"]
        return ArchitectureSpec.from_dims(dims)

    def forward_batch(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=np.float32)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"expected feature vectors of length {self.input_dim}, got {x.shape}")
        return backend.mlp_forward(
            np.ascontiguousarray(x), self.feature_mean, self.feature_std, self.input_clip,
            self.weights, self.biases, self._relu_after,
        )

    def classify_batch(self, features) -> np.ndarray:
        """Boolean array, True where the verdict is Incorrect (ties count as Incorrect)."""
        logits = self.forward_batch(features)
        return ~(logits[:, 0] > logits[:, 1])

    def op_count(self) -> int:
        return detector_op_count(self.architecture)

    def to_network(self) -> "Network":
        return Network(
            self.layers,
            [w.astype(np.float64) for w in self.weights],
            [b.astype(np.float64) for b in self.biases],
            self.feature_mean.astype(np.float64),
            self.feature_std.astype(np.float64),
            self.input_clip,
        )


def detector_op_count(arch: ArchitectureSpec) -> int:
    """Flop-equivalents per inference: standardization, MACs (2 each), ReLUs, argmax."""
    dims = arch.dims
    macs = sum(a * b for a, b in zip(dims, dims[1:]))
    return 2 * dims[0] + 2 * macs + sum(arch.hidden_sizes) + 1


def forward(model: DetectorModel, fv) -> np.ndarray:
    fv = np.asarray(fv, dtype=np.float32)
    if fv.shape != (model.input_dim,):
        raise ValueError(f"expected feature vector of length {model.input_dim}, got {fv.shape}")
    return model.forward_batch(fv[None, :])[0]


def classify(model: DetectorModel, fv) -> Label:
    logits = forward(model, fv)
    return Label.CORRECT if logits[0] > logits[1] else Label.INCORRECT


# ---------------------------------------------------------------------------
# trainable float64 network

class Network:
    """Float64 parameters plus the input standardization used while training."""

    def __init__(self, layers, weights, biases, mean, std, clip=INPUT_CLIP):
        _check_chain(layers)
        self.layers = list(layers)
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.maximum(np.asarray(std, dtype=np.float64), STD_FLOOR)
        self.clip = float(clip)
        self.relu_after = [
            i + 1 < len(self.layers) and self.layers[i + 1].kind == "relu"
            for i, l in enumerate(self.layers) if l.kind == "inner_product"
        ]

    @classmethod
    def initialize(cls, arch: ArchitectureSpec, mean, std, rng: np.random.Generator) -> "Network":
        """He-uniform weights (variance 2/fan_in), zero biases."""
        layers = layers_for(arch)
        weights, biases = [], []
        for spec in layers:
            if spec.kind != "inner_product":
                continue
            limit = math.sqrt(6.0 / spec.in_dim)
            weights.append(rng.uniform(-limit, limit, size=(spec.out_dim, spec.in_dim)))
            biases.append(np.zeros(spec.out_dim))
        return cls(layers, weights, biases, mean, std)

    def copy(self) -> "Network":
        return Network(self.layers, self.weights, self.biases, self.mean, self.std, self.clip)

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def _activations(self, x):
        h = standardize(np.asarray(x, dtype=np.float64), self.mean, self.std, self.clip)
        pre, acts = [], [h]
        for w, b, r in zip(self.weights, self.biases, self.relu_after):
            z = h @ w.T + b
            pre.append(z)
            h = np.maximum(z, 0.0) if r else z
            acts.append(h)
        return pre, acts

    def logits(self, x) -> np.ndarray:
        return self._activations(x)[1][-1]

    def mean_loss(self, x, labels) -> float:
        lp = log_softmax(self.logits(x))
        labels = np.asarray(labels, dtype=np.intp)
        return float(-lp[np.arange(labels.size), labels].mean())

    def loss_and_gradients(self, x, labels):
        """Mean cross-entropy and its gradient w.r.t. every parameter, as (loss, [dW, db, ...])."""
        labels = np.asarray(labels, dtype=np.intp)
        n = labels.size
        if n == 0:
            raise ValueError("empty batch")
        pre, acts = self._activations(x)
        lp = log_softmax(acts[-1])
        value = float(-lp[np.arange(n), labels].mean())
        delta = np.exp(lp)
        delta[np.arange(n), labels] -= 1.0
        delta /= n
        grads = [None] * (2 * len(self.weights))
        for li in range(len(self.weights) - 1, -1, -1):
            grads[2 * li] = delta.T @ acts[li]
            grads[2 * li + 1] = delta.sum(axis=0)
            if li > 0:
                delta = (delta @ self.weights[li]) * (pre[li - 1] > 0)
        return value, grads

    def to_model(self, metadata: Optional[dict] = None) -> DetectorModel:
        return DetectorModel(
            self.layers,
            [w.astype(np.float32) for w in self.weights],
            [b.astype(np.float32) for b in self.biases],
            self.mean.astype(np.float32),
            np.maximum(self.std, STD_FLOOR).astype(np.float32),
            dict(metadata or {}),
            self.clip,
        )


def _as_network(model) -> Network:
    return model if isinstance(model, Network) else model.to_network()


def gradients(model, batch) -> list[np.ndarray]:
    """Mean loss gradient over ``batch`` (pairs of feature vector and label)."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    x = np.array([fv for fv, _ in batch], dtype=np.float64)
    y = np.array([int(lab) for _, lab in batch])
    return _as_network(model).loss_and_gradients(x, y)[1]


def sgd_step(model, grads, config: TrainConfig, velocity=None):
    """Momentum SGD: ``v <- m*v - lr*g``; ``p <- p + v``. Returns (network', velocity')."""
    net = _as_network(model).copy()
    if velocity is None:
        velocity = [np.zeros_like(p) for p in net.params]
    new_v = [config.momentum * v - config.learning_rate * g for v, g in zip(velocity, grads)]
    apply_update(net, new_v)
    return net, new_v


def apply_update(net: Network, steps: Sequence[np.ndarray]) -> None:
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        w += steps[2 * i]
        b += steps[2 * i + 1]


# ---------------------------------------------------------------------------
# serialization

def _f32_list(a) -> list:
    # shortest decimal that round-trips to the same float32
    return [float(str(v)) for v in np.asarray(a, dtype=np.float32).ravel()]


def model_to_dict(model: DetectorModel) -> dict:
    layers = []
    it = iter(zip(model.weights, model.biases))
    for spec in model.layers:
        entry = {"kind": spec.kind, "in_dim": spec.in_dim, "out_dim": spec.out_dim}
        if spec.kind == "inner_product":
            w, b = next(it)
            entry["weights"] = [_f32_list(row) for row in w]
            entry["bias"] = _f32_list(b)
        layers.append(entry)
    return {
        "format": MODEL_FORMAT,
        "format_version": MODEL_FORMAT_VERSION,
        "metadata": model.metadata,
        "input_clip": model.input_clip,
        "feature_mean": _f32_list(model.feature_mean),
        "feature_std": _f32_list(model.feature_std),
        "layers": layers,
    }


def model_from_dict(d: dict) -> DetectorModel:
    if d.get("format") != MODEL_FORMAT:
        raise ValueError("not a detector model document")
    if d.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format_version {d.get('format_version')!r}")
    layers, weights, biases = [], [], []
    for entry in d["layers"]:
        spec = LayerSpec(entry["kind"], int(entry["in_dim"]), int(entry["out_dim"]))
        layers.append(spec)
        if spec.kind == "inner_product":
            weights.append(np.array(entry["weights"], dtype=np.float32).reshape(spec.out_dim, spec.in_dim))
            biases.append(np.array(entry["bias"], dtype=np.float32))
    return DetectorModel(
        layers, weights, biases,
        np.array(d["feature_mean"], dtype=np.float32),
        np.array(d["feature_std"], dtype=np.float32),
        dict(d.get("metadata", {})),
        float(d.get("input_clip", INPUT_CLIP)),
    )


def dumps_model(model: DetectorModel) -> str:
    return json.dumps(model_to_dict(model), indent=1) + "\n"


def loads_model(text: str) -> DetectorModel:
    return model_from_dict(json.loads(text))
