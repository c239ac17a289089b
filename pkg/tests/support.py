"""Shared builders for tests that need small networks, detectors or workloads."""

import numpy as np

from sdc_sentinel.archs import ArchitectureSpec
from sdc_sentinel.mlp import DetectorModel, LayerSpec, Network, layers_for


def random_network(dims, seed=0, normalize=True):
    rng = np.random.default_rng(seed)
    arch = ArchitectureSpec.from_dims(dims)
    mean = rng.normal(size=dims[0]) if normalize else np.zeros(dims[0])
    std = rng.uniform(0.5, 2.0, dims[0]) if normalize else np.ones(dims[0])
    net = Network.initialize(arch, mean, std, rng)
    # non-zero biases so every parameter's gradient is exercised
    for b in net.biases:
        b += rng.normal(scale=0.1, size=b.shape)
    return net


def fd_max_rel_error(net, x, y, h=1e-4):
    """Largest relative gap between analytic and central-difference gradients."""
    _, grads = net.loss_and_gradients(x, y)
    worst = 0.0
    for p, g in zip(net.params, grads):
        flat = p.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = net.mean_loss(x, y)
            flat[i] = old - h
            down = net.mean_loss(x, y)
            flat[i] = old
            fd = (up - down) / (2 * h)
            denom = max(abs(fd), abs(gflat[i]), 1e-6)
            worst = max(worst, abs(fd - gflat[i]) / denom)
    return worst


def constant_detector(n_features, flag: bool):
    """A frozen model whose verdict never depends on its input."""
    layers = [LayerSpec("inner_product", n_features, 2)]
    w = np.zeros((2, n_features), np.float32)
    b = np.array([0.0, 1.0] if flag else [1.0, 0.0], np.float32)
    return DetectorModel(layers, [w], [b], np.zeros(n_features), np.ones(n_features),
                         {"architecture": f"{n_features},2"})


class StubDetector:
    """Detector double with a fixed op count and a verdict function over aggregates."""

    def __init__(self, fn, ops=10, name="stub"):
        self.fn = fn
        self.ops = ops
        self.name = name

    def op_count(self):
        return self.ops

    def classify_batch(self, agg):
        return np.array([bool(self.fn(row)) for row in agg])


def arch_layers(dims):
    return layers_for(ArchitectureSpec.from_dims(dims))
