"""Minimal trainable network stack: 3x3 convolutions, dense layers,
leaky-ReLU(0.01) activations, optional tanh head, plain SGD on a masked
mean-squared-error loss.

Weights live in one flat float32 array with per-layer views, so an SGD step
is a single vectorized update and serialization is trivial. All math is
vectorized numpy with a fixed accumulation order; with BLAS pinned to one
thread, runs are bit-reproducible. The layers are dtype-generic: tests cast
a network to float64 so finite-difference gradient checks are meaningful.
"""

from __future__ import annotations

import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from probs import checkpoint as ckpt
from probs.games import GameState, Variant, encode_batch

LEAKY_SLOPE = 0.01


class TrainingDiverged(Exception):
    """Raised when a loss or gradient stops being finite."""


def small_spec(variant: Variant, head: str) -> dict:
    """Two 3x3 conv layers (16 channels) + two dense layers; ~10K parameters
    on the 6x7 board."""
    flat = 16 * variant.rows * variant.cols
    out = 1 if head == "value" else variant.max_actions
    return {
        "input": [2, variant.rows, variant.cols],
        "head": "tanh" if head == "value" else "linear",
        "layers": [
            {"kind": "conv", "in": 2, "out": 16, "k": 3},
            {"kind": "conv", "in": 16, "out": 16, "k": 3},
            {"kind": "dense", "in": flat, "out": 10},
            {"kind": "dense", "in": 10, "out": out},
        ],
    }


def large_spec(variant: Variant, head: str) -> dict:
    """Three 3x3 conv layers (32 channels) + two dense layers; ~100K
    parameters on the 6x7 board."""
    flat = 32 * variant.rows * variant.cols
    out = 1 if head == "value" else variant.max_actions
    return {
        "input": [2, variant.rows, variant.cols],
        "head": "tanh" if head == "value" else "linear",
        "layers": [
            {"kind": "conv", "in": 2, "out": 32, "k": 3},
            {"kind": "conv", "in": 32, "out": 32, "k": 3},
            {"kind": "conv", "in": 32, "out": 32, "k": 3},
            {"kind": "dense", "in": flat, "out": 60},
            {"kind": "dense", "in": 60, "out": out},
        ],
    }


def make_spec(variant: Variant, size: str, head: str) -> dict:
    if size not in ("small", "large"):
        raise ValueError(f"unknown network size {size!r}; expected 'small' or 'large'")
    if head not in ("value", "q"):
        raise ValueError(f"unknown head {head!r}; expected 'value' or 'q'")
    return small_spec(variant, head) if size == "small" else large_spec(variant, head)


def _layer_param_count(layer: dict) -> int:
    if layer["kind"] == "conv":
        return layer["out"] * layer["in"] * layer["k"] * layer["k"] + layer["out"]
    if layer["kind"] == "dense":
        return layer["out"] * layer["in"] + layer["out"]
    raise ValueError(f"unknown layer kind {layer['kind']!r}")


def param_count(spec: dict) -> int:
    return sum(_layer_param_count(layer) for layer in spec["layers"])


class Network:
    """A feed-forward network over a flat weight array.

    Leaky-ReLU follows every layer except the last; the head ("tanh" or
    "linear") is applied to the final layer's output.
    """

    def __init__(self, spec: dict, weights: np.ndarray):
        if weights.ndim != 1 or weights.shape[0] != param_count(spec):
            raise ValueError(
                f"weight array of length {weights.shape} does not match spec ({param_count(spec)} params)"
            )
        self.spec = spec
        self.weights = weights
        self.grads = np.zeros_like(weights)
        self._views = self._make_views(self.weights)
        self._grad_views = self._make_views(self.grads)

    def _make_views(self, flat: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray]]:
        views = []
        offset = 0
        for layer in self.spec["layers"]:
            if layer["kind"] == "conv":
                w_shape = (layer["out"], layer["in"], layer["k"], layer["k"])
            else:
                w_shape = (layer["out"], layer["in"])
            w_size = int(np.prod(w_shape))
            w = flat[offset : offset + w_size].reshape(w_shape)
            offset += w_size
            b = flat[offset : offset + layer["out"]]
            offset += layer["out"]
            views.append((w, b))
        return views

    # -- construction -----------------------------------------------------

    @classmethod
    def initialized(cls, spec: dict, seed: int) -> "Network":
        """He-style scaled uniform weights, zero biases, reproducible from seed."""
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        chunks = []
        for layer in spec["layers"]:
            if layer["kind"] == "conv":
                fan_in = layer["in"] * layer["k"] * layer["k"]
                w_size = layer["out"] * fan_in
            else:
                fan_in = layer["in"]
                w_size = layer["out"] * fan_in
            limit = math.sqrt(6.0 / fan_in)
            chunks.append(rng.uniform(-limit, limit, size=w_size).astype(np.float32))
            chunks.append(np.zeros(layer["out"], dtype=np.float32))
        return cls(spec, np.concatenate(chunks))

    def copy(self) -> "Network":
        return Network(self.spec, self.weights.copy())

    def __getstate__(self):
        # grads and views are rebuilt on load; only spec and weights travel
        return {"spec": self.spec, "weights": self.weights}

    def __setstate__(self, state):
        self.__init__(state["spec"], state["weights"])

    def astype(self, dtype) -> "Network":
        """Copy with a different weight dtype (float64 for gradient checks)."""
        return Network(self.spec, self.weights.astype(dtype))

    @property
    def param_counts(self) -> List[int]:
        return [_layer_param_count(layer) for layer in self.spec["layers"]]

    @property
    def out_features(self) -> int:
        return self.spec["layers"][-1]["out"]

    # -- forward / backward ------------------------------------------------

    def forward(self, x: np.ndarray, cache: Optional[list] = None) -> np.ndarray:
        """Run the network on a (batch, channels, rows, cols) tensor."""
        expected = tuple(self.spec["input"])
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ValueError(f"input shape {x.shape} does not match network input {expected}")
        if x.dtype != self.weights.dtype:
            x = x.astype(self.weights.dtype)
        h = x
        last = len(self.spec["layers"]) - 1
        for i, layer in enumerate(self.spec["layers"]):
            w, b = self._views[i]
            if layer["kind"] == "conv":
                pre, conv_cache = _conv_forward(h, w, b)
            else:
                if h.ndim > 2:
                    h = h.reshape(h.shape[0], -1)
                pre = h @ w.T + b
                conv_cache = None
            if cache is not None:
                cache.append((conv_cache, pre))
            h = pre if i == last else _leaky_relu(pre)
        if self.spec["head"] == "tanh":
            h = np.tanh(h)
        if cache is not None:
            cache.append(h)
        return h

    def forward_backward(self, x: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> float:
        """Masked MSE loss and its gradient, written into `self.grads`.

        Loss is the mean of (output - target)^2 over entries where mask is
        nonzero; other outputs contribute nothing to loss or gradient.
        """
        cache: list = []
        out = self.forward(x, cache=cache)
        dtype = self.weights.dtype
        targets = targets.astype(dtype, copy=False).reshape(out.shape)
        mask = mask.astype(dtype, copy=False).reshape(out.shape)
        denom = float(mask.sum())
        if denom <= 0:
            raise ValueError("loss mask selects no outputs")
        err = (out - targets) * mask
        loss = float((err * err).sum() / denom)
        if not math.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss!r}")

        grad = (2.0 / denom) * err
        if self.spec["head"] == "tanh":
            grad = grad * (1.0 - out * out)

        self.grads[:] = 0
        layers = self.spec["layers"]
        # cache layout: one (conv_cache, preactivation) per layer, then output
        for i in range(len(layers) - 1, -1, -1):
            conv_cache, pre = cache[i]
            if i != len(layers) - 1:
                grad = grad * _leaky_relu_grad(pre)
            w, _ = self._views[i]
            gw, gb = self._grad_views[i]
            if layers[i]["kind"] == "dense":
                prev = self._dense_input(cache, x, i)
                gw += grad.T @ prev
                gb += grad.sum(axis=0)
                grad = grad @ w
                if i > 0 and layers[i - 1]["kind"] == "conv":
                    _, prev_pre = cache[i - 1]
                    grad = grad.reshape(prev_pre.shape)
            else:
                grad = _conv_backward(grad, conv_cache, w, gw, gb)
        return loss

    def _dense_input(self, cache: list, x: np.ndarray, i: int) -> np.ndarray:
        """Post-activation input of dense layer i, flattened to 2-D."""
        if i == 0:
            prev = x.astype(self.weights.dtype, copy=False)
        else:
            _, prev_pre = cache[i - 1]
            prev = _leaky_relu(prev_pre)
        return prev.reshape(prev.shape[0], -1)

    def sgd_step(self, lr: float) -> None:
        self.weights -= lr * self.grads

    # -- adapters used by search and policies -------------------------------

    def value_batch(self, states: Sequence[GameState]) -> np.ndarray:
        """Scalar value per state (for leaf evaluation)."""
        return self.forward(encode_batch(states))[:, 0]

    def q_single(self, state: GameState) -> np.ndarray:
        """Per-column q-values for one state."""
        return self.forward(encode_batch([state]))[0]

    # -- serialization -------------------------------------------------------

    def save(self, path, seed: Optional[int] = None, counters: Optional[dict] = None) -> None:
        header = {
            "kind": "network",
            "spec": self.spec,
            "seed": seed,
            "counters": counters or {},
            "param_count": int(self.weights.shape[0]),
        }
        ckpt.write_checkpoint(path, header, {"weights": self.weights})

    @classmethod
    def load(cls, path) -> Tuple["Network", dict]:
        header, arrays = ckpt.read_checkpoint(path)
        if header.get("kind") != "network":
            raise ckpt.CheckpointError(f"{path}: not a network checkpoint (kind={header.get('kind')!r})")
        return cls(header["spec"], arrays["weights"]), header


def _leaky_relu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, LEAKY_SLOPE * x)


def _leaky_relu_grad(pre: np.ndarray) -> np.ndarray:
    one = pre.dtype.type(1.0)
    slope = pre.dtype.type(LEAKY_SLOPE)
    return np.where(pre > 0, one, slope)


_PATCH_INDEX_CACHE: dict = {}


def _patch_indices(channels: int, rows: int, cols: int, k: int) -> np.ndarray:
    """Flat gather indices mapping a zero-padded (C, R+2p, S+2p) sample to
    its (R*S, C*k*k) patch matrix; column order matches a (O, C, k, k)
    weight tensor flattened to (O, C*k*k)."""
    key = (channels, rows, cols, k)
    idx = _PATCH_INDEX_CACHE.get(key)
    if idx is None:
        pr, pc = rows + k - 1, cols + k - 1
        idx = np.empty((rows * cols, channels * k * k), dtype=np.intp)
        for r in range(rows):
            for c in range(cols):
                p = 0
                for ch in range(channels):
                    base = ch * pr * pc
                    for ky in range(k):
                        row_base = base + (r + ky) * pc + c
                        for kx in range(k):
                            idx[r * cols + c, p] = row_base + kx
                            p += 1
        _PATCH_INDEX_CACHE[key] = idx
    return idx


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Same-padded convolution via patch extraction and one matmul.

    Patches are gathered with precomputed flat indices for small batches
    (cheaper per call) and with a strided window view for large ones; both
    produce identical patch matrices.
    """
    batch, channels, rows, cols = x.shape
    k = w.shape[2]
    pad = k // 2
    padded = np.zeros((batch, channels, rows + 2 * pad, cols + 2 * pad), dtype=x.dtype)
    padded[:, :, pad : pad + rows, pad : pad + cols] = x
    if batch <= 16:
        idx = _patch_indices(channels, rows, cols, k)
        patches = padded.reshape(batch, -1)[:, idx]  # (batch, R*S, C*k*k)
    else:
        windows = sliding_window_view(padded, (k, k), axis=(2, 3))
        patches = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch, rows * cols, channels * k * k)
    w_flat = w.reshape(w.shape[0], -1)
    out = patches @ w_flat.T + b
    out = out.transpose(0, 2, 1).reshape(batch, w.shape[0], rows, cols)
    return out, (patches, x.shape)


def _conv_backward(grad_out: np.ndarray, conv_cache, w: np.ndarray, gw: np.ndarray, gb: np.ndarray):
    """Gradients for the same-padded convolution; returns grad wrt input."""
    patches, x_shape = conv_cache
    batch, channels, rows, cols = x_shape
    out_channels, _, k, _ = w.shape
    pad = k // 2
    grad_flat = grad_out.reshape(batch, out_channels, rows * cols).transpose(0, 2, 1)
    gw += np.tensordot(grad_flat, patches, axes=([0, 1], [0, 1])).reshape(w.shape)
    gb += grad_flat.sum(axis=(0, 1))
    dpatches = grad_flat @ w.reshape(out_channels, -1)
    dpatches = dpatches.reshape(batch, rows, cols, channels, k, k)
    dpadded = np.zeros((batch, channels, rows + 2 * pad, cols + 2 * pad), dtype=grad_out.dtype)
    for i in range(k):
        for j in range(k):
            dpadded[:, :, i : i + rows, j : j + cols] += dpatches[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dpadded[:, :, pad : pad + rows, pad : pad + cols]


class Batch:
    """Inputs plus per-output regression targets and a validity mask."""

    __slots__ = ("inputs", "targets", "mask")

    def __init__(self, inputs: np.ndarray, targets: np.ndarray, mask: Optional[np.ndarray] = None):
        if mask is None:
            mask = np.ones_like(targets)
        if inputs.shape[0] != targets.shape[0] or targets.shape != mask.shape:
            raise ValueError("batch dimensions disagree")
        self.inputs = inputs
        self.targets = targets
        self.mask = mask

    def __len__(self) -> int:
        return self.inputs.shape[0]


def train_batch(net: Network, batch: Batch, lr: float) -> float:
    """One SGD step on the masked MSE; returns the pre-step loss."""
    if len(batch) == 0:
        raise ValueError("empty training batch")
    loss = net.forward_backward(batch.inputs, batch.targets, batch.mask)
    net.sgd_step(lr)
    return loss
