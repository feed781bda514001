"""Minimal dense network engine: layers, losses, hand-derived gradients, ADAM.

Everything is float64 numpy; gradients are derived per layer rather than
through a general autodiff system, which is all the fixed acquisition
pipeline needs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("linear", "relu", "softmax")


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray     # (out,)
    activation: str = "linear"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError("weights must be (out, in) with a matching bias")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


def init_dense(n_out: int, n_in: int, rng: np.random.Generator,
               activation: str = "linear") -> DenseLayer:
    """Scaled-uniform (fan-in) initialization."""
    bound = 1.0 / np.sqrt(n_in)
    w = rng.uniform(-bound, bound, size=(n_out, n_in))
    b = rng.uniform(-bound, bound, size=n_out)
    return DenseLayer(weights=w, bias=b, activation=activation)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def forward(layers: list[DenseLayer], x: np.ndarray):
    """Run a batch (B, in) through the stack; returns (output, tape).

    The tape records the inputs and post-activation outputs needed by
    :func:`backward`.  Softmax is only allowed on the final layer.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    records = []
    h = x
    for li, layer in enumerate(layers):
        if h.shape[1] != layer.weights.shape[1]:
            raise ValueError(
                f"layer {li} expects input width {layer.weights.shape[1]}, got {h.shape[1]}")
        if layer.activation == "softmax" and li != len(layers) - 1:
            raise ValueError("softmax only as the terminal activation")
        pre = h @ layer.weights.T + layer.bias
        if layer.activation == "relu":
            out = np.maximum(pre, 0.0)
        elif layer.activation == "softmax":
            out = softmax(pre)
        else:
            out = pre
        records.append((h, out))
        h = out
    return h, records


def backward(layers: list[DenseLayer], records, d_out: np.ndarray):
    """Gradients of a scalar loss given d loss / d output.

    For a softmax terminal layer, d_out must already be the gradient with
    respect to the logits (softmax and cross-entropy are fused).  Returns
    (grads, d_input) where grads is a list of (dW, db).
    """
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(layers)
    delta = np.asarray(d_out, dtype=float)
    for li in range(len(layers) - 1, -1, -1):
        layer = layers[li]
        inp, out = records[li]
        if layer.activation == "relu":
            delta = delta * (out > 0.0)
        # linear: pass through; softmax: delta is already d/d logits
        grads[li] = (delta.T @ inp, delta.sum(axis=0))
        delta = delta @ layer.weights
    return grads, delta


def cross_entropy_loss(probs: np.ndarray, labels: np.ndarray):
    """Mean -log p[label] over the batch; returns (loss, d loss / d logits).

    The returned gradient assumes probs came out of a softmax layer.
    Probabilities below 1e-12 are clamped with a warning.
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    picked = probs[np.arange(len(labels)), labels]
    if np.any(picked < 1e-12):
        warnings.warn("clamping near-zero class probabilities at 1e-12",
                      RuntimeWarning)
        picked = np.maximum(picked, 1e-12)
    loss = float(np.mean(-np.log(picked)))
    d_logits = probs.copy()
    d_logits[np.arange(len(labels)), labels] -= 1.0
    d_logits /= len(labels)
    return loss, d_logits


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Batch-mean squared Euclidean distance; returns (loss, d loss / d pred)."""
    pred = np.atleast_2d(np.asarray(pred, dtype=float))
    target = np.atleast_2d(np.asarray(target, dtype=float))
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(np.sum(diff ** 2, axis=1)))
    return loss, 2.0 * diff / len(pred)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def like(cls, param: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(param, dtype=float),
                   v=np.zeros_like(param, dtype=float))


def adam_update(param: np.ndarray, grad: np.ndarray, state: AdamState,
                lr: float, beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-8) -> np.ndarray:
    """One bias-corrected ADAM step; mutates state, returns the new param."""
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad ** 2
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps)
