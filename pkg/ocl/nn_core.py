"""
Minimal fully connected network with exact backpropagation.

The network keeps every weight and bias in one flat float64 vector. Layer l contributes its
weight matrix W_l (out_l x in_l, row-major) followed by its bias b_l, so the flat view, the
gradients and the importance weights all share one ordering.
Hidden layers use the rectifier, the output layer is linear (logits or raw embedding).
"""

from enum import StrEnum
from typing import Self

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ocl.errors import ConfigurationError, RejectedInputError

FloatArray = npt.NDArray[np.float64]


class LossKind(StrEnum):
    CROSS_ENTROPY = "cross-entropy"  # labels are class indices
    TRIPLET_MARGIN = "triplet-margin"  # inputs are (anchor, positive, negative) stacks
    SQUARED_ERROR = "squared-error"  # labels are real target vectors


class LossSpec(BaseModel):
    kind: LossKind = Field(..., description="Loss head applied to the network output")
    margin: float = Field(0.0, ge=0.0, description="Triplet margin, only used by the triplet head")

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_margin(self) -> Self:
        if self.kind == LossKind.TRIPLET_MARGIN and self.margin <= 0.0:
            raise ValueError(f"triplet-margin loss needs a positive margin, got {self.margin}")
        return self


class Model(BaseModel):
    """A fully connected rectifier network stored as a flat parameter vector."""

    layer_sizes: tuple[int, ...] = Field(..., description="Input dim, hidden dims, output dim")
    params: FloatArray = Field(..., description="All weights and biases, flat")

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    @model_validator(mode="after")
    def _check_shapes(self) -> Self:
        if len(self.layer_sizes) < 2 or any(size <= 0 for size in self.layer_sizes):
            raise ValueError(f"layer_sizes must hold at least two positive sizes, got {self.layer_sizes}")
        expected = param_count(self.layer_sizes)
        if self.params.shape != (expected,):
            raise ValueError(f"expected {expected} parameters for {self.layer_sizes}, got shape {self.params.shape}")
        return self

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def num_params(self) -> int:
        return int(self.params.shape[0])

    def layers(self) -> list[tuple[FloatArray, FloatArray]]:
        """(W, b) views into the flat parameter vector, one pair per layer."""
        views: list[tuple[FloatArray, FloatArray]] = []
        offset = 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            weight = self.params[offset : offset + fan_in * fan_out].reshape(fan_out, fan_in)
            offset += fan_in * fan_out
            bias = self.params[offset : offset + fan_out]
            offset += fan_out
            views.append((weight, bias))
        return views


class Batch(BaseModel):
    """
    Samples handed to a loss head.

    x is (n, d) for cross-entropy and squared-error, (n, 3, d) for triplets.
    y holds class indices, identity ids of the anchors, or (n, out) regression targets.
    """

    x: FloatArray
    y: npt.NDArray[np.generic]

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    def __len__(self) -> int:
        return int(self.x.shape[0])

    def subset(self, index: npt.ArrayLike) -> "Batch":
        idx = np.asarray(index, dtype=np.int64)
        return Batch(x=self.x[idx], y=self.y[idx])

    @staticmethod
    def concat(batches: list["Batch"]) -> "Batch":
        parts = [b for b in batches if len(b) > 0]
        if not parts:
            raise RejectedInputError("cannot concatenate an empty list of batches")
        return Batch(x=np.concatenate([b.x for b in parts]), y=np.concatenate([b.y for b in parts]))


def param_count(layer_sizes: tuple[int, ...] | list[int]) -> int:
    sizes = list(layer_sizes)
    return sum((fan_in + 1) * fan_out for fan_in, fan_out in zip(sizes[:-1], sizes[1:]))


def init_model(layer_sizes: tuple[int, ...] | list[int], seed: int) -> Model:
    """Glorot-uniform weights in [-a, a], a = sqrt(6 / (fan_in + fan_out)); zero biases."""
    sizes = tuple(layer_sizes)
    rng = np.random.default_rng(seed)
    chunks: list[FloatArray] = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return Model(layer_sizes=sizes, params=np.concatenate(chunks).astype(np.float64))


def from_layers(layers: list[tuple[npt.ArrayLike, npt.ArrayLike]]) -> Model:
    """Build a model from explicit (W, b) pairs, W shaped (out, in)."""
    chunks: list[FloatArray] = []
    sizes: list[int] = []
    for weight, bias in layers:
        w = np.atleast_2d(np.asarray(weight, dtype=np.float64))
        b = np.atleast_1d(np.asarray(bias, dtype=np.float64))
        if b.shape != (w.shape[0],):
            raise RejectedInputError(f"bias shape {b.shape} does not match weight shape {w.shape}")
        if sizes and sizes[-1] != w.shape[1]:
            raise RejectedInputError(f"layer input {w.shape[1]} does not match previous output {sizes[-1]}")
        if not sizes:
            sizes.append(int(w.shape[1]))
        sizes.append(int(w.shape[0]))
        chunks.extend([w.ravel(), b])
    return Model(layer_sizes=tuple(sizes), params=np.concatenate(chunks))


def flatten(model: Model) -> FloatArray:
    return model.params.copy()


def unflatten(layer_sizes: tuple[int, ...] | list[int], flat: npt.ArrayLike) -> Model:
    return Model(layer_sizes=tuple(layer_sizes), params=np.array(flat, dtype=np.float64))


def as_input_rows(model: Model, x: npt.ArrayLike) -> FloatArray:
    rows = np.asarray(x, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows[np.newaxis, :]
    if rows.ndim != 2 or rows.shape[1] != model.input_dim:
        raise RejectedInputError(f"expected inputs of dimension {model.input_dim}, got shape {np.shape(x)}")
    return rows


def forward_trace(model: Model, rows: FloatArray) -> tuple[list[FloatArray], list[FloatArray]]:
    """Forward pass that remembers the layer inputs and pre-activations for backprop."""
    inputs: list[FloatArray] = []
    pre_activations: list[FloatArray] = []
    activation = rows
    layers = model.layers()
    for i, (weight, bias) in enumerate(layers):
        inputs.append(activation)
        z = activation.dot(weight.T) + bias
        pre_activations.append(z)
        activation = np.maximum(z, 0.0) if i < len(layers) - 1 else z
    inputs.append(activation)
    return inputs, pre_activations


def _backward(
    model: Model, inputs: list[FloatArray], pre_activations: list[FloatArray], d_out: FloatArray
) -> list[tuple[FloatArray, FloatArray]]:
    """Per-layer deltas and layer inputs, from the output layer down; shared by both gradient flavours."""
    layers = model.layers()
    deltas: list[tuple[FloatArray, FloatArray]] = [(d_out, inputs[-2])]
    delta = d_out
    for layer in range(len(layers) - 1, 0, -1):
        weight, _ = layers[layer]
        delta = delta.dot(weight) * (pre_activations[layer - 1] > 0.0)
        deltas.append((delta, inputs[layer - 1]))
    deltas.reverse()
    return deltas


def _batch_gradient(model: Model, rows: FloatArray, d_out: FloatArray) -> FloatArray:
    """Gradient of sum_n <d_out[n], F(rows[n])> with respect to the flat parameters."""
    inputs, pre_activations = forward_trace(model, rows)
    chunks: list[FloatArray] = []
    for delta, layer_input in _backward(model, inputs, pre_activations, d_out):
        chunks.append(delta.T.dot(layer_input).ravel())
        chunks.append(delta.sum(axis=0))
    return np.concatenate(chunks)


def per_sample_gradients(model: Model, rows: FloatArray, d_out: FloatArray) -> FloatArray:
    """One gradient row per input row; shape (n, num_params)."""
    inputs, pre_activations = forward_trace(model, rows)
    n = rows.shape[0]
    chunks: list[FloatArray] = []
    for delta, layer_input in _backward(model, inputs, pre_activations, d_out):
        chunks.append(np.einsum("no,ni->noi", delta, layer_input).reshape(n, -1))
        chunks.append(delta)
    return np.concatenate(chunks, axis=1)


def forward(model: Model, x: npt.ArrayLike) -> FloatArray:
    """Network output for one input vector (returns a vector) or a stack of rows (returns rows)."""
    squeeze = np.ndim(x) == 1
    rows = as_input_rows(model, x)
    out = forward_trace(model, rows)[0][-1]
    return out[0] if squeeze else out


def _split_batch(model: Model, batch: Batch, spec: LossSpec) -> FloatArray:
    if len(batch) == 0:
        raise RejectedInputError("loss evaluation needs a nonempty batch")
    if spec.kind == LossKind.TRIPLET_MARGIN:
        if batch.x.ndim != 3 or batch.x.shape[1] != 3:
            raise RejectedInputError(f"triplet batches must be shaped (n, 3, d), got {batch.x.shape}")
        return as_input_rows(model, batch.x.reshape(-1, batch.x.shape[2]))
    return as_input_rows(model, batch.x)


def _loss_terms(model: Model, batch: Batch, spec: LossSpec) -> tuple[FloatArray, FloatArray, FloatArray]:
    """Per-sample losses, the stacked input rows, and d(sum of losses)/d(outputs) per row."""
    rows = _split_batch(model, batch, spec)
    out = forward_trace(model, rows)[0][-1]
    n = len(batch)

    if spec.kind == LossKind.CROSS_ENTROPY:
        labels = np.asarray(batch.y, dtype=np.int64)
        if labels.shape != (n,) or np.any(labels < 0) or np.any(labels >= model.output_dim):
            raise RejectedInputError(f"labels must be class indices in [0, {model.output_dim}), got {batch.y}")
        shifted = out - out.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1))
        losses = log_norm - shifted[np.arange(n), labels]
        d_out = np.exp(shifted - log_norm[:, np.newaxis])
        d_out[np.arange(n), labels] -= 1.0
        return losses, rows, d_out

    if spec.kind == LossKind.SQUARED_ERROR:
        targets = np.asarray(batch.y, dtype=np.float64).reshape(out.shape)
        residual = out - targets
        return (residual**2).sum(axis=1), rows, 2.0 * residual

    emb = out.reshape(n, 3, -1)
    anchor, positive, negative = emb[:, 0], emb[:, 1], emb[:, 2]
    d_pos = ((anchor - positive) ** 2).sum(axis=1)
    d_neg = ((anchor - negative) ** 2).sum(axis=1)
    hinge = d_pos - d_neg + spec.margin
    active = (hinge > 0.0).astype(np.float64)[:, np.newaxis]
    d_emb = np.empty_like(emb)
    d_emb[:, 0] = active * 2.0 * (negative - positive)
    d_emb[:, 1] = active * -2.0 * (anchor - positive)
    d_emb[:, 2] = active * 2.0 * (anchor - negative)
    return np.maximum(hinge, 0.0), rows, d_emb.reshape(out.shape)


def per_sample_losses(model: Model, batch: Batch, spec: LossSpec) -> FloatArray:
    """One loss per sample (per triplet for the triplet head)."""
    return _loss_terms(model, batch, spec)[0]


def loss_and_grad(model: Model, batch: Batch, spec: LossSpec) -> tuple[float, FloatArray]:
    """Batch-mean loss and its exact gradient."""
    losses, rows, d_out = _loss_terms(model, batch, spec)
    n = len(batch)
    return float(losses.mean()), _batch_gradient(model, rows, d_out / n)


def sgd_step(model: Model, grad: FloatArray, lr: float) -> Model:
    if lr <= 0.0:
        raise ConfigurationError(f"learning rate must be positive, got {lr}")
    if grad.shape != model.params.shape:
        raise RejectedInputError(f"gradient shape {grad.shape} does not match {model.num_params} parameters")
    return Model(layer_sizes=model.layer_sizes, params=model.params - lr * grad)


def finite_diff_grad(model: Model, batch: Batch, spec: LossSpec, eps: float = 1e-5) -> FloatArray:
    """Central-difference gradient of the batch-mean loss. Slow; meant as a test oracle."""
    if not 1e-8 <= eps <= 1e-3:
        raise ConfigurationError(f"eps must lie in [1e-8, 1e-3], got {eps}")
    grad = np.zeros(model.num_params)
    for i in range(model.num_params):
        shifted = model.params.copy()
        shifted[i] += eps
        upper = per_sample_losses(unflatten(model.layer_sizes, shifted), batch, spec).mean()
        shifted[i] -= 2.0 * eps
        lower = per_sample_losses(unflatten(model.layer_sizes, shifted), batch, spec).mean()
        grad[i] = (upper - lower) / (2.0 * eps)
    return grad
