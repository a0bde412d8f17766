"""Toy multilayer networks with hand-derived gradients.

Layer i computes aᵢ = (hᵢ₋₁ Wᵢ) ⊙ gᵢ with Wᵢ an in×out matrix parameter and gᵢ
a 1×out gain (vector parameter). The nonlinearity sits between layers; the
last layer's output is the prediction.
"""

import math
from collections.abc import Mapping
from dataclasses import dataclass, replace
from enum import StrEnum
from typing import Self

import numpy as np
import numpy.typing as npt
from scipy.special import log_softmax, softmax

from muonlab.errors import ShapeMismatchError
from muonlab.matrix import Matrix, as_matrix, freeze
from muonlab.optimizers import ParamKind


class Nonlinearity(StrEnum):
    TANH = "tanh"
    RELU = "relu"
    IDENTITY = "identity"


class LossKind(StrEnum):
    MSE = "mse"
    CROSS_ENTROPY = "cross_entropy"


@dataclass(frozen=True)
class Batch:
    inputs: npt.NDArray[np.float64]  # (batch, in)
    targets: np.ndarray  # (batch, out) floats for MSE, (batch,) class indices for CE

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, index: np.ndarray) -> Self:
        return replace(self, inputs=self.inputs[index], targets=self.targets[index])


def _activate(a: np.ndarray, kind: Nonlinearity) -> np.ndarray:
    match kind:
        case Nonlinearity.TANH:
            return np.tanh(a)
        case Nonlinearity.RELU:
            return np.maximum(a, 0.0)
        case Nonlinearity.IDENTITY:
            return a


def _activate_grad(a: np.ndarray, kind: Nonlinearity) -> np.ndarray:
    match kind:
        case Nonlinearity.TANH:
            return 1.0 - np.tanh(a) ** 2
        case Nonlinearity.RELU:
            return (a > 0.0).astype(np.float64)
        case Nonlinearity.IDENTITY:
            return np.ones_like(a)


def weight_name(layer: int) -> str:
    return f"layer{layer}.weight"


def gain_name(layer: int) -> str:
    return f"layer{layer}.gain"


@dataclass(frozen=True)
class ToyModel:
    dims: tuple[int, ...]
    nonlinearity: Nonlinearity
    params: dict[str, Matrix]

    @classmethod
    def init(
        cls,
        dims: tuple[int, ...] | list[int],
        nonlinearity: Nonlinearity,
        rng: np.random.Generator,
    ) -> Self:
        """Gaussian weights scaled by 1/√fan_in, unit gains."""
        dims = tuple(dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ValueError(f"need at least input and output dims, all positive; got {dims}")
        params: dict[str, Matrix] = {}
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:], strict=True)):
            weight = rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in)
            params[weight_name(i)] = freeze(weight)
            params[gain_name(i)] = freeze(np.ones((1, fan_out)))
        return cls(dims=dims, nonlinearity=Nonlinearity(nonlinearity), params=params)

    @property
    def num_layers(self) -> int:
        return len(self.dims) - 1

    def param_kinds(self) -> dict[str, ParamKind]:
        return {
            name: ParamKind.VECTOR if name.endswith(".gain") else ParamKind.MATRIX
            for name in self.params
        }

    def with_params(self, params: Mapping[str, Matrix]) -> Self:
        for name, value in params.items():
            if self.params[name].shape != value.shape:
                raise ShapeMismatchError(f"replacing {name}", self.params[name].shape, value.shape)
        return replace(self, params={**self.params, **params})

    def _forward(
        self, inputs: np.ndarray
    ) -> tuple[list[np.ndarray], list[np.ndarray], list[np.ndarray]]:
        if inputs.ndim != 2 or inputs.shape[1] != self.dims[0]:
            raise ShapeMismatchError("model input", (len(inputs), self.dims[0]), inputs.shape)
        hidden = [inputs]  # h₀..h_{L−1}
        pre_gain: list[np.ndarray] = []  # zᵢ = hᵢ₋₁Wᵢ
        activations: list[np.ndarray] = []  # aᵢ = zᵢ ⊙ gᵢ
        for i in range(self.num_layers):
            z = hidden[-1] @ self.params[weight_name(i)]
            a = z * self.params[gain_name(i)]
            pre_gain.append(z)
            activations.append(a)
            if i < self.num_layers - 1:
                hidden.append(_activate(a, self.nonlinearity))
        return hidden, pre_gain, activations

    def predict(self, inputs: npt.ArrayLike) -> np.ndarray:
        _, _, activations = self._forward(np.asarray(inputs, dtype=np.float64))
        return activations[-1]

    def loss(self, batch: Batch, kind: LossKind) -> float:
        value, _ = _loss_and_grad(self.predict(batch.inputs), batch.targets, kind)
        return value

    def forward_backward(self, batch: Batch, kind: LossKind) -> tuple[float, dict[str, Matrix]]:
        """Loss and exact gradients for every parameter."""
        hidden, pre_gain, activations = self._forward(np.asarray(batch.inputs, dtype=np.float64))
        value, delta = _loss_and_grad(activations[-1], batch.targets, kind)

        grads: dict[str, Matrix] = {}
        for i in reversed(range(self.num_layers)):
            gain = self.params[gain_name(i)]
            grads[gain_name(i)] = freeze(np.sum(delta * pre_gain[i], axis=0, keepdims=True))
            delta_z = delta * gain
            grads[weight_name(i)] = freeze(hidden[i].T @ delta_z)
            if i > 0:
                delta = (delta_z @ self.params[weight_name(i)].T) * _activate_grad(
                    activations[i - 1], self.nonlinearity
                )
        return value, {name: grads[name] for name in self.params}


def _loss_and_grad(
    prediction: np.ndarray, targets: np.ndarray, kind: LossKind
) -> tuple[float, np.ndarray]:
    """Loss value and its gradient with respect to the prediction."""
    batch = prediction.shape[0]
    match kind:
        case LossKind.MSE:
            if targets.shape != prediction.shape:
                raise ShapeMismatchError("MSE targets", prediction.shape, targets.shape)
            residual = prediction - targets
            return float(np.mean(residual * residual)), 2.0 * residual / residual.size
        case LossKind.CROSS_ENTROPY:
            labels = np.asarray(targets, dtype=np.int64)
            if labels.shape != (batch,):
                raise ShapeMismatchError("class labels", (batch,), labels.shape)
            rows = np.arange(batch)
            value = -float(np.mean(log_softmax(prediction, axis=1)[rows, labels]))
            grad = softmax(prediction, axis=1)
            grad[rows, labels] -= 1.0
            return value, grad / batch


def model_from_params(
    params: Mapping[str, npt.ArrayLike], nonlinearity: Nonlinearity = Nonlinearity.TANH
) -> ToyModel:
    """Rebuild a ToyModel from named matrices (e.g. a loaded checkpoint)."""
    layers = sum(1 for name in params if name.endswith(".weight"))
    checked = {name: as_matrix(value, where=name) for name, value in params.items()}
    dims = [checked[weight_name(0)].shape[0]]
    dims += [checked[weight_name(i)].shape[1] for i in range(layers)]
    return ToyModel(dims=tuple(dims), nonlinearity=nonlinearity, params=checked)
