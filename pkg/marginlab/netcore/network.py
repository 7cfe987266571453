#    Copyright 2025 Genesis Corporation.
#
#    All Rights Reserved.
#
#    Licensed under the Apache License, Version 2.0 (the "License"); you may
#    not use this file except in compliance with the License. You may obtain
#    a copy of the License at
#
#         http://www.apache.org/licenses/LICENSE-2.0
#
#    Unless required by applicable law or agreed to in writing, software
#    distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
#    WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied. See the
#    License for the specific language governing permissions and limitations
#    under the License.
import dataclasses
import functools
import logging
import typing as tp

import numpy as np

from marginlab.common import constants as c
from marginlab.common import exceptions
from marginlab.dm import models
from marginlab.netcore import losses

LOG = logging.getLogger(__name__)


class NotApplicable(exceptions.MarginLabException):
    message = "%(operation)s is not applicable: %(reason)s"


@dataclasses.dataclass(frozen=True)
class _LayerIndex:
    rows: np.ndarray
    cols: np.ndarray
    # nnz x p_l one-hot map, sums the positions sharing a parameter
    gather: np.ndarray
    ks: np.ndarray


@dataclasses.dataclass(frozen=True, eq=False)
class Descent:
    """Negative loss gradient kept as `exp(log_scale) * vector`."""

    vector: np.ndarray
    log_scale: float
    loss: float
    margins: np.ndarray

    @property
    def grad_norm(self) -> float:
        return float(np.exp(self.log_scale) * np.linalg.norm(self.vector))


@functools.lru_cache(maxsize=256)
def _indices(arch: models.ArchSpec) -> tuple[_LayerIndex, ...]:
    result = []
    for layer, p in zip(arch.layers, arch.param_counts):
        triples = np.array(layer, dtype=int)
        gather = np.zeros((len(layer), p))
        gather[np.arange(len(layer)), triples[:, 2]] = 1.0
        result.append(
            _LayerIndex(
                rows=triples[:, 0],
                cols=triples[:, 1],
                gather=gather,
                ks=triples[:, 2],
            )
        )
    return tuple(result)


def _inputs(arch: models.ArchSpec, X: tp.Any) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != arch.input_dim:
        raise models.DimensionMismatch(expected=arch.input_dim, actual=X.shape[1])
    return X


def _activate(arch: models.ArchSpec, z: np.ndarray) -> np.ndarray:
    if arch.is_relu:
        return np.maximum(z, 0.0)
    return z


def _activation_slope(arch: models.ArchSpec, z: np.ndarray) -> np.ndarray:
    if not arch.is_relu:
        return np.ones_like(z)
    return np.where(z > 0, 1.0, np.where(z < 0, 0.0, arch.relu_zero_slope))


def materialize(
    arch: models.ArchSpec, params: models.ParamVec
) -> list[np.ndarray]:
    """Dense weight matrices W^(1..m) of the network."""
    params.check(arch)
    matrices = []
    for l, index in enumerate(_indices(arch)):
        W = np.zeros((arch.dims[l + 1], arch.dims[l]))
        W[index.rows, index.cols] = params.layers[l][index.ks]
        matrices.append(W)
    return matrices


def sweep(
    arch: models.ArchSpec, params: models.ParamVec, X: tp.Any
) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray], list[np.ndarray]]:
    """Forward pass over a batch.

    Returns
    -------
    out : np.ndarray
        Network outputs, one per row of `X`.
    pre : list[np.ndarray]
        Pre-activations of the hidden layers.
    hidden : list[np.ndarray]
        Layer inputs, `hidden[0]` is `X` itself.
    matrices : list[np.ndarray]
        The materialized weights.
    """
    X = _inputs(arch, X)
    matrices = materialize(arch, params)
    pre: list[np.ndarray] = []
    hidden = [X]
    for W in matrices[:-1]:
        z = hidden[-1] @ W.T
        pre.append(z)
        hidden.append(_activate(arch, z))
    out = (hidden[-1] @ matrices[-1].T).reshape(-1)
    return out, pre, hidden, matrices


def forward_batch(
    arch: models.ArchSpec, params: models.ParamVec, X: tp.Any
) -> np.ndarray:
    return sweep(arch, params, X)[0]


def forward(arch: models.ArchSpec, params: models.ParamVec, x: tp.Any) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise models.DimensionMismatch(expected="a single input", actual=x.shape)
    return float(forward_batch(arch, params, x)[0])


def evaluate(
    arch: models.ArchSpec, params: models.ParamVec, X: tp.Any
) -> tuple[np.ndarray, np.ndarray]:
    """Outputs and the n x P matrix of per-example parameter gradients.

    ReLU kinks use the slope `arch.relu_zero_slope`; positions sharing a
    parameter add up.
    """
    out, pre, hidden, matrices = sweep(arch, params, X)
    indices = _indices(arch)
    delta = np.ones((out.size, 1))
    blocks: list[np.ndarray] = [np.empty(0)] * arch.depth
    for l in reversed(range(arch.depth)):
        index = indices[l]
        entries = delta[:, index.rows] * hidden[l][:, index.cols]
        blocks[l] = entries @ index.gather
        if l > 0:
            delta = (delta @ matrices[l]) * _activation_slope(arch, pre[l - 1])
    return out, np.hstack(blocks)


def jacobian(
    arch: models.ArchSpec, params: models.ParamVec, X: tp.Any
) -> np.ndarray:
    return evaluate(arch, params, X)[1]


def grad(
    arch: models.ArchSpec, params: models.ParamVec, x: tp.Any
) -> models.ParamVec:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise models.DimensionMismatch(expected="a single input", actual=x.shape)
    return models.ParamVec.from_flat(arch, jacobian(arch, params, x)[0])


def margins(
    arch: models.ArchSpec, params: models.ParamVec, dataset: models.Dataset
) -> np.ndarray:
    return dataset.y * forward_batch(arch, params, dataset.X)


def loss_and_grad(
    arch: models.ArchSpec,
    params: models.ParamVec,
    dataset: models.Dataset,
    loss_kind: c.LossKind,
) -> tuple[float, models.ParamVec]:
    out, J = evaluate(arch, params, dataset.X)
    q = dataset.y * out
    loss = float(np.sum(losses.loss_values(q, loss_kind)))
    gradient = J.T @ (losses.loss_derivative(q, loss_kind) * dataset.y)
    return loss, models.ParamVec.from_flat(arch, gradient)


def descent_direction(
    arch: models.ArchSpec,
    params: models.ParamVec,
    dataset: models.Dataset,
    loss_kind: c.LossKind,
) -> Descent:
    out, J = evaluate(arch, params, dataset.X)
    q = dataset.y * out
    log_weights = losses.log_abs_derivative(q, loss_kind)
    shift = float(np.max(log_weights))
    weights = np.exp(log_weights - shift)
    return Descent(
        vector=J.T @ (weights * dataset.y),
        log_scale=shift,
        loss=float(np.sum(losses.loss_values(q, loss_kind))),
        margins=q,
    )


def homogeneity_degree(arch: models.ArchSpec) -> int:
    return arch.depth


def check_homogeneity(
    arch: models.ArchSpec,
    params: models.ParamVec,
    x: tp.Any,
    alphas: tp.Sequence[float] = (0.5, 2.0, 10.0),
    rtol: float = 1e-10,
) -> bool:
    """Check Phi(a*theta; x) = a^L Phi(theta; x) for every sampled a > 0."""
    degree = homogeneity_degree(arch)
    base = forward(arch, params, x)
    for alpha in alphas:
        if alpha <= 0:
            raise ValueError(f"homogeneity is checked for alpha > 0, got {alpha}")
        expected = alpha**degree * base
        actual = forward(arch, params.scaled(alpha), x)
        if abs(actual - expected) > rtol * (1.0 + abs(expected)):
            LOG.debug(
                "Homogeneity violated at alpha=%s: %r != %r", alpha, actual, expected
            )
            return False
    return True


def activation_pattern(
    arch: models.ArchSpec,
    params: models.ParamVec,
    dataset: models.Dataset,
    tol: float = c.ZERO_PREACTIVATION_TOL,
) -> models.ActivationPattern:
    """Pre-activation signs of every hidden neuron on every example.

    A pre-activation of hidden layer l (1-based) is homogeneous of degree l
    in the parameters, so it reads as zero when
    |z| <= tol * ||theta||^l.
    """
    if not arch.is_relu:
        raise NotApplicable(
            operation="activation_pattern", reason="network is linear"
        )
    _, pre, _, _ = sweep(arch, params, dataset.X)
    norm = params.norm
    signs = []
    for l, z in enumerate(pre):
        threshold = tol * norm ** (l + 1)
        signs.append(np.where(np.abs(z) <= threshold, 0, np.sign(z)).astype(int))
    return models.ActivationPattern(tuple(signs))


def strict_signs(
    arch: models.ArchSpec, params: models.ParamVec, X: np.ndarray
) -> tuple[np.ndarray, ...]:
    """Exact pre-activation signs, used to spot kink crossings."""
    _, pre, _, _ = sweep(arch, params, X)
    return tuple(np.sign(z).astype(int) for z in pre)
