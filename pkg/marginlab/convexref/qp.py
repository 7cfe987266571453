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

import logging

import numpy as np

from marginlab.common import constants as c
from marginlab.common import exceptions
from marginlab.convexref import ldp
from marginlab.dm import models
from marginlab.netcore import network

LOG = logging.getLogger(__name__)


class ZeroPreactivation(exceptions.MarginLabException):
    message = (
        "Layer %(layer)s is not affine around the point: zero pre-activation "
        "at (layer, example, neuron) %(entries)s"
    )


def _qp_solution(problem: str, result: ldp.LdpResult) -> models.QpSolution:
    u = result.u
    return models.QpSolution(
        problem=problem,
        optimizer=u,
        objective=0.5 * float(u @ u),
        active_set=result.active_set,
        multipliers=result.multipliers,
        kkt_residual=result.kkt_residual,
    )


def solve_linear_maxmargin(dataset: models.Dataset) -> models.QpSolution:
    """min 1/2 |u|^2 subject to y_i <u, x_i> >= 1."""
    G = dataset.y[:, None] * dataset.X
    result = ldp.least_distance(G, np.ones(dataset.n), problem="linear max-margin")
    return _qp_solution("linear", result)


def layer_constraints(
    arch: models.ArchSpec,
    theta: models.ParamVec,
    layer: int,
    dataset: models.Dataset,
) -> np.ndarray:
    """Rows y_i * a_i with y_i Phi = <y_i a_i, u^(layer)> near `theta`.

    `layer` is 1-based. Phi is homogeneous of degree one in a single layer
    while the activation pattern is fixed, so a_i is the gradient block of
    that layer.
    """
    if not 1 <= layer <= arch.depth:
        raise models.InvalidConfig(
            field="layer", value=layer, reason=f"not in 1..{arch.depth}"
        )
    if arch.is_relu:
        pattern = network.activation_pattern(arch, theta, dataset)
        zeros = pattern.zero_entries(from_layer=layer - 1)
        if zeros:
            raise ZeroPreactivation(layer=layer, entries=zeros)
    _, J = network.evaluate(arch, theta, dataset.X)
    offsets = np.cumsum((0,) + arch.param_counts)
    block = J[:, offsets[layer - 1] : offsets[layer]]
    return dataset.y[:, None] * block


def solve_per_layer_qp(
    arch: models.ArchSpec,
    theta: models.ParamVec,
    layer: int,
    dataset: models.Dataset,
) -> models.QpSolution:
    """Minimum-norm layer `layer` (1-based), all other layers frozen."""
    theta.check(arch)
    G = layer_constraints(arch, theta, layer, dataset)
    result = ldp.least_distance(
        G, np.ones(dataset.n), problem=f"layer {layer} max-margin"
    )
    return _qp_solution(f"layer_{layer}", result)


def per_layer_verdict(
    arch: models.ArchSpec,
    theta: models.ParamVec,
    layer: int,
    dataset: models.Dataset,
    tol: float = c.PER_LAYER_MATCH_TOL,
) -> models.LayerResult:
    try:
        solution = solve_per_layer_qp(arch, theta, layer, dataset)
    except ZeroPreactivation as e:
        LOG.info("Per-layer check of layer %d skipped: %s", layer, e)
        return models.LayerResult(
            layer=layer, verdict=c.LayerVerdict.UNDETERMINED, reason=str(e)
        )
    except ldp.Infeasible as e:
        return models.LayerResult(
            layer=layer, verdict=c.LayerVerdict.UNDETERMINED, reason=str(e)
        )

    current = theta.layers[layer - 1]
    deviation = float(np.max(np.abs(solution.optimizer - current)))
    exact = not arch.is_relu or layer == arch.depth
    if deviation <= tol:
        verdict = c.LayerVerdict.GLOBAL if exact else c.LayerVerdict.LOCAL
        reason = "" if exact else "optimal within the fixed activation pattern"
    elif 2.0 * solution.objective < float(current @ current) - tol:
        # Segment towards the optimum stays feasible near the point
        verdict = c.LayerVerdict.NOT_LOCAL
        reason = "layer problem has a smaller optimum"
    else:
        verdict = c.LayerVerdict.UNDETERMINED
        reason = "optimizer differs at equal norm"
    LOG.debug(
        "Layer %d: deviation=%.3e verdict=%s", layer, deviation, verdict.value
    )
    return models.LayerResult(
        layer=layer,
        verdict=verdict,
        solution=solution,
        deviation=deviation,
        reason=reason,
    )
