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
import logging

import numpy as np

from marginlab.common import constants as c
from marginlab.convexref import group
from marginlab.convexref import lp
from marginlab.convexref import qp
from marginlab.dm import models
from marginlab.netcore import network

LOG = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class Reference:
    """Optimal value of min |theta|^2 s.t. margins >= 1 via a convex problem."""

    problem: c.ReferenceProblem
    value: float
    certified: bool
    solution: models.QpSolution | models.GroupSolution


def linear_deep_reference(
    arch: models.ArchSpec, dataset: models.Dataset
) -> Reference:
    """m * |u*|^(2/m) for fully connected linear networks of depth m."""
    if arch.is_relu or not all(
        arch.is_fully_connected(l) for l in range(arch.depth)
    ):
        raise network.NotApplicable(
            operation="linear_deep reference",
            reason="needs a fully connected linear network",
        )
    solution = qp.solve_linear_maxmargin(dataset)
    value = arch.depth * solution.norm ** (2.0 / arch.depth)
    return Reference(
        problem=c.ReferenceProblem.LINEAR_DEEP,
        value=value,
        certified=solution.kkt_residual <= c.QP_KKT_TOL * 1e2,
        solution=solution,
    )


def l1_reference(arch: models.ArchSpec, dataset: models.Dataset) -> Reference:
    """2 * |beta*|_1 for depth-2 diagonal linear networks."""
    diagonal = models.ArchSpec.diagonal(arch.input_dim, 2)
    if arch.is_relu or arch.depth != 2 or arch.layers != diagonal.layers:
        raise network.NotApplicable(
            operation="l1 reference",
            reason="needs a depth-2 diagonal linear network",
        )
    solution = lp.solve_l1_maxmargin(dataset)
    return Reference(
        problem=c.ReferenceProblem.L1,
        value=2.0 * solution.objective,
        certified=solution.kkt_residual <= 1e-8,
        solution=solution,
    )


def group_reference(arch: models.ArchSpec, dataset: models.Dataset) -> Reference:
    """2 * sum_l |u_l*| for depth-2 no-share linear networks."""
    if arch.is_relu:
        raise network.NotApplicable(
            operation="group reference", reason="needs a linear network"
        )
    groups, gates = group.neuron_groups(arch, dataset)
    solution = group.solve_group_maxmargin(groups, dataset.y, gates)
    return Reference(
        problem=c.ReferenceProblem.GROUP,
        value=2.0 * solution.objective,
        certified=solution.certified,
        solution=solution,
    )


_BUILDERS = {
    c.ReferenceProblem.LINEAR_DEEP: linear_deep_reference,
    c.ReferenceProblem.L1: l1_reference,
    c.ReferenceProblem.GROUP: group_reference,
}


def reference_value(
    problem: c.ReferenceProblem, arch: models.ArchSpec, dataset: models.Dataset
) -> Reference:
    reference = _BUILDERS[c.ReferenceProblem(problem)](arch, dataset)
    LOG.info(
        "Reference %s: %.12g (certified=%s)",
        reference.problem.value,
        reference.value,
        reference.certified,
    )
    return reference


def induced_predictor(
    arch: models.ArchSpec, theta: models.ParamVec
) -> np.ndarray:
    """beta with Phi(theta; x) = <beta, x> for linear networks."""
    if arch.is_relu:
        raise network.NotApplicable(
            operation="induced_predictor", reason="network is not linear"
        )
    product = np.eye(arch.input_dim)
    for W in network.materialize(arch, theta):
        product = W @ product
    return product.reshape(-1)
