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
import typing as tp

import numpy as np

from marginlab.common import constants as c
from marginlab.convexref import ldp
from marginlab.dm import models
from marginlab.kktcert import nnls as nnls_solver
from marginlab.netcore import network

LOG = logging.getLogger(__name__)


def _constraint_matrix(
    groups: tp.Sequence[tp.Any], labels: tp.Any, gates: tp.Any | None
) -> tuple[np.ndarray, list[slice]]:
    labels = np.asarray(labels, dtype=float).reshape(-1)
    blocks = [np.asarray(g, dtype=float).reshape(labels.size, -1) for g in groups]
    if gates is not None:
        gates = np.asarray(gates, dtype=float).reshape(labels.size, len(blocks))
        if not np.all(np.isin(gates, (0.0, 1.0))):
            raise models.InvalidConfig(
                field="gates", value=gates.tolist(), reason="not in {0, 1}"
            )
        blocks = [gates[:, [l]] * block for l, block in enumerate(blocks)]
    slices = []
    start = 0
    for block in blocks:
        slices.append(slice(start, start + block.shape[1]))
        start += block.shape[1]
    return labels[:, None] * np.hstack(blocks), slices


def _norms(u: np.ndarray, slices: list[slice]) -> np.ndarray:
    return np.array([np.linalg.norm(u[sl]) for sl in slices])


def _project(G: np.ndarray, point: np.ndarray) -> np.ndarray:
    """Euclidean projection of `point` onto {u : G u >= 1}."""
    shift = ldp.least_distance(G, 1.0 - G @ point, problem="projection").u
    return point + shift


def _subgradient_phase(
    G: np.ndarray, slices: list[slice], u: np.ndarray, iters: int
) -> np.ndarray:
    best, best_obj = u, float(np.sum(_norms(u, slices)))
    for k in range(iters):
        norms = _norms(u, slices)
        g = np.zeros_like(u)
        for sl, norm in zip(slices, norms):
            if norm > 0:
                g[sl] = u[sl] / norm
        g_sq = float(g @ g)
        if g_sq == 0:
            break
        # Polyak step towards a target below the best value so far
        target = best_obj * (1.0 - 0.5 / (k + 1))
        step = (float(np.sum(norms)) - target) / g_sq
        u = _project(G, u - step * g)
        obj = float(np.sum(_norms(u, slices)))
        if obj < best_obj:
            best, best_obj = u, obj
    return best


def _reweight_phase(
    G: np.ndarray, slices: list[slice], u: np.ndarray, iters: int
) -> tuple[np.ndarray, int]:
    """Minimise sum |u_l| = min_eta 1/2 sum(|u_l|^2 / eta_l + eta_l)."""
    sizes = [sl.stop - sl.start for sl in slices]
    obj = float(np.sum(_norms(u, slices)))
    floor = 1e-30 * max(obj, 1.0)
    eta = np.maximum(_norms(u, slices), floor)
    iteration = 0
    for iteration in range(1, iters + 1):
        scale = np.repeat(np.sqrt(eta), sizes)
        w = ldp.least_distance(G * scale[None, :], np.ones(G.shape[0])).u
        u = scale * w
        norms = _norms(u, slices)
        new_obj = float(np.sum(norms))
        eta = np.maximum(norms, floor)
        if abs(obj - new_obj) <= 1e-14 * new_obj:
            obj = new_obj
            break
        obj = new_obj
    return u, iteration


def _certify(
    G: np.ndarray, slices: list[slice], u: np.ndarray, tol: float
) -> tuple[np.ndarray, float, list[int]]:
    norms = _norms(u, slices)
    obj = float(np.sum(norms))
    zero = [l for l, norm in enumerate(norms) if norm <= c.GROUP_ZERO_REL * obj]
    nonzero = [l for l in range(len(slices)) if l not in zero]

    slack = G @ u - 1.0
    active = np.flatnonzero(slack <= tol)
    GA = G[active]
    # u_l / |u_l| = sum_i lambda_i y_i A_il x_i^l on nonzero groups
    A = np.vstack([GA[:, slices[l]].T for l in nonzero])
    b = np.concatenate([u[slices[l]] / norms[l] for l in nonzero])
    lam_active, stationarity = nnls_solver.nnls(A, b)

    # Dual norm condition on the zero groups
    excess = max(
        (
            float(np.linalg.norm(GA[:, slices[l]].T @ lam_active)) - 1.0
            for l in zero
        ),
        default=0.0,
    )
    infeasibility = float(np.max(np.maximum(-slack, 0.0), initial=0.0))

    multipliers = np.zeros(G.shape[0])
    multipliers[active] = lam_active
    residual = max(stationarity, excess, infeasibility, 0.0)
    return multipliers, residual, zero


def solve_group_maxmargin(
    groups: tp.Sequence[tp.Any],
    labels: tp.Any,
    gates: tp.Any | None = None,
    subgradient_iters: int = c.GROUP_SUBGRADIENT_ITERS,
    reweight_iters: int = c.GROUP_REWEIGHT_ITERS,
    tol: float = c.GROUP_KKT_TOL,
) -> models.GroupSolution:
    """min sum_l |u_l| subject to y_i sum_l A_il <u_l, x_i^l> >= 1.

    `groups[l]` is the n x d_l array of the features x_i^l seen by group l,
    `gates` the optional n x k array A_il of fixed 0/1 gates. The returned
    solution carries `certified=False` when the convex KKT check fails.
    """
    G, slices = _constraint_matrix(groups, labels, gates)
    u = ldp.least_distance(G, np.ones(G.shape[0]), problem="group max-margin").u
    u = _subgradient_phase(G, slices, u, subgradient_iters)
    u, iterations = _reweight_phase(G, slices, u, reweight_iters)
    multipliers, residual, zero = _certify(G, slices, u, tol)
    certified = residual <= tol
    if not certified:
        LOG.warning(
            "Group max-margin solution not certified: KKT residual %.3e > %.1e",
            residual,
            tol,
        )
    return models.GroupSolution(
        groups=[u[sl].copy() for sl in slices],
        objective=float(np.sum(_norms(u, slices))),
        multipliers=multipliers,
        kkt_residual=residual,
        zero_groups=zero,
        certified=certified,
        iterations=subgradient_iters + iterations,
    )


def _check_neuron_arch(arch: models.ArchSpec) -> None:
    if arch.depth != 2 or not (arch.no_share(0) and arch.no_share(1)):
        raise network.NotApplicable(
            operation="neuron groups", reason="needs a depth-2 no-share network"
        )


def neuron_groups(
    arch: models.ArchSpec,
    dataset: models.Dataset,
    theta: models.ParamVec | None = None,
) -> tuple[list[np.ndarray], np.ndarray | None]:
    """Neuron-space reduction of a depth-2 no-share network.

    Hidden neuron j contributes u_j = v_j w_j acting on the inputs its
    incoming weights see. For ReLU networks the gates are the activation
    pattern at `theta`.
    """
    _check_neuron_arch(arch)
    groups = []
    for j in range(arch.dims[1]):
        cols = sorted(col for row, col, _ in arch.layers[0] if row == j)
        groups.append(dataset.X[:, cols])
    gates = None
    if arch.is_relu:
        if theta is None:
            raise models.InvalidConfig(
                field="theta", value=None, reason="ReLU gates need a point"
            )
        gates = network.activation_pattern(arch, theta, dataset).gates(0)
    return groups, gates


def theta_from_groups(
    arch: models.ArchSpec, solution: models.GroupSolution
) -> models.ParamVec:
    """Balanced parameters with v_j w_j = u_j and |w_j| = v_j >= 0."""
    _check_neuron_arch(arch)
    first = np.zeros(arch.param_counts[0])
    second = np.zeros(arch.param_counts[1])
    for j, u in enumerate(solution.groups):
        scale = np.sqrt(np.linalg.norm(u))
        entries = sorted(
            (col, k) for row, col, k in arch.layers[0] if row == j
        )
        for (_, k), value in zip(entries, u):
            first[k] = value / scale if scale > 0 else 0.0
        for row, col, k in arch.layers[1]:
            if col == j:
                second[k] = scale
    return models.ParamVec.of(first, second)
