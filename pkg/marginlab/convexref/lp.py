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

import itertools
import logging
import math

import numpy as np
from scipy import linalg

from marginlab.common import constants as c
from marginlab.common import exceptions
from marginlab.convexref import ldp
from marginlab.dm import models

LOG = logging.getLogger(__name__)

_PIVOT_TOL = 1e-12


class SolverBudgetExceeded(exceptions.MarginLabException):
    message = "%(problem)s needs %(needed)s bases, budget is %(budget)s"


def _standard_form(dataset: models.Dataset) -> tuple[np.ndarray, np.ndarray]:
    """beta = p - q, Z p - Z q - s = 1 with p, q, s >= 0; costs (1, 1, 0)."""
    Z = dataset.y[:, None] * dataset.X
    n, d = Z.shape
    A = np.hstack([Z, -Z, -np.eye(n)])
    cost = np.concatenate([np.ones(2 * d), np.zeros(n)])
    return A, cost


def solve_l1_maxmargin(
    dataset: models.Dataset, max_bases: int = c.LP_MAX_BASES
) -> models.QpSolution:
    """min |beta|_1 subject to y_i <beta, x_i> >= 1 by vertex enumeration.

    Every basic feasible solution of the standard form is visited. Among
    the optimal vertices the lexicographically smallest beta is returned,
    preferring a dual feasible basis for the multipliers.
    """
    A, cost = _standard_form(dataset)
    n, total = A.shape
    d = dataset.dim
    needed = math.comb(total, n)
    if needed > max_bases:
        raise SolverBudgetExceeded(
            problem="l1 max-margin", needed=needed, budget=max_bases
        )

    b = np.ones(n)
    best: list[tuple[float, tuple[float, ...], bool, np.ndarray, np.ndarray]] = []
    for basis in itertools.combinations(range(total), n):
        B = A[:, basis]
        if abs(np.linalg.det(B)) <= _PIVOT_TOL:
            continue
        x_b = linalg.solve(B, b, check_finite=False)
        if np.any(x_b < -_PIVOT_TOL):
            continue
        x = np.zeros(total)
        x[list(basis)] = np.maximum(x_b, 0.0)
        pi = linalg.solve(B.T, cost[list(basis)], check_finite=False)
        reduced = cost - A.T @ pi
        dual_feasible = bool(np.all(reduced >= -1e-10))
        beta = x[:d] - x[d : 2 * d]
        best.append((float(cost @ x), tuple(beta), dual_feasible, x, pi))

    if not best:
        raise ldp.Infeasible(problem="l1 max-margin")

    optimum = min(entry[0] for entry in best)
    ties = [e for e in best if e[0] <= optimum + 1e-10 * max(1.0, optimum)]
    # Lexicographically smallest optimizer, dual feasible basis first
    objective, beta_t, _, x, pi = min(
        ties, key=lambda e: (tuple(np.round(e[1], 12)), not e[2])
    )
    beta = np.array(beta_t)

    margins = A[:, : 2 * d] @ x[: 2 * d]
    reduced = cost - A.T @ pi
    residual = max(
        float(np.max(np.maximum(1.0 - margins, 0.0))),
        float(np.max(np.maximum(-reduced, 0.0))),
        float(np.max(np.abs(x * reduced))),
        abs(objective - float(b @ pi)),
    )
    active = [int(i) for i in np.flatnonzero(np.abs(margins - 1.0) <= c.QP_KKT_TOL)]
    LOG.debug("l1 max-margin: %d vertices, optimum %.12g", len(best), objective)
    return models.QpSolution(
        problem="l1",
        optimizer=beta,
        objective=float(np.sum(np.abs(beta))),
        active_set=active,
        multipliers=np.maximum(pi, 0.0),
        kkt_residual=residual,
    )
