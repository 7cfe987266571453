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
import typing as tp

import numpy as np
from scipy import linalg

from marginlab.common import constants as c
from marginlab.common import exceptions
from marginlab.kktcert import nnls as nnls_solver

LOG = logging.getLogger(__name__)

# NNLS residual below this means the LDP constraints are inconsistent
INFEASIBLE_RESIDUAL = 1e-9


class Infeasible(exceptions.MarginLabException):
    message = "Constraints of %(problem)s are inconsistent"


@dataclasses.dataclass(frozen=True)
class LdpResult:
    u: np.ndarray
    multipliers: np.ndarray
    active_set: list[int]
    kkt_residual: float


def kkt_residual(
    G: np.ndarray, h: np.ndarray, u: np.ndarray, lam: np.ndarray
) -> float:
    """Worst violation of the KKT conditions of min 1/2|u|^2 s.t. Gu >= h."""
    slack = G @ u - h
    return float(
        max(
            np.linalg.norm(u - G.T @ lam),
            np.max(np.maximum(-slack, 0.0), initial=0.0),
            np.max(np.maximum(-lam, 0.0), initial=0.0),
            np.max(np.abs(lam * slack), initial=0.0),
        )
    )


def _polish(
    G: np.ndarray, h: np.ndarray, lam: np.ndarray
) -> tuple[np.ndarray, np.ndarray] | None:
    scale = max(1.0, float(np.max(lam, initial=0.0)))
    active = lam > 1e-12 * scale
    if not active.any():
        return None
    GA = G[active]
    lam_a = linalg.lstsq(GA @ GA.T, h[active], check_finite=False)[0]
    if np.any(lam_a < 0):
        return None
    polished = np.zeros_like(lam)
    polished[active] = lam_a
    u = G.T @ polished
    if np.any(G @ u < h - 1e-12 * (1.0 + np.abs(h))):
        return None
    return u, polished


def least_distance(
    G: tp.Any, h: tp.Any, problem: str = "ldp", polish: bool = True
) -> LdpResult:
    """Solve min 1/2 |u|^2 subject to G u >= h.

    Lawson-Hanson reduction to NNLS: with E = [G^T; h^T] and f = e_{d+1},
    the NNLS residual r = E z - f gives u = -r[:d] / r[d] and the
    multipliers z / (1 - h^T z). A vanishing residual is the Farkas
    certificate of infeasibility.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    h = np.asarray(h, dtype=float).reshape(-1)
    n, d = G.shape
    if h.size != n:
        raise ValueError(f"{n} constraints but {h.size} right-hand sides")

    E = np.vstack([G.T, h[None, :]])
    f = np.zeros(d + 1)
    f[-1] = 1.0
    z, rnorm = nnls_solver.nnls(E, f)
    if rnorm <= INFEASIBLE_RESIDUAL:
        raise Infeasible(problem=problem)

    r = E @ z - f
    lam = z / -r[-1]
    u = -r[:d] / r[-1]

    if polish:
        polished = _polish(G, h, lam)
        if polished is not None:
            u, lam = polished

    tol = c.QP_KKT_TOL * max(1.0, float(np.max(np.abs(h), initial=0.0)))
    active = [int(i) for i in np.flatnonzero(np.abs(G @ u - h) <= tol)]
    residual = kkt_residual(G, h, u, lam)
    LOG.debug("LDP %s: |u|=%.6g residual=%.3e", problem, np.linalg.norm(u), residual)
    return LdpResult(u=u, multipliers=lam, active_set=active, kkt_residual=residual)
