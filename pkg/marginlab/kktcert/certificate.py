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
from scipy import optimize

from marginlab.common import constants as c
from marginlab.common import exceptions
from marginlab.dm import models
from marginlab.kktcert import nnls as nnls_solver
from marginlab.netcore import network

LOG = logging.getLogger(__name__)


class NotSeparatingDirection(exceptions.MarginLabException):
    message = "Direction does not separate the data: min margin %(min_margin)s"


def margins(
    arch: models.ArchSpec, params: models.ParamVec, dataset: models.Dataset
) -> np.ndarray:
    """y_i * Phi(params; x_i) for every example."""
    return network.margins(arch, params, dataset)


def unit_margin_scale(
    arch: models.ArchSpec, direction: models.ParamVec, dataset: models.Dataset
) -> float:
    min_margin = float(np.min(margins(arch, direction, dataset)))
    if not min_margin > 0:
        raise NotSeparatingDirection(min_margin=min_margin)
    return min_margin ** (-1.0 / network.homogeneity_degree(arch))


def rescale_to_unit_margin(
    arch: models.ArchSpec, direction: models.ParamVec, dataset: models.Dataset
) -> models.ParamVec:
    return direction.scaled(unit_margin_scale(arch, direction, dataset))


def kkt_certificate(
    arch: models.ArchSpec,
    theta: models.ParamVec,
    dataset: models.Dataset,
    tolerances: models.KktTolerances | None = None,
    scale: float = 1.0,
) -> models.KktCertificate:
    """Check the KKT conditions of the max-margin problem at `theta`.

    Multipliers come from nonnegative least squares over the gradients of
    the active constraints. At ReLU kinks only the relu_zero_slope
    selection of the Clarke subdifferential is tested.
    """
    tol = tolerances or models.KktTolerances()
    theta.check(arch)
    if not np.all(np.isfinite(theta.flat)):
        raise models.InvalidConfig(
            field="theta", value="non-finite", reason="certificate needs finite point"
        )

    out, J = network.evaluate(arch, theta, dataset.X)
    m = dataset.y * out
    active = np.flatnonzero(np.abs(m - 1.0) <= tol.tau_act)

    target = theta.flat
    # Columns are the active constraint gradients y_i * grad Phi(theta; x_i)
    G = (J[active] * dataset.y[active, None]).T
    lam_active, residual = nnls_solver.nnls(G, target)
    multipliers = np.zeros(dataset.n)
    multipliers[active] = lam_active

    norm = theta.norm
    relative = residual / norm if norm > 0 else residual
    complementarity = float(np.max(multipliers * np.abs(m - 1.0), initial=0.0))

    kink_contact = False
    if arch.is_relu:
        kink_contact = network.activation_pattern(arch, theta, dataset).has_zero

    if np.any(m < 1.0 - tol.tau_feas):
        verdict = c.KktVerdict.INFEASIBLE
    elif relative <= tol.tau_stat and complementarity <= tol.tau_comp:
        verdict = c.KktVerdict.KKT
    else:
        verdict = c.KktVerdict.NOT_KKT

    LOG.debug(
        "KKT certificate: active=%s residual=%.3e verdict=%s",
        active.tolist(),
        relative,
        verdict.value,
    )

    return models.KktCertificate(
        theta=theta,
        scale=float(scale),
        margins=m,
        active_set=[int(i) for i in active],
        multipliers=multipliers,
        residual=float(residual),
        relative_residual=float(relative),
        complementarity=complementarity,
        nnls_residual=nnls_solver.optimality_residual(G, target, lam_active),
        kink_contact=kink_contact,
        verdict=verdict,
        tolerances=tol,
    )


def _fischer_burmeister(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Zero exactly when a >= 0, b >= 0 and a * b = 0."""
    return np.hypot(a, b) - a - b


def refine_limit(
    arch: models.ArchSpec,
    theta: models.ParamVec,
    dataset: models.Dataset,
    band: float = c.KKT_REFINE_BAND,
    max_move: float = c.KKT_REFINE_MAX_MOVE,
    tol: float = c.KKT_REFINE_TOL,
) -> models.ParamVec | None:
    """Polish a unit-margin flow limit onto the nearest KKT point.

    The flow only approaches its limit direction polynomially in s, so the
    numerical limit still carries an O(1/s^L) error. The KKT system

        theta = sum_i lambda_i y_i grad Phi(theta; x_i),
        lambda_i >= 0,  y_i Phi(theta; x_i) >= 1,  complementary

    is solved by least squares from the flow point, complementarity in
    Fischer-Burmeister form. Multipliers start from NNLS over the examples
    within `band` of the smallest margin. None when no solution lies within
    `max_move` * |theta|, when the point sits on a ReLU kink or when the
    solution changes the activation pattern.
    """
    theta.check(arch)
    if arch.is_relu and network.activation_pattern(arch, theta, dataset).has_zero:
        LOG.debug("Limit touches a ReLU kink, keeping the flow point")
        return None

    size = theta.flat.size

    def constraint_gradients(flat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        params = models.ParamVec.from_flat(arch, flat)
        out, J = network.evaluate(arch, params, dataset.X)
        return dataset.y * out, J * dataset.y[:, None]

    def residual(z: np.ndarray) -> np.ndarray:
        flat, lam = z[:size], z[size:]
        q, G = constraint_gradients(flat)
        return np.concatenate(
            [flat - G.T @ lam, _fischer_burmeister(lam, q - 1.0)]
        )

    q0, G0 = constraint_gradients(theta.flat)
    support = np.flatnonzero(q0 <= float(np.min(q0)) + band)
    lam0 = np.zeros(dataset.n)
    lam0[support], _ = nnls_solver.nnls(G0[support].T, theta.flat)
    solution = optimize.least_squares(
        residual,
        np.concatenate([theta.flat, lam0]),
        jac="3-point",
        method="trf",
        xtol=1e-15,
        ftol=1e-15,
        gtol=1e-15,
        max_nfev=c.KKT_REFINE_MAX_NFEV,
    )
    refined = models.ParamVec.from_flat(arch, solution.x[:size])
    error = float(np.linalg.norm(solution.fun))
    move = float(np.linalg.norm(refined.flat - theta.flat))
    LOG.debug(
        "Limit refinement: support=%s residual=%.3e move=%.3e",
        support.tolist(),
        error,
        move,
    )

    if error > tol * max(1.0, theta.norm) or move > max_move * theta.norm:
        LOG.info(
            "No KKT point near the flow limit (residual %.3e, move %.3e)",
            error,
            move,
        )
        return None
    if np.min(margins(arch, refined, dataset)) < 1.0 - c.KKT_TAU_FEAS:
        LOG.info("Refined limit leaves the feasible set, keeping the flow point")
        return None
    if arch.is_relu and any(
        not np.array_equal(a, b)
        for a, b in zip(
            network.strict_signs(arch, theta, dataset.X),
            network.strict_signs(arch, refined, dataset.X),
        )
    ):
        LOG.info("Refined limit changes the activation pattern")
        return None
    return refined
