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
import numpy as np
from scipy import linalg

from marginlab.common import exceptions


class NnlsIterationLimit(exceptions.MarginLabException):
    message = "NNLS did not converge in %(maxiter)s inner iterations"


def _passive_solve(A: np.ndarray, b: np.ndarray, P: np.ndarray) -> np.ndarray:
    s = np.zeros(A.shape[1])
    if P.any():
        s[P] = linalg.lstsq(A[:, P], b, check_finite=False)[0]
    return s


def nnls(
    A: np.ndarray,
    b: np.ndarray,
    maxiter: int | None = None,
    tol: float | None = None,
) -> tuple[np.ndarray, float]:
    """
    Solve ``argmin_x || Ax - b ||_2`` for ``x >= 0``.

    Active-set method of Lawson and Hanson in the form of Bro and de Jong.
    The passive-set subproblem goes through a least-squares solve so that
    nearly dependent columns do not break it.

    Parameters
    ----------
    A : (m, n) ndarray
        Coefficient array.
    b : (m,) ndarray
        Right-hand side vector.
    maxiter : int, optional
        Inner iteration limit, ``10 * n + 50`` by default.
    tol : float, optional
        Threshold for the projected residual, scale-aware by default.

    Returns
    -------
    x : ndarray
        Solution vector.
    rnorm : float
        The 2-norm of the residual, ``|| Ax - b ||_2``.
    """
    A = np.asarray_chkfinite(A, dtype=float)
    b = np.asarray_chkfinite(b, dtype=float).reshape(-1)
    if A.ndim != 2 or A.shape[0] != b.size:
        raise ValueError(f"Incompatible shapes {A.shape} and {b.shape}")

    m, n = A.shape
    if n == 0:
        return np.zeros(0), float(np.linalg.norm(b))

    if maxiter is None:
        maxiter = 10 * n + 50
    if tol is None:
        scale = max(1.0, float(np.linalg.norm(A, 1)) * float(np.linalg.norm(b)))
        tol = 10 * max(m, n) * np.spacing(1.0) * scale

    x = np.zeros(n)

    # Passive (free) variables
    P = np.zeros(n, dtype=bool)

    # Projected residual
    resid = A.T @ b

    iteration = 0
    outer = 0
    while (not P.all()) and (resid[~P] > tol).any():
        outer += 1
        if outer > maxiter:
            raise NnlsIterationLimit(maxiter=maxiter)
        # Most violated coordinate enters the passive set
        resid[P] = -np.inf
        P[int(np.argmax(resid))] = True

        s = _passive_solve(A, b, P)

        while P.any() and s[P].min() <= 0.0:
            if iteration >= maxiter:
                raise NnlsIterationLimit(maxiter=maxiter)
            blocking = (s <= 0.0) & P
            gap = x[blocking] - s[blocking]
            ratios = np.divide(
                x[blocking], gap, out=np.zeros_like(gap), where=gap > 0
            )
            x += float(np.min(ratios)) * (s - x)
            P[P & (x <= tol)] = False
            s = _passive_solve(A, b, P)
            iteration += 1

        x = s
        resid = A.T @ (b - A @ x)

    return x, float(np.linalg.norm(A @ x - b))


def optimality_residual(A: np.ndarray, b: np.ndarray, x: np.ndarray) -> float:
    """Worst violation of the NNLS optimality conditions at `x`.

    With g = A^T (A x - b): g = 0 where x > 0 and g >= 0 where x = 0.
    """
    if x.size == 0:
        return 0.0
    g = A.T @ (A @ x - b)
    positive = x > 0
    worst = 0.0
    if positive.any():
        worst = max(worst, float(np.max(np.abs(g[positive]))))
    if (~positive).any():
        worst = max(worst, float(np.max(np.maximum(-g[~positive], 0.0))))
    return worst
