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
from scipy import special

from marginlab.common import constants as c


def loss_values(q: np.ndarray, kind: c.LossKind) -> np.ndarray:
    """Per-example loss for margins `q`."""
    kind = c.LossKind(kind)
    if kind == c.LossKind.EXPONENTIAL:
        return np.exp(-q)
    return np.logaddexp(0.0, -q)


def loss_derivative(q: np.ndarray, kind: c.LossKind) -> np.ndarray:
    kind = c.LossKind(kind)
    if kind == c.LossKind.EXPONENTIAL:
        return -np.exp(-q)
    return -special.expit(-q)


def log_abs_derivative(q: np.ndarray, kind: c.LossKind) -> np.ndarray:
    """log|l'(q)|, finite long after l'(q) itself underflows."""
    kind = c.LossKind(kind)
    if kind == c.LossKind.EXPONENTIAL:
        return -np.asarray(q, dtype=float)
    return -np.logaddexp(0.0, q)


def log_total_loss(q: np.ndarray, kind: c.LossKind) -> float:
    """log sum_i l(q_i), finite long after the loss itself underflows."""
    kind = c.LossKind(kind)
    q = np.asarray(q, dtype=float)
    if kind == c.LossKind.EXPONENTIAL:
        return float(special.logsumexp(-q))
    # log(1 + e^-q) == e^-q to double precision once q > 40
    clipped = np.minimum(q, 40.0)
    per_example = np.where(q > 40.0, -q, np.log(np.logaddexp(0.0, -clipped)))
    return float(special.logsumexp(per_example))
