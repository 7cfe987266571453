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
import functools
import typing as tp

import numpy as np

from marginlab.dm import models


@functools.lru_cache(maxsize=256)
def neuron_maps(
    arch: models.ArchSpec,
) -> tuple[tuple[int, tuple[int, ...], tuple[int, ...]], ...]:
    """(hidden layer, incoming params, outgoing params) per hidden neuron.

    Parameter indices are local to the layer feeding the neuron and the
    layer reading it.
    """
    maps = []
    for j in range(arch.depth - 1):
        for i in range(arch.dims[j + 1]):
            incoming = tuple(sorted({k for r, _, k in arch.layers[j] if r == i}))
            outgoing = tuple(
                sorted({k for _, col, k in arch.layers[j + 1] if col == i})
            )
            maps.append((j, incoming, outgoing))
    return tuple(maps)


def neuron_balance_applies(arch: models.ArchSpec) -> bool:
    """Per-neuron conservation holds for dense nets and depth-2 no-share nets."""
    if arch.depth == 2 and arch.no_share(0) and arch.no_share(1):
        return True
    return all(arch.is_fully_connected(l) for l in range(arch.depth))


def layer_balance(params: models.ParamVec) -> np.ndarray:
    sq = params.layer_sq_norms()
    return sq[:-1] - sq[1:]


def _neuron_sq_norms(
    arch: models.ArchSpec, params: models.ParamVec
) -> tuple[np.ndarray, np.ndarray]:
    incoming, outgoing = [], []
    for j, in_keys, out_keys in neuron_maps(arch):
        u_in = params.layers[j][list(in_keys)]
        u_out = params.layers[j + 1][list(out_keys)]
        incoming.append(float(u_in @ u_in))
        outgoing.append(float(u_out @ u_out))
    return np.array(incoming), np.array(outgoing)


def neuron_balance(arch: models.ArchSpec, params: models.ParamVec) -> np.ndarray:
    if not neuron_balance_applies(arch):
        return np.zeros(0)
    incoming, outgoing = _neuron_sq_norms(arch, params)
    return incoming - outgoing


def neuron_gap(arch: models.ArchSpec, params: models.ParamVec) -> np.ndarray:
    """| ||incoming|| - ||outgoing|| | per hidden neuron."""
    incoming, outgoing = _neuron_sq_norms(arch, params)
    return np.abs(np.sqrt(incoming) - np.sqrt(outgoing))


def _max_drift(values: tp.Sequence[np.ndarray]) -> list[float]:
    stacked = np.vstack(values)
    return [float(v) for v in np.max(np.abs(stacked - stacked[0]), axis=0)]


def balance_report(
    traj: models.Trajectory, arch: models.ArchSpec
) -> models.BalanceReport:
    checkpoints = traj.checkpoints
    layer_drift = _max_drift([cp.layer_balance for cp in checkpoints])

    if not neuron_balance_applies(arch):
        return models.BalanceReport(layer_drift=layer_drift)

    neuron_drift = _max_drift([cp.neuron_balance for cp in checkpoints])

    final = traj.final
    limit_gap = None
    if final.norm > 0:
        unit_margin = final.min_margin / final.norm**arch.depth
        if unit_margin > 0:
            scale = unit_margin ** (-1.0 / arch.depth)
            theta = models.ParamVec.from_flat(arch, scale * final.direction)
            limit_gap = [float(v) for v in neuron_gap(arch, theta)]

    return models.BalanceReport(
        layer_drift=layer_drift,
        neuron_drift=neuron_drift,
        limit_gap=limit_gap,
    )
