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

from marginlab.common import utils
from marginlab.dm import models

LOG = logging.getLogger(__name__)

INIT_VARIANCE = 0.5


def qualifying_frequency(
    dataset: models.Dataset, samples: int, seed: int | None = None
) -> dict[str, float | int]:
    """Share of random two-neuron initialisations with the pattern that
    leads to the non-optimal limit.

    Draws w1, w2, v ~ N(0, I/2) and counts draws where one neuron is active
    on every input with a positive output weight while the other neuron is
    inactive on every input.
    """
    if samples < 1:
        raise models.InvalidConfig(
            field="samples", value=samples, reason="must be >= 1"
        )
    seed = utils.resolve_seed(seed)
    rng = np.random.default_rng(seed)
    std = np.sqrt(INIT_VARIANCE)
    W = rng.normal(scale=std, size=(samples, 2, dataset.dim))
    v = rng.normal(scale=std, size=(samples, 2))

    # samples x neurons x inputs
    pre = np.einsum("snd,id->sni", W, dataset.X)
    active = np.all(pre > 0, axis=2)
    inactive = np.all(pre < 0, axis=2)
    hits = (active[:, 0] & inactive[:, 1] & (v[:, 0] > 0)) | (
        active[:, 1] & inactive[:, 0] & (v[:, 1] > 0)
    )
    count = int(np.sum(hits))
    LOG.info("Qualifying initialisations: %d of %d", count, samples)
    return {
        "samples": samples,
        "seed": seed,
        "hits": count,
        "frequency": count / samples,
    }
