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
from marginlab.convexref import qp
from marginlab.dm import models
from marginlab.netcore import network
from marginlab.optprobe import probe
from marginlab.scenarios import base

LOG = logging.getLogger(__name__)

LIN = c.Activation.LINEAR
RELU = c.Activation.RELU
LV = c.LayerVerdict

CONV_INPUT = (4.0, 1.0 / np.sqrt(2.0), -4.0, 1.0 / np.sqrt(2.0))
FC_LIN_DEEP_SEED = 20240601


def _fail(scenario: base.Scenario, reason: str) -> tp.NoReturn:
    raise base.PreconditionFailed(scenario=scenario.id, reason=reason)


def _positive_margins(scenario: base.Scenario) -> None:
    margins = network.margins(scenario.arch, scenario.init, scenario.dataset)
    if np.min(margins) <= 0:
        _fail(scenario, f"initial margins {margins.tolist()} not all positive")


def _pre_activations(scenario: base.Scenario) -> np.ndarray:
    W = network.materialize(scenario.arch, scenario.init)[0]
    return scenario.dataset.X @ W.T


# Two-neuron ReLU network on (1, b) and (-1, b)


def _fc_relu_d2_precondition(scenario: base.Scenario) -> None:
    pre = _pre_activations(scenario)
    v = scenario.init.layers[1]
    if not (np.all(pre[:, 0] > 0) and np.all(pre[:, 1] < 0) and v[0] > 0):
        _fail(
            scenario,
            "neuron 1 must be active on both inputs with v1 > 0 and "
            "neuron 2 inactive on both",
        )


def _aligned_candidate(dataset: models.Dataset) -> models.ParamVec:
    """Neuron i aligned with x_i, balanced to unit margin."""
    norms = np.linalg.norm(dataset.X, axis=1)
    w = dataset.X / norms[:, None] ** 1.5
    return models.ParamVec.of(w.reshape(-1), norms**-0.5)


def fc_relu_d2_family(b: float) -> base.Scenario:
    """Two-neuron ReLU construction on the inputs (1, b) and (-1, b).

    The limit has squared norm 2/b while aligning one neuron with each
    input costs 4/sqrt(1 + b^2).
    """
    if not b > 0:
        raise models.InvalidConfig(field="b", value=b, reason="must be > 0")
    scale = b**-0.5
    dataset = models.Dataset.from_pairs([((1.0, b), 1), ((-1.0, b), 1)])
    scenario = base.Scenario(
        id="FC_RELU_D2" if b == 0.25 else f"FC_RELU_D2_B{b:g}",
        title="Two-neuron ReLU network converging to a non-optimal KKT point",
        arch=models.ArchSpec.fully_connected((2, 2, 1), RELU),
        dataset=dataset,
        init=models.ParamVec.of((0, 1, 0, -1), (1, 1)),
        expected=base.Expectations(
            local=c.LocalExpectation.NOT_LOCAL,
            global_verdict=c.GlobalExpectation.NOT_GLOBAL,
        ),
        expected_theta=models.ParamVec.of((0, scale, 0, 0), (scale, 0)),
        global_candidate=lambda theta: _aligned_candidate(dataset),
        precondition=_fc_relu_d2_precondition,
    )
    if b == 0.25:
        scenario.witness_family = probe.WitnessFamily(
            build=lambda e: models.ParamVec.of(
                (e / 2, 2 - 2 * e, -np.sqrt(2 * e), 0), (2, np.sqrt(2 * e))
            ),
            low=0.0,
            high=0.5,
        )
    return scenario


def fc_lin_deep() -> base.Scenario:
    rng = np.random.default_rng(FC_LIN_DEEP_SEED)
    while True:
        X = rng.standard_normal((4, 3))
        u = rng.standard_normal(3)
        score = X @ u / np.linalg.norm(u)
        if np.min(np.abs(score)) >= 0.2:
            break
    dataset = models.Dataset(X, np.sign(score))
    arch = models.ArchSpec.fully_connected((3, 3, 2, 1), LIN)
    while True:
        init = models.ParamVec.of(
            *(0.7 * rng.standard_normal(p) for p in arch.param_counts)
        )
        if np.min(network.margins(arch, init, dataset)) > 0:
            break

    def separable(scenario: base.Scenario) -> None:
        try:
            qp.solve_linear_maxmargin(scenario.dataset)
        except ldp.Infeasible:
            _fail(scenario, "data is not linearly separable")
        _positive_margins(scenario)

    return base.Scenario(
        id="FC_LIN_DEEP",
        title="Deep fully connected linear network, KKT points are global",
        arch=arch,
        dataset=dataset,
        init=init,
        expected=base.Expectations(
            global_verdict=c.GlobalExpectation.GLOBAL_EXPECTED,
            per_layer={1: LV.GLOBAL, 2: LV.GLOBAL, 3: LV.GLOBAL},
        ),
        global_reference=c.ReferenceProblem.LINEAR_DEEP,
        precondition=separable,
    )


def diag_d2() -> base.Scenario:
    return base.Scenario(
        id="DIAG_D2",
        title="Depth-2 diagonal linear network, KKT point not a local optimum",
        arch=models.ArchSpec.diagonal(2, 2),
        dataset=models.Dataset.from_pairs([((1.0, 2.0), 1)]),
        init=models.ParamVec.of((1, 0), (1, 0)),
        expected=base.Expectations(
            local=c.LocalExpectation.NOT_LOCAL,
            global_verdict=c.GlobalExpectation.NOT_GLOBAL,
            per_layer={1: LV.GLOBAL, 2: LV.GLOBAL},
        ),
        expected_theta=models.ParamVec.of((1, 0), (1, 0)),
        witness_family=probe.WitnessFamily(
            build=lambda e: models.ParamVec.of(
                *[(np.sqrt(1 - e), np.sqrt(e / 2))] * 2
            ),
            low=0.0,
            high=1.0,
        ),
        global_candidate=lambda theta: models.ParamVec.of(
            *[(0.0, 1.0 / np.sqrt(2.0))] * 2
        ),
    )


def noshare_nonzero_w() -> base.Scenario:
    return base.Scenario(
        id="NOSHARE_NONZERO_W",
        title="No-share linear network with nonzero limit weights is global",
        arch=models.ArchSpec.diagonal(2, 2),
        dataset=models.Dataset.from_pairs([((1.0, 0.0), 1), ((0.0, 1.0), 1)]),
        init=models.ParamVec.of((1, 0.5), (1, 0.5)),
        expected=base.Expectations(
            local=c.LocalExpectation.LOCAL_EXPECTED,
            global_verdict=c.GlobalExpectation.GLOBAL_EXPECTED,
            requires_nonzero_neurons=True,
        ),
        expected_theta=models.ParamVec.of((1, 1), (1, 1)),
        global_reference=c.ReferenceProblem.GROUP,
    )


def fc_relu_4n() -> base.Scenario:
    X = np.array([(0.0, 1.0), (1.0, 0.0), (0.0, -1.0), (-1.0, 0.0)])

    def rotated(e: float) -> models.ParamVec:
        # Each neuron turns towards the next input, output weights stay 1
        w = (1 - e) * X + e * np.roll(X, -1, axis=0)
        return models.ParamVec.of(w.reshape(-1), np.ones(4))

    return base.Scenario(
        id="FC_RELU_4N",
        title="Four-neuron ReLU network, KKT point at a kink",
        arch=models.ArchSpec.fully_connected((2, 4, 1), RELU),
        dataset=models.Dataset(X, np.ones(4)),
        init=models.ParamVec.of(2 * X.reshape(-1), 2 * np.ones(4)),
        expected=base.Expectations(
            local=c.LocalExpectation.NOT_LOCAL,
            global_verdict=c.GlobalExpectation.NOT_GLOBAL,
            per_layer={1: LV.NOT_LOCAL, 2: LV.GLOBAL},
        ),
        expected_theta=models.ParamVec.of(X.reshape(-1), np.ones(4)),
        witness_family=probe.WitnessFamily(
            build=rotated, low=0.0, high=1.0
        ),
    )


def relu_local_not_global() -> base.Scenario:
    dataset = models.Dataset.from_pairs(
        [((1.0, 0.25), 1), ((-1.0, 0.25), 1), ((0.0, -1.0), 1)]
    )

    def candidate(theta: models.ParamVec) -> models.ParamVec:
        alpha, beta = theta.layers[1]
        x1 = dataset.X[0]
        w1 = x1 / (alpha * np.linalg.norm(x1))
        w2 = np.array([-1.25, -1.0]) / beta
        return models.ParamVec.of(np.concatenate([w1, w2]), (alpha, beta))

    def precondition(scenario: base.Scenario) -> None:
        signs = np.sign(_pre_activations(scenario))
        if not (
            np.array_equal(signs[:, 0], (1, 1, -1))
            and np.array_equal(signs[:, 1], (-1, -1, 1))
            and np.all(scenario.init.layers[1] > 0)
        ):
            _fail(scenario, "unexpected initial activation pattern")

    return base.Scenario(
        id="RELU_LOCAL_NOT_GLOBAL",
        title="ReLU network converging to a local but not global optimum",
        arch=models.ArchSpec.fully_connected((2, 2, 1), RELU),
        dataset=dataset,
        init=models.ParamVec.of((0, 3, 0, -2), (3, 2)),
        expected=base.Expectations(
            local=c.LocalExpectation.LOCAL_EXPECTED,
            global_verdict=c.GlobalExpectation.NOT_GLOBAL,
            per_layer={1: LV.LOCAL, 2: LV.GLOBAL},
        ),
        expected_theta=models.ParamVec.of((0, 2, 0, -1), (2, 1)),
        global_candidate=candidate,
        precondition=precondition,
        probe_budget=10000,
        seed=7,
    )


def _conv_witness(e: float) -> models.ParamVec:
    r = np.sqrt(e)
    h = 1.0 / np.sqrt(2.0)
    return models.ParamVec.of((r, 1 - e), (h + r / 2, h - r / 2))


def _conv(
    scenario_id: str, title: str, activation: c.Activation
) -> base.Scenario:
    h = 1.0 / np.sqrt(2.0)
    arch = models.ArchSpec.patch_conv(2, 2, activation)
    theta = models.ParamVec.of((0, 1), (h, h))
    return base.Scenario(
        id=scenario_id,
        title=title,
        arch=arch,
        dataset=models.Dataset.from_pairs([(CONV_INPUT, 1)]),
        init=theta,
        expected=base.Expectations(
            local=c.LocalExpectation.NOT_LOCAL,
            global_verdict=(
                c.GlobalExpectation.NOT_GLOBAL if activation == LIN else None
            ),
            per_layer={
                1: LV.GLOBAL if activation == LIN else LV.LOCAL,
                2: LV.GLOBAL,
            },
        ),
        expected_theta=theta,
        witness_family=probe.WitnessFamily(
            build=_conv_witness, low=0.0, high=0.5
        ),
        pattern_arch=arch.with_activation(RELU),
    )


def conv_d2() -> base.Scenario:
    return _conv(
        "CONV_D2", "Shared-filter network, KKT point not a local optimum", LIN
    )


def per_layer_relu() -> base.Scenario:
    return _conv(
        "PER_LAYER_RELU", "Shared-filter ReLU network, per-layer optimality", RELU
    )


def diag_deep_m3() -> base.Scenario:
    def witness(e: float) -> models.ParamVec:
        w = (((1 + e) / 2) ** (1 / 3), ((1 - e) / 2) ** (1 / 3))
        return models.ParamVec.of(w, w, w)

    limit = 2.0 ** (-1.0 / 3.0)
    return base.Scenario(
        id="DIAG_DEEP_M3",
        title="Depth-3 diagonal linear network, KKT point not a local optimum",
        arch=models.ArchSpec.diagonal(2, 3),
        dataset=models.Dataset.from_pairs([((1.0, 1.0), 1)]),
        init=models.ParamVec.of((1, 1), (1, 1), (1, 1)),
        expected=base.Expectations(
            local=c.LocalExpectation.NOT_LOCAL,
            global_verdict=c.GlobalExpectation.NOT_GLOBAL,
            per_layer={1: LV.GLOBAL, 2: LV.GLOBAL, 3: LV.GLOBAL},
        ),
        expected_theta=models.ParamVec.of(*[(limit, limit)] * 3),
        witness_family=probe.WitnessFamily(
            build=witness, low=0.0, high=0.5
        ),
    )


def per_layer_lin() -> base.Scenario:
    h = 1.0 / np.sqrt(2.0)
    b = 2.0 ** (-1.0 / 3.0)
    return base.Scenario(
        id="PER_LAYER_LIN",
        title="Depth-3 shared-filter linear network, every layer optimal",
        arch=models.ArchSpec.patch_conv(2, 2, LIN, hidden_diagonal_layers=1),
        dataset=models.Dataset.from_pairs([(CONV_INPUT, 1)]),
        init=models.ParamVec.of((0, 1), (h, h), (h, h)),
        expected=base.Expectations(
            per_layer={1: LV.GLOBAL, 2: LV.GLOBAL, 3: LV.GLOBAL},
        ),
        expected_theta=models.ParamVec.of((0, np.sqrt(2.0) * b), (b, b), (b, b)),
    )


_BUILDERS: dict[str, tp.Callable[[], base.Scenario]] = {
    "FC_LIN_DEEP": fc_lin_deep,
    "FC_RELU_D2": lambda: fc_relu_d2_family(0.25),
    "DIAG_D2": diag_d2,
    "NOSHARE_NONZERO_W": noshare_nonzero_w,
    "FC_RELU_4N": fc_relu_4n,
    "RELU_LOCAL_NOT_GLOBAL": relu_local_not_global,
    "CONV_D2": conv_d2,
    "DIAG_DEEP_M3": diag_deep_m3,
    "PER_LAYER_LIN": per_layer_lin,
    "PER_LAYER_RELU": per_layer_relu,
}


def catalog() -> list[str]:
    return list(_BUILDERS)


def build(
    scenario_id: str, overrides: tp.Mapping[str, tp.Any] | None = None
) -> base.Scenario:
    try:
        builder = _BUILDERS[scenario_id]
    except KeyError:
        raise base.UnknownScenario(scenario=scenario_id)
    scenario = builder().check()
    if overrides:
        scenario = scenario.with_overrides(overrides)
    return scenario


def witness(scenario_id: str, eps: float) -> models.ParamVec:
    return build(scenario_id).witness(eps)
