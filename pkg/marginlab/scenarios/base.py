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
import json
import logging
import typing as tp

from marginlab.common import constants as c
from marginlab.common import exceptions
from marginlab.common import utils
from marginlab.dm import models
from marginlab.optprobe import probe

LOG = logging.getLogger(__name__)


class UnknownScenario(exceptions.MarginLabException):
    message = "Unknown scenario %(scenario)s"


class EpsOutOfRange(exceptions.MarginLabException):
    message = "eps=%(eps)s is outside %(interval)s for %(scenario)s"


class PreconditionFailed(exceptions.MarginLabException):
    message = "Scenario %(scenario)s: %(reason)s"


class ForbiddenOverride(exceptions.MarginLabException):
    message = "Override %(key)s is not allowed: %(reason)s"


FLOW_OVERRIDES = {
    "s_budget": float,
    "loss_target": float,
    "direction_tolerance": float,
    "direction_window": int,
    "checkpoint_stride": float,
}
PROBE_OVERRIDES = {
    "witness_eps": float,
    "probe_eps": float,
    "probe_budget": int,
    "seed": int,
}
ALLOWED_OVERRIDES = frozenset(FLOW_OVERRIDES) | frozenset(PROBE_OVERRIDES) | {
    "loss_kinds"
}


@dataclasses.dataclass
class Expectations(models.SimpleViewMixin):
    kkt: c.KktVerdict = c.KktVerdict.KKT
    local: c.LocalExpectation | None = None
    global_verdict: c.GlobalExpectation | None = None
    # 1-based layer -> verdict
    per_layer: dict[int, c.LayerVerdict] = dataclasses.field(default_factory=dict)
    requires_nonzero_neurons: bool = False

    def __post_init__(self) -> None:
        self.kkt = c.KktVerdict(self.kkt)
        if self.local is not None:
            self.local = c.LocalExpectation(self.local)
        if self.global_verdict is not None:
            self.global_verdict = c.GlobalExpectation(self.global_verdict)
        self.per_layer = {
            int(l): c.LayerVerdict(v) for l, v in self.per_layer.items()
        }


@dataclasses.dataclass
class Scenario:
    """A construction with its expected limit and verdicts."""

    id: str
    title: str
    arch: models.ArchSpec
    dataset: models.Dataset
    init: models.ParamVec
    expected: Expectations
    loss_kinds: tuple[c.LossKind, ...] = (
        c.LossKind.EXPONENTIAL,
        c.LossKind.LOGISTIC,
    )
    flow: dict[str, tp.Any] = dataclasses.field(default_factory=dict)
    expected_theta: models.ParamVec | None = None
    limit_tol: float = c.SCENARIO_LIMIT_TOL
    witness_family: probe.WitnessFamily | None = None
    global_candidate: tp.Callable[[models.ParamVec], models.ParamVec] | None = None
    global_reference: c.ReferenceProblem | None = None
    # Activation pattern checks run on this network when set
    pattern_arch: models.ArchSpec | None = None
    precondition: tp.Callable[["Scenario"], None] | None = None
    witness_eps: float = c.WITNESS_EPS
    probe_eps: float = c.PROBE_EPS
    probe_budget: int = c.PROBE_BUDGET
    seed: int | None = None
    builtin: bool = True

    def check(self) -> "Scenario":
        try:
            self.init.check(self.arch)
        except models.DimensionMismatch as e:
            raise PreconditionFailed(scenario=self.id, reason=str(e))
        if self.dataset.dim != self.arch.input_dim:
            raise PreconditionFailed(
                scenario=self.id,
                reason=f"inputs of size {self.dataset.dim}, network takes "
                f"{self.arch.input_dim}",
            )
        if self.expected_theta is not None:
            self.expected_theta.check(self.arch)
        if self.precondition is not None:
            self.precondition(self)
        return self

    def flow_config(self, loss_kind: c.LossKind, **kwargs: tp.Any) -> models.FlowConfig:
        params = dict(self.flow)
        params.update(kwargs)
        return models.FlowConfig(loss_kind=c.LossKind(loss_kind), **params)

    def probe_config(self, seed: int | None = None) -> models.ProbeConfig:
        if seed is None:
            seed = self.seed if self.seed is not None else utils.resolve_seed()
        return models.ProbeConfig(
            eps=self.probe_eps, budget=self.probe_budget, seed=seed
        )

    def witness(self, eps: float) -> models.ParamVec:
        family = self.witness_family
        if family is None:
            raise EpsOutOfRange(
                eps=eps, interval="(no witness family)", scenario=self.id
            )
        if not family.contains(eps):
            raise EpsOutOfRange(
                eps=eps,
                interval=f"({family.low}, {family.high})",
                scenario=self.id,
            )
        return family.build(eps)

    def with_overrides(self, overrides: tp.Mapping[str, tp.Any]) -> "Scenario":
        flow = dict(self.flow)
        changes: dict[str, tp.Any] = {}
        for key, value in overrides.items():
            if key not in ALLOWED_OVERRIDES:
                raise ForbiddenOverride(
                    key=key,
                    reason="only tolerances, budgets, eps and seeds can change",
                )
            try:
                if key in FLOW_OVERRIDES:
                    flow[key] = FLOW_OVERRIDES[key](value)
                elif key in PROBE_OVERRIDES:
                    changes[key] = PROBE_OVERRIDES[key](value)
                else:
                    kinds = value.split(",") if isinstance(value, str) else value
                    changes[key] = tuple(c.LossKind(k) for k in kinds)
            except (TypeError, ValueError) as e:
                raise ForbiddenOverride(key=key, reason=f"bad value {value!r}: {e}")
        return dataclasses.replace(self, flow=flow, **changes)


def export_scenario(scenario: Scenario) -> dict[str, tp.Any]:
    """JSON document of a scenario; callables are kept only for builtins."""
    return models.to_simple(
        {
            "id": scenario.id,
            "title": scenario.title,
            "builtin": scenario.builtin,
            "arch": scenario.arch,
            "dataset": scenario.dataset,
            "init": scenario.init,
            "expected": scenario.expected,
            "expected_theta": scenario.expected_theta,
            "limit_tol": scenario.limit_tol,
            "loss_kinds": list(scenario.loss_kinds),
            "flow": scenario.flow,
            "global_reference": scenario.global_reference,
            "witness_eps": scenario.witness_eps,
            "probe_eps": scenario.probe_eps,
            "probe_budget": scenario.probe_budget,
            "seed": scenario.seed,
        }
    )


def _field(
    doc: tp.Mapping[str, tp.Any],
    name: str,
    source: str,
    parse: tp.Callable[[tp.Any], tp.Any],
) -> tp.Any:
    try:
        return parse(doc[name])
    except KeyError:
        raise exceptions.MalformedDocument(
            source=source, field=name, reason="missing"
        )
    except exceptions.MarginLabException as e:
        raise exceptions.MalformedDocument(source=source, field=name, reason=str(e))
    except (TypeError, ValueError, AttributeError) as e:
        raise exceptions.MalformedDocument(
            source=source, field=name, reason=f"{type(e).__name__}: {e}"
        )


def _optional(
    doc: tp.Mapping[str, tp.Any],
    name: str,
    source: str,
    parse: tp.Callable[[tp.Any], tp.Any],
    default: tp.Any = None,
) -> tp.Any:
    if doc.get(name) is None:
        return default
    return _field(doc, name, source, parse)


def scenario_from_document(
    doc: tp.Mapping[str, tp.Any], source: str = "<document>"
) -> Scenario:
    if not isinstance(doc, dict):
        raise exceptions.MalformedDocument(
            source=source, field="<root>", reason="expected an object"
        )
    scenario_id = _field(doc, "id", source, str)
    if doc.get("builtin"):
        # Imported lazily, the catalog builds on this module
        from marginlab.scenarios import catalog

        return catalog.build(scenario_id)

    scenario = Scenario(
        id=scenario_id,
        title=_optional(doc, "title", source, str, default=scenario_id),
        arch=_field(
            doc, "arch", source, lambda v: models.ArchSpec.restore_from_simple_view(**v)
        ),
        dataset=_field(
            doc,
            "dataset",
            source,
            lambda v: models.Dataset.restore_from_simple_view(**v),
        ),
        init=_field(
            doc, "init", source, lambda v: models.ParamVec.restore_from_simple_view(**v)
        ),
        expected=_optional(
            doc,
            "expected",
            source,
            lambda v: Expectations.restore_from_simple_view(**v),
            default=Expectations(),
        ),
        expected_theta=_optional(
            doc,
            "expected_theta",
            source,
            lambda v: models.ParamVec.restore_from_simple_view(**v),
        ),
        limit_tol=_optional(
            doc, "limit_tol", source, float, default=c.SCENARIO_LIMIT_TOL
        ),
        loss_kinds=_optional(
            doc,
            "loss_kinds",
            source,
            lambda v: tuple(c.LossKind(k) for k in v),
            default=(c.LossKind.EXPONENTIAL, c.LossKind.LOGISTIC),
        ),
        flow=_optional(doc, "flow", source, dict, default={}),
        global_reference=_optional(
            doc, "global_reference", source, c.ReferenceProblem
        ),
        witness_eps=_optional(doc, "witness_eps", source, float, default=c.WITNESS_EPS),
        probe_eps=_optional(doc, "probe_eps", source, float, default=c.PROBE_EPS),
        probe_budget=_optional(
            doc, "probe_budget", source, int, default=c.PROBE_BUDGET
        ),
        seed=_optional(doc, "seed", source, int),
        builtin=False,
    )
    # Unknown flow keys surface as a malformed field, not at run time
    _optional(
        doc, "flow", source, lambda v: scenario.flow_config(c.LossKind.EXPONENTIAL)
    )
    try:
        return scenario.check()
    except PreconditionFailed as e:
        raise exceptions.MalformedDocument(source=source, field="init", reason=str(e))


def load_scenario_file(path: str) -> Scenario:
    try:
        doc = utils.load_json(path)
    except OSError as e:
        raise exceptions.MalformedDocument(source=path, field="<file>", reason=str(e))
    except json.JSONDecodeError as e:
        raise exceptions.MalformedDocument(
            source=path, field="<json>", reason=f"line {e.lineno}: {e.msg}"
        )
    LOG.info("Loaded scenario document %s", path)
    return scenario_from_document(doc, source=path)
