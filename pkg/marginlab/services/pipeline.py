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
import time
import typing as tp

import numpy as np

from marginlab.common import constants as c
from marginlab.convexref import qp
from marginlab.dm import models
from marginlab.flowsim import balance
from marginlab.flowsim import integrator
from marginlab.kktcert import certificate
from marginlab.netcore import network
from marginlab.optprobe import probe
from marginlab.scenarios import base

LOG = logging.getLogger(__name__)

_LOCAL_MATCH = {
    c.LocalExpectation.NOT_LOCAL: c.WitnessVerdict.NOT_LOCAL,
    c.LocalExpectation.LOCAL_EXPECTED: c.WitnessVerdict.NO_WITNESS_FOUND,
}
_GLOBAL_MATCH = {
    c.GlobalExpectation.NOT_GLOBAL: c.GlobalVerdict.NOT_GLOBAL,
    c.GlobalExpectation.GLOBAL_EXPECTED: c.GlobalVerdict.GLOBAL,
}


def probe_point(
    scenario: base.Scenario, theta: models.ParamVec
) -> tuple[models.ParamVec, str, float | None]:
    """The analytic limit when the flow lands on it, else the flow point."""
    expected = scenario.expected_theta
    if expected is None:
        return theta, "flow", None
    deviation = float(np.max(np.abs(theta.flat - expected.flat)))
    if deviation <= scenario.limit_tol:
        return expected, "analytic", deviation
    LOG.warning(
        "%s: flow limit is %.3g away from the analytic one, probing the flow point",
        scenario.id,
        deviation,
    )
    return theta, "flow", deviation


def nonzero_neurons(
    arch: models.ArchSpec,
    theta: models.ParamVec,
    rel: float = c.NONZERO_NEURON_REL,
) -> bool:
    """Every hidden neuron has a nonzero incoming weight vector."""
    for l, W in enumerate(network.materialize(arch, theta)[:-1]):
        norms = np.linalg.norm(W, axis=1)
        if np.any(norms <= rel * theta.norm):
            LOG.info("Layer %d has a zero neuron: %s", l + 1, norms.tolist())
            return False
    return True


def flow_limit(
    scenario: base.Scenario,
    loss_kind: c.LossKind,
    csv_path: str | None = None,
    refine: bool = True,
) -> tuple[models.Trajectory, models.ParamVec, float]:
    """Integrate, take the direction limit and rescale it to unit margin.

    With `refine` the unit-margin point is polished onto the KKT point of
    its support set when one lies next to it.
    """
    traj = integrator.integrate(
        scenario.arch, scenario.init, scenario.dataset, scenario.flow_config(loss_kind)
    )
    if csv_path:
        traj.to_csv(csv_path)
    direction = integrator.direction_limit(traj)
    scale = certificate.unit_margin_scale(scenario.arch, direction, scenario.dataset)
    theta = direction.scaled(scale)
    if refine:
        refined = certificate.refine_limit(scenario.arch, theta, scenario.dataset)
        if refined is not None:
            LOG.info(
                "%s: refined limit moved by %.3g",
                scenario.id,
                float(np.linalg.norm(refined.flat - theta.flat)),
            )
            theta = refined
    return traj, theta, scale


def _layer_restricted(
    theta: models.ParamVec, report: models.WitnessReport, layer: int
) -> bool:
    if report.verdict != c.WitnessVerdict.NOT_LOCAL or report.theta_prime is None:
        return False
    return all(
        np.array_equal(a, b)
        for l, (a, b) in enumerate(zip(theta.layers, report.theta_prime.layers))
        if l != layer - 1
    )


def _best_witness(
    witnesses: list[models.WitnessReport],
) -> models.WitnessReport | None:
    """The explicit witness if it improves, else the smallest improver."""
    improvers = [
        w
        for w in witnesses
        if w.verdict == c.WitnessVerdict.NOT_LOCAL and w.theta_prime is not None
    ]
    if not improvers:
        return None
    for w in improvers:
        if w.source == "explicit":
            return w
    return min(
        improvers, key=lambda w: tp.cast(models.ParamVec, w.theta_prime).sq_norm
    )


class ScenarioRun:
    """One scenario under one loss, from the flow to the verdicts."""

    def __init__(
        self,
        scenario: base.Scenario,
        loss_kind: c.LossKind,
        tolerances: models.KktTolerances | None = None,
        csv_path: str | None = None,
    ):
        self._scenario = scenario
        self._loss_kind = c.LossKind(loss_kind)
        self._tolerances = tolerances or models.KktTolerances()
        self._csv_path = csv_path
        self._mismatches: list[str] = []

    def _mismatch(self, what: str, expected: tp.Any, actual: tp.Any) -> None:
        expected = getattr(expected, "value", expected)
        actual = getattr(actual, "value", actual)
        LOG.info(
            "%s: %s expected %s, got %s", self._scenario.id, what, expected, actual
        )
        self._mismatches.append(f"{what}: expected {expected}, got {actual}")

    def _witnesses(
        self, theta: models.ParamVec
    ) -> tuple[list[models.WitnessReport], c.WitnessVerdict | None]:
        sc = self._scenario
        reports = []
        family = sc.witness_family
        if family is not None and family.contains(sc.witness_eps):
            explicit = probe.verify_witness(
                sc.arch,
                theta,
                sc.witness(sc.witness_eps),
                sc.dataset,
                eps=sc.witness_eps,
            )
            reports.append(explicit)
            if (
                sc.expected.local == c.LocalExpectation.NOT_LOCAL
                and explicit.verdict != c.WitnessVerdict.NOT_LOCAL
            ):
                self._mismatch("witness", c.WitnessVerdict.NOT_LOCAL, explicit.verdict)

        if sc.expected.local is None:
            return reports, None
        found = probe.local_probe(
            sc.arch,
            theta,
            sc.dataset,
            config=sc.probe_config(),
            families=[family] if family is not None else (),
        )
        reports.append(found)
        return reports, found.verdict

    def _gap(
        self, theta: models.ParamVec, witnesses: list[models.WitnessReport]
    ) -> models.GapReport | None:
        sc = self._scenario
        if sc.global_reference is not None:
            reference: tp.Any = sc.global_reference
            label = sc.global_reference.value
        elif sc.global_candidate is not None:
            reference, label = sc.global_candidate(theta), "candidate"
        else:
            best = _best_witness(witnesses)
            if best is None:
                return None
            # A feasible point of smaller norm is a global candidate too
            reference, label = best.theta_prime, f"{best.source} witness"
        try:
            gap = probe.global_gap(sc.arch, theta, sc.dataset, reference, label=label)
        except probe.InfeasibleReference as e:
            LOG.warning("%s: %s", sc.id, e)
            return None

        if (
            sc.expected.requires_nonzero_neurons
            and gap.verdict == c.GlobalVerdict.GLOBAL
            and not nonzero_neurons(sc.arch, theta)
        ):
            gap.verdict = c.GlobalVerdict.UNDETERMINED
            gap.label += " (zero neuron)"
        return gap

    def _per_layer(
        self, theta: models.ParamVec, witnesses: list[models.WitnessReport]
    ) -> list[models.LayerResult]:
        sc = self._scenario
        results = []
        for layer in sorted(sc.expected.per_layer):
            result = qp.per_layer_verdict(sc.arch, theta, layer, sc.dataset)
            if result.verdict == c.LayerVerdict.UNDETERMINED and any(
                _layer_restricted(theta, w, layer) for w in witnesses
            ):
                result.verdict = c.LayerVerdict.NOT_LOCAL
                result.reason = "beaten by a witness changing only this layer"
            results.append(result)
        return results

    def run(self) -> models.RunReport:
        sc = self._scenario
        started = time.monotonic()
        LOG.info("Running %s with %s loss", sc.id, self._loss_kind.value)

        traj, theta_flow, scale = flow_limit(sc, self._loss_kind, self._csv_path)
        LOG.info(
            "%s: flow %s at s=%g, |theta~|^2=%.8g",
            sc.id,
            traj.status.value,
            traj.final.s,
            theta_flow.sq_norm,
        )

        cert = certificate.kkt_certificate(
            sc.arch, theta_flow, sc.dataset, self._tolerances, scale=scale
        )
        theta, where, deviation = probe_point(sc, theta_flow)
        if deviation is not None and deviation > sc.limit_tol:
            self._mismatch("limit", f"within {sc.limit_tol}", deviation)

        witnesses, local = self._witnesses(theta)
        gap = self._gap(theta, witnesses) if sc.expected.global_verdict else None
        per_layer = self._per_layer(theta, witnesses)

        verdicts: dict[str, tp.Any] = {"kkt": cert.verdict}
        if local is not None:
            verdicts["local"] = local
        if sc.expected.global_verdict is not None:
            verdicts["global"] = gap.verdict if gap else c.GlobalVerdict.UNDETERMINED
        if per_layer:
            verdicts["per_layer"] = {r.layer: r.verdict for r in per_layer}
        pattern_arch = sc.pattern_arch or sc.arch
        if pattern_arch.is_relu:
            pattern = network.activation_pattern(pattern_arch, theta, sc.dataset)
            verdicts["zero_preactivations"] = pattern.has_zero

        if cert.verdict != sc.expected.kkt:
            self._mismatch("kkt", sc.expected.kkt, cert.verdict)
        if sc.expected.local is not None and local != _LOCAL_MATCH[sc.expected.local]:
            self._mismatch("local", _LOCAL_MATCH[sc.expected.local], local)
        if sc.expected.global_verdict is not None:
            wanted = _GLOBAL_MATCH[sc.expected.global_verdict]
            if verdicts["global"] != wanted:
                self._mismatch("global", wanted, verdicts["global"])
        for result in per_layer:
            wanted_layer = sc.expected.per_layer[result.layer]
            if result.verdict != wanted_layer:
                self._mismatch(f"layer {result.layer}", wanted_layer, result.verdict)

        report = models.RunReport(
            scenario=sc.id,
            loss=self._loss_kind,
            trajectory=traj.summary(),
            direction_status=traj.status.value,
            probe_point=where,
            limit_deviation=deviation,
            certificate=cert,
            witnesses=witnesses,
            gap=gap,
            per_layer=per_layer,
            balance=balance.balance_report(traj, sc.arch),
            verdicts=verdicts,
            mismatches=self._mismatches,
            passed=not self._mismatches,
            duration=time.monotonic() - started,
        )
        LOG.info(
            "%s (%s): %s %s",
            sc.id,
            self._loss_kind.value,
            "PASS" if report.passed else "FAIL",
            models.to_simple(verdicts),
        )
        return report


def run_scenario(
    scenario: base.Scenario,
    loss_kind: c.LossKind,
    tolerances: models.KktTolerances | None = None,
    csv_path: str | None = None,
) -> models.RunReport:
    return ScenarioRun(scenario, loss_kind, tolerances, csv_path).run()
