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

from marginlab.common import constants as c
from marginlab.common import exceptions
from marginlab.convexref import ldp
from marginlab.convexref import reference as convex_reference
from marginlab.dm import models
from marginlab.kktcert import certificate
from marginlab.netcore import network

LOG = logging.getLogger(__name__)

_SHRINK_FACTORS = (0.5, 0.9, 0.99)
_SCAN_STEPS = 60


class InfeasibleReference(exceptions.MarginLabException):
    message = "Reference %(label)s is not usable: %(reason)s"


@dataclasses.dataclass(frozen=True)
class WitnessFamily:
    """Closed-form candidates theta'(p) valid for p in the open (low, high)."""

    build: tp.Callable[[float], models.ParamVec]
    low: float
    high: float
    name: str = "explicit"

    def contains(self, value: float) -> bool:
        return self.low < value < self.high

    def scan(self) -> tp.Iterator[float]:
        """Halve the distance to `low`, starting from mid-interval."""
        gap = (self.high - self.low) / 2.0
        for _ in range(_SCAN_STEPS):
            yield self.low + gap
            gap /= 2.0


def verify_witness(
    arch: models.ArchSpec,
    theta: models.ParamVec,
    theta_prime: models.ParamVec,
    dataset: models.Dataset,
    eps: float | None = None,
    tau_feas: float = c.KKT_TAU_FEAS,
    tau_imp_rel: float = c.PROBE_TAU_IMP_REL,
    source: str = "explicit",
    iteration: int | None = None,
) -> models.WitnessReport:
    theta.check(arch)
    theta_prime.check(arch)
    margins = network.margins(arch, theta_prime, dataset)
    delta = theta_prime.sq_norm - theta.sq_norm
    distance = theta_prime.distance(theta)
    if np.min(margins) < 1.0 - tau_feas:
        verdict = c.WitnessVerdict.INVALID_WITNESS
    elif delta < -tau_imp_rel * theta.sq_norm:
        verdict = c.WitnessVerdict.NOT_LOCAL
    else:
        verdict = c.WitnessVerdict.NO_WITNESS_FOUND
    return models.WitnessReport(
        eps=distance if eps is None else float(eps),
        theta_prime=theta_prime,
        distance=distance,
        margins=margins,
        delta=delta,
        verdict=verdict,
        source=source,
        iteration=iteration,
    )


def _nothing_found(eps: float) -> models.WitnessReport:
    return models.WitnessReport(
        eps=eps,
        theta_prime=None,
        distance=0.0,
        margins=np.zeros(0),
        delta=0.0,
        verdict=c.WitnessVerdict.NO_WITNESS_FOUND,
        source="none",
    )


class _Prober:
    def __init__(
        self,
        arch: models.ArchSpec,
        theta: models.ParamVec,
        dataset: models.Dataset,
        config: models.ProbeConfig,
    ):
        self._arch = arch
        self._theta = theta
        self._dataset = dataset
        self._config = config
        self._theta_sq = theta.sq_norm
        self._tau_imp = config.tau_imp_rel * theta.sq_norm

    def _in_ball(self, candidate: models.ParamVec) -> bool:
        return candidate.distance(self._theta) <= self._config.eps

    def _verify(
        self, candidate: models.ParamVec, source: str, iteration: int | None = None
    ) -> models.WitnessReport:
        return verify_witness(
            self._arch,
            self._theta,
            candidate,
            self._dataset,
            eps=self._config.eps,
            tau_feas=self._config.tau_feas,
            tau_imp_rel=self._config.tau_imp_rel,
            source=source,
            iteration=iteration,
        )

    def _repair(self, candidate: models.ParamVec) -> models.ParamVec | None:
        try:
            return certificate.rescale_to_unit_margin(
                self._arch, candidate, self._dataset
            )
        except certificate.NotSeparatingDirection:
            return None

    def _refine(self, start: models.ParamVec) -> models.ParamVec:
        """Shrink single coordinates while the repaired point improves."""
        current = start
        for _ in range(self._config.refine_passes):
            improved = False
            for k in range(self._arch.n_params):
                for factor in _SHRINK_FACTORS:
                    flat = current.flat.copy()
                    flat[k] *= factor
                    candidate = self._repair(
                        models.ParamVec.from_flat(self._arch, flat)
                    )
                    if (
                        candidate is not None
                        and candidate.sq_norm < current.sq_norm
                        and self._in_ball(candidate)
                    ):
                        current = candidate
                        improved = True
                        break
            if not improved:
                break
        return current

    def scan_families(
        self, families: tp.Sequence[WitnessFamily]
    ) -> models.WitnessReport | None:
        for family in families:
            for value in family.scan():
                candidate = family.build(value)
                if not self._in_ball(candidate):
                    continue
                report = self._verify(candidate, source=family.name)
                LOG.debug(
                    "Witness %s(%.3g): delta=%.3e verdict=%s",
                    family.name,
                    value,
                    report.delta,
                    report.verdict.value,
                )
                if report.verdict == c.WitnessVerdict.NOT_LOCAL:
                    return report
        return None

    def _random_candidate(self, iteration: int) -> models.WitnessReport | None:
        rng = np.random.default_rng([self._config.seed, iteration])
        direction = rng.standard_normal(self._arch.n_params)
        direction /= np.linalg.norm(direction)
        candidate = models.ParamVec.from_flat(
            self._arch, self._theta.flat + self._config.eps * direction
        )
        min_margin = float(
            np.min(network.margins(self._arch, candidate, self._dataset))
        )
        if min_margin <= 0:
            return None
        repaired = self._repair(candidate)
        if repaired is None or not self._in_ball(repaired):
            return None
        improver = repaired.sq_norm < self._theta_sq - self._tau_imp
        near = (
            min_margin >= 1.0 - self._config.near_feasible_slack
            and candidate.sq_norm < self._theta_sq
        )
        if not (improver or near):
            return None
        report = self._verify(
            self._refine(repaired), source="random", iteration=iteration
        )
        if report.verdict == c.WitnessVerdict.NOT_LOCAL and self._in_ball(
            report.theta_prime  # type: ignore[arg-type]
        ):
            return report
        return None

    def search(self) -> models.WitnessReport | None:
        for iteration in range(self._config.budget):
            report = self._random_candidate(iteration)
            if report is not None:
                return report
        return None


def local_probe(
    arch: models.ArchSpec,
    theta: models.ParamVec,
    dataset: models.Dataset,
    config: models.ProbeConfig | None = None,
    families: tp.Sequence[WitnessFamily] = (),
    **overrides: tp.Any,
) -> models.WitnessReport:
    """Look for a feasible point of smaller norm within eps of `theta`.

    Registered witness families are scanned first, then `budget` random
    points on the eps-sphere, each repaired to unit minimum margin. The
    lowest iteration wins, so the result only depends on the seed.
    """
    config = dataclasses.replace(config or models.ProbeConfig(), **overrides)
    if config.eps == 0:
        return _nothing_found(0.0)

    prober = _Prober(arch, theta.check(arch), dataset, config)
    report = prober.scan_families(families) or prober.search()
    if report is None:
        LOG.info(
            "No witness within eps=%g after %d random points",
            config.eps,
            config.budget,
        )
        return _nothing_found(config.eps)
    LOG.info(
        "Witness found (%s): delta=%.6g distance=%.3g",
        report.source,
        report.delta,
        report.distance,
    )
    return report


def global_gap(
    arch: models.ArchSpec,
    theta: models.ParamVec,
    dataset: models.Dataset,
    reference: c.ReferenceProblem | str | models.ParamVec,
    label: str = "",
    tol: float = c.GAP_TOL,
    tau_feas: float = c.KKT_TAU_FEAS,
    tau_imp_rel: float = c.PROBE_TAU_IMP_REL,
) -> models.GapReport:
    """Compare |theta|^2 with a convex optimum or a feasible candidate.

    A feasible candidate decides NOT_GLOBAL as soon as it beats theta by
    more than `tau_imp_rel` relative, the GAP_TOL band only applies to
    convex reference values.
    """
    if isinstance(reference, models.ParamVec):
        reference.check(arch)
        min_margin = float(np.min(network.margins(arch, reference, dataset)))
        if min_margin < 1.0 - tau_feas:
            raise InfeasibleReference(
                label=label or "candidate",
                reason=f"min margin {min_margin!r} < 1",
            )
        value = reference.sq_norm
        kind = c.ReferenceKind.CANDIDATE
        label = label or "candidate"
    else:
        problem = c.ReferenceProblem(reference)
        label = label or problem.value
        try:
            ref = convex_reference.reference_value(problem, arch, dataset)
        except (ldp.Infeasible, network.NotApplicable) as e:
            raise InfeasibleReference(label=label, reason=str(e))
        value = ref.value
        kind = (
            c.ReferenceKind.LOWER_BOUND
            if ref.certified
            else c.ReferenceKind.CANDIDATE
        )

    if not value > 0:
        raise InfeasibleReference(label=label, reason=f"reference value {value!r}")
    ratio = theta.sq_norm / value
    improvement = theta.sq_norm - value
    if isinstance(reference, models.ParamVec) and (
        improvement > tau_imp_rel * theta.sq_norm
    ):
        verdict = c.GlobalVerdict.NOT_GLOBAL
    elif ratio > 1.0 + tol:
        verdict = c.GlobalVerdict.NOT_GLOBAL
    elif kind == c.ReferenceKind.LOWER_BOUND and ratio >= 1.0 - tol:
        verdict = c.GlobalVerdict.GLOBAL
    else:
        verdict = c.GlobalVerdict.UNDETERMINED
    LOG.info(
        "Global gap against %s: %.12g / %.12g = %.6g (%s)",
        label,
        theta.sq_norm,
        value,
        ratio,
        verdict.value,
    )
    return models.GapReport(
        theta_sq_norm=theta.sq_norm,
        reference=value,
        ratio=ratio,
        reference_kind=kind,
        verdict=verdict,
        label=label,
    )
