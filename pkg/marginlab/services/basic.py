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

import concurrent.futures
import dataclasses
import logging
import typing as tp

from marginlab.common import constants as c
from marginlab.dm import models
from marginlab.scenarios import base as scenario_base
from marginlab.services import base
from marginlab.services import pipeline

LOG = logging.getLogger(__name__)


@dataclasses.dataclass
class Job:
    scenario: scenario_base.Scenario
    loss_kind: c.LossKind

    @property
    def name(self) -> str:
        return f"{self.scenario.id}/{c.LossKind(self.loss_kind).value}"


@dataclasses.dataclass
class JobResult:
    job: Job
    report: models.RunReport | None = None
    error: Exception | None = None

    @property
    def passed(self) -> bool:
        return self.report is not None and self.report.passed


class BatchService(base.AbstractService):
    """Runs scenario jobs in order, `workers` at a time.

    Results keep the job order whatever the number of workers. A stop
    request lets the running chunk finish and drops the rest.
    """

    def __init__(
        self,
        jobs: tp.Iterable[Job],
        workers: int = 1,
        tolerances: models.KktTolerances | None = None,
        csv_dir: str | None = None,
    ) -> None:
        super(BatchService, self).__init__()
        if workers < 1:
            raise models.InvalidConfig(
                field="workers", value=workers, reason="must be >= 1"
            )
        self._pending = list(jobs)
        self._workers = workers
        self._tolerances = tolerances
        self._csv_dir = csv_dir
        self._enabled = False
        self._iteration_number = 0
        self.results: list[JobResult] = []

    def _csv_path(self, job: Job) -> str | None:
        if not self._csv_dir:
            return None
        return f"{self._csv_dir}/{job.scenario.id}_{job.loss_kind.value}.csv"

    def _run_job(self, job: Job) -> JobResult:
        try:
            report = pipeline.run_scenario(
                job.scenario, job.loss_kind, self._tolerances, self._csv_path(job)
            )
        except Exception as e:
            LOG.error("Job %s failed: %s", job.name, e)
            return JobResult(job=job, error=e)
        return JobResult(job=job, report=report)

    def _iteration(self) -> None:
        chunk = self._pending[: self._workers]
        del self._pending[: self._workers]
        if self._workers == 1:
            self.results.extend(self._run_job(job) for job in chunk)
            return
        with concurrent.futures.ThreadPoolExecutor(self._workers) as executor:
            self.results.extend(executor.map(self._run_job, chunk))

    def _loop_iteration(self) -> None:
        iteration = self._iteration_number
        LOG.debug("Iteration #%d started", iteration)
        try:
            self._iteration()
            LOG.debug("Iteration #%d finished", iteration)
        except Exception:
            LOG.exception("Unexpected error during iteration #%d", iteration)
        finally:
            self._iteration_number += 1

    def _loop(self) -> None:
        self._enabled = True
        while self._enabled and self._pending:
            self._loop_iteration()
        if self._pending:
            LOG.warning("Stopped with %d jobs left", len(self._pending))

    def stop(self) -> None:
        LOG.info("Stop batch")
        self._enabled = False


def jobs_for(
    scenarios: tp.Iterable[scenario_base.Scenario],
    loss_kinds: tp.Sequence[c.LossKind] | None = None,
) -> list[Job]:
    """Every scenario under each of its losses, or under `loss_kinds`."""
    return [
        Job(scenario=sc, loss_kind=c.LossKind(kind))
        for sc in scenarios
        for kind in (loss_kinds or sc.loss_kinds)
    ]
