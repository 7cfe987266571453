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

import argparse
import logging
import os
import sys
import typing as tp

from marginlab.common import constants as c
from marginlab.common import exceptions
from marginlab.common import utils
from marginlab.convexref import group
from marginlab.convexref import ldp
from marginlab.convexref import lp
from marginlab.convexref import qp
from marginlab.dm import models
from marginlab.flowsim import integrator
from marginlab.kktcert import certificate
from marginlab.netcore import network
from marginlab.optprobe import probe
from marginlab.scenarios import base
from marginlab.scenarios import catalog
from marginlab.scenarios import sampling
from marginlab.services import basic
from marginlab.services import pipeline

LOG = logging.getLogger(__name__)

LOAD_ERRORS = (
    exceptions.MalformedDocument,
    base.UnknownScenario,
    base.ForbiddenOverride,
    base.PreconditionFailed,
    base.EpsOutOfRange,
    models.InvalidConfig,
    models.DimensionMismatch,
    models.StructuralError,
)
FLOW_ERRORS = (
    integrator.NotConverged,
    integrator.DivergedNumerically,
    integrator.StalledAtCriticalPoint,
    integrator.EmptyTrajectory,
    certificate.NotSeparatingDirection,
)
SOLVER_ERRORS = (
    ldp.Infeasible,
    lp.SolverBudgetExceeded,
    network.NotApplicable,
)

SUMMARY_COLUMNS = (
    "scenario",
    "loss",
    "passed",
    "kkt",
    "local",
    "global",
    "final_loss",
    "final_norm",
    "mismatches",
)


def _emit(data: tp.Any, path: str | None = None) -> None:
    simple = models.to_simple(data)
    if path:
        utils.save_json(simple, path)
        LOG.info("Wrote %s", path)
    sys.stdout.write(utils.dump_json(simple))


def _load_model(path: str, cls: tp.Any, field: str) -> tp.Any:
    try:
        doc = utils.load_json(path)
        return cls.restore_from_simple_view(**doc)
    except exceptions.MarginLabException as e:
        raise exceptions.MalformedDocument(source=path, field=field, reason=str(e))
    except (OSError, ValueError, TypeError, KeyError, AttributeError) as e:
        raise exceptions.MalformedDocument(
            source=path, field=field, reason=f"{type(e).__name__}: {e}"
        )


def _overrides(args: argparse.Namespace) -> dict[str, tp.Any]:
    overrides: dict[str, tp.Any] = {}
    for key, value in utils.cfg_from_options(getattr(args, "set", None) or []).items():
        if value is True:
            raise base.ForbiddenOverride(key=key, reason="expected key=value")
        overrides[key] = value
    for flag, key in (
        ("eps", "probe_eps"),
        ("budget", "probe_budget"),
        ("seed", "seed"),
        ("s_budget", "s_budget"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return overrides


def _scenario(ref: str, args: argparse.Namespace) -> base.Scenario:
    """A catalog id or the path of a scenario document."""
    overrides = _overrides(args)
    if os.path.isfile(ref):
        scenario = base.load_scenario_file(ref)
        return scenario.with_overrides(overrides) if overrides else scenario
    return catalog.build(ref, overrides)


def _losses(args: argparse.Namespace, scenario: base.Scenario) -> list[c.LossKind]:
    if args.loss:
        return [c.LossKind(args.loss)]
    return list(scenario.loss_kinds)


def _tolerances(args: argparse.Namespace) -> models.KktTolerances:
    if getattr(args, "tol_stat", None) is None:
        return models.KktTolerances()
    return models.KktTolerances(tau_stat=args.tol_stat)


def _theta(
    args: argparse.Namespace, scenario: base.Scenario, prefer_analytic: bool
) -> models.ParamVec:
    if args.theta:
        theta = _load_model(args.theta, models.ParamVec, "theta")
        try:
            return theta.check(scenario.arch)
        except models.DimensionMismatch as e:
            raise exceptions.MalformedDocument(
                source=args.theta, field="layers", reason=str(e)
            )
    if prefer_analytic and scenario.expected_theta is not None:
        return scenario.expected_theta
    loss = _losses(args, scenario)[0]
    _, theta, _ = pipeline.flow_limit(scenario, loss)
    return pipeline.probe_point(scenario, theta)[0] if prefer_analytic else theta


def _report_path(out: str | None, scenario: str, loss: c.LossKind, ext: str) -> str:
    return os.path.join(out or ".", f"{scenario}_{loss.value}.{ext}")


def cmd_list(args: argparse.Namespace) -> int:
    for scenario_id in catalog.catalog():
        sys.stdout.write(f"{scenario_id}\t{catalog.build(scenario_id).title}\n")
    return c.ExitCode.OK


def cmd_run(args: argparse.Namespace) -> int:
    scenario = _scenario(args.scenario, args)
    code = c.ExitCode.OK
    for loss in _losses(args, scenario):
        csv_path = None
        if args.csv:
            csv_path = _report_path(args.out, scenario.id, loss, "csv")
        report = pipeline.run_scenario(scenario, loss, _tolerances(args), csv_path)
        json_path = (
            _report_path(args.out, scenario.id, loss, "json") if args.out else None
        )
        _emit(report, json_path)
        if not report.passed:
            code = c.ExitCode.VERDICT_MISMATCH
    return code


def cmd_flow(args: argparse.Namespace) -> int:
    scenario = _scenario(args.scenario, args)
    loss = _losses(args, scenario)[0]
    traj = integrator.integrate(
        scenario.arch, scenario.init, scenario.dataset, scenario.flow_config(loss)
    )
    if args.csv:
        traj.to_csv(args.csv)
    summary = traj.summary()
    try:
        summary["direction"] = integrator.direction_limit(traj)
    finally:
        _emit(summary, args.out)
    return c.ExitCode.OK


def cmd_kkt(args: argparse.Namespace) -> int:
    scenario = _scenario(args.scenario, args)
    theta = _theta(args, scenario, prefer_analytic=False)
    cert = certificate.kkt_certificate(
        scenario.arch, theta, scenario.dataset, _tolerances(args)
    )
    _emit(cert, args.out)
    if cert.verdict != scenario.expected.kkt:
        return c.ExitCode.VERDICT_MISMATCH
    return c.ExitCode.OK


def cmd_probe(args: argparse.Namespace) -> int:
    scenario = _scenario(args.scenario, args)
    theta = _theta(args, scenario, prefer_analytic=True)
    family = scenario.witness_family
    report = probe.local_probe(
        scenario.arch,
        theta,
        scenario.dataset,
        config=scenario.probe_config(),
        families=[family] if family is not None and not args.random_only else (),
    )
    _emit(report, args.out)
    return c.ExitCode.OK


def _solve_dataset(args: argparse.Namespace) -> tuple[models.Dataset, tp.Any]:
    if args.data:
        return _load_model(args.data, models.Dataset, "examples"), None
    if args.scenario:
        scenario = _scenario(args.scenario, args)
        return scenario.dataset, scenario
    raise exceptions.MalformedDocument(
        source="<command line>", field="--data", reason="missing"
    )


def cmd_solve(args: argparse.Namespace) -> int:
    dataset, scenario = _solve_dataset(args)
    problem = args.problem
    try:
        if problem == "linear":
            solution: tp.Any = qp.solve_linear_maxmargin(dataset)
        elif problem == "l1":
            solution = lp.solve_l1_maxmargin(dataset)
        elif scenario is not None:
            groups, gates = group.neuron_groups(
                scenario.arch, dataset, scenario.expected_theta
            )
            solution = group.solve_group_maxmargin(groups, dataset.y, gates)
        else:
            # One group per coordinate
            groups = [dataset.X[:, [k]] for k in range(dataset.dim)]
            solution = group.solve_group_maxmargin(groups, dataset.y)
    except SOLVER_ERRORS as e:
        LOG.error("%s", e)
        return c.ExitCode.LOAD_FAILURE
    _emit(solution, args.out)
    return c.ExitCode.OK


def _summary_row(result: basic.JobResult) -> list[tp.Any]:
    job = result.job
    report = result.report
    if report is None:
        return [
            job.scenario.id,
            job.loss_kind.value,
            False,
            "",
            "",
            "",
            "",
            "",
            f"error: {result.error}",
        ]
    verdicts = models.to_simple(report.verdicts)
    return [
        report.scenario,
        report.loss.value,
        report.passed,
        verdicts.get("kkt", ""),
        verdicts.get("local", ""),
        verdicts.get("global", ""),
        report.trajectory["final_loss"],
        report.trajectory["final_norm"],
        "; ".join(report.mismatches),
    ]


def cmd_report(args: argparse.Namespace) -> int:
    scenarios = [_scenario(ref, args) for ref in (args.scenarios or catalog.catalog())]
    loss_kinds = [c.LossKind(args.loss)] if args.loss else None
    service = basic.BatchService(
        basic.jobs_for(scenarios, loss_kinds),
        workers=args.jobs,
        tolerances=_tolerances(args),
    )
    service.start()

    code = c.ExitCode.OK
    for result in service.results:
        if result.report is not None:
            result.report.save(
                _report_path(
                    args.out, result.job.scenario.id, result.job.loss_kind, "json"
                )
            )
        if isinstance(result.error, FLOW_ERRORS):
            code = max(code, c.ExitCode.NOT_CONVERGED)
        elif not result.passed:
            code = max(code, c.ExitCode.VERDICT_MISMATCH)

    csv_path = args.csv or os.path.join(args.out, "summary.csv")
    utils.save_csv(
        SUMMARY_COLUMNS, (_summary_row(r) for r in service.results), csv_path
    )
    LOG.info(
        "%d of %d runs passed, summary in %s",
        sum(r.passed for r in service.results),
        len(service.results),
        csv_path,
    )
    return code


def cmd_init_frequency(args: argparse.Namespace) -> int:
    scenario = _scenario(args.scenario, args)
    result = sampling.qualifying_frequency(
        scenario.dataset, args.samples, seed=args.seed
    )
    _emit(result, args.out)
    return c.ExitCode.OK


def _add_common(parser: argparse.ArgumentParser, loss: bool = True) -> None:
    if loss:
        parser.add_argument(
            "--loss",
            choices=[k.value for k in c.LossKind],
            default=None,
            help="Loss to run with (default: every loss of the scenario)",
        )
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a scenario tolerance, budget, eps or seed",
    )
    parser.add_argument("--seed", type=int, default=None, help="Probe seed")


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=c.GLOBAL_SERVICE_NAME,
        description="Gradient flow max-margin experiments on small networks.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logs")
    subparsers = parser.add_subparsers(dest="command", required=True)

    p = subparsers.add_parser("list", help="List builtin scenarios")
    p.set_defaults(func=cmd_list)

    p = subparsers.add_parser("run", help="Run a scenario end to end")
    p.add_argument("scenario", help="Scenario id or scenario document path")
    _add_common(p)
    p.add_argument("--eps", type=float, default=None, help="Local probe radius")
    p.add_argument("--budget", type=int, default=None, help="Random probe points")
    p.add_argument("--s-budget", type=float, default=None, help="Flow time budget")
    p.add_argument("--tol-stat", type=float, default=None, help="KKT tolerance")
    p.add_argument("--out", default=None, help="Directory for JSON reports")
    p.add_argument("--csv", action="store_true", help="Write trajectory CSVs")
    p.set_defaults(func=cmd_run)

    p = subparsers.add_parser("flow", help="Only integrate the flow")
    p.add_argument("scenario", help="Scenario id or scenario document path")
    _add_common(p)
    p.add_argument("--s-budget", type=float, default=None, help="Flow time budget")
    p.add_argument("--csv", default=None, help="Trajectory CSV path")
    p.add_argument("--out", default=None, help="JSON summary path")
    p.set_defaults(func=cmd_flow)

    p = subparsers.add_parser("kkt", help="Certify a point of a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--theta", default=None, help="Parameter JSON, default: flow")
    _add_common(p)
    p.add_argument("--tol-stat", type=float, default=None, help="KKT tolerance")
    p.add_argument("--out", default=None, help="JSON output path")
    p.set_defaults(func=cmd_kkt)

    p = subparsers.add_parser("probe", help="Search a local improvement")
    p.add_argument("--scenario", required=True)
    p.add_argument("--theta", default=None, help="Parameter JSON")
    _add_common(p)
    p.add_argument("--eps", type=float, default=None, help="Probe radius")
    p.add_argument("--budget", type=int, default=None, help="Random probe points")
    p.add_argument(
        "--random-only",
        action="store_true",
        help="Skip the scenario witness family",
    )
    p.add_argument("--out", default=None, help="JSON output path")
    p.set_defaults(func=cmd_probe)

    p = subparsers.add_parser("solve", help="Solve a convex max-margin problem")
    p.add_argument("--problem", choices=["linear", "l1", "group"], required=True)
    p.add_argument("--data", default=None, help="Dataset JSON")
    p.add_argument("--scenario", default=None, help="Take the dataset of a scenario")
    p.add_argument("--out", default=None, help="JSON output path")
    p.set_defaults(func=cmd_solve, set=[])

    p = subparsers.add_parser("report", help="Run many scenarios into a table")
    p.add_argument("scenarios", nargs="*", help="Ids or documents, default: all")
    _add_common(p)
    p.add_argument("--tol-stat", type=float, default=None, help="KKT tolerance")
    p.add_argument("--jobs", type=int, default=1, help="Parallel runs")
    p.add_argument("--out", default="reports", help="Report directory")
    p.add_argument("--csv", default=None, help="Summary CSV path")
    p.set_defaults(func=cmd_report)

    p = subparsers.add_parser(
        "init-frequency", help="Share of random inits with the bad pattern"
    )
    p.add_argument("--scenario", default="FC_RELU_D2")
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="JSON output path")
    p.set_defaults(func=cmd_init_frequency, set=[])

    return parser


def main(argv: tp.Sequence[str] | None = None) -> int:
    args = build_arg_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    try:
        code = args.func(args)
    except LOAD_ERRORS as e:
        LOG.error("%s", e)
        return c.ExitCode.LOAD_FAILURE
    except FLOW_ERRORS as e:
        LOG.error("%s", e)
        return c.ExitCode.NOT_CONVERGED
    LOG.debug("Bye")
    return int(code)


if __name__ == "__main__":
    raise SystemExit(main())
