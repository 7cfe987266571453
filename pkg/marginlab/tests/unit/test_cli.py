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

import csv
import io
import json
import os
import shutil
import tempfile
import unittest

import mock
import numpy as np

from marginlab.cmd import lab
from marginlab.common import constants as c
from marginlab.common import utils
from marginlab.dm import models
from marginlab.flowsim import integrator
from marginlab.scenarios import catalog

RUN_SCENARIO = "marginlab.services.pipeline.run_scenario"


def fake_report(scenario, loss_kind, tolerances=None, csv_path=None):
    return models.RunReport(
        scenario=scenario.id,
        loss=loss_kind,
        trajectory={"final_loss": 1e-10, "final_norm": 12.5},
        direction_status="converged",
        verdicts={"kkt": c.KktVerdict.KKT},
        passed=scenario.id != "CONV_D2",
        mismatches=[] if scenario.id != "CONV_D2" else ["local"],
    )


class CliTest(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.mkdtemp()
        self.addCleanup(shutil.rmtree, self.tmp)

    def _file(self, name, doc):
        path = os.path.join(self.tmp, name)
        with open(path, "w") as f:
            f.write(doc if isinstance(doc, str) else json.dumps(doc))
        return path

    def _main(self, *argv):
        with mock.patch("sys.stdout", new_callable=io.StringIO) as out:
            code = lab.main(list(argv))
        self.stdout = out.getvalue()
        return code

    def _json(self):
        return json.loads(self.stdout)

    def test_list(self):
        self.assertEqual(self._main("list"), c.ExitCode.OK)

        ids = [line.split("\t")[0] for line in self.stdout.splitlines()]
        self.assertEqual(ids, catalog.catalog())

    def test_solve_l1(self):
        data = self._file("data.json", {"examples": [{"x": [1, 2], "y": 1}]})

        self.assertEqual(
            self._main("solve", "--problem", "l1", "--data", data), c.ExitCode.OK
        )
        np.testing.assert_allclose(self._json()["optimizer"], [0, 0.5], atol=1e-9)

    def test_solve_linear_from_scenario(self):
        out = os.path.join(self.tmp, "solution.json")

        code = self._main(
            "solve", "--problem", "linear", "--scenario", "DIAG_D2", "--out", out
        )

        self.assertEqual(code, c.ExitCode.OK)
        np.testing.assert_allclose(
            utils.load_json(out)["optimizer"], [0.2, 0.4], atol=1e-9
        )

    def test_solve_infeasible(self):
        data = self._file(
            "data.json",
            {"examples": [{"x": [1.0], "y": 1}, {"x": [1.0], "y": -1}]},
        )

        self.assertEqual(
            self._main("solve", "--problem", "linear", "--data", data),
            c.ExitCode.LOAD_FAILURE,
        )

    def test_solve_needs_data(self):
        self.assertEqual(
            self._main("solve", "--problem", "l1"), c.ExitCode.LOAD_FAILURE
        )

    def test_load_failures(self):
        bad_doc = self._file("bad.json", "{not json")
        bad_data = self._file("data.json", {"examples": [{"x": [1], "y": 3}]})
        cases = [
            ("run", "NOPE"),
            ("run", "DIAG_D2", "--set", "s_budget"),
            ("run", "DIAG_D2", "--set", "arch=1"),
            ("run", bad_doc),
            ("solve", "--problem", "l1", "--data", bad_data),
            ("probe", "--scenario", "FC_RELU_D2", "--eps", "-1"),
        ]
        for argv in cases:
            with self.subTest(argv=argv):
                self.assertEqual(self._main(*argv), c.ExitCode.LOAD_FAILURE)

    def test_kkt_of_given_point(self):
        theta = self._file("theta.json", {"layers": [[1, 0], [1, 0]]})

        code = self._main("kkt", "--scenario", "DIAG_D2", "--theta", theta)

        self.assertEqual(code, c.ExitCode.OK)
        self.assertEqual(self._json()["verdict"], "KKT")

    def test_kkt_wrong_size(self):
        theta = self._file("theta.json", {"layers": [[1, 0, 0], [1, 0]]})

        self.assertEqual(
            self._main("kkt", "--scenario", "DIAG_D2", "--theta", theta),
            c.ExitCode.LOAD_FAILURE,
        )

    def test_probe_witness(self):
        code = self._main("probe", "--scenario", "DIAG_D2", "--budget", "0")

        self.assertEqual(code, c.ExitCode.OK)
        report = self._json()
        self.assertEqual(report["verdict"], "NOT_LOCAL")
        self.assertLess(report["delta"], 0)

    def test_probe_random_only(self):
        code = self._main(
            "probe", "--scenario", "DIAG_D2", "--budget", "0", "--random-only"
        )

        self.assertEqual(code, c.ExitCode.OK)
        self.assertEqual(self._json()["verdict"], "NO_WITNESS_FOUND")

    def test_flow_not_converged(self):
        path = os.path.join(self.tmp, "traj.csv")

        code = self._main("flow", "DIAG_D2", "--s-budget", "3", "--csv", path)

        self.assertEqual(code, c.ExitCode.NOT_CONVERGED)
        self.assertEqual(self._json()["checkpoints"], 4)
        with open(path, newline="") as f:
            self.assertEqual(len(list(csv.reader(f))), 5)

    def test_init_frequency(self):
        code = self._main("init-frequency", "--samples", "200", "--seed", "1")

        self.assertEqual(code, c.ExitCode.OK)
        self.assertEqual(self._json()["samples"], 200)
        self.assertEqual(self._json()["seed"], 1)

    @mock.patch(RUN_SCENARIO, side_effect=fake_report)
    def test_run_mismatch(self, run):
        code = self._main("run", "CONV_D2", "--loss", "exp", "--out", self.tmp)

        self.assertEqual(code, c.ExitCode.VERDICT_MISMATCH)
        run.assert_called_once()
        saved = utils.load_json(os.path.join(self.tmp, "CONV_D2_exp.json"))
        self.assertEqual(saved["mismatches"], ["local"])

    @mock.patch(RUN_SCENARIO, side_effect=fake_report)
    def test_run_overrides(self, run):
        code = self._main("run", "DIAG_D2", "--loss", "log", "--set", "s_budget=7")

        self.assertEqual(code, c.ExitCode.OK)
        scenario, loss = run.call_args[0][:2]
        self.assertEqual(scenario.flow["s_budget"], 7.0)
        self.assertEqual(loss, c.LossKind.LOGISTIC)

    @mock.patch(RUN_SCENARIO, side_effect=fake_report)
    def test_report(self, run):
        code = self._main(
            "report", "DIAG_D2", "CONV_D2", "--loss", "exp", "--out", self.tmp
        )

        self.assertEqual(code, c.ExitCode.VERDICT_MISMATCH)
        with open(os.path.join(self.tmp, "summary.csv"), newline="") as f:
            rows = list(csv.DictReader(f))
        self.assertEqual([r["scenario"] for r in rows], ["DIAG_D2", "CONV_D2"])
        self.assertEqual([r["passed"] for r in rows], ["True", "False"])
        self.assertEqual(rows[0]["kkt"], "KKT")
        self.assertTrue(os.path.exists(os.path.join(self.tmp, "DIAG_D2_exp.json")))

    @mock.patch(RUN_SCENARIO)
    def test_report_flow_error(self, run):
        run.side_effect = integrator.NotConverged(
            deviation=1.0, window=10, tolerance=1e-6
        )

        code = self._main("report", "DIAG_D2", "--loss", "exp", "--out", self.tmp)

        self.assertEqual(code, c.ExitCode.NOT_CONVERGED)
        with open(os.path.join(self.tmp, "summary.csv"), newline="") as f:
            rows = list(csv.DictReader(f))
        self.assertTrue(rows[0]["mismatches"].startswith("error: "))
