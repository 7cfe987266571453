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

import unittest

import numpy as np

from marginlab.common import constants as c
from marginlab.dm import models
from marginlab.optprobe import probe

RELU_D2 = models.ArchSpec.fully_connected((2, 2, 1))
RELU_D2_DATA = models.Dataset.from_pairs([((1.0, 0.25), 1), ((-1.0, 0.25), 1)])
RELU_D2_LIMIT = models.ParamVec.of((0, 2, 0, 0), (2, 0))

DIAG = models.ArchSpec.diagonal(2, 2)
DIAG_DATA = models.Dataset.from_pairs([((1.0, 2.0), 1)])
DIAG_LIMIT = models.ParamVec.of((1, 0), (1, 0))
DIAG_FAMILY = probe.WitnessFamily(
    build=lambda e: models.ParamVec.of(*[(np.sqrt(1 - e), np.sqrt(e / 2))] * 2),
    low=0.0,
    high=1.0,
)


class WitnessFamilyTest(unittest.TestCase):
    def test_open_interval(self):
        self.assertTrue(DIAG_FAMILY.contains(0.5))
        self.assertFalse(DIAG_FAMILY.contains(0.0))
        self.assertFalse(DIAG_FAMILY.contains(1.0))

    def test_scan_halves_towards_low(self):
        values = list(DIAG_FAMILY.scan())

        self.assertEqual(values[:3], [0.5, 0.25, 0.125])
        self.assertTrue(all(DIAG_FAMILY.contains(v) for v in values))


class VerifyWitnessTest(unittest.TestCase):
    def test_two_neuron_witness(self):
        witness = models.ParamVec.of(
            (0.05, 1.8, -np.sqrt(0.2), 0), (2, np.sqrt(0.2))
        )

        report = probe.verify_witness(
            RELU_D2, RELU_D2_LIMIT, witness, RELU_D2_DATA, eps=0.1
        )

        self.assertEqual(report.verdict, c.WitnessVerdict.NOT_LOCAL)
        np.testing.assert_allclose(report.margins, [1.0, 1.0], atol=1e-12)
        self.assertAlmostEqual(witness.sq_norm, 7.6425, delta=1e-12)
        self.assertAlmostEqual(report.delta, 7.6425 - 8.0, delta=1e-12)

    def test_same_point(self):
        report = probe.verify_witness(DIAG, DIAG_LIMIT, DIAG_LIMIT, DIAG_DATA)

        self.assertEqual(report.verdict, c.WitnessVerdict.NO_WITNESS_FOUND)
        self.assertEqual(report.delta, 0.0)

    def test_infeasible_witness(self):
        witness = models.ParamVec.of((np.sqrt(0.9), 0), (np.sqrt(0.9), 0))

        report = probe.verify_witness(DIAG, DIAG_LIMIT, witness, DIAG_DATA)

        self.assertEqual(report.verdict, c.WitnessVerdict.INVALID_WITNESS)
        self.assertAlmostEqual(report.min_margin, 0.9)

    def test_diagonal_family(self):
        report = probe.verify_witness(
            DIAG, DIAG_LIMIT, DIAG_FAMILY.build(0.1), DIAG_DATA
        )

        self.assertEqual(report.verdict, c.WitnessVerdict.NOT_LOCAL)
        self.assertAlmostEqual(report.theta_prime.sq_norm, 1.9)
        self.assertAlmostEqual(report.min_margin, 1.0)


class LocalProbeTest(unittest.TestCase):
    def test_registered_witness_inside_the_ball(self):
        report = probe.local_probe(
            DIAG, DIAG_LIMIT, DIAG_DATA, eps=0.1, budget=0, families=[DIAG_FAMILY]
        )

        self.assertEqual(report.verdict, c.WitnessVerdict.NOT_LOCAL)
        self.assertEqual(report.source, "explicit")
        self.assertLessEqual(report.distance, 0.1)
        self.assertLess(report.delta, 0.0)

    def test_empty_ball(self):
        report = probe.local_probe(
            DIAG, DIAG_LIMIT, DIAG_DATA, eps=0.0, families=[DIAG_FAMILY]
        )

        self.assertEqual(report.verdict, c.WitnessVerdict.NO_WITNESS_FOUND)
        self.assertIsNone(report.theta_prime)

    def test_found_witness_reverifies(self):
        report = probe.local_probe(
            RELU_D2, RELU_D2_LIMIT, RELU_D2_DATA, eps=0.05, budget=300, seed=5
        )

        if report.verdict == c.WitnessVerdict.NOT_LOCAL:
            again = probe.verify_witness(
                RELU_D2, RELU_D2_LIMIT, report.theta_prime, RELU_D2_DATA
            )
            self.assertEqual(again.verdict, c.WitnessVerdict.NOT_LOCAL)
            self.assertLessEqual(report.distance, 0.05 + 1e-12)

    def test_same_seed_same_result(self):
        kwargs = dict(eps=0.05, budget=200, seed=11)

        first = probe.local_probe(RELU_D2, RELU_D2_LIMIT, RELU_D2_DATA, **kwargs)
        second = probe.local_probe(RELU_D2, RELU_D2_LIMIT, RELU_D2_DATA, **kwargs)

        self.assertEqual(first.dump_to_simple_view(), second.dump_to_simple_view())

    def test_local_optimum_has_no_witness(self):
        dataset = models.Dataset.from_pairs(
            [((1.0, 0.25), 1), ((-1.0, 0.25), 1), ((0.0, -1.0), 1)]
        )
        theta = models.ParamVec.of((0, 2, 0, -1), (2, 1))

        report = probe.local_probe(
            RELU_D2, theta, dataset, eps=0.05, budget=200, seed=7
        )

        self.assertEqual(report.verdict, c.WitnessVerdict.NO_WITNESS_FOUND)

    def test_bad_config(self):
        self.assertRaises(
            models.InvalidConfig,
            probe.local_probe,
            DIAG,
            DIAG_LIMIT,
            DIAG_DATA,
            eps=-1.0,
        )


class GlobalGapTest(unittest.TestCase):
    def test_aligned_candidate_beats_the_limit(self):
        norm = np.sqrt(17.0) / 4.0
        w = RELU_D2_DATA.X / norm**1.5
        candidate = models.ParamVec.of(w.reshape(-1), (norm**-0.5, norm**-0.5))

        gap = probe.global_gap(RELU_D2, RELU_D2_LIMIT, RELU_D2_DATA, candidate)

        self.assertAlmostEqual(gap.reference, 16 / np.sqrt(17.0))
        self.assertAlmostEqual(gap.ratio, 8 * np.sqrt(17.0) / 16)
        self.assertEqual(gap.verdict, c.GlobalVerdict.NOT_GLOBAL)
        self.assertEqual(gap.reference_kind, c.ReferenceKind.CANDIDATE)

    def test_balanced_linear_optimum(self):
        arch = models.ArchSpec.fully_connected((2, 2, 1), c.Activation.LINEAR)
        dataset = models.Dataset.from_pairs([((1.0, 2.0), 1)])
        u = np.array([0.2, 0.4])
        C = np.sqrt(np.linalg.norm(u))
        a = u / np.linalg.norm(u)
        theta = models.ParamVec.of((C * a[0], C * a[1], 0, 0), (C, 0))

        gap = probe.global_gap(
            arch, theta, dataset, c.ReferenceProblem.LINEAR_DEEP
        )

        self.assertAlmostEqual(gap.ratio, 1.0)
        self.assertEqual(gap.reference_kind, c.ReferenceKind.LOWER_BOUND)
        self.assertEqual(gap.verdict, c.GlobalVerdict.GLOBAL)

    def test_diagonal_limit_against_l1(self):
        gap = probe.global_gap(DIAG, DIAG_LIMIT, DIAG_DATA, c.ReferenceProblem.L1)

        self.assertAlmostEqual(gap.reference, 1.0)
        self.assertAlmostEqual(gap.ratio, 2.0)
        self.assertEqual(gap.verdict, c.GlobalVerdict.NOT_GLOBAL)

    def test_infeasible_candidate(self):
        self.assertRaises(
            probe.InfeasibleReference,
            probe.global_gap,
            DIAG,
            DIAG_LIMIT,
            DIAG_DATA,
            models.ParamVec.of((0.5, 0), (1, 0)),
        )

    def test_reference_not_applicable(self):
        self.assertRaises(
            probe.InfeasibleReference,
            probe.global_gap,
            RELU_D2,
            RELU_D2_LIMIT,
            RELU_D2_DATA,
            c.ReferenceProblem.L1,
        )

    def test_small_improvement_inside_the_ratio_band(self):
        candidate = DIAG_FAMILY.build(0.004)

        gap = probe.global_gap(DIAG, DIAG_LIMIT, DIAG_DATA, candidate)

        self.assertLess(gap.ratio, 1.0 + c.GAP_TOL)
        self.assertAlmostEqual(gap.reference, 1.996)
        self.assertEqual(gap.verdict, c.GlobalVerdict.NOT_GLOBAL)

    def test_improvement_below_tau_imp(self):
        candidate = DIAG_FAMILY.build(1e-12)

        gap = probe.global_gap(DIAG, DIAG_LIMIT, DIAG_DATA, candidate)

        self.assertEqual(gap.verdict, c.GlobalVerdict.UNDETERMINED)

    def test_equal_norm_candidate_is_not_a_proof(self):
        gap = probe.global_gap(DIAG, DIAG_LIMIT, DIAG_DATA, DIAG_LIMIT)

        self.assertAlmostEqual(gap.ratio, 1.0)
        self.assertEqual(gap.verdict, c.GlobalVerdict.UNDETERMINED)
