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
from marginlab.convexref import ldp
from marginlab.convexref import qp
from marginlab.dm import models
from marginlab.tests.unit import oracles

H = 1.0 / np.sqrt(2.0)


def random_dataset(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    d = int(rng.integers(1, 4))
    return models.Dataset(rng.standard_normal((n, d)), rng.choice([-1.0, 1.0], n))


class LeastDistanceTest(unittest.TestCase):
    def test_single_halfspace(self):
        result = ldp.least_distance([[3.0, 4.0]], [5.0])

        np.testing.assert_allclose(result.u, [0.6, 0.8])
        np.testing.assert_allclose(result.multipliers, [0.2])
        self.assertEqual(result.active_set, [0])
        self.assertLessEqual(result.kkt_residual, 1e-12)

    def test_origin_is_feasible(self):
        result = ldp.least_distance([[1.0, 0.0]], [-1.0])

        np.testing.assert_allclose(result.u, [0.0, 0.0])
        self.assertEqual(result.active_set, [])

    def test_inconsistent(self):
        self.assertRaises(
            ldp.Infeasible,
            ldp.least_distance,
            [[1.0], [-1.0]],
            [1.0, 1.0],
        )

    def test_size_mismatch(self):
        self.assertRaises(ValueError, ldp.least_distance, np.eye(2), [1.0])


class LinearMaxMarginTest(unittest.TestCase):
    def test_two_points(self):
        dataset = models.Dataset.from_pairs([((1.0, 0.25), 1), ((-1.0, 0.25), 1)])

        solution = qp.solve_linear_maxmargin(dataset)

        np.testing.assert_allclose(solution.optimizer, [0.0, 4.0], atol=1e-12)
        self.assertAlmostEqual(solution.norm, 4.0)
        self.assertAlmostEqual(solution.objective, 8.0)

    def test_single_point(self):
        dataset = models.Dataset.from_pairs([((1.0, 2.0), 1)])

        solution = qp.solve_linear_maxmargin(dataset)

        np.testing.assert_allclose(solution.optimizer, [0.2, 0.4])

    def test_four_directions_are_not_separable(self):
        X = np.array([(0.0, 1.0), (1.0, 0.0), (0.0, -1.0), (-1.0, 0.0)])

        self.assertRaises(
            ldp.Infeasible, qp.solve_linear_maxmargin, models.Dataset(X, np.ones(4))
        )

    def test_matches_enumeration(self):
        for seed in range(20):
            dataset = random_dataset(seed)
            try:
                expected = oracles.brute_force_linear_maxmargin(dataset)
            except ldp.Infeasible:
                self.assertRaises(
                    ldp.Infeasible, qp.solve_linear_maxmargin, dataset
                )
                continue
            solution = qp.solve_linear_maxmargin(dataset)
            self.assertAlmostEqual(
                solution.objective, 0.5 * float(expected @ expected), delta=1e-6
            )
            self.assertLessEqual(solution.kkt_residual, 1e-8)


class PerLayerQpTest(unittest.TestCase):
    def test_diagonal_first_layer(self):
        arch = models.ArchSpec.diagonal(2, 2)
        dataset = models.Dataset.from_pairs([((1.0, 2.0), 1)])
        theta = models.ParamVec.of((1, 0), (1, 0))

        solution = qp.solve_per_layer_qp(arch, theta, 1, dataset)

        np.testing.assert_allclose(solution.optimizer, [1.0, 0.0])
        self.assertEqual(solution.problem, "layer_1")

    def test_shared_filter_layer(self):
        arch = models.ArchSpec.patch_conv(2, 2, c.Activation.RELU)
        dataset = models.Dataset.from_pairs([((4.0, H, -4.0, H), 1)])
        theta = models.ParamVec.of((0, 1), (H, H))

        solution = qp.solve_per_layer_qp(arch, theta, 1, dataset)

        np.testing.assert_allclose(solution.optimizer, [0.0, 1.0], atol=1e-12)

    def test_last_layer_is_a_projection(self):
        arch = models.ArchSpec.fully_connected((2, 2, 1), c.Activation.LINEAR)
        dataset = models.Dataset.from_pairs([((1.0, 0.0), 1)])
        theta = models.ParamVec.of((1, 0, 1, 1), (1, 1))

        solution = qp.solve_per_layer_qp(arch, theta, 2, dataset)

        # a = W1 x = (1, 1)
        np.testing.assert_allclose(solution.optimizer, [0.5, 0.5])

    def test_zero_preactivation_is_reported(self):
        arch = models.ArchSpec.fully_connected((2, 2, 1))
        dataset = models.Dataset.from_pairs([((1.0, 0.25), 1), ((-1.0, 0.25), 1)])
        theta = models.ParamVec.of((0, 2, 0, 0), (2, 0))

        self.assertRaises(
            qp.ZeroPreactivation, qp.solve_per_layer_qp, arch, theta, 1, dataset
        )
        result = qp.per_layer_verdict(arch, theta, 1, dataset)
        self.assertEqual(result.verdict, c.LayerVerdict.UNDETERMINED)

    def test_layer_out_of_range(self):
        arch = models.ArchSpec.diagonal(2, 2)

        self.assertRaises(
            models.InvalidConfig,
            qp.solve_per_layer_qp,
            arch,
            models.ParamVec.of((1, 0), (1, 0)),
            3,
            models.Dataset.from_pairs([((1.0, 2.0), 1)]),
        )


class PerLayerVerdictTest(unittest.TestCase):
    def test_linear_layers_are_global(self):
        arch = models.ArchSpec.diagonal(2, 2)
        dataset = models.Dataset.from_pairs([((1.0, 2.0), 1)])
        theta = models.ParamVec.of((1, 0), (1, 0))

        for layer in (1, 2):
            result = qp.per_layer_verdict(arch, theta, layer, dataset)
            self.assertEqual(result.verdict, c.LayerVerdict.GLOBAL)
            self.assertLessEqual(result.deviation, 1e-3)

    def test_relu_inner_layer_is_local(self):
        arch = models.ArchSpec.patch_conv(2, 2, c.Activation.RELU)
        dataset = models.Dataset.from_pairs([((4.0, H, -4.0, H), 1)])
        theta = models.ParamVec.of((0, 1), (H, H))

        self.assertEqual(
            qp.per_layer_verdict(arch, theta, 1, dataset).verdict,
            c.LayerVerdict.LOCAL,
        )
        self.assertEqual(
            qp.per_layer_verdict(arch, theta, 2, dataset).verdict,
            c.LayerVerdict.GLOBAL,
        )

    def test_layer_with_smaller_optimum(self):
        arch = models.ArchSpec.diagonal(2, 2)
        dataset = models.Dataset.from_pairs([((1.0, 2.0), 1)])
        # Margin 3, the first layer alone can shrink
        theta = models.ParamVec.of((1, 1), (1, 1))

        result = qp.per_layer_verdict(arch, theta, 1, dataset)

        self.assertEqual(result.verdict, c.LayerVerdict.NOT_LOCAL)
