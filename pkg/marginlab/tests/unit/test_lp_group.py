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
from scipy import optimize

from marginlab.convexref import group
from marginlab.convexref import ldp
from marginlab.convexref import lp
from marginlab.dm import models
from marginlab.netcore import network
from marginlab.tests.unit import oracles
from marginlab.tests.unit import test_qp


def _linprog_l1(dataset):
    Z = dataset.y[:, None] * dataset.X
    result = optimize.linprog(
        np.ones(2 * dataset.dim),
        A_ub=-np.hstack([Z, -Z]),
        b_ub=-np.ones(dataset.n),
        bounds=(0, None),
        method="highs",
    )
    return result.fun if result.status == 0 else None


class L1MaxMarginTest(unittest.TestCase):
    def test_separable_coordinates(self):
        dataset = models.Dataset.from_pairs([((1.0, 0.0), 1), ((0.0, 1.0), 1)])

        solution = lp.solve_l1_maxmargin(dataset)

        np.testing.assert_allclose(solution.optimizer, [1.0, 1.0])
        self.assertAlmostEqual(solution.objective, 2.0)

    def test_single_point(self):
        dataset = models.Dataset.from_pairs([((1.0, 2.0), 1)])

        solution = lp.solve_l1_maxmargin(dataset)

        np.testing.assert_allclose(solution.optimizer, [0.0, 0.5], atol=1e-12)
        self.assertAlmostEqual(solution.objective, 0.5)
        self.assertEqual(solution.active_set, [0])
        self.assertLessEqual(solution.kkt_residual, 1e-10)

    def test_infeasible(self):
        dataset = models.Dataset.from_pairs([((1.0,), 1), ((1.0,), -1)])

        self.assertRaises(ldp.Infeasible, lp.solve_l1_maxmargin, dataset)

    def test_basis_budget(self):
        dataset = models.Dataset.from_pairs([((1.0, 2.0), 1)])

        self.assertRaises(
            lp.SolverBudgetExceeded, lp.solve_l1_maxmargin, dataset, max_bases=2
        )

    def test_matches_enumeration_and_linprog(self):
        for seed in range(20):
            dataset = test_qp.random_dataset(seed)
            reference = _linprog_l1(dataset)
            try:
                expected = oracles.brute_force_l1_maxmargin(dataset)
            except ldp.Infeasible:
                self.assertIsNone(reference)
                self.assertRaises(ldp.Infeasible, lp.solve_l1_maxmargin, dataset)
                continue
            solution = lp.solve_l1_maxmargin(dataset)
            self.assertAlmostEqual(
                solution.objective, float(np.sum(np.abs(expected))), delta=1e-6
            )
            self.assertAlmostEqual(solution.objective, reference, delta=1e-6)


class GroupMaxMarginTest(unittest.TestCase):
    def test_diagonal_reduction(self):
        X = np.array([[1.0, 2.0]])

        solution = group.solve_group_maxmargin([X[:, [0]], X[:, [1]]], [1.0])

        self.assertAlmostEqual(solution.objective, 0.5, places=9)
        self.assertAlmostEqual(float(solution.groups[1][0]), 0.5, places=9)
        self.assertAlmostEqual(float(solution.groups[0][0]), 0.0, places=9)
        self.assertEqual(solution.zero_groups, [0])
        self.assertTrue(solution.certified)

    def test_single_group_is_linear_max_margin(self):
        dataset = models.Dataset.from_pairs([((1.0, 0.25), 1), ((-1.0, 0.25), 1)])

        solution = group.solve_group_maxmargin([dataset.X], dataset.y)

        self.assertAlmostEqual(solution.objective, 4.0, places=9)
        np.testing.assert_allclose(solution.multipliers, [2.0, 2.0], rtol=1e-6)
        self.assertTrue(solution.certified)

    def test_gated_four_neurons(self):
        X = np.array([(0.0, 1.0), (1.0, 0.0), (0.0, -1.0), (-1.0, 0.0)])
        gates = (X @ X.T >= 0).astype(int)

        solution = group.solve_group_maxmargin([X] * 4, np.ones(4), gates)

        self.assertLessEqual(solution.objective, 4.0 + 1e-6)
        self.assertAlmostEqual(solution.objective, 4.0, places=5)

    def test_matches_l1_on_coordinate_groups(self):
        for seed in range(20):
            dataset = test_qp.random_dataset(seed)
            groups = [dataset.X[:, [k]] for k in range(dataset.dim)]
            try:
                expected = oracles.brute_force_l1_maxmargin(dataset)
            except ldp.Infeasible:
                self.assertRaises(
                    ldp.Infeasible,
                    group.solve_group_maxmargin,
                    groups,
                    dataset.y,
                )
                continue
            solution = group.solve_group_maxmargin(groups, dataset.y)
            self.assertAlmostEqual(
                solution.objective, float(np.sum(np.abs(expected))), delta=1e-6
            )

    def test_gates_must_be_binary(self):
        X = np.array([[1.0, 2.0]])

        self.assertRaises(
            models.InvalidConfig,
            group.solve_group_maxmargin,
            [X[:, [0]], X[:, [1]]],
            [1.0],
            [[0.5, 1.0]],
        )


class NeuronGroupsTest(unittest.TestCase):
    def test_diagonal_network(self):
        arch = models.ArchSpec.diagonal(2, 2)
        dataset = models.Dataset.from_pairs([((1.0, 0.0), 1), ((0.0, 1.0), 1)])

        groups, gates = group.neuron_groups(arch, dataset)
        solution = group.solve_group_maxmargin(groups, dataset.y, gates)
        theta = group.theta_from_groups(arch, solution)

        self.assertIsNone(gates)
        np.testing.assert_allclose(theta.flat, [1, 1, 1, 1], rtol=1e-6)

    def test_relu_needs_a_point(self):
        arch = models.ArchSpec.fully_connected((2, 2, 1))
        dataset = models.Dataset.from_pairs([((1.0, 0.25), 1)])

        self.assertRaises(
            models.InvalidConfig, group.neuron_groups, arch, dataset
        )

    def test_shared_weights_rejected(self):
        arch = models.ArchSpec.diagonal(2, 3)
        dataset = models.Dataset.from_pairs([((1.0, 1.0), 1)])

        self.assertRaises(
            network.NotApplicable, group.neuron_groups, arch, dataset
        )
