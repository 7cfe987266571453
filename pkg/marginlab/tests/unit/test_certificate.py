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
from marginlab.kktcert import certificate
from marginlab.kktcert import nnls
from marginlab.netcore import network

H = 1.0 / np.sqrt(2.0)


class MarginsTest(unittest.TestCase):
    def setUp(self):
        self.arch = models.ArchSpec.diagonal(2, 2)
        self.dataset = models.Dataset.from_pairs([((1.0, 2.0), 1)])

    def test_limit_point(self):
        theta = models.ParamVec.of((1, 0), (1, 0))

        np.testing.assert_allclose(
            certificate.margins(self.arch, theta, self.dataset), [1.0]
        )

    def test_doubled_point(self):
        theta = models.ParamVec.of((2, 0), (2, 0))

        np.testing.assert_allclose(
            certificate.margins(self.arch, theta, self.dataset), [4.0]
        )

    def test_shared_filter_witness(self):
        arch = models.ArchSpec.patch_conv(2, 2, c.Activation.LINEAR)
        dataset = models.Dataset.from_pairs([((4.0, H, -4.0, H), 1)])
        r = np.sqrt(0.1)
        witness = models.ParamVec.of((r, 0.9), (H + r / 2, H - r / 2))

        np.testing.assert_allclose(
            certificate.margins(arch, witness, dataset), [1.3], atol=1e-12
        )


class RescaleTest(unittest.TestCase):
    def test_two_neuron_direction(self):
        arch = models.ArchSpec.fully_connected((2, 2, 1))
        dataset = models.Dataset.from_pairs([((1.0, 0.25), 1), ((-1.0, 0.25), 1)])
        direction = models.ParamVec.of((0, 2, 0, 0), (2, 0)).unit()

        scale = certificate.unit_margin_scale(arch, direction, dataset)
        theta = certificate.rescale_to_unit_margin(arch, direction, dataset)

        self.assertAlmostEqual(scale, np.sqrt(8.0))
        np.testing.assert_allclose(theta.flat, [0, 2, 0, 0, 2, 0], atol=1e-12)

    def test_already_unit_margin(self):
        arch = models.ArchSpec.diagonal(2, 2)
        dataset = models.Dataset.from_pairs([((1.0, 0.0), 1)])
        direction = models.ParamVec.of((H, 0), (H, 0)).scaled(np.sqrt(2.0))

        self.assertAlmostEqual(
            certificate.unit_margin_scale(arch, direction, dataset), 1.0
        )

    def test_deep_diagonal(self):
        arch = models.ArchSpec.diagonal(2, 3)
        dataset = models.Dataset.from_pairs([((1.0, 1.0), 1)])
        direction = models.ParamVec.of(*[np.full(2, 6**-0.5)] * 3)

        theta = certificate.rescale_to_unit_margin(arch, direction, dataset)

        np.testing.assert_allclose(theta.flat, 2 ** (-1 / 3), rtol=1e-12)

    def test_not_separating(self):
        arch = models.ArchSpec.diagonal(2, 2)
        dataset = models.Dataset.from_pairs([((1.0, 2.0), -1)])

        self.assertRaises(
            certificate.NotSeparatingDirection,
            certificate.unit_margin_scale,
            arch,
            models.ParamVec.of((1, 0), (1, 0)),
            dataset,
        )


class KktCertificateTest(unittest.TestCase):
    def test_diagonal_limit(self):
        arch = models.ArchSpec.diagonal(2, 2)
        dataset = models.Dataset.from_pairs([((1.0, 2.0), 1)])

        cert = certificate.kkt_certificate(
            arch, models.ParamVec.of((1, 0), (1, 0)), dataset
        )

        self.assertEqual(cert.verdict, c.KktVerdict.KKT)
        self.assertEqual(cert.active_set, [0])
        np.testing.assert_allclose(cert.multipliers, [1.0])
        self.assertLessEqual(cert.residual, 1e-12)

    def test_doubled_point_has_no_active_constraint(self):
        arch = models.ArchSpec.diagonal(2, 2)
        dataset = models.Dataset.from_pairs([((1.0, 2.0), 1)])
        theta = models.ParamVec.of((2, 0), (2, 0))

        cert = certificate.kkt_certificate(arch, theta, dataset)

        self.assertEqual(cert.verdict, c.KktVerdict.NOT_KKT)
        self.assertEqual(cert.active_set, [])
        self.assertAlmostEqual(cert.residual, theta.norm)

    def test_two_neuron_limit(self):
        arch = models.ArchSpec.fully_connected((2, 2, 1))
        dataset = models.Dataset.from_pairs([((1.0, 0.25), 1), ((-1.0, 0.25), 1)])

        cert = certificate.kkt_certificate(
            arch, models.ParamVec.of((0, 2, 0, 0), (2, 0)), dataset
        )

        self.assertEqual(cert.verdict, c.KktVerdict.KKT)
        self.assertEqual(cert.active_set, [0, 1])
        np.testing.assert_allclose(cert.multipliers, [2.0, 2.0])
        self.assertLessEqual(cert.relative_residual, 1e-10)
        self.assertTrue(cert.kink_contact)

    def test_infeasible_point(self):
        arch = models.ArchSpec.diagonal(2, 2)
        dataset = models.Dataset.from_pairs([((1.0, 2.0), 1)])

        cert = certificate.kkt_certificate(
            arch, models.ParamVec.of((0.9, 0), (1, 0)), dataset
        )

        self.assertEqual(cert.verdict, c.KktVerdict.INFEASIBLE)

    def test_verdict_is_sound(self):
        arch = models.ArchSpec.diagonal(2, 2)
        dataset = models.Dataset.from_pairs([((1.0, 2.0), 1), ((1.0, 0.5), 1)])
        theta = models.ParamVec.of((1, 0), (1, 0))

        cert = certificate.kkt_certificate(arch, theta, dataset)

        if cert.verdict == c.KktVerdict.KKT:
            tol = cert.tolerances
            self.assertTrue(np.all(cert.margins >= 1 - tol.tau_feas))
            self.assertTrue(np.all(cert.multipliers >= 0))
            self.assertLessEqual(cert.complementarity, tol.tau_comp)
            self.assertLessEqual(cert.relative_residual, tol.tau_stat)

    def test_non_finite_point(self):
        arch = models.ArchSpec.diagonal(2, 2)
        dataset = models.Dataset.from_pairs([((1.0, 2.0), 1)])

        self.assertRaises(
            models.InvalidConfig,
            certificate.kkt_certificate,
            arch,
            models.ParamVec.of((np.nan, 0), (1, 0)),
            dataset,
        )

    def test_dataset_order_does_not_matter(self):
        arch = models.ArchSpec.fully_connected((2, 2, 1))
        dataset = models.Dataset.from_pairs(
            [((1.0, 0.25), 1), ((-1.0, 0.25), 1), ((0.0, -1.0), 1)]
        )
        order = [2, 0, 1]
        for theta in (
            models.ParamVec.of((0, 2, 0, -1), (2, 1)),
            models.ParamVec.of((0, 4, 0, -1), (2, 1)),
        ):
            with self.subTest(theta=theta.flat.tolist()):
                cert = certificate.kkt_certificate(arch, theta, dataset)
                moved = certificate.kkt_certificate(
                    arch, theta, dataset.permuted(order)
                )

                self.assertEqual(moved.verdict, cert.verdict)
                self.assertAlmostEqual(moved.residual, cert.residual, places=12)
                self.assertEqual(
                    sorted(order[i] for i in moved.active_set), cert.active_set
                )
                np.testing.assert_allclose(
                    moved.multipliers, cert.multipliers[order], atol=1e-12
                )

    def test_multipliers_solve_the_nnls_subproblem(self):
        rng = np.random.default_rng(8)
        arch = models.ArchSpec.fully_connected((3, 4, 1))
        tolerances = models.KktTolerances(tau_act=0.5)
        checked = 0
        while checked < 30:
            dataset = models.Dataset(
                rng.standard_normal((5, 3)), rng.choice([-1.0, 1.0], size=5)
            )
            direction = models.ParamVec.from_flat(
                arch, rng.standard_normal(arch.n_params)
            )
            if np.min(network.margins(arch, direction, dataset)) <= 0:
                continue
            checked += 1
            theta = certificate.rescale_to_unit_margin(arch, direction, dataset)

            cert = certificate.kkt_certificate(arch, theta, dataset, tolerances)

            self.assertLessEqual(cert.nnls_residual, 1e-10)
            _, J = network.evaluate(arch, theta, dataset.X)
            active = cert.active_set
            G = (J[active] * dataset.y[active, None]).T
            lam = cert.multipliers[active]
            self.assertTrue(np.all(lam >= 0))
            g = G.T @ (G @ lam - theta.flat)
            self.assertTrue(np.all(g >= -1e-10))
            np.testing.assert_allclose(g[lam > 0], 0.0, atol=1e-10)
            self.assertAlmostEqual(
                nnls.optimality_residual(G, theta.flat, lam), cert.nnls_residual
            )


class RefineLimitTest(unittest.TestCase):
    def setUp(self):
        self.arch = models.ArchSpec.fully_connected((2, 2, 1))
        self.dataset = models.Dataset.from_pairs(
            [((1.0, 0.25), 1), ((-1.0, 0.25), 1), ((0.0, -1.0), 1)]
        )
        self.limit = models.ParamVec.of((0, 2, 0, -1), (2, 1))

    def test_lands_on_the_kkt_point(self):
        nearby = certificate.rescale_to_unit_margin(
            self.arch,
            models.ParamVec.of((1e-4, 2.001, 0, -0.9995), (2.0004, 1.0002)),
            self.dataset,
        )
        before = certificate.kkt_certificate(self.arch, nearby, self.dataset)

        refined = certificate.refine_limit(self.arch, nearby, self.dataset)

        self.assertEqual(before.verdict, c.KktVerdict.NOT_KKT)
        self.assertIsNotNone(refined)
        np.testing.assert_allclose(refined.flat, self.limit.flat, atol=1e-8)
        cert = certificate.kkt_certificate(self.arch, refined, self.dataset)
        self.assertEqual(cert.verdict, c.KktVerdict.KKT)
        self.assertLessEqual(cert.complementarity, 1e-9)

    def test_exact_point_stays(self):
        refined = certificate.refine_limit(self.arch, self.limit, self.dataset)

        np.testing.assert_allclose(refined.flat, self.limit.flat, atol=1e-12)

    def test_kink_is_left_alone(self):
        dataset = models.Dataset.from_pairs([((1.0, 0.25), 1), ((-1.0, 0.25), 1)])

        self.assertIsNone(
            certificate.refine_limit(
                self.arch, models.ParamVec.of((0, 2, 0, 0), (2, 0)), dataset
            )
        )

    def test_far_point_is_rejected(self):
        far = certificate.rescale_to_unit_margin(
            self.arch,
            models.ParamVec.of((0, 3, 0, -1), (2, 1)),
            self.dataset,
        )

        self.assertIsNone(certificate.refine_limit(self.arch, far, self.dataset))
