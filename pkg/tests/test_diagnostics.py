import io
import logging
import unittest
from types import SimpleNamespace

import numpy as np
from lxml import etree
from scipy.special import logsumexp

from uncertainpooling.exceptions import DomainError
from uncertainpooling.pooling.diagnostics import (PpcResult, SimilarityMatrix, SimilaritySource,
                                                  dominant_cluster_probability,
                                                  dominant_predicate,
                                                  partition_class_probability,
                                                  posterior_predictive_pvalue,
                                                  read_similarity_csv, render_similarity,
                                                  similarity_from_assignments,
                                                  similarity_from_grid)
from uncertainpooling.pooling.moments import log_joint_weight
from uncertainpooling.pooling.partitions import enumerate_partitions
from uncertainpooling.pooling.posterior import GridSpec, VariancePrior, sweep_joint_posterior
from uncertainpooling.studydata import bundled_dataset

logging.basicConfig(filename='tests.log', level=logging.DEBUG)

SVG = '{http://www.w3.org/2000/svg}'


class testSimilarityFromGrid(unittest.TestCase):

    def test_four_study_oracle(self):
        effects = np.array([-1.1, -0.9, 0.4, 1.5])
        variances = np.array([0.2, 0.3, 0.25, 0.1])
        grid = GridSpec(delta2_min=1e-2, delta2_max=10.0, points=9)
        log_mass = grid.log_prior_mass(VariancePrior())
        jp = sweep_joint_posterior(effects, variances, grid.values(), log_mass)
        sm = similarity_from_grid(jp)

        weights, together = [], []
        for g in enumerate_partitions(4):
            labels = np.array(g.assignment)
            for d, m in zip(grid.values(), log_mass):
                weights.append(log_joint_weight(g, d, effects, variances, log_prior_delta2=m))
                together.append(labels[:, None] == labels[None, :])
        p = np.exp(np.array(weights) - logsumexp(weights))
        expected = np.einsum('c,cij->ij', p, np.array(together, dtype=float))
        np.testing.assert_allclose(sm.matrix, expected, atol=1e-12)
        self.assertEqual(sm.source, SimilaritySource.GRID)

    def test_two_studies_pool_all(self):
        grid = GridSpec(points=21, keep_mass=1.0)
        jp = sweep_joint_posterior([0.2, 0.9], [0.3, 0.4], grid.values(),
                                   grid.log_prior_mass(VariancePrior()))
        sm = similarity_from_grid(jp)
        self.assertAlmostEqual(sm.matrix[0, 1], jp.pool_all_probability, delta=1e-12)
        np.testing.assert_array_equal(np.diag(sm.matrix), [1.0, 1.0])


class testSimilarityMatrix(unittest.TestCase):

    def test_from_assignments(self):
        chain = [[0, 0, 1], [0, 1, 1], [0, 0, 0], [0, 1, 2]]
        sm = similarity_from_assignments(chain, [4, 5, 6], SimilaritySource.RJ_CHAIN)
        self.assertAlmostEqual(sm.probability(4, 5), 0.5)
        self.assertAlmostEqual(sm.probability(5, 6), 0.5)
        self.assertAlmostEqual(sm.probability(4, 6), 0.25)
        with self.assertRaises(DomainError):
            similarity_from_assignments([], [1], SimilaritySource.RJ_CHAIN)

    def test_categories(self):
        sm = SimilarityMatrix(np.array([[1.0, 0.2], [0.2, 1.0]]), [1, 2], SimilaritySource.GRID)
        np.testing.assert_array_equal(sm.categories(), [[4, 1], [1, 4]])

    def test_shape_checked(self):
        with self.assertRaises(DomainError):
            SimilarityMatrix(np.ones((2, 3)), [1, 2], SimilaritySource.GRID)

    def test_csv_reads_back(self):
        m = np.array([[1.0, 0.123456789012, 0.5], [0.123456789012, 1.0, 0.0],
                      [0.5, 0.0, 1.0]])
        sm = SimilarityMatrix(m, [2, 7, 9], SimilaritySource.DPM_CHAIN)
        again = read_similarity_csv(io.BytesIO(render_similarity(sm, 'csv')),
                                    SimilaritySource.DPM_CHAIN)
        self.assertEqual(again.ids, [2, 7, 9])
        np.testing.assert_array_equal(again.matrix, sm.matrix)

    def test_svg(self):
        sm = SimilarityMatrix(np.array([[1.0, 0.1, 0.7], [0.1, 1.0, 0.45], [0.7, 0.45, 1.0]]),
                              [1, 2, 3], SimilaritySource.GRID)
        root = etree.fromstring(render_similarity(sm, 'svg'))
        cells = root.findall('{0}g[@id="cells"]/{0}rect'.format(SVG))
        self.assertEqual(len(cells), 9)
        classes = {(c.get('data-row'), c.get('data-col')): c.get('class') for c in cells}
        self.assertEqual(classes[('1', '3')], 'bin-3')
        self.assertEqual(classes[('2', '3')], 'bin-2')
        self.assertEqual(classes[('1', '2')], 'bin-0')

    def test_svg_single_study(self):
        sm = SimilarityMatrix(np.array([[1.0]]), [5], SimilaritySource.GRID)
        root = etree.fromstring(render_similarity(sm, 'svg'))
        cells = root.findall('{0}g[@id="cells"]/{0}rect'.format(SVG))
        self.assertEqual([c.get('class') for c in cells], ['bin-4'])

    def test_unsupported_format(self):
        sm = SimilarityMatrix(np.eye(2), [1, 2], SimilaritySource.GRID)
        with self.assertRaises(DomainError):
            render_similarity(sm, 'png')


class testClassProbabilities(unittest.TestCase):

    def test_dominant(self):
        studies = bundled_dataset('he2020_five')
        grid = GridSpec(points=21)
        jp = sweep_joint_posterior(studies.effects, studies.variances, grid.values(),
                                   grid.log_prior_mass(VariancePrior()))
        self.assertAlmostEqual(dominant_cluster_probability(jp, 4),
                               partition_class_probability(jp, dominant_predicate(4)),
                               delta=1e-14)
        self.assertAlmostEqual(partition_class_probability(jp, lambda g: True), 1.0,
                               delta=1e-12)


class testPosteriorPredictive(unittest.TestCase):

    def setUp(self):
        self.studies = bundled_dataset('he2020_five')
        self.grid = GridSpec(points=41)

    def test_minimum_replicates(self):
        with self.assertRaises(DomainError):
            posterior_predictive_pvalue(self.studies, self.grid, replicates=999)

    def test_deterministic_and_thread_independent(self):
        runs = [posterior_predictive_pvalue(self.studies, self.grid, replicates=12000, seed=5,
                                            threads=threads)
                for threads in (1, 2, 8)]
        for r in runs[1:]:
            self.assertEqual(r.exceedances, runs[0].exceedances)
            self.assertEqual(r.observed, runs[0].observed)
        self.assertTrue(0.0 <= runs[0].p_value <= 1.0)
        self.assertEqual(runs[0].num_replicates, 12000)

    def test_study_order_does_not_matter(self):
        shuffled = self.studies.subset([4, 1, 5, 3, 2])
        a = posterior_predictive_pvalue(self.studies, self.grid, replicates=5000, seed=1)
        b = posterior_predictive_pvalue(shuffled, self.grid, replicates=5000, seed=1)
        self.assertEqual(a.exceedances, b.exceedances)

    def test_default_prior_is_tight_invgamma(self):
        tight = VariancePrior(VariancePrior.INVGAMMA, 11.01, 0.001)
        a = posterior_predictive_pvalue(self.studies, self.grid, replicates=2000, seed=7)
        b = posterior_predictive_pvalue(self.studies, self.grid, tight, replicates=2000, seed=7)
        self.assertEqual(a.exceedances, b.exceedances)
        # the five heterogeneous studies are rejected outright
        self.assertLess(a.p_value, 0.01)
        loose = posterior_predictive_pvalue(self.studies, self.grid, VariancePrior(),
                                            replicates=2000, seed=7)
        self.assertGreater(loose.p_value, 0.1)

    def test_pool_all_data_are_not_rejected(self):
        rng = np.random.default_rng(2024)
        for vprior, delta2 in ((None, 3e-4), (VariancePrior(), 0.1)):
            pvalues = []
            for _ in range(50):
                variances = rng.uniform(0.05, 0.3, size=6)
                mu = -0.5 + np.sqrt(delta2) * rng.standard_normal(6)
                effects = mu + np.sqrt(variances) * rng.standard_normal(6)
                fake = SimpleNamespace(effects=effects, variances=variances)
                pvalues.append(posterior_predictive_pvalue(
                    fake, vprior=vprior, replicates=1000,
                    seed=int(rng.integers(1 << 30))).p_value)
            self.assertTrue(0.25 < np.mean(pvalues) < 0.75)

    def test_reporting_below_resolution(self):
        r = PpcResult(0.0, 1000, 0)
        self.assertTrue(r.below_resolution)
        self.assertEqual(r.describe(), '< 0.001')
        self.assertEqual(r.to_dict()['reported'], '< 0.001')
        self.assertEqual(PpcResult(0.25, 1000, 250).describe(), '0.25')
