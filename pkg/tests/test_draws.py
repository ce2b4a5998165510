import logging
import unittest

import numpy as np

from uncertainpooling.exceptions import DomainError, NotFound
from uncertainpooling.pooling.draws import (gold_standard_posterior, interval_of,
                                            overall_effect_interval, sample_mu, summarize)
from uncertainpooling.pooling.partitions import Partition, PartitionPrior, rank_partition
from uncertainpooling.pooling.posterior import GridSpec, JointPosterior, compute_joint_posterior
from uncertainpooling.studydata import Study, StudySet, bundled_dataset

logging.basicConfig(filename='tests.log', level=logging.DEBUG)


def single_cell_posterior(studies, g, delta2):
    """A posterior with all of its mass on one (partition, delta^2) cell."""
    L = len(studies)
    return JointPosterior(
        ids=studies.ids, effects=studies.effects, variances=studies.variances,
        delta2=np.array([delta2]), log_prior_mass=np.zeros(1), pprior=PartitionPrior.UNIFORM,
        log_normalizer=0.0, log_partition=np.zeros(1), delta2_marginal=np.ones(1),
        cell_ranks=np.array([rank_partition(g)]), cell_grid=np.array([0]),
        cell_weights=np.array([1.0]), dropped_mass=0.0, similarity_sum=np.eye(L))


class testSampleMu(unittest.TestCase):

    def setUp(self):
        self.studies = StudySet([Study(1, 'a', 4, 13), Study(2, 'b', 13, 23),
                                 Study(3, 'c', 18, 83)])

    def test_singletons_recover_observed(self):
        jp = single_cell_posterior(self.studies, Partition.singletons(3), 0.5)
        draws = sample_mu(jp, self.studies, 40000, seed=1)
        np.testing.assert_allclose(draws.draws.mean(axis=0), self.studies.effects, atol=0.02)
        np.testing.assert_allclose(draws.draws.var(axis=0), self.studies.variances, rtol=0.05)

    def test_pool_all_shrinks(self):
        jp = single_cell_posterior(self.studies, Partition.pool_all(3), 0.05)
        draws = sample_mu(jp, self.studies, 20000, seed=2)
        means = draws.draws.mean(axis=0)
        spread = np.ptp(self.studies.effects)
        self.assertLess(np.ptp(means), spread)

    def test_deterministic(self):
        jp = compute_joint_posterior(self.studies, GridSpec(points=21))
        a = sample_mu(jp, self.studies, 3000, seed=7)
        b = sample_mu(jp, self.studies, 3000, seed=7)
        np.testing.assert_array_equal(a.draws, b.draws)
        self.assertEqual(a.B, 3000)
        self.assertTrue(np.all((a.probability > 0) & (a.probability < 1)))

    def test_bad_arguments(self):
        jp = single_cell_posterior(self.studies, Partition.singletons(3), 0.5)
        with self.assertRaises(DomainError):
            sample_mu(jp, self.studies, 0, seed=0)
        other = StudySet([Study(1, 'a', 4, 13), Study(2, 'b', 13, 23), Study(9, 'c', 18, 83)])
        with self.assertRaises(DomainError):
            sample_mu(jp, other, 10, seed=0)


class testSummaries(unittest.TestCase):

    def test_constant_values(self):
        s = interval_of(np.full(100, 0.3), 0.95, label=4)
        self.assertAlmostEqual(s.lower, 0.3)
        self.assertAlmostEqual(s.upper, 0.3)
        self.assertEqual(s.to_dict()['id'], 4)

    def test_bad_level(self):
        with self.assertRaises(DomainError):
            interval_of(np.arange(10.0), 1.0)
        with self.assertRaises(DomainError):
            interval_of(np.arange(10.0), 0.0)

    def test_gold_standard_matches_summary(self):
        studies = bundled_dataset('he2020_five')
        jp = compute_joint_posterior(studies, GridSpec(points=21))
        rows = summarize(sample_mu(jp, studies, 4000, seed=3))
        single = gold_standard_posterior(jp, studies, 4, 4000, seed=3)
        self.assertEqual(single, rows[3])
        for row in rows:
            self.assertTrue(0 < row.lower <= row.mean <= row.upper < 1)
        with self.assertRaises(NotFound):
            gold_standard_posterior(jp, studies, 42, 100, seed=3)

    def test_overall_effect(self):
        studies = bundled_dataset('he2020_five')
        s = overall_effect_interval(studies, GridSpec(points=31), B=5000, seed=0)
        self.assertTrue(0 < s.lower < s.mean < s.upper < 1)
        self.assertEqual(s.id, 'overall')
        again = overall_effect_interval(studies, GridSpec(points=31), B=5000, seed=0)
        self.assertEqual(s, again)

    def test_overall_effect_predictive_is_wider(self):
        studies = bundled_dataset('he2020_five')
        grid = GridSpec(points=31)
        mean_only = overall_effect_interval(studies, grid, B=5000, seed=2, predictive=False)
        predictive = overall_effect_interval(studies, grid, B=5000, seed=2)
        self.assertLess(predictive.lower, mean_only.lower)
        self.assertGreater(predictive.upper, mean_only.upper)
        self.assertAlmostEqual(predictive.mean, mean_only.mean, delta=0.05)
