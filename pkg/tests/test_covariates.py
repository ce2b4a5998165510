import io
import logging
import unittest

import numpy as np

from uncertainpooling.exceptions import SingularDesign, ValidationError
from uncertainpooling.pooling.covariates import (CovariateDesign, beta_conditional,
                                                 load_covariates, sample_mu_beta)
from uncertainpooling.pooling.posterior import GridSpec, compute_joint_posterior
from uncertainpooling.studydata import bundled_dataset

logging.basicConfig(filename='tests.log', level=logging.DEBUG)


class testBetaConditional(unittest.TestCase):

    def setUp(self):
        self.studies = bundled_dataset('he2020_five')
        self.y = self.studies.effects
        self.v = self.studies.variances

    def test_zero_residuals(self):
        d, _ = beta_conditional(self.y, self.studies, np.arange(5.0))
        np.testing.assert_allclose(d, [0.0], atol=1e-12)

    def test_intercept_column(self):
        mu = self.y - np.array([0.3, -0.1, 0.2, 0.0, 0.5])
        d, A = beta_conditional(mu, self.studies, np.ones(5))
        w = 1.0 / self.v
        self.assertAlmostEqual(A[0, 0], w.sum())
        self.assertAlmostEqual(d[0], np.sum(w * (self.y - mu)) / w.sum())

    def test_linear_in_residuals(self):
        X = np.column_stack([np.ones(5), [0.1, 0.4, 0.2, 0.9, 0.5]])
        mu = self.y - np.array([0.3, -0.1, 0.2, 0.0, 0.5])
        d1, _ = beta_conditional(mu, self.studies, X)
        d2, _ = beta_conditional(self.y - 2 * (self.y - mu), self.studies, X)
        np.testing.assert_allclose(d2, 2 * d1)

    def test_orthogonal_columns(self):
        # columns orthogonal under V give a diagonal precision
        w = 1.0 / self.v
        a = np.ones(5)
        b = np.array([1.0, -1.0, 0.0, 0.0, 0.0])
        b = b - a * np.sum(w * a * b) / np.sum(w * a * a)
        _, A = beta_conditional(self.y, self.studies, np.column_stack([a, b]))
        self.assertAlmostEqual(A[0, 1], 0.0, delta=1e-9)


class testDesign(unittest.TestCase):

    def test_defaults(self):
        design = CovariateDesign(np.arange(4.0))
        self.assertEqual(design.names, ['x1'])
        self.assertEqual(design.ids, [1, 2, 3, 4])
        self.assertEqual(design.p, 1)

    def test_singular(self):
        with self.assertRaises(SingularDesign):
            CovariateDesign(np.column_stack([np.ones(4), 2 * np.ones(4)]))
        with self.assertRaises(SingularDesign):
            CovariateDesign(np.ones((2, 2)))

    def test_load_csv(self):
        studies = bundled_dataset('he2020_five')
        data = b'study_id,age,male\n5,40,0.5\n1,31,0.4\n2,35,0.6\n3,38,0.5\n4,44,0.3\n'
        design = load_covariates(io.BytesIO(data), studies)
        self.assertEqual(design.names, ['age', 'male'])
        np.testing.assert_array_equal(design.X[:, 0], [31, 35, 38, 44, 40])

    def test_load_errors(self):
        studies = bundled_dataset('he2020_five')
        with self.assertRaises(ValidationError):
            load_covariates(io.BytesIO(b'study_id,age\n1,31\n2,35\n'), studies)
        with self.assertRaises(ValidationError):
            load_covariates(io.BytesIO(b'study_id,age\n1,31\n2,x\n3,1\n4,2\n5,3\n'), studies)
        with self.assertRaises(ValidationError):
            load_covariates(io.BytesIO(b'id,age\n1,31\n'), studies)


class testSampleMuBeta(unittest.TestCase):

    def test_moments_match_conditional(self):
        studies = bundled_dataset('he2020_five')
        jp = compute_joint_posterior(studies, GridSpec(points=21))
        X = np.ones(5)
        out = sample_mu_beta(jp, studies, X, 20000, seed=4)
        self.assertEqual(out.beta.shape, (20000, 1))
        w = 1.0 / studies.variances
        residual_means = (studies.effects[None, :] - out.mu.draws) @ w / w.sum()
        # beta | mu has variance 1 / sum(w) around the weighted mean residual
        noise = out.beta[:, 0] - residual_means
        self.assertAlmostEqual(noise.mean(), 0.0, delta=0.01)
        self.assertAlmostEqual(noise.var() * w.sum(), 1.0, delta=0.05)
        summary = out.summaries(0.9)[0]
        self.assertEqual(summary.id, 'x1')
        self.assertLess(summary.lower, summary.upper)
