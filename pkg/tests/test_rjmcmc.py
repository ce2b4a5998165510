import itertools
import logging
import math
import unittest
from types import SimpleNamespace

import numpy as np
from scipy.integrate import quad
from scipy.stats import beta as beta_dist
from scipy.stats import binom

from uncertainpooling.exceptions import ResourceLimit, ValidationError
from uncertainpooling.mcmc.rjmcmc import (RjConfig, RjState, alpha_log_acceptance,
                                          birth_probability, gibbs_theta, log_joint, mh_alpha,
                                          partition_frequencies, propose_merge, propose_split,
                                          q_log_acceptance, quadrature_partition_posterior,
                                          quadrature_posterior, rj_summaries, run_rj_chain,
                                          run_rj_chains, split_interval)
from uncertainpooling.pooling.partitions import Partition

logging.basicConfig(filename='tests.log', level=logging.DEBUG)


def counts(events, trials):
    return SimpleNamespace(events=np.array(events), trials=np.array(trials),
                           ids=list(range(1, len(events) + 1)))


class testLogJoint(unittest.TestCase):

    def test_hand_value(self):
        state = RjState(Partition.pool_all(1), [0.5], 100.0, [0.4])
        expected = (-math.log(100.0) - math.log(math.log(10.0))
                    + beta_dist.logpdf(0.4, 50.0, 50.0) + binom.logpmf(1, 2, 0.4))
        self.assertAlmostEqual(log_joint(state, counts([1], [2])), expected, places=10)

    def test_support(self):
        data = counts([1, 3], [5, 6])
        good = RjState(Partition.singletons(2), [0.3, 0.5], 200.0, [0.2, 0.5])
        self.assertTrue(np.isfinite(log_joint(good, data)))
        for bad in (RjState(good.g, [0.3, 0.5], 99.0, [0.2, 0.5]),
                    RjState(good.g, [0.3, 1.0], 200.0, [0.2, 0.5]),
                    RjState(good.g, [0.3, 0.5], 200.0, [0.0, 0.5])):
            self.assertEqual(log_joint(bad, data), -np.inf)
            self.assertFalse(bad.is_valid((100.0, 1000.0)))

    def test_relabel_invariance(self):
        data = counts([1, 3, 2], [5, 6, 7])
        base = RjState(Partition([0, 1, 0]), [0.6, 0.3], 150.0, [0.4, 0.35, 0.5])
        moved = base.relabeled(np.array([1, 0, 1]), [0.3, 0.6])
        self.assertEqual(moved.g, base.g)
        np.testing.assert_array_equal(moved.alpha, base.alpha)
        self.assertEqual(log_joint(moved, data), log_joint(base, data))


class testGibbsTheta(unittest.TestCase):

    def test_conjugate_moments(self):
        L = 20000
        data = counts([10] * L, [20] * L)
        state = RjState(Partition.pool_all(L), [0.5], 200.0, np.full(L, 0.5))
        theta = gibbs_theta(state, data, np.random.default_rng(0))
        self.assertAlmostEqual(theta.mean(), 0.5, delta=0.002)
        self.assertAlmostEqual(theta.var(), 0.25 / 221.0, delta=0.03 * 0.25 / 221.0)

    def test_shrinks_toward_block_mean(self):
        L = 5000
        data = counts([2] * L, [20] * L)
        state = RjState(Partition.pool_all(L), [0.5], 100.0, np.full(L, 0.5))
        theta = gibbs_theta(state, data, np.random.default_rng(1))
        self.assertTrue(0.1 < theta.mean() < 0.5)
        self.assertAlmostEqual(theta.mean(), 52.0 / 120.0, delta=0.003)


class testMetropolisSteps(unittest.TestCase):

    def test_alpha_no_move(self):
        state = RjState(Partition([0, 0, 1]), [0.3, 0.6], 150.0, [0.25, 0.4, 0.7])
        self.assertEqual(alpha_log_acceptance(state, 0, 0.3), 0.0)
        self.assertEqual(alpha_log_acceptance(state, 0, 1.2), -np.inf)

    def test_alpha_symmetry(self):
        state = RjState(Partition.pool_all(3), [0.3], 150.0, [0.5, 0.5, 0.5])
        self.assertAlmostEqual(alpha_log_acceptance(state, 0, 0.7), 0.0, places=10)

    def test_alpha_long_run_mean(self):
        theta = np.array([0.3, 0.35, 0.4])
        q = 100.0

        def density(a):
            return math.exp(sum(beta_dist.logpdf(t, q * a, q * (1 - a)) for t in theta))

        expected = quad(lambda a: a * density(a), 0.01, 0.99, points=[0.35])[0] / quad(
            density, 0.01, 0.99, points=[0.35])[0]
        state = RjState(Partition.pool_all(3), [0.5], q, theta)
        rng = np.random.default_rng(5)
        values = []
        for it in range(30000):
            mh_alpha(state, 0, 0.3, rng)
            if it >= 2000:
                values.append(state.alpha[0])
        self.assertAlmostEqual(np.mean(values), expected, delta=0.01)

    def test_q_support_and_direction(self):
        state = RjState(Partition.pool_all(3), [0.5], 100.0, [0.499, 0.5, 0.501])
        self.assertEqual(q_log_acceptance(state, 1001.0, (100.0, 1000.0)), -np.inf)
        self.assertEqual(q_log_acceptance(state, 99.0, (100.0, 1000.0)), -np.inf)
        self.assertGreater(q_log_acceptance(state, 900.0, (100.0, 1000.0)), 0.0)


class testSplitMerge(unittest.TestCase):

    def test_birth_probability(self):
        self.assertEqual(birth_probability(1, 5), 1.0)
        self.assertEqual(birth_probability(5, 5), 0.0)
        self.assertEqual(birth_probability(3, 5, 0.4), 0.4)

    def test_split_interval(self):
        lo, hi = split_interval(0.4, 0.5)
        self.assertAlmostEqual(lo, -0.8)
        self.assertAlmostEqual(hi, 0.8)
        for t in (lo, hi):
            a1, a2 = 0.4 + 0.5 * t, 0.4 - 0.5 * t
            self.assertTrue(-1e-12 <= a1 <= 1 + 1e-12 and -1e-12 <= a2 <= 1 + 1e-12)

    def check_round_trip(self, state):
        rng = np.random.default_rng(0)
        proposal = None
        while proposal is None:
            proposal = propose_split(state, rng)
        split, log_split = proposal
        self.assertEqual(split.g.num_blocks, state.g.num_blocks + 1)
        self.assertTrue(np.all((split.alpha > 0) & (split.alpha < 1)))
        found = False
        for pair in itertools.permutations(range(split.g.num_blocks), 2):
            merged, log_merge = propose_merge(split, rng, pair=pair)
            if merged.g == state.g and np.allclose(merged.alpha, state.alpha):
                self.assertAlmostEqual(log_split + log_merge, 0.0, places=9)
                found = True
        self.assertTrue(found)

    def test_round_trip_pool_all(self):
        self.check_round_trip(RjState(Partition.pool_all(3), [0.4], 200.0, [0.3, 0.4, 0.5]))

    def test_round_trip_two_blocks(self):
        self.check_round_trip(RjState(Partition([0, 0, 1, 1, 1]), [0.2, 0.7], 200.0,
                                      [0.2, 0.25, 0.6, 0.7, 0.75]))


class testChains(unittest.TestCase):

    def test_config_validation(self):
        with self.assertRaises(ValidationError):
            RjConfig(iterations=10, burn_in=10)
        with self.assertRaises(ValidationError):
            RjConfig(q_range=(100.0, 50.0))
        with self.assertRaises(ValidationError):
            RjConfig(birth_prob=1.5)
        with self.assertRaises(ValidationError):
            RjConfig(birth_prob=-0.1)
        self.assertEqual(RjConfig(birth_prob=0.0).birth_prob, 0.0)
        self.assertEqual(RjConfig(birth_prob=1.0).birth_prob, 1.0)

    def test_birth_probability_endpoints(self):
        data = counts([1, 2, 9], [10, 10, 10])
        # merges out of the singletons cannot be reversed, so they are all rejected
        chain = run_rj_chain(data, RjConfig(iterations=3000, burn_in=0, birth_prob=0.0, seed=4))
        self.assertTrue(np.all(chain.assignments == [0, 1, 2]))
        self.assertEqual(chain.acceptance['merge'], 0.0)
        # with births forced, the two-block states never merge into one block
        chain = run_rj_chain(data, RjConfig(iterations=3000, burn_in=0, birth_prob=1.0, seed=4))
        num_blocks = chain.assignments.max(axis=1) + 1
        self.assertTrue(np.all(num_blocks >= 2))
        self.assertGreater(chain.acceptance['merge'], 0.0)

    def test_matches_quadrature(self):
        data = counts([1, 2, 9], [10, 10, 10])
        oracle, means = quadrature_posterior(data)
        self.assertAlmostEqual(sum(oracle.values()), 1.0, places=12)
        self.assertEqual(oracle, quadrature_partition_posterior(data))
        chain = run_rj_chain(data, RjConfig(iterations=120000, burn_in=20000, seed=11))
        freqs = dict(partition_frequencies(chain))
        for g, p in oracle.items():
            self.assertAlmostEqual(freqs.get(g, 0.0), p, delta=0.04)
        np.testing.assert_allclose(chain.theta.mean(axis=0), means, atol=0.02)

    def test_quadrature_means_single_study(self):
        y, n = 4, 13
        data = counts([y], [n])
        _, means = quadrature_posterior(data, alpha_points=4000, q_points=200)

        def inner(log_q, weighted):
            q = math.exp(log_q)

            def f(alpha):
                a, b = q * alpha, q * (1.0 - alpha)
                like = math.exp(math.lgamma(y + a) + math.lgamma(n - y + b) - math.lgamma(n + q)
                                - math.lgamma(a) - math.lgamma(b) + math.lgamma(q))
                return like * ((y + q * alpha) / (n + q) if weighted else 1.0)
            return quad(f, 0.0, 1.0)[0]

        bounds = (math.log(100.0), math.log(1000.0))
        top = quad(lambda t: inner(t, True), *bounds)[0]
        bottom = quad(lambda t: inner(t, False), *bounds)[0]
        self.assertAlmostEqual(means[0], top / bottom, delta=1e-3)

    def test_replicate_chains(self):
        data = counts([3, 4, 12, 14], [20, 20, 20, 20])
        config = RjConfig(iterations=3000, burn_in=500, seed=2)
        first, second = run_rj_chains(data, config, chains=2)
        again = run_rj_chains(data, config, chains=2, threads=2)
        np.testing.assert_array_equal(first.assignments, again[0].assignments)
        np.testing.assert_array_equal(second.theta, again[1].theta)
        self.assertFalse(np.array_equal(first.theta, second.theta))

    def test_summaries(self):
        data = counts([3, 4, 12], [20, 20, 20])
        chain = run_rj_chain(data, RjConfig(iterations=2000, burn_in=500))
        self.assertEqual(chain.assignments.shape, (1500, 3))
        summary = rj_summaries(chain)
        self.assertAlmostEqual(sum(f for _, f in summary.frequencies), 1.0)
        self.assertTrue(100.0 <= summary.q.lower <= summary.q.upper <= 1000.0)
        out = summary.to_dict(top_k=2)
        self.assertLessEqual(len(out['partitions']), 2)
        self.assertEqual(out['similarity']['source'], 'rj-chain')
        for name in ('alpha', 'q'):
            self.assertTrue(0.0 <= out['acceptance'][name] <= 1.0)

    def test_quadrature_guard(self):
        with self.assertRaises(ResourceLimit):
            quadrature_partition_posterior(counts([1] * 7, [5] * 7))
