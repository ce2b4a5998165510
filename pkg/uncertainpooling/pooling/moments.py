"""
Conditional posterior quantities for one (partition, delta^2) cell.

Every block shares the between-study variance delta^2. With shrinkage
weights lambda_i = delta^2 / (delta^2 + v_i), the posterior of the true
effects given the cell is normal, independent across blocks, and the
cell's posterior weight has a closed form up to a constant.
"""
import logging
from dataclasses import dataclass

import numpy as np

from ..exceptions import DomainError, NumericalFailure
from .partitions import PartitionPrior, prior_log_mass


def _as_variances(variances):
    variances = np.asarray(variances, dtype=float)
    if np.any(~np.isfinite(variances)) or np.any(variances <= 0):
        raise DomainError('Sampling variances must be positive and finite')
    return variances


def lambda_weights(g, delta2, variances):
    """
    Shrinkage weights delta^2 / (delta^2 + v_i). With a common delta^2
    they do not depend on g; g is taken for the shape check only.
    """
    variances = _as_variances(variances)
    if g is not None and len(g) != len(variances):
        raise DomainError('Partition covers {} studies, got {} variances'.format(
            len(g), len(variances)))
    if not delta2 > 0:
        raise DomainError('delta^2 must be positive, got {}'.format(delta2))
    return delta2 / (delta2 + variances)


def subset_mean(g, k, lam, effects):
    """lambda-weighted mean of the effects in block k."""
    members = list(g.blocks[k])
    lam = np.asarray(lam, dtype=float)[members]
    effects = np.asarray(effects, dtype=float)[members]
    return float(np.dot(lam, effects) / lam.sum())


def block_means(g, lam, effects):
    return np.array([subset_mean(g, k, lam, effects) for k in range(g.num_blocks)])


@dataclass
class ConditionalMoments:
    """Normal posterior of the true effects given (g, delta^2)."""
    partition: object
    mean: np.ndarray
    covariance: np.ndarray

    def block_factors(self):
        """Cholesky factor of each diagonal block; cross-block covariance is zero."""
        factors = []
        for block in self.partition.blocks:
            idx = np.array(block)
            cov = self.covariance[np.ix_(idx, idx)]
            factors.append((idx, _cholesky(cov)))
        return factors

    def sample(self, rng, size):
        """Draw `size` vectors, block by block."""
        out = np.empty((size, len(self.mean)))
        for idx, chol in self.block_factors():
            z = rng.standard_normal((size, len(idx)))
            out[:, idx] = self.mean[idx] + z @ chol.T
        return out


def _cholesky(cov):
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * max(float(np.max(np.diag(cov))), 1.0)
        logging.debug('Cholesky needed jitter {}'.format(jitter))
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(len(cov)))
        except np.linalg.LinAlgError:
            raise NumericalFailure('Conditional covariance is not positive definite')


def conditional_moments(g, delta2, effects, variances):
    """
    Posterior mean and covariance of the true effects given (g, delta^2)
    Args:
        g (Partition):
            Grouping of the studies
        delta2 (float):
            Common within-block variance of the true effects
        effects (array):
            Observed effect sizes
        variances (array):
            Their sampling variances
    Returns:
        ConditionalMoments; the mean shrinks each effect toward its
        block's weighted mean, covariance is block diagonal
    """
    effects = np.asarray(effects, dtype=float)
    lam = lambda_weights(g, delta2, variances)
    L = len(effects)
    mean = np.empty(L)
    cov = np.zeros((L, L))
    for k, block in enumerate(g.blocks):
        idx = np.array(block)
        lam_k = lam[idx]
        centre = float(np.dot(lam_k, effects[idx]) / lam_k.sum())
        shrink = 1.0 - lam_k
        mean[idx] = lam_k * effects[idx] + shrink * centre
        block_cov = np.outer(shrink, shrink) * delta2 / lam_k.sum()
        block_cov[np.diag_indices(len(idx))] += delta2 * shrink
        cov[np.ix_(idx, idx)] = block_cov
    return ConditionalMoments(g, mean, cov)


def q_statistic(g, delta2, effects, variances):
    """Weighted within-block sum of squares, sum_i (lambda_i / delta^2)(y_i - m_k)^2."""
    effects = np.asarray(effects, dtype=float)
    lam = lambda_weights(g, delta2, variances)
    centres = block_means(g, lam, effects)[list(g.assignment)]
    return float(np.sum(lam / delta2 * (effects - centres) ** 2))


def log_joint_weight(g, delta2, effects, variances, pprior=PartitionPrior.UNIFORM,
                     log_prior_delta2=0.0):
    """
    Unnormalized log posterior weight of the cell (g, delta^2):
    log p(g) + log p(delta^2) - d(g)/2 + (1/2) sum_i log(1 - lambda_i) - Q/2.
    """
    lam = lambda_weights(g, delta2, variances)
    return (prior_log_mass(pprior, g)
            + log_prior_delta2
            - 0.5 * g.num_blocks
            + 0.5 * float(np.sum(np.log1p(-lam)))
            - 0.5 * q_statistic(g, delta2, effects, variances))
