"""
Joint posterior over (partition, delta^2) grid cells.

Every partition is crossed with every grid point, so the lattice has
B_L * D cells (about 6.9e7 at L = 11). The lattice is never held in
memory. It is swept in fixed rank chunks, twice:

  1. log weights -> per-partition and per-grid-point log marginals and a
     histogram of log weights (0.01-nat bins) to place the truncation
     threshold;
  2. the cells above the threshold are collected with their normalized
     weights, along with the co-clustering accumulator and the dropped mass.

Chunk boundaries do not depend on the worker count and chunk results
are merged in rank order, so the output is identical for any number
of workers.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy.special import logsumexp
from tqdm import tqdm

from ..exceptions import DomainError, NumericalFailure, ResourceLimit
from .partitions import (Partition, PartitionPrior, assignment_block, bell_number,
                         dominant_block_mask, iter_assignments, unrank_partition)

MAX_SWEEP_L = 12
CHUNK_SIZE = 1024
HIST_WIDTH = 0.01


class VariancePrior(object):
    """
    Prior on the common delta^2, evaluated up to a constant:
    invbeta  p(d) ~ 1 / ((1 + d) sqrt(d))  (half-Cauchy on delta)
    invgamma p(d) ~ d^-(alpha+1) exp(-beta / d)
    """
    INVBETA = 'invbeta'
    INVGAMMA = 'invgamma'

    def __init__(self, kind=INVBETA, alpha=11.01, beta=0.001):
        if kind not in (self.INVBETA, self.INVGAMMA):
            raise DomainError('Unknown delta^2 prior {!r}'.format(kind))
        if kind == self.INVGAMMA and not (alpha > 0 and beta > 0):
            raise DomainError('InvGamma needs alpha > 0 and beta > 0')
        self.kind = kind
        self.alpha = float(alpha)
        self.beta = float(beta)

    def log_density(self, delta2):
        delta2 = np.asarray(delta2, dtype=float)
        if self.kind == self.INVBETA:
            return -np.log1p(delta2) - 0.5 * np.log(delta2)
        return -(self.alpha + 1.0) * np.log(delta2) - self.beta / delta2

    def describe(self):
        if self.kind == self.INVBETA:
            return {'kind': self.kind}
        return {'kind': self.kind, 'alpha': self.alpha, 'beta': self.beta}


@dataclass
class GridSpec:
    delta2_min: float = 3e-4
    delta2_max: float = 1e2
    points: int = 101
    spacing: str = 'log-uniform'
    keep_mass: float = 0.992

    def __post_init__(self):
        if not 0 < self.delta2_min < self.delta2_max:
            raise DomainError('Need 0 < delta2_min < delta2_max')
        if self.points < 2:
            raise DomainError('A delta^2 grid needs at least 2 points')
        if self.spacing != 'log-uniform':
            raise DomainError('Only log-uniform grids are supported')
        if not 0 < self.keep_mass <= 1:
            raise DomainError('keep_mass must lie in (0, 1]')

    def values(self):
        return np.geomspace(self.delta2_min, self.delta2_max, self.points)

    def log_prior_mass(self, vprior):
        """
        Normalized prior mass of each grid point: the prior density read off
        at the point and renormalized over the grid. There is no change of
        variable to log delta^2; the grid is only where the density is read.
        """
        delta2 = self.values()
        logm = vprior.log_density(delta2)
        return logm - logsumexp(logm)

    def describe(self):
        return {'delta2_min': self.delta2_min, 'delta2_max': self.delta2_max,
                'points': self.points, 'spacing': self.spacing,
                'keep_mass': self.keep_mass}


def cell_log_weights(assignments, effects, variances, delta2, log_prior_mass,
                     log_prior_blocks):
    """
    Unnormalized log weights for a block of partitions against the whole grid
    Args:
        assignments (int array, C x L):
            Restricted-growth strings
        effects, variances (arrays, L):
            Observed effects and sampling variances
        delta2, log_prior_mass (arrays, D):
            Grid points and their log prior mass
        log_prior_blocks (array, L + 1):
            log p(g) indexed by number of blocks
    Returns:
        array C x D
    """
    C, L = assignments.shape
    lam = delta2[:, None] / (delta2[:, None] + variances[None, :])
    onehot = (assignments[:, :, None] == np.arange(L)[None, None, :]).astype(float)
    wsum = np.einsum('cik,di->cdk', onehot, lam)
    ysum = np.einsum('cik,di->cdk', onehot, lam * effects[None, :])
    centres = ysum / np.where(wsum > 0, wsum, 1.0)
    idx = np.broadcast_to(assignments[:, None, :], (C, len(delta2), L))
    fitted = np.take_along_axis(centres, idx, axis=2)
    q = np.sum((lam / delta2[:, None])[None, :, :] * (effects[None, None, :] - fitted) ** 2,
               axis=2)
    blocks = assignments.max(axis=1) + 1
    return (log_prior_blocks[blocks][:, None]
            + log_prior_mass[None, :]
            - 0.5 * blocks[:, None]
            + 0.5 * np.log1p(-lam).sum(axis=1)[None, :]
            - 0.5 * q)


def _first_pass(L, start, stop, effects, variances, delta2, log_prior_mass, log_prior_blocks):
    assignments = assignment_block(L, start, stop)
    lw = cell_log_weights(assignments, effects, variances, delta2, log_prior_mass,
                          log_prior_blocks)
    flat = lw[np.isfinite(lw)]
    bins = np.floor(flat / HIST_WIDTH).astype(np.int64)
    uniq, inverse = np.unique(bins, return_inverse=True)
    sums = np.bincount(inverse, weights=np.exp(flat - uniq[inverse] * HIST_WIDTH))
    return logsumexp(lw, axis=1), logsumexp(lw, axis=0), uniq, sums


def _second_pass(L, start, stop, effects, variances, delta2, log_prior_mass,
                 log_prior_blocks, log_norm, threshold_bin):
    assignments = assignment_block(L, start, stop)
    lw = cell_log_weights(assignments, effects, variances, delta2, log_prior_mass,
                          log_prior_blocks)
    weights = np.exp(lw - log_norm)
    with np.errstate(invalid='ignore'):
        keep = np.floor(lw / HIST_WIDTH) >= threshold_bin
    rows, cols = np.nonzero(keep)
    kept = weights[rows, cols]
    by_partition = np.where(keep, weights, 0.0).sum(axis=1)
    together = (assignments[:, :, None] == assignments[:, None, :]).astype(float)
    similarity = np.einsum('c,cij->ij', by_partition, together)
    return (start + rows, cols, kept, float(weights[~keep].sum()), similarity)


def _chunks(total, chunk_size):
    return [(s, min(s + chunk_size, total)) for s in range(0, total, chunk_size)]


def _run(jobs, threads, progress, desc):
    runner = Parallel(n_jobs=threads, return_as='generator')
    return list(tqdm(runner(jobs), total=len(jobs), desc=desc, disable=not progress))


@dataclass
class JointPosterior:
    """
    Normalized posterior over the (partition, delta^2) lattice.

    The full partition and delta^2 marginals are exact. Cell-level
    storage keeps only the retained cells; `dropped_mass` is the
    probability of the rest.
    """
    ids: list
    effects: np.ndarray
    variances: np.ndarray
    delta2: np.ndarray
    log_prior_mass: np.ndarray
    pprior: PartitionPrior
    log_normalizer: float
    log_partition: np.ndarray
    delta2_marginal: np.ndarray
    cell_ranks: np.ndarray
    cell_grid: np.ndarray
    cell_weights: np.ndarray
    dropped_mass: float
    similarity_sum: np.ndarray
    keep_mass: float = 1.0
    config: dict = field(default_factory=dict)

    @property
    def L(self):
        return len(self.ids)

    @property
    def num_partitions(self):
        return len(self.log_partition)

    @property
    def retained_mass(self):
        return float(self.cell_weights.sum())

    @property
    def num_retained(self):
        return len(self.cell_weights)

    def partition(self, rank):
        return Partition(unrank_partition(self.L, int(rank)))

    def partition_probabilities(self):
        return np.exp(self.log_partition)

    @property
    def pool_all_probability(self):
        # rank 0 is the all-zeros string
        return float(np.exp(self.log_partition[0]))

    def top_partitions(self, k=10):
        order = np.argsort(-self.log_partition, kind='stable')[:k]
        return [(self.partition(r), float(np.exp(self.log_partition[r]))) for r in order]

    def class_probability(self, predicate):
        """Posterior probability of the partitions satisfying predicate(Partition)."""
        total = 0.0
        for rank, labels in enumerate(iter_assignments(self.L)):
            if predicate(Partition(labels)):
                total += math.exp(self.log_partition[rank])
        return total

    def dominant_class_probability(self, min_block, chunk_size=CHUNK_SIZE):
        """Vectorized class probability for the dominant-block predicate."""
        total = 0.0
        for start, stop in _chunks(self.num_partitions, chunk_size):
            mask = dominant_block_mask(assignment_block(self.L, start, stop), min_block)
            total += float(np.exp(self.log_partition[start:stop][mask]).sum())
        return total

    def cells(self):
        """Retained cells as (Partition, delta^2, weight)."""
        for r, j, w in zip(self.cell_ranks, self.cell_grid, self.cell_weights):
            yield self.partition(r), float(self.delta2[j]), float(w)


def sweep_joint_posterior(effects, variances, delta2, log_prior_mass,
                          pprior=PartitionPrior.UNIFORM, keep_mass=1.0, ids=None,
                          threads=1, chunk_size=CHUNK_SIZE, progress=False):
    """
    Sweep every partition against an explicit grid.
    Args:
        effects, variances (arrays, L):
            Observed effects and sampling variances
        delta2 (array, D):
            Grid points
        log_prior_mass (array, D):
            Log prior mass of each grid point (need not be normalized)
        pprior (PartitionPrior):
            Prior over partitions
        keep_mass (float):
            Probability the retained cells must hold
        threads (int):
            Workers for the chunked sweep
    Returns:
        JointPosterior
    """
    effects = np.asarray(effects, dtype=float)
    variances = np.asarray(variances, dtype=float)
    delta2 = np.asarray(delta2, dtype=float)
    log_prior_mass = np.asarray(log_prior_mass, dtype=float)
    if np.any(variances <= 0) or np.any(delta2 <= 0):
        raise DomainError('Variances and grid points must be positive')
    L = len(effects)
    if not 1 <= L <= MAX_SWEEP_L:
        raise ResourceLimit('The grid sweep supports 1 <= L <= {}, got {}'.format(MAX_SWEEP_L, L))
    ids = list(ids) if ids is not None else list(range(1, L + 1))
    total = bell_number(L)
    chunks = _chunks(total, chunk_size)
    log_prior_blocks = pprior.log_mass_by_blocks(L)
    logging.info('Sweeping {} partitions x {} grid points in {} chunks'.format(
        total, len(delta2), len(chunks)))

    shared = (effects, variances, delta2, log_prior_mass, log_prior_blocks)
    first = _run([delayed(_first_pass)(L, s, e, *shared) for s, e in chunks],
                 threads, progress, 'normalizing')
    log_partition = np.concatenate([r[0] for r in first])
    log_norm = float(logsumexp(log_partition))
    if not np.isfinite(log_norm):
        raise NumericalFailure('Posterior normalizer is not finite')
    log_delta2 = logsumexp(np.vstack([r[1] for r in first]), axis=0)

    bins = np.concatenate([r[2] for r in first])
    sums = np.concatenate([r[3] for r in first])
    uniq, inverse = np.unique(bins, return_inverse=True)
    bin_mass = np.bincount(inverse, weights=sums) * np.exp(uniq * HIST_WIDTH - log_norm)
    if keep_mass >= 1.0:
        threshold_bin = np.iinfo(np.int64).min
    else:
        cumulative = np.cumsum(bin_mass[::-1])
        cut = int(np.searchsorted(cumulative, keep_mass))
        threshold_bin = int(uniq[::-1][min(cut, len(uniq) - 1)])

    second = _run([delayed(_second_pass)(L, s, e, *shared, log_norm, threshold_bin)
                   for s, e in chunks], threads, progress, 'collecting')
    ranks = np.concatenate([r[0] for r in second]).astype(np.int64)
    grid = np.concatenate([r[1] for r in second]).astype(np.int64)
    weights = np.concatenate([r[2] for r in second])
    dropped = float(sum(r[3] for r in second))
    similarity = np.zeros((L, L))
    for r in second:
        similarity += r[4]

    delta2_marginal = np.exp(log_delta2 - log_norm)
    # mass on the bottom point is the prior's shoulder, not truncation
    if delta2_marginal[-1] > 0.01:
        logging.warning('delta^2 marginal puts {:.3f} on the top grid point; '
                        'consider raising delta2_max'.format(delta2_marginal[-1]))
    logging.info('Retained {} cells holding {:.6f} of the mass; dropped {:.3g}'.format(
        len(weights), weights.sum(), dropped))
    return JointPosterior(
        ids=ids, effects=effects, variances=variances, delta2=delta2,
        log_prior_mass=log_prior_mass, pprior=pprior, log_normalizer=log_norm,
        log_partition=log_partition - log_norm, delta2_marginal=delta2_marginal,
        cell_ranks=ranks, cell_grid=grid, cell_weights=weights, dropped_mass=dropped,
        similarity_sum=similarity, keep_mass=keep_mass)


def compute_joint_posterior(studies, grid=None, vprior=None, pprior=PartitionPrior.UNIFORM,
                            threads=1, progress=False, chunk_size=CHUNK_SIZE):
    """
    Joint posterior of (g, delta^2) for a StudySet
    Args:
        studies (StudySet):
            Studies on the analysis scale
        grid (GridSpec):
            delta^2 grid and truncation
        vprior (VariancePrior):
            Prior on delta^2
        pprior (PartitionPrior):
            Prior on partitions
    Returns:
        JointPosterior
    """
    grid = grid or GridSpec()
    vprior = vprior or VariancePrior()
    if len(studies) > MAX_SWEEP_L:
        raise ResourceLimit('The grid sweep supports at most {} studies, got {}'.format(
            MAX_SWEEP_L, len(studies)))
    jp = sweep_joint_posterior(studies.effects, studies.variances, grid.values(),
                               grid.log_prior_mass(vprior), pprior=pprior,
                               keep_mass=grid.keep_mass, ids=studies.ids, threads=threads,
                               chunk_size=chunk_size, progress=progress)
    jp.config = {'grid': grid.describe(), 'delta2_prior': vprior.describe(),
                 'partition_prior': pprior.value, 'scale': studies.scale.value}
    return jp


def pool_all_delta2_posterior(effects, variances, delta2, log_prior_mass):
    """Normalized posterior of delta^2 on the grid given the single-block partition."""
    effects = np.asarray(effects, dtype=float)
    L = len(effects)
    lw = cell_log_weights(np.zeros((1, L), dtype=np.int64), effects,
                          np.asarray(variances, dtype=float), np.asarray(delta2, dtype=float),
                          np.asarray(log_prior_mass, dtype=float), np.zeros(L + 1))[0]
    return np.exp(lw - logsumexp(lw))
