"""
Similarity matrices, partition-class probabilities and the posterior
predictive check against the pool-all model.
"""
import enum
import io
import logging
from dataclasses import dataclass, field

import numpy as np
import unicodecsv as csv
from joblib import Parallel, delayed

from ..exceptions import DomainError, ValidationError
from ..output.svg import similarity_svg
from .partitions import dominant_block_predicate
from .posterior import GridSpec, VariancePrior, pool_all_delta2_posterior

DEFAULT_BINS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
PPC_BLOCK = 5000
MIN_REPLICATES = 1000


class SimilaritySource(enum.Enum):
    GRID = 'grid-posterior'
    RJ_CHAIN = 'rj-chain'
    DPM_CHAIN = 'dpm-chain'


@dataclass
class SimilarityMatrix:
    """Pairwise posterior probabilities that two studies share a block."""
    matrix: np.ndarray
    ids: list
    source: SimilaritySource
    bins: tuple = DEFAULT_BINS

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] != len(self.ids):
            raise DomainError('Similarity matrix must be square and match the study ids')
        m = np.clip(0.5 * (m + m.T), 0.0, 1.0)
        np.fill_diagonal(m, 1.0)
        self.matrix = m
        self.ids = list(self.ids)

    def categories(self):
        """Bin index of every entry; the top bin is closed on the right."""
        edges = np.asarray(self.bins)
        k = np.searchsorted(edges, self.matrix, side='right') - 1
        return np.clip(k, 0, len(edges) - 2)

    def probability(self, a, b):
        return float(self.matrix[self.ids.index(a), self.ids.index(b)])

    def to_dict(self):
        return {'source': self.source.value, 'ids': self.ids,
                'matrix': [[float(x) for x in row] for row in self.matrix]}


def similarity_from_grid(jp):
    """Co-clustering probabilities over the retained cells, renormalized by their mass."""
    return SimilarityMatrix(jp.similarity_sum / jp.retained_mass, jp.ids,
                            SimilaritySource.GRID)


def similarity_from_assignments(assignments, ids, source):
    """Co-clustering frequencies of a chain of label vectors (rows)."""
    assignments = np.asarray(assignments)
    if assignments.ndim != 2 or len(assignments) == 0:
        raise DomainError('Need a non-empty chain of assignments')
    together = np.zeros((assignments.shape[1],) * 2)
    for labels in assignments:
        together += labels[:, None] == labels[None, :]
    return SimilarityMatrix(together / len(assignments), ids, source)


def partition_class_probability(jp, predicate):
    """
    Posterior probability of the partitions satisfying `predicate`, taken
    from the full partition marginal.
    """
    return jp.class_probability(predicate)


def dominant_cluster_probability(jp, min_block=4):
    """Probability of one block of size >= min_block with every other study on its own."""
    return jp.dominant_class_probability(min_block)


def dominant_predicate(min_block):
    return lambda g: dominant_block_predicate(g, min_block)


@dataclass
class PpcResult:
    p_value: float
    num_replicates: int
    exceedances: int
    observed: dict = field(default_factory=dict)

    @property
    def below_resolution(self):
        return self.exceedances == 0

    def describe(self):
        if self.below_resolution:
            return '< {:.3g}'.format(1.0 / self.num_replicates)
        return '{:.4g}'.format(self.p_value)

    def to_dict(self):
        return {'p_value': self.p_value, 'num_replicates': self.num_replicates,
                'exceedances': self.exceedances, 'reported': self.describe(),
                'observed_discrepancy': self.observed}


def discrepancy(values, nu, delta2, variances):
    """T = sum_i (y_i - nu)^2 / (v_i + delta^2), vectorized over leading replicate axes."""
    return np.sum((values - nu[:, None]) ** 2 / (variances[None, :] + delta2[:, None]), axis=1)


def _ppc_block(seed_seq, size, effects, variances, delta2, weights):
    rng = np.random.default_rng(seed_seq)
    picked = delta2[rng.choice(len(delta2), size=size, p=weights)]
    lam = picked[:, None] / (picked[:, None] + variances[None, :])
    centre = (lam * effects[None, :]).sum(axis=1) / lam.sum(axis=1)
    nu = centre + np.sqrt(picked / lam.sum(axis=1)) * rng.standard_normal(size)
    spread = np.sqrt(variances[None, :] + picked[:, None])
    replicated = nu[:, None] + spread * rng.standard_normal((size, len(effects)))
    t_obs = discrepancy(effects[None, :], nu, picked, variances)
    t_rep = discrepancy(replicated, nu, picked, variances)
    return int(np.sum(t_rep >= t_obs)), t_obs


def posterior_predictive_pvalue(studies, grid=None, vprior=None, replicates=20000, seed=0,
                                threads=1):
    """
    Posterior predictive p-value of the pool-all model
    Args:
        studies (StudySet):
            Observed effects; their plug-in variances are held fixed in the replicates
        grid (GridSpec), vprior (VariancePrior):
            delta^2 grid and prior; the prior defaults to InvGamma(11.01, 0.001)
        replicates (int):
            Number of replicated data sets, at least 1000
        seed (int):
            Root seed; blocks of replicates draw from spawned substreams
    Returns:
        PpcResult
    """
    if replicates < MIN_REPLICATES:
        raise DomainError('Need at least {} replicates, got {}'.format(MIN_REPLICATES,
                                                                       replicates))
    grid = grid or GridSpec()
    vprior = vprior or VariancePrior(VariancePrior.INVGAMMA)
    delta2 = grid.values()
    # replicates are drawn in a canonical study order so input order cannot matter
    order = np.lexsort((studies.variances, studies.effects))
    effects, variances = studies.effects[order], studies.variances[order]
    weights = pool_all_delta2_posterior(effects, variances, delta2, grid.log_prior_mass(vprior))

    sizes = [min(PPC_BLOCK, replicates - s) for s in range(0, replicates, PPC_BLOCK)]
    streams = np.random.SeedSequence(seed).spawn(len(sizes))
    results = Parallel(n_jobs=threads)(
        delayed(_ppc_block)(ss, n, effects, variances, delta2, weights)
        for ss, n in zip(streams, sizes))
    exceedances = sum(r[0] for r in results)
    t_obs = np.concatenate([r[1] for r in results])
    observed = {'mean': float(t_obs.mean()),
                'q025': float(np.quantile(t_obs, 0.025)),
                'q975': float(np.quantile(t_obs, 0.975))}
    logging.info('PPC: {} of {} replicates exceed the observed discrepancy'.format(
        exceedances, replicates))
    return PpcResult(exceedances / replicates, replicates, exceedances, observed)


def render_similarity(sm, fmt):
    """
    Serialize a SimilarityMatrix
    Args:
        sm (SimilarityMatrix)
        fmt (str):
            'csv' for raw probabilities, 'svg' for the categorized heatmap
    Returns:
        bytes
    """
    fmt = str(fmt).lower()
    if fmt == 'svg':
        return similarity_svg(sm)
    if fmt != 'csv':
        raise DomainError('Unsupported similarity format {!r}; use csv or svg'.format(fmt))
    out = io.BytesIO()
    writer = csv.writer(out, encoding='utf-8', lineterminator='\n')
    writer.writerow(['study_id'] + sm.ids)
    for study_id, row in zip(sm.ids, sm.matrix):
        writer.writerow([study_id] + [repr(float(x)) for x in row])
    return out.getvalue()


def read_similarity_csv(source, source_kind=SimilaritySource.GRID):
    """Parse the CSV written by render_similarity."""
    rows = list(csv.reader(source, encoding='utf-8'))
    if not rows or rows[0][0] != 'study_id':
        raise ValidationError('Not a similarity CSV')
    ids = [int(x) for x in rows[0][1:]]
    matrix = np.array([[float(x) for x in row[1:]] for row in rows[1:]])
    return SimilarityMatrix(matrix, ids, source_kind)
