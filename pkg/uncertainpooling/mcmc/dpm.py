"""
Dirichlet process mixture meta-analysis.

    y_i | mu_i ~ N(mu_i, v_i),  mu_i | H ~ H,  H ~ DP(M, H0),  H0 = N(eta, tau^2)

with (eta, tau^2) fixed at their one-component maximum likelihood values and M
taken from a fixed list. Cluster assignments are updated by collapsed
Gibbs (cluster means integrated out), then the cluster means are drawn
from their normal conditionals.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp
from tqdm import tqdm

from ..exceptions import DomainError, ValidationError
from ..pooling.diagnostics import SimilaritySource, similarity_from_assignments
from ..pooling.draws import interval_of
from ..pooling.partitions import canonical_labels

MIN_TAU2 = 1e-12
LOG_2PI = math.log(2.0 * math.pi)


def default_m_values(L):
    return [0.01, 1.0 / L, 1.0, float(L), float(L ** 2), 10.0 * L ** 2]


@dataclass
class BaseMeasure:
    eta: float
    tau2: float

    def __post_init__(self):
        if not (np.isfinite(self.tau2) and self.tau2 >= 0):
            raise DomainError('tau^2 must be finite and nonnegative, got {}'.format(self.tau2))


def m_label(M):
    """Text key of a concentration value in reports and file names."""
    return '{:.12g}'.format(M)


@dataclass
class DpmConfig:
    m_values: list = None
    iterations: int = 20000
    burn_in: int = 5000
    seed: int = 0

    def __post_init__(self):
        if not self.iterations > self.burn_in >= 0:
            raise ValidationError('Need iterations > burn_in >= 0, got {} and {}'.format(
                self.iterations, self.burn_in))
        if self.m_values is not None:
            self.m_values = [float(m) for m in self.m_values]
            if not self.m_values or min(self.m_values) <= 0:
                raise ValidationError('Concentration values must be positive')
            labels = [m_label(m) for m in self.m_values]
            if len(set(labels)) != len(labels):
                raise ValidationError('Concentration values must be distinct, got {}'.format(
                    ','.join(labels)))

    def resolved_m_values(self, L):
        return self.m_values if self.m_values is not None else default_m_values(L)


def _profile_loglik(tau2, effects, variances):
    """Log likelihood of N(eta, tau^2 + v_i) with eta profiled out; returns (eta, loglik)."""
    total = tau2 + variances
    w = 1.0 / total
    eta = float(np.dot(w, effects) / w.sum())
    return eta, float(-0.5 * np.sum(np.log(total) + w * (effects - eta) ** 2))


def mle_base_measure(studies):
    """
    Maximum likelihood (eta, tau^2) of the one-component random-effects model
    Args:
        studies (StudySet)
    Returns:
        BaseMeasure; tau^2 may sit on the boundary 0
    """
    effects, variances = studies.effects, studies.variances
    if len(effects) < 2:
        raise DomainError('The base measure needs at least 2 studies')
    # the likelihood is maximized below max_i (y_i - eta)^2
    upper = float(np.ptp(effects)) ** 2
    best = 0.0
    if upper > 0:
        res = minimize_scalar(lambda t: -_profile_loglik(t, effects, variances)[1],
                              bounds=(0.0, upper), method='bounded',
                              options={'xatol': 1e-10 * upper})
        if -res.fun > _profile_loglik(0.0, effects, variances)[1]:
            best = float(res.x)
    eta, _ = _profile_loglik(best, effects, variances)
    logging.info('Base measure: eta={:.6g}, tau2={:.6g}'.format(eta, best))
    return BaseMeasure(eta, best)


def _norm_logpdf(x, mean, var):
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def crp_probabilities(i, labels, effects, variances, M, base):
    """
    Reassignment probabilities for study i
    Args:
        i (int):
            Study position being reassigned
        labels (int array):
            Current labels of all studies; labels[i] is ignored
    Returns:
        (clusters, probabilities): the existing cluster labels and a
        probability vector one longer, the last entry for a new cluster
    """
    others = np.delete(np.arange(len(labels)), i)
    clusters = np.unique(labels[others])
    tau2 = max(base.tau2, MIN_TAU2)
    logp = np.empty(len(clusters) + 1)
    for k, c in enumerate(clusters):
        members = others[labels[others] == c]
        precision = 1.0 / tau2 + np.sum(1.0 / variances[members])
        centre = (base.eta / tau2 + np.sum(effects[members] / variances[members])) / precision
        logp[k] = math.log(len(members)) + _norm_logpdf(effects[i], centre,
                                                        1.0 / precision + variances[i])
    logp[-1] = math.log(M) + _norm_logpdf(effects[i], base.eta, tau2 + variances[i])
    return clusters, np.exp(logp - logsumexp(logp))


def _cluster_means(labels, effects, variances, base, rng):
    tau2 = max(base.tau2, MIN_TAU2)
    K = labels.max() + 1
    precision = 1.0 / tau2 + np.bincount(labels, weights=1.0 / variances, minlength=K)
    centre = (base.eta / tau2 + np.bincount(labels, weights=effects / variances,
                                            minlength=K)) / precision
    return centre + rng.standard_normal(K) / np.sqrt(precision)


@dataclass
class DpmChain:
    """Kept iterations of one DPM run."""
    M: float
    base: BaseMeasure
    ids: list
    scale: object
    assignments: np.ndarray
    mu: np.ndarray
    seed: object = None

    @property
    def num_clusters(self):
        return self.assignments.max(axis=1) + 1


def dpm_gibbs(studies, M, base, config, seed=None, progress=False):
    """
    Collapsed Gibbs sampler for one concentration value
    Args:
        studies (StudySet)
        M (float):
            DP concentration
        base (BaseMeasure):
            H0 = N(eta, tau^2)
        config (DpmConfig):
            Iteration counts
        seed:
            Anything numpy.random.default_rng accepts; config.seed when omitted
    Returns:
        DpmChain with the post-burn-in states
    """
    if M <= 0:
        raise DomainError('Concentration must be positive, got {}'.format(M))
    rng = np.random.default_rng(config.seed if seed is None else seed)
    effects, variances = studies.effects, studies.variances
    L = len(effects)
    labels = np.zeros(L, dtype=np.int64)
    kept = config.iterations - config.burn_in
    assignments = np.empty((kept, L), dtype=np.int64)
    mu = np.empty((kept, L))

    for it in tqdm(range(config.iterations), desc='dpm M={:g}'.format(M), disable=not progress):
        for i in range(L):
            clusters, p = crp_probabilities(i, labels, effects, variances, M, base)
            k = min(int(np.searchsorted(np.cumsum(p), rng.random() * p.sum())), len(p) - 1)
            labels[i] = clusters[k] if k < len(clusters) else labels.max() + 1
            labels = np.array(canonical_labels(labels), dtype=np.int64)
        means = _cluster_means(labels, effects, variances, base, rng)
        if it >= config.burn_in:
            assignments[it - config.burn_in] = labels
            mu[it - config.burn_in] = means[labels]
    logging.info('DPM M={:g}: mean number of clusters {:.3f}'.format(
        M, float(np.mean(assignments.max(axis=1) + 1))))
    return DpmChain(float(M), base, list(studies.ids), studies.scale, assignments, mu, seed)


@dataclass
class DpmSummary:
    M: float
    studies: list
    similarity: object
    mean_clusters: float
    base: BaseMeasure = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {'M': self.M, 'mean_clusters': self.mean_clusters,
                'base_measure': {'eta': self.base.eta, 'tau2': self.base.tau2},
                'studies': [s.to_dict() for s in self.studies],
                'similarity': self.similarity.to_dict()}


def dpm_summaries(chain, level=0.95):
    """Probability-scale means and intervals, co-clustering frequencies and cluster counts."""
    if chain.mu.shape[0] == 0:
        raise DomainError('DPM chain has no kept iterations')
    prob = chain.scale.to_probability(chain.mu)
    studies = [interval_of(prob[:, j], level, label=study_id)
               for j, study_id in enumerate(chain.ids)]
    similarity = similarity_from_assignments(chain.assignments, chain.ids,
                                             SimilaritySource.DPM_CHAIN)
    return DpmSummary(chain.M, studies, similarity, float(np.mean(chain.num_clusters)),
                      base=chain.base)


def run_dpm(studies, config, base=None, threads=1, progress=False):
    """
    One chain per concentration value, run in parallel on spawned seed streams.
    Returns a list of DpmChain in the order of the M values.
    """
    base = base or mle_base_measure(studies)
    m_values = config.resolved_m_values(len(studies.effects))
    streams = np.random.SeedSequence(config.seed).spawn(len(m_values))
    return Parallel(n_jobs=threads)(
        delayed(dpm_gibbs)(studies, M, base, config, seed=ss, progress=progress)
        for M, ss in zip(m_values, streams))
