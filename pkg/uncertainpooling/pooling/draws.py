"""
Monte Carlo inference for the true effects, marginal over (g, delta^2).
"""
import logging
from dataclasses import dataclass

import numpy as np

from ..exceptions import DomainError
from ..studydata import EffectScale
from .moments import conditional_moments
from .posterior import GridSpec, VariancePrior, pool_all_delta2_posterior


@dataclass
class PosteriorDraws:
    """
    B x L draws of the true effects. `draws` is on the analysis scale,
    `probability` is the same draws mapped to proportions.
    """
    ids: list
    draws: np.ndarray
    probability: np.ndarray
    scale: EffectScale
    seed: int

    @property
    def B(self):
        return self.draws.shape[0]

    def column(self, study_id):
        if study_id not in self.ids:
            raise DomainError('No draws for study {}'.format(study_id))
        return self.probability[:, self.ids.index(study_id)]


@dataclass
class IntervalSummary:
    """Posterior mean and equal-tail credible interval on the probability scale."""
    id: object
    mean: float
    lower: float
    upper: float
    level: float

    def to_dict(self):
        return {'id': self.id, 'mean': self.mean, 'lower': self.lower,
                'upper': self.upper, 'level': self.level}


def interval_of(values, level, label=None):
    if not 0 < level < 1:
        raise DomainError('Credible level must lie in (0, 1), got {}'.format(level))
    tail = (1.0 - level) / 2.0
    lower, upper = np.quantile(values, [tail, 1.0 - tail])
    return IntervalSummary(label, float(np.mean(values)), float(lower), float(upper), level)


def sample_mu(jp, studies, B, seed):
    """
    Composite draws of the true effects
    Args:
        jp (JointPosterior):
            Swept posterior for `studies`
        studies (StudySet):
            Supplies the effect scale
        B (int):
            Number of draws
        seed (int):
            Seed for numpy's default generator
    Returns:
        PosteriorDraws
    """
    if B <= 0:
        raise DomainError('Number of draws must be positive, got {}'.format(B))
    if list(studies.ids) != list(jp.ids):
        raise DomainError('Posterior was computed for a different study set')
    rng = np.random.default_rng(seed)
    p = jp.cell_weights / jp.cell_weights.sum()
    picks = rng.choice(len(p), size=B, p=p)
    cells, counts = np.unique(picks, return_counts=True)
    logging.debug('Drawing {} values from {} distinct cells'.format(B, len(cells)))

    draws = np.empty((B, jp.L))
    start = 0
    for cell, count in zip(cells, counts):
        g = jp.partition(jp.cell_ranks[cell])
        delta2 = float(jp.delta2[jp.cell_grid[cell]])
        moments = conditional_moments(g, delta2, jp.effects, jp.variances)
        draws[start:start + count] = moments.sample(rng, count)
        start += count
    # cells were visited in sorted order; restore the order they were drawn in
    draws = draws[np.argsort(np.argsort(picks, kind='stable'), kind='stable')]
    return PosteriorDraws(list(jp.ids), draws, studies.scale.to_probability(draws),
                          studies.scale, seed)


def summarize(draws, level=0.95):
    """Per-study mean and equal-tail interval of the probability-scale draws."""
    return [interval_of(draws.probability[:, j], level, label=study_id)
            for j, study_id in enumerate(draws.ids)]


def gold_standard_posterior(jp, studies, study_id, B, seed, level=0.95):
    """Marginal posterior summary of one study's true effect."""
    studies.index_of(study_id)
    draws = sample_mu(jp, studies, B, seed)
    return interval_of(draws.column(study_id), level, label=study_id)


def overall_effect_draws(studies, grid, vprior, B, seed, predictive=True):
    """
    Draws of the overall effect nu under the pool-all partition: delta^2 from
    its posterior given g0 on the grid, then nu | delta^2 ~ N(m, delta^2 / sum(lambda)).
    With `predictive` each draw also carries the between-study spread N(0, delta^2),
    so it describes the true effect of a further study from the same population.
    Returned on the probability scale.
    """
    if B <= 0:
        raise DomainError('Number of draws must be positive, got {}'.format(B))
    delta2 = grid.values()
    weights = pool_all_delta2_posterior(studies.effects, studies.variances, delta2,
                                        grid.log_prior_mass(vprior))
    rng = np.random.default_rng(seed)
    picked = delta2[rng.choice(len(delta2), size=B, p=weights)]
    lam = picked[:, None] / (picked[:, None] + studies.variances[None, :])
    centre = (lam * studies.effects[None, :]).sum(axis=1) / lam.sum(axis=1)
    nu = centre + np.sqrt(picked / lam.sum(axis=1)) * rng.standard_normal(B)
    if predictive:
        nu = nu + np.sqrt(picked) * rng.standard_normal(B)
    return studies.scale.to_probability(nu)


def overall_effect_interval(studies, grid=None, vprior=None, level=0.95, B=30000, seed=0,
                            predictive=True):
    """Credible interval for the overall effect, conditional on pooling every study."""
    grid = grid or GridSpec()
    vprior = vprior or VariancePrior()
    return interval_of(overall_effect_draws(studies, grid, vprior, B, seed, predictive),
                       level, label='overall')
