"""
Regression offsets for the true effects.

Given mu (and the cell it was drawn from), beta has a flat-prior normal
conditional: with V = diag(1/v_i), A = X'VX and c = (y - mu)'VX,
beta | mu, y ~ N(A^-1 c', A^-1). Draws of (mu, beta) are composed as
(g, delta^2) -> mu -> beta; mu is not adjusted for the offset.
"""
import logging
from dataclasses import dataclass

import numpy as np
import unicodecsv as csv
from scipy import linalg

from ..exceptions import SingularDesign, ValidationError
from .draws import interval_of, sample_mu


@dataclass
class CovariateDesign:
    X: np.ndarray
    names: list = None
    ids: list = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        L, p = self.X.shape
        if self.names is None:
            self.names = ['x{}'.format(j + 1) for j in range(p)]
        if self.ids is None:
            self.ids = list(range(1, L + 1))
        if len(self.names) != p or len(self.ids) != L:
            raise ValidationError('Design has shape {} but {} names and {} ids'.format(
                self.X.shape, len(self.names), len(self.ids)))
        if p < 1 or L <= p:
            raise SingularDesign('Need 1 <= p < L covariates, got p={} for L={}'.format(p, L))
        if np.linalg.matrix_rank(self.X) < p:
            raise SingularDesign('Covariate columns {} are linearly dependent'.format(self.names))

    @property
    def p(self):
        return self.X.shape[1]


def load_covariates(source, studies):
    """
    Read a `study_id,<name1>,<name2>,...` CSV byte stream and align its rows
    with the study set.
    """
    reader = csv.DictReader(source, encoding='utf-8')
    fields = [f.strip() for f in (reader.fieldnames or [])]
    if len(fields) < 2 or fields[0] != 'study_id':
        raise ValidationError('Covariate CSV needs a study_id column and at least one covariate')
    names = fields[1:]
    rows = {}
    for row in reader:
        try:
            study_id = int(row[reader.fieldnames[0]])
            rows[study_id] = [float(row[f]) for f in reader.fieldnames[1:]]
        except (TypeError, ValueError):
            raise ValidationError('Line {}: covariates must be numeric'.format(reader.line_num))
    missing = [i for i in studies.ids if i not in rows]
    if missing:
        raise ValidationError('No covariates for studies {}'.format(missing))
    logging.info('Read covariates {} for {} studies'.format(names, len(studies)))
    return CovariateDesign(np.array([rows[i] for i in studies.ids]), names, studies.ids)


def as_design(X, ids=None):
    return X if isinstance(X, CovariateDesign) else CovariateDesign(X, ids=ids)


def precision_factor(X, variances):
    """Cholesky factor of A = X'VX, as returned by scipy.linalg.cho_factor."""
    X = as_design(X).X
    A = X.T @ (X / np.asarray(variances, dtype=float)[:, None])
    try:
        return A, linalg.cho_factor(A, lower=True)
    except linalg.LinAlgError:
        raise SingularDesign('X\'VX is not positive definite')


def beta_conditional(mu, studies, X):
    """
    Mean d and precision A of beta given the true effects mu
    Args:
        mu (array, L):
            True effects on the analysis scale
        studies (StudySet):
            Observed effects and variances
        X (CovariateDesign or array L x p)
    Returns:
        (d, A)
    """
    A, factor = precision_factor(X, studies.variances)
    residuals = studies.effects - np.asarray(mu, dtype=float)
    c = (residuals / studies.variances) @ as_design(X).X
    return linalg.cho_solve(factor, c), A


@dataclass
class CovariateDraws:
    mu: object
    beta: np.ndarray
    names: list

    def summaries(self, level=0.95):
        return [interval_of(self.beta[:, j], level, label=name)
                for j, name in enumerate(self.names)]


def sample_mu_beta(jp, studies, X, B, seed):
    """
    Composite draws of (mu, beta): mu from the pooled posterior, then beta
    from its normal conditional given mu.
    """
    design = as_design(X, studies.ids)
    mu = sample_mu(jp, studies, B, seed)
    _, factor = precision_factor(design, studies.variances)
    chol = np.tril(factor[0])
    residuals = studies.effects[None, :] - mu.draws
    means = linalg.cho_solve(factor, ((residuals / studies.variances[None, :]) @ design.X).T).T
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    noise = rng.standard_normal((B, design.p))
    beta = means + linalg.solve_triangular(chol, noise.T, lower=True, trans='T').T
    return CovariateDraws(mu, beta, list(design.names))
