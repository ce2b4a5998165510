"""
Binomial-beta partition model sampled by reversible jump.

    y_i | theta_i ~ Bin(n_i, theta_i)
    theta_i | g, alpha, q ~ Beta(q alpha_k, q (1 - alpha_k)),  i in block k
    alpha_k ~ U(0, 1),  log q ~ U(log a, log b),  g ~ size-biased prior

One iteration updates every theta (conjugate Gibbs), every alpha_k
(random walk on logit alpha), q (random walk on log q), then attempts one
split or merge.

Split of block S with mean alpha into S1, S2 (weights w1 = |S1|/|S|,
w2 = 1 - w1): alpha1 = alpha + w2 t, alpha2 = alpha - w1 t where
t = lo + u (hi - lo), u ~ Beta(2, 2), and [lo, hi] is the interval of t
keeping both means in (0, 1). The merge inverts it with
alpha = w1 alpha1 + w2 alpha2. The Jacobian of (alpha, u) -> (alpha1, alpha2)
is hi - lo.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy.special import betaln, gammaln, logsumexp
from scipy.stats import beta as beta_dist
from tqdm import tqdm

from ..exceptions import DomainError, ResourceLimit, ValidationError
from ..pooling.diagnostics import SimilaritySource, similarity_from_assignments
from ..pooling.draws import interval_of
from ..pooling.partitions import (Partition, PartitionPrior, enumerate_partitions,
                                  prior_log_mass)

THETA_EPS = 1e-12
ADAPT_WINDOW = 200
TARGET_ACCEPTANCE = (0.25, 0.45)
MAX_QUADRATURE_L = 6


@dataclass
class RjConfig:
    iterations: int = 200000
    burn_in: int = 50000
    q_range: tuple = (100.0, 1000.0)
    birth_prob: float = 0.5
    alpha_step: float = 0.5
    q_step: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if not self.iterations > self.burn_in >= 0:
            raise ValidationError('Need iterations > burn_in >= 0, got {} and {}'.format(
                self.iterations, self.burn_in))
        a, b = self.q_range
        if not 0 < a < b:
            raise ValidationError('q range must satisfy 0 < a < b, got {}'.format(self.q_range))
        self.q_range = (float(a), float(b))
        if not 0 <= self.birth_prob <= 1:
            raise ValidationError('birth_prob must lie in [0, 1]')
        if self.alpha_step <= 0 or self.q_step <= 0:
            raise ValidationError('Random-walk steps must be positive')


class RjState(object):
    """Partition, block means alpha (one per block), concentration q and study rates theta."""

    def __init__(self, g, alpha, q, theta):
        self.g = g if isinstance(g, Partition) else Partition(g)
        self.alpha = np.asarray(alpha, dtype=float)
        self.q = float(q)
        self.theta = np.asarray(theta, dtype=float)

    def copy(self):
        return RjState(self.g, self.alpha.copy(), self.q, self.theta.copy())

    @property
    def labels(self):
        return np.array(self.g.assignment, dtype=np.int64)

    def is_valid(self, q_range):
        a, b = q_range
        return (len(self.alpha) == self.g.num_blocks
                and len(self.theta) == len(self.g)
                and bool(np.all((self.alpha > 0) & (self.alpha < 1)))
                and bool(np.all((self.theta > 0) & (self.theta < 1)))
                and a <= self.q <= b)

    def relabeled(self, labels, alpha):
        """Canonical form of an arbitrary labelling, with alpha permuted to match."""
        order = []
        for label in labels:
            if label not in order:
                order.append(label)
        return RjState(Partition(labels), np.asarray(alpha)[order], self.q, self.theta)

    @classmethod
    def initial(cls, data, q_range):
        rate = (np.asarray(data.events) + 0.5) / (np.asarray(data.trials) + 1.0)
        return cls(Partition.singletons(len(rate)), rate.copy(), math.sqrt(q_range[0] * q_range[1]),
                   rate.copy())


def _beta_logpdf(theta, a, b):
    return (a - 1.0) * np.log(theta) + (b - 1.0) * np.log1p(-theta) - betaln(a, b)


def _block_loglik(theta, alpha, q):
    """sum of log Beta(theta_i; q alpha, q (1 - alpha)) over the given thetas."""
    if not 0 < alpha < 1:
        return -np.inf
    return float(np.sum(_beta_logpdf(theta, q * alpha, q * (1.0 - alpha))))


def log_joint(state, data, q_range=(100.0, 1000.0)):
    """
    Log of the joint density of (g, alpha, q, theta, y)
    Args:
        state (RjState)
        data:
            Anything with integer `events` and `trials` arrays (a StudySet)
        q_range (tuple):
            Support (a, b) of the log-uniform prior on q
    Returns:
        float, -inf outside the support
    """
    a, b = q_range
    theta, alpha = state.theta, state.alpha
    if not a <= state.q <= b:
        return -np.inf
    if np.any((alpha <= 0) | (alpha >= 1)) or np.any((theta <= 0) | (theta >= 1)):
        return -np.inf
    y = np.asarray(data.events, dtype=float)
    n = np.asarray(data.trials, dtype=float)
    per_study = alpha[state.labels]
    log_q = -math.log(state.q) - math.log(math.log(b / a))
    prior_theta = np.sum(_beta_logpdf(theta, state.q * per_study, state.q * (1.0 - per_study)))
    binom = np.sum(gammaln(n + 1) - gammaln(y + 1) - gammaln(n - y + 1)
                   + y * np.log(theta) + (n - y) * np.log1p(-theta))
    return (prior_log_mass(PartitionPrior.SIZE_BIASED, state.g) + log_q
            + float(prior_theta) + float(binom))


def gibbs_theta(state, data, rng):
    """Conjugate draw theta_i ~ Beta(q alpha_k + y_i, q (1 - alpha_k) + n_i - y_i)."""
    y = np.asarray(data.events, dtype=float)
    n = np.asarray(data.trials, dtype=float)
    per_study = state.alpha[state.labels]
    theta = rng.beta(state.q * per_study + y, state.q * (1.0 - per_study) + n - y)
    state.theta = np.clip(theta, THETA_EPS, 1.0 - THETA_EPS)
    return state.theta


def alpha_log_acceptance(state, k, proposal):
    """Log MH ratio for moving alpha_k to `proposal` by a random walk on its logit."""
    if not 0 < proposal < 1:
        return -np.inf
    current = state.alpha[k]
    members = state.theta[state.labels == k]
    return (_block_loglik(members, proposal, state.q) - _block_loglik(members, current, state.q)
            + math.log(proposal * (1.0 - proposal)) - math.log(current * (1.0 - current)))


def mh_alpha(state, k, step, rng):
    """Random-walk Metropolis update of alpha_k; returns True when accepted."""
    if not 0 <= k < state.g.num_blocks:
        raise DomainError('Block {} out of range for {} blocks'.format(k, state.g.num_blocks))
    current = state.alpha[k]
    logit = math.log(current / (1.0 - current)) + step * rng.standard_normal()
    proposal = 1.0 / (1.0 + math.exp(-logit))
    if math.log(rng.random()) < alpha_log_acceptance(state, k, proposal):
        state.alpha[k] = proposal
        return True
    return False


def q_log_acceptance(state, proposal, q_range):
    a, b = q_range
    if not a <= proposal <= b:
        return -np.inf
    per_study = state.alpha[state.labels]

    def loglik(q):
        return float(np.sum(_beta_logpdf(state.theta, q * per_study, q * (1.0 - per_study))))

    # on log q the prior is flat, so only the Beta terms remain
    return loglik(proposal) - loglik(state.q)


def mh_q(state, step, q_range, rng):
    """Random-walk Metropolis update of log q; proposals outside the support are rejected."""
    proposal = state.q * math.exp(step * rng.standard_normal())
    if math.log(rng.random()) < q_log_acceptance(state, proposal, q_range):
        state.q = proposal
        return True
    return False


def birth_probability(num_blocks, L, birth_prob=0.5):
    if num_blocks == 1:
        return 1.0
    if num_blocks == L:
        return 0.0
    return birth_prob


def _log(p):
    return math.log(p) if p > 0 else -np.inf


def split_interval(alpha, w1):
    """Feasible range [lo, hi] of t for a split with side weights (w1, 1 - w1)."""
    w2 = 1.0 - w1
    lo = max(-alpha / w2, (alpha - 1.0) / w1)
    hi = min((1.0 - alpha) / w2, alpha / w1)
    return lo, hi


def _split_log_proposal(g, size, u, birth_prob):
    """log q(split | g): block choice, side assignment (either order) and u."""
    splittable = sum(1 for s in g.block_sizes if s >= 2)
    return (_log(birth_probability(g.num_blocks, len(g), birth_prob))
            - math.log(splittable) + (1 - size) * math.log(2.0)
            + float(beta_dist.logpdf(u, 2, 2)))


def _merge_log_proposal(g, birth_prob):
    d = g.num_blocks
    return (_log(1.0 - birth_probability(d, len(g), birth_prob))
            - math.log(d * (d - 1) / 2.0))


@dataclass
class MoveResult:
    kind: str
    accepted: bool
    log_ratio: float = -np.inf


def propose_split(state, rng, birth_prob=0.5):
    """
    Birth proposal. Returns (new_state, log proposal ratio term) or None when
    the coin flips leave one side empty.
    """
    sizes = state.g.block_sizes
    candidates = [k for k, s in enumerate(sizes) if s >= 2]
    k = candidates[rng.integers(len(candidates))]
    members = np.array(state.g.blocks[k])
    sides = rng.integers(2, size=len(members))
    if sides.all() or not sides.any():
        return None
    w1 = float(np.sum(sides == 0)) / len(members)
    lo, hi = split_interval(state.alpha[k], w1)
    u = float(rng.beta(2, 2))
    t = lo + u * (hi - lo)
    alpha1 = state.alpha[k] + (1.0 - w1) * t
    alpha2 = state.alpha[k] - w1 * t
    labels = state.labels.copy()
    new_label = state.g.num_blocks
    labels[members[sides == 1]] = new_label
    alpha = np.append(state.alpha, alpha2)
    alpha[k] = alpha1
    proposed = state.relabeled(labels, alpha)
    log_q = (_merge_log_proposal(proposed.g, birth_prob)
             - _split_log_proposal(state.g, len(members), u, birth_prob)
             + math.log(hi - lo))
    return proposed, log_q


def propose_merge(state, rng, birth_prob=0.5, pair=None):
    """Death proposal merging two blocks; returns (new_state, log proposal ratio term)."""
    d = state.g.num_blocks
    if pair is None:
        k1 = int(rng.integers(d))
        k2 = int(rng.integers(d - 1))
        k2 += k2 >= k1
    else:
        k1, k2 = pair
    labels = state.labels
    n1 = int(np.sum(labels == k1))
    n2 = int(np.sum(labels == k2))
    w1 = n1 / float(n1 + n2)
    a1, a2 = state.alpha[k1], state.alpha[k2]
    merged_alpha = w1 * a1 + (1.0 - w1) * a2
    lo, hi = split_interval(merged_alpha, w1)
    t = (a1 - merged_alpha) / (1.0 - w1)
    u = (t - lo) / (hi - lo)
    new_labels = labels.copy()
    new_labels[new_labels == k2] = k1
    alpha = state.alpha.copy()
    alpha[k1] = merged_alpha
    # drop k2 and shift the labels above it
    alpha = np.delete(alpha, k2)
    new_labels[new_labels > k2] -= 1
    proposed = state.relabeled(new_labels, alpha)
    log_q = (_split_log_proposal(proposed.g, n1 + n2, u, birth_prob)
             - _merge_log_proposal(state.g, birth_prob)
             - math.log(hi - lo))
    return proposed, log_q


def split_merge_move(state, data, config, rng):
    """
    One birth or death attempt
    Args:
        state (RjState)
        data:
            Event and trial counts
        config (RjConfig)
        rng (numpy.random.Generator)
    Returns:
        (RjState, MoveResult): the input state when rejected
    """
    L = len(state.g)
    if L == 1:
        return state, MoveResult('none', False)
    b = birth_probability(state.g.num_blocks, L, config.birth_prob)
    if rng.random() < b:
        kind = 'split'
        proposal = propose_split(state, rng, config.birth_prob)
        if proposal is None:
            return state, MoveResult(kind, False)
    else:
        kind = 'merge'
        proposal = propose_merge(state, rng, config.birth_prob)
    proposed, log_q = proposal
    log_ratio = (log_joint(proposed, data, config.q_range)
                 - log_joint(state, data, config.q_range) + log_q)
    if math.log(rng.random()) < log_ratio:
        return proposed, MoveResult(kind, True, log_ratio)
    return state, MoveResult(kind, False, log_ratio)


@dataclass
class RjChain:
    ids: list
    assignments: np.ndarray
    theta: np.ndarray
    q: np.ndarray
    acceptance: dict
    steps: dict
    seed: object = None


class _Tally(object):
    def __init__(self):
        self.tried = 0
        self.accepted = 0
        self.window_tried = 0
        self.window_accepted = 0

    def add(self, accepted):
        self.tried += 1
        self.window_tried += 1
        self.accepted += accepted
        self.window_accepted += accepted

    def window_rate(self):
        rate = self.window_accepted / max(self.window_tried, 1)
        self.window_tried = self.window_accepted = 0
        return rate

    @property
    def rate(self):
        return self.accepted / max(self.tried, 1)


def _tuned(step, rate):
    if rate < TARGET_ACCEPTANCE[0]:
        return step * 0.8
    if rate > TARGET_ACCEPTANCE[1]:
        return step * 1.25
    return step


def run_rj_chain(studies, config, seed=None, progress=False):
    """
    Run one chain
    Args:
        studies (StudySet):
            Counts are used directly; the effect scale does not matter
        config (RjConfig)
        seed:
            Overrides config.seed; any numpy.random.default_rng seed
    Returns:
        RjChain with the post-burn-in states
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    state = RjState.initial(studies, config.q_range)
    L = len(state.g)
    kept = config.iterations - config.burn_in
    assignments = np.empty((kept, L), dtype=np.int8)
    theta = np.empty((kept, L))
    qs = np.empty(kept)
    alpha_step, q_step = config.alpha_step, config.q_step
    tallies = {'alpha': _Tally(), 'q': _Tally(), 'split': _Tally(), 'merge': _Tally()}

    for it in tqdm(range(config.iterations), desc='rjmcmc', disable=not progress):
        gibbs_theta(state, studies, rng)
        for k in range(state.g.num_blocks):
            tallies['alpha'].add(mh_alpha(state, k, alpha_step, rng))
        tallies['q'].add(mh_q(state, q_step, config.q_range, rng))
        state, move = split_merge_move(state, studies, config, rng)
        if move.kind in tallies:
            tallies[move.kind].add(move.accepted)
        assert state.is_valid(config.q_range), 'invalid chain state at iteration {}'.format(it)

        if it < config.burn_in and (it + 1) % ADAPT_WINDOW == 0:
            alpha_step = _tuned(alpha_step, tallies['alpha'].window_rate())
            q_step = _tuned(q_step, tallies['q'].window_rate())
        if it == config.burn_in - 1:
            logging.info('RJMCMC warm-up done: alpha step {:.4g}, q step {:.4g}'.format(
                alpha_step, q_step))
        if it >= config.burn_in:
            row = it - config.burn_in
            assignments[row] = state.g.assignment
            theta[row] = state.theta
            qs[row] = state.q

    acceptance = {name: tally.rate for name, tally in tallies.items()}
    logging.info('RJMCMC acceptance rates: {}'.format(
        ', '.join('{}={:.3f}'.format(k, v) for k, v in sorted(acceptance.items()))))
    return RjChain(list(studies.ids), assignments, theta, qs, acceptance,
                   {'alpha': alpha_step, 'q': q_step}, seed)


def run_rj_chains(studies, config, chains=2, threads=1):
    """Independent chains on spawned seed streams, for replication checks."""
    streams = np.random.SeedSequence(config.seed).spawn(chains)
    return Parallel(n_jobs=threads)(delayed(run_rj_chain)(studies, config, seed=ss)
                                    for ss in streams)


def partition_frequencies(chain):
    """Visit frequencies of each partition, most frequent first, as (Partition, freq)."""
    rows, counts = np.unique(chain.assignments, axis=0, return_counts=True)
    order = np.lexsort((np.arange(len(counts)), -counts))
    total = float(counts.sum())
    return [(Partition(rows[i].tolist()), counts[i] / total) for i in order]


@dataclass
class RjSummary:
    studies: list
    similarity: object
    frequencies: list
    acceptance: dict
    steps: dict
    q: object = None
    extra: dict = field(default_factory=dict)

    def to_dict(self, top_k=10):
        return {'studies': [s.to_dict() for s in self.studies],
                'similarity': self.similarity.to_dict(),
                'partitions': [{'partition': g.render(self.similarity.ids), 'frequency': f}
                               for g, f in self.frequencies[:top_k]],
                'acceptance': self.acceptance, 'steps': self.steps,
                'q': self.q.to_dict()}


def rj_summaries(chain, level=0.95):
    """Posterior means and intervals of theta, co-clustering frequencies and partition table."""
    if len(chain.theta) == 0:
        raise DomainError('RJMCMC chain has no kept iterations')
    studies = [interval_of(chain.theta[:, j], level, label=study_id)
               for j, study_id in enumerate(chain.ids)]
    similarity = similarity_from_assignments(chain.assignments, chain.ids,
                                             SimilaritySource.RJ_CHAIN)
    return RjSummary(studies, similarity, partition_frequencies(chain), chain.acceptance,
                     chain.steps, q=interval_of(chain.q, level, label='q'))


def log_beta_binomial(y, n, alpha, q):
    """log BetaBin(y; n, q alpha, q (1 - alpha)), broadcasting over alpha and q."""
    return (gammaln(n + 1) - gammaln(y + 1) - gammaln(n - y + 1)
            + betaln(y + q * alpha, n - y + q * (1.0 - alpha)) - betaln(q * alpha, q * (1.0 - alpha)))


def quadrature_posterior(data, q_range=(100.0, 1000.0), alpha_points=2000, q_points=80):
    """
    Exact-to-quadrature posterior with theta, alpha and q integrated out
    Args:
        data:
            Event and trial counts, at most six studies
        alpha_points, q_points (int):
            Midpoint rule sizes on alpha in (0, 1) and on log q
    Returns:
        (dict Partition -> probability, array of posterior means of theta)
    """
    y = np.asarray(data.events, dtype=float)
    n = np.asarray(data.trials, dtype=float)
    L = len(y)
    if L > MAX_QUADRATURE_L:
        raise ResourceLimit('Quadrature oracle supports at most {} studies'.format(
            MAX_QUADRATURE_L))
    a, b = q_range
    alpha = (np.arange(alpha_points) + 0.5) / alpha_points
    q = np.exp(math.log(a) + (np.arange(q_points) + 0.5) / q_points * math.log(b / a))
    # (L, q, alpha)
    table = log_beta_binomial(y[:, None, None], n[:, None, None], alpha[None, None, :],
                              q[None, :, None])
    # E(theta_i | alpha, q, y_i), same shape
    conditional = ((y[:, None, None] + q[None, :, None] * alpha[None, None, :])
                   / (n[:, None, None] + q[None, :, None]))
    log_post, means = {}, {}
    for g in enumerate_partitions(L):
        per_q = np.zeros(q_points)
        theta = np.zeros((L, q_points))
        for block in g.blocks:
            members = list(block)
            joint = table[members].sum(axis=0)
            block_log = logsumexp(joint, axis=1)
            weights = np.exp(joint - block_log[:, None])
            theta[members] = (conditional[members] * weights[None]).sum(axis=2)
            per_q += block_log - math.log(alpha_points)
        q_weights = np.exp(per_q - logsumexp(per_q))
        means[g] = theta @ q_weights
        log_post[g] = (prior_log_mass(PartitionPrior.SIZE_BIASED, g)
                       + logsumexp(per_q) - math.log(q_points))
    norm = logsumexp(list(log_post.values()))
    probs = {g: math.exp(v - norm) for g, v in log_post.items()}
    return probs, sum(p * means[g] for g, p in probs.items())


def quadrature_partition_posterior(data, q_range=(100.0, 1000.0), alpha_points=2000,
                                   q_points=80):
    """Partition probabilities from quadrature_posterior."""
    return quadrature_posterior(data, q_range, alpha_points, q_points)[0]
