"""
Set partitions of the studies {1,...,L}.

A partition is stored as its restricted-growth string: block labels
in index order, with first occurrences numbered 0, 1, 2, ...
Enumeration walks these strings in lexicographic order, and ranks
are positions in that order, so a worker can start anywhere by
unranking and then step forward with O(L) state.
"""
import enum
import math
from functools import lru_cache

import numpy as np

from ..exceptions import DomainError, ResourceLimit

MAX_ENUMERATION_L = 14


def canonical_labels(labels):
    """Relabel blocks by first occurrence; returns a tuple of ints."""
    seen = {}
    out = []
    for label in labels:
        if label not in seen:
            seen[label] = len(seen)
        out.append(seen[label])
    return tuple(out)


class Partition(object):
    """
    An immutable grouping of study positions 0..L-1 into disjoint blocks.
    Block k holds the positions whose label is k.
    """
    __slots__ = ('assignment', 'num_blocks')

    def __init__(self, assignment):
        assignment = canonical_labels(assignment)
        if not assignment:
            raise DomainError('A partition needs at least one element')
        object.__setattr__(self, 'assignment', assignment)
        object.__setattr__(self, 'num_blocks', max(assignment) + 1)

    def __setattr__(self, name, value):
        raise AttributeError('Partition is immutable')

    def __reduce__(self):
        return (Partition, (self.assignment,))

    @classmethod
    def from_blocks(cls, blocks):
        """Build from an iterable of blocks of 0-based positions."""
        blocks = [list(b) for b in blocks]
        size = sum(len(b) for b in blocks)
        labels = [None] * size
        for k, block in enumerate(blocks):
            for i in block:
                if not 0 <= i < size or labels[i] is not None:
                    raise DomainError('Blocks {} do not partition 0..{}'.format(blocks, size - 1))
                labels[i] = k
        return cls(labels)

    @classmethod
    def pool_all(cls, size):
        return cls([0] * size)

    @classmethod
    def singletons(cls, size):
        return cls(range(size))

    def __len__(self):
        return len(self.assignment)

    def __eq__(self, other):
        return isinstance(other, Partition) and self.assignment == other.assignment

    def __hash__(self):
        return hash(self.assignment)

    def __repr__(self):
        return 'Partition({})'.format(self.render())

    @property
    def blocks(self):
        out = [[] for _ in range(self.num_blocks)]
        for i, k in enumerate(self.assignment):
            out[k].append(i)
        return tuple(tuple(b) for b in out)

    @property
    def block_sizes(self):
        return tuple(len(b) for b in self.blocks)

    def render(self, ids=None):
        """Block notation such as `{1,2,5}{3,4}`, using study ids when given."""
        ids = list(ids) if ids is not None else list(range(1, len(self) + 1))
        return ''.join('{' + ','.join(str(ids[i]) for i in block) + '}'
                       for block in self.blocks)


@lru_cache(maxsize=None)
def _stirling2(n, k):
    if n == k:
        return 1
    if k == 0 or k > n:
        return 0
    return k * _stirling2(n - 1, k) + _stirling2(n - 1, k - 1)


def stirling_count(L, d):
    """Number of partitions of L items into exactly d blocks."""
    if L < 1 or not 1 <= d <= L:
        raise DomainError('Need 1 <= d <= L, got L={}, d={}'.format(L, d))
    return _stirling2(L, d)


def bell_number(L):
    if L < 1:
        raise DomainError('L must be positive, got {}'.format(L))
    return sum(_stirling2(L, d) for d in range(1, L + 1))


@lru_cache(maxsize=None)
def count_completions(remaining, current_max):
    """
    Number of ways to extend a restricted-growth prefix whose largest
    label is `current_max` by `remaining` more positions.
    """
    if remaining == 0:
        return 1
    return ((current_max + 1) * count_completions(remaining - 1, current_max)
            + count_completions(remaining - 1, current_max + 1))


def unrank_partition(L, rank):
    """The restricted-growth string at position `rank` in lexicographic order."""
    if not 0 <= rank < bell_number(L):
        raise DomainError('Rank {} out of range for L={}'.format(rank, L))
    labels = [0]
    current_max = 0
    for pos in range(1, L):
        remaining = L - 1 - pos
        for v in range(current_max + 2):
            count = count_completions(remaining, max(current_max, v))
            if rank < count:
                labels.append(v)
                current_max = max(current_max, v)
                break
            rank -= count
    return tuple(labels)


def rank_partition(g):
    """Inverse of unrank_partition."""
    labels = g.assignment if isinstance(g, Partition) else canonical_labels(g)
    L = len(labels)
    rank = 0
    current_max = 0
    for pos in range(1, L):
        remaining = L - 1 - pos
        v = labels[pos]
        for w in range(v):
            rank += count_completions(remaining, max(current_max, w))
        current_max = max(current_max, v)
    return rank


def iter_assignments(L, start=0, stop=None):
    """
    Yield restricted-growth tuples with ranks in [start, stop).
    """
    total = bell_number(L)
    stop = total if stop is None else min(stop, total)
    if start >= stop:
        return
    labels = list(unrank_partition(L, start))
    prefix_max = []
    running = 0
    for v in labels:
        running = max(running, v)
        prefix_max.append(running)

    for _ in range(start, stop):
        yield tuple(labels)
        i = L - 1
        while i > 0 and labels[i] == prefix_max[i - 1] + 1:
            i -= 1
        if i == 0:
            return
        labels[i] += 1
        prefix_max[i] = max(prefix_max[i - 1], labels[i])
        for j in range(i + 1, L):
            labels[j] = 0
            prefix_max[j] = prefix_max[i]


def assignment_block(L, start, stop):
    """Ranks [start, stop) as an int array of shape (stop - start, L)."""
    rows = list(iter_assignments(L, start, stop))
    return np.array(rows, dtype=np.int64).reshape(len(rows), L)


def enumerate_partitions(L, start=0, stop=None):
    """
    Stream every partition of L items in lexicographic restricted-growth order.
    Calling it again restarts the stream; start/stop select a rank range.
    """
    if not 1 <= L <= MAX_ENUMERATION_L:
        raise ResourceLimit('Partition enumeration supports 1 <= L <= {}, got {}'.format(
            MAX_ENUMERATION_L, L))
    for labels in iter_assignments(L, start, stop):
        yield Partition(labels)


class PartitionPrior(enum.Enum):
    UNIFORM = 'uniform'
    SIZE_BIASED = 'size-biased'

    def log_mass_by_blocks(self, L):
        """
        Array indexed by d (index 0 unused) holding log p(g) for any g with d blocks.
        """
        out = np.full(L + 1, -np.inf)
        if self is PartitionPrior.UNIFORM:
            out[1:] = -math.log(bell_number(L))
            return out
        # p(g) = (1/d) / S(L, d) / H_L, H_L the harmonic number
        harmonic = sum(1.0 / d for d in range(1, L + 1))
        for d in range(1, L + 1):
            out[d] = -math.log(d) - math.log(_stirling2(L, d)) - math.log(harmonic)
        return out


def prior_log_mass(prior, g, L=None):
    """log p(g) under a partition prior."""
    L = len(g) if L is None else L
    if len(g) != L:
        raise DomainError('Partition has {} elements, expected {}'.format(len(g), L))
    return float(prior.log_mass_by_blocks(L)[g.num_blocks])


def dominant_block_predicate(g, min_block):
    """True iff g has exactly one block of size >= min_block and all others are singletons."""
    sizes = g.block_sizes
    large = [s for s in sizes if s >= min_block]
    return len(large) == 1 and all(s == 1 for s in sizes if s < min_block)


def block_size_matrix(assignments, L):
    """Block sizes for each row of an assignment array, shape (rows, L)."""
    return (assignments[:, :, None] == np.arange(L)[None, None, :]).sum(axis=1)


def dominant_block_mask(assignments, min_block):
    """Vectorized dominant_block_predicate over an assignment array."""
    sizes = block_size_matrix(assignments, assignments.shape[1])
    large = (sizes >= min_block).sum(axis=1) == 1
    mid = ((sizes > 1) & (sizes < min_block)).sum(axis=1) == 0
    return large & mid
