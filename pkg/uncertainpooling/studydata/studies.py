"""
Study-level count data: ingestion, validation, effect sizes and the
bundled asymptomatic-rate datasets.
"""
import enum
import io
import logging
from dataclasses import dataclass

import numpy as np
import pkg_resources
import unicodecsv as csv
import yaml
from scipy.special import expit

from ..exceptions import BoundaryCount, NotFound, ValidationError

CSV_FIELDS = ['study_id', 'label', 'events', 'trials']
DATASET_RESOURCE = 'datasets.yaml'


class EffectScale(enum.Enum):
    PROPORTION = 'prop'
    LOGODDS = 'logit'

    def to_probability(self, values):
        """Map values on this scale back to proportions."""
        if self is EffectScale.LOGODDS:
            return expit(values)
        return np.asarray(values, dtype=float)


class ContinuityPolicy(enum.Enum):
    REJECT = 'reject'
    HALDANE = 'haldane'


@dataclass(frozen=True)
class Study:
    id: int
    label: str
    events: int
    trials: int

    def __post_init__(self):
        if self.trials < 1:
            raise ValidationError(
                'Study {}: trials must be positive, got {}'.format(self.id, self.trials))
        if not 0 <= self.events <= self.trials:
            raise ValidationError(
                'Study {}: events must lie in [0, trials], got {}/{}'.format(
                    self.id, self.events, self.trials))

    @property
    def proportion(self):
        return self.events / self.trials


@dataclass(frozen=True)
class EffectSummary:
    effect: float
    variance: float
    scale: EffectScale

    @property
    def se(self):
        return float(np.sqrt(self.variance))


def effect_summary(study, scale=EffectScale.LOGODDS, correction=ContinuityPolicy.REJECT):
    """
    Effect size and its plug-in sampling variance for one study
    Args:
        study (Study):
            Event and trial counts
        scale (EffectScale):
            PROPORTION gives (p, p(1-p)/n); LOGODDS gives
            (log[p/(1-p)], 1/[n p (1-p)])
        correction (ContinuityPolicy):
            What to do when events is 0 or equal to trials
    Returns:
        EffectSummary
    """
    events, trials = float(study.events), float(study.trials)
    if study.events in (0, study.trials):
        if correction is ContinuityPolicy.REJECT:
            raise BoundaryCount(
                'Study {} has {}/{} events; the {} scale needs a continuity '
                'correction'.format(study.id, study.events, study.trials, scale.value))
        events, trials = events + 0.5, trials + 1.0
        logging.warning('Applied Haldane correction to study {}'.format(study.id))

    p = events / trials
    if scale is EffectScale.PROPORTION:
        return EffectSummary(p, p * (1.0 - p) / trials, scale)
    return EffectSummary(float(np.log(p / (1.0 - p))), 1.0 / (trials * p * (1.0 - p)), scale)


class StudySet(object):
    """
    An ordered collection of studies with their effect summaries on one scale.
    Study ids are kept from the input so subsets keep their original numbering.
    """

    def __init__(self, studies, scale=EffectScale.LOGODDS,
                 correction=ContinuityPolicy.REJECT, name=None, provenance=None):
        studies = list(studies)
        if not studies:
            raise ValidationError('A study set needs at least one study')
        ids = [s.id for s in studies]
        if len(set(ids)) != len(ids):
            dupes = sorted(set(i for i in ids if ids.count(i) > 1))
            raise ValidationError('Duplicate study ids: {}'.format(dupes))
        self.studies = studies
        self.scale = scale
        self.correction = correction
        self.name = name
        self.provenance = provenance
        self.summaries = [effect_summary(s, scale, correction) for s in studies]

    def __len__(self):
        return len(self.studies)

    def __iter__(self):
        return iter(self.studies)

    @property
    def ids(self):
        return [s.id for s in self.studies]

    @property
    def labels(self):
        return [s.label for s in self.studies]

    @property
    def events(self):
        return np.array([s.events for s in self.studies], dtype=int)

    @property
    def trials(self):
        return np.array([s.trials for s in self.studies], dtype=int)

    @property
    def effects(self):
        return np.array([e.effect for e in self.summaries])

    @property
    def variances(self):
        return np.array([e.variance for e in self.summaries])

    def index_of(self, study_id):
        try:
            return self.ids.index(study_id)
        except ValueError:
            raise NotFound('No study with id {} (ids are {})'.format(study_id, self.ids))

    def subset(self, study_ids, name=None):
        """Studies with the given ids, in the given order, on the same scale."""
        chosen = [self.studies[self.index_of(i)] for i in study_ids]
        return StudySet(chosen, self.scale, self.correction, name=name,
                        provenance=self.provenance)

    def rescaled(self, scale, correction=None):
        return StudySet(self.studies, scale, correction or self.correction,
                        name=self.name, provenance=self.provenance)


def _decoded_rows(reader):
    while True:
        try:
            row = next(reader)
        except StopIteration:
            return
        except UnicodeDecodeError:
            # lines are decoded before the csv reader counts them
            raise ValidationError('Line {}: not valid UTF-8'.format(reader.line_num + 1))
        yield row


def load_studies(source, scale=EffectScale.LOGODDS, correction=ContinuityPolicy.REJECT,
                 name=None):
    """
    Read studies from a CSV byte stream
    Args:
        source (binary file object):
            CSV with header `study_id,label,events,trials`
        scale (EffectScale):
            Scale of the effect summaries
        correction (ContinuityPolicy):
            Boundary count handling
        name (str):
            Optional name for the resulting set
    Returns:
        StudySet, rows in file order
    """
    reader = csv.DictReader(source, encoding='utf-8')
    try:
        header = reader.fieldnames
    except UnicodeDecodeError:
        raise ValidationError('Line 1: not valid UTF-8')
    if header is None or [f.strip() for f in header] != CSV_FIELDS:
        raise ValidationError('Expected CSV header {}, got {}'.format(
            ','.join(CSV_FIELDS), header))
    reader.fieldnames = list(CSV_FIELDS)
    studies = []
    for row in _decoded_rows(reader):
        line = reader.line_num
        if None in row or any(row[f] is None for f in CSV_FIELDS):
            raise ValidationError('Line {}: expected {} fields'.format(line, len(CSV_FIELDS)))
        try:
            study_id = int(row['study_id'])
            events = int(row['events'])
            trials = int(row['trials'])
        except ValueError:
            raise ValidationError('Line {}: study_id, events and trials must be '
                                  'integers'.format(line))
        try:
            studies.append(Study(study_id, row['label'], events, trials))
        except ValidationError as e:
            raise ValidationError('Line {}: {}'.format(line, e))
    logging.info('Read {} studies'.format(len(studies)))
    return StudySet(studies, scale, correction, name=name)


def serialize_studies(studies, sink=None):
    """
    Write a StudySet in the format `load_studies` reads.
    Returns the bytes when no sink is given.
    """
    out = sink if sink is not None else io.BytesIO()
    writer = csv.writer(out, encoding='utf-8', lineterminator='\n')
    writer.writerow(CSV_FIELDS)
    for s in studies:
        writer.writerow([s.id, s.label, s.events, s.trials])
    if sink is None:
        return out.getvalue()


def _dataset_specs():
    with pkg_resources.resource_stream(__name__, DATASET_RESOURCE) as stream:
        return yaml.safe_load(stream)


def dataset_names():
    return list(_dataset_specs().keys())


def bundled_dataset(name, scale=EffectScale.LOGODDS, correction=ContinuityPolicy.REJECT):
    """
    One of the bundled asymptomatic-rate datasets
    Args:
        name (str):
            he2020_five, children_eleven, children_six or screening_seven
    Returns:
        StudySet with the original study numbering
    """
    specs = _dataset_specs()
    if name not in specs:
        raise NotFound('Unknown dataset {!r}; valid names are {}'.format(
            name, ', '.join(specs)))
    spec = specs[name]
    if 'subset_of' in spec:
        parent = bundled_dataset(spec['subset_of'], scale, correction)
        subset = parent.subset(spec['study_ids'], name=name)
        subset.provenance = spec['provenance']
        return subset
    studies = [Study(row['id'], row['label'], row['events'], row['trials'])
               for row in spec['studies']]
    return StudySet(studies, scale, correction, name=name, provenance=spec['provenance'])
