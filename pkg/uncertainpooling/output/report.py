"""
Report writers: the JSON report, the per-study summary CSV and the raw
RJMCMC chain CSV.
"""
import json
import logging
from pathlib import Path

import numpy as np
import unicodecsv as csv

from .. import __version__

SCHEMA_VERSION = 1
TOOL_NAME = 'uncertainpooling'
SUMMARY_FIELDS = ['method', 'setting', 'study_id', 'mean', 'lower', 'upper', 'level']


def _plain(value):
    """Convert numpy scalars and arrays into JSON-serializable values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    return value


def build_report(command, config, results):
    """
    Assemble a report
    Args:
        command (str):
            Subcommand that produced it
        config (dict):
            Resolved configuration (runtime-only keys already removed)
        results (dict):
            Method results
    Returns:
        dict
    """
    return {'schema_version': SCHEMA_VERSION,
            'tool': {'name': TOOL_NAME, 'version': __version__},
            'command': command,
            'seed': config.get('seed'),
            'config': config,
            'results': results}


def report_bytes(report):
    return (json.dumps(_plain(report), sort_keys=True, indent=2) + '\n').encode('utf-8')


def write_report(report, path):
    Path(path).write_bytes(report_bytes(report))
    logging.info('Wrote {}'.format(path))


def summary_rows(method, setting, summaries):
    """Rows for the summary CSV from a list of IntervalSummary."""
    return [{'method': method, 'setting': setting, 'study_id': s.id, 'mean': repr(s.mean),
             'lower': repr(s.lower), 'upper': repr(s.upper), 'level': s.level}
            for s in summaries]


def write_summary_csv(rows, path):
    with open(path, 'wb') as outfile:
        writer = csv.DictWriter(outfile, fieldnames=SUMMARY_FIELDS, encoding='utf-8',
                                lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    logging.info('Wrote {}'.format(path))


def write_chain_csv(chain, path):
    """One row per kept RJMCMC iteration: partition, q and every theta."""
    fields = ['iteration', 'partition', 'q'] + ['theta_{}'.format(i) for i in chain.ids]
    with open(path, 'wb') as outfile:
        writer = csv.writer(outfile, encoding='utf-8', lineterminator='\n')
        writer.writerow(fields)
        for it, (labels, q, theta) in enumerate(zip(chain.assignments, chain.q, chain.theta)):
            writer.writerow([it, '-'.join(str(int(x)) for x in labels), repr(float(q))]
                            + [repr(float(t)) for t in theta])
    logging.info('Wrote {}'.format(path))


def write_bytes(data, path):
    Path(path).write_bytes(data)
    logging.info('Wrote {}'.format(path))
