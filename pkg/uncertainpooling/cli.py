#!/usr/bin/env python
"""
Command line front end: pool, dpm, rjmcmc, ppc and datasets.
"""
import argparse
import logging
import sys
from pathlib import Path

import yaml
from joblib import cpu_count

from .exceptions import PoolingError, ValidationError
from .mcmc.dpm import DpmConfig, dpm_summaries, m_label, mle_base_measure, run_dpm
from .mcmc.rjmcmc import RjConfig, rj_summaries, run_rj_chain
from .output.report import (build_report, summary_rows, write_bytes, write_chain_csv,
                            write_report, write_summary_csv)
from .pooling.covariates import load_covariates, sample_mu_beta
from .pooling.diagnostics import (dominant_cluster_probability, posterior_predictive_pvalue,
                                  render_similarity, similarity_from_grid)
from .pooling.draws import overall_effect_interval, sample_mu, summarize
from .pooling.partitions import PartitionPrior
from .pooling.posterior import GridSpec, VariancePrior, compute_joint_posterior
from .studydata import (ContinuityPolicy, EffectScale, bundled_dataset, dataset_names,
                        load_studies, serialize_studies)

FORMATS = ('json', 'csv', 'svg')
RUNTIME_KEYS = ('threads', 'output_dir', 'logfile', 'config', 'quiet', 'verbose', 'func')
# delta^2 prior per command when --prior is not given
DEFAULT_PRIORS = {'ppc': 'invgamma'}


def _common_parser():
    common = argparse.ArgumentParser(add_help=False)
    source = common.add_mutually_exclusive_group()
    source.add_argument('--dataset', type=str, help='Name of a bundled dataset.')
    source.add_argument('--input', type=str,
                        help='CSV with header study_id,label,events,trials.')
    common.add_argument('--scale', choices=['prop', 'logit'], default='logit',
                        help='Effect scale: sample proportion or its log-odds.')
    common.add_argument('--correction', choices=['reject', 'haldane'], default='reject',
                        help='Handling of 0 or n events.')
    common.add_argument('--prior', choices=['invbeta', 'invgamma'], default=None,
                        help='Prior on the common delta^2 (default invgamma for ppc, '
                             'invbeta otherwise).')
    common.add_argument('--ig-alpha', type=float, default=11.01)
    common.add_argument('--ig-beta', type=float, default=0.001)
    common.add_argument('--delta2-min', type=float, default=3e-4)
    common.add_argument('--delta2-max', type=float, default=1e2)
    common.add_argument('--grid-points', type=int, default=101)
    common.add_argument('--keep-mass', type=float, default=0.992,
                        help='Probability mass of the retained grid cells.')
    common.add_argument('--level', type=float, default=0.95, help='Credible level.')
    common.add_argument('--seed', type=int, default=None, help='Random seed (required).')
    common.add_argument('--output-dir', type=str, default='output')
    common.add_argument('--formats', type=str, default='json,csv,svg',
                        help='Comma separated subset of json,csv,svg.')
    common.add_argument('--threads', type=int, default=cpu_count())
    common.add_argument('--config', type=str,
                        help='Flat YAML file of option values; flags override it.')
    common.add_argument('--logfile', type=str, help='Use a particular logfile.')
    common.add_argument('--quiet', action='store_true', default=False)
    common.add_argument('--verbose', action='store_true', default=False)
    return common


def build_parser():
    """Returns the top-level parser and its subparsers by command name."""
    parser = argparse.ArgumentParser(
        prog='uncertainpooling',
        description='Bayesian uncertain pooling, DPM and reversible-jump '
                    'meta-analysis of binomial rates.')
    sub = parser.add_subparsers(dest='command')
    sub.required = True
    common = _common_parser()
    parsers = {}

    p = sub.add_parser('pool', parents=[common], help='Grid posterior over partitions.')
    p.add_argument('--partition-prior', choices=['uniform', 'size-biased'], default='uniform')
    p.add_argument('--draws', type=int, default=10000)
    p.add_argument('--top-k', type=int, default=10)
    p.add_argument('--min-block', type=int, default=4,
                   help='Size of the dominant cluster for the class probability.')
    p.add_argument('--overall-effect', choices=['predictive', 'mean'], default='predictive',
                   help='Interval for a new study effect, or for the pooled mean only.')
    p.add_argument('--covariates', type=str,
                   help='CSV with header study_id,<name1>,... for regression offsets.')
    p.set_defaults(func=cmd_pool)
    parsers['pool'] = p

    p = sub.add_parser('dpm', parents=[common], help='Dirichlet process mixture.')
    p.add_argument('--m', type=str, help='Comma separated concentration values.')
    p.add_argument('--iterations', type=int, default=20000)
    p.add_argument('--burn-in', type=int, default=5000)
    p.set_defaults(func=cmd_dpm)
    parsers['dpm'] = p

    p = sub.add_parser('rjmcmc', parents=[common], help='Binomial-beta reversible jump.')
    p.add_argument('--iterations', type=int, default=200000)
    p.add_argument('--burn-in', type=int, default=50000)
    p.add_argument('--q-range', type=str, default='100,1000')
    p.add_argument('--dump-chain', action='store_true', default=False,
                   help='Also write chain.csv.')
    p.set_defaults(func=cmd_rjmcmc)
    parsers['rjmcmc'] = p

    p = sub.add_parser('ppc', parents=[common], help='Posterior predictive check of pool-all.')
    p.add_argument('--replicates', type=int, default=20000)
    p.set_defaults(func=cmd_ppc)
    parsers['ppc'] = p

    p = sub.add_parser('datasets', help='List or export the bundled datasets.')
    p.add_argument('--export', type=str, help='Write this dataset as CSV.')
    p.add_argument('--output', type=str, help='Export path (standard output if omitted).')
    p.add_argument('--logfile', type=str, help='Use a particular logfile.')
    p.add_argument('--quiet', action='store_true', default=False)
    p.add_argument('--verbose', action='store_true', default=False)
    p.set_defaults(func=cmd_datasets, config=None)
    parsers['datasets'] = p
    return parser, parsers


def load_config(path, valid_keys):
    """Read a flat YAML mapping of option values; keys may use - or _."""
    try:
        with open(path, 'rb') as infile:
            raw = yaml.safe_load(infile) or {}
    except (IOError, OSError) as e:
        raise ValidationError('Cannot read config {}: {}'.format(path, e))
    except yaml.YAMLError as e:
        raise ValidationError('Config {} is not valid YAML: {}'.format(path, e))
    if not isinstance(raw, dict):
        raise ValidationError('Config {} must be a flat mapping'.format(path))
    values = {}
    for key, value in raw.items():
        dest = str(key).replace('-', '_')
        if dest not in valid_keys or dest in ('config', 'func', 'command'):
            raise ValidationError('Unknown config key {!r}'.format(key))
        if isinstance(value, (dict, list)):
            raise ValidationError('Config key {!r} must have a scalar value'.format(key))
        values[dest] = value
    return values


def parse_args(argv=None):
    parser, parsers = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, 'config', None):
        parsers[args.command].set_defaults(**load_config(args.config, vars(args)))
        args = parser.parse_args(argv)
    if hasattr(args, 'prior') and args.prior is None:
        args.prior = DEFAULT_PRIORS.get(args.command, 'invbeta')
    return args


def _csv_list(text, cast, name):
    try:
        return [cast(x.strip()) for x in str(text).split(',') if x.strip()]
    except ValueError:
        raise ValidationError('--{} must be a comma separated list, got {!r}'.format(name, text))


def _formats(args):
    formats = _csv_list(args.formats, str, 'formats')
    unknown = [f for f in formats if f not in FORMATS]
    if unknown or not formats:
        raise ValidationError('Unknown output formats {}; choose from {}'.format(
            unknown, ','.join(FORMATS)))
    return formats


def _choice(kind, value, name):
    try:
        return kind(value)
    except ValueError:
        raise ValidationError('Invalid --{} {!r}'.format(name, value))


def load_input(args):
    """The StudySet named by --dataset or --input."""
    scale = _choice(EffectScale, args.scale, 'scale')
    correction = _choice(ContinuityPolicy, args.correction, 'correction')
    if args.dataset:
        return bundled_dataset(args.dataset, scale, correction)
    if not args.input:
        raise ValidationError('Give --dataset or --input')
    try:
        with open(args.input, 'rb') as infile:
            return load_studies(infile, scale, correction, name=Path(args.input).stem)
    except (IOError, OSError) as e:
        raise ValidationError('Cannot read {}: {}'.format(args.input, e))


def grid_settings(args):
    grid = GridSpec(args.delta2_min, args.delta2_max, args.grid_points, keep_mass=args.keep_mass)
    vprior = VariancePrior(args.prior, args.ig_alpha, args.ig_beta)
    return grid, vprior


def resolved_config(args):
    """Every option except the runtime-only ones, for the report."""
    return {k: v for k, v in sorted(vars(args).items()) if k not in RUNTIME_KEYS}


def _require_seed(args):
    if args.seed is None:
        raise ValidationError('--seed is required')


def _output_dir(args):
    out = Path(args.output_dir)
    out.mkdir(exist_ok=True, parents=True)
    return out


def _emit(args, formats, report, rows, svgs):
    out = _output_dir(args)
    if 'json' in formats:
        write_report(report, out / 'report.json')
    if 'csv' in formats:
        write_summary_csv(rows, out / 'summary.csv')
    if 'svg' in formats:
        for name, sm in svgs:
            write_bytes(render_similarity(sm, 'svg'), out / name)


def cmd_pool(args):
    _require_seed(args)
    formats = _formats(args)
    studies = load_input(args)
    grid, vprior = grid_settings(args)
    pprior = _choice(PartitionPrior, args.partition_prior, 'partition-prior')
    design = None
    if args.covariates:
        try:
            with open(args.covariates, 'rb') as infile:
                design = load_covariates(infile, studies)
        except (IOError, OSError) as e:
            raise ValidationError('Cannot read {}: {}'.format(args.covariates, e))

    jp = compute_joint_posterior(studies, grid, vprior, pprior, threads=args.threads,
                                 progress=not args.quiet)
    draws = sample_mu(jp, studies, args.draws, args.seed)
    summaries = summarize(draws, args.level)
    similarity = similarity_from_grid(jp)
    overall = overall_effect_interval(studies, grid, vprior, args.level, B=args.draws,
                                      seed=args.seed,
                                      predictive=args.overall_effect == 'predictive')
    results = {
        'dataset': studies.name,
        'studies': [s.to_dict() for s in summaries],
        'overall_effect': overall.to_dict(),
        'top_partitions': [{'partition': g.render(jp.ids), 'probability': p}
                           for g, p in jp.top_partitions(args.top_k)],
        'pool_all_probability': jp.pool_all_probability,
        'dominant_cluster': {'min_block': args.min_block,
                             'probability': dominant_cluster_probability(jp, args.min_block)},
        'delta2_marginal': [{'delta2': d, 'probability': p}
                            for d, p in zip(jp.delta2, jp.delta2_marginal)],
        'retained_mass': jp.retained_mass,
        'dropped_mass': jp.dropped_mass,
        'retained_cells': jp.num_retained,
        'similarity': similarity.to_dict(),
    }
    rows = summary_rows('pool', 'B={}'.format(args.draws), summaries)
    rows += summary_rows('pool', 'overall', [overall])
    if design is not None:
        beta = sample_mu_beta(jp, studies, design, args.draws, args.seed).summaries(args.level)
        results['covariates'] = [b.to_dict() for b in beta]
        rows += summary_rows('pool', 'beta', beta)

    report = build_report('pool', resolved_config(args), results)
    _emit(args, formats, report, rows, [('similarity.svg', similarity)])
    return 0


def cmd_dpm(args):
    _require_seed(args)
    formats = _formats(args)
    studies = load_input(args)
    m_values = _csv_list(args.m, float, 'm') if args.m else None
    config = DpmConfig(m_values, args.iterations, args.burn_in, args.seed)
    base = mle_base_measure(studies)

    chains = run_dpm(studies, config, base=base, threads=args.threads, progress=not args.quiet)
    results, rows, svgs = {'dataset': studies.name, 'chains': {}}, [], []
    for chain in chains:
        summary = dpm_summaries(chain, args.level)
        key = m_label(chain.M)
        results['chains'][key] = summary.to_dict()
        rows += summary_rows('dpm', 'M={}'.format(key), summary.studies)
        svgs.append(('similarity-M{}.svg'.format(key), summary.similarity))
    report = build_report('dpm', resolved_config(args), results)
    _emit(args, formats, report, rows, svgs)
    return 0


def cmd_rjmcmc(args):
    _require_seed(args)
    formats = _formats(args)
    studies = load_input(args)
    q_range = tuple(_csv_list(args.q_range, float, 'q-range'))
    if len(q_range) != 2:
        raise ValidationError('--q-range takes two values, got {!r}'.format(args.q_range))
    config = RjConfig(args.iterations, args.burn_in, q_range, seed=args.seed)

    chain = run_rj_chain(studies, config, progress=not args.quiet)
    summary = rj_summaries(chain, args.level)
    results = {'dataset': studies.name}
    results.update(summary.to_dict())
    report = build_report('rjmcmc', resolved_config(args), results)
    _emit(args, formats, report, summary_rows('rjmcmc', 'theta', summary.studies),
          [('similarity.svg', summary.similarity)])
    if args.dump_chain:
        write_chain_csv(chain, _output_dir(args) / 'chain.csv')
    return 0


def cmd_ppc(args):
    _require_seed(args)
    formats = _formats(args)
    studies = load_input(args)
    grid, vprior = grid_settings(args)

    result = posterior_predictive_pvalue(studies, grid, vprior, args.replicates, args.seed,
                                         threads=args.threads)
    print('posterior predictive p-value: {}'.format(result.describe()))
    report = build_report('ppc', resolved_config(args),
                          {'dataset': studies.name, 'ppc': result.to_dict()})
    if 'json' in formats:
        write_report(report, _output_dir(args) / 'report.json')
    return 0


def cmd_datasets(args):
    if args.export:
        studies = bundled_dataset(args.export)
        if args.output:
            with open(args.output, 'wb') as outfile:
                serialize_studies(studies, outfile)
        else:
            sys.stdout.write(serialize_studies(studies).decode('utf-8'))
        return 0
    for name in dataset_names():
        studies = bundled_dataset(name)
        counts = ' '.join('{}/{}'.format(s.events, s.trials) for s in studies)
        print('{}  L={}  {}'.format(name, len(studies), counts))
        print('    {}'.format(studies.provenance))
    return 0


def _configure_logging(args):
    if args.logfile:
        logging.basicConfig(filename=args.logfile, level=logging.DEBUG)
    elif args.verbose:
        logging.basicConfig(level=logging.DEBUG)
    else:
        logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO)


def main(argv=None):
    try:
        args = parse_args(argv)
    except ValidationError as e:
        sys.stderr.write('error: {}\n'.format(e))
        return e.exit_code
    _configure_logging(args)
    logging.info('Logging begins')
    logging.debug('Configuration: {}'.format(vars(args)))
    try:
        code = args.func(args)
    except PoolingError as e:
        logging.error('{}: {}'.format(type(e).__name__, e))
        sys.stderr.write('error: {}\n'.format(e))
        code = e.exit_code
    logging.info('Logging ends')
    return code


if __name__ == '__main__':
    sys.exit(main())
