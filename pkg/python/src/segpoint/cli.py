"""Command line front end ``segpoint``.

Subcommands
    analyze      segregation tests of a marked point CSV or an NNCT JSON file
    simulate     empirical size or power tables from an experiment config
    secondorder  Ripley's K/L, bivariate L, Diggle's D or pair correlation curves
    presets      list or show the bundled experiment configs
    config       create the user configuration file

Exit codes are 0 on success, 1 for input errors and 2 for numerical failures.
"""

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .core import InputError, NumericalError, RectWindow, build_nn_graph
from .io import (AnalysisReport, analysis_metadata, list_case_studies, list_presets, load_case_study,
                 load_experiment_config, load_nnct_json, load_points_csv, plot_curves_svg, preset_path,
                 render_report, write_curves_csv)
from .montecarlo import (McConfig, experiment_metadata, pvalue_from_null, relabel_statistics,
                         run_power_experiment, run_size_experiment, simulation_statistics, write_results_csv)
from .nnct import (base_class_specific, build_nnct, dixon_overall, expand_selectors, moments_from_graph,
                   nn_class_specific, selector_names)
from .secondorder import DistanceGrid, diggle_d, kij_curves, l_curves, pcf_curves
from .utils import create_yaml, get_configs

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERICAL = 2


@dataclass
class AnalysisRequest:
    """What to analyse and how.

    Exactly one of points, nnct and case_study is given. Monte Carlo p-values
    need coordinates.
    """

    points: Optional[str] = None
    nnct: Optional[str] = None
    case_study: Optional[str] = None
    window: Optional[RectWindow] = None
    tests: list = field(default_factory=lambda: ['all'])
    replicates: int = 0
    seed: Optional[int] = None
    workers: Optional[int] = None
    fmt: str = 'text'
    percentages: bool = False

    def __post_init__(self):
        given = [s for s in (self.points, self.nnct, self.case_study) if s is not None]
        if len(given) != 1:
            raise InputError('Give exactly one of --points, --nnct and --case-study')
        if not self.tests:
            raise InputError('At least one test must be selected')
        if self.replicates < 0:
            raise InputError(f'--mc must be non-negative. Got {self.replicates}')


WILDCARDS = ('all', '*', 'base:*', 'nn:*')


def _select_positions(tests, q, class_names, sizes):
    positions = expand_selectors(tests, q, class_names)
    named = [t for t in tests if t not in WILDCARDS]
    explicit = set(expand_selectors(named, q, class_names)) if named else set()
    # wildcards skip base tests of classes too small to test
    return [p for p in positions if p in explicit or not (1 <= p <= q and sizes[p - 1] <= 1)]


def _require_two_classes(sizes):
    occupied = int(np.count_nonzero(sizes))
    if occupied < 2:
        raise InputError(f'Segregation tests need at least 2 non-empty classes; the input has {occupied}')


def _report_for(position, nnct, moments):
    q = nnct.q
    if position == 0:
        return dixon_overall(nnct, moments)
    if position <= q:
        return base_class_specific(nnct, moments, position - 1)
    return nn_class_specific(nnct, moments, position - 1 - q)


def analyze(request):
    """Run the selected segregation tests.

    Returns
    -------
    AnalysisReport
    """

    mean_nn = None
    if request.points is not None:
        pts = load_points_csv(request.points, request.window)
        _require_two_classes(pts.class_sizes)
        g = build_nn_graph(pts)
        nnct = build_nnct(pts, g)
        moments = moments_from_graph(pts, g)
        Q, R = g.Q, g.R
        mean_nn = g.mean_nn_distance()
        input_obj = {'coords': pts.coords, 'labels': pts.labels, 'window': pts.window.to_list()}
    else:
        if request.replicates:
            raise InputError('Monte Carlo p-values need point coordinates; use --points')
        nnct_file = load_nnct_json(request.nnct) if request.nnct is not None else load_case_study(request.case_study)
        nnct = nnct_file.nnct()
        _require_two_classes(nnct.row_sums)
        moments = nnct_file.moments()
        Q, R = nnct_file.Q, nnct_file.R
        input_obj = nnct_file.to_dict()

    positions = _select_positions(request.tests, nnct.q, nnct.class_names, moments.class_sizes)
    reports = [_report_for(p, nnct, moments) for p in positions]

    seed = None
    if request.replicates:
        cfg = McConfig.from_configs(replicates=request.replicates, workers=request.workers,
                                    **({'master_seed': request.seed} if request.seed is not None else {}))
        seed = cfg.master_seed
        names = selector_names(nnct.q)
        observed, null_rand = relabel_statistics(pts, cfg, g)
        try:
            _, null_sim = simulation_statistics(pts, cfg, g)
        except InputError as e:
            logger.warning('Skipping simulation p-values: %s', e)
            null_sim = None
        for report in reports:
            p = names.index(report.selector)
            report.p_rand = pvalue_from_null(observed[p], null_rand[:, p])
            if null_sim is not None:
                report.p_mc = pvalue_from_null(observed[p], null_sim[:, p])

    metadata = analysis_metadata(input_obj, seed, request.replicates or None)
    return AnalysisReport(reports, nnct, Q, R, metadata, mean_nn)


def run_experiment(config_path, full=False, output=None, workers=None, checkpoint=None, replicates=None):
    """Run a size or power experiment and write its CSV table.

    Returns
    -------
    str : path of the CSV file.
    """

    experiment = load_experiment_config(config_path)
    m = replicates or (experiment.full_replicates if full else experiment.replicates)
    cfg = McConfig(replicates=m, master_seed=experiment.seed, alpha=experiment.alpha, workers=workers)
    if experiment.is_power:
        rows = run_power_experiment(experiment.spec, experiment.sizes, cfg, experiment.critical, checkpoint)
    else:
        rows = run_size_experiment(experiment.spec, experiment.sizes, cfg, checkpoint)
    if output is None:
        output = os.path.join(get_configs()['output_dir'], f'{experiment.name}.csv')
    metadata = experiment_metadata(experiment.spec, experiment.sizes, cfg, experiment.critical)
    metadata['name'] = experiment.name
    return write_results_csv(output, rows, metadata)


def _class_index(pts, value):
    if value in pts.class_names:
        return pts.class_names.index(value)
    try:
        index = int(value)
    except ValueError:
        raise InputError(f'Unknown class "{value}"; classes are {", ".join(pts.class_names)}')
    if not (0 <= index < pts.q):
        raise InputError(f'Class {index} out of range for q={pts.q}')
    return index


def second_order(args):
    window = RectWindow.parse(args.window) if args.window else None
    pts = load_points_csv(args.points, window)
    grid = DistanceGrid.default(pts.window, args.grid_points)
    sims = args.sims if args.sims is not None else get_configs()['envelope_sims']
    cfg = McConfig.from_configs(replicates=sims, workers=args.workers,
                                **({'master_seed': args.seed} if args.seed is not None else {}))
    if args.which in ('k', 'l'):
        curves = l_curves(pts, grid, cfg, args.which)
        ylabel = 'K(t)' if args.which == 'k' else 'L(t) - t'
    elif args.which == 'kij':
        curves = kij_curves(pts, grid, cfg)
        ylabel = 'L_ij(t) - t'
    elif args.which == 'd':
        case = _class_index(pts, args.case)
        control = _class_index(pts, args.control)
        curves = [diggle_d(pts, case, control, grid, cfg)]
        ylabel = 'D(t)'
    else:
        curves = pcf_curves(pts, grid, cfg, args.bandwidth)
        ylabel = 'g(t)'
    metadata = {'version': __version__, 'seed': cfg.master_seed, 'sims': cfg.replicates, 'which': args.which,
                'window': pts.window.to_list()}
    output = args.output or os.path.join(get_configs()['output_dir'], f'secondorder_{args.which}.csv')
    if os.path.dirname(output):
        os.makedirs(os.path.dirname(output), exist_ok=True)
    write_curves_csv(output, curves, metadata)
    if args.plot:
        plot_curves_svg(args.plot, curves, ylabel, reference=1.0 if args.which == 'pcf' else (None if args.which == 'k' else 0.0))
    return output


def build_parser():
    parser = argparse.ArgumentParser(prog='segpoint', description='Nearest neighbor contingency table tests of '
                                     'spatial segregation and association')
    parser.add_argument('--version', action='version', version=f'segpoint {__version__}')
    parser.add_argument('-v', '--verbose', action='count', default=0, help='-v for progress, -vv for debug output')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('analyze', help='Segregation tests of one data set')
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument('--points', help='CSV file with header x,y,label')
    source.add_argument('--nnct', help='JSON file with class_names, counts, Q and R')
    source.add_argument('--case-study', choices=list_case_studies(), help='Bundled case study NNCT')
    p.add_argument('--window', help='xmin,xmax,ymin,ymax (default: bounding box of the points)')
    p.add_argument('--tests', nargs='+', default=['all'],
                   help='overall, base:<class>, nn:<class>, base:*, nn:* or all')
    p.add_argument('--mc', type=int, default=0, help='Monte Carlo replicates for p_mc and p_rand')
    p.add_argument('--seed', type=int, help='Master seed of the Monte Carlo streams')
    p.add_argument('--workers', type=int, help='Worker processes')
    p.add_argument('--format', dest='fmt', choices=('text', 'csv', 'json'), default='text')
    p.add_argument('--percentages', action='store_true', help='Include row and column percentage tables')
    p.add_argument('--output', help='Write the report to a file instead of stdout')

    p = sub.add_parser('simulate', help='Empirical size or power table')
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument('--config', help='Experiment YAML file')
    target.add_argument('--preset', help='Bundled experiment name, see "segpoint presets"')
    p.add_argument('--full', action='store_true', help='Use full_replicates instead of replicates')
    p.add_argument('--replicates', type=int, help='Override the number of replicates')
    p.add_argument('--workers', type=int, help='Worker processes (results do not depend on it)')
    p.add_argument('--checkpoint', help='HDF5 file to resume from and checkpoint to')
    p.add_argument('--output', help='CSV output path')

    p = sub.add_parser('secondorder', help='Second-order curves with simulation envelopes')
    p.add_argument('--points', required=True, help='CSV file with header x,y,label')
    p.add_argument('--window', help='xmin,xmax,ymin,ymax (default: bounding box of the points)')
    p.add_argument('--which', choices=('k', 'l', 'kij', 'd', 'pcf'), default='l')
    p.add_argument('--sims', type=int, help='Envelope simulations or relabelings')
    p.add_argument('--seed', type=int)
    p.add_argument('--workers', type=int)
    p.add_argument('--grid-points', type=int)
    p.add_argument('--bandwidth', type=float, help='Pair correlation bandwidth (default 0.15/sqrt(intensity))')
    p.add_argument('--case', default='0', help='Case class of Diggle\'s D')
    p.add_argument('--control', default='1', help='Control class of Diggle\'s D')
    p.add_argument('--output', help='Curves CSV path')
    p.add_argument('--plot', help='SVG plot path')

    p = sub.add_parser('presets', help='List bundled experiments or print one')
    p.add_argument('name', nargs='?')

    p = sub.add_parser('config', help='User configuration file')
    p.add_argument('--create', action='store_true', help='Write the default config.yaml')
    p.add_argument('--overwrite', action='store_true')
    return parser


def _run(args):
    if args.command == 'analyze':
        window = RectWindow.parse(args.window) if args.window else None
        request = AnalysisRequest(points=args.points, nnct=args.nnct, case_study=args.case_study, window=window,
                                  tests=args.tests, replicates=args.mc, seed=args.seed, workers=args.workers,
                                  fmt=args.fmt, percentages=args.percentages)
        text = render_report(analyze(request), request.fmt, request.percentages)
        if args.output:
            with open(args.output, 'w') as file:
                file.write(text)
        else:
            sys.stdout.write(text if text.endswith('\n') else text + '\n')
    elif args.command == 'simulate':
        path = args.config if args.config else preset_path(args.preset)
        output = run_experiment(path, args.full, args.output, args.workers, args.checkpoint, args.replicates)
        print(output)
    elif args.command == 'secondorder':
        print(second_order(args))
    elif args.command == 'presets':
        if args.name:
            with open(preset_path(args.name), 'r') as file:
                sys.stdout.write(file.read())
        else:
            print('\n'.join(list_presets()))
    elif args.command == 'config':
        if args.create:
            create_yaml(overwrite=args.overwrite)
        else:
            for key, value in get_configs().items():
                print(f'{key}: {value}')


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s')
    try:
        _run(args)
    except NumericalError as e:
        logger.error('%s', e)
        print(f'numerical failure: {e}', file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, OSError) as e:
        print(f'input error: {e}', file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
