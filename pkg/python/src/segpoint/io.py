"""File formats: marked point CSVs, NNCT JSON files, experiment YAML configs,
analysis reports and curve exports.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Optional
from warnings import warn

import numpy as np
import pandas as pd
import yaml

from . import __version__
from .core import ConfigError, InputError, MarkedPointSet, RectWindow
from .nnct import Nnct, cell_moments
from .patterns import KINDS, NAMED_ALTERNATIVES, UNIT_SQUARE, PatternSpec
from .utils import format_pvalue, format_statistic, get_configs, spec_hash

logger = logging.getLogger(__name__)

package_dir = os.path.dirname(os.path.abspath(__file__))
presets_dir = os.path.join(package_dir, 'presets')
data_dir = os.path.join(package_dir, 'data')

POINT_COLUMNS = ('x', 'y', 'label')


def load_points_csv(path, window=None):
    """Read a marked point CSV with header x,y,label.

    Labels are factorized in order of first appearance. Without a window the
    bounding box of the data is used, with a warning, since Monte Carlo p-values
    depend on the study region.

    Parameters
    ----------
    path : str
    window : RectWindow or str
        Window or 'xmin,xmax,ymin,ymax'.

    Returns
    -------
    MarkedPointSet
    """

    try:
        frame = pd.read_csv(path, dtype={'label': str}, skipinitialspace=True, float_precision='round_trip')
    except pd.errors.ParserError as e:
        raise InputError(f'{path}: {e}')
    except pd.errors.EmptyDataError:
        raise InputError(f'{path} is empty')
    missing = [c for c in POINT_COLUMNS if c not in frame.columns]
    if missing:
        raise InputError(f'{path} is missing column(s) {", ".join(missing)}; the header must be x,y,label')

    coords = frame[['x', 'y']].apply(pd.to_numeric, errors='coerce')
    bad = coords.isna().any(axis=1) | frame['label'].isna() | ~np.isfinite(coords.to_numpy(dtype=float)).all(axis=1)
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        # header is line 1
        raise InputError(f'{path}, line {row + 2}: malformed row {frame.iloc[row].tolist()}')
    if len(frame) < 2:
        raise InputError(f'{path} has {len(frame)} point(s); at least 2 are needed')

    labels, names = pd.factorize(frame['label'].str.strip(), sort=False)
    class_names = [str(name) for name in names]
    if len(class_names) == 1:
        # a second, empty class keeps q >= 2
        class_names.append('(none)')
    coords = coords.to_numpy(dtype=float)
    if window is None:
        window = RectWindow.bounding_box(coords)
        warn(f'No window given for {path}; using the bounding box {window}', category=UserWarning)
    elif isinstance(window, str):
        window = RectWindow.parse(window)
    logger.info('Read %d points in %d classes from %s', len(frame), len(names), path)
    return MarkedPointSet(coords, labels, window=window, class_names=class_names)


def save_points_csv(pts, path):
    """Write a MarkedPointSet as x,y,label with class names as labels."""

    frame = pd.DataFrame({'x': pts.coords[:, 0], 'y': pts.coords[:, 1],
                          'label': np.array(pts.class_names, dtype=object)[pts.labels]})
    frame.to_csv(path, index=False, float_format='%.17g')
    return path


@dataclass
class NnctFile:
    """An NNCT with its NN-graph scalars, as published without coordinates.

    Attributes
    ----------
    class_names : list of str
    counts : numpy.ndarray
    Q, R : int
    """

    class_names: list
    counts: np.ndarray
    Q: int
    R: int
    description: str = ''

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise InputError(f'NNCT counts must be square. Got shape {self.counts.shape}')
        if np.any(self.counts < 0) or not np.all(self.counts == np.round(self.counts)):
            raise InputError('NNCT counts must be non-negative integers')
        self.counts = self.counts.astype(np.int64)
        if len(self.class_names) != self.counts.shape[0]:
            raise InputError(f'{len(self.class_names)} class names for a {self.counts.shape[0]}-class NNCT')
        if self.Q < 0 or self.R < 0:
            raise InputError(f'Q and R must be non-negative. Got Q={self.Q}, R={self.R}')
        self.Q, self.R = int(self.Q), int(self.R)

    def nnct(self):
        return Nnct(self.counts, self.class_names)

    def moments(self):
        sizes = self.counts.sum(axis=1)
        return cell_moments(sizes, int(sizes.sum()), self.Q, self.R)

    def to_dict(self):
        return {'class_names': list(self.class_names), 'counts': self.counts.tolist(), 'Q': self.Q, 'R': self.R,
                'description': self.description}

    @classmethod
    def from_dict(cls, d, source='NNCT file'):
        for key in ('class_names', 'counts', 'Q', 'R'):
            if key not in d:
                raise InputError(f'{source} is missing "{key}"')
        return cls(d['class_names'], d['counts'], d['Q'], d['R'], d.get('description', ''))


def load_nnct_json(path):
    """Read an NnctFile from JSON."""

    try:
        with open(path, 'r') as file:
            d = json.load(file)
    except json.JSONDecodeError as e:
        raise InputError(f'{path} is not valid JSON: {e}')
    return NnctFile.from_dict(d, source=path)


def save_nnct_json(nnct_file, path):
    with open(path, 'w') as file:
        json.dump(nnct_file.to_dict(), file, indent=2)
    return path


def list_case_studies():
    return sorted(f[:-5] for f in os.listdir(data_dir) if f.endswith('.json'))


def load_case_study(name):
    """Return the bundled NnctFile of a case study ('swamp', 'leukemia', 'pyramidal')."""

    path = os.path.join(data_dir, f'{name}.json')
    if not os.path.exists(path):
        raise InputError(f'Unknown case study "{name}". Use one of {", ".join(list_case_studies())}')
    return load_nnct_json(path)


@dataclass
class ExperimentConfig:
    """A size or power experiment read from YAML.

    Attributes
    ----------
    name : str
    spec : PatternSpec
        Null pattern (size experiment) or alternative (power experiment).
    sizes : list of tuple of int
    replicates, full_replicates : int
    seed : int
    alpha : float
    critical : str
        'asymptotic' or 'monte-carlo'.
    """

    name: str
    spec: PatternSpec
    sizes: list
    replicates: int
    full_replicates: int
    seed: int
    alpha: float = 0.05
    critical: str = 'asymptotic'

    @property
    def is_power(self):
        return not self.spec.is_null

    def to_dict(self):
        return {'name': self.name, 'spec': self.spec.to_dict(), 'sizes': [list(s) for s in self.sizes],
                'replicates': self.replicates, 'full_replicates': self.full_replicates, 'seed': self.seed,
                'alpha': self.alpha, 'critical': self.critical}


def _require(d, key, path, types, default=None, required=True):
    if key not in d or d[key] is None:
        if required:
            raise ConfigError(f'{path}{key}: missing')
        return default
    value = d[key]
    if isinstance(value, bool) or not isinstance(value, types):
        expected = types.__name__ if isinstance(types, type) else ' or '.join(t.__name__ for t in types)
        raise ConfigError(f'{path}{key}: expected {expected}, '
                          f'got {type(value).__name__} {value!r}')
    return value


def _parse_pattern(entry, field_name):
    if isinstance(entry, str):
        if entry in NAMED_ALTERNATIVES:
            kind, params = NAMED_ALTERNATIVES[entry]
            return kind, dict(params), False
        if entry in KINDS:
            return entry, {}, False
        raise ConfigError(f'{field_name}: unknown pattern "{entry}"')
    if not isinstance(entry, dict):
        raise ConfigError(f'{field_name}: expected a pattern name or mapping')
    kind = _require(entry, 'kind', f'{field_name}.', str)
    if kind not in KINDS:
        raise ConfigError(f'{field_name}.kind: unknown pattern kind "{kind}"; use one of {", ".join(KINDS)}')
    params = {}
    for key in ('case', 's', 'r', 'r_y', 'r_z'):
        if key in entry:
            params[key] = _require(entry, key, f'{field_name}.', (int, float))
    regenerate = bool(entry.get('regenerate_locations', False))
    return kind, params, regenerate


def parse_experiment_config(d, source='config'):
    """Validate an experiment mapping and return an ExperimentConfig.

    Raises
    ------
    ConfigError
        Naming the offending field, e.g. 'sizes[1][0]'.
    """

    if not isinstance(d, dict):
        raise ConfigError(f'{source}: expected a mapping at the top level')
    configs = get_configs()
    name = str(d.get('name') or os.path.splitext(os.path.basename(str(source)))[0])
    if None in d:
        # YAML reads a bare `null:` key as None
        raise ConfigError(f'{source}: the null pattern key is "null_pattern", not "null"')
    if ('null_pattern' in d) == ('alternative' in d):
        raise ConfigError(f'{source}: exactly one of "null_pattern" and "alternative" is required')

    window_list = d.get('window')
    if window_list is None:
        window = UNIT_SQUARE
    else:
        if not isinstance(window_list, list) or len(window_list) != 4:
            raise ConfigError('window: expected [xmin, xmax, ymin, ymax]')
        try:
            window = RectWindow(*window_list)
        except InputError as e:
            raise ConfigError(f'window: {e}')

    sizes = _require(d, 'sizes', '', list)
    if not sizes:
        raise ConfigError('sizes: at least one size tuple is needed')
    parsed_sizes = []
    for a, entry in enumerate(sizes):
        if not isinstance(entry, list) or len(entry) < 2:
            raise ConfigError(f'sizes[{a}]: expected a list of at least 2 class sizes')
        for b, size in enumerate(entry):
            if isinstance(size, bool) or not isinstance(size, int) or size < 1:
                raise ConfigError(f'sizes[{a}][{b}]: expected a positive integer, got {size!r}')
        parsed_sizes.append(tuple(entry))

    field_name = 'null_pattern' if 'null_pattern' in d else 'alternative'
    kind, params, regenerate = _parse_pattern(d[field_name], field_name)
    if field_name == 'null_pattern' and kind not in ('csr', 'rl'):
        raise ConfigError(f'null_pattern.kind: "{kind}" is not a null pattern')
    if field_name == 'alternative' and kind in ('csr', 'rl'):
        raise ConfigError(f'alternative.kind: "{kind}" is a null pattern')
    regenerate = bool(d.get('regenerate_locations', regenerate))

    replicates = _require(d, 'replicates', '', int, configs['default_replicates'], required=False)
    full_replicates = _require(d, 'full_replicates', '', int, configs['full_replicates'], required=False)
    seed = _require(d, 'seed', '', int, configs['master_seed'], required=False)
    alpha = float(_require(d, 'alpha', '', (float, int), 0.05, required=False))
    critical = _require(d, 'critical', '', str, 'asymptotic', required=False)
    if replicates < 1 or full_replicates < 1:
        raise ConfigError('replicates: must be positive')
    if not (0 < alpha < 1):
        raise ConfigError(f'alpha: must be in (0, 1), got {alpha}')
    if critical not in ('asymptotic', 'monte-carlo'):
        raise ConfigError(f'critical: expected asymptotic or monte-carlo, got "{critical}"')
    if seed < 0:
        raise ConfigError(f'seed: must be non-negative, got {seed}')

    try:
        spec = PatternSpec(kind, (1,) * len(parsed_sizes[0]), window, seed, params, regenerate)
    except InputError as e:
        raise ConfigError(f'{field_name}: {e}')
    for a, entry in enumerate(parsed_sizes):
        try:
            spec.with_sizes(entry)
        except InputError as e:
            raise ConfigError(f'sizes[{a}]: {e}')
    return ExperimentConfig(name, spec.with_sizes(parsed_sizes[0]), parsed_sizes, replicates, full_replicates,
                            seed, alpha, critical)


def load_experiment_config(path):
    """Read and validate an experiment YAML file."""

    if not os.path.exists(path):
        raise ConfigError(f'{path}: no such file')
    with open(path, 'r') as file:
        try:
            d = yaml.safe_load(file)
        except yaml.YAMLError as e:
            raise ConfigError(f'{path}: invalid YAML: {e}')
    return parse_experiment_config(d, source=path)


def list_presets():
    return sorted(f[:-5] for f in os.listdir(presets_dir) if f.endswith('.yaml'))


def preset_path(name):
    path = os.path.join(presets_dir, f'{name}.yaml')
    if not os.path.exists(path):
        raise ConfigError(f'Unknown preset "{name}". Use one of {", ".join(list_presets())}')
    return path


@dataclass
class AnalysisReport:
    """Segregation test results of one data set.

    Attributes
    ----------
    reports : list of TestReport
    nnct : Nnct
    Q, R : int
    metadata : dict
        Version, seed, replicates and input hash.
    mean_nn_distance : tuple of float or None
        (mean, standard deviation) when coordinates were analysed.
    """

    reports: list
    nnct: Nnct
    Q: int
    R: int
    metadata: dict = field(default_factory=dict)
    mean_nn_distance: Optional[tuple] = None

    def frame(self):
        return pd.DataFrame([r.to_dict() for r in self.reports])


def analysis_metadata(input_obj, seed=None, replicates=None):
    return {'version': __version__, 'seed': seed, 'replicates': replicates, 'input_hash': spec_hash(input_obj)}


def _nnct_frame(nnct, values, total=True):
    frame = pd.DataFrame(values, index=nnct.class_names, columns=nnct.class_names)
    if total:
        frame['sum'] = frame.sum(axis=1)
    return frame


def render_text(report, percentages=False):
    """Plain text tables of the NNCT and the tests."""

    lines = [f'segpoint {report.metadata.get("version", __version__)}  input {report.metadata.get("input_hash", "")}'
             + (f'  seed {report.metadata["seed"]}  M {report.metadata["replicates"]}'
                if report.metadata.get('seed') is not None else ''),
             '', 'NNCT (rows: base class, columns: NN class)',
             _nnct_frame(report.nnct, report.nnct.counts).to_string()]
    if percentages:
        lines += ['', 'Row percentages', _nnct_frame(report.nnct, report.nnct.row_percentages().round(0), False).to_string(),
                  '', 'Column percentages',
                  _nnct_frame(report.nnct, report.nnct.col_percentages().round(0), False).to_string()]
    lines += ['', f'Q = {report.Q}, R = {report.R}']
    if report.mean_nn_distance is not None:
        mean, sd = report.mean_nn_distance
        lines.append(f'mean NN distance = {mean:.4g} (sd {sd:.3g})')
    rows = []
    for r in report.reports:
        rows.append({'test': r.selector, 'class': r.class_name or '', 'statistic': format_statistic(r.statistic),
                     'df': r.df, 'p_asy': format_pvalue(r.p_asy), 'p_mc': format_pvalue(r.p_mc),
                     'p_rand': format_pvalue(r.p_rand)})
    frame = pd.DataFrame(rows)
    frame = frame[[c for c in frame.columns if c not in ('p_mc', 'p_rand') or frame[c].str.len().any()]]
    lines += ['', frame.to_string(index=False)]
    return '\n'.join(lines) + '\n'


def render_csv(report):
    """'# {json metadata}' line, then one row per test at full precision."""

    header = '# ' + json.dumps(report.metadata, sort_keys=True) + '\n'
    return header + report.frame().to_csv(index=False, float_format='%.6f')


def render_json(report):
    d = {
        'metadata': report.metadata,
        'class_names': report.nnct.class_names,
        'nnct': report.nnct.counts.tolist(),
        'Q': report.Q,
        'R': report.R,
        'mean_nn_distance': list(report.mean_nn_distance) if report.mean_nn_distance is not None else None,
        'tests': [r.to_dict() for r in report.reports],
    }
    return json.dumps(d, indent=2, sort_keys=True)


RENDERERS = {'text': render_text, 'csv': render_csv, 'json': render_json}


def render_report(report, fmt='text', percentages=False):
    if fmt not in RENDERERS:
        raise InputError(f'Unknown output format "{fmt}". Use one of {", ".join(RENDERERS)}')
    if fmt == 'text':
        return render_text(report, percentages)
    return RENDERERS[fmt](report)


def write_curves_csv(path, curves, metadata=None):
    """Write curves as long-format CSV: curve, t, estimate, lower, upper, reliable."""

    frames = []
    for curve in curves:
        n = curve.t_values.size
        frames.append(pd.DataFrame({
            'curve': [curve.label] * n,
            't': curve.t_values,
            'estimate': curve.estimate,
            'lower': getattr(curve, 'lower', None) if getattr(curve, 'lower', None) is not None else np.nan,
            'upper': getattr(curve, 'upper', None) if getattr(curve, 'upper', None) is not None else np.nan,
            'reliable': curve.reliable if curve.reliable is not None else np.ones(n, dtype=bool),
        }))
    with open(path, 'w', newline='') as file:
        if metadata is not None:
            file.write('# ' + json.dumps(metadata, sort_keys=True) + '\n')
        pd.concat(frames, ignore_index=True).to_csv(file, index=False, float_format='%.8g')
    logger.info('Wrote %d curve(s) to %s', len(curves), path)
    return path


def plot_curves_svg(path, curves, ylabel, reference=0.0):
    """Plot each curve with its envelope as SVG."""

    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for curve in curves:
        line, = ax.plot(curve.t_values, curve.estimate, label=curve.label)
        if getattr(curve, 'lower', None) is not None:
            ax.plot(curve.t_values, curve.lower, '--', color=line.get_color(), linewidth=0.8)
            ax.plot(curve.t_values, curve.upper, '--', color=line.get_color(), linewidth=0.8)
    if reference is not None:
        ax.axhline(reference, color='grey', linewidth=0.5)
    ax.set_xlabel('t')
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.savefig(path, format='svg')
    plt.close(fig)
    return path
