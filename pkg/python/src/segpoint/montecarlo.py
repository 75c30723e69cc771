"""Monte Carlo inference and the empirical size and power harness.

Replicates are grouped into chunks of consecutive indices. A chunk is the unit
of work sent to a ProcessPoolExecutor and chunk results are concatenated in
index order, so every table is identical for any number of workers.

Checkpoints of long experiments are kept in an HDF5 file with one dataset of
rejection counts per finished size tuple.
"""

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from typing import Optional
from warnings import warn

import h5py
import numpy as np
import pandas as pd
from scipy import stats

from . import __version__
from .core import DegenerateClassError, InputError, MarkedPointSet, build_nn_graph
from .nnct import (TestBattery, expand_selectors, moments_from_graph, nnct_counts, selector_dfs,
                   selector_names)
from .patterns import (STREAM_CRITICAL, STREAM_RELABEL, PatternSpec, fixed_locations, gen_csr,
                       generate)
from .utils import get_configs, spec_hash, substream_rng

logger = logging.getLogger(__name__)

CHUNK_SIZE = 200
Z_CRIT = 1.96
CRITICAL_SOURCES = ('asymptotic', 'monte-carlo')


@dataclass
class McConfig:
    """Settings of a Monte Carlo run.

    Attributes
    ----------
    replicates : int
        Number of simulations or relabelings M.
    master_seed : int
    alpha : float
        Significance level of the size and power tables.
    critical_value_quantile : float
        Quantile of the null statistics used as Monte Carlo critical value.
    workers : int
        Worker processes; None uses the configured default.
    """

    replicates: int = 1000
    master_seed: int = 20080501
    alpha: float = 0.05
    critical_value_quantile: float = 0.95
    workers: Optional[int] = None

    def __post_init__(self):
        if int(self.replicates) < 1:
            raise InputError(f'Monte Carlo needs at least 1 replicate. Got {self.replicates}')
        if not (0 < self.alpha < 1):
            raise InputError(f'alpha must be in (0, 1). Got {self.alpha}')
        if not (0 < self.critical_value_quantile < 1):
            raise InputError(f'critical_value_quantile must be in (0, 1). Got {self.critical_value_quantile}')
        if self.master_seed < 0:
            raise InputError(f'master_seed must be non-negative. Got {self.master_seed}')
        self.replicates = int(self.replicates)
        if self.workers is None:
            self.workers = get_configs()['workers']

    @classmethod
    def from_configs(cls, full=False, **kwargs):
        """Build a config from the user configuration file."""

        configs = get_configs()
        kwargs.setdefault('replicates', configs['full_replicates' if full else 'default_replicates'])
        kwargs.setdefault('master_seed', configs['master_seed'])
        return cls(**kwargs)

    def to_dict(self):
        # worker count does not change results and is kept out of hashes
        return {'replicates': self.replicates, 'master_seed': int(self.master_seed), 'alpha': self.alpha,
                'critical_value_quantile': self.critical_value_quantile}


@dataclass
class SizePowerRow:
    """Rejection rates of all tests for one class-size tuple.

    Rates, standard errors and flags are in selector order (overall, base:0..,
    nn:0..). Flags are 'liberal' or 'conservative' where a size estimate differs
    significantly from alpha, else ''.
    """

    sizes: tuple
    rates: np.ndarray
    ses: np.ndarray
    critical_source: str
    replicates: int
    critical_values: np.ndarray
    flags: list = field(default_factory=list)

    @property
    def q(self):
        return len(self.sizes)

    def rate(self, selector):
        return float(self.rates[selector_names(self.q).index(selector)])

    def to_record(self):
        record = {'sizes': '(' + ','.join(str(s) for s in self.sizes) + ')'}
        for name, rate, se, flag in zip(selector_names(self.q), self.rates, self.ses, self.flags or [''] * len(self.rates)):
            record[name] = rate
            record[f'se_{name}'] = se
            if self.flags:
                record[f'flag_{name}'] = flag
        record['critical'] = self.critical_source
        record['replicates'] = self.replicates
        return record


def pvalue_from_null(observed, null_values):
    """Monte Carlo p-value (1 + #{null >= observed}) / (1 + M).

    Examples
    --------
    >>> pvalue_from_null(2.5, [1.0, 2.0, 3.0])
    0.5
    """

    null_values = np.asarray(null_values, dtype=float)
    if null_values.shape[0] == 0:
        raise InputError('Monte Carlo p-values need at least 1 replicate')
    p = (1 + np.count_nonzero(null_values >= observed, axis=0)) / (1 + null_values.shape[0])
    return float(p) if np.ndim(p) == 0 else p


def critical_quantile(values, quantile):
    """Quantile of the finite null statistics (NaN if there are none)."""

    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        return np.nan
    return float(np.quantile(values, quantile))


def _chunks(replicates):
    return [(start, min(start + CHUNK_SIZE, replicates)) for start in range(0, replicates, CHUNK_SIZE)]


def _run_chunks(func, args, replicates, workers):
    """Apply func(*args, start, stop) over all chunks, results in chunk order."""

    chunks = _chunks(replicates)
    if not workers or workers <= 1 or len(chunks) == 1:
        return [func(*args, start, stop) for start, stop in chunks]
    results = [None] * len(chunks)
    with ProcessPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(func, *args, start, stop): c for c, (start, stop) in enumerate(chunks)}
        for future in as_completed(futures):
            results[futures[future]] = future.result()
    return results


def _chunk_pattern_statistics(spec, key, start, stop):
    q = spec.q
    out = np.empty((stop - start, 1 + 2 * q))
    if spec.kind == 'rl' and not spec.regenerate_locations:
        locations = fixed_locations(spec, key=key)
        g = build_nn_graph(locations)
        battery = TestBattery(moments_from_graph(MarkedPointSet(locations, np.repeat(np.arange(q), spec.class_sizes)), g))
        for r in range(start, stop):
            pts = generate(spec, r, key=key, locations=locations)
            out[r - start] = battery.statistics(nnct_counts(pts.labels, g.nn_index, q))
        return out
    for r in range(start, stop):
        pts = generate(spec, r, key=key)
        g = build_nn_graph(pts)
        battery = TestBattery(moments_from_graph(pts, g))
        out[r - start] = battery.statistics(nnct_counts(pts.labels, g.nn_index, q))
    return out


def replicate_statistics(spec, replicates, key=(), workers=1):
    """Statistics of `replicates` draws of a pattern.

    Returns
    -------
    numpy.ndarray : (replicates, 1 + 2q) in selector order.
    """

    if replicates < 1:
        raise InputError(f'Monte Carlo needs at least 1 replicate. Got {replicates}')
    return np.vstack(_run_chunks(_chunk_pattern_statistics, (spec, tuple(key)), replicates, workers))


def _chunk_relabel_statistics(labels, nn_index, battery, seed, start, stop):
    q = battery.q
    perms = np.vstack([substream_rng(seed, STREAM_RELABEL, r).permutation(labels) for r in range(start, stop)])
    m = perms.shape[0]
    cells = perms * q + perms[:, nn_index] + (q * q) * np.arange(m)[:, None]
    counts = np.bincount(cells.reshape(-1), minlength=m * q * q).reshape(m, q, q)
    return battery.statistics(counts)


def relabel_statistics(pts, cfg, g=None):
    """Observed statistics and those of cfg.replicates random relabelings.

    The NN graph and the moments are label free and computed once.

    Returns
    -------
    observed : numpy.ndarray
        (1 + 2q,) statistics of pts.
    null : numpy.ndarray
        (replicates, 1 + 2q) statistics of the relabelings.
    """

    if g is None:
        g = build_nn_graph(pts)
    battery = TestBattery(moments_from_graph(pts, g))
    observed = battery.statistics(nnct_counts(pts.labels, g.nn_index, pts.q))
    null = np.vstack(_run_chunks(_chunk_relabel_statistics, (pts.labels, g.nn_index, battery, cfg.master_seed),
                                 cfg.replicates, cfg.workers))
    return observed, null


def simulation_statistics(pts, cfg, g=None):
    """Observed statistics and those of CSR independence in the same window.

    Returns
    -------
    observed : numpy.ndarray
    null : numpy.ndarray
        (replicates, 1 + 2q)
    """

    if g is None:
        g = build_nn_graph(pts)
    sizes = pts.class_sizes
    if np.any(sizes < 1):
        raise DegenerateClassError(f'CSR simulation needs every class non-empty. Got sizes {sizes.tolist()}')
    observed = TestBattery(moments_from_graph(pts, g)).statistics(nnct_counts(pts.labels, g.nn_index, pts.q))
    spec = PatternSpec('csr', tuple(sizes), window=pts.window, seed=cfg.master_seed)
    return observed, replicate_statistics(spec, cfg.replicates, workers=cfg.workers)


def _selected_pvalue(observed, null, selector, q, class_names):
    position = selector if isinstance(selector, (int, np.integer)) else expand_selectors([selector], q, class_names)[0]
    if not np.isfinite(observed[position]):
        raise DegenerateClassError(f'Statistic {selector_names(q)[position]} is undefined for this point set')
    return float(pvalue_from_null(observed[position], null[:, position]))


def mc_sim_pvalue(observed, selector, cfg):
    """p-value of one statistic against CSR independence in the same window.

    Parameters
    ----------
    observed : MarkedPointSet
    selector : str or int
        'overall', 'base:<class>', 'nn:<class>' or a position in selector order.
    cfg : McConfig

    Returns
    -------
    float
    """

    obs, null = simulation_statistics(observed, cfg)
    return _selected_pvalue(obs, null, selector, observed.q, observed.class_names)


def mc_rand_pvalue(observed, selector, cfg):
    """p-value of one statistic against random relabelings of the locations."""

    obs, null = relabel_statistics(observed, cfg)
    return _selected_pvalue(obs, null, selector, observed.q, observed.class_names)


def mc_critical_values(sizes, window, selectors, cfg, key=()):
    """Monte Carlo critical values under CSR independence.

    Returns
    -------
    dict : selector name -> cfg.critical_value_quantile of the null statistics.
    """

    if cfg.replicates < 100:
        warn(f'Monte Carlo critical values from {cfg.replicates} < 100 replicates are unreliable',
             category=UserWarning)
    q = len(sizes)
    spec = PatternSpec('csr', tuple(sizes), window=window, seed=cfg.master_seed)
    null = replicate_statistics(spec, cfg.replicates, key=(STREAM_CRITICAL,) + tuple(key), workers=cfg.workers)
    names = selector_names(q)
    positions = expand_selectors(selectors, q)
    return {names[p]: critical_quantile(null[:, p], cfg.critical_value_quantile) for p in positions}


def qr_calibration(n, replicates, seed=0, workers=1):
    """Mean Q/n and R/n over CSR patterns of n points in the unit square.

    Returns
    -------
    dict : 'q_over_n', 'r_over_n' and their standard errors.
    """

    spec = PatternSpec('csr', (n - n // 2, n // 2), seed=seed)
    qr = np.vstack(_run_chunks(_chunk_qr, (spec,), replicates, workers)) / n
    se = qr.std(axis=0, ddof=1) / np.sqrt(replicates) if replicates > 1 else np.zeros(2)
    return {'q_over_n': float(qr[:, 0].mean()), 'r_over_n': float(qr[:, 1].mean()),
            'se_q_over_n': float(se[0]), 'se_r_over_n': float(se[1])}


def _chunk_qr(spec, start, stop):
    out = np.empty((stop - start, 2))
    for r in range(start, stop):
        g = build_nn_graph(gen_csr(spec, substream_rng(spec.seed, 0, r)))
        out[r - start] = (g.Q, g.R)
    return out


def flag_size(rate, alpha, replicates):
    """'liberal' or 'conservative' when a size estimate differs from alpha."""

    if not np.isfinite(rate):
        return ''
    z = (rate - alpha) / np.sqrt(alpha * (1 - alpha) / replicates)
    if z > Z_CRIT:
        return 'liberal'
    if z < -Z_CRIT:
        return 'conservative'
    return ''


class CheckpointStore:
    """HDF5 store of finished size tuples of an experiment.

    Each finished size tuple is a dataset of rejection counts named by its index,
    with its sizes and critical values as attributes. The file carries the hash
    of the experiment and is refused for a different experiment.
    """

    def __init__(self, path, experiment_hash):
        self.path = path
        self.experiment_hash = experiment_hash
        if path is not None and os.path.exists(path):
            with h5py.File(path, 'r') as file:
                found = file.attrs.get('spec_hash')
                if found != experiment_hash:
                    raise InputError(f'Checkpoint {path} belongs to experiment {found}, not {experiment_hash}')

    def load(self, index, sizes):
        """Return (rejection counts, critical values) of a finished size tuple or None."""

        if self.path is None or not os.path.exists(self.path):
            return None
        with h5py.File(self.path, 'r') as file:
            name = f'size_{index}'
            if name not in file:
                return None
            data_set = file[name]
            if tuple(data_set.attrs['sizes']) != tuple(sizes):
                raise InputError(f'Checkpoint {self.path} has sizes {tuple(data_set.attrs["sizes"])} at index {index}')
            return np.array(data_set[:]), np.array(data_set.attrs['critical_values'])

    def save(self, index, sizes, counts, critical_values, replicates):
        if self.path is None:
            return
        file_mode = 'a' if os.path.exists(self.path) else 'w'
        with h5py.File(self.path, file_mode) as file:
            file.attrs['spec_hash'] = self.experiment_hash
            name = f'size_{index}'
            if name in file:
                del file[name]
            data_set = file.create_dataset(name, data=np.asarray(counts, dtype=np.int64))
            data_set.attrs['sizes'] = np.asarray(sizes, dtype=np.int64)
            data_set.attrs['critical_values'] = np.asarray(critical_values, dtype=float)
            data_set.attrs['replicates'] = replicates
        logger.info('Checkpointed size tuple %s to %s', tuple(sizes), self.path)


def experiment_metadata(spec, sizes_list, cfg, critical):
    return {
        'version': __version__,
        'spec': spec.to_dict(),
        'sizes': [list(s) for s in sizes_list],
        'mc': cfg.to_dict(),
        'critical': critical,
    }


def _rejection_table(spec, sizes_list, cfg, critical, checkpoint, flag):
    if critical not in CRITICAL_SOURCES:
        raise InputError(f'critical must be one of {CRITICAL_SOURCES}. Got {critical}')
    spec = replace(spec, seed=cfg.master_seed)
    store = CheckpointStore(checkpoint, spec_hash(experiment_metadata(spec, sizes_list, cfg, critical)))
    rows = []
    for index, sizes in enumerate(sizes_list):
        sizes = tuple(int(s) for s in sizes)
        q = len(sizes)
        names = selector_names(q)
        finished = store.load(index, sizes)
        if finished is not None:
            counts, crit = finished
            logger.info('Resumed size tuple %s from checkpoint', sizes)
        else:
            logger.info('Simulating %s at sizes %s with %d replicates', spec.kind, sizes, cfg.replicates)
            if critical == 'asymptotic':
                crit = stats.chi2.ppf(1 - cfg.alpha, selector_dfs(q))
            else:
                mc_cfg = replace(cfg, critical_value_quantile=1 - cfg.alpha)
                values = mc_critical_values(sizes, spec.region(), ['all'], mc_cfg, key=(index,))
                crit = np.array([values[name] for name in names])
            null = replicate_statistics(spec.with_sizes(sizes), cfg.replicates, key=(index,), workers=cfg.workers)
            with np.errstate(invalid='ignore'):
                counts = np.count_nonzero(null > crit, axis=0)
            undefined = ~np.all(np.isfinite(null), axis=0)
            counts = np.where(undefined, -1, counts)
            store.save(index, sizes, counts, crit, cfg.replicates)
        rates = np.where(counts < 0, np.nan, counts / cfg.replicates)
        ses = np.sqrt(rates * (1 - rates) / cfg.replicates)
        flags = [flag_size(r, cfg.alpha, cfg.replicates) for r in rates] if flag else []
        rows.append(SizePowerRow(sizes, rates, ses, critical, cfg.replicates, np.asarray(crit), flags))
    return rows


def run_size_experiment(null_spec, sizes_list, cfg, checkpoint=None):
    """Empirical sizes of all tests at the asymptotic critical values.

    Parameters
    ----------
    null_spec : PatternSpec
        A csr or rl pattern; its class sizes are replaced by each tuple of
        sizes_list.
    sizes_list : list of tuple of int
    cfg : McConfig
    checkpoint : str
        HDF5 file to resume from and write finished size tuples to.

    Returns
    -------
    list of SizePowerRow
    """

    if not null_spec.is_null:
        raise InputError(f'Size experiments need a null pattern. Got {null_spec.kind}')
    return _rejection_table(null_spec, sizes_list, cfg, 'asymptotic', checkpoint, flag=True)


def run_power_experiment(alt_spec, sizes_list, cfg, critical='asymptotic', checkpoint=None):
    """Empirical power of all tests under an alternative.

    With critical='monte-carlo' the critical values are the 1 - alpha quantiles
    of the statistics under CSR independence at the same sizes.
    """

    return _rejection_table(alt_spec, sizes_list, cfg, critical, checkpoint, flag=False)


def results_frame(rows):
    """DataFrame with one line per SizePowerRow."""

    return pd.DataFrame([row.to_record() for row in rows])


def write_results_csv(path, rows, metadata):
    """Write rows as CSV under a '# {json metadata}' first line.

    Floats are written with 4 decimals so equal results give identical files.
    """

    metadata = dict(metadata)
    metadata['spec_hash'] = spec_hash(metadata)
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', newline='') as file:
        file.write('# ' + json.dumps(metadata, sort_keys=True) + '\n')
        results_frame(rows).to_csv(file, index=False, float_format='%.4f')
    logger.info('Wrote %d rows to %s', len(rows), path)
    return path


def read_results_csv(path):
    """Return (metadata, DataFrame) of a file written by write_results_csv."""

    with open(path, 'r') as file:
        header = file.readline()
        if not header.startswith('# '):
            raise InputError(f'{path} has no metadata line')
        metadata = json.loads(header[2:])
        frame = pd.read_csv(file)
    return metadata, frame
