"""Module containing configuration handling and small helpers shared by the
segregation tests, the pattern generators and the Monte Carlo harness.
"""

import hashlib
import json
import os
from warnings import warn

import numpy as np
import yaml

home_dir = os.path.join(os.path.expanduser('~'), '.segpoint')
config_path = os.path.join(home_dir, 'config.yaml')
DEFAULT_CONFIGS = {
    'pinv_rel_tol': 1e-8,
    'psd_tol': 1e-8,
    'default_replicates': 1000,
    'full_replicates': 10000,
    'master_seed': 20080501,
    'workers': 1,
    'grid_points': 512,
    'envelope_sims': 99,
    'pcf_bandwidth_factor': 0.15,
    'output_dir': 'segpoint_results',
}

_configs = None


def create_yaml(overwrite=False):
    """Create a default config.yaml file."""

    if not os.path.exists(home_dir):
        os.mkdir(home_dir)

    if os.path.exists(config_path) and not overwrite:
        print('File already exists, run "create_yaml(overwrite=True)" to overwrite the file.')
        return None

    with open(config_path, mode='w') as file:
        yaml.dump(DEFAULT_CONFIGS, file)

    print(f'YAML created at {config_path}')
    return dict(DEFAULT_CONFIGS)


def get_configs(reload=False):
    """Return the user configuration merged over DEFAULT_CONFIGS.

    The file is read once per process. Keys missing from the file fall back to
    the defaults and unknown keys are ignored.
    """

    global _configs
    if _configs is not None and not reload:
        return _configs

    configs = dict(DEFAULT_CONFIGS)
    if os.path.exists(config_path):
        with open(config_path, 'r') as file:
            user_configs = yaml.safe_load(file) or {}
        for key in DEFAULT_CONFIGS:
            if user_configs.get(key) is not None:
                configs[key] = type(DEFAULT_CONFIGS[key])(user_configs[key])
    else:
        warn(message=f'No config.yaml file found at {config_path}. Use segpoint.utils.create_yaml to create one.',
             category=UserWarning)
    _configs = configs
    return _configs


def substream_rng(master_seed, *key):
    """Return an independent PCG64 generator for (master_seed, *key).

    The stream depends only on the seed and the key tuple, never on the order in
    which streams are requested, so replicate i draws the same numbers whichever
    worker runs it.

    Parameters
    ----------
    master_seed : int
        Non-negative 64-bit seed of the experiment.
    *key : int
        Spawn key, e.g. (stream_purpose, size_index, replicate_index).

    Returns
    -------
    numpy.random.Generator
    """

    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(seq))


def spec_hash(obj):
    """Return a short stable hash of a JSON-serializable object."""

    text = json.dumps(obj, sort_keys=True, separators=(',', ':'), default=_json_default)
    return hashlib.sha256(text.encode('utf-8')).hexdigest()[:16]


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, 'to_dict'):
        return obj.to_dict()
    raise TypeError(f'Object of type {type(obj)} is not JSON serializable')


def format_statistic(value):
    """Return a test statistic rounded to 2 decimals for display."""

    if value is None or np.isnan(value):
        return 'NA'
    return f'{value:.2f}'


def format_pvalue(p):
    """Return a p-value with 4 decimals, '<.0001' below 1e-4.

    Examples
    --------
    >>> format_pvalue(0.32491)
    '.3249'
    >>> format_pvalue(2e-7)
    '<.0001'
    """

    if p is None or np.isnan(p):
        return ''
    if p < 1e-4:
        return '<.0001'
    text = f'{p:.4f}'
    return text[1:] if text.startswith('0') else text
