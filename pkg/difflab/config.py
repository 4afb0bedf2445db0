"""difflab configuration/opt-parsing

An experiment is described by an INI file with one flat section per module.
Every key has a declared type and default in SCHEMA; command-line
`--set section.key=value` flags override the file.
"""

import argparse
import configparser
import logging
import os
import re

import numpy as np

from difflab.errors import ConfigError

log = logging.getLogger(__name__)

LOGGERFMT = '%(asctime)s [%(levelname)s] %(name)s <%(funcName)s>: %(message)s'

EXPERIMENTS = ('bifurcation', 'exponents', 'sample', 'latestart', 'rem', 'bath', 'hopfield',
               'score-check', 'landscape')
# experiments that build their own data instead of reading [target]
TARGETLESS = ('rem', 'hopfield')

REQUIRED = object()

SCHEMA = {
    'run': {
        'seed': ('int', 0),
        'sigma': ('float', REQUIRED),
        'threads': ('int', 0),
    },
    'target': {
        'kind': ('str', REQUIRED),
        'points': ('matrix', None),
        'weights': ('floats', None),
        'csv': ('str', None),
        'normalize': ('bool', False),
        'dim': ('int', 2),
        'radius': ('float', 1.0),
        'couplings': ('matrix', None),
        'coupling': ('float', 1.0),
        'temperature': ('float', 1.0),
    },
    'schedule': {
        't_end': ('float', 5.0),
        't_min': ('float', 1e-3),
        'steps': ('int', 2000),
        'spacing': ('str', 'log'),
    },
    'criticality': {
        't_hi': ('float', 2.0),
        't_lo': ('float', 0.2),
        'points': ('int', 200),
        'jump_tolerance': ('float', 0.0),
    },
    'exponents': {
        'points': ('int', 24),
    },
    'sample': {
        'trajectories': ('int', 10000),
        'sampler': ('str', 'reverse'),
        'noise': ('float', 1.0),
        'denoise': ('bool', True),
        'record': ('int', 0),
    },
    'latestart': {
        'trajectories': ('int', 10000),
        'start_factor': ('float', 3.0),
    },
    'rem': {
        'M': ('int', 16),
        'd': ('int', 128),
        'nu': ('float', 1.0),
        'x_norm': ('float', 1.0),
        'replicas': ('int', 32),
        'probes': ('int', 32),
        'points': ('int', 40),
        'beta_tilde_lo': ('float', 0.1),
        'beta_tilde_hi': ('float', 4.0),
    },
    'bath': {
        'K': ('ints', [32, 128, 512]),
        'times': ('floats', [0.5, 2.0]),
        'field': ('float', 0.01),
        'replicas': ('int', 8),
        'sweeps': ('int', 4000),
        'burn_in': ('int', 1000),
        'H': ('float', 64.0),
        'trajectories': ('int', 0),
    },
    'hopfield': {
        'patterns': ('int', 4),
        'dim': ('int', 16),
        'beta': ('float', 64.0),
        't': ('float', 0.5),
        'probes': ('int', 100),
        'perturbation': ('float', 0.1),
        'step_size': ('float', 1.0),
        'max_iters': ('int', 1000),
    },
    'scorecheck': {
        'states': ('int', 200),
        't_lo': ('float', 0.05),
        't_hi': ('float', 5.0),
        'scale': ('float', 2.0),
        'step': ('float', 1e-5),
        'tolerance': ('float', 1e-5),
    },
    'landscape': {
        'times': ('floats', [2.0, 1.0, 0.5, 0.25, 0.1]),
        'lo': ('float', -1.5),
        'hi': ('float', 1.5),
        'points': ('int', 61),
    },
}

_KEY_LINE = re.compile(r'^\s*([^=:#;\s][^=:]*?)\s*[=:]')
_SECTION_LINE = re.compile(r'^\s*\[([^\]]+)\]')


def _where(section, key, lines):
    line = lines.get((section, key))
    if line is None:
        return '[%s] %s' % (section, key)
    return '[%s] %s (line %d)' % (section, key, line)


def _parse_bool(text):
    lowered = text.strip().lower()
    if lowered in ('1', 'yes', 'true', 'on'):
        return True
    if lowered in ('0', 'no', 'false', 'off'):
        return False
    raise ValueError('not a boolean')


def _parse_matrix(text):
    rows = [r for r in text.replace('\n', ';').split(';') if r.strip()]
    matrix = np.array([[float(v) for v in r.split(',')] for r in rows], dtype=float)
    if matrix.ndim != 2:
        raise ValueError('rows have different lengths')
    return matrix


_PARSERS = {
    'int': lambda text: int(text.strip()),
    'float': lambda text: float(text.strip()),
    'bool': _parse_bool,
    'str': lambda text: text.strip(),
    'floats': lambda text: [float(v) for v in text.split(',') if v.strip()],
    'ints': lambda text: [int(v) for v in text.split(',') if v.strip()],
    'matrix': _parse_matrix,
}


def line_index(path):
    """Maps (section, key) to the line each key is defined on"""
    lines = {}
    section = None
    with open(path, encoding='utf-8') as fd:
        for number, text in enumerate(fd, 1):
            match = _SECTION_LINE.match(text)
            if match:
                section = match.group(1).strip()
                continue
            match = _KEY_LINE.match(text)
            if match and section is not None:
                lines[(section, match.group(1).strip())] = number
    return lines


def load_settings(path=None, overrides=(), experiment=None):
    """Reads, overrides and validates the settings

    Returns a dict of sections, each a dict of typed values with defaults
    filled in."""
    raw = {}
    lines = {}
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError('config file %s does not exist' % path)
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read(path, encoding='utf-8')
        except configparser.Error as e:
            raise ConfigError('cannot parse %s: %s' % (path, e))
        lines = line_index(path)
        for section in parser.sections():
            raw[section] = dict(parser.items(section))

    for override in overrides:
        match = re.match(r'^([^.=]+)\.([^=]+)=(.*)$', override)
        if not match:
            raise ConfigError('--set expects section.key=value, got %r' % override)
        section, key, value = (g.strip() for g in match.groups())
        raw.setdefault(section, {})[key] = value

    settings = {}
    for section, values in raw.items():
        if section not in SCHEMA:
            raise ConfigError('unknown section [%s]' % section)
        for key in values:
            if key not in SCHEMA[section]:
                raise ConfigError('unknown key %s' % _where(section, key, lines))

    for section, keys in SCHEMA.items():
        values = raw.get(section, {})
        typed = {}
        for key, (kind, default) in keys.items():
            if key in values:
                try:
                    typed[key] = _PARSERS[kind](values[key])
                except ValueError as e:
                    raise ConfigError('%s: expected %s, got %r (%s)' % (_where(section, key, lines), kind,
                                                                        values[key], e))
            elif default is REQUIRED:
                if section == 'target' and experiment in TARGETLESS:
                    typed[key] = None
                    continue
                raise ConfigError('%s: missing required key' % _where(section, key, lines))
            else:
                typed[key] = default
        settings[section] = typed
    log.debug('loaded settings for %d sections', len(settings))
    return settings


def target_description(settings):
    """The [target] section as a construct_target description"""
    section = dict(settings['target'])
    return {k: v for k, v in section.items() if v is not None}


class Config(object):
    """difflab configuration class and option parser"""
    def __init__(self, argv=None):
        parser = argparse.ArgumentParser(
            prog='difflab',
            description='Runs equilibrium statistical-mechanics experiments on diffusion models')

        parser.add_argument('experiment', type=str, choices=EXPERIMENTS, help='the experiment to run')
        parser.add_argument('--config', type=str, help='the INI file describing the experiment', default=None)
        parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='SECTION.KEY=VALUE',
                            help='override one configuration key (repeatable)')
        parser.add_argument('--out', type=str, help='the directory artifacts are written to', required=True)
        parser.add_argument('-v', '--verbose', help='be noisy', action='store_true')

        self._args = parser.parse_args(argv)

        if self._args.verbose:
            logging.basicConfig(level=logging.DEBUG, format=LOGGERFMT)
        else:
            logging.basicConfig(level=logging.INFO, format=LOGGERFMT)

        self._settings = load_settings(self._args.config, self._args.overrides, self._args.experiment)

    @property
    def experiment(self):
        """Gets the experiment name"""
        return self._args.experiment

    @property
    def out_dir(self):
        """Gets the artifact directory"""
        return self._args.out

    @property
    def verbose(self):
        return self._args.verbose

    @property
    def seed(self):
        """Gets the master seed"""
        return self._settings['run']['seed']

    @property
    def sigma(self):
        return self._settings['run']['sigma']

    @property
    def threads(self):
        """Worker count, None to defer to DIFFLAB_THREADS and the CPU count"""
        return self._settings['run']['threads'] or None

    @property
    def settings(self):
        return self._settings

    def section(self, name):
        """Gets the typed values of one section"""
        return self._settings[name]
