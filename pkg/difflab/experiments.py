"""Glue between the configuration and the physics modules

Every experiment is a function of (config, manifest) that writes its
artifacts into the output directory. experiment_op maps the outcome onto the
process exit status the same way for all of them.
"""

import collections
import functools
import logging
import os

import numpy as np

from difflab.config import target_description
from difflab.errors import ConfigError, DifflabError, NumericalFailure
from difflab.io import manifest as manifests
from difflab.io.tables import emit_csv, emit_json
from difflab.physics import bath, criticality, hopfield, rem, thermo
from difflab.physics.targets import construct_target, enumerate_support
from difflab.sim import dynamics, streams

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

REGISTRY = collections.OrderedDict()


def experiment_op(fn):
    """Runs an experiment and turns its outcome into an exit status"""
    @functools.wraps(fn)
    def handled_fn(config, manifest):
        try:
            fn(config, manifest)
        except ConfigError as e:
            log.error('configuration error: %s', e)
            manifest.finish(manifests.CONFIG_ERROR, str(e))
            return EXIT_CONFIG
        except NumericalFailure as e:
            log.error('numerical failure: %s', e)
            manifest.finish(manifests.NUMERICAL_FAILURE, str(e))
            return EXIT_NUMERICAL
        except DifflabError as e:
            # usage errors come from a target that does not suit the experiment
            log.error('unsupported combination: %s', e)
            manifest.finish(manifests.CONFIG_ERROR, str(e))
            return EXIT_CONFIG
        except Exception as e:
            log.exception('unexpected failure: %s', e)
            manifest.finish(manifests.NUMERICAL_FAILURE, repr(e))
            return EXIT_NUMERICAL
        manifest.finish(manifests.OK)
        return EXIT_OK
    return handled_fn


def register_experiment(name):
    def register(fn):
        REGISTRY[name] = experiment_op(fn)
        return fn
    return register


def emit_artifact(config, manifest, name, write, *args):
    """Calls write(*args, path) for the file `name` under the output directory

    The file joins the manifest only once it has been written."""
    path = os.path.join(config.out_dir, name)
    write(*args, path)
    return manifest.add(path)


def _target(config):
    return construct_target(target_description(config.settings))


def _schedule(section, t_end=None):
    return dynamics.make_schedule(section['t_end'] if t_end is None else t_end, section['t_min'],
                                  section['steps'], section['spacing'])


def _coordinates(prefix, dim):
    return ['%s_%d' % (prefix, i) for i in range(dim)]


@register_experiment('bifurcation')
def bifurcation(config, manifest):
    target = _target(config)
    section = config.section('criticality')
    if not section['t_hi'] > section['t_lo'] > 0:
        raise ConfigError('[criticality] needs t_hi > t_lo > 0')
    grid = np.geomspace(section['t_hi'], section['t_lo'], section['points'])
    diagram = criticality.bifurcation_scan(grid, target, config.sigma,
                                           jump_tolerance=section['jump_tolerance'] or None,
                                           threads=config.threads)
    header = ['t', 'branch_id', 'stability', 'leading_eigenvalue'] + _coordinates('m', target.dim)
    emit_artifact(config, manifest, 'branches.csv', emit_csv, header, diagram.rows())

    try:
        t_c = criticality.critical_time(target, config.sigma)
    except criticality.NoBracket as e:
        log.warning('%s', e)
        t_c = None
    predicted, direction = criticality.predicted_critical_time(target, config.sigma)
    summary = {'t_c': t_c, 'predicted_t_c': predicted, 'leading_direction': direction,
               'branch_count': len(diagram.branches())}
    emit_artifact(config, manifest, 'bifurcation.json', emit_json, summary)


@register_experiment('exponents')
def exponents(config, manifest):
    target = _target(config)
    t_c = criticality.critical_time(target, config.sigma)
    fits = criticality.fit_critical_exponents(target, config.sigma, t_c, config.section('exponents')['points'])
    emit_artifact(config, manifest, 'exponents.json', emit_json, {'t_c': t_c, 'fits': [f._asdict() for f in fits]})


def _frequencies(states, target):
    index, distance = dynamics.assign_atoms(states, target)
    counts = np.bincount(index, minlength=target.atom_count)
    return counts / float(len(index)), float(distance.max())


def _frequency_rows(target, frequencies):
    return [list(atom.point) + [np.exp(atom.log_weight), f]
            for atom, f in zip(enumerate_support(target), frequencies)]


@register_experiment('sample')
def sample(config, manifest):
    target = _target(config)
    section = config.section('sample')
    schedule = _schedule(config.section('schedule'))
    terminal = dynamics.sample_ensemble(target, schedule, config.sigma, section['trajectories'], config.seed,
                                        denoise=section['denoise'], noise=section['noise'],
                                        sampler=section['sampler'], threads=config.threads)
    emit_artifact(config, manifest, 'terminal.csv', emit_csv, _coordinates('x', target.dim), terminal)

    for i in range(section['record']):
        rng = streams.stream(config.seed, i)
        x0 = dynamics.forward_sample(target.sample(1, rng)[0], schedule.t_end, config.sigma, rng)
        trajectory = dynamics.reverse_integrate(x0, schedule, target, config.sigma, rng,
                                                noise=section['noise'], denoise=section['denoise'],
                                                seed=config.seed)
        emit_artifact(config, manifest, 'trajectory_%d.csv' % i, dynamics.write_trajectory_csv, trajectory)

    summary = {'trajectories': len(terminal)}
    if target.enumerable:
        frequencies, worst = _frequencies(terminal, target)
        emit_artifact(config, manifest, 'atoms.csv', emit_csv, _coordinates('y', target.dim) + ['weight', 'frequency'],
                      _frequency_rows(target, frequencies))
        summary.update(frequencies=frequencies, max_distance_to_atom=worst)
    emit_artifact(config, manifest, 'sample.json', emit_json, summary)


@register_experiment('latestart')
def latestart(config, manifest):
    target = _target(config)
    if not target.enumerable:
        raise ConfigError('the late-start comparison needs an enumerable target')
    section = config.section('latestart')
    schedule_section = config.section('schedule')
    t_c = criticality.critical_time(target, config.sigma)
    t_start = section['start_factor'] * t_c
    full = _schedule(schedule_section)
    late = _schedule(schedule_section, t_end=t_start)
    n = section['trajectories']

    full_states = dynamics.sample_ensemble(target, full, config.sigma, n, config.seed, threads=config.threads)
    late_states = dynamics.sample_ensemble(target, late, config.sigma, n, config.seed, late_start=True,
                                           threads=config.threads)
    full_freq, _ = _frequencies(full_states, target)
    late_freq, _ = _frequencies(late_states, target)
    rows = [r + [g] for r, g in zip(_frequency_rows(target, full_freq), late_freq)]
    header = _coordinates('y', target.dim) + ['weight', 'full_frequency', 'late_frequency']
    emit_artifact(config, manifest, 'latestart.csv', emit_csv, header, rows)
    summary = {'t_c': t_c, 't_start': t_start, 'full': full_freq, 'late': late_freq,
               'max_difference': float(np.max(np.abs(full_freq - late_freq)))}
    emit_artifact(config, manifest, 'latestart.json', emit_json, summary)


@register_experiment('rem')
def rem_condensation(config, manifest):
    section = config.section('rem')
    M, d, nu, x_norm = section['M'], section['d'], section['nu'], section['x_norm']
    rem.check_dataset_size(M, d)
    radius = rem.rem_radius(M, d, nu)
    scale = rem.rem_inverse_temperature(1.0, x_norm, radius, d, M)
    beta_tilde = rem.BETA_C * np.geomspace(section['beta_tilde_lo'], section['beta_tilde_hi'], section['points'])
    times = np.sort(1.0 / (beta_tilde / scale * config.sigma ** 2))[::-1]

    report = rem.condensation_scan(M, d, nu, x_norm, config.sigma, times, section['replicas'], config.seed,
                                   probes=section['probes'], threads=config.threads)
    emit_artifact(config, manifest, 'rem.csv', emit_csv, ['t', 'beta_tilde', 'Y_mean', 'Y_stderr', 'Y_theory', 'n_eff'],
                  rem.report_rows(report))

    rng = streams.stream(config.seed, section['replicas'])
    dataset = rem.build_rem_dataset(M, d, nu, rng, seed=config.seed)
    direction = rng.standard_normal(d)
    proxy = rem.gaussian_proxy_check(dataset, x_norm * direction / np.linalg.norm(direction))
    summary = {'t_cond': report.t_cond, 't_cond_closed_form': report.t_cond_closed_form,
               'collapse_time': report.collapse_time, 'M': M, 'd': d, 'nu': nu, 'radius': radius,
               'x_norm': x_norm, 'gaussian_proxy': proxy._asdict()}
    emit_artifact(config, manifest, 'rem.json', emit_json, summary)


@register_experiment('bath')
def bath_convergence(config, manifest):
    target = _target(config)
    section = config.section('bath')
    h = section['field'] * bath.observable_direction(None, target.dim)
    rows = bath.mean_field_convergence_study(section['K'], section['times'], target, config.sigma,
                                             section['replicas'], config.seed, h=h, sweeps=section['sweeps'],
                                             burn_in=section['burn_in'], threads=config.threads)
    emit_artifact(config, manifest, 'bath.csv', emit_csv, bath.ConvergenceRow._fields, rows)

    variances = []
    for t in section['times']:
        try:
            variances.append(dict(t=t, **bath.pure_state_variance_check(t, config.sigma)._asdict()))
        except bath.CriticalDivergence as e:
            log.warning('%s', e)

    summary = {'pure_state_variance': variances}
    if section['trajectories']:
        schedule = _schedule(config.section('schedule'))
        n = section['trajectories']
        rngs = streams.streams(config.seed, 0, n)
        x0 = np.array([dynamics.forward_sample(target.sample(1, g)[0], schedule.t_end, config.sigma, g)
                       for g in rngs])
        trajectory = bath.bath_brownian_integrate(x0, schedule, section['H'], target, config.sigma, rngs,
                                                  seed=config.seed)
        terminal = trajectory.states[-1]
        emit_artifact(config, manifest, 'bath_terminal.csv', emit_csv, _coordinates('x', target.dim), terminal)
        if target.enumerable:
            summary['terminal_frequencies'] = _frequencies(terminal, target)[0]
    emit_artifact(config, manifest, 'bath.json', emit_json, summary)


@register_experiment('hopfield')
def hopfield_equivalence(config, manifest):
    section = config.section('hopfield')
    raw = streams.stream(config.seed, 0).standard_normal((section['patterns'], section['dim']))
    patterns = hopfield.make_pattern_set(raw, section['beta'])
    report = hopfield.equivalence_check(patterns, section['t'], config.sigma, section['probes'],
                                        streams.stream(config.seed, 1))
    rows, hits = hopfield.retrieval_study(patterns, section['probes'], section['perturbation'], config.seed,
                                          section['step_size'], section['max_iters'], threads=config.threads)
    emit_artifact(config, manifest, 'retrieval.csv', emit_csv, hopfield.RetrievalRow._fields, rows)
    emit_artifact(config, manifest, 'hopfield.json', emit_json,
                  {'equivalence': report._asdict(), 'retrieved': hits, 'probes': len(rows)})


def score_error(x, t, sigma, target, step):
    """max |score - central differences of log p_t| at one state"""
    state = thermo.make_state(x, t, sigma)
    exact = thermo.score(state, target)
    numeric = np.empty(target.dim)
    for i in range(target.dim):
        e = np.zeros(target.dim)
        e[i] = step
        numeric[i] = (thermo.log_marginal(thermo.make_state(x + e, t, sigma), target)
                      - thermo.log_marginal(thermo.make_state(x - e, t, sigma), target)) / (2.0 * step)
    return float(np.max(np.abs(exact - numeric)))


@register_experiment('score-check')
def score_check(config, manifest):
    target = _target(config)
    section = config.section('scorecheck')

    def run(i):
        rng = streams.stream(config.seed, i)
        t = float(np.exp(rng.uniform(np.log(section['t_lo']), np.log(section['t_hi']))))
        x = dynamics.forward_sample(target.sample(1, rng)[0], t, config.sigma, rng)
        return t, score_error(x, t, config.sigma, target, section['step'])

    rows = streams.parallel_map(run, range(section['states']), threads=config.threads)
    emit_artifact(config, manifest, 'scorecheck.csv', emit_csv, ['t', 'max_abs_error'], rows)
    worst = max(error for _, error in rows)
    emit_artifact(config, manifest, 'scorecheck.json', emit_json,
                  {'max_abs_error': worst, 'tolerance': section['tolerance']})
    print('max |score - finite-difference gradient| = %.3e' % worst)
    if not worst < section['tolerance']:
        raise NumericalFailure('score check failed: %g >= %g' % (worst, section['tolerance']))


@register_experiment('landscape')
def landscape(config, manifest):
    target = _target(config)
    section = config.section('landscape')
    axis = np.linspace(section['lo'], section['hi'], section['points'])
    values, minima = thermo.free_energy_landscape(target, section['times'], config.sigma, axis, axis)
    g0, g1 = np.meshgrid(axis, axis)
    rows = []
    for t, grid in zip(section['times'], values):
        rows.extend([t, a, b, v] for a, b, v in zip(g0.ravel(), g1.ravel(), grid.ravel()))
    emit_artifact(config, manifest, 'landscape.csv', emit_csv, ['t', 'x_0', 'x_1', 'regularized_free_energy'], rows)
    found_rows = [[t, a, b] for t, found in zip(section['times'], minima) for a, b in found]
    emit_artifact(config, manifest, 'minima.csv', emit_csv, ['t', 'x_0', 'x_1'], found_rows)


def run_experiment(config):
    """Runs the configured experiment and writes its manifest; returns the exit status"""
    os.makedirs(config.out_dir, exist_ok=True)
    manifest = manifests.Manifest(config.experiment, config.settings, config.seed)
    log.info('running %s into %s', config.experiment, config.out_dir)
    status = REGISTRY[config.experiment](config, manifest)
    manifest.write(config.out_dir)
    log.info('%s finished with status %d', config.experiment, status)
    return status
