"""The generative bath: K coupled replicas of the microstate

Each of K sites holds a support atom y^mu of a constant-norm target and the
sites interact through uniform all-to-all couplings:

    H_K = beta * (w/2 * sum_{mu != nu} y^mu.y^nu - sum_mu y^mu.h) - sum_mu log phi(y^mu)

With w = -1/K alignment is favoured and the K -> infinity limit reproduces the
mean-field self-consistency m = <y>(m + h, t). The chain here is single-site
Metropolis with a numba kernel; the Brownian particle of the generative
process is driven by the mean and fluctuations of the selected pure state.
"""

import collections
import logging

import numpy as np
from numba import njit
from scipy.optimize import brentq
from scipy.special import logsumexp

from difflab.errors import ConfigError, DifflabError, NumericalFailure
from difflab.physics import criticality, thermo
from difflab.sim import streams
from difflab.sim.dynamics import DIVERGENCE_BOUND, NonFiniteState, Trajectory, path_noise

log = logging.getLogger(__name__)

MIN_SITES = 2
MAX_GIBBS_STATES = 1 << 20
BATCH_SWEEPS = 1 << 14
CRITICAL_BAND = 1e-6
DIFFERENCE_STEP = 1e-6
# floor on 1 - lambda when resumming pure-state fluctuations near t_c
RESUMMATION_FLOOR = 1e-3
MIN_REPLICAS = 8

BathRunStats = collections.namedtuple('BathRunStats', [
    'mean',
    'covariance',
    'susceptibility',
    'acceptance',
    'autocorrelation_time',
    'stderr',
    'sweeps',
    'seed',
    'codes',
])

VarianceCheck = collections.namedtuple('VarianceCheck', ['finite_difference', 'printed_form', 'implicit_form'])

ConvergenceRow = collections.namedtuple('ConvergenceRow', [
    'K', 't', 'mean_magnetization', 'stderr', 'mean_field_value', 'abs_error'])


class NonConstantNorm(DifflabError):
    """The bath needs every support atom to have the same euclidean norm"""
    def __init__(self, kind):
        super(NonConstantNorm, self).__init__('target %s does not have a constant-norm support' % kind)


class CriticalDivergence(NumericalFailure):
    """The pure-state variance diverges at t sigma^2 = 1"""
    def __init__(self, temperature):
        super(CriticalDivergence, self).__init__('pure-state variance diverges at t sigma^2 = %.9g' % temperature)


def coupling_weight(K):
    return -1.0 / K


class BathConfig(collections.namedtuple('BathConfig', ['states', 'weight', 'field', 'beta'])):
    """Microstates of the K sites, coupling weight, external field and beta"""
    __slots__ = ()

    @property
    def K(self):
        return len(self.states)

    @property
    def magnetization(self):
        return np.mean(self.states, axis=0)


def make_bath_config(states, t, sigma, h=None):
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if len(states) < MIN_SITES:
        raise ConfigError('a bath needs at least %d sites' % MIN_SITES)
    field = np.zeros(states.shape[1]) if h is None else np.atleast_1d(np.asarray(h, dtype=float))
    return BathConfig(states, coupling_weight(len(states)), field, thermo.inverse_temperature(t, sigma))


def _require_constant_norm(target):
    if not target.constant_norm:
        raise NonConstantNorm(target.kind)


def bath_energy(config, target):
    """H_K of a bath configuration"""
    _require_constant_norm(target)
    states = config.states
    total = states.sum(axis=0)
    pairs = total @ total - np.einsum('ij,ij->', states, states)
    log_phi = sum(target.support_log_weight(y) for y in states)
    return float(config.beta * (0.5 * config.weight * pairs - np.sum(states @ config.field)) - log_phi)


@njit(cache=True)
def _metropolis_sweeps(codes, total, atoms, log_weights, beta, weight, field, sites, offsets, uniforms,
                       record_codes):
    K = codes.shape[0]
    A = atoms.shape[0]
    d = atoms.shape[1]
    sweeps = sites.shape[0] // K
    means = np.empty((sweeps, d))
    configs = np.zeros(sweeps if record_codes else 0, dtype=np.int64)
    accepted = 0
    for s in range(sweeps):
        for k in range(K):
            i = s * K + k
            mu = sites[i]
            old = codes[mu]
            new = (old + offsets[i]) % A
            delta = 0.0
            for j in range(d):
                dy = atoms[new, j] - atoms[old, j]
                delta += dy * (weight * (total[j] - atoms[old, j]) - field[j])
            delta = beta * delta - (log_weights[new] - log_weights[old])
            if delta <= 0.0 or uniforms[i] < np.exp(-delta):
                for j in range(d):
                    total[j] += atoms[new, j] - atoms[old, j]
                codes[mu] = new
                accepted += 1
        for j in range(d):
            means[s, j] = total[j] / K
        if record_codes:
            code = 0
            base = 1
            for mu in range(K):
                code += codes[mu] * base
                base *= A
            configs[s] = code
    return means, configs, accepted


def _initial_codes(K, atoms, field, rng):
    if np.any(field != 0):
        return np.full(K, int(np.argmax(atoms @ field)), dtype=np.int64)
    return rng.integers(0, len(atoms), size=K).astype(np.int64)


def integrated_autocorrelation(series, window=5.0):
    """Integrated autocorrelation time with the self-consistent window of Sokal"""
    series = np.asarray(series, dtype=float)
    n = len(series)
    centered = series - series.mean()
    if n < 2 or not np.any(centered):
        return 1.0
    size = 1 << int(np.ceil(np.log2(2 * n)))
    spectrum = np.fft.rfft(centered, size)
    acf = np.fft.irfft(spectrum * np.conj(spectrum), size)[:n]
    acf /= acf[0]
    tau = 1.0
    for lag in range(1, n):
        tau += 2.0 * acf[lag]
        if lag >= window * tau:
            break
    return max(1.0, float(tau))


def observable_direction(h, dim):
    """Unit field direction, or the first axis when the field vanishes"""
    h = np.zeros(dim) if h is None else np.atleast_1d(np.asarray(h, dtype=float))
    norm = np.linalg.norm(h)
    if norm > 0:
        return h / norm
    e = np.zeros(dim)
    e[0] = 1.0
    return e


def bath_mc_run(K, t, sigma, h, target, sweeps, burn_in, rng, seed=None, record_codes=False):
    """Single-site Metropolis sweeps of a K-site bath at beta(t)

    A sweep is K update attempts at uniformly chosen sites, each proposing a
    uniformly chosen different atom. Statistics cover the sweeps after
    burn_in; with record_codes the configuration index sum_mu code_mu A^mu of
    every recorded sweep is returned too."""
    _require_constant_norm(target)
    K, sweeps, burn_in = int(K), int(sweeps), int(burn_in)
    if K < MIN_SITES:
        raise ConfigError('a bath needs at least %d sites' % MIN_SITES)
    if not sweeps > burn_in >= 0:
        raise ConfigError('need sweeps > burn_in >= 0, got %d and %d' % (sweeps, burn_in))
    atoms, log_weights = target.atoms_array()
    atoms = np.array(atoms, dtype=float)
    log_weights = np.array(log_weights, dtype=float)
    if len(atoms) < 2:
        raise ConfigError('a bath needs a target with at least two atoms')
    field = np.zeros(target.dim) if h is None else np.atleast_1d(np.asarray(h, dtype=float))
    beta = thermo.inverse_temperature(t, sigma)
    weight = coupling_weight(K)

    codes = _initial_codes(K, atoms, field, rng)
    means, configs, accepted = [], [], 0
    done = 0
    while done < sweeps:
        batch = min(BATCH_SWEEPS, sweeps - done)
        total = atoms[codes].sum(axis=0)
        sites = rng.integers(0, K, size=batch * K)
        offsets = rng.integers(1, len(atoms), size=batch * K)
        uniforms = rng.random(batch * K)
        m, c, a = _metropolis_sweeps(codes, total, atoms, log_weights, beta, weight, field,
                                     sites, offsets, uniforms, record_codes)
        means.append(m)
        configs.append(c)
        accepted += a
        done += batch

    means = np.concatenate(means)[burn_in:]
    kept_codes = np.concatenate(configs)[burn_in:] if record_codes else None
    mean = means.mean(axis=0)
    cov = np.atleast_2d(np.cov(means, rowvar=False)) if len(means) > 1 else np.zeros((target.dim, target.dim))
    tau = integrated_autocorrelation(means @ observable_direction(field, target.dim))
    stderr = np.sqrt(np.diag(cov) * tau / len(means))
    acceptance = accepted / float(sweeps * K)
    log.debug('K=%d t=%g: acceptance %.3f, tau %.1f', K, t, acceptance, tau)
    return BathRunStats(mean, cov, beta * K * cov, acceptance, tau, stderr, sweeps - burn_in, seed, kept_codes)


def exact_gibbs_distribution(K, t, sigma, h, target):
    """Gibbs probabilities of all A^K bath configurations, indexed like bath_mc_run codes"""
    _require_constant_norm(target)
    atoms, log_weights = target.atoms_array()
    count = len(atoms) ** K
    if count > MAX_GIBBS_STATES:
        raise ConfigError('%d^%d configurations are too many to enumerate' % (len(atoms), K))
    field = np.zeros(target.dim) if h is None else np.atleast_1d(np.asarray(h, dtype=float))
    digits = (np.arange(count)[:, None] // len(atoms) ** np.arange(K)[None, :]) % len(atoms)
    states = atoms[digits]
    total = states.sum(axis=1)
    pairs = np.einsum('ni,ni->n', total, total) - np.einsum('nki,nki->n', states, states)
    beta = thermo.inverse_temperature(t, sigma)
    energy = beta * (0.5 * coupling_weight(K) * pairs - states.sum(axis=1) @ field) - log_weights[digits].sum(axis=1)
    return np.exp(-energy - logsumexp(-energy))


def _spontaneous(temperature):
    """Positive root of m = tanh(m / T) for T < 1"""
    return float(brentq(lambda m: np.tanh(m / temperature) - m, 1e-12, 1.0, xtol=1e-15))


def _branch_root(temperature, h, positive):
    """Root of m = tanh((m + h) / T) on the chosen branch"""
    sign = 1.0 if positive else -1.0
    g = lambda m: np.tanh((sign * m + h) / temperature) * sign - m
    if g(1.0) >= 0:
        return sign
    lo = 0.0
    if g(lo) <= 0:
        if temperature >= 1.0:
            return None
        # the field opposes the branch; walk in from the spontaneous value
        lo = 0.5 * _spontaneous(temperature)
        if g(lo) <= 0:
            return None
    return sign * brentq(g, lo, 1.0, xtol=1e-15)


def curie_weiss_magnetization(t, sigma, h=0.0):
    """Stable root of m = tanh((m + h) / (t sigma^2))

    The branch follows the sign of h; at h = 0 below t sigma^2 = 1 the
    positive branch is returned."""
    temperature = t * sigma ** 2
    h = float(h)
    if h == 0.0:
        if temperature >= 1.0:
            return 0.0
        return _spontaneous(temperature)
    return float(_branch_root(temperature, h, h > 0))


def pure_state_variance(t, sigma, step=DIFFERENCE_STEP):
    """T dm/dh at h = 0 on the positive branch, by central differences"""
    return pure_state_variance_check(t, sigma, step).finite_difference


def pure_state_variance_check(t, sigma, step=DIFFERENCE_STEP):
    """The finite-difference variance beside the printed and implicit closed forms

    High temperature: 1 / (1 - 1/T) for all three. Low temperature: the
    printed form is T (1 - m^2) / m^2 and implicit differentiation of the
    self-consistency gives T (1 - m^2) / (T - 1 + m^2)."""
    temperature = t * sigma ** 2
    if abs(temperature - 1.0) < CRITICAL_BAND:
        raise CriticalDivergence(temperature)
    up = _branch_root(temperature, step, True)
    down = _branch_root(temperature, -step, True)
    if down is None:
        down = _branch_root(temperature, -step, False)
    value = temperature * (up - down) / (2.0 * step)

    if temperature > 1.0:
        closed = 1.0 / (1.0 - 1.0 / temperature)
        return VarianceCheck(value, closed, closed)
    m = curie_weiss_magnetization(t, sigma)
    printed = temperature * (1.0 - m ** 2) / m ** 2 if m > 0 else np.inf
    implicit = temperature * (1.0 - m ** 2) / (temperature - 1.0 + m ** 2)
    if not np.isclose(printed, value, rtol=1e-3):
        log.warning('printed low-temperature variance %g disagrees with finite differences %g at T=%g',
                    printed, value, temperature)
    return VarianceCheck(value, printed, implicit)


def _pure_states(t, target, sigma, seeds):
    """Stable mean-field states at time t and their noise matrices"""
    found = criticality.fixed_points(t, target, sigma, seeds)
    stable = [p for p in found if p.stability != criticality.UNSTABLE] or found
    beta = thermo.inverse_temperature(t, sigma)
    means = np.array([p.m for p in stable])
    ens = thermo.ensemble(means, beta, target)
    noise = []
    for cov in ens.covariance:
        values, vectors = np.linalg.eigh(beta * cov)
        # C (I - beta C)^{-1} shares eigenvectors with beta C
        gap = np.maximum(1.0 - values, RESUMMATION_FLOOR)
        resummed = (vectors * (np.clip(values, 0.0, None) / beta / gap)) @ vectors.T
        noise.append(thermo.psd_sqrt(resummed))
    return means, np.array(noise)


def bath_brownian_integrate(x_init, schedule, H, target, sigma, rng, seeds=None, seed=None):
    """Brownian particle driven by a bath of H coupled sites

    Each step moves x toward the pure-state mean <y-bar> with rate dt/t and
    adds the pure-state fluctuation B sqrt(dt/t) xi / sqrt(H), where
    B^2 = C (I - beta C)^{-1} is the K-scaled covariance of y-bar. The pure
    state is the stable mean-field branch best aligned with x."""
    _require_constant_norm(target)
    if not H >= 1:
        raise ConfigError('coupled site count H=%g must be at least 1' % H)
    seeds = criticality.default_seeds(target) if seeds is None else seeds
    times = schedule.times()
    x = np.array(x_init, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]

    steps = len(times) - 1
    increments = path_noise(rng, steps, x.shape)
    states = [x.copy()]
    for k in range(steps):
        t = times[k]
        ratio = (t - times[k + 1]) / t
        means, noise = _pure_states(t, target, sigma, seeds)
        pick = np.argmax(x @ means.T, axis=1)
        kick = np.einsum('nij,nj->ni', noise[pick], increments[k])
        x = x + (means[pick] - x) * ratio + kick * np.sqrt(ratio / H)
        states.append(x.copy())
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_BOUND:
            partial = np.array(states)
            raise NonFiniteState(times[k + 1], Trajectory(times[:k + 2], partial[:, 0] if single else partial, seed))
    states = np.array(states)
    return Trajectory(times, states[:, 0, :] if single else states, seed)


def mean_field_value(t, sigma, h, target):
    """The K -> infinity magnetization along the observable direction"""
    direction = observable_direction(h, target.dim)
    mean, _ = target.moments()
    field = np.zeros(target.dim) if h is None else np.atleast_1d(np.asarray(h, dtype=float))
    scale = 0.5 * criticality.support_diameter(target)
    point = criticality.solve_self_consistency(t, field, mean + scale * direction, target, sigma)
    return float(point.m @ direction)


def mean_field_convergence_study(K_list, t_grid, target, sigma, replicas, seed, h=None,
                                 sweeps=4000, burn_in=1000, threads=None):
    """|<y-bar>_K - m_mean-field| with its standard error for every (K, t)

    Replica r of cell (K_i, t_j) runs on stream(seed, (i * len(t_grid) + j) * replicas + r)."""
    K_list = [int(k) for k in K_list]
    if K_list != sorted(K_list):
        raise ConfigError('K values must be ascending')
    if replicas < MIN_REPLICAS:
        raise ConfigError('need at least %d replicas, got %d' % (MIN_REPLICAS, replicas))
    times = [float(t) for t in t_grid]
    direction = observable_direction(h, target.dim)

    cells = [(i, K, j, t) for i, K in enumerate(K_list) for j, t in enumerate(times)]

    def run(cell):
        i, K, j, t = cell
        base = (i * len(times) + j) * replicas
        values = [bath_mc_run(K, t, sigma, h, target, sweeps, burn_in, streams.stream(seed, base + r)).mean @ direction
                  for r in range(replicas)]
        return np.array(values)

    results = streams.parallel_map(run, cells, threads=threads)
    rows = []
    for (i, K, j, t), values in zip(cells, results):
        reference = mean_field_value(t, sigma, h, target)
        mean = float(values.mean())
        stderr = float(values.std(ddof=1) / np.sqrt(len(values)))
        rows.append(ConvergenceRow(K, t, mean, stderr, reference, abs(mean - reference)))
        log.info('K=%d t=%g: <y-bar>=%.5f +- %.5f, mean field %.5f', K, t, mean, stderr, reference)
    return rows
