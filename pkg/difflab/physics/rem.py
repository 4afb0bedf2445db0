"""Random-energy-model diagnostics of memorization

With a finite training set of N = 2^M points spread uniformly on a sphere,
the Boltzmann weights over the training points behave like a random energy
model: the projections x.y_j are nearly Gaussian and, below a condensation
temperature, the weight collapses onto a vanishing fraction of the points.
The participation ratio Y = sum_j w_j^2 measures that collapse and 1/Y counts
the points that still contribute.
"""

import collections
import logging

import numpy as np
from scipy.special import logsumexp
from scipy.stats import anderson

from difflab.errors import ConfigError
from difflab.physics.targets import Hypersphere
from difflab.physics.thermo import inverse_temperature
from difflab.sim import streams

log = logging.getLogger(__name__)

# critical inverse temperature of the standard random energy model
BETA_C = 2.0 * np.sqrt(np.log(2.0))
MIN_M = 8
MAX_M = 24
MIN_REPLICAS = 8
GAUSSIAN_SAMPLE = 2000
# Anderson-Darling significance level, in percent
NORMALITY_LEVEL = 1.0
COLLAPSE_THRESHOLD = 0.99

CondensationReport = collections.namedtuple('CondensationReport', [
    'times',
    'beta_tilde',
    'y_mean',
    'y_stderr',
    'y_theory',
    'n_eff',
    't_cond',
    't_cond_closed_form',
    'collapse_time',
])

GaussianProxy = collections.namedtuple('GaussianProxy', ['passed', 'statistic', 'critical_value', 'sample_size'])


class SizeOverflow(ConfigError):
    """The requested dataset has more than 2^24 points"""
    def __init__(self, M):
        super(SizeOverflow, self).__init__('dataset size 2^%d exceeds 2^%d' % (M, MAX_M))


class DegenerateRadius(ConfigError):
    """The spread parameter gives a sphere of zero radius"""
    def __init__(self, nu):
        super(DegenerateRadius, self).__init__('spread nu=%g gives a degenerate radius' % nu)


class ZeroField(ConfigError):
    """The condensation time needs a non-zero noisy state"""
    def __init__(self):
        super(ZeroField, self).__init__('condensation time is undefined at x = 0')


class RemDataset(collections.namedtuple('RemDataset', ['M', 'd', 'nu', 'radius', 'points', 'seed'])):
    """N = 2^M training points on the sphere of radius nu sqrt(M / 2d)"""
    __slots__ = ()

    @property
    def N(self):
        return len(self.points)


def rem_radius(M, d, nu):
    return nu * np.sqrt(M / (2.0 * d))


def check_dataset_size(M, d):
    """Refuses exponents outside [MIN_M, MAX_M] and dimensions below 2"""
    if M > MAX_M:
        raise SizeOverflow(M)
    if M < MIN_M:
        raise ConfigError('dataset exponent M=%d must be at least %d' % (M, MIN_M))
    if d < 2:
        raise ConfigError('dataset dimension d=%d must be at least 2' % d)


def build_rem_dataset(M, d, nu, rng, seed=None):
    """Samples N = 2^M points uniformly on the sphere of radius r(M, d, nu)"""
    M, d = int(M), int(d)
    check_dataset_size(M, d)
    if not nu > 0 or not np.isfinite(nu):
        raise DegenerateRadius(nu)
    radius = rem_radius(M, d, nu)
    points = Hypersphere(d, radius).sample(1 << M, rng)
    log.debug('sampled %d points on the radius-%g sphere in %d dimensions', len(points), radius, d)
    return RemDataset(M, d, float(nu), float(radius), points, seed)


def _energies(points, x):
    """E_j = |y_j|^2 / 2 - x.y_j for each row of x, shape (probes, N)"""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    half_sq = 0.5 * np.einsum('ij,ij->i', points, points)
    return half_sq[None, :] - x @ points.T


def quenched_log_partition(dataset, x, beta):
    """log of (1/N) sum_j exp(-beta E_j)"""
    energies = _energies(dataset.points, x)[0]
    return float(logsumexp(-beta * energies) - np.log(len(energies)))


def _participation(log_weights):
    """sum_j w_j^2 for unnormalized log-weights along the last axis"""
    log_z = logsumexp(log_weights, axis=-1)
    return np.exp(logsumexp(2.0 * log_weights, axis=-1) - 2.0 * log_z)


def participation_ratio(dataset, x, t, sigma):
    """Y = sum_j w_j^2 over the normalized Boltzmann weights at time t"""
    beta = inverse_temperature(t, sigma)
    y = float(_participation(-beta * _energies(dataset.points, x)[0]))
    return float(np.clip(y, 1.0 / dataset.N, 1.0))


def condensation_time(x, nu, sigma):
    """Closed form nu |x| / (2 sigma^2 sqrt(log 2))"""
    norm = float(np.linalg.norm(x))
    if not norm > 0:
        raise ZeroField()
    return nu * norm / (2.0 * sigma ** 2 * np.sqrt(np.log(2.0)))


def expected_participation_ratio(beta_tilde):
    """Asymptotic <Y>: 0 up to BETA_C, 1 - BETA_C / beta above it"""
    beta_tilde = np.asarray(beta_tilde, dtype=float)
    if np.any(beta_tilde < 0):
        raise ValueError('beta_tilde must be non-negative')
    with np.errstate(divide='ignore'):
        value = np.where(beta_tilde > BETA_C, 1.0 - BETA_C / np.maximum(beta_tilde, BETA_C), 0.0)
    return float(value) if value.ndim == 0 else value


def rem_inverse_temperature(beta, x_norm, radius, d, M):
    """Reduced inverse temperature beta * std(x.y) / sqrt(M / 2)

    x.y_j has variance (|x| r)^2 / d on the sphere."""
    return beta * x_norm * radius * np.sqrt(2.0 / (d * M))


def geometric_condensation_time(x_norm, radius, d, M, sigma):
    """Time at which rem_inverse_temperature reaches BETA_C"""
    return x_norm * radius * np.sqrt(2.0 / (d * M)) / (sigma ** 2 * BETA_C)


def _probe_directions(rng, probes, d):
    g = rng.standard_normal((probes, d))
    return g / np.linalg.norm(g, axis=1)[:, None]


def replica_participation(M, d, nu, x_norm, sigma, times, rng, probes=32):
    """Y(t) of one disorder realization, averaged over probe directions of x"""
    dataset = build_rem_dataset(M, d, nu, rng)
    xs = x_norm * _probe_directions(rng, probes, d)
    energies = _energies(dataset.points, xs)
    betas = np.array([inverse_temperature(t, sigma) for t in times])
    ys = np.array([_participation(-betas[:, None] * e[None, :]) for e in energies])
    return np.clip(ys.mean(axis=0), 1.0 / dataset.N, 1.0)


def condensation_scan(M, d, nu, x_norm, sigma, t_grid, replicas, seed, probes=32, threads=None):
    """Disorder-averaged participation ratio over a time grid

    Replica i samples its dataset and probe directions from stream(seed, i)."""
    if replicas < MIN_REPLICAS:
        raise ConfigError('need at least %d replicas, got %d' % (MIN_REPLICAS, replicas))
    check_dataset_size(int(M), int(d))
    if not x_norm > 0:
        raise ZeroField()
    times = np.asarray(t_grid, dtype=float)
    radius = rem_radius(M, d, nu)

    def run(index):
        return replica_participation(M, d, nu, x_norm, sigma, times, streams.stream(seed, index), probes)

    ys = np.array(streams.parallel_map(run, range(replicas), threads=threads))
    y_mean = ys.mean(axis=0)
    y_stderr = ys.std(axis=0, ddof=1) / np.sqrt(replicas)
    beta_tilde = np.array([rem_inverse_temperature(inverse_temperature(t, sigma), x_norm, radius, d, M)
                           for t in times])
    t_cond = geometric_condensation_time(x_norm, radius, d, M, sigma)
    report = CondensationReport(
        times=times,
        beta_tilde=beta_tilde,
        y_mean=y_mean,
        y_stderr=y_stderr,
        y_theory=expected_participation_ratio(beta_tilde),
        n_eff=1.0 / y_mean,
        t_cond=t_cond,
        t_cond_closed_form=condensation_time([x_norm], nu, sigma),
        collapse_time=collapse_time(times, ys),
    )
    log.info('condensation scan over %d replicas: t_cond=%g', replicas, t_cond)
    return report


def report_rows(report):
    """CSV rows t,beta_tilde,Y_mean,Y_stderr,Y_theory,n_eff"""
    return [list(row) for row in zip(report.times, report.beta_tilde, report.y_mean,
                                     report.y_stderr, report.y_theory, report.n_eff)]


def collapse_time(times, ys, threshold=COLLAPSE_THRESHOLD):
    """Largest t whose disorder-median Y exceeds threshold, None if there is none"""
    median = np.median(np.atleast_2d(ys), axis=0)
    hits = np.asarray(times)[median > threshold]
    return float(hits.max()) if len(hits) else None


def gaussian_proxy_check(dataset, x, max_points=GAUSSIAN_SAMPLE):
    """Anderson-Darling normality test of the projections x.y_j at 1%"""
    projections = dataset.points[:max_points] @ np.asarray(x, dtype=float)
    result = anderson(projections, dist='norm')
    levels = list(result.significance_level)
    critical = float(result.critical_values[levels.index(NORMALITY_LEVEL)])
    passed = bool(result.statistic < critical)
    if not passed:
        log.warning('projections fail the normality check: A2=%g > %g', result.statistic, critical)
    return GaussianProxy(passed, float(result.statistic), critical, len(projections))
