"""Modern Hopfield energy and pattern retrieval

E(x) = -log(sum_j exp(beta x.y_j)) / beta + |x|^2 / 2 is, up to an additive
constant, the regularized free energy of the diffusion ensemble whose target
is the uniform mixture of deltas on the patterns, so descending E is the
deterministic part of reverse diffusion on that target.
"""

import collections
import logging

import numpy as np
from scipy.special import logsumexp, softmax

from difflab.errors import ConfigError, NumericalFailure
from difflab.physics import thermo
from difflab.physics.targets import Discrete
from difflab.sim import streams

log = logging.getLogger(__name__)

GRADIENT_TOLERANCE = 1e-9
EQUIVALENCE_TOLERANCE = 1e-8
# a fixed point within RETRIEVAL_RADIUS / beta of a pattern retrieves it
RETRIEVAL_RADIUS = 10.0
NORM_TOLERANCE = 1e-12

Retrieval = collections.namedtuple('Retrieval', ['state', 'index', 'distance', 'iterations'])

EquivalenceReport = collections.namedtuple('EquivalenceReport', [
    'max_gradient_deviation',
    'offset_mean',
    'offset_spread',
    'expected_offset',
    'worst_probe',
])

RetrievalRow = collections.namedtuple('RetrievalRow', ['probe_id', 'converged', 'retrieved_index', 'distance', 'iters'])


class NoConvergence(NumericalFailure):
    """Energy descent did not reach the gradient tolerance"""
    def __init__(self, iterations, best):
        super(NoConvergence, self).__init__(
            'retrieval not converged after %d iterations (gradient norm %g)' % (iterations, best[0]))
        self.best = best


class MismatchDetected(NumericalFailure):
    """Hopfield and diffusion gradients disagree at a probe point"""
    def __init__(self, deviation, probe):
        super(MismatchDetected, self).__init__('gradient mismatch %g at probe %r' % (deviation, list(probe)))
        self.deviation = deviation
        self.probe = probe


class PatternSet(collections.namedtuple('PatternSet', ['patterns', 'beta'])):
    """Stored patterns as rows and the inverse temperature"""
    __slots__ = ()

    @property
    def N(self):
        return len(self.patterns)

    @property
    def dim(self):
        return self.patterns.shape[1]

    @property
    def unit_norm(self):
        return bool(np.all(np.abs(np.linalg.norm(self.patterns, axis=1) - 1.0) <= NORM_TOLERANCE))


def make_pattern_set(patterns, beta, normalize=True):
    patterns = np.atleast_2d(np.array(patterns, dtype=float))
    if len(patterns) < 1 or not np.all(np.isfinite(patterns)):
        raise ConfigError('patterns must be a non-empty finite array')
    if not beta > 0:
        raise ConfigError('beta=%g must be positive' % beta)
    if normalize:
        norms = np.linalg.norm(patterns, axis=1)
        if np.any(norms == 0):
            raise ConfigError('cannot normalize a zero pattern')
        patterns = patterns / norms[:, None]
    return PatternSet(patterns, float(beta))


def hopfield_energy(x, patterns):
    x = np.asarray(x, dtype=float)
    beta = patterns.beta
    return float(-logsumexp(beta * (patterns.patterns @ x)) / beta + 0.5 * x @ x)


def hopfield_gradient(x, patterns):
    """x - sum_j softmax_j(beta x.y) y_j"""
    x = np.asarray(x, dtype=float)
    return x - softmax(patterns.beta * (patterns.patterns @ x)) @ patterns.patterns


def delta_mixture(patterns):
    """The uniform delta mixture on the patterns as a diffusion target"""
    return Discrete(patterns.patterns)


def equivalence_check(patterns, t, sigma, probes, rng, scale=1.5, tolerance=EQUIVALENCE_TOLERANCE):
    """Compares grad E with grad F~ of the matching diffusion target at random points

    beta is taken from t and sigma. The energies differ by the constant
    -(log N / beta + 1/2) for unit-norm patterns."""
    beta = thermo.inverse_temperature(t, sigma)
    patterns = PatternSet(patterns.patterns, beta)
    if not patterns.unit_norm:
        raise ConfigError('equivalence needs unit-norm patterns')
    target = delta_mixture(patterns)
    points = scale * rng.standard_normal((int(probes), patterns.dim))

    worst, worst_probe, offsets = 0.0, None, []
    for x in points:
        state = thermo.make_state(x, t, sigma)
        deviation = float(np.max(np.abs(hopfield_gradient(x, patterns)
                                        - thermo.free_energy_gradient(state, target, regularized=True))))
        if deviation >= worst:
            worst, worst_probe = deviation, x
        offsets.append(hopfield_energy(x, patterns) - thermo.free_energy(state, target, regularized=True))
    offsets = np.array(offsets)
    report = EquivalenceReport(worst, float(offsets.mean()), float(offsets.max() - offsets.min()),
                               -(np.log(patterns.N) / beta + 0.5), worst_probe)
    if worst > tolerance:
        raise MismatchDetected(worst, worst_probe)
    log.info('gradients agree to %.3g over %d probes, energy offset %.12g', worst, len(points), report.offset_mean)
    return report


def retrieve(x0, patterns, step_size=1.0, max_iters=1000, tolerance=GRADIENT_TOLERANCE,
             radius=RETRIEVAL_RADIUS):
    """Gradient descent on E from x0

    Returns the fixed point, the index of the nearest pattern when it lies
    within radius / beta of it (None otherwise), that distance and the
    iteration count."""
    if not 0 < step_size <= 1:
        raise ConfigError('step size %g must be in (0, 1]' % step_size)
    x = np.array(x0, dtype=float)
    best = (np.inf, x.copy())
    for iteration in range(int(max_iters) + 1):
        grad = hopfield_gradient(x, patterns)
        norm = float(np.linalg.norm(grad))
        if norm < best[0]:
            best = (norm, x.copy())
        if norm < tolerance:
            distances = np.linalg.norm(patterns.patterns - x, axis=1)
            nearest = int(np.argmin(distances))
            index = nearest if distances[nearest] <= radius / patterns.beta else None
            return Retrieval(x, index, float(distances[nearest]), iteration)
        x = x - step_size * grad
    raise NoConvergence(int(max_iters), best)


def retrieval_study(patterns, probes, perturbation, seed, step_size=1.0, max_iters=1000, threads=None):
    """Retrieves from perturbed copies of the patterns

    Probe i starts at pattern i mod N plus perturbation times a standard
    normal vector drawn from stream(seed, i)."""
    def run(i):
        source = i % patterns.N
        x0 = patterns.patterns[source] + perturbation * streams.stream(seed, i).standard_normal(patterns.dim)
        try:
            found = retrieve(x0, patterns, step_size, max_iters)
        except NoConvergence as e:
            log.debug('probe %d: %s', i, e)
            return source, RetrievalRow(i, False, -1, float(np.linalg.norm(e.best[1] - patterns.patterns[source])),
                                        int(max_iters))
        index = -1 if found.index is None else found.index
        return source, RetrievalRow(i, True, index, found.distance, found.iterations)

    results = streams.parallel_map(run, range(int(probes)), threads=threads)
    hits = sum(1 for source, row in results if row.retrieved_index == source)
    log.info('retrieved %d of %d probes at beta=%g', hits, len(results), patterns.beta)
    return [row for _, row in results], hits
