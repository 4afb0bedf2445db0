"""Target distributions and their exact support geometry

A target is the noise-free data distribution phi(y). Enumerable targets hand
out their support as (points, log_weights) chunks with the log-weights
normalized over the whole support; the hypersphere is the one continuous
target and is handled by quadrature elsewhere.
"""

import collections
import functools
import logging

import numpy as np
from scipy.special import logsumexp

from difflab.errors import ConfigError, DifflabError

log = logging.getLogger(__name__)

TWO_DELTAS = 'two-deltas'
DISCRETE = 'discrete'
HYPERSPHERE = 'hypersphere'
DIFFUSED_ISING = 'diffused-ising'

# 2^24 states is the largest support we are willing to enumerate
MAX_ISING_DIM = 24
ISING_CHUNK = 1 << 16
WEIGHT_TOLERANCE = 1e-9
SUPPORT_TOLERANCE = 1e-9

SupportAtom = collections.namedtuple('SupportAtom', ['point', 'log_weight'])


class NonSymmetricCoupling(ConfigError):
    """A diffused Ising coupling matrix is not symmetric with zero diagonal"""
    def __init__(self, detail):
        super(NonSymmetricCoupling, self).__init__('coupling matrix must be symmetric with zero diagonal: %s' % detail)


class BadWeights(ConfigError):
    """Discrete weights are not a probability vector"""
    def __init__(self, detail):
        super(BadWeights, self).__init__('bad discrete weights: %s' % detail)


class DimensionTooLarge(ConfigError):
    """A diffused Ising target is too large to enumerate"""
    def __init__(self, dim):
        super(DimensionTooLarge, self).__init__(
            'diffused Ising dimension %d exceeds the enumeration bound %d' % (dim, MAX_ISING_DIM))


class BadTarget(ConfigError):
    """A target description is malformed"""
    def __init__(self, detail):
        super(BadTarget, self).__init__('bad target description: %s' % detail)


class ContinuousSupport(DifflabError):
    """An enumeration was requested on a continuous target"""
    def __init__(self, kind):
        super(ContinuousSupport, self).__init__('target %s has a continuous support' % kind)


class OffSupport(DifflabError):
    """A microstate does not lie in the support of the target"""
    def __init__(self, point, kind):
        super(OffSupport, self).__init__('point %r is not in the support of %s' % (list(np.ravel(point)), kind))


class Target(object):
    """Base class of the target distributions; instances are immutable"""
    kind = None
    enumerable = True

    def __init__(self, dim):
        self.dim = int(dim)

    def __repr__(self):
        return '%s(dim=%d)' % (type(self).__name__, self.dim)

    def iter_atoms(self):
        """Yields (points, log_weights) chunks covering the whole support"""
        raise NotImplementedError()

    @property
    def atom_count(self):
        return sum(len(lw) for _, lw in self.iter_atoms())

    @property
    def constant_norm(self):
        """True when every support point has the same euclidean norm"""
        return True

    def support_log_weight(self, y):
        """Normalized log-weight of the atom y, OffSupport when y is not an atom"""
        y = np.asarray(y, dtype=float).reshape(self.dim)
        total = -np.inf
        for points, log_weights in self.iter_atoms():
            hit = np.all(np.abs(points - y) <= SUPPORT_TOLERANCE, axis=1)
            if hit.any():
                total = np.logaddexp(total, logsumexp(log_weights[hit]))
        if not np.isfinite(total):
            raise OffSupport(y, self.kind)
        return float(total)

    def moments(self):
        """Exact (mean, covariance) of phi"""
        mean = np.zeros(self.dim)
        for points, log_weights in self.iter_atoms():
            mean += np.exp(log_weights) @ points
        cov = np.zeros((self.dim, self.dim))
        for points, log_weights in self.iter_atoms():
            centered = points - mean
            cov += (centered * np.exp(log_weights)[:, None]).T @ centered
        return mean, 0.5 * (cov + cov.T)

    def sample(self, n, rng):
        raise NotImplementedError()

    def atoms_array(self):
        """The whole support as one (points, log_weights) pair"""
        chunks = list(self.iter_atoms())
        return (np.concatenate([p for p, _ in chunks]), np.concatenate([w for _, w in chunks]))


class TwoDeltas(Target):
    """phi(y) = (delta(y + 1) + delta(y - 1)) / 2 in one dimension"""
    kind = TWO_DELTAS

    _POINTS = np.array([[-1.0], [1.0]])
    _LOG_WEIGHTS = np.full(2, -np.log(2.0))

    def __init__(self):
        super(TwoDeltas, self).__init__(1)

    def iter_atoms(self):
        yield self._POINTS, self._LOG_WEIGHTS

    def moments(self):
        return np.zeros(1), np.ones((1, 1))

    def sample(self, n, rng):
        return (2.0 * rng.integers(0, 2, size=(n, 1)) - 1.0)


class Discrete(Target):
    """A weighted set of points y_1..y_N"""
    kind = DISCRETE

    def __init__(self, points, weights=None):
        points = np.array(points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        if points.ndim != 2 or len(points) == 0:
            raise BadTarget('discrete points must be a non-empty (N, d) array')
        if not np.all(np.isfinite(points)):
            raise BadTarget('discrete points must be finite')
        super(Discrete, self).__init__(points.shape[1])

        if weights is None:
            weights = np.full(len(points), 1.0 / len(points))
        weights = np.array(weights, dtype=float).ravel()
        if len(weights) != len(points):
            raise BadWeights('%d weights for %d points' % (len(weights), len(points)))
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
            raise BadWeights('weights must be positive and finite')
        total = weights.sum()
        if abs(total - 1.0) >= WEIGHT_TOLERANCE:
            raise BadWeights('weights sum to %.12g' % total)

        points.setflags(write=False)
        self.points = points
        self.weights = weights / total
        self.weights.setflags(write=False)
        self._log_weights = np.log(self.weights)
        self._log_weights.setflags(write=False)

    def __repr__(self):
        return 'Discrete(N=%d, dim=%d)' % (len(self.points), self.dim)

    def iter_atoms(self):
        yield self.points, self._log_weights

    @property
    def atom_count(self):
        return len(self.points)

    @property
    def constant_norm(self):
        norms = np.linalg.norm(self.points, axis=1)
        return bool(np.all(np.abs(norms - norms[0]) <= SUPPORT_TOLERANCE * max(1.0, norms[0])))

    def sample(self, n, rng):
        return self.points[rng.choice(len(self.points), size=n, p=self.weights)]


class Hypersphere(Target):
    """Uniform distribution on the sphere of radius r in d dimensions"""
    kind = HYPERSPHERE
    enumerable = False

    def __init__(self, dim, radius=1.0):
        if int(dim) < 1:
            raise BadTarget('hypersphere dimension must be at least 1')
        if not radius > 0 or not np.isfinite(radius):
            raise BadTarget('hypersphere radius must be positive')
        super(Hypersphere, self).__init__(dim)
        self.radius = float(radius)

    def __repr__(self):
        return 'Hypersphere(dim=%d, radius=%g)' % (self.dim, self.radius)

    def iter_atoms(self):
        raise ContinuousSupport(self.kind)

    def support_log_weight(self, y):
        y = np.asarray(y, dtype=float).reshape(self.dim)
        if abs(np.linalg.norm(y) - self.radius) > SUPPORT_TOLERANCE * self.radius:
            raise OffSupport(y, self.kind)
        # uniform density, the constant never reaches a gradient
        return 0.0

    def moments(self):
        return np.zeros(self.dim), np.eye(self.dim) * self.radius ** 2 / self.dim

    def sample(self, n, rng):
        g = rng.standard_normal((n, self.dim))
        return g * (self.radius / np.linalg.norm(g, axis=1))[:, None]


class DiffusedIsing(Target):
    """Ising model log phi(y) = -(1/2T) sum_{j != k} y_j y_k W_jk on {-1, +1}^d"""
    kind = DIFFUSED_ISING

    def __init__(self, couplings, temperature=1.0):
        couplings = np.array(couplings, dtype=float)
        if couplings.ndim != 2 or couplings.shape[0] != couplings.shape[1]:
            raise NonSymmetricCoupling('shape %r is not square' % (couplings.shape,))
        dim = couplings.shape[0]
        if dim > MAX_ISING_DIM:
            raise DimensionTooLarge(dim)
        if dim < 1:
            raise BadTarget('diffused Ising dimension must be at least 1')
        if not np.allclose(couplings, couplings.T, rtol=0, atol=1e-12):
            raise NonSymmetricCoupling('W differs from its transpose')
        if np.any(np.diag(couplings) != 0):
            raise NonSymmetricCoupling('diagonal is not zero')
        if not temperature > 0:
            raise BadTarget('Ising temperature must be positive')
        super(DiffusedIsing, self).__init__(dim)
        couplings.setflags(write=False)
        self.couplings = couplings
        self.temperature = float(temperature)

    def __repr__(self):
        return 'DiffusedIsing(dim=%d, T=%g)' % (self.dim, self.temperature)

    @property
    def atom_count(self):
        return 1 << self.dim

    def _spins(self, lo, hi):
        index = np.arange(lo, hi, dtype=np.int64)
        bits = (index[:, None] >> np.arange(self.dim, dtype=np.int64)) & 1
        return 2.0 * bits - 1.0

    def _raw_log_weights(self, spins):
        return -0.5 / self.temperature * np.einsum('ij,ij->i', spins @ self.couplings, spins)

    @functools.cached_property
    def _log_norm(self):
        parts = [logsumexp(self._raw_log_weights(self._spins(lo, hi)))
                 for lo, hi in self._chunks()]
        return float(logsumexp(parts))

    def _chunks(self):
        total = self.atom_count
        return [(lo, min(lo + ISING_CHUNK, total)) for lo in range(0, total, ISING_CHUNK)]

    def iter_atoms(self):
        for lo, hi in self._chunks():
            spins = self._spins(lo, hi)
            yield spins, self._raw_log_weights(spins) - self._log_norm

    def support_log_weight(self, y):
        y = np.asarray(y, dtype=float).reshape(self.dim)
        if not np.all(np.abs(np.abs(y) - 1.0) <= SUPPORT_TOLERANCE):
            raise OffSupport(y, self.kind)
        spins = np.sign(y)[None, :]
        return float(self._raw_log_weights(spins)[0] - self._log_norm)

    def sample(self, n, rng):
        log_weights = np.concatenate([lw for _, lw in self.iter_atoms()])
        p = np.exp(log_weights)
        index = rng.choice(len(p), size=n, p=p / p.sum())
        bits = (index[:, None] >> np.arange(self.dim, dtype=np.int64)) & 1
        return 2.0 * bits - 1.0


def four_deltas():
    """The 2-D four-atom target at (1,0), (0,1), (-1,0), (0,-1)"""
    return Discrete([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])


def _is_numeric_row(line):
    try:
        [float(cell) for cell in line.split(',')]
    except ValueError:
        return False
    return True


def load_points_csv(path, normalize=False):
    """Reads a Discrete target from CSV, one point per row

    An optional header row names the columns; a final column named `weight`
    holds the weights. Without a header every column is a coordinate."""
    with open(path, encoding='utf-8') as fd:
        first = next((line.strip() for line in fd if line.strip()), '')
    if not first:
        raise BadTarget('%s has no columns' % path)
    if _is_numeric_row(first):
        points = np.loadtxt(path, delimiter=',', dtype=float, ndmin=2)
        log.info('loaded %d points of dimension %d from headerless %s', len(points), points.shape[1], path)
        return Discrete(points)

    table = np.genfromtxt(path, delimiter=',', names=True, dtype=float)
    names = list(table.dtype.names or ())
    if not names:
        raise BadTarget('%s has no columns' % path)
    table = np.atleast_1d(table)
    weights = None
    if names[-1].lower() == 'weight':
        weights = np.asarray(table[names[-1]], dtype=float)
        names = names[:-1]
        if normalize:
            weights = weights / weights.sum()
    points = np.column_stack([np.asarray(table[n], dtype=float) for n in names])
    log.info('loaded %d points of dimension %d from %s', len(points), points.shape[1], path)
    return Discrete(points, weights)


def construct_target(description):
    """Builds a validated Target from a description mapping

    Recognized keys: kind, points, weights, csv, dim, radius, couplings,
    coupling, temperature."""
    kind = description.get('kind')
    if kind == TWO_DELTAS:
        return TwoDeltas()
    if kind == 'four-deltas':
        return four_deltas()
    if kind == DISCRETE:
        if description.get('csv'):
            return load_points_csv(description['csv'], normalize=bool(description.get('normalize', False)))
        if description.get('points') is None:
            raise BadTarget('discrete target needs points or csv')
        return Discrete(description['points'], description.get('weights'))
    if kind == HYPERSPHERE:
        return Hypersphere(description.get('dim', 2), description.get('radius', 1.0))
    if kind == DIFFUSED_ISING:
        couplings = description.get('couplings')
        if couplings is None:
            dim = int(description.get('dim', 2))
            if dim > MAX_ISING_DIM:
                raise DimensionTooLarge(dim)
            couplings = float(description.get('coupling', 1.0)) * (np.ones((dim, dim)) - np.eye(dim))
        return DiffusedIsing(couplings, description.get('temperature', 1.0))
    raise BadTarget('unknown target kind %r' % (kind,))


def enumerate_support(target):
    """All support atoms of an enumerable target, log-weights summing to one"""
    if not target.enumerable:
        raise ContinuousSupport(target.kind)
    atoms = []
    for points, log_weights in target.iter_atoms():
        atoms.extend(SupportAtom(p.copy(), float(w)) for p, w in zip(points, log_weights))
    return atoms


def sample_target(target, n, rng):
    """n i.i.d. draws from phi as an (n, d) array"""
    if n < 1:
        raise ValueError('sample count must be at least 1')
    return np.asarray(target.sample(int(n), rng), dtype=float)


def target_moments(target):
    """Exact (mean, covariance) of the target"""
    return target.moments()
