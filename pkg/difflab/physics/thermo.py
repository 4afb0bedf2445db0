"""Equilibrium quantities of the diffusion Boltzmann ensemble

Given a noisy state x at time t, the clean microstate y follows the Boltzmann
distribution with Hamiltonian

    H(y; x, t) = beta(t) * (|y|^2 / 2 - x.y) - log phi(y),  beta(t) = 1 / (t sigma^2)

and everything here is a moment of that distribution: log Z, the free energy
F = -log Z / beta, the posterior mean <y> = -grad F, its covariance C, and the
score beta * (<y> - x). All sums run in the log domain.
"""

import collections
import logging

import numpy as np
from scipy.special import logsumexp

from difflab.errors import DifflabError
from difflab.physics.sphere import sphere_ensemble

log = logging.getLogger(__name__)

# beta(t) diverges at t = 0
T_FLOOR = 1e-9
PSD_TOLERANCE = 1e-10

Ensemble = collections.namedtuple('Ensemble', ['log_z', 'mean', 'covariance'])

ThermoReport = collections.namedtuple('ThermoReport', [
    'log_z',
    'free_energy',
    'regularized_free_energy',
    'posterior_mean',
    'score',
    'covariance',
    'susceptibility',
    'score_jacobian',
])


class InvalidState(DifflabError):
    """A thermodynamic state is outside the domain of the model"""
    def __init__(self, detail):
        super(InvalidState, self).__init__('invalid thermodynamic state: %s' % detail)


class ThermoState(collections.namedtuple('ThermoState', ['x', 't', 'sigma'])):
    """A noisy state x at diffusion time t with noise scale sigma"""
    __slots__ = ()

    @property
    def beta(self):
        return inverse_temperature(self.t, self.sigma)

    @property
    def temperature(self):
        """The pseudo-temperature t sigma^2"""
        return self.t * self.sigma ** 2


def inverse_temperature(t, sigma):
    return 1.0 / (t * sigma ** 2)


def make_state(x, t, sigma):
    """Builds a validated ThermoState"""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1 or not np.all(np.isfinite(x)):
        raise InvalidState('x must be a finite vector')
    if not t > T_FLOOR:
        raise InvalidState('t=%g is below the floor %g' % (t, T_FLOOR))
    if not sigma > 0:
        raise InvalidState('sigma=%g must be positive' % sigma)
    return ThermoState(x, float(t), float(sigma))


def _checked(state, target):
    if not state.t > T_FLOOR:
        raise InvalidState('t=%g is below the floor %g' % (state.t, T_FLOOR))
    x = np.atleast_1d(np.asarray(state.x, dtype=float))
    if x.shape != (target.dim,):
        raise InvalidState('x has shape %r, target dimension is %d' % (x.shape, target.dim))
    return x


def _logits(xs, beta, points, log_weights):
    """-H for every (row of xs, atom) pair"""
    half_sq = 0.5 * np.einsum('ij,ij->i', points, points)
    return beta * (xs @ points.T - half_sq[None, :]) + log_weights[None, :]


def ensemble(xs, beta, target, second=True):
    """Batched Boltzmann statistics for the rows of xs

    Returns an Ensemble of log Z (n,), mean (n, d) and, when `second` is set,
    the covariance (n, d, d)."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if not target.enumerable:
        return Ensemble(*sphere_ensemble(xs, beta, target.dim, target.radius, second=second))

    parts = [logsumexp(_logits(xs, beta, p, lw), axis=1) for p, lw in target.iter_atoms()]
    log_z = parts[0] if len(parts) == 1 else logsumexp(np.stack(parts), axis=0)

    mean = np.zeros_like(xs)
    for points, log_weights in target.iter_atoms():
        w = np.exp(_logits(xs, beta, points, log_weights) - log_z[:, None])
        mean += w @ points
    if not second:
        return Ensemble(log_z, mean, None)

    cov = np.zeros((len(xs), target.dim, target.dim))
    for points, log_weights in target.iter_atoms():
        w = np.exp(_logits(xs, beta, points, log_weights) - log_z[:, None])
        centered = points[None, :, :] - mean[:, None, :]
        cov += np.einsum('nc,nci,ncj->nij', w, centered, centered)
    return Ensemble(log_z, mean, 0.5 * (cov + np.swapaxes(cov, 1, 2)))


def _single(state, target, second=True):
    x = _checked(state, target)
    ens = ensemble(x[None, :], state.beta, target, second=second)
    cov = None if ens.covariance is None else ens.covariance[0]
    return x, Ensemble(float(ens.log_z[0]), ens.mean[0], cov)


def hamiltonian(y, state, target):
    """H(y; x, t), OffSupport when y is not a microstate of the target"""
    x = _checked(state, target)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    log_phi = target.support_log_weight(y)
    return float(state.beta * (0.5 * y @ y - x @ y) - log_phi)


def log_partition(state, target):
    return _single(state, target, second=False)[1].log_z


def free_energy(state, target, regularized=False):
    """F = -log Z / beta, plus |x|^2 / 2 when regularized"""
    x, ens = _single(state, target, second=False)
    value = -ens.log_z / state.beta
    if regularized:
        value += 0.5 * x @ x
    return float(value)


def free_energy_gradient(state, target, regularized=False):
    """grad F = -<y>; the regularized version adds x"""
    x, ens = _single(state, target, second=False)
    return x - ens.mean if regularized else -ens.mean


def posterior_mean(state, target):
    return _single(state, target, second=False)[1].mean


def score(state, target):
    """grad log p_t(x) = beta * (<y> - x)"""
    x, ens = _single(state, target, second=False)
    return state.beta * (ens.mean - x)


def log_marginal(state, target):
    """log p_t(x) including the (2 pi t sigma^2)^{-d/2} normalization"""
    x, ens = _single(state, target, second=False)
    beta = state.beta
    return float(-0.5 * target.dim * np.log(2.0 * np.pi / beta) - 0.5 * beta * x @ x + ens.log_z)


def covariance(state, target):
    return _single(state, target)[1].covariance


def susceptibility(state, target):
    """Bare response d<y>_i / dx_j = beta * C_ij"""
    return state.beta * covariance(state, target)


def score_jacobian(state, target):
    """d score_i / dx_j = beta^2 C_ij - beta delta_ij"""
    beta = state.beta
    return beta * (beta * covariance(state, target) - np.eye(target.dim))


def thermo_report(state, target):
    """Every equilibrium quantity at one state, from a single ensemble pass"""
    x, ens = _single(state, target)
    beta = state.beta
    free = -ens.log_z / beta
    chi = beta * ens.covariance
    return ThermoReport(
        log_z=ens.log_z,
        free_energy=free,
        regularized_free_energy=free + 0.5 * x @ x,
        posterior_mean=ens.mean,
        score=beta * (ens.mean - x),
        covariance=ens.covariance,
        susceptibility=chi,
        score_jacobian=beta * (chi - np.eye(target.dim)),
    )


def batch_posterior_mean(xs, t, sigma, target):
    """<y> for every row of xs at a common time"""
    return ensemble(xs, inverse_temperature(t, sigma), target, second=False).mean


def batch_score(xs, t, sigma, target):
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    beta = inverse_temperature(t, sigma)
    return beta * (ensemble(xs, beta, target, second=False).mean - xs)


def min_eigenvalue(matrix):
    return float(np.linalg.eigvalsh(matrix)[0])


def clip_psd(matrix):
    """Symmetric PSD projection, clipping round-off negativity at zero"""
    matrix = 0.5 * (matrix + matrix.T)
    values, vectors = np.linalg.eigh(matrix)
    if values[0] < -PSD_TOLERANCE:
        log.warning('covariance eigenvalue %g below tolerance before clipping', values[0])
    return (vectors * np.clip(values, 0.0, None)) @ vectors.T


def psd_sqrt(matrix):
    """Symmetric square root of the clipped PSD part of matrix"""
    matrix = 0.5 * (matrix + matrix.T)
    values, vectors = np.linalg.eigh(matrix)
    return (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T


def free_energy_landscape(target, times, sigma, axis_0, axis_1):
    """Regularized free energy on a 2-D grid at each time

    Returns (values, minima): values has shape (len(times), len(axis_1),
    len(axis_0)); minima[k] lists the grid points strictly below all eight
    neighbours at times[k]."""
    if target.dim != 2:
        raise InvalidState('the free-energy landscape needs a 2-D target, got %d-D' % target.dim)
    axis_0 = np.asarray(axis_0, dtype=float)
    axis_1 = np.asarray(axis_1, dtype=float)
    g0, g1 = np.meshgrid(axis_0, axis_1)
    xs = np.column_stack([g0.ravel(), g1.ravel()])
    half_sq = 0.5 * np.einsum('ij,ij->i', xs, xs)

    values = []
    minima = []
    for t in times:
        beta = inverse_temperature(t, sigma)
        grid = (-ensemble(xs, beta, target, second=False).log_z / beta + half_sq).reshape(g0.shape)
        values.append(grid)
        core = grid[1:-1, 1:-1]
        lower = np.ones_like(core, dtype=bool)
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if di or dj:
                    lower &= core < grid[1 + di:grid.shape[0] - 1 + di, 1 + dj:grid.shape[1] - 1 + dj]
        rows, cols = np.nonzero(lower)
        minima.append([(axis_0[c + 1], axis_1[r + 1]) for r, c in zip(rows, cols)])
        log.debug('t=%g: %d local minima of the regularized free energy', t, len(rows))
    return np.array(values), minima
