"""Polar-angle quadrature for the uniform hypersphere target

By axial symmetry every Boltzmann average over the sphere of radius r reduces
to one-dimensional integrals over the angle theta between y and the field x:

    E[f(cos theta) e^{kappa cos theta}],   kappa = beta * r * |x|,

with the angle distributed as sin^{d-2}(theta) on [0, pi]. The integrals are
evaluated with Gauss-Legendre rules in the log domain, doubling the node
count until log Z moves by less than RELATIVE_TOLERANCE.
"""

import functools
import logging

import numpy as np
from scipy.special import gammaln, logsumexp, roots_legendre

from difflab.errors import NumericalFailure

log = logging.getLogger(__name__)

MIN_NODES = 64
MAX_NODES = 1 << 14
RELATIVE_TOLERANCE = 1e-10


class QuadratureNotConverged(NumericalFailure):
    """The angular quadrature did not settle within MAX_NODES nodes"""
    def __init__(self, kappa, change):
        super(QuadratureNotConverged, self).__init__(
            'angular quadrature not converged at kappa=%g (last change %g)' % (kappa, change))


@functools.lru_cache(maxsize=None)
def _rule(nodes):
    """(cos theta, log sin theta, log weight) of the n-node rule on [0, pi]"""
    x, w = roots_legendre(nodes)
    theta = 0.5 * np.pi * (x + 1.0)
    rule = (np.cos(theta), np.log(np.sin(theta)), np.log(0.5 * np.pi * w))
    for arr in rule:
        arr.setflags(write=False)
    return rule


def _log_angular_norm(dim):
    """log of the integral of sin^{d-2} over [0, pi]"""
    return 0.5 * np.log(np.pi) + gammaln(0.5 * (dim - 1)) - gammaln(0.5 * dim)


def angular_moments(kappa, dim):
    """For each kappa returns (log E[e^{kappa c}], <c>, Var[c]) with c = cos theta

    The expectation is under the uniform law on the sphere; the two moments are
    under the tilted law e^{kappa c}."""
    kappa = np.atleast_1d(np.asarray(kappa, dtype=float))
    if dim == 1:
        # S^0 is the pair {-1, +1}
        log_z = np.logaddexp(kappa, -kappa) - np.log(2.0)
        mean = np.tanh(kappa)
        return log_z, mean, 1.0 - mean ** 2

    nodes = MIN_NODES
    previous = None
    while True:
        cos, log_sin, log_w = _rule(nodes)
        logits = kappa[:, None] * cos[None, :] + ((dim - 2) * log_sin + log_w)[None, :]
        log_z = logsumexp(logits, axis=1)
        if previous is not None:
            change = np.abs(log_z - previous)
            worst = int(np.argmax(change))
            if change[worst] <= RELATIVE_TOLERANCE * max(1.0, abs(log_z[worst])):
                break
            if nodes >= MAX_NODES:
                raise QuadratureNotConverged(kappa[worst], change[worst])
        previous = log_z
        nodes *= 2
    log.debug('angular quadrature settled at %d nodes for %d fields', nodes, len(kappa))

    p = np.exp(logits - log_z[:, None])
    mean = p @ cos
    var = np.einsum('ij,ij->i', p, (cos[None, :] - mean[:, None]) ** 2)
    return log_z - _log_angular_norm(dim), mean, var


def sphere_ensemble(xs, beta, dim, radius, second=True):
    """Boltzmann log Z, mean and covariance for rows of xs on the sphere

    The energy is beta * (r^2 / 2 - x.y); the uniform density is a constant and
    is left out."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    norms = np.linalg.norm(xs, axis=1)
    log_mgf, mean_cos, var_cos = angular_moments(beta * radius * norms, dim)
    log_z = -0.5 * beta * radius ** 2 + log_mgf

    axis = np.zeros_like(xs)
    nonzero = norms > 0
    axis[nonzero] = xs[nonzero] / norms[nonzero, None]
    mean = radius * mean_cos[:, None] * axis
    if not second:
        return log_z, mean, None

    if dim == 1:
        return log_z, mean, (radius ** 2 * var_cos)[:, None, None]
    second_cos = var_cos + mean_cos ** 2
    along = radius ** 2 * var_cos
    across = radius ** 2 * (1.0 - second_cos) / (dim - 1)
    outer = np.einsum('ni,nj->nij', axis, axis)
    cov = across[:, None, None] * (np.eye(dim)[None, :, :] - outer) + along[:, None, None] * outer
    return log_z, mean, cov
