"""Self-consistent order parameters and the critical point of generation

The order parameter m(h, t) solves m = <y>(m + h, t), the posterior mean
evaluated at the shifted state. Above the critical time the only solution is
the trivial one near the target mean; below it the trivial solution loses
stability (largest eigenvalue of beta C crosses 1) and symmetry-broken
branches appear. This module finds the fixed points, tracks them into branch
diagrams, locates the crossing and fits the mean-field exponents.
"""

import collections
import logging

import numpy as np
from scipy.optimize import brentq
from scipy.stats import linregress

from difflab.errors import NumericalFailure
from difflab.physics import thermo
from difflab.sim import streams

log = logging.getLogger(__name__)

STABLE = 'stable'
UNSTABLE = 'unstable'
MARGINAL = 'marginal'

DAMPING = 0.5
NEWTON_SWITCH = 1e-3
RESIDUAL_TOLERANCE = 1e-10
MAX_ITERATIONS = 10000
MARGINAL_BAND = 1e-6
DISTINCT_TOLERANCE = 1e-6
TIME_TOLERANCE = 1e-8
MIN_R_SQUARED = 0.99
SINGULAR_TOLERANCE = 1e-12
# beyond this many atoms the seeds fall back to the coordinate axes
MAX_SEED_ATOMS = 64
DIFFERENCE_STEP = 1e-6

FixedPoint = collections.namedtuple('FixedPoint', [
    'm', 't', 'h', 'stability', 'leading_eigenvalue', 'residual'])

BranchPoint = collections.namedtuple('BranchPoint', ['t', 'branch_id', 'point'])

ExponentFit = collections.namedtuple('ExponentFit', [
    'name', 'value', 'stderr', 'window', 'r_squared'])


class NoConvergence(NumericalFailure):
    """The self-consistency iteration did not reach its residual bound"""
    def __init__(self, t, best):
        super(NoConvergence, self).__init__(
            'self-consistency not converged at t=%g (best residual %g)' % (t, best[0]))
        self.best = best


class NoBracket(NumericalFailure):
    """No stability change of the trivial branch was found in the scanned range"""
    def __init__(self, lo, hi):
        super(NoBracket, self).__init__('no critical time in [%g, %g]' % (lo, hi))


class FitRejected(NumericalFailure):
    """A log-log exponent fit fell below the r-squared threshold"""
    def __init__(self, fit):
        super(FitRejected, self).__init__(
            'fit of %s rejected: r^2=%.6f <= %g' % (fit.name, fit.r_squared, MIN_R_SQUARED))
        self.fit = fit


class SingularResummation(NumericalFailure):
    """I - beta C is singular, the self-consistent susceptibility diverges"""
    def __init__(self, t):
        super(SingularResummation, self).__init__('susceptibility diverges at t=%g' % t)


class BranchDiagram(collections.namedtuple('BranchDiagram', ['times', 'points'])):
    """Fixed points per time, each tagged with the id of its branch"""
    __slots__ = ()

    def at(self, t):
        return [p for p in self.points if p.t == t]

    def branch_count(self, t):
        return len(self.at(t))

    def branches(self):
        grouped = collections.OrderedDict()
        for p in self.points:
            grouped.setdefault(p.branch_id, []).append(p.point)
        return grouped

    def rows(self):
        """CSV rows t,branch_id,stability,leading_eigenvalue,m_0..m_{d-1}"""
        return [[p.t, p.branch_id, p.point.stability, p.point.leading_eigenvalue] + list(p.point.m)
                for p in self.points]


def classify(leading_eigenvalue):
    if leading_eigenvalue > 1.0 + MARGINAL_BAND:
        return UNSTABLE
    if leading_eigenvalue < 1.0 - MARGINAL_BAND:
        return STABLE
    return MARGINAL


def _mean_field(m, h, beta, target):
    ens = thermo.ensemble((m + h)[None, :], beta, target)
    return ens.mean[0], ens.covariance[0]


def solve_self_consistency(t, h, m0, target, sigma):
    """Solves m = <y>(m + h, t) from the starting point m0

    Damped iteration with factor DAMPING until the residual drops below
    NEWTON_SWITCH, then Newton steps with the Jacobian beta C - I."""
    beta = thermo.inverse_temperature(t, sigma)
    h = np.zeros(target.dim) if h is None else np.atleast_1d(np.asarray(h, dtype=float))
    m = np.array(m0, dtype=float).reshape(target.dim)
    if not np.all(np.isfinite(m)):
        raise ValueError('starting point must be finite')

    eye = np.eye(target.dim)
    best = (np.inf, m.copy())
    for iteration in range(MAX_ITERATIONS):
        mean, cov = _mean_field(m, h, beta, target)
        r = mean - m
        res = float(np.linalg.norm(r))
        if res < best[0]:
            best = (res, m.copy())
        if res < RESIDUAL_TOLERANCE:
            lam = float(np.linalg.eigvalsh(beta * cov)[-1])
            log.debug('t=%g converged in %d iterations, lambda=%g', t, iteration, lam)
            return FixedPoint(m, float(t), h, classify(lam), lam, res)
        if res < NEWTON_SWITCH:
            try:
                m = m - np.linalg.solve(beta * cov - eye, r)
                continue
            except np.linalg.LinAlgError:
                log.debug('singular Newton system at t=%g, damping instead', t)
        m = m + DAMPING * r
    raise NoConvergence(t, best)


def default_seeds(target):
    """Starting points: the mean, small and full steps toward every atom

    Targets with more than MAX_SEED_ATOMS atoms, and the sphere, use steps
    along the coordinate axes scaled by the support radius."""
    mean, cov = target.moments()
    if target.enumerable and target.atom_count <= MAX_SEED_ATOMS:
        directions = target.atoms_array()[0] - mean
    else:
        scale = getattr(target, 'radius', None) or np.sqrt(np.trace(cov))
        eye = np.eye(target.dim) * scale
        directions = np.concatenate([eye, -eye])
    seeds = [mean]
    for d in directions:
        seeds.extend([mean + 0.1 * d, mean - 0.1 * d, mean + d])
    return seeds


def support_diameter(target):
    if not target.enumerable:
        return 2.0 * target.radius
    points = target.atoms_array()[0]
    if len(points) > 4096:
        lo, hi = points.min(axis=0), points.max(axis=0)
        return float(np.linalg.norm(hi - lo))
    return float(np.max(np.linalg.norm(points[:, None, :] - points[None, :, :], axis=2)))


def fixed_points(t, target, sigma, seeds, h=None):
    """Distinct fixed points reached from the seeds at time t"""
    found = []
    for seed in seeds:
        try:
            p = solve_self_consistency(t, h, seed, target, sigma)
        except NoConvergence as e:
            log.debug('seed %r did not converge at t=%g: %s', list(np.ravel(seed)), t, e)
            continue
        if all(np.linalg.norm(p.m - q.m) > DISTINCT_TOLERANCE for q in found):
            found.append(p)
    return found


def _track(times, per_time, jump_tolerance):
    points = []
    ends = {}
    next_id = 0
    for t, found in zip(times, per_time):
        pairs = sorted(((np.linalg.norm(p.m - ends[b].m), i, b)
                        for i, p in enumerate(found) for b in ends), key=lambda x: x[0])
        assigned = {}
        taken = set()
        for dist, i, b in pairs:
            if dist > jump_tolerance:
                break
            if i in assigned or b in taken:
                continue
            assigned[i] = b
            taken.add(b)
        new_ends = {}
        for i, p in enumerate(found):
            if i not in assigned:
                assigned[i] = next_id
                next_id += 1
            new_ends[assigned[i]] = p
            points.append(BranchPoint(t, assigned[i], p))
        ends = new_ends
    return points


def bifurcation_scan(t_grid, target, sigma, seeds=None, jump_tolerance=None, threads=None):
    """Fixed points over a descending time grid, tracked into branches"""
    times = [float(t) for t in t_grid]
    if any(b >= a for a, b in zip(times, times[1:])):
        raise ValueError('bifurcation grid must be strictly descending')
    seeds = default_seeds(target) if seeds is None else [np.asarray(s, dtype=float) for s in seeds]
    if len(seeds) < 3:
        raise ValueError('need at least 3 seeds, got %d' % len(seeds))
    if jump_tolerance is None:
        jump_tolerance = 0.05 * support_diameter(target)

    per_time = streams.parallel_map(lambda t: fixed_points(t, target, sigma, seeds), times, threads=threads)
    diagram = BranchDiagram(times, _track(times, per_time, jump_tolerance))
    log.info('scanned %d times, %d branches', len(times), len(diagram.branches()))
    return diagram


def predicted_critical_time(target, sigma):
    """t_c when the target mean stays a fixed point: lambda_max(Cov) / sigma^2

    Returns (t_c, leading eigenvector of the target covariance)."""
    _, cov = target.moments()
    values, vectors = np.linalg.eigh(cov)
    return float(values[-1] / sigma ** 2), vectors[:, -1]


def trivial_branch(t, target, sigma, m0=None):
    mean, _ = target.moments()
    return solve_self_consistency(t, None, mean if m0 is None else m0, target, sigma)


def critical_time(target, sigma, shrink=0.8, floor=1e-4):
    """Time where the trivial branch's leading eigenvalue of beta C reaches 1

    Scans down from ten times the predicted value until the trivial branch
    turns unstable, then refines the bracket to TIME_TOLERANCE."""
    predicted, _ = predicted_critical_time(target, sigma)
    if predicted <= 0:
        raise NoBracket(0.0, 0.0)
    hi = 10.0 * predicted
    if trivial_branch(hi, target, sigma).leading_eigenvalue >= 1.0:
        raise NoBracket(hi, hi)
    lo = hi
    while True:
        lo *= shrink
        if lo < floor * predicted:
            raise NoBracket(lo, 10.0 * predicted)
        if trivial_branch(lo, target, sigma).leading_eigenvalue > 1.0:
            break
        hi = lo

    def excess(t):
        return trivial_branch(t, target, sigma).leading_eigenvalue - 1.0

    t_c = brentq(excess, lo, hi, xtol=0.1 * TIME_TOLERANCE, rtol=4 * np.finfo(float).eps)
    log.info('critical time %.10g (predicted %.10g)', t_c, predicted)
    return float(t_c)


def _fit(name, xs, ys, window):
    fit = linregress(np.log(xs), np.log(ys))
    return ExponentFit(name, float(fit.slope), float(fit.stderr), window, float(fit.rvalue ** 2))


def _accept(fit):
    if not fit.r_squared > MIN_R_SQUARED:
        raise FitRejected(fit)
    if fit.r_squared < MIN_R_SQUARED + 0.005:
        log.warning('fit of %s barely accepted: r^2=%.6f', fit.name, fit.r_squared)
    log.info('%s = %.6f +- %.2g (r^2 %.6f)', fit.name, fit.value, fit.stderr, fit.r_squared)
    return fit


def self_consistent_susceptibility(t, target, sigma, m0=None, h=None):
    """(I - beta C)^{-1} beta C at the fixed point reached from m0"""
    point = solve_self_consistency(t, h, target.moments()[0] if m0 is None else m0, target, sigma)
    return _resummed(point, target, sigma)


def _resummed(point, target, sigma):
    beta = thermo.inverse_temperature(point.t, sigma)
    _, cov = _mean_field(point.m, point.h, beta, target)
    bare = beta * cov
    system = np.eye(target.dim) - bare
    if np.min(np.abs(np.linalg.eigvalsh(system))) < SINGULAR_TOLERANCE:
        raise SingularResummation(point.t)
    return np.linalg.solve(system, bare)


def susceptibility_by_differences(t, target, sigma, m0=None, step=DIFFERENCE_STEP):
    """Central differences of m(h, t) over each field component"""
    point = solve_self_consistency(t, None, target.moments()[0] if m0 is None else m0, target, sigma)
    chi = np.zeros((target.dim, target.dim))
    for j in range(target.dim):
        h = np.zeros(target.dim)
        h[j] = step
        up = solve_self_consistency(t, h, point.m, target, sigma).m
        down = solve_self_consistency(t, -h, point.m, target, sigma).m
        chi[:, j] = (up - down) / (2.0 * step)
    return chi


def fit_critical_exponents(target, sigma, t_c=None, points=24):
    """Fits the order-parameter, field and susceptibility exponents

    Returns ExponentFits named beta_order, delta and gamma. gamma is reported
    positive: chi ~ |tau|^(-gamma)."""
    if t_c is None:
        t_c = critical_time(target, sigma)
    trivial = trivial_branch(t_c, target, sigma)
    _, direction = predicted_critical_time(target, sigma)
    scale = 0.5 * support_diameter(target)
    fraction = np.geomspace(1e-3, 1e-1, points)

    below = t_c * (1.0 - fraction)
    magnitudes = []
    for t in below:
        m = solve_self_consistency(t, None, trivial.m + scale * direction, target, sigma).m
        magnitudes.append(abs((m - trivial.m) @ direction))
    beta_order = _fit('beta_order', t_c * fraction, np.array(magnitudes), (-0.1 * t_c, -0.001 * t_c))

    fields = np.geomspace(1e-6, 1e-2, points)
    responses = []
    for s in fields:
        m = solve_self_consistency(t_c, s * direction, trivial.m + 0.1 * scale * direction, target, sigma).m
        responses.append(abs((m - trivial.m) @ direction))
    responses = np.array(responses)
    delta = _fit('delta', responses, fields, (float(responses.min()), float(responses.max())))

    above = t_c * (1.0 + fraction)
    chis = []
    for t in above:
        chi = _resummed(trivial_branch(t, target, sigma, trivial.m), target, sigma)
        chis.append(np.linalg.eigvalsh(0.5 * (chi + chi.T))[-1])
    gamma = _fit('gamma', t_c * fraction, np.array(chis), (0.001 * t_c, 0.1 * t_c))
    gamma = gamma._replace(value=-gamma.value)

    return [_accept(beta_order), _accept(delta), _accept(gamma)]
