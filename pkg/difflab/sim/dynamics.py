"""Forward corruption, exact-score reverse integration and free-energy descent

The forward process is Brownian, dx = sigma dw, so its marginal at time t is
phi convolved with N(0, t sigma^2 I) and is sampled in one shot. The reverse
process is integrated with Euler-Maruyama on a descending time grid:

    x(t - dt) = x(t) + sigma^2 * drift(x, t) * dt + sigma * sqrt(dt) * w

where the drift is either the exact score or -beta * grad F~, which are the
same field.
"""

import collections
import logging

import numpy as np
from scipy.integrate import cumulative_trapezoid

from difflab.errors import ConfigError, NumericalFailure
from difflab.io.tables import emit_csv
from difflab.physics import thermo
from difflab.sim import streams

log = logging.getLogger(__name__)

LINEAR = 'linear'
LOG = 'log'
T_MIN_FLOOR = 1e-4
DIVERGENCE_BOUND = 1e6
BLOCK_SIZE = 1024

Trajectory = collections.namedtuple('Trajectory', ['times', 'states', 'seed'])


class BadSchedule(ConfigError):
    """A time schedule violates t_end > t_min >= 1e-4 or steps >= 2"""
    def __init__(self, detail):
        super(BadSchedule, self).__init__('bad schedule: %s' % detail)


class NonFiniteState(NumericalFailure):
    """The integrated state left the finite region; carries the partial trajectory"""
    def __init__(self, time, trajectory):
        super(NonFiniteState, self).__init__('state diverged at t=%g' % time)
        self.trajectory = trajectory


class Schedule(collections.namedtuple('Schedule', ['t_end', 't_min', 'steps', 'spacing'])):
    """Reverse-time grid from t_end down to t_min in `steps` steps"""
    __slots__ = ()

    def times(self):
        if self.spacing == LOG:
            return np.geomspace(self.t_end, self.t_min, self.steps + 1)
        return np.linspace(self.t_end, self.t_min, self.steps + 1)


def make_schedule(t_end, t_min, steps, spacing=LOG):
    if not t_end > t_min:
        raise BadSchedule('t_end=%g must exceed t_min=%g' % (t_end, t_min))
    if not t_min >= T_MIN_FLOOR:
        raise BadSchedule('t_min=%g is below %g' % (t_min, T_MIN_FLOOR))
    if int(steps) < 2:
        raise BadSchedule('need at least 2 steps, got %d' % steps)
    if spacing not in (LINEAR, LOG):
        raise BadSchedule('unknown spacing %r' % (spacing,))
    return Schedule(float(t_end), float(t_min), int(steps), spacing)


def forward_sample(y0, t, sigma, rng):
    """Exact draw from the forward propagator: y0 + sqrt(t sigma^2) * xi"""
    if not t > 0:
        raise ValueError('forward time must be positive')
    y0 = np.asarray(y0, dtype=float)
    return y0 + np.sqrt(t) * sigma * rng.standard_normal(y0.shape)


def path_noise(rng, steps, shape):
    """Standard normal increments of shape (steps,) + shape

    A list of generators means one generator per row of the state batch."""
    if isinstance(rng, (list, tuple)):
        if len(shape) != 2 or len(rng) != shape[0]:
            raise ValueError('need one generator per trajectory')
        return np.stack([g.standard_normal((steps, shape[1])) for g in rng], axis=1)
    return rng.standard_normal((steps,) + tuple(shape))


def _integrate(x_init, schedule, sigma, drift, rng, noise=1.0, record=True, frozen_t=None,
               denoise=None, seed=None):
    times = schedule.times()
    x = np.array(x_init, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if not np.all(np.isfinite(x)):
        raise ValueError('initial state must be finite')

    steps = len(times) - 1
    increments = path_noise(rng, steps, x.shape) if noise else None
    states = [x.copy()]
    for k in range(steps):
        t = times[k]
        dt = t - times[k + 1]
        x = x + sigma ** 2 * drift(x, t if frozen_t is None else frozen_t) * dt
        if noise:
            x += noise * sigma * np.sqrt(dt) * increments[k]
        if record:
            states.append(x.copy())
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_BOUND:
            if not record:
                states.append(x.copy())
            partial = times[:k + 2] if record else times[[0, k + 1]]
            log.warning('divergence guard tripped at t=%g', times[k + 1])
            raise NonFiniteState(times[k + 1], Trajectory(partial, _stack(states, single), seed))
    if not record:
        states.append(x.copy())
        times = times[[0, -1]]
    if denoise is not None:
        states.append(denoise(x, times[-1]))
        times = np.append(times, 0.0)
    return Trajectory(times, _stack(states, single), seed)


def _stack(states, single):
    states = np.array(states)
    return states[:, 0, :] if single else states


def _score_drift(target, sigma):
    return lambda x, t: thermo.batch_score(x, t, sigma, target)


def _free_energy_drift(target, sigma):
    def drift(x, t):
        beta = thermo.inverse_temperature(t, sigma)
        grad = x - thermo.batch_posterior_mean(x, t, sigma, target)
        return -beta * grad
    return drift


def _denoiser(target, sigma):
    return lambda x, t: thermo.batch_posterior_mean(x, t, sigma, target)


def reverse_integrate(x_init, schedule, target, sigma, rng, noise=1.0, record=True,
                      frozen_t=None, denoise=False, seed=None):
    """Euler-Maruyama on the reverse SDE with the exact score

    x_init is one state (d,) or a batch (n, d); rng is a Generator or one
    Generator per row. `noise` scales the Brownian term (0 gives the
    deterministic flow), `frozen_t` evaluates the drift at a fixed time and
    `denoise` appends the posterior mean at t_min as a final state at t=0."""
    return _integrate(x_init, schedule, sigma, _score_drift(target, sigma), rng, noise=noise,
                      record=record, frozen_t=frozen_t,
                      denoise=_denoiser(target, sigma) if denoise else None, seed=seed)


def free_energy_descent(x_init, schedule, target, sigma, rng, noise=1.0, record=True,
                        frozen_t=None, denoise=False, seed=None):
    """Same step rule as reverse_integrate with drift -beta * grad F~"""
    return _integrate(x_init, schedule, sigma, _free_energy_drift(target, sigma), rng, noise=noise,
                      record=record, frozen_t=frozen_t,
                      denoise=_denoiser(target, sigma) if denoise else None, seed=seed)


def late_start_init(t_start, target, sigma, rng, n):
    """n draws from the Gaussian moment-matched to p_{t_start}"""
    if not t_start > 0:
        raise ValueError('late start time must be positive')
    mean, cov = target.moments()
    cov = cov + t_start * sigma ** 2 * np.eye(target.dim)
    return rng.multivariate_normal(mean, cov, size=int(n), method='eigh')


def _initial_state(target, t_start, sigma, rng, late):
    if late:
        return late_start_init(t_start, target, sigma, rng, 1)[0]
    return forward_sample(target.sample(1, rng)[0], t_start, sigma, rng)


def sample_ensemble(target, schedule, sigma, n, seed, late_start=False, denoise=True,
                    noise=1.0, sampler='reverse', block=BLOCK_SIZE, threads=None):
    """Terminal states of n independent reverse runs, shape (n, d)

    Trajectory i draws its initial state and all of its increments from
    stream(seed, i). Initial states come from p_{t_end} (a target sample pushed
    through the forward propagator) or, with late_start, from the Gaussian
    moment-matched to p_{t_end}."""
    integrate = {'reverse': reverse_integrate, 'free-energy': free_energy_descent}[sampler]

    def run_block(bounds):
        lo, hi = bounds
        rngs = streams.streams(seed, lo, hi)
        x0 = np.array([_initial_state(target, schedule.t_end, sigma, g, late_start) for g in rngs])
        traj = integrate(x0, schedule, target, sigma, rngs, noise=noise, record=False,
                         denoise=denoise, seed=seed)
        return traj.states[-1]

    parts = streams.parallel_map(run_block, streams.blocks(n, block), threads=threads)
    log.info('integrated %d trajectories from t=%g to t=%g', n, schedule.t_end, schedule.t_min)
    return np.concatenate(parts)


def assign_atoms(states, target):
    """Index of the nearest support atom for each row of states"""
    points, _ = target.atoms_array()
    dist = np.linalg.norm(np.atleast_2d(states)[:, None, :] - points[None, :, :], axis=2)
    return np.argmin(dist, axis=1), np.min(dist, axis=1)


def atom_frequencies(states, target):
    index, _ = assign_atoms(states, target)
    return np.bincount(index, minlength=target.atom_count) / len(index)


def marginal_cdf(target, t, sigma, grid):
    """Exact CDF of a 1-D marginal p_t on a grid, by trapezoid quadrature"""
    if target.dim != 1:
        raise ValueError('marginal CDF needs a 1-D target')
    grid = np.asarray(grid, dtype=float)
    density = np.exp([thermo.log_marginal(thermo.make_state([g], t, sigma), target) for g in grid])
    return cumulative_trapezoid(density, grid, initial=0.0)


def ks_distance(samples, target, t, sigma, grid):
    """Kolmogorov-Smirnov distance between 1-D samples and the exact p_t"""
    cdf = marginal_cdf(target, t, sigma, grid)
    samples = np.sort(np.ravel(samples))
    exact = np.interp(samples, grid, cdf)
    n = len(samples)
    upper = np.arange(1, n + 1) / n - exact
    lower = exact - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


def write_trajectory_csv(trajectory, path):
    """Writes one trajectory as t,x_0,...,x_{d-1}"""
    states = np.asarray(trajectory.states)
    if states.ndim != 2:
        raise ValueError('trajectory CSV holds a single trajectory')
    header = ['t'] + ['x_%d' % i for i in range(states.shape[1])]
    rows = [[t] + list(s) for t, s in zip(trajectory.times, states)]
    emit_csv(header, rows, path)
