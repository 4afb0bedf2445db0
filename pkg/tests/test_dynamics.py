import numpy as np
import pytest

from difflab.physics import targets
from difflab.sim import dynamics
from difflab.sim.streams import stream

M_STAR = 0.957504


def test_schedule_validation():
    with pytest.raises(dynamics.BadSchedule):
        dynamics.make_schedule(1.0, 2.0, 10)
    with pytest.raises(dynamics.BadSchedule):
        dynamics.make_schedule(1.0, 1e-5, 10)
    with pytest.raises(dynamics.BadSchedule):
        dynamics.make_schedule(1.0, 0.1, 1)
    with pytest.raises(dynamics.BadSchedule):
        dynamics.make_schedule(1.0, 0.1, 10, spacing='cubic')


def test_schedule_times():
    times = dynamics.make_schedule(5.0, 1e-3, 100).times()
    assert len(times) == 101
    assert np.isclose(times[0], 5.0) and np.isclose(times[-1], 1e-3)
    assert np.all(np.diff(times) < 0)
    times = dynamics.make_schedule(2.0, 1.0, 4, spacing=dynamics.LINEAR).times()
    assert np.allclose(times, [2.0, 1.75, 1.5, 1.25, 1.0])


def test_forward_sample_variance():
    x = dynamics.forward_sample(np.zeros((100000, 1)), 1.5, 2.0, stream(0, 0))
    assert abs(np.var(x) - 6.0) < 0.15
    with pytest.raises(ValueError):
        dynamics.forward_sample(np.zeros(1), 0.0, 1.0, stream(0, 0))


def test_score_and_free_energy_drifts_are_identical():
    schedule = dynamics.make_schedule(5.0, 1e-2, 100)
    x0 = np.array([[0.3, -0.2], [1.5, 0.4], [-0.7, -0.9]])
    target = targets.four_deltas()
    a = dynamics.reverse_integrate(x0, schedule, target, 1.0, stream(1, 0))
    b = dynamics.free_energy_descent(x0, schedule, target, 1.0, stream(1, 0))
    assert np.max(np.abs(a.states - b.states)) < 1e-10


def test_deterministic_flow_keeps_the_sign():
    schedule = dynamics.make_schedule(5.0, 1e-3, 2000)
    traj = dynamics.reverse_integrate([0.3], schedule, targets.TwoDeltas(), 1.0, stream(0, 0), noise=0.0)
    assert np.all(traj.states[:, 0] > 0)
    assert abs(traj.states[-1, 0] - 1.0) < 1e-2
    traj = dynamics.reverse_integrate([-0.3], schedule, targets.TwoDeltas(), 1.0, stream(0, 0), noise=0.0)
    assert abs(traj.states[-1, 0] + 1.0) < 1e-2


def test_frozen_time_descent_finds_the_magnetized_state():
    schedule = dynamics.make_schedule(20.0, 1e-3, 4000, spacing=dynamics.LINEAR)
    traj = dynamics.free_energy_descent([0.1], schedule, targets.TwoDeltas(), 1.0, stream(0, 0),
                                        noise=0.0, frozen_t=0.5, record=False)
    assert abs(traj.states[-1, 0] - M_STAR) < 1e-4
    assert len(traj.times) == 2


def test_frozen_time_descent_on_four_deltas():
    schedule = dynamics.make_schedule(5.0, 1e-3, 2000)
    traj = dynamics.free_energy_descent([0.9, 0.1], schedule, targets.four_deltas(), 1.0, stream(0, 0),
                                        noise=0.0, frozen_t=0.1)
    assert np.allclose(traj.states[-1], [1.0, 0.0], atol=1e-3)


def test_denoise_appends_the_posterior_mean():
    schedule = dynamics.make_schedule(1.0, 0.01, 20)
    traj = dynamics.reverse_integrate([0.2], schedule, targets.TwoDeltas(), 1.0, stream(2, 0), denoise=True)
    assert traj.times[-1] == 0.0
    assert len(traj.states) == 22
    assert abs(traj.states[-1, 0]) <= 1.0


def test_divergence_guard():
    schedule = dynamics.make_schedule(1.0, 0.5, 10)
    with pytest.raises(dynamics.NonFiniteState) as info:
        dynamics.reverse_integrate([2e6], schedule, targets.TwoDeltas(), 1.0, stream(0, 0), noise=0.0)
    assert len(info.value.trajectory.states) == 2


def test_per_row_generators():
    noise = dynamics.path_noise([stream(5, 0), stream(5, 1)], 3, (2, 4))
    assert noise.shape == (3, 2, 4)
    assert np.array_equal(noise[:, 1, :], stream(5, 1).standard_normal((3, 4)))
    with pytest.raises(ValueError):
        dynamics.path_noise([stream(5, 0)], 3, (2, 4))


def test_late_start_moments():
    x = dynamics.late_start_init(2.0, targets.TwoDeltas(), 2.0, stream(0, 0), 100000)
    assert abs(np.mean(x)) < 0.05
    assert abs(np.var(x) - 9.0) < 0.2
    x = dynamics.late_start_init(1.0, targets.Hypersphere(4), 1.0, stream(0, 1), 100000)
    assert np.allclose(np.cov(x.T), 1.25 * np.eye(4), atol=0.05)


def test_sample_ensemble_is_independent_of_threads():
    schedule = dynamics.make_schedule(2.0, 0.05, 50)
    target = targets.four_deltas()
    one = dynamics.sample_ensemble(target, schedule, 1.0, 300, seed=9, block=64, threads=1)
    four = dynamics.sample_ensemble(target, schedule, 1.0, 300, seed=9, block=64, threads=4)
    assert one.shape == (300, 2)
    assert np.array_equal(one, four)


class _SharedPath(object):
    """Replays one fine Brownian path as standard normal increments on a coarser grid"""
    def __init__(self, fine_times, xi):
        self.fine_times = fine_times
        self.fine_dw = np.sqrt(-np.diff(fine_times))[:, None, None] * xi

    def standard_normal(self, shape):
        steps = shape[0]
        stride = len(self.fine_dw) // steps
        dw = self.fine_dw.reshape((steps, stride) + self.fine_dw.shape[1:]).sum(axis=1)
        dt = -np.diff(self.fine_times[::stride])
        return dw / np.sqrt(dt)[:, None, None]


@pytest.mark.slow
def test_step_refinement_converges_on_two_deltas():
    # every grid is driven by the same Brownian path, so the terminal gap to
    # the finest run measures the discretization error alone
    target = targets.TwoDeltas()
    rng = stream(4, 0)
    x0 = dynamics.forward_sample(targets.sample_target(target, 400, rng), 5.0, 1.0, rng)
    fine = dynamics.make_schedule(5.0, 0.5, 16000)
    path = _SharedPath(fine.times(), rng.standard_normal((16000, 400, 1)))

    def terminal(steps):
        schedule = dynamics.make_schedule(5.0, 0.5, steps)
        return dynamics.reverse_integrate(x0, schedule, target, 1.0, path, record=False).states[-1]

    reference = terminal(16000)
    errors = [np.mean(np.abs(terminal(steps) - reference)) for steps in (250, 500, 1000, 2000, 4000)]
    assert np.all(np.diff(errors) < 0)
    assert errors[-1] < errors[0] / 4


def test_atom_assignment():
    index, dist = dynamics.assign_atoms(np.array([[0.9, 0.1], [0.0, -1.2]]), targets.four_deltas())
    assert list(index) == [0, 3]
    assert np.allclose(dist, [np.hypot(0.1, 0.1), 0.2])
    freq = dynamics.atom_frequencies(np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]),
                                     targets.four_deltas())
    assert np.allclose(freq, [0.5, 0.25, 0.25, 0.0])


def test_marginal_cdf_reaches_one():
    grid = np.linspace(-8.0, 8.0, 2001)
    cdf = dynamics.marginal_cdf(targets.TwoDeltas(), 1.0, 1.0, grid)
    assert abs(cdf[-1] - 1.0) < 1e-6
    assert abs(cdf[1000] - 0.5) < 1e-6


def test_write_trajectory_csv(tmp_path):
    traj = dynamics.Trajectory(np.array([1.0, 0.5]), np.array([[0.1, 0.2], [0.3, 0.4]]), 0)
    path = str(tmp_path / 'trajectory.csv')
    dynamics.write_trajectory_csv(traj, path)
    lines = open(path).read().splitlines()
    assert lines[0] == 't,x_0,x_1'
    assert len(lines) == 3


@pytest.mark.slow
def test_two_deltas_are_recovered():
    schedule = dynamics.make_schedule(5.0, 1e-3, 2000)
    target = targets.TwoDeltas()
    x = dynamics.sample_ensemble(target, schedule, 1.0, 10000, seed=0)
    _, dist = dynamics.assign_atoms(x, target)
    assert np.all(dist < 0.05)
    assert abs(np.mean(x[:, 0] > 0) - 0.5) < 0.015


@pytest.mark.slow
def test_four_deltas_are_recovered_evenly():
    schedule = dynamics.make_schedule(5.0, 1e-3, 2000)
    freq = dynamics.atom_frequencies(dynamics.sample_ensemble(targets.four_deltas(), schedule, 1.0, 10000,
                                                              seed=1), targets.four_deltas())
    assert np.all(np.abs(freq - 0.25) < 0.02)


@pytest.mark.slow
def test_late_start_matches_the_full_run():
    target = targets.four_deltas()
    full = dynamics.atom_frequencies(
        dynamics.sample_ensemble(target, dynamics.make_schedule(5.0, 1e-3, 2000), 1.0, 10000, seed=2), target)
    late = dynamics.atom_frequencies(
        dynamics.sample_ensemble(target, dynamics.make_schedule(1.5, 1e-3, 2000), 1.0, 10000, seed=3,
                                 late_start=True), target)
    assert np.all(np.abs(full - late) < 0.02)


@pytest.mark.slow
def test_reverse_marginal_matches_the_exact_marginal():
    schedule = dynamics.make_schedule(5.0, 0.5, 2000)
    x = dynamics.sample_ensemble(targets.TwoDeltas(), schedule, 1.0, 10000, seed=5, denoise=False)
    grid = np.linspace(-7.0, 7.0, 4001)
    assert dynamics.ks_distance(x, targets.TwoDeltas(), 0.5, 1.0, grid) < 0.02
