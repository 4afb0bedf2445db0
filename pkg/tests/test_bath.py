import itertools

import numpy as np
import pytest

from difflab.errors import ConfigError
from difflab.physics import bath, targets
from difflab.sim import dynamics
from difflab.sim.streams import stream

M_STAR = 0.957504


def test_aligned_pair_energy():
    config = bath.make_bath_config([[1.0], [1.0]], 1.0, 1.0)
    assert config.K == 2 and config.weight == -0.5
    assert np.isclose(bath.bath_energy(config, targets.TwoDeltas()), -0.5 + 2 * np.log(2.0))


def test_alignment_is_favoured():
    target = targets.TwoDeltas()
    energies = {}
    for spins in itertools.product([-1.0, 1.0], repeat=4):
        config = bath.make_bath_config(np.array(spins)[:, None], 0.5, 1.0)
        energies[spins] = bath.bath_energy(config, target)
    lowest = min(energies.values())
    assert np.isclose(energies[(1.0,) * 4], lowest)
    assert np.isclose(energies[(-1.0,) * 4], lowest)
    assert energies[(1.0, 1.0, 1.0, -1.0)] > lowest


def test_energy_is_permutation_invariant_and_linear_in_the_field():
    target = targets.four_deltas()
    states = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    a = bath.bath_energy(bath.make_bath_config(states, 0.7, 1.0, [0.2, 0.1]), target)
    b = bath.bath_energy(bath.make_bath_config(states[::-1], 0.7, 1.0, [0.2, 0.1]), target)
    assert np.isclose(a, b)
    spins = np.ones((3, 1))
    e0, e1, e2 = (bath.bath_energy(bath.make_bath_config(spins, 1.0, 1.0, [s]), targets.TwoDeltas())
                  for s in (0.0, 0.1, 0.2))
    assert np.isclose(e2 - e1, e1 - e0)


def test_non_constant_norm_is_refused():
    target = targets.Discrete([[1.0], [2.0]])
    with pytest.raises(bath.NonConstantNorm):
        bath.bath_energy(bath.make_bath_config([[1.0], [2.0]], 1.0, 1.0), target)
    with pytest.raises(bath.NonConstantNorm):
        bath.bath_mc_run(4, 1.0, 1.0, None, target, 10, 0, stream(0, 0))
    with pytest.raises(ConfigError):
        bath.make_bath_config([[1.0]], 1.0, 1.0)


def test_curie_weiss_magnetization():
    assert bath.curie_weiss_magnetization(2.0, 1.0) == 0.0
    assert abs(bath.curie_weiss_magnetization(0.5, 1.0) - M_STAR) < 1e-6
    assert abs(bath.curie_weiss_magnetization(0.125, 2.0) - M_STAR) < 1e-6
    plus = bath.curie_weiss_magnetization(0.5, 1.0, 0.01)
    minus = bath.curie_weiss_magnetization(0.5, 1.0, -0.01)
    assert np.isclose(plus, -minus)
    assert plus > M_STAR


def test_pure_state_variance_high_temperature():
    assert abs(bath.pure_state_variance(2.0, 1.0) - 2.0) < 1e-6
    for temperature in np.linspace(1.2, 5.0, 9):
        check = bath.pure_state_variance_check(temperature, 1.0)
        assert abs(check.finite_difference - 1.0 / (1.0 - 1.0 / temperature)) < 1e-6 * check.printed_form
    assert bath.pure_state_variance(1.0001, 1.0) > 1e3


def test_pure_state_variance_low_temperature():
    for temperature in (0.5, 0.8, 0.99):
        check = bath.pure_state_variance_check(temperature, 1.0)
        assert np.isclose(check.finite_difference, check.implicit_form, rtol=1e-4)
    check = bath.pure_state_variance_check(0.5, 1.0)
    assert not np.isclose(check.printed_form, check.finite_difference, rtol=1e-3)
    assert abs(bath.pure_state_variance(0.05, 1.0)) < 1e-6
    with pytest.raises(bath.CriticalDivergence):
        bath.pure_state_variance(1.0, 1.0)


def test_exact_gibbs_distribution():
    p = bath.exact_gibbs_distribution(3, 0.5, 1.0, None, targets.TwoDeltas())
    assert p.shape == (8,)
    assert np.isclose(p.sum(), 1.0)
    # codes 0 and 7 are the two aligned configurations
    assert np.isclose(p[0], p[7]) and p[0] == p.max()


def test_metropolis_samples_the_gibbs_distribution():
    K = 4
    target = targets.TwoDeltas()
    stats = bath.bath_mc_run(K, 1.0, 1.0, None, target, 200000, 1000, stream(3, 0), record_codes=True)
    counts = np.bincount(stats.codes, minlength=2 ** K) / len(stats.codes)
    exact = bath.exact_gibbs_distribution(K, 1.0, 1.0, None, target)
    assert 0.5 * np.abs(counts - exact).sum() < 0.02
    assert 0.0 < stats.acceptance <= 1.0
    assert stats.sweeps == 199000


def test_paramagnetic_bath():
    stats = bath.bath_mc_run(512, 2.0, 1.0, None, targets.TwoDeltas(), 2000, 500, stream(4, 0))
    assert abs(stats.mean[0]) < 0.05
    assert stats.autocorrelation_time >= 1.0


def test_ordered_bath_follows_mean_field():
    stats = bath.bath_mc_run(512, 0.5, 1.0, [0.01], targets.TwoDeltas(), 2000, 500, stream(5, 0))
    assert abs(stats.mean[0] - M_STAR) < 0.02
    assert abs(stats.mean[0] - bath.mean_field_value(0.5, 1.0, [0.01], targets.TwoDeltas())) < 0.02


def test_run_arguments():
    with pytest.raises(ConfigError):
        bath.bath_mc_run(4, 1.0, 1.0, None, targets.TwoDeltas(), 10, 10, stream(0, 0))
    with pytest.raises(ConfigError):
        bath.exact_gibbs_distribution(24, 1.0, 1.0, None, targets.TwoDeltas())
    with pytest.raises(ConfigError):
        bath.mean_field_convergence_study([8, 4], [1.0], targets.TwoDeltas(), 1.0, 8, seed=0)


def test_integrated_autocorrelation():
    assert bath.integrated_autocorrelation(np.ones(100)) == 1.0
    rng = stream(6, 0)
    white = rng.standard_normal(200000)
    assert bath.integrated_autocorrelation(white) < 1.3
    correlated = np.empty(200000)
    correlated[0] = 0.0
    for i in range(1, len(correlated)):
        correlated[i] = 0.9 * correlated[i - 1] + white[i]
    # (1 + 0.9) / (1 - 0.9) for an AR(1) chain
    assert 17.0 < bath.integrated_autocorrelation(correlated) < 21.0


def test_bath_noise_scales_with_site_count():
    schedule = dynamics.make_schedule(2.0, 1.9, 2)
    times = schedule.times()
    ratio = (times[0] - times[1]) / times[0]
    for H in (64.0, 128.0):
        traj = bath.bath_brownian_integrate(np.zeros((20000, 1)), schedule, H, targets.TwoDeltas(), 1.0,
                                            stream(7, int(H)))
        assert np.isclose(np.var(traj.states[1]), 2.0 * ratio / H, rtol=0.05)


def test_bath_drift_pulls_toward_the_pure_state():
    schedule = dynamics.make_schedule(0.5, 0.45, 2)
    traj = bath.bath_brownian_integrate([1.5], schedule, 1e12, targets.TwoDeltas(), 1.0, stream(8, 0))
    assert M_STAR < traj.states[1, 0] < 1.5
    with pytest.raises(ConfigError):
        bath.bath_brownian_integrate([1.5], schedule, 0.5, targets.TwoDeltas(), 1.0, stream(8, 0))


def test_large_bath_is_nearly_deterministic():
    schedule = dynamics.make_schedule(0.5, 1e-3, 200)
    x0 = np.full((200, 1), 0.5)
    traj = bath.bath_brownian_integrate(x0, schedule, 1e4, targets.TwoDeltas(), 1.0, stream(9, 0))
    assert np.std(traj.states[-1]) < 0.01
    assert np.mean(traj.states[-1]) > 0.9


@pytest.mark.slow
def test_bath_generation_splits_evenly():
    target = targets.TwoDeltas()
    schedule = dynamics.make_schedule(5.0, 1e-3, 500)
    rng = stream(10, 0)
    x0 = dynamics.forward_sample(target.sample(4000, rng), 5.0, 1.0, rng)
    traj = bath.bath_brownian_integrate(x0, schedule, 64, target, 1.0, rng)
    terminal = traj.states[-1, :, 0]
    assert np.all(np.abs(np.abs(terminal) - 1.0) < 0.05)
    assert abs(np.mean(terminal > 0) - 0.5) < 0.03


@pytest.mark.slow
def test_bath_converges_to_mean_field():
    rows = bath.mean_field_convergence_study([32, 128, 512], [0.5], targets.TwoDeltas(), 1.0, 8, seed=12, h=[0.01])
    assert [r.K for r in rows] == [32, 128, 512]
    for a, b in zip(rows, rows[1:]):
        assert b.abs_error <= a.abs_error + 2 * (a.stderr + b.stderr)
    assert rows[-1].abs_error < 0.03


@pytest.mark.slow
def test_large_metropolis_run_samples_the_gibbs_distribution():
    K = 8
    target = targets.TwoDeltas()
    stats = bath.bath_mc_run(K, 2.0, 1.0, None, target, 10 ** 6, 1000, stream(13, 0), record_codes=True)
    counts = np.bincount(stats.codes, minlength=2 ** K) / len(stats.codes)
    exact = bath.exact_gibbs_distribution(K, 2.0, 1.0, None, target)
    assert 0.5 * np.abs(counts - exact).sum() < 0.02


def test_reported_stderr_matches_the_spread_of_independent_runs():
    # the paramagnetic bath has zero mean magnetization by symmetry
    runs = [bath.bath_mc_run(32, 2.0, 1.0, None, targets.TwoDeltas(), 1000, 100, stream(21, i)) for i in range(200)]
    means = np.array([stats.mean[0] for stats in runs])
    reported = np.sqrt(np.mean([stats.stderr[0] ** 2 for stats in runs]))
    ratio = np.sqrt(np.mean(means ** 2)) / reported
    assert 0.87 < ratio < 1.15
