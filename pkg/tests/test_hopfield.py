import numpy as np
import pytest

from difflab.errors import ConfigError
from difflab.physics import hopfield
from difflab.sim.streams import stream


def _random_patterns(n, dim, seed):
    g = stream(seed, 0).standard_normal((n, dim))
    return g / np.linalg.norm(g, axis=1)[:, None]


def test_single_pattern_energy():
    patterns = hopfield.make_pattern_set([[0.6, 0.8]], 3.0)
    x = np.array([0.2, -1.0])
    assert np.isclose(hopfield.hopfield_energy(x, patterns), -x @ patterns.patterns[0] + 0.5 * x @ x, atol=1e-12)


def test_energy_at_the_origin():
    patterns = hopfield.make_pattern_set(_random_patterns(5, 8, 1), 2.0)
    assert np.isclose(hopfield.hopfield_energy(np.zeros(8), patterns), -np.log(5) / 2.0)


def test_low_temperature_energy_picks_the_nearest_pattern():
    patterns = hopfield.make_pattern_set(np.eye(4), 1e3)
    x = np.array([0.9, 0.1, 0.0, 0.0])
    assert np.isclose(hopfield.hopfield_energy(x, patterns), -0.9 + 0.5 * x @ x, atol=1e-6)


def test_gradient_matches_finite_differences():
    patterns = hopfield.make_pattern_set(_random_patterns(6, 5, 2), 4.0)
    x = stream(2, 1).standard_normal(5)
    step = 1e-6
    numeric = np.array([(hopfield.hopfield_energy(x + step * e, patterns)
                         - hopfield.hopfield_energy(x - step * e, patterns)) / (2 * step) for e in np.eye(5)])
    assert np.allclose(hopfield.hopfield_gradient(x, patterns), numeric, atol=1e-6)


def test_normalization():
    patterns = hopfield.make_pattern_set([[3.0, 4.0], [0.0, 2.0]], 1.0)
    assert patterns.unit_norm
    assert not hopfield.make_pattern_set([[3.0, 4.0]], 1.0, normalize=False).unit_norm
    with pytest.raises(ConfigError):
        hopfield.make_pattern_set([[0.0, 0.0]], 1.0)
    with pytest.raises(ConfigError):
        hopfield.make_pattern_set([[1.0, 0.0]], 0.0)


@pytest.mark.parametrize('points, t', [
    ([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]], 0.5),
    (_random_patterns(8, 16, 3), 0.2),
    ([[0.0, 1.0, 0.0]], 1.0),
])
def test_hopfield_descent_is_free_energy_descent(points, t):
    patterns = hopfield.make_pattern_set(points, 1.0)
    report = hopfield.equivalence_check(patterns, t, 1.0, 100, stream(4, 0))
    assert report.max_gradient_deviation < hopfield.EQUIVALENCE_TOLERANCE
    assert report.offset_spread < 1e-10
    assert np.isclose(report.offset_mean, report.expected_offset, atol=1e-10)
    assert np.isclose(report.expected_offset, -(np.log(len(points)) * t + 0.5))


def test_mismatch_is_reported():
    patterns = hopfield.make_pattern_set(np.eye(3), 1.0)
    with pytest.raises(hopfield.MismatchDetected) as info:
        hopfield.equivalence_check(patterns, 0.5, 1.0, 5, stream(5, 0), tolerance=-1.0)
    assert info.value.probe.shape == (3,)
    with pytest.raises(ConfigError):
        hopfield.equivalence_check(hopfield.make_pattern_set([[2.0, 0.0]], 1.0, normalize=False), 0.5, 1.0, 5,
                                   stream(5, 0))


def test_retrieval_near_a_pattern():
    patterns = hopfield.make_pattern_set(np.eye(8)[:4], 32.0)
    x0 = patterns.patterns[2] + 0.1 * stream(6, 0).standard_normal(8)
    found = hopfield.retrieve(x0, patterns)
    assert found.index == 2
    residual = found.state - np.exp(32.0 * patterns.patterns @ found.state - np.log(np.sum(
        np.exp(32.0 * patterns.patterns @ found.state)))) @ patterns.patterns
    assert np.linalg.norm(residual) < 1e-9


def test_single_pattern_is_always_retrieved():
    patterns = hopfield.make_pattern_set([[0.0, 0.0, 1.0]], 16.0)
    found = hopfield.retrieve([5.0, -3.0, 0.2], patterns)
    assert found.index == 0
    assert found.distance < 1e-9


def test_retrieval_arguments():
    patterns = hopfield.make_pattern_set(np.eye(2), 4.0)
    with pytest.raises(ConfigError):
        hopfield.retrieve([0.5, 0.5], patterns, step_size=0.0)
    with pytest.raises(hopfield.NoConvergence):
        hopfield.retrieve([0.9, 0.1], patterns, step_size=1e-3, max_iters=3)


def test_retrieval_study():
    patterns = hopfield.make_pattern_set(np.eye(16)[:4], 64.0)
    rows, hits = hopfield.retrieval_study(patterns, 100, 0.1, seed=7, threads=2)
    assert hits == 100
    assert [r.probe_id for r in rows] == list(range(100))
    assert all(r.converged and r.retrieved_index == r.probe_id % 4 for r in rows)


def test_retrieval_does_not_degrade_as_beta_grows():
    raw = _random_patterns(16, 32, 9)
    fractions = []
    for beta in (16.0, 32.0, 64.0, 128.0, 256.0):
        _, hits = hopfield.retrieval_study(hopfield.make_pattern_set(raw, beta), 64, 0.1, seed=5, threads=2)
        fractions.append(hits / 64.0)
    assert np.all(np.diff(fractions) >= 0)
    assert fractions[-1] == 1.0
