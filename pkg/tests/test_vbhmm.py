import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from bhmmdiar import ahc
from bhmmdiar import plda
from bhmmdiar import synth
from bhmmdiar import vbhmm
from bhmmdiar import common

from collections import namedtuple


def _recording(n_speakers, n_segments, seed, dim=16, separation=25.0, loop=0.9):
    model = synth.random_plda_model(dim, separation, seed)
    rec, labels = synth.sample_recording(model, n_speakers, n_segments, loop, seed + 1)
    return model, rec.vectors, labels


def _over_cluster(labels, seed, fraction=0.15):
    """Move a random part of every speaker into an extra cluster."""
    rng = np.random.Generator(np.random.Philox(seed))
    n_speakers = int(labels.max()) + 1
    split = labels.copy()
    moved = rng.random(len(labels)) < fraction
    split[moved] += n_speakers
    return split


def _error_rate(hyp, ref):
    """Fraction of observations misassigned under the best one-to-one label mapping."""
    counts = np.zeros((hyp.max() + 1, ref.max() + 1))
    np.add.at(counts, (hyp, ref), 1)
    rows, cols = linear_sum_assignment(counts, maximize=True)
    return 1.0 - counts[rows, cols].sum() / len(ref)


def test_init_soft_example():
    init = vbhmm.init_soft(np.array([0, 1, 0]), 5.0)
    assert init.shape == (3, 2)
    np.testing.assert_allclose(init[0], [0.99331, 0.00669], atol=1e-5)
    np.testing.assert_allclose(init.sum(axis=1), 1.0, atol=1e-12)


def test_init_soft_limits():
    np.testing.assert_allclose(vbhmm.init_soft(np.array([0, 1, 2]), 1e-12), 1.0 / 3)
    np.testing.assert_array_equal(vbhmm.init_soft(np.zeros(4, dtype=int), 5.0), np.ones((4, 1)))
    with pytest.raises(common.ConfigError):
        vbhmm.init_soft(np.array([0, 1]), 0.0)


InvalidConfigFixture = namedtuple("InvalidConfigFixture", ["field", "value"])


INVALID_CONFIGS = [
    InvalidConfigFixture("loop_probability", 1.0),
    InvalidConfigFixture("loop_probability", 0.0),
    InvalidConfigFixture("acoustic_scale", 0.0),
    InvalidConfigFixture("speaker_regularization", -1.0),
    InvalidConfigFixture("init_smoothing", 0.0),
    InvalidConfigFixture("max_iterations", 0),
    InvalidConfigFixture("elbo_tolerance", 0.0),
    InvalidConfigFixture("prune_threshold", 1.0),
]


@pytest.mark.parametrize("fixture", INVALID_CONFIGS)
def test_validate_vb_config(fixture):
    config = vbhmm.VbConfig()._replace(**{fixture.field: fixture.value})
    with pytest.raises(common.ConfigError):
        vbhmm.validate_vb_config(config)


def test_default_config_is_system1():
    config = vbhmm.VbConfig()
    assert config.acoustic_scale == 0.4
    assert config.speaker_regularization == 11.0
    assert config.loop_probability == 0.8
    assert config.init_smoothing == 5.0
    vbhmm.validate_vb_config(config)


def test_single_speaker_iteration():
    model, x, _ = _recording(1, 40, seed=0)
    state = vbhmm.initial_state(np.ones((len(x), 1)))
    for scale in (0.1, 0.4, 2.0):
        new_state, elbo = vbhmm.vb_iterate(state, x, model, vbhmm.VbConfig(acoustic_scale=scale))
        np.testing.assert_array_equal(new_state.gamma, np.ones((len(x), 1)))
        assert np.isfinite(elbo)
        assert len(new_state.speakers) == 1


def test_elbo_non_decreasing():
    config = vbhmm.VbConfig()
    for seed in range(0, 50, 5):
        model, x, labels = _recording(3, 120, seed=seed, dim=8, separation=16.0)
        state = vbhmm.initial_state(vbhmm.init_soft(_over_cluster(labels, seed), config.init_smoothing))
        trace = []
        for _ in range(20):
            state, elbo = vbhmm.vb_iterate(state, x, model, config)
            trace.append(elbo)
            np.testing.assert_allclose(state.gamma.sum(axis=1), 1.0, atol=1e-9)
        steps = np.diff(trace)
        assert np.all(steps >= -1e-6 * np.abs(trace[1:]))


def test_gamma_stable_with_correct_init():
    model, x, labels = _recording(2, 100, seed=7, dim=8)
    config = vbhmm.VbConfig()
    state = vbhmm.initial_state(vbhmm.init_soft(labels, config.init_smoothing))
    first, _ = vbhmm.vb_iterate(state, x, model, config)
    second, _ = vbhmm.vb_iterate(first, x, model, config)
    assert np.max(np.abs(second.gamma - first.gamma)) < 1e-3
    np.testing.assert_array_equal(vbhmm.hard_labels(second.gamma), labels)


def test_prune_zero_mass():
    gamma = np.array([[0.5, 0.5, 0.0], [0.2, 0.8, 0.0], [1.0, 0.0, 0.0]])
    state = vbhmm.VbState(gamma, np.array([0.4, 0.4, 0.2]), [], 3)
    pruned = vbhmm.prune_speakers(state, 0.05)
    assert pruned.gamma.shape == (3, 2)
    np.testing.assert_allclose(pruned.pi, [0.5, 0.5])
    np.testing.assert_allclose(pruned.gamma.sum(axis=1), 1.0)


def test_prune_equal_mass_keeps_all():
    gamma = np.full((6, 3), 1.0 / 3)
    state = vbhmm.VbState(gamma, np.full(3, 1.0 / 3), [], 3)
    assert vbhmm.prune_speakers(state, 0.5) is state


def test_prune_never_empty():
    gamma = np.array([[0.6, 0.4], [0.7, 0.3]])
    state = vbhmm.VbState(gamma, np.array([0.5, 0.5]), [], 1)
    pruned = vbhmm.prune_speakers(state, 0.99)
    assert pruned.gamma.shape == (2, 1)
    np.testing.assert_array_equal(pruned.gamma, np.ones((2, 1)))
    np.testing.assert_array_equal(pruned.pi, [1.0])


def test_prune_renormalizes_rows():
    gamma = np.array([[0.9, 0.0, 0.1], [0.0, 1.0, 0.0], [0.0, 0.9, 0.1]] + [[1.0, 0.0, 0.0]] * 7)
    state = vbhmm.VbState(gamma, np.array([0.5, 0.4, 0.1]), [], 3)
    pruned = vbhmm.prune_speakers(state, 0.3)
    assert pruned.gamma.shape == (10, 2)
    np.testing.assert_allclose(pruned.gamma.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(pruned.gamma[0], [1.0, 0.0])


@pytest.mark.parametrize("seed", [11, 12, 13])
def test_run_vb_recovers_speaker_count(seed):
    model, x, labels = _recording(3, 300, seed=seed)
    init = vbhmm.init_soft(_over_cluster(labels, seed), 5.0)
    assert init.shape[1] == 6
    result = vbhmm.run_vb(x, init, model)
    assert result.speaker_count == 3
    assert _error_rate(vbhmm.hard_labels(result.gamma), labels) < 0.05
    assert len(result.elbo_trace) == len(result.speaker_count_trace)
    assert result.speaker_count_trace[-1] == 3
    assert result.speaker_count_trace == sorted(result.speaker_count_trace, reverse=True)


def _ahc_over_clustered(model, x, n_speakers):
    """AHC labels at the lowest score quantile that yields more than n_speakers clusters."""
    sim = plda.llr_matrix(model, x)
    scores = ahc.calibration_scores(sim)
    for quantile in np.linspace(0.0, 1.0, 401):
        labels = ahc.upgma_cluster(sim, float(np.quantile(scores, quantile)))
        if labels.max() + 1 > n_speakers:
            return labels
    raise AssertionError("AHC never over-clustered")


@pytest.mark.parametrize("n_speakers", [2, 3, 4, 5, 6])
def test_run_vb_recovers_speaker_count_from_ahc(n_speakers):
    model, x, labels = _recording(n_speakers, 120 * n_speakers, seed=30 + n_speakers)
    n_true = int(labels.max()) + 1
    init_labels = _ahc_over_clustered(model, x, n_true)
    result = vbhmm.run_vb(x, vbhmm.init_soft(init_labels, 5.0), model)
    assert result.speaker_count == n_true
    assert _error_rate(vbhmm.hard_labels(result.gamma), labels) < 0.05


def test_run_vb_five_speakers():
    model, x, labels = _recording(5, 600, seed=21)
    init = vbhmm.init_soft(labels, 5.0)
    result = vbhmm.run_vb(x, init, model)
    assert _error_rate(vbhmm.hard_labels(result.gamma), labels) < 0.05


def test_run_vb_single_speaker_converges_fast():
    model, x, _ = _recording(1, 50, seed=3)
    result = vbhmm.run_vb(x, np.ones((len(x), 1)), model)
    assert len(result.elbo_trace) <= 2
    assert result.speaker_count == 1


def test_run_vb_label_permutation():
    model, x, labels = _recording(3, 150, seed=5)
    split = _over_cluster(labels, 5)
    perm = np.array([4, 2, 0, 5, 1, 3])
    config = vbhmm.VbConfig(max_iterations=10)
    plain = vbhmm.hard_labels(vbhmm.run_vb(x, vbhmm.init_soft(split, 5.0), model, config).gamma)
    permuted = vbhmm.hard_labels(vbhmm.run_vb(x, vbhmm.init_soft(perm[split], 5.0), model, config).gamma)
    np.testing.assert_array_equal(plain[:, None] == plain[None, :], permuted[:, None] == permuted[None, :])


def test_run_vb_errors():
    model, x, labels = _recording(2, 20, seed=1)
    init = vbhmm.init_soft(labels, 5.0)
    with pytest.raises(common.DimensionError):
        vbhmm.run_vb(x[:-1], init, model)
    with pytest.raises(common.DimensionError):
        vbhmm.run_vb(x[:, :-1], init, model)
    with pytest.raises(common.ConfigError):
        vbhmm.run_vb(x, init, model, vbhmm.VbConfig(loop_probability=1.5))


def test_non_finite_observations():
    model, x, labels = _recording(2, 20, seed=2)
    x = x.copy()
    x[3, 0] = np.nan
    state = vbhmm.initial_state(vbhmm.init_soft(labels, 5.0))
    with pytest.raises(common.NumericalError) as excinfo:
        vbhmm.vb_iterate(state, x, model, vbhmm.VbConfig())
    assert "(20, 16)" in str(excinfo.value)


def test_hard_labels_relabels():
    gamma = np.array([[0.1, 0.9], [0.8, 0.2], [0.3, 0.7]])
    np.testing.assert_array_equal(vbhmm.hard_labels(gamma), [0, 1, 0])
