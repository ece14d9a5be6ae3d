import itertools

import numpy as np
import pytest
from scipy.special import logsumexp

from bhmmdiar import hmm
from bhmmdiar import common

from collections import namedtuple


def _rng(seed=0):
    return np.random.Generator(np.random.Philox(seed))


def _enumerate_paths(lls, tr, ip):
    n_frames, n_states = lls.shape
    log_probs = []
    paths = list(itertools.product(range(n_states), repeat=n_frames))
    with np.errstate(divide="ignore"):
        ltr = np.log(tr)
        lip = np.log(ip)
    for path in paths:
        lp = lip[path[0]] + lls[0, path[0]]
        for t in range(1, n_frames):
            lp += ltr[path[t - 1], path[t]] + lls[t, path[t]]
        log_probs.append(lp)
    return paths, np.array(log_probs)


def _brute_force(lls, tr, ip):
    paths, log_probs = _enumerate_paths(lls, tr, ip)
    tll = logsumexp(log_probs)
    weights = np.exp(log_probs - tll)
    post = np.zeros_like(lls)
    for path, weight in zip(paths, weights):
        post[np.arange(len(path)), path] += weight
    return post, tll


def _brute_force_jumps(lls, pi, loop, min_dur):
    tr, ip = hmm.speaker_transitions(pi, loop, min_dur)
    paths, log_probs = _enumerate_paths(lls, tr, ip)
    weights = np.exp(log_probs - logsumexp(log_probs))
    jumps = np.zeros(len(pi))
    for path, weight in zip(paths, weights):
        jumps[path[0] // min_dur] += weight
        for prev, cur in zip(path[:-1], path[1:]):
            if prev % min_dur == min_dur - 1 and cur % min_dur == 0:
                spk = cur // min_dur
                jumps[spk] += weight * (1 - loop) * pi[spk] / tr[prev, cur]
    return jumps


HmmFixture = namedtuple("HmmFixture", ["n_speakers", "n_frames", "min_duration", "loop"])


HMM_FIXTURES = [
    HmmFixture(1, 5, 1, 0.8),
    HmmFixture(2, 8, 1, 0.8),
    HmmFixture(3, 8, 1, 0.5),
    HmmFixture(3, 7, 1, 0.95),
    HmmFixture(2, 6, 2, 0.9),
    HmmFixture(3, 5, 2, 0.7),
]


@pytest.mark.parametrize("fixture", HMM_FIXTURES)
def test_forward_backward_matches_enumeration(fixture):
    rng = _rng(fixture.n_speakers * 100 + fixture.n_frames)
    pi = rng.dirichlet(np.ones(fixture.n_speakers))
    tr, ip = hmm.speaker_transitions(pi, fixture.loop, fixture.min_duration)
    lls = rng.normal(0, 3, size=(fixture.n_frames, len(ip)))

    fb = hmm.forward_backward(lls, tr, ip)
    post, tll = _brute_force(lls, tr, ip)
    np.testing.assert_allclose(fb.posteriors, post, atol=1e-9)
    assert fb.total_log_likelihood == pytest.approx(tll, abs=1e-9)
    np.testing.assert_allclose(fb.posteriors.sum(axis=1), 1.0, atol=1e-9)


@pytest.mark.parametrize("fixture", HMM_FIXTURES)
def test_expected_jumps_matches_enumeration(fixture):
    rng = _rng(fixture.n_speakers * 1000 + fixture.n_frames)
    pi = rng.dirichlet(np.ones(fixture.n_speakers))
    min_dur = fixture.min_duration
    tr, ip = hmm.speaker_transitions(pi, fixture.loop, min_dur)
    lls = rng.normal(0, 2, size=(fixture.n_frames, len(ip)))

    fb = hmm.forward_backward(lls, tr, ip)
    jumps = hmm.expected_jumps(fb, lls, pi, fixture.loop, min_dur)
    np.testing.assert_allclose(jumps, _brute_force_jumps(lls, pi, fixture.loop, min_dur), atol=1e-9)


def test_speaker_transitions_structure():
    pi = np.array([0.2, 0.3, 0.5])
    tr, ip = hmm.speaker_transitions(pi, 0.9, 3)
    assert tr.shape == (9, 9)
    np.testing.assert_allclose(tr.sum(axis=1), 1.0)
    np.testing.assert_array_equal(ip, [0.2, 0, 0, 0.3, 0, 0, 0.5, 0, 0])
    # inside a chain the next state follows with probability one
    assert tr[0, 1] == 1.0
    assert tr[1, 2] == 1.0
    # last state: loop plus a jump back to its own chain start
    assert tr[2, 2] == pytest.approx(0.9)
    assert tr[2, 0] == pytest.approx(0.1 * 0.2)
    assert tr[2, 3] == pytest.approx(0.1 * 0.3)
    assert tr[5, 6] == pytest.approx(0.1 * 0.5)


def test_speaker_transitions_min_duration_one():
    pi = np.array([0.25, 0.75])
    tr, ip = hmm.speaker_transitions(pi, 0.8, 1)
    expected = 0.8 * np.eye(2) + 0.2 * pi[np.newaxis, :]
    np.testing.assert_allclose(tr, expected)
    np.testing.assert_array_equal(ip, pi)


def test_min_duration_blocks_short_turns():
    pi = np.array([0.5, 0.5])
    tr, ip = hmm.speaker_transitions(pi, 0.5, 3)
    # evidence for speaker 1 on a single frame only
    lls = np.zeros((9, 6))
    lls[4, 3:] = 5.0
    lls[4, :3] = -5.0
    post = hmm.collapse_chains(hmm.forward_backward(lls, tr, ip).posteriors, 3)
    assert post.shape == (9, 2)
    np.testing.assert_allclose(post.sum(axis=1), 1.0, atol=1e-12)
    # any speaker 1 visit lasts at least three frames
    assert post[3, 1] > 0.1 or post[5, 1] > 0.1


def test_forward_backward_long_sequence_no_underflow():
    rng = _rng(1)
    pi = np.array([0.5, 0.5])
    tr, ip = hmm.speaker_transitions(pi, 0.99, 1)
    lls = rng.normal(-1000, 50, size=(2000, 2))
    fb = hmm.forward_backward(lls, tr, ip)
    assert np.isfinite(fb.total_log_likelihood)
    np.testing.assert_allclose(fb.posteriors.sum(axis=1), 1.0, atol=1e-9)


def test_forward_backward_errors():
    tr, ip = hmm.speaker_transitions(np.array([0.5, 0.5]), 0.8)
    with pytest.raises(common.DimensionError):
        hmm.forward_backward(np.zeros((4, 3)), tr, ip)
    with pytest.raises(common.NumericalError):
        hmm.forward_backward(np.full((4, 2), -np.inf), tr, ip)


def test_collapse_chains():
    post = np.array([[0.1, 0.2, 0.3, 0.4], [0.0, 0.5, 0.5, 0.0]])
    np.testing.assert_allclose(hmm.collapse_chains(post, 2), [[0.3, 0.7], [0.5, 0.5]])
    np.testing.assert_array_equal(hmm.collapse_chains(post, 1), post)
