# This file is part of the bhmmdiar project
# https://github.com/bhmmdiar/bhmmdiar
# (C) 2019 bhmmdiar contributors
#
# SPDX-License-Identifier:    MIT
"""Log domain forward-backward over speaker HMMs with minimum duration chains."""

import typing as typ

import numpy as np
from scipy.special import logsumexp

from . import common


class ForwardBackward(typ.NamedTuple):

    posteriors: np.ndarray
    total_log_likelihood: float
    log_forward: np.ndarray
    log_backward: np.ndarray


def speaker_transitions(
    pi: np.ndarray, loop_probability: float, min_duration: int = 1
) -> typ.Tuple[np.ndarray, np.ndarray]:
    """Transition matrix and initial probabilities of the speaker HMM.

    Each speaker is a left to right chain of min_duration states. Inside a
    chain the next state follows with probability one. The last state
    loops with loop_probability and otherwise enters the first state of
    speaker s' with probability (1 - loop_probability) * pi[s'].
    """
    n_speakers = len(pi)
    n_states = n_speakers * min_duration
    tr = np.eye(n_states, k=1)
    last = np.arange(1, n_speakers + 1) * min_duration - 1
    tr[last] = 0.0
    tr[np.ix_(last, last - min_duration + 1)] = (1 - loop_probability) * pi
    tr[last, last] += loop_probability
    ip = np.zeros(n_states)
    ip[::min_duration] = pi
    return tr, ip


def forward_backward(lls: np.ndarray, tr: np.ndarray, ip: np.ndarray) -> ForwardBackward:
    """State posteriors of an HMM given per-frame state log-likelihoods.

    lls: T x N log output probabilities, tr: N x N transitions,
    ip: initial state probabilities.
    """
    n_frames, n_states = lls.shape
    if tr.shape != (n_states, n_states) or ip.shape != (n_states,):
        raise common.DimensionError(
            f"HMM with {n_states} states got transitions {tr.shape} and initial {ip.shape}"
        )
    with np.errstate(divide="ignore"):
        ltr = np.log(tr)
        lip = np.log(ip)

    lfw = np.empty_like(lls, dtype=float)
    lbw = np.empty_like(lls, dtype=float)
    lfw[0] = lls[0] + lip
    lbw[-1] = 0.0
    for t in range(1, n_frames):
        lfw[t] = lls[t] + logsumexp(lfw[t - 1][:, np.newaxis] + ltr, axis=0)
    for t in reversed(range(n_frames - 1)):
        lbw[t] = logsumexp(ltr + (lls[t + 1] + lbw[t + 1])[np.newaxis, :], axis=1)

    tll = float(logsumexp(lfw[-1]))
    if not np.isfinite(tll):
        raise common.NumericalError(
            f"forward-backward total log-likelihood is {tll} (T={n_frames}, N={n_states})"
        )
    post = np.exp(lfw + lbw - tll)
    post /= post.sum(axis=1, keepdims=True)
    return ForwardBackward(post, tll, lfw, lbw)


def expected_jumps(
    fb: ForwardBackward,
    lls: np.ndarray,
    pi: np.ndarray,
    loop_probability: float,
    min_duration: int = 1,
) -> np.ndarray:
    """Expected number of times each speaker is entered, the initial frame included.

    Normalized, this is the maximum likelihood update of the speaker priors.
    """
    last = fb.log_forward[:-1, min_duration - 1::min_duration]
    with np.errstate(divide="ignore"):
        log_jump = np.log((1 - loop_probability) * pi)
    entries = np.exp(
        logsumexp(last, axis=1)[:, np.newaxis]
        + fb.log_backward[1:, ::min_duration]
        + lls[1:, ::min_duration]
        + log_jump
        - fb.total_log_likelihood
    ).sum(axis=0)
    return fb.posteriors[0, ::min_duration] + entries


def collapse_chains(post: np.ndarray, min_duration: int) -> np.ndarray:
    """Sum chain state posteriors into per-speaker posteriors."""
    n_frames, n_states = post.shape
    return post.reshape(n_frames, n_states // min_duration, min_duration).sum(axis=2)
