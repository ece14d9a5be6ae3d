# This file is part of the bhmmdiar project
# https://github.com/bhmmdiar/bhmmdiar
# (C) 2019 bhmmdiar contributors
#
# SPDX-License-Identifier:    MIT
"""Bayesian HMM clustering of embedding sequences (VBx).

Observations x_t of speaker s are modelled as m + V y_s + e with
y_s ~ N(0, I) and e ~ N(0, W), where V V^T is the PLDA across-class
covariance and W the within-class covariance. Inference alternates the
closed form update of q(y_s) with forward-backward over an HMM whose
states are the speakers. Speakers whose prior weight collapses are pruned
(automatic relevance determination).
"""

import logging
import typing as typ

import numpy as np
import scipy.linalg as spl
from scipy.special import softmax

from . import hmm
from . import utils
from . import common


logger = logging.getLogger(__name__)


class VbConfig(typ.NamedTuple):

    loop_probability: float = 0.8
    acoustic_scale: float = 0.4
    speaker_regularization: float = 11.0
    init_smoothing: float = 5.0
    max_iterations: int = 40
    elbo_tolerance: float = 1e-4
    prune_threshold: float = 0.05


class SpeakerPosterior(typ.NamedTuple):
    """q(y_s), expressed in the whitened and diagonalized PLDA basis."""

    mean: np.ndarray
    cov: np.ndarray


class VbState(typ.NamedTuple):

    gamma: common.SoftAssignment
    pi: np.ndarray
    speakers: typ.List[SpeakerPosterior]
    initial_speakers: int


class VbResult(typ.NamedTuple):

    gamma: common.SoftAssignment
    speaker_count: int
    elbo_trace: typ.List[float]
    speaker_count_trace: typ.List[int]


def validate_vb_config(config: VbConfig) -> None:
    if not 0 < config.loop_probability < 1:
        raise common.ConfigError(f"loop_probability must be in (0, 1), got {config.loop_probability}")
    if config.acoustic_scale <= 0:
        raise common.ConfigError(f"acoustic_scale must be positive, got {config.acoustic_scale}")
    if config.speaker_regularization <= 0:
        raise common.ConfigError(
            f"speaker_regularization must be positive, got {config.speaker_regularization}"
        )
    if config.init_smoothing <= 0:
        raise common.ConfigError(f"init_smoothing must be positive, got {config.init_smoothing}")
    if config.max_iterations < 1:
        raise common.ConfigError(f"max_iterations must be positive, got {config.max_iterations}")
    if config.elbo_tolerance <= 0:
        raise common.ConfigError(f"elbo_tolerance must be positive, got {config.elbo_tolerance}")
    if not 0 < config.prune_threshold < 1:
        raise common.ConfigError(f"prune_threshold must be in (0, 1), got {config.prune_threshold}")


def init_soft(labels: common.ClusterLabels, smoothing: float) -> common.SoftAssignment:
    """Softmax of the smoothed one-hot AHC assignment."""
    if smoothing <= 0:
        raise common.ConfigError(f"smoothing must be positive, got {smoothing}")
    labels = np.asarray(labels, dtype=int)
    n_speakers = int(labels.max()) + 1 if len(labels) else 0
    onehot = np.zeros((len(labels), n_speakers))
    onehot[np.arange(len(labels)), labels] = 1.0
    return softmax(smoothing * onehot, axis=1)


def initial_state(init: common.SoftAssignment) -> VbState:
    n_speakers = init.shape[1]
    return VbState(
        gamma=init,
        pi=np.full(n_speakers, 1.0 / n_speakers),
        speakers=[],
        initial_speakers=n_speakers,
    )


class _EmissionSpace(typ.NamedTuple):
    # rho = x' * sqrt(phi) where x' are the whitened, rotated observations
    rho: np.ndarray
    phi: np.ndarray
    # per-observation log N(x'; 0, I) including the whitening Jacobian
    frame_ll: np.ndarray


def _emission_space(observations: np.ndarray, model: common.PldaModel) -> _EmissionSpace:
    if observations.shape[1] != model.dim:
        raise common.DimensionError(
            f"PLDA model has dimension {model.dim}, observations have {observations.shape[1]}"
        )
    chol = spl.cholesky(utils.symmetrize(model.within_class), lower=True)
    whiten = spl.solve_triangular(chol, np.eye(model.dim), lower=True)
    across = utils.symmetrize(whiten @ model.across_class @ whiten.T)
    phi, rot = spl.eigh(across)
    phi = np.clip(phi, 0.0, None)
    x = (observations - model.mean) @ whiten.T @ rot

    dim = model.dim
    frame_ll = -0.5 * (np.sum(x ** 2, axis=1) + dim * np.log(2 * np.pi) + utils.logdet(model.within_class))
    return _EmissionSpace(x * np.sqrt(phi), phi, frame_ll)


def _update_speakers(
    space: _EmissionSpace, gamma: np.ndarray, config: VbConfig
) -> typ.Tuple[np.ndarray, np.ndarray]:
    """Diagonal covariances (S x R) and means (S x R) of q(y_s)."""
    ratio = config.acoustic_scale / config.speaker_regularization
    counts = gamma.sum(axis=0)[:, np.newaxis]
    inv_l = 1.0 / (1.0 + ratio * counts * space.phi)
    alpha = inv_l * ratio * (gamma.T @ space.rho)
    return inv_l, alpha


def vb_iterate(
    state: VbState,
    observations: typ.Any,
    plda_projected: common.PldaModel,
    config: VbConfig,
) -> typ.Tuple[VbState, float]:
    """One update of the speaker posteriors, the assignments and the speaker priors."""
    x = common.as_matrix(observations, "observations")
    space = _emission_space(x, plda_projected)
    return _iterate(state, space, config)


def _iterate(state: VbState, space: _EmissionSpace, config: VbConfig) -> typ.Tuple[VbState, float]:
    inv_l, alpha = _update_speakers(space, state.gamma, config)
    lls = config.acoustic_scale * (
        space.rho @ alpha.T - 0.5 * (inv_l + alpha ** 2) @ space.phi + space.frame_ll[:, np.newaxis]
    )

    tr, ip = hmm.speaker_transitions(state.pi, config.loop_probability)
    try:
        fb = hmm.forward_backward(lls, tr, ip)
    except common.NumericalError as ex:
        raise common.NumericalError(
            f"{ex}; observations {space.rho.shape}, speakers {len(state.pi)}, {config}"
        )

    kl_term = 0.5 * np.sum(np.log(inv_l) - inv_l - alpha ** 2 + 1)
    elbo = fb.total_log_likelihood + config.speaker_regularization * kl_term
    if not np.isfinite(elbo):
        raise common.NumericalError(
            f"ELBO is {elbo}; observations {space.rho.shape}, speakers {len(state.pi)}, {config}"
        )

    pi = hmm.expected_jumps(fb, lls, state.pi, config.loop_probability)
    pi = pi / pi.sum()
    speakers = [SpeakerPosterior(mean, np.diag(cov)) for mean, cov in zip(alpha, inv_l)]
    new_state = VbState(fb.posteriors, pi, speakers, state.initial_speakers)
    return new_state, float(elbo)


def prune_speakers(state: VbState, prune_threshold: float) -> VbState:
    """Drop speakers whose responsibility mass is below prune_threshold * T / S_initial."""
    n_frames, n_speakers = state.gamma.shape
    mass = state.gamma.sum(axis=0)
    keep = mass >= prune_threshold * n_frames / state.initial_speakers
    if not np.any(keep):
        keep[np.argmax(mass)] = True
    if np.all(keep):
        return state

    logger.debug(f"pruning {n_speakers - int(keep.sum())} of {n_speakers} speakers")
    gamma = state.gamma[:, keep]
    row_sums = gamma.sum(axis=1, keepdims=True)
    empty = row_sums[:, 0] == 0
    gamma = np.where(empty[:, np.newaxis], 1.0 / gamma.shape[1], gamma / np.where(row_sums == 0, 1, row_sums))
    pi = state.pi[keep]
    pi = pi / pi.sum() if pi.sum() > 0 else np.full(len(pi), 1.0 / len(pi))
    speakers = [spk for spk, k in zip(state.speakers, keep) if k] if state.speakers else []
    return VbState(gamma, pi, speakers, state.initial_speakers)


def run_vb(
    observations: typ.Any,
    init: common.SoftAssignment,
    plda_projected: common.PldaModel,
    config: VbConfig = VbConfig(),
) -> VbResult:
    """Iterate VB updates and pruning until the relative ELBO change drops below tolerance."""
    validate_vb_config(config)
    x = common.as_matrix(observations, "observations")
    if len(x) != len(init):
        raise common.DimensionError(f"{len(x)} observations but {len(init)} initial assignments")
    if len(x) == 0:
        raise common.EmptyInputError("no observations to cluster")

    space = _emission_space(x, plda_projected)
    state = initial_state(np.asarray(init, dtype=float))
    elbo_trace: typ.List[float] = []
    count_trace: typ.List[int] = []
    for it in range(config.max_iterations):
        state, elbo = _iterate(state, space, config)
        state = prune_speakers(state, config.prune_threshold)
        elbo_trace.append(elbo)
        count_trace.append(len(state.pi))
        logger.debug(f"VB iteration {it}: ELBO {elbo:.4f}, {len(state.pi)} speakers")
        if it > 0:
            prev = elbo_trace[-2]
            if abs(elbo - prev) < config.elbo_tolerance * abs(elbo):
                break

    return VbResult(state.gamma, len(state.pi), elbo_trace, count_trace)


def hard_labels(gamma: common.SoftAssignment) -> common.ClusterLabels:
    return utils.relabel_first_appearance(np.argmax(gamma, axis=1))
