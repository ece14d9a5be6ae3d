# This file is part of the bhmmdiar project
# https://github.com/bhmmdiar/bhmmdiar
# (C) 2019 bhmmdiar contributors
#
# SPDX-License-Identifier:    MIT
"""Frame level VB resegmentation with an eigenvoice model.

A single VB iteration: speaker models are estimated once from the
initial assignment and the frames are then reassigned by one
forward-backward pass.
"""

import logging
import typing as typ

import numpy as np
from scipy.special import logsumexp

from . import hmm
from . import common
from . import corpus_io


logger = logging.getLogger(__name__)


class FrameVbConfig(typ.NamedTuple):

    acoustic_scale: float = 0.1
    loop_probability: float = 0.95
    min_duration: int = 1
    downsample: int = 5


class UbmStatistics(typ.NamedTuple):

    # T, per-frame UBM log-likelihood
    frame_ll: np.ndarray
    # T x C component posteriors (zero order statistics)
    posteriors: np.ndarray
    # T x R first order statistics projected by V^T Sigma^-1
    projected: np.ndarray


def validate_frame_vb_config(config: FrameVbConfig) -> None:
    if config.acoustic_scale <= 0:
        raise common.ConfigError(f"frame acoustic_scale must be positive, got {config.acoustic_scale}")
    if not 0 < config.loop_probability < 1:
        raise common.ConfigError(
            f"frame loop_probability must be in (0, 1), got {config.loop_probability}"
        )
    if config.min_duration < 1:
        raise common.ConfigError(f"min_duration must be positive, got {config.min_duration}")
    if config.downsample < 1:
        raise common.ConfigError(f"downsample must be positive, got {config.downsample}")


def validate_eigenvoice_model(model: common.EigenvoiceModel) -> None:
    n_comp, feat_dim = model.means.shape
    if model.weights.shape != (n_comp,) or model.diag_covs.shape != (n_comp, feat_dim):
        raise common.DimensionError("eigenvoice weights, means and covariances disagree in shape")
    if model.V.ndim != 2 or model.V.shape[0] != n_comp * feat_dim:
        raise common.DimensionError(f"V must have {n_comp * feat_dim} rows, got shape {model.V.shape}")
    if abs(model.weights.sum() - 1) > 1e-12 or np.any(model.weights < 0):
        raise common.DegenerateInputError("UBM weights must form a probability vector")
    if np.any(model.diag_covs <= 0):
        raise common.DegenerateInputError("UBM variances must be positive")


def _component_vtiev(model: common.EigenvoiceModel) -> np.ndarray:
    """V_c^T Sigma_c^-1 V_c for every component, C x R x R."""
    v_blocks = model.V.reshape(model.n_components, model.feat_dim, model.rank)
    return np.einsum("cfr,cf,cfq->crq", v_blocks, 1.0 / model.diag_covs, v_blocks)


def ubm_statistics(frames: typ.Any, model: common.EigenvoiceModel) -> UbmStatistics:
    x = common.as_matrix(frames, "frames")
    if x.shape[1] != model.feat_dim:
        raise common.DimensionError(f"model expects {model.feat_dim} features, frames have {x.shape[1]}")

    inv_var = 1.0 / model.diag_covs
    with np.errstate(divide="ignore"):
        log_w = np.log(model.weights)
    mahalanobis = (
        (x ** 2) @ inv_var.T
        - 2 * x @ (model.means * inv_var).T
        + np.sum(model.means ** 2 * inv_var, axis=1)
    )
    comp_ll = log_w - 0.5 * np.sum(np.log(2 * np.pi * model.diag_covs), axis=1) - 0.5 * mahalanobis
    frame_ll = logsumexp(comp_ll, axis=1)
    if not np.all(np.isfinite(frame_ll)):
        raise common.NumericalError(f"non-finite UBM likelihood for frames of shape {x.shape}")
    posteriors = np.exp(comp_ll - frame_ll[:, np.newaxis])

    v_blocks = model.V.reshape(model.n_components, model.feat_dim, model.rank)
    projected = np.zeros((len(x), model.rank))
    for comp in range(model.n_components):
        centered = (x - model.means[comp]) * inv_var[comp]
        projected += posteriors[:, comp:comp + 1] * (centered @ v_blocks[comp])
    return UbmStatistics(frame_ll, posteriors, projected)


def _block_bounds(n_frames: int, downsample: int) -> np.ndarray:
    return np.arange(0, n_frames, downsample)


def _block_average(values: np.ndarray, starts: np.ndarray) -> np.ndarray:
    sizes = np.diff(np.append(starts, len(values)))
    sums = np.add.reduceat(values, starts, axis=0)
    return sums / sizes.reshape((-1,) + (1,) * (values.ndim - 1))


def frame_init_from_segments(
    hyp: common.DiarizationHypothesis,
    frame_rate: float,
    total_frames: int,
) -> common.SoftAssignment:
    """One-hot rows for the speaker covering each frame center.

    Columns follow ``hyp.speakers``. A center on the boundary of two
    segments goes to the earlier segment; uncovered frames are uniform.
    """
    if not hyp.segments:
        raise common.EmptyInputError(f"{hyp.recording_id}: empty hypothesis for frame initialization")
    speakers = hyp.speakers
    column = {name: idx for idx, name in enumerate(speakers)}
    centers = (np.arange(total_frames) + 0.5) / frame_rate

    owner = np.full(total_frames, -1)
    # reverse onset order: earlier segments overwrite later ones
    for seg in sorted(hyp.segments, key=lambda s: (s.onset, s.offset), reverse=True):
        covered = (centers >= seg.onset) & (centers <= seg.offset)
        owner[covered] = column[seg.speaker]

    init = np.full((total_frames, len(speakers)), 1.0 / len(speakers))
    assigned = owner >= 0
    init[assigned] = 0.0
    init[np.flatnonzero(assigned), owner[assigned]] = 1.0
    return init


def single_vb_pass(
    frames: typ.Any,
    init: common.SoftAssignment,
    model: common.EigenvoiceModel,
    config: FrameVbConfig = FrameVbConfig(),
) -> common.SoftAssignment:
    validate_frame_vb_config(config)
    validate_eigenvoice_model(model)
    x = common.as_matrix(frames, "frames")
    init = np.asarray(init, dtype=float)
    if len(x) == 0:
        raise common.EmptyInputError("no frames to resegment")
    if len(init) != len(x):
        raise common.DimensionError(f"{len(x)} frames but {len(init)} initial assignments")

    n_speakers = init.shape[1]
    min_dur = config.min_duration
    scale = config.acoustic_scale

    stats = ubm_statistics(x, model)
    starts = _block_bounds(len(x), config.downsample)
    frame_ll = _block_average(stats.frame_ll, starts)
    zeta = _block_average(stats.posteriors, starts)
    projected = _block_average(stats.projected, starts)
    gamma = _block_average(init, starts)

    vtiev = _component_vtiev(model)
    counts = gamma.T @ zeta
    precision = np.eye(model.rank)[np.newaxis] + scale * np.einsum("sc,crq->srq", counts, vtiev)
    inv_l = np.linalg.inv(precision)
    alpha = scale * np.einsum("srq,sq->sr", inv_l, gamma.T @ projected)

    second_moment = inv_l + alpha[:, :, np.newaxis] * alpha[:, np.newaxis, :]
    penalty = np.einsum("crq,srq->cs", vtiev, second_moment)
    lls = scale * (frame_ll[:, np.newaxis] + projected @ alpha.T - 0.5 * zeta @ penalty)
    if not np.all(np.isfinite(lls)):
        raise common.NumericalError(
            f"non-finite frame log-likelihoods; frames {x.shape}, speakers {n_speakers}, {config}"
        )

    pi = np.full(n_speakers, 1.0 / n_speakers)
    tr, ip = hmm.speaker_transitions(pi, config.loop_probability, min_dur)
    fb = hmm.forward_backward(lls.repeat(min_dur, axis=1), tr, ip)
    block_post = hmm.collapse_chains(fb.posteriors, min_dur)

    logger.debug(f"frame VB pass over {len(x)} frames in {len(starts)} blocks, {n_speakers} speakers")
    sizes = np.diff(np.append(starts, len(x)))
    return np.repeat(block_post, sizes, axis=0)


def save_eigenvoice_model(model: common.EigenvoiceModel, path: corpus_io.PathLike) -> None:
    corpus_io.write_matrix_blocks(
        path,
        [model.weights, model.means, model.diag_covs, model.V],
        header=[model.n_components, model.feat_dim, model.rank],
    )


def load_eigenvoice_model(path: corpus_io.PathLike) -> common.EigenvoiceModel:
    def shapes(header: typ.List[int]) -> typ.List[typ.Tuple[int, int]]:
        n_comp, feat_dim, rank = header
        return [(1, n_comp), (n_comp, feat_dim), (n_comp, feat_dim), (n_comp * feat_dim, rank)]

    _, (weights, means, diag_covs, v_mat) = corpus_io.read_matrix_blocks(path, shapes, header_size=3)
    model = common.EigenvoiceModel(weights[0], means, diag_covs, v_mat)
    try:
        validate_eigenvoice_model(model)
    except common.DataError as ex:
        raise common.FormatError(str(ex), str(path))
    return model
