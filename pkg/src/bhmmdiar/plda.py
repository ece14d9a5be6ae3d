# This file is part of the bhmmdiar project
# https://github.com/bhmmdiar/bhmmdiar
# (C) 2019 bhmmdiar contributors
#
# SPDX-License-Identifier:    MIT
"""Two-covariance PLDA: training, scoring, interpolation and projection."""

import logging
import typing as typ

import numpy as np

from . import ahc
from . import utils
from . import common
from . import corpus_io


logger = logging.getLogger(__name__)


PROJECT_REL_EPS = 1e-8

INIT_REL_EPS = 1e-6


def _check_dim(model: common.PldaModel, x: np.ndarray) -> None:
    if x.shape[1] != model.dim:
        raise common.DimensionError(f"PLDA model has dimension {model.dim}, vectors have {x.shape[1]}")


def _class_stats(
    x: np.ndarray,
    labels: typ.Sequence[typ.Hashable],
) -> typ.Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class counts, sums and index of each vector's class."""
    _, class_idx = np.unique(np.asarray(labels), return_inverse=True)
    class_idx = class_idx.ravel()
    n_classes = int(class_idx.max()) + 1
    counts = np.bincount(class_idx, minlength=n_classes).astype(float)
    sums = np.zeros((n_classes, x.shape[1]))
    np.add.at(sums, class_idx, x)
    return counts, sums, class_idx


def log_likelihood(model: common.PldaModel, vectors: typ.Any, labels: typ.Sequence[typ.Hashable]) -> float:
    """Marginal log-likelihood of labelled data under the model."""
    x = common.as_matrix(vectors)
    _check_dim(model, x)
    counts, sums, class_idx = _class_stats(x, labels)
    dim = model.dim
    within = model.within_class
    w_logdet = utils.logdet(within)
    w_inv = np.linalg.inv(within)

    class_means = sums / counts[:, np.newaxis]
    resid = x - class_means[class_idx]
    scatter = np.einsum("ij,jk,ik->", resid, w_inv, resid)

    total = -0.5 * (len(x) * dim * np.log(2 * np.pi) + scatter)
    for n in np.unique(counts):
        members = counts == n
        cov = within + n * model.across_class
        centered = class_means[members] - model.mean
        quad = np.einsum("ij,jk,ik->", centered, np.linalg.inv(cov), centered)
        total -= 0.5 * (
            members.sum() * ((n - 1) * w_logdet + utils.logdet(cov))
            + n * quad
        )
    return float(total)


def train_em(
    vectors: typ.Any,
    labels: typ.Sequence[typ.Hashable],
    iterations: int,
    callback: typ.Callable[[int, common.PldaModel], None] = None,
) -> common.PldaModel:
    """Maximum likelihood two-covariance PLDA by EM.

    The posterior of each class mean is computed in the form
    B (B + W / n)^-1 so that a vanishing across-class covariance stays
    well defined.
    """
    x = common.as_matrix(vectors)
    n_vectors, dim = x.shape
    if len(labels) != n_vectors:
        raise common.DimensionError(f"{n_vectors} vectors but {len(labels)} labels")
    if iterations < 1:
        raise common.ConfigError(f"iterations must be positive, got {iterations}")

    counts, sums, class_idx = _class_stats(x, labels)
    n_classes = len(counts)
    if n_classes < 2:
        raise common.TrainingError("PLDA training needs at least 2 classes")
    if dim > n_vectors:
        raise common.TrainingError(f"dimension {dim} exceeds the number of vectors {n_vectors}")

    class_means = sums / counts[:, np.newaxis]
    mean = x.mean(axis=0)
    resid = x - class_means[class_idx]
    within = resid.T @ resid / n_vectors
    if not utils.is_positive_definite(within):
        logger.warning("initial within-class covariance is singular, regularizing")
        within = utils.regularize(within, INIT_REL_EPS, "within-class covariance")
    centered = class_means - mean
    across = centered.T @ centered / n_classes

    model = common.PldaModel(mean, utils.symmetrize(across), utils.symmetrize(within))
    eye = np.eye(dim)
    for it in range(iterations):
        post_means = np.empty_like(class_means)
        post_cov_sum = np.zeros((dim, dim))
        within_cov_sum = np.zeros((dim, dim))
        for n in np.unique(counts):
            members = counts == n
            gain = np.linalg.solve(model.across_class + model.within_class / n, model.across_class).T
            post_cov = utils.symmetrize((eye - gain) @ model.across_class)
            post_means[members] = model.mean + (class_means[members] - model.mean) @ gain.T
            post_cov_sum += members.sum() * post_cov
            within_cov_sum += members.sum() * n * post_cov

        new_mean = post_means.mean(axis=0)
        dev = post_means - new_mean
        new_across = (post_cov_sum + dev.T @ dev) / n_classes
        resid = x - post_means[class_idx]
        new_within = (within_cov_sum + resid.T @ resid) / n_vectors

        model = common.PldaModel(new_mean, utils.symmetrize(new_across), utils.symmetrize(new_within))
        if callback is not None:
            callback(it, model)
    return model


def llr_matrix(model: common.PldaModel, vectors: typ.Any) -> common.SimilarityMatrix:
    """Same- versus different-speaker log-likelihood ratio for every pair."""
    x = common.as_matrix(vectors)
    _check_dim(model, x)
    x = x - model.mean

    across = model.across_class
    total = utils.symmetrize(across + model.within_class)
    total_inv = np.linalg.inv(total)
    # inverse of [[T, B], [B, T]] is [[A, C], [C, A]]
    schur = utils.symmetrize(total - across @ total_inv @ across)
    a_blk = np.linalg.inv(schur)
    c_blk = -total_inv @ across @ a_blk
    quad_mat = total_inv - a_blk
    cross_mat = -c_blk
    const = 0.5 * (utils.logdet(total) - utils.logdet(schur))

    quad = 0.5 * np.einsum("ij,jk,ik->i", x, quad_mat, x)
    scores = x @ (cross_mat @ x.T)
    scores += quad[:, np.newaxis]
    scores += quad[np.newaxis, :] + const
    # numpy buffers the overlapping transpose operand
    scores += scores.T
    scores *= 0.5
    np.fill_diagonal(scores, np.inf)
    return common.SimilarityMatrix(scores)


def interpolate(a: common.PldaModel, b: common.PldaModel, weight: float = 0.5) -> common.PldaModel:
    if a.dim != b.dim:
        raise common.DimensionError(f"cannot interpolate models of dimension {a.dim} and {b.dim}")
    if not 0 <= weight <= 1:
        raise common.ConfigError(f"interpolation weight must be in [0, 1], got {weight}")
    return common.PldaModel(
        weight * a.mean + (1 - weight) * b.mean,
        weight * a.across_class + (1 - weight) * b.across_class,
        weight * a.within_class + (1 - weight) * b.within_class,
    )


def project(model: common.PldaModel, t: common.AffineTransform) -> common.PldaModel:
    if t.in_dim != model.dim:
        raise common.DimensionError(f"transform expects dimension {t.in_dim}, model has {model.dim}")
    mat = t.matrix
    within = utils.ensure_positive_definite(
        mat @ model.within_class @ mat.T, PROJECT_REL_EPS, "projected within-class covariance"
    )
    return common.PldaModel(
        mat @ (model.mean - t.shift),
        utils.symmetrize(mat @ model.across_class @ mat.T),
        within,
    )


def adapt_unsupervised(
    model: common.PldaModel,
    recordings: typ.Iterable[typ.Any],
    threshold: float,
    iterations: int = 10,
    weight: float = 0.5,
) -> common.PldaModel:
    """Interpolate with a model trained on AHC clusters of unlabelled data.

    Every recording is clustered on its own; clusters of different
    recordings are always different speakers.
    """
    vectors = []
    labels = []
    n_clusters = 0
    for rec in recordings:
        x = common.as_matrix(rec)
        if len(x) == 0:
            continue
        _check_dim(model, x)
        rec_labels = ahc.upgma_cluster(llr_matrix(model, x), threshold)
        vectors.append(x)
        labels.append(rec_labels + n_clusters)
        n_clusters += int(rec_labels.max()) + 1

    if n_clusters < 2:
        logger.warning(f"adaptation data gave {n_clusters} cluster(s), keeping the input model")
        return model
    x = np.vstack(vectors)
    try:
        adapted = train_em(x, np.concatenate(labels), iterations)
    except common.TrainingError as ex:
        logger.warning(f"adaptation training failed ({ex}), keeping the input model")
        return model
    logger.info(
        f"adapted PLDA on {len(x)} vectors from {len(vectors)} recording(s) in {n_clusters} clusters"
    )
    return interpolate(model, adapted, weight)


def save_model(model: common.PldaModel, path: corpus_io.PathLike) -> None:
    corpus_io.write_matrix_blocks(
        path, [model.mean, model.across_class, model.within_class], header=[model.dim]
    )


def load_model(path: corpus_io.PathLike) -> common.PldaModel:
    header, (mean, across, within) = corpus_io.read_matrix_blocks(
        path, lambda hdr: [(1, hdr[0]), (hdr[0], hdr[0]), (hdr[0], hdr[0])], header_size=1
    )
    model = common.PldaModel(mean[0], across, within)
    if not (np.allclose(across, across.T, atol=1e-10) and np.allclose(within, within.T, atol=1e-10)):
        raise common.FormatError("PLDA covariances are not symmetric", str(path))
    if not utils.is_positive_definite(within):
        raise common.FormatError("within-class covariance is not positive definite", str(path))
    return model
