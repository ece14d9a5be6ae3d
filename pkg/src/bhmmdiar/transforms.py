# This file is part of the bhmmdiar project
# https://github.com/bhmmdiar/bhmmdiar
# (C) 2019 bhmmdiar contributors
#
# SPDX-License-Identifier:    MIT
"""Centering, whitening, length normalization, PCA and PLDA derived LDA."""

import logging
import typing as typ

import numpy as np
import scipy.linalg as spl
from sklearn.decomposition import PCA

from . import utils
from . import common
from . import corpus_io


logger = logging.getLogger(__name__)


WHITEN_REL_EPS = 1e-6

LDA_REL_EPS = 1e-8

# Fraction comparisons tolerate rounding of the cumulative variance ratio.
FRACTION_TOL = 1e-10


def identity(dim: int) -> common.AffineTransform:
    return common.AffineTransform(np.zeros(dim), np.eye(dim))


def apply_transform(t: common.AffineTransform, vectors: typ.Any) -> np.ndarray:
    arr = np.asarray(vectors, dtype=float)
    if arr.shape[-1] != t.in_dim:
        raise common.DimensionError(f"transform expects dimension {t.in_dim}, got {arr.shape[-1]}")
    return (arr - t.shift) @ t.matrix.T


def estimate_center_whiten(vectors: typ.Any) -> common.AffineTransform:
    """Centering followed by symmetric (ZCA) whitening."""
    x = common.as_matrix(vectors)
    if len(x) < 2:
        raise common.InsufficientDataError(f"whitening needs at least 2 vectors, got {len(x)}")

    mean = x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x, rowvar=False, bias=True))
    cov = utils.regularize(cov, WHITEN_REL_EPS, "whitening covariance")
    evals, evecs = spl.eigh(cov)
    matrix = utils.symmetrize((evecs / np.sqrt(evals)) @ evecs.T)
    return common.AffineTransform(mean, matrix)


def length_normalize(vectors: typ.Any) -> np.ndarray:
    """Scale each vector to norm sqrt(D)."""
    arr = np.asarray(vectors, dtype=float)
    norms = np.linalg.norm(arr, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise common.DegenerateInputError("cannot length-normalize a zero vector")
    return arr * (np.sqrt(arr.shape[-1]) / norms)


def per_recording_pca(vectors: typ.Any, preserved_fraction: float) -> common.AffineTransform:
    """Projection onto the fewest principal directions keeping preserved_fraction of the variance."""
    if not 0 < preserved_fraction <= 1:
        raise common.ConfigError(f"preserved_fraction must be in (0, 1], got {preserved_fraction}")
    x = common.as_matrix(vectors)
    if len(x) < 2:
        raise common.InsufficientDataError(f"PCA needs at least 2 vectors, got {len(x)}")

    pca = PCA(svd_solver="full").fit(x)
    ratios = pca.explained_variance_ratio_
    if not np.all(np.isfinite(ratios)) or ratios.sum() <= 0:
        # All vectors identical: keep the first direction.
        n_keep = 1
    else:
        cumulative = np.cumsum(ratios)
        n_keep = int(np.argmax(cumulative >= preserved_fraction - FRACTION_TOL)) + 1
        if cumulative[-1] < preserved_fraction - FRACTION_TOL:
            n_keep = len(cumulative)

    components = utils.fix_signs(pca.components_[:n_keep].T).T
    logger.debug(f"PCA keeps {n_keep} of {x.shape[1]} dimensions")
    return common.AffineTransform(pca.mean_.copy(), components)


def _deterministic_order(evals: np.ndarray, evecs: np.ndarray) -> np.ndarray:
    scale = max(float(np.max(np.abs(evals))), 1e-300)
    rounded = np.round(-evals / scale, 10)
    # np.lexsort: last key is primary
    keys = tuple(evecs[::-1]) + (rounded,)
    return np.lexsort(keys)


def lda_from_plda(model: common.PldaModel, out_dim: int) -> common.AffineTransform:
    """LDA projection from the PLDA covariances.

    Rows are the leading generalized eigenvectors of (across, within),
    scaled so that the projected within-class covariance is identity.
    """
    dim = model.dim
    if not 1 <= out_dim <= dim:
        raise common.DimensionError(f"LDA dimension {out_dim} not in [1, {dim}]")

    within = utils.symmetrize(model.within_class)
    if not utils.is_positive_definite(within):
        logger.warning("within-class covariance is singular, regularizing")
        within = utils.regularize(within, LDA_REL_EPS, "within-class covariance")
    across = utils.symmetrize(model.across_class)

    evals, evecs = spl.eigh(across, within)
    evecs = utils.fix_signs(evecs)
    order = _deterministic_order(evals, evecs)
    matrix = evecs[:, order[:out_dim]].T
    return common.AffineTransform(model.mean.copy(), matrix)


def save_transform(t: common.AffineTransform, path: corpus_io.PathLike) -> None:
    corpus_io.write_matrix_blocks(path, [t.shift, t.matrix])


def load_transform(path: corpus_io.PathLike) -> common.AffineTransform:
    rows = corpus_io.read_csv_rows(path)
    if len(rows) < 2:
        raise common.FormatError("expected shift and matrix rows", str(path))
    in_dim = len(rows[0][1])
    _, (shift, matrix) = corpus_io.read_matrix_blocks(
        path, lambda header: [(1, in_dim), (len(rows) - 1, in_dim)]
    )
    return common.AffineTransform(shift[0], matrix)
