# This file is part of the bhmmdiar project
# https://github.com/bhmmdiar/bhmmdiar
# (C) 2019 bhmmdiar contributors
#
# SPDX-License-Identifier:    MIT
import logging
import typing as typ

import numpy as np
import scipy.linalg as spl

from . import common


logger = logging.getLogger(__name__)


def symmetrize(mat: np.ndarray) -> np.ndarray:
    return (mat + mat.T) / 2


def logdet(mat: np.ndarray) -> float:
    """Log determinant of a symmetric positive definite matrix."""
    return 2 * float(np.sum(np.log(np.diag(spl.cholesky(mat)))))


def is_positive_definite(mat: np.ndarray) -> bool:
    try:
        spl.cholesky(mat)
        return True
    except (spl.LinAlgError, ValueError):
        return False


def regularize(cov: np.ndarray, rel_eps: float, what: str = "covariance") -> np.ndarray:
    """Add rel_eps * trace / D to the diagonal of a covariance matrix.

    A zero trace falls back to an absolute rel_eps so that the result is
    always positive definite.
    """
    dim = cov.shape[0]
    trace = float(np.trace(cov))
    eps = rel_eps * trace / dim if trace > 0 else rel_eps
    logger.debug(f"Regularizing {what} with {eps:.3g} on the diagonal")
    return cov + eps * np.eye(dim)


def ensure_positive_definite(cov: np.ndarray, rel_eps: float, what: str) -> np.ndarray:
    cov = symmetrize(cov)
    if is_positive_definite(cov):
        return cov
    logger.warning(f"{what} is not positive definite, regularizing")
    cov = regularize(cov, rel_eps, what)
    if not is_positive_definite(cov):
        raise common.NumericalError(f"{what} stays singular after regularization")
    return cov


def fix_signs(vecs: np.ndarray) -> np.ndarray:
    """Flip columns so that the first nonzero entry of each is positive."""
    vecs = vecs.copy()
    for col in range(vecs.shape[1]):
        nonzero = np.flatnonzero(np.abs(vecs[:, col]) > 1e-12)
        if len(nonzero) and vecs[nonzero[0], col] < 0:
            vecs[:, col] = -vecs[:, col]
    return vecs


def relabel_first_appearance(labels: typ.Sequence[int]) -> common.ClusterLabels:
    """Map arbitrary ids to 0..K-1 in order of first appearance."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        return np.zeros(0, dtype=int)
    uniq, first_idx, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(len(uniq), dtype=int)
    rank[np.argsort(first_idx)] = np.arange(len(uniq))
    return rank[inverse.ravel()]
