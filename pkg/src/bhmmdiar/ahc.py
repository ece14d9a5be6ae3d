# This file is part of the bhmmdiar project
# https://github.com/bhmmdiar/bhmmdiar
# (C) 2019 bhmmdiar contributors
#
# SPDX-License-Identifier:    MIT
"""Average linkage AHC with unsupervised two-Gaussian threshold calibration."""

import logging
import warnings
import typing as typ

import numpy as np
import scipy.cluster.hierarchy as sch
from sklearn.exceptions import ConvergenceWarning
from sklearn.mixture import GaussianMixture

from . import utils
from . import common


logger = logging.getLogger(__name__)


MIN_CALIBRATION_SCORES = 10

CALIBRATION_TOL = 1e-9

CALIBRATION_MAX_ITER = 1000


# Above this many scores the GMM is fitted to evenly spaced order
# statistics of the scores instead of every score.
CALIBRATION_SKETCH_SIZE = 20000


class CalibrationFit(typ.NamedTuple):

    mu_low: float
    mu_high: float
    sigma: float
    w_low: float
    w_high: float


def calibration_scores(sim: common.SimilarityMatrix) -> np.ndarray:
    """Each unordered pair once, diagonal excluded."""
    rows, cols = np.triu_indices(sim.n, k=1)
    return sim.scores[rows, cols]


def quantile_sketch(scores: np.ndarray, size: int = CALIBRATION_SKETCH_SIZE) -> np.ndarray:
    """Scores at the midpoints of size equal probability bins.

    Deterministic, and the empirical distribution of the result is within
    1 / size of the input in Kolmogorov distance.
    """
    if len(scores) <= size:
        return scores
    ranks = ((np.arange(size) + 0.5) * (len(scores) / size)).astype(int)
    return np.sort(scores)[ranks]


def fit_two_gaussians(scores: typ.Sequence[float]) -> CalibrationFit:
    """Two component, shared variance GMM fitted to the scores by EM.

    Large score sets are reduced by :func:`quantile_sketch` first.
    """
    arr = np.asarray(scores, dtype=float).ravel()
    if len(arr) < MIN_CALIBRATION_SCORES:
        raise common.InsufficientDataError(
            f"calibration needs at least {MIN_CALIBRATION_SCORES} scores, got {len(arr)}"
        )
    if not np.all(np.isfinite(arr)):
        raise common.DegenerateInputError("calibration scores must be finite")
    if np.ptp(arr) == 0:
        raise common.DegenerateInputError("all calibration scores are equal")

    low_init, high_init = np.percentile(arr, [10, 90])
    if low_init == high_init:
        low_init, high_init = arr.min(), arr.max()
    sample = quantile_sketch(arr)
    gmm = GaussianMixture(
        n_components=2,
        covariance_type="tied",
        tol=CALIBRATION_TOL,
        max_iter=CALIBRATION_MAX_ITER,
        reg_covar=1e-12,
        weights_init=[0.5, 0.5],
        means_init=[[low_init], [high_init]],
        precisions_init=[[1.0 / arr.var()]],
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        gmm.fit(sample[:, np.newaxis])
    if not gmm.converged_:
        logger.warning(f"calibration GMM did not converge in {CALIBRATION_MAX_ITER} iterations")

    means = gmm.means_.ravel()
    order = np.argsort(means)
    w_low = float(gmm.weights_[order[0]])
    return CalibrationFit(
        mu_low=float(means[order[0]]),
        mu_high=float(means[order[1]]),
        sigma=float(np.sqrt(gmm.covariances_.ravel()[0])),
        w_low=w_low,
        w_high=1.0 - w_low,
    )


def calibration_threshold(fit: CalibrationFit, bias: float = 0.0) -> float:
    """Score at which both components have posterior 0.5, plus bias."""
    spread = fit.mu_high - fit.mu_low
    if spread == 0:
        raise common.DegenerateInputError("calibration components have equal means")
    midpoint = (fit.mu_low + fit.mu_high) / 2
    return midpoint + fit.sigma ** 2 * np.log(fit.w_low / fit.w_high) / spread + bias


def calibrated_threshold(sim: common.SimilarityMatrix, bias: float = 0.0) -> float:
    fit = fit_two_gaussians(calibration_scores(sim))
    threshold = calibration_threshold(fit, bias)
    logger.debug(
        f"calibration mu=({fit.mu_low:.3f}, {fit.mu_high:.3f}) sigma={fit.sigma:.3f} "
        f"w_low={fit.w_low:.3f} -> threshold {threshold:.3f}"
    )
    return threshold


def upgma_cluster(sim: common.SimilarityMatrix, stop_threshold: float) -> common.ClusterLabels:
    """Unweighted average linkage clustering.

    Clusters are merged while the best average cross-cluster similarity is
    strictly above stop_threshold. Labels are numbered by first appearance.
    """
    n = sim.n
    if n <= 1:
        return np.zeros(n, dtype=int)

    upper = calibration_scores(sim)
    if not np.all(np.isfinite(upper)):
        raise common.DegenerateInputError("similarity matrix has non-finite off-diagonal entries")

    # Average linkage commutes with the affine map s -> offset - s, which
    # turns similarities into the non-negative distances scipy expects.
    offset = float(upper.max()) + 1.0
    dist = offset - upper
    linkage = sch.linkage(dist, method="average")
    cut = np.nextafter(offset - stop_threshold, -np.inf)
    if cut < 0:
        return np.arange(n)
    raw = sch.fcluster(linkage, t=cut, criterion="distance")
    return utils.relabel_first_appearance(raw)


def average_similarities(mats: typ.Sequence[common.SimilarityMatrix]) -> common.SimilarityMatrix:
    if not mats:
        raise common.InsufficientDataError("no similarity matrices to average")
    n = mats[0].n
    for mat in mats:
        if mat.n != n:
            raise common.DimensionError(f"cannot average {n}x{n} with {mat.n}x{mat.n} matrices")
    if len(mats) == 1:
        return mats[0]

    off_diag = ~np.eye(n, dtype=bool)
    mean = np.full((n, n), np.inf)
    mean[off_diag] = np.mean([mat.scores[off_diag] for mat in mats], axis=0)
    return common.SimilarityMatrix(mean)
