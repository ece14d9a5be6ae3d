# This file is part of the bhmmdiar project
# https://github.com/bhmmdiar/bhmmdiar
# (C) 2019 bhmmdiar contributors
#
# SPDX-License-Identifier:    MIT
"""Overlap detection on embeddings and the two closest speakers relabeling."""

import math
import logging
import typing as typ

import numpy as np
import scipy.optimize as spo
from scipy.special import expit

from . import common
from . import corpus_io


logger = logging.getLogger(__name__)


# Time resolution of the relabeling, in seconds.
RELABEL_STEP = 0.01

LOGREG_GTOL = 1e-8


class LogRegModel(typ.NamedTuple):

    weights: np.ndarray
    bias: float


class OverlapResult(typ.NamedTuple):

    hypothesis: common.DiarizationHypothesis
    skipped_regions: int


def _design(vectors: typ.Any) -> np.ndarray:
    x = common.as_matrix(vectors)
    return np.hstack([x, np.ones((len(x), 1))])


def train_logreg(vectors: typ.Any, labels: typ.Sequence[int], l2: float = 1.0) -> LogRegModel:
    """L2 regularized logistic regression, the bias is not penalized."""
    if l2 < 0:
        raise common.ConfigError(f"l2 must be non-negative, got {l2}")
    xb = _design(vectors)
    y = np.asarray(labels, dtype=float).ravel()
    if len(y) != len(xb):
        raise common.DimensionError(f"{len(xb)} vectors but {len(y)} labels")
    if not np.all((y == 0) | (y == 1)):
        raise common.TrainingError("overlap labels must be 0 or 1")
    if y.min() == y.max():
        raise common.TrainingError("overlap training needs both classes")

    dim = xb.shape[1]
    penalty = np.full(dim, float(l2))
    penalty[-1] = 0.0

    def objective(theta: np.ndarray) -> float:
        z = xb @ theta
        return float(np.sum(np.logaddexp(0, z) - y * z) + 0.5 * np.sum(penalty * theta ** 2))

    def gradient(theta: np.ndarray) -> np.ndarray:
        return xb.T @ (expit(xb @ theta) - y) + penalty * theta

    def hessian(theta: np.ndarray) -> np.ndarray:
        prob = expit(xb @ theta)
        return (xb * (prob * (1 - prob))[:, np.newaxis]).T @ xb + np.diag(penalty)

    res = spo.minimize(
        objective,
        np.zeros(dim),
        jac=gradient,
        hess=hessian,
        method="trust-exact",
        options={"gtol": LOGREG_GTOL, "maxiter": 1000},
    )
    if not np.all(np.isfinite(res.x)):
        raise common.NumericalError(f"logistic regression diverged on {xb.shape} data with l2={l2}")
    if not res.success:
        logger.warning(f"logistic regression stopped early: {res.message}")
    return LogRegModel(res.x[:-1].copy(), float(res.x[-1]))


def overlap_probability(model: LogRegModel, vectors: typ.Any) -> np.ndarray:
    x = common.as_matrix(vectors)
    if x.shape[1] != len(model.weights):
        raise common.DimensionError(f"overlap model expects dimension {len(model.weights)}, got {x.shape[1]}")
    return expit(x @ model.weights + model.bias)


def detect(model: LogRegModel, vectors: typ.Any, threshold: float) -> np.ndarray:
    return overlap_probability(model, vectors) > threshold


def overlap_training_labels(
    spans: typ.Sequence[corpus_io.Span],
    reference: common.DiarizationHypothesis,
) -> np.ndarray:
    """1 for spans of which more than half contains speech of two or more reference speakers."""
    bounds = sorted({b for seg in reference.segments for b in (seg.onset, seg.offset)})
    overlapped: typ.List[common.SpeechRegion] = []
    for start, end in zip(bounds[:-1], bounds[1:]):
        mid = (start + end) / 2
        active = {seg.speaker for seg in reference.segments if seg.onset <= mid < seg.offset}
        if len(active) >= 2:
            overlapped.append(common.SpeechRegion(start, end))
    overlapped = corpus_io.merge_regions(overlapped)

    labels = np.zeros(len(spans), dtype=int)
    for idx, (onset, duration) in enumerate(spans):
        offset = onset + duration
        covered = sum(max(0.0, min(offset, reg.offset) - max(onset, reg.onset)) for reg in overlapped)
        labels[idx] = int(covered > duration / 2)
    return labels


def flags_to_regions(
    spans: typ.Sequence[corpus_io.Span],
    flags: typ.Sequence[bool],
) -> typ.List[common.SpeechRegion]:
    if len(spans) != len(flags):
        raise common.DimensionError(f"{len(spans)} spans but {len(flags)} flags")
    regions = [
        common.SpeechRegion(onset, onset + duration)
        for (onset, duration), flag in zip(spans, flags)
        if flag
    ]
    return corpus_io.merge_regions(regions)


def _edge_distance(instant: float, seg: common.SpeakerSegment) -> float:
    if instant < seg.onset:
        return seg.onset - instant
    if instant >= seg.offset:
        return instant - seg.offset
    return 0.0


def _added_speakers(instant: float, segments: typ.Sequence[common.SpeakerSegment]) -> typ.List[str]:
    """Speakers to add at an instant so that exactly two are active."""
    current = [seg.speaker for seg in segments if seg.onset <= instant < seg.offset]
    by_distance = sorted(segments, key=lambda seg: _edge_distance(instant, seg))
    if current:
        for seg in by_distance:
            if seg.speaker != current[0]:
                return [seg.speaker]
        return []
    nearest = by_distance[0].speaker
    for seg in by_distance:
        if seg.speaker != nearest:
            return [nearest, seg.speaker]
    return [nearest]


def assign_two_closest(
    hyp: common.DiarizationHypothesis,
    overlap_regions: typ.Sequence[common.SpeechRegion],
) -> OverlapResult:
    """Label overlap regions with the current speaker and the nearest other speaker."""
    if len(hyp.speakers) < 2:
        if overlap_regions:
            logger.warning(
                f"{hyp.recording_id}: {len(overlap_regions)} overlap region(s) skipped, "
                "fewer than two speakers"
            )
        return OverlapResult(hyp, len(overlap_regions))

    segments = sorted(hyp.segments, key=lambda s: (s.onset, s.speaker))
    added: typ.List[common.SpeakerSegment] = []
    for region in overlap_regions:
        n_cells = max(1, math.ceil(round((region.offset - region.onset) / RELABEL_STEP, 9)))
        edges = np.linspace(region.onset, region.offset, n_cells + 1)
        # speaker -> start of its open run
        open_runs: typ.Dict[str, float] = {}
        for start, end in zip(edges[:-1], edges[1:]):
            active = set(_added_speakers((start + end) / 2, segments))
            for speaker in sorted(open_runs):
                if speaker not in active:
                    run_start = open_runs.pop(speaker)
                    added.append(common.SpeakerSegment(run_start, float(start) - run_start, speaker))
            for speaker in active:
                open_runs.setdefault(speaker, float(start))
        for speaker, run_start in open_runs.items():
            added.append(common.SpeakerSegment(run_start, float(region.offset) - run_start, speaker))

    out = sorted(hyp.segments + added, key=lambda s: (s.onset, s.speaker))
    logger.debug(f"{hyp.recording_id}: added {len(added)} overlap segment(s)")
    return OverlapResult(common.DiarizationHypothesis(hyp.recording_id, out), 0)


def save_logreg(model: LogRegModel, path: corpus_io.PathLike) -> None:
    corpus_io.write_csv_rows(path, [[model.bias] + list(model.weights)])


def load_logreg(path: corpus_io.PathLike) -> LogRegModel:
    rows = corpus_io.read_csv_rows(path)
    if len(rows) != 1 or len(rows[0][1]) < 2:
        raise common.FormatError("expected one line with bias and weights", str(path))
    values = np.array(rows[0][1])
    if not np.all(np.isfinite(values)):
        raise common.FormatError("overlap model values must be finite", str(path))
    return LogRegModel(values[1:], float(values[0]))
