# This file is part of the bhmmdiar project
# https://github.com/bhmmdiar/bhmmdiar
# (C) 2019 bhmmdiar contributors
#
# SPDX-License-Identifier:    MIT
"""Diarization error rate and Jaccard error rate with optimal speaker mapping."""

import io
import logging
import typing as typ

import numpy as np
import scipy.optimize as spo

from . import common


logger = logging.getLogger(__name__)


TOTAL_ROW_ID = "TOTAL"

REPORT_HEADER = "# jer_averaging=macro\n"

REPORT_COLUMNS = ("recording_id", "der", "miss", "fa", "confusion", "jer")


class DerResult(typ.NamedTuple):
    """Error rates as fractions of the scored reference speech time."""

    der: float
    miss: float
    fa: float
    confusion: float


class ScoreRow(typ.NamedTuple):

    recording_id: str
    der: float
    miss: float
    fa: float
    confusion: float
    jer: float


class _ErrorTimes(typ.NamedTuple):

    reference: float
    miss: float
    fa: float
    confusion: float


class _Timeline(typ.NamedTuple):
    """Elementary intervals of the time axis and per-speaker activity on them."""

    durations: np.ndarray
    ref_active: np.ndarray
    hyp_active: np.ndarray
    ref_speakers: typ.List[str]
    hyp_speakers: typ.List[str]


def _activity(
    segments: typ.Sequence[common.SpeakerSegment], speakers: typ.List[str], mids: np.ndarray
) -> np.ndarray:
    active = np.zeros((len(speakers), len(mids)), dtype=bool)
    index = {name: idx for idx, name in enumerate(speakers)}
    for seg in segments:
        active[index[seg.speaker]] |= (mids >= seg.onset) & (mids < seg.offset)
    return active


def _no_score_mask(
    ref: common.DiarizationHypothesis,
    mids: np.ndarray,
    collar: float,
    score_overlaps: bool,
) -> np.ndarray:
    excluded = np.zeros(len(mids), dtype=bool)
    if collar > 0:
        for seg in ref.segments:
            for edge in (seg.onset, seg.offset):
                excluded |= (mids >= edge - collar) & (mids < edge + collar)
    if not score_overlaps:
        ref_count = _activity(ref.segments, ref.speakers, mids).sum(axis=0)
        excluded |= ref_count >= 2
    return excluded


def _timeline(
    ref: common.DiarizationHypothesis,
    hyp: common.DiarizationHypothesis,
    collar: float = 0.0,
    score_overlaps: bool = True,
) -> _Timeline:
    points = {b for seg in ref.segments + hyp.segments for b in (seg.onset, seg.offset)}
    if collar > 0:
        points |= {b + d for seg in ref.segments for b in (seg.onset, seg.offset) for d in (-collar, collar)}
    bounds = np.array(sorted(points), dtype=float)
    if len(bounds) < 2:
        bounds = np.zeros(2)
    mids = (bounds[:-1] + bounds[1:]) / 2
    durations = np.diff(bounds)

    scored = ~_no_score_mask(ref, mids, collar, score_overlaps)
    ref_speakers = ref.speakers
    hyp_speakers = hyp.speakers
    return _Timeline(
        durations[scored],
        _activity(ref.segments, ref_speakers, mids)[:, scored],
        _activity(hyp.segments, hyp_speakers, mids)[:, scored],
        ref_speakers,
        hyp_speakers,
    )


def _optimal_mapping(tl: _Timeline) -> typ.Dict[int, int]:
    """Reference -> hypothesis speaker index maximizing the co-occurrence time."""
    if not tl.ref_speakers or not tl.hyp_speakers:
        return {}
    cooc = (tl.ref_active * tl.durations) @ tl.hyp_active.T.astype(float)
    rows, cols = spo.linear_sum_assignment(cooc, maximize=True)
    return {int(r): int(c) for r, c in zip(rows, cols) if cooc[r, c] > 0}


def _error_times(tl: _Timeline) -> _ErrorTimes:
    mapping = _optimal_mapping(tl)
    n_ref = tl.ref_active.sum(axis=0)
    n_hyp = tl.hyp_active.sum(axis=0)
    n_correct = np.zeros(len(tl.durations))
    for ref_idx, hyp_idx in mapping.items():
        n_correct += tl.ref_active[ref_idx] & tl.hyp_active[hyp_idx]

    reference = float(np.sum(tl.durations * n_ref))
    miss = float(np.sum(tl.durations * np.maximum(n_ref - n_hyp, 0)))
    fa = float(np.sum(tl.durations * np.maximum(n_hyp - n_ref, 0)))
    confusion = float(np.sum(tl.durations * (np.minimum(n_ref, n_hyp) - n_correct)))
    return _ErrorTimes(reference, miss, fa, confusion)


def _rates(recording_id: str, times: _ErrorTimes) -> DerResult:
    if times.reference <= 0:
        raise common.UndefinedMetricError(f"{recording_id}: no scored reference speech")
    return DerResult(
        (times.miss + times.fa + times.confusion) / times.reference,
        times.miss / times.reference,
        times.fa / times.reference,
        times.confusion / times.reference,
    )


def _check_pair(ref: common.DiarizationHypothesis, hyp: common.DiarizationHypothesis) -> None:
    if ref.recording_id != hyp.recording_id:
        raise common.DataError(f"cannot score {hyp.recording_id} against reference {ref.recording_id}")


def der(
    ref: common.DiarizationHypothesis,
    hyp: common.DiarizationHypothesis,
    collar: float = 0.0,
    score_overlaps: bool = True,
) -> DerResult:
    _check_pair(ref, hyp)
    if collar < 0:
        raise common.ConfigError(f"collar must be non-negative, got {collar}")
    return _rates(ref.recording_id, _error_times(_timeline(ref, hyp, collar, score_overlaps)))


def jer(ref: common.DiarizationHypothesis, hyp: common.DiarizationHypothesis) -> float:
    """Mean over reference speakers of 1 - IoU with the mapped hypothesis speaker."""
    _check_pair(ref, hyp)
    tl = _timeline(ref, hyp)
    if not tl.ref_speakers or np.sum(tl.durations * tl.ref_active.sum(axis=0)) <= 0:
        raise common.UndefinedMetricError(f"{ref.recording_id}: no reference speech")

    mapping = _optimal_mapping(tl)
    errors = []
    for ref_idx in range(len(tl.ref_speakers)):
        if ref_idx not in mapping:
            errors.append(1.0)
            continue
        ref_act = tl.ref_active[ref_idx]
        hyp_act = tl.hyp_active[mapping[ref_idx]]
        inter = float(np.sum(tl.durations[ref_act & hyp_act]))
        union = float(np.sum(tl.durations[ref_act | hyp_act]))
        errors.append(1.0 - inter / union)
    return float(np.mean(errors))


def score_corpus(
    refs: typ.Dict[str, common.DiarizationHypothesis],
    hyps: typ.Dict[str, common.DiarizationHypothesis],
    collar: float = 0.0,
    score_overlaps: bool = True,
) -> typ.List[ScoreRow]:
    """Per recording rows in sorted order followed by the TOTAL row.

    DER components of the TOTAL row are weighted by scored reference time,
    its JER is the mean of the recording JERs.
    """
    if collar < 0:
        raise common.ConfigError(f"collar must be non-negative, got {collar}")
    if not refs:
        raise common.EmptyInputError("reference contains no recordings")
    for rec_id in sorted(set(hyps) - set(refs)):
        logger.warning(f"hypothesis recording {rec_id} has no reference, ignored")

    rows: typ.List[ScoreRow] = []
    totals = np.zeros(4)
    for rec_id in sorted(refs):
        ref = refs[rec_id]
        hyp = hyps.get(rec_id)
        if hyp is None:
            logger.warning(f"{rec_id}: missing from hypothesis, scored as all miss")
            hyp = common.DiarizationHypothesis(rec_id, [])
        times = _error_times(_timeline(ref, hyp, collar, score_overlaps))
        rate = _rates(rec_id, times)
        totals += np.array(times)
        rows.append(ScoreRow(rec_id, rate.der, rate.miss, rate.fa, rate.confusion, jer(ref, hyp)))

    total = _rates(TOTAL_ROW_ID, _ErrorTimes(*totals))
    mean_jer = float(np.mean([row.jer for row in rows]))
    rows.append(ScoreRow(TOTAL_ROW_ID, total.der, total.miss, total.fa, total.confusion, mean_jer))
    return rows


def _format_row(row: ScoreRow) -> str:
    values = ",".join(f"{100 * val:.3f}" for val in row[1:])
    return f"{row.recording_id},{values}\n"


def write_report(rows: typ.Sequence[ScoreRow], out: typ.Any) -> None:
    """CSV report with rates in percent, out is a path or a text stream."""
    if not hasattr(out, "write"):
        with io.open(str(out), mode="w", encoding="utf-8") as fh:
            write_report(rows, fh)
        return
    out.write(REPORT_HEADER)
    out.write(",".join(REPORT_COLUMNS) + "\n")
    for row in rows:
        out.write(_format_row(row))
