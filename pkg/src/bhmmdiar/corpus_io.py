# This file is part of the bhmmdiar project
# https://github.com/bhmmdiar/bhmmdiar
# (C) 2019 bhmmdiar contributors
#
# SPDX-License-Identifier:    MIT
"""Reading and writing of embeddings, VAD labels, RTTM and model files."""

import io
import csv
import math
import logging
import typing as typ
import collections

import numpy as np
import pathlib2 as pl

from . import common


logger = logging.getLogger(__name__)


PathLike = typ.Union[str, pl.Path]

Span = typ.Tuple[float, float]

# Regions closer than this are merged when a VAD file is loaded.
VAD_MERGE_GAP = 1e-6

RTTM_FIELD_COUNT = 10

RTTM_TICKS_PER_SECOND = 1000

RTTM_LINE_FMT = "SPEAKER {rec} 1 {onset:.3f} {duration:.3f} <NA> <NA> {speaker} <NA> <NA>\n"


def _fmt_float(val: float) -> str:
    return repr(float(val))


def read_csv_rows(path: PathLike) -> typ.List[typ.Tuple[int, typ.List[float]]]:
    """Parse a headerless numeric CSV file.

    Returns (lineno, values) for every nonempty line.
    """
    path = pl.Path(path)
    rows: typ.List[typ.Tuple[int, typ.List[float]]] = []
    with io.open(str(path), mode="r", encoding="utf-8") as fh:
        for lineno, fields in enumerate(csv.reader(fh), start=1):
            if not fields or all(not field.strip() for field in fields):
                continue
            try:
                values = [float(field) for field in fields]
            except ValueError:
                raise common.ParseError(f"non-numeric field in {fields!r}", str(path), lineno)
            rows.append((lineno, values))
    return rows


def write_csv_rows(path: PathLike, rows: typ.Iterable[typ.Iterable[float]]) -> None:
    path = pl.Path(path)
    with io.open(str(path), mode="w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(",".join(_fmt_float(val) for val in row) + "\n")


def write_matrix_blocks(
    path: PathLike,
    blocks: typ.Sequence[np.ndarray],
    header: typ.Sequence[int] = None,
) -> None:
    """Write an optional integer header line followed by the rows of each block.

    1-D blocks are written as a single row.
    """
    path = pl.Path(path)
    with io.open(str(path), mode="w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(",".join(str(int(val)) for val in header) + "\n")
        for block in blocks:
            block = np.atleast_2d(np.asarray(block, dtype=float))
            for row in block:
                fh.write(",".join(_fmt_float(val) for val in row) + "\n")


def read_matrix_blocks(
    path: PathLike,
    block_shapes: typ.Callable[[typ.List[int]], typ.Sequence[typ.Tuple[int, int]]],
    header_size: int = 0,
) -> typ.Tuple[typ.List[int], typ.List[np.ndarray]]:
    """Inverse of write_matrix_blocks.

    block_shapes receives the parsed header and returns the (rows, cols) of
    each block, which lets the header determine the layout.
    """
    rows = read_csv_rows(path)
    header: typ.List[int] = []
    if header_size:
        if not rows:
            raise common.EmptyInputError(f"{path}: missing header")
        lineno, header_vals = rows[0]
        if len(header_vals) != header_size or any(val != int(val) for val in header_vals):
            raise common.FormatError(
                f"expected {header_size} integers in header", str(path), lineno
            )
        header = [int(val) for val in header_vals]
        rows = rows[1:]

    shapes = block_shapes(header)
    expected_rows = sum(n_rows for n_rows, _ in shapes)
    if len(rows) != expected_rows:
        raise common.FormatError(f"expected {expected_rows} rows, got {len(rows)}", str(path))

    blocks: typ.List[np.ndarray] = []
    offset = 0
    for n_rows, n_cols in shapes:
        block_rows = rows[offset:offset + n_rows]
        for lineno, values in block_rows:
            if len(values) != n_cols:
                raise common.FormatError(
                    f"expected {n_cols} values, got {len(values)}", str(path), lineno
                )
        blocks.append(np.array([values for _, values in block_rows], dtype=float).reshape(n_rows, n_cols))
        offset += n_rows
    return header, blocks


# Embeddings


def read_embeddings(path: PathLike, recording_id: str = None) -> common.RecordingEmbeddings:
    """Read `onset,duration,v0,...,v{D-1}` lines into sorted segments."""
    path = pl.Path(path)
    rows = read_csv_rows(path)
    if not rows:
        raise common.EmptyInputError(f"{path}: no embeddings")

    dim: typ.Optional[int] = None
    segments: typ.List[common.SegmentEmbedding] = []
    for lineno, values in rows:
        if len(values) < 3:
            raise common.ParseError(
                f"expected onset, duration and at least one value, got {len(values)} fields",
                str(path),
                lineno,
            )
        onset, duration = values[0], values[1]
        vector = np.array(values[2:], dtype=float)
        if dim is None:
            dim = len(vector)
        elif len(vector) != dim:
            raise common.FormatError(
                f"inconsistent dimension {len(vector)}, expected {dim}", str(path), lineno
            )
        if not (math.isfinite(onset) and onset >= 0):
            raise common.FormatError(f"invalid onset {onset}", str(path), lineno)
        if not (math.isfinite(duration) and duration > 0):
            raise common.FormatError(f"invalid duration {duration}", str(path), lineno)
        if not np.all(np.isfinite(vector)):
            raise common.FormatError("non-finite embedding value", str(path), lineno)
        segments.append(common.SegmentEmbedding(onset, duration, vector))

    segments.sort(key=lambda seg: (seg.onset, seg.duration))
    assert dim is not None
    return common.RecordingEmbeddings(recording_id or path.stem, dim, segments)


def write_embeddings(rec: common.RecordingEmbeddings, path: PathLike) -> None:
    write_csv_rows(path, (
        [seg.onset, seg.duration] + seg.vector.tolist()
        for seg in rec.segments
    ))


def read_frame_features(path: PathLike) -> np.ndarray:
    """Read one frame per line; returns a (T, F) matrix."""
    rows = read_csv_rows(path)
    if not rows:
        raise common.EmptyInputError(f"{path}: no frames")
    dim = len(rows[0][1])
    for lineno, values in rows:
        if len(values) != dim:
            raise common.FormatError(
                f"inconsistent dimension {len(values)}, expected {dim}", str(path), lineno
            )
    frames = np.array([values for _, values in rows], dtype=float)
    if not np.all(np.isfinite(frames)):
        raise common.FormatError("non-finite frame feature", str(path))
    return frames


# VAD


def merge_regions(regions: typ.Iterable[common.SpeechRegion]) -> typ.List[common.SpeechRegion]:
    merged: typ.List[common.SpeechRegion] = []
    for region in sorted(regions):
        if merged and region.onset - merged[-1].offset < VAD_MERGE_GAP:
            last = merged[-1]
            merged[-1] = common.SpeechRegion(last.onset, max(last.offset, region.offset))
        else:
            merged.append(region)
    return merged


def read_vad(path: PathLike) -> typ.List[common.SpeechRegion]:
    """Read `onset offset speech` lines, merging overlapping/adjacent regions."""
    path = pl.Path(path)
    regions: typ.List[common.SpeechRegion] = []
    with io.open(str(path), mode="r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise common.ParseError(f"expected 3 fields, got {len(parts)}", str(path), lineno)
            if parts[2] != "speech":
                raise common.FormatError(f"unknown label '{parts[2]}'", str(path), lineno)
            try:
                onset, offset = float(parts[0]), float(parts[1])
            except ValueError:
                raise common.ParseError(f"non-numeric time in {line.strip()!r}", str(path), lineno)
            if not (math.isfinite(onset) and math.isfinite(offset)) or offset <= onset:
                raise common.FormatError(
                    f"offset {offset} is not after onset {onset}", str(path), lineno
                )
            regions.append(common.SpeechRegion(onset, offset))
    return merge_regions(regions)


def write_vad(regions: typ.Iterable[common.SpeechRegion], path: PathLike) -> None:
    path = pl.Path(path)
    with io.open(str(path), mode="w", encoding="utf-8") as fh:
        for region in regions:
            fh.write(f"{_fmt_float(region.onset)} {_fmt_float(region.offset)} speech\n")


def uniform_subsegmentation(
    regions: typ.Sequence[common.SpeechRegion],
    window: float,
    shift: float,
) -> typ.List[Span]:
    """Cut speech regions into (onset, duration) windows every `shift` seconds.

    Regions not longer than the window give one sub-segment. Otherwise full
    windows are emitted while they fit, plus a window ending exactly at the
    region offset if the uncovered remainder is at least shift / 2.
    """
    if not (window > 0 and shift > 0):
        raise common.ConfigError(f"window and shift must be positive, got {window}, {shift}")

    eps = 1e-9
    spans: typ.List[Span] = []
    for region in regions:
        length = region.offset - region.onset
        if length <= window + eps:
            spans.append((region.onset, length))
            continue

        n_full = int(math.floor((length - window) / shift + eps)) + 1
        for k in range(n_full):
            spans.append((region.onset + k * shift, window))

        covered_until = region.onset + (n_full - 1) * shift + window
        if region.offset - covered_until >= shift / 2 - eps:
            spans.append((region.offset - window, window))
    return spans


# RTTM


def write_rttm(hyp: common.DiarizationHypothesis, path: PathLike) -> None:
    write_rttm_corpus([hyp], path)


def _rttm_ticks(seconds: float) -> int:
    return int(round(seconds * RTTM_TICKS_PER_SECOND))


def write_rttm_corpus(hyps: typ.Iterable[common.DiarizationHypothesis], path: PathLike) -> None:
    """Segment ends are rounded to the millisecond grid of the format.

    Segments that collapse to zero length on that grid are not written.
    """
    path = pl.Path(path)
    with io.open(str(path), mode="w", encoding="utf-8") as fh:
        for hyp in hyps:
            for seg in sorted(hyp.segments, key=lambda s: (s.onset, s.speaker)):
                if not seg.duration > 0:
                    raise common.FormatError(
                        f"segment of '{seg.speaker}' at {seg.onset} has duration {seg.duration}"
                    )
                start, end = _rttm_ticks(seg.onset), _rttm_ticks(seg.offset)
                if end <= start:
                    logger.debug(
                        f"{hyp.recording_id}: dropped {seg.duration:.6f} s segment of '{seg.speaker}' "
                        f"at {seg.onset:.6f}"
                    )
                    continue
                fh.write(RTTM_LINE_FMT.format(
                    rec=hyp.recording_id,
                    onset=start / RTTM_TICKS_PER_SECOND,
                    duration=(end - start) / RTTM_TICKS_PER_SECOND,
                    speaker=seg.speaker,
                ))


def read_rttm_corpus(path: PathLike) -> typ.Dict[str, common.DiarizationHypothesis]:
    path = pl.Path(path)
    segments: typ.Dict[str, typ.List[common.SpeakerSegment]] = collections.OrderedDict()
    with io.open(str(path), mode="r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != RTTM_FIELD_COUNT:
                raise common.ParseError(
                    f"expected {RTTM_FIELD_COUNT} fields, got {len(parts)}", str(path), lineno
                )
            if parts[0] != "SPEAKER":
                raise common.ParseError(f"unknown record type '{parts[0]}'", str(path), lineno)
            try:
                onset, duration = float(parts[3]), float(parts[4])
            except ValueError:
                raise common.ParseError(f"non-numeric time in {line.strip()!r}", str(path), lineno)
            if not duration > 0:
                raise common.FormatError(f"non-positive duration {duration}", str(path), lineno)
            segments.setdefault(parts[1], []).append(common.SpeakerSegment(onset, duration, parts[7]))

    return collections.OrderedDict(
        (rec_id, common.DiarizationHypothesis(
            rec_id, sorted(segs, key=lambda s: (s.onset, s.speaker))
        ))
        for rec_id, segs in segments.items()
    )


def read_rttm(path: PathLike) -> common.DiarizationHypothesis:
    path = pl.Path(path)
    corpus = read_rttm_corpus(path)
    if len(corpus) > 1:
        raise common.FormatError(f"expected one recording, found {sorted(corpus)}", str(path))
    if not corpus:
        return common.DiarizationHypothesis(path.stem, [])
    return next(iter(corpus.values()))


# Label/segment conversion


def default_speaker_name(label: int) -> str:
    return f"spk{label}"


def _merge_runs(
    recording_id: str,
    runs: typ.Iterable[typ.Tuple[float, float, int]],
    names: typ.Callable[[int], str],
) -> common.DiarizationHypothesis:
    merged: typ.List[typ.List[typ.Any]] = []
    for start, end, label in runs:
        if end - start <= 1e-9:
            continue
        if merged and merged[-1][2] == label and start - merged[-1][1] <= 1e-9:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end, label])
    segments = [
        common.SpeakerSegment(start, end - start, names(label))
        for start, end, label in merged
    ]
    return common.DiarizationHypothesis(recording_id, segments)


def labels_to_hypothesis(
    recording_id: str,
    spans: typ.Sequence[Span],
    labels: typ.Sequence[int],
    names: typ.Callable[[int], str] = default_speaker_name,
) -> common.DiarizationHypothesis:
    """Turn per sub-segment labels into non-overlapping speaker segments.

    Overlapping neighbours are split at the middle of their overlap.
    """
    if len(spans) != len(labels):
        raise common.DimensionError(f"{len(spans)} spans but {len(labels)} labels")

    order = sorted(range(len(spans)), key=lambda i: spans[i])
    starts = [spans[i][0] for i in order]
    ends = [spans[i][0] + spans[i][1] for i in order]
    ordered_labels = [int(labels[i]) for i in order]

    runs: typ.List[typ.Tuple[float, float, int]] = []
    seg_start = starts[0] if starts else 0.0
    for idx in range(len(starts)):
        seg_start = max(seg_start, starts[idx])
        seg_end = ends[idx]
        if idx + 1 < len(starts) and ends[idx] > starts[idx + 1]:
            seg_end = (starts[idx + 1] + ends[idx]) / 2
        runs.append((seg_start, seg_end, ordered_labels[idx]))
        seg_start = seg_end
    return _merge_runs(recording_id, runs, names)


def frame_labels_to_hypothesis(
    recording_id: str,
    frame_labels: typ.Sequence[int],
    frame_rate: float,
    names: typ.Callable[[int], str] = default_speaker_name,
) -> common.DiarizationHypothesis:
    """Run length conversion of frame labels; negative labels are silence."""
    frame_labels = np.asarray(frame_labels, dtype=int)
    if len(frame_labels) == 0:
        return common.DiarizationHypothesis(recording_id, [])
    change = np.flatnonzero(np.diff(frame_labels)) + 1
    bounds = np.concatenate([[0], change, [len(frame_labels)]])
    runs = [
        (bounds[i] / frame_rate, bounds[i + 1] / frame_rate, int(frame_labels[bounds[i]]))
        for i in range(len(bounds) - 1)
        if frame_labels[bounds[i]] >= 0
    ]
    return _merge_runs(recording_id, runs, names)


def clip_to_regions(
    hyp: common.DiarizationHypothesis,
    regions: typ.Sequence[common.SpeechRegion],
) -> common.DiarizationHypothesis:
    clipped: typ.List[common.SpeakerSegment] = []
    for seg in hyp.segments:
        for region in regions:
            start = max(seg.onset, region.onset)
            end = min(seg.offset, region.offset)
            if end - start > 1e-9:
                clipped.append(common.SpeakerSegment(start, end - start, seg.speaker))
    clipped.sort(key=lambda s: (s.onset, s.speaker))
    return common.DiarizationHypothesis(hyp.recording_id, clipped)
