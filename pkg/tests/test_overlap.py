import logging

import numpy as np
import pytest

from bhmmdiar import common
from bhmmdiar import overlap


def _rng(seed=0):
    return np.random.Generator(np.random.Philox(seed))


def _hyp(*segments):
    return common.DiarizationHypothesis("r", [common.SpeakerSegment(*seg) for seg in segments])


def _speakers_at(hyp, instant):
    return sorted(seg.speaker for seg in hyp.segments if seg.onset <= instant < seg.offset)


def _added(result, original):
    return [seg for seg in result.segments if seg not in original.segments]


def test_train_logreg_separable():
    rng = _rng(0)
    x = np.vstack([rng.normal(-3, 1, size=(50, 2)), rng.normal(3, 1, size=(50, 2))])
    y = np.repeat([0, 1], 50)
    model = overlap.train_logreg(x, y, l2=1.0)
    flags = overlap.detect(model, x, 0.5)
    np.testing.assert_array_equal(flags, y.astype(bool))


def test_train_logreg_independent_labels():
    rng = _rng(1)
    features = rng.normal(size=(40, 3))
    # every feature vector appears once with each label pattern
    x = np.vstack([features] * 4)
    y = np.concatenate([np.ones(40), np.zeros(40), np.zeros(40), np.zeros(40)])
    model = overlap.train_logreg(x, y, l2=1.0)
    np.testing.assert_allclose(model.weights, 0.0, atol=1e-3)
    assert model.bias == pytest.approx(np.log(0.25 / 0.75), abs=1e-3)


def test_train_logreg_strong_regularization():
    rng = _rng(2)
    x = rng.normal(size=(60, 2))
    y = (x[:, 0] > 0).astype(int)
    weak = overlap.train_logreg(x, y, l2=0.1)
    strong = overlap.train_logreg(x, y, l2=1e8)
    assert np.linalg.norm(strong.weights) < 1e-5
    assert np.linalg.norm(strong.weights) < np.linalg.norm(weak.weights)


@pytest.mark.parametrize("labels, error", [
    ([1, 1, 1, 1], common.TrainingError),
    ([0, 1, 2, 1], common.TrainingError),
    ([0, 1, 1], common.DimensionError),
])
def test_train_logreg_errors(labels, error):
    with pytest.raises(error):
        overlap.train_logreg(np.arange(8, dtype=float).reshape(4, 2), labels)


def test_train_logreg_negative_l2():
    with pytest.raises(common.ConfigError):
        overlap.train_logreg(np.eye(2), [0, 1], l2=-1.0)


def test_detect_thresholds():
    zero = overlap.LogRegModel(np.zeros(3), 0.0)
    x = _rng(3).normal(size=(5, 3))
    np.testing.assert_allclose(overlap.overlap_probability(zero, x), 0.5)
    assert not np.any(overlap.detect(zero, x, 0.7))
    assert np.all(overlap.detect(zero, x, 0.0))


def test_detect_dimension_mismatch():
    with pytest.raises(common.DimensionError):
        overlap.detect(overlap.LogRegModel(np.zeros(3), 0.0), np.zeros((2, 2)), 0.5)


def test_overlap_training_labels():
    reference = _hyp((0.0, 5.0, "A"), (4.0, 6.0, "B"))
    spans = [(0.0, 1.5), (3.0, 1.5), (3.5, 1.5), (4.5, 1.5), (8.0, 1.5)]
    labels = overlap.overlap_training_labels(spans, reference)
    # overlap is [4, 5): 0.5 of 1.5, 1.0 of 1.5, 0.5 of 1.5
    np.testing.assert_array_equal(labels, [0, 0, 1, 0, 0])


def test_flags_to_regions():
    spans = [(0.0, 1.5), (0.25, 1.5), (0.5, 1.5), (3.0, 1.5)]
    regions = overlap.flags_to_regions(spans, [True, True, False, True])
    assert regions == [common.SpeechRegion(0.0, 1.75), common.SpeechRegion(3.0, 4.5)]
    with pytest.raises(common.DimensionError):
        overlap.flags_to_regions(spans, [True])


def test_assign_two_closest_turn_boundary():
    hyp = _hyp((0.0, 5.0, "A"), (5.0, 5.0, "B"))
    result = overlap.assign_two_closest(hyp, [common.SpeechRegion(4.5, 5.5)])
    assert result.skipped_regions == 0
    out = result.hypothesis
    for instant in np.arange(4.505, 5.5, 0.01):
        assert _speakers_at(out, instant) == ["A", "B"]
    assert _speakers_at(out, 4.4) == ["A"]
    assert _speakers_at(out, 5.6) == ["B"]

    added = _added(out, hyp)
    assert [seg.speaker for seg in added] == ["B", "A"]
    assert added[0].onset == pytest.approx(4.5)
    assert added[0].offset == pytest.approx(5.0)
    assert added[1].onset == pytest.approx(5.0)
    assert added[1].offset == pytest.approx(5.5)


def test_assign_two_closest_nearest_side():
    hyp = _hyp((0.0, 4.0, "B"), (6.0, 10.0, "A"), (19.0, 3.0, "C"))
    result = overlap.assign_two_closest(hyp, [common.SpeechRegion(8.0, 9.0)])
    added = _added(result.hypothesis, hyp)
    # B ends 4 s before the region, C starts 10 s after it
    assert [(seg.speaker, seg.onset, seg.offset) for seg in added] == [
        ("B", pytest.approx(8.0), pytest.approx(9.0)),
    ]


def test_assign_two_closest_in_gap():
    hyp = _hyp((0.0, 2.0, "A"), (5.0, 2.0, "B"), (9.0, 1.0, "C"))
    result = overlap.assign_two_closest(hyp, [common.SpeechRegion(2.5, 3.0)])
    for instant in np.arange(2.505, 3.0, 0.01):
        assert _speakers_at(result.hypothesis, instant) == ["A", "B"]


def test_assign_two_closest_single_speaker(caplog):
    hyp = _hyp((0.0, 5.0, "A"))
    with caplog.at_level(logging.WARNING, logger="bhmmdiar"):
        result = overlap.assign_two_closest(hyp, [common.SpeechRegion(1.0, 2.0)])
    assert result.hypothesis == hyp
    assert result.skipped_regions == 1
    assert "skipped" in caplog.text


def test_assign_two_closest_invariants():
    rng = _rng(4)
    for _ in range(20):
        bounds = np.sort(rng.uniform(0, 30, size=8))
        speakers = rng.choice(["A", "B", "C"], size=7)
        segments = [
            (float(start), float(end - start), str(spk))
            for start, end, spk in zip(bounds[:-1], bounds[1:], speakers)
            if end - start > 0.05
        ]
        hyp = _hyp(*segments)
        if len(hyp.speakers) < 2:
            continue
        start = float(rng.uniform(0, 28))
        region = common.SpeechRegion(round(start, 2), round(start + float(rng.uniform(0.2, 2.0)), 2))
        out = overlap.assign_two_closest(hyp, [region]).hypothesis

        added = _added(out, hyp)
        assert sorted(seg for seg in out.segments if seg not in added) == sorted(hyp.segments)
        for seg in added:
            assert seg.onset >= region.onset - 1e-9
            assert seg.offset <= region.offset + 1e-9
        for instant in np.arange(region.onset + 0.005, region.offset, 0.01):
            assert len(_speakers_at(out, instant)) == 2


def test_save_load_logreg(tmp_path):
    model = overlap.LogRegModel(np.array([0.5, -1.25, 3.0]), -0.75)
    overlap.save_logreg(model, tmp_path / "ovl.csv")
    loaded = overlap.load_logreg(tmp_path / "ovl.csv")
    np.testing.assert_array_equal(loaded.weights, model.weights)
    assert loaded.bias == model.bias


def test_load_logreg_errors(tmp_path):
    path = tmp_path / "ovl.csv"
    path.write_text("1.0\n")
    with pytest.raises(common.FormatError):
        overlap.load_logreg(path)
    path.write_text("1.0,2.0\n3.0,4.0\n")
    with pytest.raises(common.FormatError):
        overlap.load_logreg(path)
