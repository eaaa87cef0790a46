"""Random sampling, confidence ranking, and set fusion."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from colabel.selection import fuse, image_confidences, rand_select, select_extreme
from colabel.types import (
    AnnotationKind,
    AnnotationSet,
    BoundingBox,
    Detection,
    ImageRecord,
    SelectionDirection,
    SequenceParams,
)

UP = SelectionDirection.MOST_CONFIDENT
DOWN = SelectionDirection.LEAST_CONFIDENT


def det(conf, cid=0, offset=0.0):
    return Detection(cid, BoundingBox(offset, 0, offset + 50, 40), conf)


def pseudo(mean_by_id):
    return AnnotationSet(
        entries={i: [det(c)] for i, c in mean_by_id.items()},
        kind=AnnotationKind.PSEUDO_LABEL,
    )


def seq_records(n, seq="s0", prefix="f"):
    return {
        f"{prefix}{i}": ImageRecord(
            image_id=f"{prefix}{i}", width=100, height=50, sequence_id=seq, frame_index=i
        )
        for i in range(n)
    }


class TestImageConfidences:
    def test_mean(self):
        aset = AnnotationSet(
            entries={"a": [det(0.8), det(0.9), det(1.0)]},
            kind=AnnotationKind.PSEUDO_LABEL,
        )
        conf = image_confidences(aset)["a"]
        assert conf.mean_confidence == pytest.approx(0.9)
        assert conf.detection_count == 3


class TestRandSelect:
    def test_plain_sample_size(self):
        aset = pseudo({f"i{k}": 0.9 for k in range(10)})
        out = rand_select(aset, 3, np.random.default_rng(0))
        assert out.n_images == 3
        assert set(out.image_ids) <= set(aset.image_ids)

    def test_saturation(self):
        aset = pseudo({f"i{k}": 0.9 for k in range(4)})
        out = rand_select(aset, 10, np.random.default_rng(0))
        assert out == aset

    def test_deterministic_given_seed_and_set(self):
        ids = [f"i{k}" for k in range(30)]
        a = AnnotationSet(
            entries={i: [det(0.9)] for i in ids}, kind=AnnotationKind.PSEUDO_LABEL
        )
        b = AnnotationSet(
            entries={i: [det(0.9)] for i in reversed(ids)},
            kind=AnnotationKind.PSEUDO_LABEL,
        )
        out_a = rand_select(a, 10, np.random.default_rng(7))
        out_b = rand_select(b, 10, np.random.default_rng(7))
        assert sorted(out_a.image_ids) == sorted(out_b.image_ids)

    def test_sequence_gap_exhaustive_over_orderings(self):
        # frames 0..9 in one sequence, current-cycle gap 5: every
        # acceptance order yields exactly 2 images at distance >= 5
        records = seq_records(10)
        params = SequenceParams(frame_gap_current=5, frame_gap_history=10)
        for order in itertools.permutations(range(10)):
            accepted = []
            for i in order:
                if all(abs(i - f) >= 5 for f in accepted):
                    accepted.append(i)
            assert len(accepted) == 2
            a, b = accepted
            assert abs(a - b) >= 5
        # and the implementation agrees for a handful of seeds
        aset = pseudo({f"f{k}": 0.9 for k in range(10)})
        for seed in range(20):
            out = rand_select(
                aset,
                10,
                np.random.default_rng(seed),
                records=records,
                seq_params=params,
            )
            frames = sorted(int(i[1:]) for i in out.image_ids)
            assert len(frames) == 2
            assert frames[1] - frames[0] >= 5

    def test_history_gap_rejects_all(self):
        records = seq_records(10)
        params = SequenceParams(frame_gap_current=5, frame_gap_history=10)
        accumulated = pseudo({"f7": 0.9})
        aset = pseudo({f"f{k}": 0.9 for k in range(10)})
        out = rand_select(
            aset,
            10,
            np.random.default_rng(3),
            records=records,
            seq_params=params,
            accumulated=accumulated,
        )
        assert out.n_images == 0

    def test_cross_sequence_frames_compatible(self):
        records = {}
        records.update(seq_records(3, seq="s0", prefix="a"))
        records.update(seq_records(3, seq="s1", prefix="b"))
        params = SequenceParams(frame_gap_current=5, frame_gap_history=10)
        aset = pseudo({"a0": 0.9, "b0": 0.9})
        out = rand_select(
            aset, 10, np.random.default_rng(0), records=records, seq_params=params
        )
        assert sorted(out.image_ids) == ["a0", "b0"]

    def test_isolated_images_unconstrained_in_sequence_mode(self):
        records = {"x": ImageRecord(image_id="x", width=9, height=9)}
        params = SequenceParams()
        aset = pseudo({"x": 0.9})
        out = rand_select(
            aset, 1, np.random.default_rng(0), records=records, seq_params=params
        )
        assert out.image_ids == ("x",)


@settings(max_examples=300)
@given(
    st.dictionaries(
        st.integers(0, 60),
        st.floats(min_value=0.5, max_value=1.0),
        min_size=1,
        max_size=30,
    ),
    st.integers(0, 2**31),
    st.integers(1, 8),
    st.integers(1, 10),
    st.integers(1, 15),
)
def test_rand_select_sequence_invariant(frame_conf, seed, count, gap_cur, gap_hist):
    records = {
        f"f{i}": ImageRecord(
            image_id=f"f{i}", width=9, height=9, sequence_id="s", frame_index=i
        )
        for i in frame_conf
    }
    history_frames = [i for i in frame_conf if i % 3 == 0][:3]
    accumulated = (
        AnnotationSet(
            entries={f"f{i}": [det(0.9)] for i in history_frames},
            kind=AnnotationKind.PSEUDO_LABEL,
        )
        if history_frames
        else None
    )
    pool_ids = [i for i in frame_conf if i not in history_frames]
    if not pool_ids:
        return
    aset = AnnotationSet(
        entries={f"f{i}": [det(round(frame_conf[i], 4))] for i in pool_ids},
        kind=AnnotationKind.PSEUDO_LABEL,
    )
    params = SequenceParams(frame_gap_current=gap_cur, frame_gap_history=gap_hist)
    out = rand_select(
        aset,
        count,
        np.random.default_rng(seed),
        records=records,
        seq_params=params,
        accumulated=accumulated,
    )
    frames = sorted(int(i[1:]) for i in out.image_ids)
    assert len(frames) <= count
    for a, b in itertools.combinations(frames, 2):
        assert abs(a - b) >= gap_cur
    for f in frames:
        for g in history_frames:
            assert abs(f - g) >= gap_hist


class TestSelectExtreme:
    def test_most_confident(self):
        aset = pseudo({"a": 0.9, "b": 0.5, "c": 0.7})
        assert select_extreme(aset, 1, UP).image_ids == ("a",)

    def test_least_confident(self):
        aset = pseudo({"a": 0.9, "b": 0.5, "c": 0.7})
        assert select_extreme(aset, 1, DOWN).image_ids == ("b",)

    def test_saturation(self):
        aset = pseudo({"a": 0.9, "b": 0.5})
        assert select_extreme(aset, 5, UP) == aset
        assert select_extreme(aset, 5, DOWN) == aset

    def test_none_means_no_truncation(self):
        aset = pseudo({"a": 0.9, "b": 0.5})
        assert select_extreme(aset, None, UP) == aset

    def test_ties_break_by_id(self):
        aset = pseudo({"b": 0.9, "a": 0.9, "c": 0.9})
        assert sorted(select_extreme(aset, 2, UP).image_ids) == ["a", "b"]
        assert sorted(select_extreme(aset, 2, DOWN).image_ids) == ["a", "b"]

    def test_detections_intact(self):
        dets = [det(0.9), det(0.95, offset=60)]
        aset = AnnotationSet(entries={"a": dets}, kind=AnnotationKind.PSEUDO_LABEL)
        out = select_extreme(aset, 1, UP)
        assert out.detections_for("a") == tuple(dets)


@settings(max_examples=300)
@given(
    st.dictionaries(
        st.text(st.characters(whitelist_categories=("Ll",), max_codepoint=127), min_size=1, max_size=6),
        st.floats(min_value=0.5, max_value=1.0),
        min_size=2,
        max_size=20,
    ),
    st.integers(1, 10),
)
def test_top_and_bottom_never_overlap(mean_by_id, n):
    means = {k: round(v, 6) for k, v in mean_by_id.items()}
    if len(set(means.values())) != len(means) or 2 * n > len(means):
        return
    aset = pseudo(means)
    top = set(select_extreme(aset, n, UP).image_ids)
    bottom = set(select_extreme(aset, n, DOWN).image_ids)
    assert not top & bottom


class TestFuse:
    def test_identity_with_empty(self):
        x = pseudo({"a": 0.9})
        empty = AnnotationSet.empty()
        assert fuse(empty, x) == x
        assert fuse(x, empty) == x

    def test_new_replaces_old_per_image(self):
        old = AnnotationSet(
            entries={"a": [det(0.8), det(0.85, offset=60)]},
            kind=AnnotationKind.PSEUDO_LABEL,
        )
        new = AnnotationSet(
            entries={"a": [det(0.99, offset=120)]}, kind=AnnotationKind.PSEUDO_LABEL
        )
        out = fuse(old, new)
        assert out.detections_for("a") == new.detections_for("a")

    def test_rejects_non_pseudo(self):
        x = pseudo({"a": 0.9})
        with pytest.raises(ValueError):
            fuse(x.with_kind(AnnotationKind.GROUND_TRUTH), x)


@st.composite
def small_pseudo(draw, prefix):
    n = draw(st.integers(0, 6))
    return pseudo(
        {f"{prefix}{draw(st.integers(0, 9))}": round(draw(st.floats(0.5, 1.0)), 4) for _ in range(n)}
    )


@settings(max_examples=300)
@given(small_pseudo("x"), small_pseudo("x"))
def test_fuse_cardinality_and_idempotence(old, new):
    out = fuse(old, new)
    assert set(out.image_ids) == set(old.image_ids) | set(new.image_ids)
    assert fuse(out, new) == out
    for i in new.image_ids:
        assert out.detections_for(i) == new.detections_for(i)
