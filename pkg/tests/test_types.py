"""Value-type invariants: construction validation and mirror symmetry."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from colabel.types import (
    AnnotationKind,
    AnnotationSet,
    BoundingBox,
    ClassEntry,
    ClassTable,
    Detection,
    ImageRecord,
    is_mirrored_id,
    mirror_annotations,
    toggle_mirror_marker,
)


def box(l=0.0, t=0.0, r=10.0, b=10.0):
    return BoundingBox(l, t, r, b)


class TestBoundingBox:
    def test_valid(self):
        b = box(1, 2, 11, 22)
        assert b.width == 10
        assert b.height == 20
        assert b.area == 200

    @pytest.mark.parametrize(
        "l,t,r,b",
        [
            (10, 0, 10, 5),  # zero width
            (0, 5, 10, 5),  # zero height
            (10, 0, 5, 5),  # inverted x
            (0, 10, 5, 5),  # inverted y
            (float("nan"), 0, 5, 5),
            (0, 0, float("inf"), 5),
        ],
    )
    def test_degenerate_rejected(self, l, t, r, b):
        with pytest.raises(ValueError):
            BoundingBox(l, t, r, b)

    def test_mirror_involution(self):
        b = box(100, 50, 300, 200)
        assert b.mirrored(1240).mirrored(1240) == b

    def test_mirror_coordinates(self):
        b = box(100, 50, 300, 200).mirrored(1240)
        assert (b.left, b.top, b.right, b.bottom) == (940, 50, 1140, 200)


class TestDetection:
    def test_confidence_range(self):
        with pytest.raises(ValueError):
            Detection(class_id=0, bbox=box(), confidence=1.5)
        with pytest.raises(ValueError):
            Detection(class_id=0, bbox=box(), confidence=-0.1)

    def test_ignore_class_allowed(self):
        assert Detection(class_id=-1, bbox=box()).class_id == -1
        with pytest.raises(ValueError):
            Detection(class_id=-2, bbox=box())


class TestImageRecord:
    def test_sequence_fields_paired(self):
        with pytest.raises(ValueError):
            ImageRecord(image_id="a", width=10, height=10, sequence_id="s")
        with pytest.raises(ValueError):
            ImageRecord(image_id="a", width=10, height=10, frame_index=3)
        rec = ImageRecord(image_id="a", width=10, height=10, sequence_id="s", frame_index=3)
        assert rec.in_sequence

    @pytest.mark.parametrize("bad", ["", "a/b", "a\\b", "a b", ".hidden", "x\ny"])
    def test_unsafe_ids_rejected(self, bad):
        with pytest.raises(ValueError):
            ImageRecord(image_id=bad, width=10, height=10)

    def test_mirrored_toggles_id(self):
        rec = ImageRecord(image_id="img_001", width=100, height=50)
        twin = rec.mirrored()
        assert is_mirrored_id(twin.image_id)
        assert twin.mirrored() == rec


class TestAnnotationSet:
    def test_unlabeled_must_be_empty(self):
        with pytest.raises(ValueError):
            AnnotationSet(
                entries={"a": [Detection(0, box())]}, kind=AnnotationKind.UNLABELED
            )

    def test_pseudo_forbids_empty_images(self):
        with pytest.raises(ValueError):
            AnnotationSet(entries={"a": []}, kind=AnnotationKind.PSEUDO_LABEL)

    def test_ground_truth_allows_empty_images(self):
        s = AnnotationSet(entries={"a": []}, kind=AnnotationKind.GROUND_TRUTH)
        assert s.n_images == 1
        assert s.n_detections == 0

    def test_counts_and_lookup(self):
        s = AnnotationSet(
            entries={
                "a": [Detection(0, box()), Detection(1, box(), 0.9)],
                "b": [Detection(0, box(20, 20, 30, 30), 0.85)],
            },
            kind=AnnotationKind.PSEUDO_LABEL,
        )
        assert s.n_images == 2
        assert s.n_detections == 3
        assert s.class_counts() == {0: 2, 1: 1}
        assert s.detections_for("missing") == ()

    def test_equality_ignores_insertion_order(self):
        d = Detection(0, box())
        a = AnnotationSet(entries={"a": [d], "b": [d]}, kind=AnnotationKind.PSEUDO_LABEL)
        b = AnnotationSet(entries={"b": [d], "a": [d]}, kind=AnnotationKind.PSEUDO_LABEL)
        assert a == b


ids = st.text(
    alphabet=st.characters(whitelist_categories=("Ll", "Nd"), max_codepoint=127),
    min_size=1,
    max_size=12,
)


@st.composite
def annotation_sets(draw):
    n = draw(st.integers(min_value=1, max_value=5))
    entries = {}
    for i in range(n):
        image_id = f"{draw(ids)}{i}"
        k = draw(st.integers(min_value=1, max_value=4))
        dets = []
        for _ in range(k):
            # boxes on the 2-decimal grid, as produced everywhere in the engine
            l = round(draw(st.floats(min_value=0, max_value=500)), 2)
            t = round(draw(st.floats(min_value=0, max_value=200)), 2)
            w = round(draw(st.floats(min_value=1, max_value=200)), 2)
            h = round(draw(st.floats(min_value=1, max_value=100)), 2)
            conf = draw(st.floats(min_value=0, max_value=1))
            bb = BoundingBox(l, t, round(l + w, 2), round(t + h, 2))
            dets.append(Detection(draw(st.integers(0, 2)), bb, conf))
        entries[image_id] = dets
    return AnnotationSet(entries=entries, kind=AnnotationKind.PSEUDO_LABEL)


@given(annotation_sets())
def test_mirror_annotations_is_involution(aset):
    widths = {i: 1240.0 for i in aset.image_ids}
    once = mirror_annotations(aset, widths)
    # ids are disjoint from the input's
    assert not set(once.image_ids) & set(aset.image_ids)
    back = mirror_annotations(once, {i: 1240.0 for i in once.image_ids})
    assert back == aset


def test_mirror_marker_toggles():
    assert toggle_mirror_marker("abc") == "abc__mirror"
    assert toggle_mirror_marker("abc__mirror") == "abc"


class TestClassTable:
    def table(self):
        return ClassTable(
            classes=(
                ClassEntry("vehicle", 0.8, 25.0, 0.7),
                ClassEntry("pedestrian", 0.8, 25.0, 0.5),
            )
        )

    def test_lookup(self):
        t = self.table()
        assert t.id_of("pedestrian") == 1
        assert t.entry(0).name == "vehicle"
        assert t.names == ("vehicle", "pedestrian")
        with pytest.raises(KeyError):
            t.id_of("cyclist")
        with pytest.raises(KeyError):
            t.entry(2)

    def test_duplicate_names_rejected(self):
        with pytest.raises(ValueError):
            ClassTable(classes=(ClassEntry("a", 0.8, 25, 0.7), ClassEntry("a", 0.5, 25, 0.5)))

    def test_threshold_precision_enforced(self):
        with pytest.raises(ValueError):
            ClassEntry("a", 0.812345, 25, 0.7)

    def test_validate_detections_threshold(self):
        t = self.table()
        low = AnnotationSet(
            entries={"a": [Detection(0, box(), 0.5)]}, kind=AnnotationKind.PSEUDO_LABEL
        )
        with pytest.raises(ValueError):
            t.validate_detections(low)
        # same confidence is fine on ground truth
        gt = low.with_kind(AnnotationKind.GROUND_TRUTH)
        t.validate_detections(gt)
