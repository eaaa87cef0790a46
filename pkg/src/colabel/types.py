"""Core value types shared by every other module.

Everything here is an immutable dataclass with validation in
``__post_init__``. Annotation containers are keyed by image id; an image
id is an opaque string that must stay usable as a file stem, because
label files are written as ``<image_id>.txt``.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Any

# Class id used for boxes that exist only as evaluation don't-care
# regions (unknown / explicitly ignored source classes).
IGNORE_CLASS_ID = -1

# Appended to an image id to name its horizontally mirrored twin.
# Toggled, not stacked: mirroring a mirrored id strips the marker.
MIRROR_MARKER = "__mirror"

_FORBIDDEN_ID_CHARS = set('/\\ \t\n\r"')


class AnnotationKind(str, Enum):
    GROUND_TRUTH = "ground_truth"
    PSEUDO_LABEL = "pseudo_label"
    UNLABELED = "unlabeled"


class DomainTag(str, Enum):
    SOURCE = "source"
    ADAPTED_SOURCE = "adapted_source"
    TARGET = "target"


class ViewTransform(str, Enum):
    IDENTITY = "identity"
    HORIZONTAL_MIRROR = "horizontal_mirror"


class SelectionDirection(str, Enum):
    MOST_CONFIDENT = "most_confident"
    LEAST_CONFIDENT = "least_confident"


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in pixel coordinates, corners (left, top) and
    (right, bottom), y growing downward."""

    left: float
    top: float
    right: float
    bottom: float

    def __post_init__(self) -> None:
        _require(
            _finite(self.left, self.top, self.right, self.bottom),
            "box coordinates must be finite",
        )
        _require(
            self.left < self.right and self.top < self.bottom,
            f"degenerate box: ({self.left}, {self.top}, {self.right}, {self.bottom})",
        )

    @property
    def width(self) -> float:
        return self.right - self.left

    @property
    def height(self) -> float:
        return self.bottom - self.top

    @property
    def area(self) -> float:
        return self.width * self.height

    def mirrored(self, image_width: float) -> "BoundingBox":
        """Reflect across the vertical centerline of an image of the
        given width.

        Coordinates are snapped to 2 decimals, the grid every box in
        this package lives on (the label file format carries exactly
        that precision). On that grid the operation is an exact
        involution; raw float subtraction alone would not be.
        """
        return BoundingBox(
            left=round(image_width - self.right, 2),
            top=self.top,
            right=round(image_width - self.left, 2),
            bottom=self.bottom,
        )


@dataclass(frozen=True)
class Detection:
    """One labeled box. ``class_id`` indexes the experiment's class
    table, or is IGNORE_CLASS_ID for don't-care entries."""

    class_id: int
    bbox: BoundingBox
    confidence: float = 1.0

    def __post_init__(self) -> None:
        _require(self.class_id >= IGNORE_CLASS_ID, f"bad class id {self.class_id}")
        _require(
            _finite(self.confidence) and 0.0 <= self.confidence <= 1.0,
            f"confidence {self.confidence} outside [0, 1]",
        )


@dataclass(frozen=True)
class ImageRecord:
    """Identity and geometry of one image. ``sequence_id``/``frame_index``
    are both present or both absent; isolated images carry neither."""

    image_id: str
    width: float
    height: float
    sequence_id: str | None = None
    frame_index: int | None = None
    domain_tag: DomainTag = DomainTag.TARGET

    def __post_init__(self) -> None:
        _require(bool(self.image_id), "empty image id")
        _require(
            not (_FORBIDDEN_ID_CHARS & set(self.image_id)),
            f"image id {self.image_id!r} contains path or whitespace characters",
        )
        _require(not self.image_id.startswith("."), f"image id {self.image_id!r} starts with a dot")
        _require(
            _finite(self.width, self.height) and self.width > 0 and self.height > 0,
            "image dimensions must be positive",
        )
        _require(
            (self.sequence_id is None) == (self.frame_index is None),
            "sequence_id and frame_index must be set together",
        )
        if self.frame_index is not None:
            _require(self.frame_index >= 0, "negative frame index")

    @property
    def in_sequence(self) -> bool:
        return self.sequence_id is not None

    def mirrored(self) -> "ImageRecord":
        return ImageRecord(
            image_id=toggle_mirror_marker(self.image_id),
            width=self.width,
            height=self.height,
            sequence_id=self.sequence_id,
            frame_index=self.frame_index,
            domain_tag=self.domain_tag,
        )


def toggle_mirror_marker(image_id: str) -> str:
    if image_id.endswith(MIRROR_MARKER):
        return image_id[: -len(MIRROR_MARKER)]
    return image_id + MIRROR_MARKER


def is_mirrored_id(image_id: str) -> bool:
    return image_id.endswith(MIRROR_MARKER)


def _as_entries(
    entries: Mapping[str, Iterable[Detection]],
) -> Mapping[str, tuple[Detection, ...]]:
    return MappingProxyType({str(k): tuple(v) for k, v in entries.items()})


@dataclass(frozen=True, eq=False)
class AnnotationSet:
    """Detections grouped per image. One kind for the whole set.

    Ground-truth sets may record images with zero boxes (true
    negatives). Pseudo-label sets may not: an image the detector found
    nothing on is simply absent. Unlabeled sets carry no boxes at all.
    """

    entries: Mapping[str, tuple[Detection, ...]]
    kind: AnnotationKind

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", _as_entries(self.entries))
        object.__setattr__(self, "kind", AnnotationKind(self.kind))
        if self.kind is AnnotationKind.UNLABELED:
            _require(
                all(len(v) == 0 for v in self.entries.values()),
                "unlabeled set contains detections",
            )
        elif self.kind is AnnotationKind.PSEUDO_LABEL:
            _require(
                all(len(v) > 0 for v in self.entries.values()),
                "pseudo-label set contains an image with zero detections",
            )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AnnotationSet):
            return NotImplemented
        return self.kind == other.kind and dict(self.entries) == dict(other.entries)

    @classmethod
    def empty(cls, kind: AnnotationKind = AnnotationKind.PSEUDO_LABEL) -> "AnnotationSet":
        return cls(entries={}, kind=kind)

    @property
    def image_ids(self) -> tuple[str, ...]:
        return tuple(self.entries.keys())

    @property
    def n_images(self) -> int:
        return len(self.entries)

    @property
    def n_detections(self) -> int:
        return sum(len(v) for v in self.entries.values())

    def detections_for(self, image_id: str) -> tuple[Detection, ...]:
        return self.entries.get(image_id, ())

    def class_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for dets in self.entries.values():
            for det in dets:
                counts[det.class_id] = counts.get(det.class_id, 0) + 1
        return counts

    def restricted_to(self, image_ids: Iterable[str]) -> "AnnotationSet":
        keep = set(image_ids)
        return AnnotationSet(
            entries={k: v for k, v in self.entries.items() if k in keep},
            kind=self.kind,
        )

    def with_kind(self, kind: AnnotationKind) -> "AnnotationSet":
        return AnnotationSet(entries=self.entries, kind=kind)


def mirror_annotations(
    annotations: AnnotationSet, widths: Mapping[str, float]
) -> AnnotationSet:
    """Horizontally mirror a whole set: every box is reflected using its
    image's width and every image id gets the mirror marker toggled.

    ``widths`` maps ORIGINAL image ids to pixel widths and must cover
    the set. Applying the function twice (with widths keyed both ways)
    restores the input, and the mirrored set never shares an id with
    the input.
    """
    mirrored: dict[str, tuple[Detection, ...]] = {}
    for image_id, dets in annotations.entries.items():
        try:
            width = widths[image_id]
        except KeyError:
            raise KeyError(f"no width known for image {image_id!r}") from None
        mirrored[toggle_mirror_marker(image_id)] = tuple(
            Detection(
                class_id=d.class_id,
                bbox=d.bbox.mirrored(width),
                confidence=d.confidence,
            )
            for d in dets
        )
    return AnnotationSet(entries=mirrored, kind=annotations.kind)


@dataclass(frozen=True)
class ClassEntry:
    """Evaluation and self-labeling parameters for one object class."""

    name: str
    threshold: float
    min_height: float
    iou_threshold: float

    def __post_init__(self) -> None:
        _require(bool(self.name) and self.name.strip() == self.name, f"bad class name {self.name!r}")
        _require(
            _finite(self.threshold) and 0.0 < self.threshold <= 1.0,
            f"class {self.name}: threshold {self.threshold} outside (0, 1]",
        )
        # Confidences are carried at 4 decimals end to end; a threshold
        # that can't be represented at that precision would make the
        # "confidence >= threshold" invariant unstable under rounding.
        _require(
            abs(self.threshold - round(self.threshold, 4)) < 1e-12,
            f"class {self.name}: threshold must be a multiple of 1e-4",
        )
        _require(
            _finite(self.min_height) and self.min_height >= 0,
            f"class {self.name}: negative min height",
        )
        _require(
            _finite(self.iou_threshold) and 0.0 < self.iou_threshold <= 1.0,
            f"class {self.name}: iou threshold {self.iou_threshold} outside (0, 1]",
        )


@dataclass(frozen=True)
class ClassTable:
    """Ordered set of object classes; a detection's class_id indexes it."""

    classes: tuple[ClassEntry, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "classes", tuple(self.classes))
        _require(len(self.classes) > 0, "empty class table")
        names = [c.name for c in self.classes]
        _require(len(set(names)) == len(names), f"duplicate class names: {names}")

    def __len__(self) -> int:
        return len(self.classes)

    def __iter__(self) -> Iterator[ClassEntry]:
        return iter(self.classes)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.classes)

    def entry(self, class_id: int) -> ClassEntry:
        if not 0 <= class_id < len(self.classes):
            raise KeyError(f"class id {class_id} outside table of size {len(self.classes)}")
        return self.classes[class_id]

    def id_of(self, name: str) -> int:
        for i, c in enumerate(self.classes):
            if c.name == name:
                return i
        raise KeyError(f"unknown class {name!r}")

    def thresholds_by_name(self) -> dict[str, float]:
        return {c.name: c.threshold for c in self.classes}

    def validate_detections(self, annotations: AnnotationSet) -> None:
        """Raise if any non-ignore detection has a class id outside the
        table or a confidence below its class threshold (pseudo only)."""
        check_conf = annotations.kind is AnnotationKind.PSEUDO_LABEL
        for image_id, dets in annotations.entries.items():
            for det in dets:
                if det.class_id == IGNORE_CLASS_ID:
                    continue
                entry = self.entry(det.class_id)
                if check_conf and det.confidence < entry.threshold:
                    raise ValueError(
                        f"image {image_id}: {entry.name} confidence "
                        f"{det.confidence} below threshold {entry.threshold}"
                    )


@dataclass(frozen=True)
class SelectionParams:
    """Per-cycle sampling and keep sizes.

    sample_size: images drawn at random from the fresh pseudo-label set
        each cycle before ranking.
    keep_size: images kept after ranking by mean confidence.
    confident_cap: in co-training, cap on the teacher's most-confident
        pool offered for exchange; None means no cap.
    """

    sample_size: int = 2000
    keep_size: int = 100
    confident_cap: int | None = None

    def __post_init__(self) -> None:
        _require(self.sample_size >= 1, "sample_size must be >= 1")
        _require(self.keep_size >= 1, "keep_size must be >= 1")
        if self.confident_cap is not None:
            _require(self.confident_cap >= 1, "confident_cap must be >= 1 or None")


@dataclass(frozen=True)
class SequenceParams:
    """Frame-distance constraints for sampling from video sequences.

    frame_gap_current: minimum |frame_index| distance between two images
        accepted within the same cycle and sequence.
    frame_gap_history: minimum distance between an accepted image and any
        already-accumulated image of the same sequence.
    """

    frame_gap_current: int = 5
    frame_gap_history: int = 10

    def __post_init__(self) -> None:
        _require(self.frame_gap_current >= 0, "negative frame_gap_current")
        _require(self.frame_gap_history >= 0, "negative frame_gap_history")


@dataclass(frozen=True)
class StopParams:
    """Stability-based stopping rule over pseudo-label similarity.

    The loop stops at cycle k when k >= min_cycles, at least
    stability_window deltas exist, and the last stability_window deltas
    are all strictly below stability_threshold (mAP points).
    """

    min_cycles: int = 20
    stability_threshold: float = 2.0
    stability_window: int = 5
    max_cycles: int = 60

    def __post_init__(self) -> None:
        _require(self.min_cycles >= 1, "min_cycles must be >= 1")
        _require(
            _finite(self.stability_threshold) and self.stability_threshold > 0,
            "stability_threshold must be positive",
        )
        _require(self.stability_window >= 1, "stability_window must be >= 1")
        _require(self.max_cycles >= self.min_cycles, "max_cycles below min_cycles")


@dataclass(frozen=True)
class TrainingHyper:
    """Opaque training options handed through to the detector backend,
    e.g. {"iterations": 40000, "batch_size": 2, "base_lr": 0.001}.

    With budget_check on, dispatch refuses a training request whose
    batch_size * iterations cannot cover the training image count.
    """

    options: Mapping[str, Any] = field(default_factory=dict)
    budget_check: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "options", MappingProxyType(dict(self.options)))

    def as_dict(self) -> dict[str, Any]:
        return dict(self.options)


def merge_image_maps(
    *maps: Mapping[str, ImageRecord],
) -> dict[str, ImageRecord]:
    """Union of image-record maps; conflicting records for an id raise."""
    out: dict[str, ImageRecord] = {}
    for m in maps:
        for k, v in m.items():
            if k in out and out[k] != v:
                raise ValueError(f"conflicting image records for id {k!r}")
            out[k] = v
    return out


def records_by_id(records: Sequence[ImageRecord]) -> dict[str, ImageRecord]:
    out: dict[str, ImageRecord] = {}
    for r in records:
        if r.image_id in out:
            raise ValueError(f"duplicate image id {r.image_id!r}")
        out[r.image_id] = r
    return out
