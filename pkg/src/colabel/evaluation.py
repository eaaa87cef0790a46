"""Detection matching, interpolated AP/mAP, and pseudo-label quality tools.

The metric follows the classic KITTI 2D protocol: per-class greedy
matching by descending confidence at a per-class IoU threshold,
don't-care regions that neither count as hits nor as misses, a minimum
box height below which ground truth becomes don't-care, and interpolated
average precision on a 0-100 scale (11 recall points by default, the
40-point variant behind a flag).

The same machinery measures how similar two generations of pseudo-labels
are (``map_similarity``), which is what the self-labeling loop uses as
its label-free stopping signal, and supports counterfactual cleanups of
a pseudo-label set against ground truth (``strip_false_positives``,
``snap_true_positive_boxes``).
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from enum import Enum

from colabel.types import (
    IGNORE_CLASS_ID,
    AnnotationKind,
    AnnotationSet,
    BoundingBox,
    ClassTable,
    Detection,
)


class ApMode(str, Enum):
    ELEVEN_POINT = "11point"
    FORTY_POINT = "40point"


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; 0.0 for disjoint boxes."""
    iw = min(a.right, b.right) - max(a.left, b.left)
    if iw <= 0:
        return 0.0
    ih = min(a.bottom, b.bottom) - max(a.top, b.top)
    if ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class ScoredDetection:
    """One prediction that survived don't-care filtering, with its verdict."""

    image_id: str
    det_index: int  # position within the image's prediction tuple
    confidence: float
    is_true_positive: bool
    matched_gt: tuple[str, int] | None  # (image_id, gt index) for TPs
    sort_left: float  # tie-break key, box left edge


@dataclass(frozen=True)
class ClassMatch:
    """Matching outcome for one class over the whole image universe."""

    class_id: int
    scored: tuple[ScoredDetection, ...]  # confidence-descending
    n_evaluable_gt: int
    n_ignored_gt: int
    n_ignored_detections: int

    @property
    def n_true_positives(self) -> int:
        return sum(1 for s in self.scored if s.is_true_positive)

    @property
    def n_false_positives(self) -> int:
        return len(self.scored) - self.n_true_positives

    @property
    def present(self) -> bool:
        """Whether this class takes part in a mAP mean at all."""
        return self.n_evaluable_gt > 0 or len(self.scored) > 0


@dataclass(frozen=True)
class MatchResult:
    per_class: Mapping[int, ClassMatch]

    def for_class(self, class_id: int) -> ClassMatch:
        return self.per_class[class_id]


def _match_one_image(
    image_id: str,
    gt: Iterable[Detection],
    pred: Iterable[Detection],
    class_id: int,
    min_height: float,
    iou_thr: float,
) -> tuple[list[ScoredDetection], int, int, int]:
    """Greedy per-image matching for one class.

    Returns (scored detections, evaluable GT count, ignored GT count,
    ignored detection count). Don't-care pool: ignore-bucket GT of any
    name plus undersized GT of this class.
    """
    evaluable: list[tuple[int, Detection]] = []
    dont_care: list[Detection] = []
    n_ignored_gt = 0
    for gi, g in enumerate(gt):
        if g.class_id == IGNORE_CLASS_ID:
            dont_care.append(g)
            n_ignored_gt += 1
        elif g.class_id == class_id:
            if g.bbox.height < min_height:
                dont_care.append(g)
                n_ignored_gt += 1
            else:
                evaluable.append((gi, g))

    candidates = [
        (di, d) for di, d in enumerate(pred) if d.class_id == class_id
    ]
    # Confidence-descending; ties broken by left edge for determinism.
    candidates.sort(key=lambda t: (-t[1].confidence, t[1].bbox.left, t[0]))

    matched_gt: set[int] = set()
    scored: list[ScoredDetection] = []
    n_ignored_det = 0
    for di, d in candidates:
        best_gi = -1
        best_iou = 0.0
        for gi, g in evaluable:
            if gi in matched_gt:
                continue
            v = iou(d.bbox, g.bbox)
            if v >= iou_thr and v > best_iou:
                best_iou = v
                best_gi = gi
        if best_gi >= 0:
            matched_gt.add(best_gi)
            scored.append(
                ScoredDetection(
                    image_id=image_id,
                    det_index=di,
                    confidence=d.confidence,
                    is_true_positive=True,
                    matched_gt=(image_id, best_gi),
                    sort_left=d.bbox.left,
                )
            )
            continue
        if any(iou(d.bbox, dc.bbox) >= iou_thr for dc in dont_care):
            n_ignored_det += 1
            continue
        if d.bbox.height < min_height:
            n_ignored_det += 1
            continue
        scored.append(
            ScoredDetection(
                image_id=image_id,
                det_index=di,
                confidence=d.confidence,
                is_true_positive=False,
                matched_gt=None,
                sort_left=d.bbox.left,
            )
        )
    return scored, len(evaluable), n_ignored_gt, n_ignored_det


def match_detections(
    gt: AnnotationSet, pred: AnnotationSet, table: ClassTable
) -> MatchResult:
    """Match predictions against ground truth, per class.

    Predictions on images absent from the ground-truth set count as
    false positives against an empty image (there is nothing they could
    legitimately hit). Detections in the ignore bucket are never scored.
    """
    image_ids = sorted(set(gt.entries) | set(pred.entries))
    per_class: dict[int, ClassMatch] = {}
    for class_id, entry in enumerate(table.classes):
        all_scored: list[ScoredDetection] = []
        n_gt = 0
        n_ig_gt = 0
        n_ig_det = 0
        for image_id in image_ids:
            scored, e, ig, igd = _match_one_image(
                image_id,
                gt.detections_for(image_id),
                pred.detections_for(image_id),
                class_id,
                entry.min_height,
                entry.iou_threshold,
            )
            all_scored.extend(scored)
            n_gt += e
            n_ig_gt += ig
            n_ig_det += igd
        all_scored.sort(key=lambda s: (-s.confidence, s.image_id, s.sort_left))
        per_class[class_id] = ClassMatch(
            class_id=class_id,
            scored=tuple(all_scored),
            n_evaluable_gt=n_gt,
            n_ignored_gt=n_ig_gt,
            n_ignored_detections=n_ig_det,
        )
    return MatchResult(per_class=per_class)


def _recall_levels(mode: ApMode) -> list[float]:
    if mode is ApMode.ELEVEN_POINT:
        return [i / 10 for i in range(11)]
    return [i / 40 for i in range(1, 41)]


def average_precision(
    match: MatchResult, class_id: int, *, mode: ApMode = ApMode.ELEVEN_POINT
) -> float:
    """Interpolated AP on a 0-100 scale.

    AP = (100/L) * sum over the L recall levels of the best precision
    achieved at that recall or beyond; unreached recall levels
    contribute zero. A class with no evaluable ground truth scores 0.
    """
    cm = match.for_class(class_id)
    if cm.n_evaluable_gt == 0:
        return 0.0
    precisions: list[float] = []
    recalls: list[float] = []
    tp = 0
    fp = 0
    for s in cm.scored:
        if s.is_true_positive:
            tp += 1
        else:
            fp += 1
        precisions.append(tp / (tp + fp))
        recalls.append(tp / cm.n_evaluable_gt)
    levels = _recall_levels(mode)
    total = 0.0
    for r in levels:
        best = 0.0
        for p, rec in zip(precisions, recalls):
            if rec >= r - 1e-12 and p > best:
                best = p
        total += best
    return 100.0 * total / len(levels)


def pr_samples(match: MatchResult, class_id: int) -> tuple[list[float], list[float]]:
    """Raw (recall, precision) staircase points, one per scored detection."""
    cm = match.for_class(class_id)
    precisions: list[float] = []
    recalls: list[float] = []
    tp = 0
    fp = 0
    for s in cm.scored:
        if s.is_true_positive:
            tp += 1
        else:
            fp += 1
        precisions.append(tp / (tp + fp))
        recalls.append(tp / cm.n_evaluable_gt if cm.n_evaluable_gt else 0.0)
    return recalls, precisions


@dataclass(frozen=True)
class ClassApEntry:
    name: str
    ap: float | None  # None when the class is absent from both sets
    n_evaluable_gt: int
    n_true_positives: int
    n_false_positives: int
    recall_samples: tuple[float, ...]
    precision_samples: tuple[float, ...]


@dataclass(frozen=True)
class ApReport:
    per_class: Mapping[str, ClassApEntry]
    mean_ap: float
    mode: ApMode

    def as_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "map": self.mean_ap,
            "per_class": {
                name: {
                    "ap": e.ap,
                    "evaluable_gt": e.n_evaluable_gt,
                    "true_positives": e.n_true_positives,
                    "false_positives": e.n_false_positives,
                    "recall": list(e.recall_samples),
                    "precision": list(e.precision_samples),
                }
                for name, e in self.per_class.items()
            },
        }


def evaluate(
    gt: AnnotationSet,
    pred: AnnotationSet,
    table: ClassTable,
    *,
    mode: ApMode = ApMode.ELEVEN_POINT,
) -> ApReport:
    """Full AP report: per-class AP plus their mean.

    The mean runs over classes that actually occur (some evaluable GT
    or some scored detection); a class absent from both sets would
    contribute a meaningless 0 and is left out, with ap reported as
    None. With nothing evaluable at all the mean is 0.0.
    """
    match = match_detections(gt, pred, table)
    per_class: dict[str, ClassApEntry] = {}
    present_aps: list[float] = []
    for class_id, entry in enumerate(table.classes):
        cm = match.for_class(class_id)
        recalls, precisions = pr_samples(match, class_id)
        if cm.present:
            ap = average_precision(match, class_id, mode=mode)
            present_aps.append(ap)
        else:
            ap = None
        per_class[entry.name] = ClassApEntry(
            name=entry.name,
            ap=ap,
            n_evaluable_gt=cm.n_evaluable_gt,
            n_true_positives=cm.n_true_positives,
            n_false_positives=cm.n_false_positives,
            recall_samples=tuple(recalls),
            precision_samples=tuple(precisions),
        )
    mean_ap = sum(present_aps) / len(present_aps) if present_aps else 0.0
    return ApReport(per_class=per_class, mean_ap=mean_ap, mode=mode)


def map_similarity(
    old: AnnotationSet,
    new: AnnotationSet,
    table: ClassTable,
    *,
    mode: ApMode = ApMode.ELEVEN_POINT,
) -> float:
    """mAP of ``new`` scored against ``old`` as if it were ground truth.

    Confidences on the old side are ignored; don't-care filtering uses
    the old set's boxes. Identical sets score 100. Two sets with
    nothing evaluable in them at all are defined as maximally similar
    (100.0); that keeps self-similarity exact in degenerate corners.
    """
    as_gt = AnnotationSet(
        entries={
            image_id: tuple(
                Detection(class_id=d.class_id, bbox=d.bbox, confidence=1.0)
                for d in dets
            )
            for image_id, dets in old.entries.items()
        },
        kind=AnnotationKind.GROUND_TRUTH,
    )
    match = match_detections(as_gt, new, table)
    aps = [
        average_precision(match, class_id, mode=mode)
        for class_id in range(len(table))
        if match.for_class(class_id).present
    ]
    if not aps:
        return 100.0
    return sum(aps) / len(aps)


def _kept_detections(
    pseudo: AnnotationSet, gt: AnnotationSet, table: ClassTable, *, snap: bool
) -> AnnotationSet:
    match = match_detections(gt, pseudo, table)
    replacement: dict[tuple[str, int], BoundingBox] = {}
    kept: set[tuple[str, int]] = set()
    for cm in match.per_class.values():
        for s in cm.scored:
            if not s.is_true_positive:
                continue
            kept.add((s.image_id, s.det_index))
            if snap:
                gt_image, gt_index = s.matched_gt
                replacement[(s.image_id, s.det_index)] = gt.entries[gt_image][
                    gt_index
                ].bbox
    entries: dict[str, list[Detection]] = {}
    for image_id, dets in pseudo.entries.items():
        out = []
        for di, d in enumerate(dets):
            if (image_id, di) not in kept:
                continue
            bbox = replacement.get((image_id, di), d.bbox)
            out.append(Detection(class_id=d.class_id, bbox=bbox, confidence=d.confidence))
        if out:
            entries[image_id] = out
    return AnnotationSet(entries=entries, kind=AnnotationKind.PSEUDO_LABEL)


def strip_false_positives(
    pseudo: AnnotationSet, gt: AnnotationSet, table: ClassTable
) -> AnnotationSet:
    """Keep exactly the true-positive detections; drop emptied images."""
    return _kept_detections(pseudo, gt, table, snap=False)


def snap_true_positive_boxes(
    pseudo: AnnotationSet, gt: AnnotationSet, table: ClassTable
) -> AnnotationSet:
    """strip_false_positives, with each kept box replaced by the ground
    truth box it matched; confidences stay as predicted."""
    return _kept_detections(pseudo, gt, table, snap=True)


def self_label_stats(
    pseudo: AnnotationSet, gt: AnnotationSet, table: ClassTable
) -> dict[str, tuple[int, float]]:
    """Per class name: (total pseudo detections, false-positive share).

    The count covers every pseudo detection of the class, including ones
    later discarded by don't-care filtering; the percentage is
    100*FP/(TP+FP) over the scored ones, 0.0 when nothing was scored.
    """
    match = match_detections(gt, pseudo, table)
    counts = pseudo.class_counts()
    out: dict[str, tuple[int, float]] = {}
    for class_id, entry in enumerate(table.classes):
        cm = match.for_class(class_id)
        scored = len(cm.scored)
        fp_percent = 100.0 * cm.n_false_positives / scored if scored else 0.0
        out[entry.name] = (counts.get(class_id, 0), fp_percent)
    return out
