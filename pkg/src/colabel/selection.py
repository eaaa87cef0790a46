"""Pseudo-label set manipulation between detector calls.

Three moves: sample a random working set from fresh pseudo-labels
(``rand_select``, honoring frame-distance constraints on video data),
rank images by mean confidence and keep an extreme slice
(``select_extreme``), and merge a cycle's pick into the accumulated set
with newer labels replacing older ones per image (``fuse``).
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from colabel.types import (
    AnnotationKind,
    AnnotationSet,
    ImageRecord,
    SelectionDirection,
    SequenceParams,
)


@dataclass(frozen=True)
class ImageConfidence:
    image_id: str
    mean_confidence: float
    detection_count: int


def image_confidences(pseudo: AnnotationSet) -> dict[str, ImageConfidence]:
    """Mean detection confidence per image. Pseudo-set images always
    carry at least one detection, so the mean is always defined."""
    out: dict[str, ImageConfidence] = {}
    for image_id, dets in pseudo.entries.items():
        if not dets:
            raise ValueError(f"image {image_id!r} has no detections")
        out[image_id] = ImageConfidence(
            image_id=image_id,
            mean_confidence=sum(d.confidence for d in dets) / len(dets),
            detection_count=len(dets),
        )
    return out


def _frames_by_sequence(
    image_ids, records: Mapping[str, ImageRecord]
) -> dict[str, list[int]]:
    out: dict[str, list[int]] = {}
    for image_id in image_ids:
        rec = records.get(image_id)
        if rec is not None and rec.in_sequence:
            out.setdefault(rec.sequence_id, []).append(rec.frame_index)
    return out


def rand_select(
    pseudo: AnnotationSet,
    count: int,
    rng: np.random.Generator,
    *,
    records: Mapping[str, ImageRecord] | None = None,
    seq_params: SequenceParams | None = None,
    accumulated: AnnotationSet | None = None,
) -> AnnotationSet:
    """Randomly pick up to ``count`` images from a pseudo-label set.

    Without ``seq_params`` this is a uniform sample without
    replacement. With them, images are visited in seeded-shuffled order
    and accepted only if, within their sequence, they keep at least
    frame_gap_current distance to every image accepted in this call and
    at least frame_gap_history distance to every image already in
    ``accumulated``. May return fewer than ``count``.

    Ids are sorted before any draw, so the result depends only on the
    RNG state and the contents of the input set, not dict order.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    ids = sorted(pseudo.entries)
    if seq_params is None:
        if len(ids) <= count:
            return pseudo.restricted_to(ids)
        picked = rng.choice(len(ids), size=count, replace=False)
        return pseudo.restricted_to(ids[i] for i in picked)

    if records is None:
        raise ValueError("sequence mode needs image records for frame lookups")
    history = _frames_by_sequence(
        accumulated.image_ids if accumulated is not None else (), records
    )
    order = rng.permutation(len(ids))
    accepted: list[str] = []
    accepted_frames: dict[str, list[int]] = {}
    for idx in order:
        if len(accepted) >= count:
            break
        image_id = ids[idx]
        rec = records.get(image_id)
        if rec is not None and rec.in_sequence:
            frame = rec.frame_index
            own = accepted_frames.get(rec.sequence_id, [])
            if any(abs(frame - f) < seq_params.frame_gap_current for f in own):
                continue
            past = history.get(rec.sequence_id, [])
            if any(abs(frame - g) < seq_params.frame_gap_history for g in past):
                continue
            accepted_frames.setdefault(rec.sequence_id, []).append(frame)
        accepted.append(image_id)
    return pseudo.restricted_to(accepted)


def select_extreme(
    pseudo: AnnotationSet,
    count: int | None,
    direction: SelectionDirection,
) -> AnnotationSet:
    """Keep the ``count`` images with the highest (or lowest) mean
    confidence; ties resolve by image id ascending. ``count=None``
    means no truncation and returns the set unchanged."""
    if count is None or count >= pseudo.n_images:
        return pseudo
    if count < 1:
        raise ValueError("count must be >= 1 or None")
    means = image_confidences(pseudo)
    reverse = direction is SelectionDirection.MOST_CONFIDENT
    if reverse:
        ranked = sorted(means.values(), key=lambda c: (-c.mean_confidence, c.image_id))
    else:
        ranked = sorted(means.values(), key=lambda c: (c.mean_confidence, c.image_id))
    return pseudo.restricted_to(c.image_id for c in ranked[:count])


def fuse(old: AnnotationSet, new: AnnotationSet) -> AnnotationSet:
    """Merge two pseudo-label sets; for images present in both, the new
    set's detections replace the old ones wholesale."""
    if old.kind is not AnnotationKind.PSEUDO_LABEL or new.kind is not AnnotationKind.PSEUDO_LABEL:
        raise ValueError("fuse operates on pseudo-label sets")
    merged = dict(old.entries)
    merged.update(new.entries)
    return AnnotationSet(entries=merged, kind=AnnotationKind.PSEUDO_LABEL)
