"""Detector contract: the only doorway between the labeling loop and a detector.

A backend is anything that can train a detector on (ground truth + pseudo
labels) and run inference. The two module-level functions ``train`` and
``predict`` wrap every backend call with the validation and view plumbing the
loop relies on, so backends themselves stay small:

* requests are checked before dispatch (non-empty labeled set, training
  budget, per-image negative-mining flags);
* the horizontal-mirror view is applied here, on the way in and out, so a
  backend only ever sees data in its own view frame and callers only ever see
  the original frame;
* inference output is validated against the class table and image bounds
  before anyone downstream trusts it.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Sequence

from colabel.types import (
    AnnotationKind,
    AnnotationSet,
    ClassTable,
    Detection,
    ImageRecord,
    TrainingHyper,
    ViewTransform,
    mirror_annotations,
)

__all__ = [
    "BackendError",
    "ConfigurationError",
    "DetectorBackend",
    "ModelHandle",
    "TrainRequest",
    "predict",
    "train",
]


class ConfigurationError(ValueError):
    """A request was malformed before it ever reached a backend."""


class BackendError(RuntimeError):
    """A backend failed or produced output that violates its contract."""


@dataclass(frozen=True)
class ModelHandle:
    """Opaque reference to one trained detector.

    ``token`` means whatever the owning backend wants it to mean (an index, a
    file path, ...). The handle also remembers which view frame the model was
    trained in so ``predict`` can translate, and the seed, so a run can be
    reproduced from its checkpoints alone.
    """

    backend_id: str
    token: str
    view_transform: ViewTransform = ViewTransform.IDENTITY
    training_seed: int = 0

    def __post_init__(self) -> None:
        if not self.backend_id:
            raise ConfigurationError("backend_id must be non-empty")
        if not self.token:
            raise ConfigurationError("model token must be non-empty")


@dataclass(frozen=True)
class TrainRequest:
    """Everything one training session needs, already in the backend's view frame.

    ``negatives_allowed`` records, per image, whether absence of a box may be
    treated as background: true for ground-truth images, false for
    pseudo-labeled ones (an image the detector labeled itself proves nothing
    about what it missed). The flags are derived, not chosen; a request that
    disagrees with its annotation sets is rejected.
    """

    labeled: AnnotationSet
    pseudo: AnnotationSet
    images: Mapping[str, ImageRecord]
    hyper: TrainingHyper
    view_transform: ViewTransform = ViewTransform.IDENTITY
    seed: int = 0
    negatives_allowed: Mapping[str, bool] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.labeled.kind is not AnnotationKind.GROUND_TRUTH:
            raise ConfigurationError(
                f"labeled set must be ground truth, got {self.labeled.kind.value}"
            )
        if self.pseudo.kind is not AnnotationKind.PSEUDO_LABEL:
            raise ConfigurationError(
                f"pseudo set must be pseudo labels, got {self.pseudo.kind.value}"
            )
        overlap = set(self.labeled.image_ids) & set(self.pseudo.image_ids)
        if overlap:
            raise ConfigurationError(
                f"labeled and pseudo sets share image ids: {sorted(overlap)[:5]}"
            )
        expected = {i: True for i in self.labeled.image_ids}
        expected.update({i: False for i in self.pseudo.image_ids})
        missing = [i for i in expected if i not in self.images]
        if missing:
            raise ConfigurationError(
                f"images map missing records for annotated ids: {sorted(missing)[:5]}"
            )
        if self.negatives_allowed is None:
            object.__setattr__(self, "negatives_allowed", MappingProxyType(expected))
        else:
            got = dict(self.negatives_allowed)
            if got != expected:
                bad = sorted(
                    i for i in set(got) | set(expected) if got.get(i) != expected.get(i)
                )
                raise ConfigurationError(
                    "negatives_allowed disagrees with annotation kinds for "
                    f"{bad[:5]} (labeled images allow negatives, pseudo-labeled "
                    "images must not)"
                )
            object.__setattr__(self, "negatives_allowed", MappingProxyType(got))
        if not isinstance(self.images, MappingProxyType):
            object.__setattr__(self, "images", MappingProxyType(dict(self.images)))

    @property
    def n_images(self) -> int:
        return self.labeled.n_images + self.pseudo.n_images


class DetectorBackend(abc.ABC):
    """One detector implementation: simulated, external process, or test stub."""

    @property
    @abc.abstractmethod
    def backend_id(self) -> str:
        """Stable identifier stamped into every handle this backend issues."""

    @property
    def supports_concurrent_sessions(self) -> bool:
        """Whether two training/inference sessions may run at the same time."""
        return False

    @abc.abstractmethod
    def run_training(self, request: TrainRequest) -> ModelHandle:
        """Train one detector; must stamp the request's view and seed into the handle."""

    @abc.abstractmethod
    def run_inference(
        self, handle: ModelHandle, records: Sequence[ImageRecord], table: ClassTable
    ) -> AnnotationSet:
        """Predict on the given images; returns pseudo labels in the handle's view frame.

        Images with no detections above threshold are omitted from the result.
        """

    def close(self) -> None:
        """Release resources. Default: nothing to release."""


def _check_budget(hyper: TrainingHyper, n_images: int) -> None:
    # The budget rule only binds when both knobs are present; a backend with
    # its own schedule simply leaves them out.
    if not hyper.budget_check:
        return
    batch = hyper.options.get("batch_size")
    iters = hyper.options.get("iterations")
    if batch is None or iters is None:
        return
    if batch * iters < n_images:
        raise ConfigurationError(
            f"training budget too small: batch_size*iterations = {batch}*{iters} "
            f"= {batch * iters} < {n_images} images (every image must be seen "
            "at least once)"
        )


def train(
    backend: DetectorBackend,
    labeled: AnnotationSet,
    pseudo: AnnotationSet,
    images: Mapping[str, ImageRecord],
    hyper: TrainingHyper,
    *,
    view_transform: ViewTransform = ViewTransform.IDENTITY,
    seed: int = 0,
) -> ModelHandle:
    """Validate, translate into the view frame, and dispatch one training session.

    ``labeled``/``pseudo``/``images`` are given in the original frame; when
    ``view_transform`` is the horizontal mirror, everything is mirrored here
    before the backend sees it. Raises ConfigurationError before dispatch on
    an empty labeled set or an insufficient training budget.
    """
    if labeled.n_images == 0:
        raise ConfigurationError("labeled set is empty: a detector needs ground truth")
    _check_budget(hyper, labeled.n_images + pseudo.n_images)

    if view_transform is ViewTransform.HORIZONTAL_MIRROR:
        needed = set(labeled.image_ids) | set(pseudo.image_ids)
        widths = {i: images[i].width for i in needed if i in images}
        labeled = mirror_annotations(labeled, widths)
        pseudo = mirror_annotations(pseudo, widths)
        flipped = [rec.mirrored() for i, rec in images.items() if i in needed]
        images = {rec.image_id: rec for rec in flipped}
    else:
        keep = set(labeled.image_ids) | set(pseudo.image_ids)
        images = {i: rec for i, rec in images.items() if i in keep}

    request = TrainRequest(
        labeled=labeled,
        pseudo=pseudo,
        images=images,
        hyper=hyper,
        view_transform=view_transform,
        seed=seed,
    )
    handle = backend.run_training(request)
    if handle.backend_id != backend.backend_id:
        raise BackendError(
            f"backend {backend.backend_id!r} returned a handle stamped "
            f"{handle.backend_id!r}"
        )
    if handle.view_transform is not view_transform:
        raise BackendError(
            "backend dropped the view transform from the model handle "
            f"(expected {view_transform.value}, got {handle.view_transform.value})"
        )
    return handle


def _validate_predictions(
    annotations: AnnotationSet,
    images: Mapping[str, ImageRecord],
    table: ClassTable,
) -> None:
    unknown = [i for i in annotations.image_ids if i not in images]
    if unknown:
        raise BackendError(
            f"backend predicted on images it was not asked about: {sorted(unknown)[:5]}"
        )
    try:
        table.validate_detections(annotations)
    except (ValueError, KeyError) as exc:
        raise BackendError(f"backend output rejected: {exc}") from None
    slack = 1e-6
    for image_id in annotations.image_ids:
        rec = images[image_id]
        for det in annotations.detections_for(image_id):
            b = det.bbox
            if (
                b.left < -slack
                or b.top < -slack
                or b.right > rec.width + slack
                or b.bottom > rec.height + slack
            ):
                raise BackendError(
                    f"prediction outside image bounds on {image_id!r}: "
                    f"({b.left}, {b.top}, {b.right}, {b.bottom}) vs "
                    f"{rec.width}x{rec.height}"
                )


def predict(
    backend: DetectorBackend,
    handle: ModelHandle,
    images: Mapping[str, ImageRecord],
    table: ClassTable,
) -> AnnotationSet:
    """Run inference in the original frame, whatever frame the model lives in.

    Returns a pseudo-label set over (a subset of) ``images``; every confidence
    clears its class threshold and every box lies inside its image. An empty
    ``images`` map short-circuits to an empty set without touching the backend.
    """
    if handle.backend_id != backend.backend_id:
        raise ConfigurationError(
            f"model {handle.token!r} belongs to backend {handle.backend_id!r}, "
            f"not {backend.backend_id!r}"
        )
    if not images:
        return AnnotationSet.empty(AnnotationKind.PSEUDO_LABEL)

    mirrored = handle.view_transform is ViewTransform.HORIZONTAL_MIRROR
    if mirrored:
        records = [rec.mirrored() for _, rec in sorted(images.items())]
    else:
        records = [rec for _, rec in sorted(images.items())]

    raw = backend.run_inference(handle, records, table)
    if raw.kind is not AnnotationKind.PSEUDO_LABEL:
        raise BackendError(f"backend returned {raw.kind.value}, expected pseudo labels")

    if mirrored:
        widths = {rec.image_id: rec.width for rec in records}
        raw = mirror_annotations(raw, widths)

    # Defensive: an empty per-image list cannot enter an AnnotationSet, so any
    # backend that slipped one through would have blown up already; this keeps
    # the contract honest if that invariant ever loosens.
    entries = {i: raw.detections_for(i) for i in raw.image_ids if raw.detections_for(i)}
    result = AnnotationSet(kind=AnnotationKind.PSEUDO_LABEL, entries=entries)
    _validate_predictions(result, images, table)
    return result
