"""Synthetic detection world and a parametric simulated detector.

The world generates images as lists of hidden objects, each carrying a
class, a box, a scalar difficulty, and an appearance vector drawn around its
class mean. The detector never sees pixels; it learns per-class prototype
appearances and a saturating per-class skill, and detects an object with

    q = sigmoid(alpha * (skill_c - difficulty) - beta * ||appearance - prototype_c||)

which is exactly enough mechanism to reproduce the three phenomena the
labeling loops are tested against: detectors improve with more (correct)
training boxes, degrade when appearances shift between domains, and disagree
across mirrored views. Every constant here is a harness choice, configurable
and documented where it is defined.

Datasets serialize as ordinary manifests plus KITTI label files, so the rest
of the system cannot tell simulated data from real data. The hidden
per-object (difficulty, appearance) table rides in a ``world.json`` sidecar
that only the simulated backend reads.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from zlib import crc32

import numpy as np

from colabel.backends.base import BackendError, DetectorBackend, ModelHandle, TrainRequest
from colabel.kitti import load_labels, load_manifest, save_annotations
from colabel.types import (
    AnnotationKind,
    AnnotationSet,
    BoundingBox,
    ClassTable,
    Detection,
    DomainTag,
    ImageRecord,
    ViewTransform,
    is_mirrored_id,
    toggle_mirror_marker,
)

__all__ = [
    "SimDataset",
    "SimDetectorBackend",
    "SimDetectorConfig",
    "SimObject",
    "SimWorldConfig",
    "default_class_means",
    "generate_dataset",
    "load_sim_dataset",
    "mirror_permutation",
]

_WORLD_SIDECAR = "world.json"

# Salt for appearance-noise streams of unmatched pseudo boxes. Keyed by image
# and box geometry, never by training seed: the same wrong box must inject the
# same noise no matter which detector or cycle produced it.
_NOISE_SALT = 0x5EED_0B0E


def mirror_permutation(dim: int) -> tuple[int, ...]:
    """Coordinate pair-swap (0<->1, 2<->3, ...): a fixed involution that makes
    the mirrored view see genuinely different appearance vectors. An odd last
    dimension maps to itself."""
    perm = []
    for i in range(dim):
        j = i + 1 if i % 2 == 0 else i - 1
        perm.append(j if j < dim else i)
    return tuple(perm)


def default_class_means(n_classes: int, dim: int, amplitude: float = 1.5) -> tuple[tuple[float, ...], ...]:
    """One contiguous block of active dimensions per class.

    Blocks are invariant under the pair-swap mirror permutation (they have
    even length whenever dim/n_classes is even), so mirroring changes
    individual appearances without relabeling classes.
    """
    if dim % n_classes != 0:
        raise ValueError(
            f"cannot derive default class means: {dim} dims do not split evenly "
            f"over {n_classes} classes (pass class_means explicitly)"
        )
    block = dim // n_classes
    means = []
    for c in range(n_classes):
        v = [0.0] * dim
        for i in range(c * block, (c + 1) * block):
            v[i] = amplitude
        means.append(tuple(v))
    return tuple(means)


@dataclass(frozen=True)
class SimObject:
    """One hidden object: what the detector would see if it had eyes."""

    class_id: int
    bbox: BoundingBox
    difficulty: float
    appearance: tuple[float, ...]
    track_id: int | None = None

    def __post_init__(self) -> None:
        if self.class_id < 0:
            raise ValueError("sim objects carry real classes, not the ignore bucket")
        if not (math.isfinite(self.difficulty) and 0.0 <= self.difficulty <= 1.0):
            raise ValueError(f"difficulty {self.difficulty} outside [0, 1]")
        if not all(math.isfinite(x) for x in self.appearance):
            raise ValueError("non-finite appearance")
        object.__setattr__(self, "appearance", tuple(float(x) for x in self.appearance))


@dataclass(frozen=True)
class SimWorldConfig:
    """Knobs of the synthetic world. All distances are pixels.

    ``domain_shift`` is the distance between this dataset's appearance means
    and the target domain's: target-domain data sits at the base class means,
    source-side data (source or adapted-source tags) at base + shift along
    the unit diagonal. A shift of 0 makes the domains identical; a partially
    adapted source is just a smaller shift.
    """

    width: float = 1240.0
    height: float = 375.0
    mean_objects: float = 3.0
    class_mix: tuple[float, ...] = (0.5, 0.5)
    appearance_dim: int = 8
    appearance_noise: float = 0.25
    class_means: tuple[tuple[float, ...], ...] | None = None
    domain_shift: float = 0.0
    # (width range, height range) per class. Vehicle-like boxes deliberately
    # allow heights below the usual 25px evaluation floor so undersized
    # ground truth (don't-care material) occurs naturally.
    box_ranges: tuple[tuple[tuple[float, float], tuple[float, float]], ...] = (
        ((40.0, 160.0), (22.0, 95.0)),
        ((14.0, 48.0), (30.0, 105.0)),
    )
    difficulty_alpha: float = 2.0
    difficulty_beta: float = 2.0
    sequence_length: int | None = None
    box_drift: float = 2.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if self.mean_objects < 0:
            raise ValueError("mean_objects must be >= 0")
        if not self.class_mix or any(p < 0 for p in self.class_mix):
            raise ValueError("class_mix must be non-negative and non-empty")
        if abs(sum(self.class_mix) - 1.0) > 1e-9:
            raise ValueError(f"class_mix sums to {sum(self.class_mix)}, expected 1")
        if self.appearance_dim < 1:
            raise ValueError("appearance_dim must be >= 1")
        if self.appearance_noise < 0:
            raise ValueError("appearance_noise must be >= 0")
        if self.domain_shift < 0:
            raise ValueError("domain_shift must be >= 0")
        if len(self.box_ranges) < len(self.class_mix):
            raise ValueError(
                f"box_ranges covers {len(self.box_ranges)} classes, "
                f"class_mix has {len(self.class_mix)}"
            )
        for (wlo, whi), (hlo, hhi) in self.box_ranges:
            if not (0 < wlo <= whi <= self.width and 0 < hlo <= hhi <= self.height):
                raise ValueError("box size range outside image")
        if self.sequence_length is not None and self.sequence_length < 1:
            raise ValueError("sequence_length must be >= 1")
        if self.box_drift < 0:
            raise ValueError("box_drift must be >= 0")
        if self.class_means is not None:
            if len(self.class_means) != len(self.class_mix):
                raise ValueError("class_means must match class_mix length")
            for m in self.class_means:
                if len(m) != self.appearance_dim:
                    raise ValueError("class mean dimension != appearance_dim")

    def resolved_means(self, domain_tag: DomainTag) -> np.ndarray:
        """Class means actually sampled from, after the domain shift."""
        base = self.class_means
        if base is None:
            base = default_class_means(len(self.class_mix), self.appearance_dim)
        means = np.asarray(base, dtype=float)
        if domain_tag is not DomainTag.TARGET and self.domain_shift > 0:
            diag = np.ones(self.appearance_dim) / math.sqrt(self.appearance_dim)
            means = means + self.domain_shift * diag
        return means


@dataclass(frozen=True)
class SimDataset:
    """A generated world slice: public data plus the hidden object table."""

    name: str
    records: Mapping[str, ImageRecord]
    ground_truth: AnnotationSet
    objects: Mapping[str, tuple[SimObject, ...]]
    config: SimWorldConfig
    domain_tag: DomainTag

    @property
    def n_objects(self) -> int:
        return sum(len(v) for v in self.objects.values())

    def class_object_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for objs in self.objects.values():
            for o in objs:
                counts[o.class_id] = counts.get(o.class_id, 0) + 1
        return counts

    def save(self, out_dir: str | Path, table: ClassTable) -> Path:
        """Write manifest + KITTI labels + the hidden-world sidecar.

        Returns the manifest path; the sidecar lands next to it.
        """
        out_dir = Path(out_dir)
        manifest_path = save_annotations(
            self.ground_truth, self.records, out_dir, table=table, name=self.name
        )
        world = {}
        for image_id in sorted(self.records):
            rec = self.records[image_id]
            world[image_id] = {
                "width": rec.width,
                "height": rec.height,
                "objects": [
                    {
                        "class_id": o.class_id,
                        "bbox": [o.bbox.left, o.bbox.top, o.bbox.right, o.bbox.bottom],
                        "difficulty": o.difficulty,
                        "appearance": list(o.appearance),
                        "track_id": o.track_id,
                    }
                    for o in self.objects.get(image_id, ())
                ],
            }
        sidecar = manifest_path.parent / _WORLD_SIDECAR
        sidecar.write_text(json.dumps(world, sort_keys=True))
        return manifest_path


def load_sim_dataset(manifest_path: str | Path, table: ClassTable) -> SimDataset:
    """Rehydrate a saved simulated dataset, sidecar included."""
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path)
    gt = load_labels(manifest, table)
    sidecar = manifest_path.parent / _WORLD_SIDECAR
    if not sidecar.exists():
        raise FileNotFoundError(
            f"{sidecar} missing: not a simulated dataset (the hidden object "
            "table only exists for generated data)"
        )
    world = json.loads(sidecar.read_text())
    objects: dict[str, tuple[SimObject, ...]] = {}
    for image_id, payload in world.items():
        objects[image_id] = tuple(
            SimObject(
                class_id=o["class_id"],
                bbox=BoundingBox(*o["bbox"]),
                difficulty=o["difficulty"],
                appearance=tuple(o["appearance"]),
                track_id=o.get("track_id"),
            )
            for o in payload["objects"]
        )
    records = {r.image_id: r for r in manifest.images}
    return SimDataset(
        name=manifest.name or manifest_path.parent.name,
        records=records,
        ground_truth=gt,
        objects=objects,
        config=SimWorldConfig(),  # generation knobs are not round-tripped
        domain_tag=manifest.images[0].domain_tag if manifest.images else DomainTag.TARGET,
    )


def _round_box(l: float, t: float, r: float, b: float) -> BoundingBox:
    return BoundingBox(round(l, 2), round(t, 2), round(r, 2), round(b, 2))


def _sample_objects(
    cfg: SimWorldConfig,
    rng: np.random.Generator,
    means: np.ndarray,
    track_start: int,
) -> list[dict]:
    n = int(rng.poisson(cfg.mean_objects))
    out = []
    for j in range(n):
        c = int(rng.choice(len(cfg.class_mix), p=np.asarray(cfg.class_mix)))
        (wlo, whi), (hlo, hhi) = cfg.box_ranges[c]
        w = float(rng.uniform(wlo, whi))
        h = float(rng.uniform(hlo, hhi))
        l = float(rng.uniform(0.0, cfg.width - w))
        t = float(rng.uniform(0.0, cfg.height - h))
        d = float(rng.beta(cfg.difficulty_alpha, cfg.difficulty_beta))
        a = means[c] + cfg.appearance_noise * rng.standard_normal(cfg.appearance_dim)
        out.append(
            {
                "class_id": c,
                "l": l,
                "t": t,
                "w": w,
                "h": h,
                "difficulty": d,
                "appearance": tuple(float(x) for x in a),
                "track_id": track_start + j,
            }
        )
    return out


def _materialize(raw: dict) -> SimObject:
    return SimObject(
        class_id=raw["class_id"],
        bbox=_round_box(raw["l"], raw["t"], raw["l"] + raw["w"], raw["t"] + raw["h"]),
        difficulty=raw["difficulty"],
        appearance=raw["appearance"],
        track_id=raw["track_id"],
    )


def generate_dataset(
    cfg: SimWorldConfig,
    count: int,
    domain_tag: DomainTag = DomainTag.TARGET,
    name: str = "sim",
) -> SimDataset:
    """Generate ``count`` images of hidden objects plus their ground truth.

    Deterministic in ``cfg.seed``; the stream does not depend on ``name`` or
    ``domain_tag``, so two datasets generated with the same seed and shift
    are identical object for object (the seed-pairing used by the
    domain-shift tests).

    With ``sequence_length`` set, images are grouped into sequences whose
    objects persist frame to frame, drifting by a small random translation;
    that correlation is what the frame-gap selection rules exist to dilute.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(cfg.seed)
    means = cfg.resolved_means(domain_tag)

    records: dict[str, ImageRecord] = {}
    entries: dict[str, tuple[Detection, ...]] = {}
    objects: dict[str, tuple[SimObject, ...]] = {}
    next_track = 0

    def emit(image_id: str, objs: list[SimObject], seq: str | None, frame: int | None) -> None:
        records[image_id] = ImageRecord(
            image_id=image_id,
            width=cfg.width,
            height=cfg.height,
            sequence_id=seq,
            frame_index=frame,
            domain_tag=domain_tag,
        )
        objects[image_id] = tuple(objs)
        # zero-object images stay in the ground truth as true negatives
        entries[image_id] = tuple(
            Detection(class_id=o.class_id, bbox=o.bbox, confidence=1.0) for o in objs
        )

    if cfg.sequence_length is None:
        for i in range(count):
            raws = _sample_objects(cfg, rng, means, next_track)
            next_track += len(raws)
            emit(f"{name}_{i:06d}", [_materialize(r) for r in raws], None, None)
    else:
        length = cfg.sequence_length
        n_sequences = math.ceil(count / length)
        produced = 0
        for s in range(n_sequences):
            seq_id = f"{name}_s{s:04d}"
            raws = _sample_objects(cfg, rng, means, next_track)
            next_track += len(raws)
            for f in range(length):
                if produced == count:
                    break
                if f > 0:
                    for r in raws:
                        dx = float(rng.normal(0.0, cfg.box_drift))
                        dy = float(rng.normal(0.0, cfg.box_drift))
                        # rigid translation, clamped so the box stays inside
                        dx = min(max(dx, -r["l"]), cfg.width - r["l"] - r["w"])
                        dy = min(max(dy, -r["t"]), cfg.height - r["t"] - r["h"])
                        r["l"] += dx
                        r["t"] += dy
                emit(
                    f"{name}_{s:04d}_{f:03d}",
                    [_materialize(r) for r in raws],
                    seq_id,
                    f,
                )
                produced += 1

    gt = AnnotationSet(entries=entries, kind=AnnotationKind.GROUND_TRUTH)
    return SimDataset(
        name=name,
        records=records,
        ground_truth=gt,
        objects=objects,
        config=cfg,
        domain_tag=domain_tag,
    )


# ---------------------------------------------------------------------------
# The simulated detector
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimDetectorConfig:
    """Detector mechanics. Defaults are the documented harness choices:
    skill saturates as n/(n+kappa); emission confidence is
    sigmoid(alpha*(skill - difficulty) - beta*appearance_distance) plus
    Normal(0, emission_noise); boxes jitter by Normal(0, (1-skill)*jitter)
    per coordinate; false positives arrive at rate fp_rate*(1-skill)."""

    kappa: float = 50.0
    alpha: float = 4.0
    beta: float = 1.0
    jitter: float = 6.0
    fp_rate: float = 0.3
    emission_noise: float = 0.02
    # Minimum IoU for a pseudo box to inherit a ground-truth object's
    # appearance; below it (or with no overlap at all) the box contributes an
    # arbitrary noise vector instead, which is how wrong labels hurt.
    contribution_min_iou: float = 0.0
    noise_vector_scale: float = 1.0
    fp_box_ranges: tuple[tuple[float, float], tuple[float, float]] = ((20.0, 120.0), (26.0, 80.0))

    def __post_init__(self) -> None:
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if self.jitter < 0 or self.fp_rate < 0 or self.emission_noise < 0:
            raise ValueError("jitter, fp_rate, emission_noise must be >= 0")
        if not 0.0 <= self.contribution_min_iou <= 1.0:
            raise ValueError("contribution_min_iou outside [0, 1]")
        if self.noise_vector_scale < 0:
            raise ValueError("noise_vector_scale must be >= 0")


@dataclass(frozen=True)
class SimModelState:
    """What the simulated detector remembers after training."""

    prototypes: tuple[tuple[float, ...], ...]
    counts: tuple[int, ...]
    kappa: float
    noise_seed: int
    view_transform: ViewTransform

    def skill(self, class_id: int) -> float:
        n = self.counts[class_id]
        if n + self.kappa <= 0:
            return 0.0
        return n / (n + self.kappa)


class _SimImage:
    __slots__ = ("width", "height", "objects")

    def __init__(self, width: float, height: float, objects: tuple[SimObject, ...]):
        self.width = width
        self.height = height
        self.objects = objects


def _sigmoid(x: float) -> float:
    if x >= 60.0:
        return 1.0
    if x <= -60.0:
        return 0.0
    return 1.0 / (1.0 + math.exp(-x))


def _box_iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.right, b.right) - max(a.left, b.left)
    ih = min(a.bottom, b.bottom) - max(a.top, b.top)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def _noise_stream(image_id: str, bbox: BoundingBox, scale: float, dim: int) -> np.ndarray:
    # Keyed by image and box geometry so the same box always injects the same
    # vector, independent of training order, seed, or which detector asks.
    key = [
        _NOISE_SALT,
        crc32(image_id.encode()),
        int(round(bbox.left * 100)),
        int(round(bbox.top * 100)),
        int(round(bbox.right * 100)),
        int(round(bbox.bottom * 100)),
    ]
    rng = np.random.default_rng(np.random.SeedSequence(key))
    return scale * rng.standard_normal(dim)


class SimDetectorBackend(DetectorBackend):
    """Detector over hidden object tables; safe for concurrent sessions.

    The backend never reads boxes' pixels (there are none); training resolves
    each annotated box against the hidden objects of its image wherever the
    registry knows about that image.
    """

    def __init__(
        self,
        config: SimDetectorConfig | None = None,
        datasets: Iterable[SimDataset] = (),
    ) -> None:
        self._config = config or SimDetectorConfig()
        self._images: dict[str, _SimImage] = {}
        self._models: dict[str, SimModelState] = {}
        self._lock = threading.Lock()
        self._n_models = 0
        for ds in datasets:
            self.register(ds)

    @property
    def backend_id(self) -> str:
        return "sim"

    @property
    def supports_concurrent_sessions(self) -> bool:
        return True

    @property
    def config(self) -> SimDetectorConfig:
        return self._config

    def register(self, dataset: SimDataset) -> None:
        with self._lock:
            for image_id, rec in dataset.records.items():
                entry = _SimImage(rec.width, rec.height, dataset.objects.get(image_id, ()))
                known = self._images.get(image_id)
                if known is not None and known.objects != entry.objects:
                    raise ValueError(f"conflicting sim registrations for image {image_id!r}")
                self._images[image_id] = entry

    @classmethod
    def from_manifests(
        cls,
        manifest_paths: Iterable[str | Path],
        table: ClassTable,
        config: SimDetectorConfig | None = None,
    ) -> "SimDetectorBackend":
        backend = cls(config)
        for p in manifest_paths:
            backend.register(load_sim_dataset(p, table))
        return backend

    def model_state(self, handle: ModelHandle) -> SimModelState:
        with self._lock:
            return self._models[handle.token]

    # -- training ------------------------------------------------------------

    def _resolve(self, image_id: str) -> tuple[str, bool, _SimImage]:
        mirrored = is_mirrored_id(image_id)
        original = toggle_mirror_marker(image_id) if mirrored else image_id
        sim = self._images.get(original)
        if sim is None:
            raise BackendError(f"unknown simulated image {original!r}")
        return original, mirrored, sim

    def _contribution(
        self, original_id: str, sim: _SimImage, bbox: BoundingBox, dim: int
    ) -> np.ndarray:
        best_iou = 0.0
        best: SimObject | None = None
        for obj in sim.objects:
            v = _box_iou(bbox, obj.bbox)
            if v > best_iou:
                best_iou = v
                best = obj
        if best is not None and best_iou >= max(self._config.contribution_min_iou, 1e-12):
            return np.asarray(best.appearance, dtype=float)
        return _noise_stream(original_id, bbox, self._config.noise_vector_scale, dim)

    def run_training(self, request: TrainRequest) -> ModelHandle:
        dim: int | None = None
        per_class: dict[int, list[np.ndarray]] = {}
        mirror_perm: tuple[int, ...] | None = None

        for part in (request.labeled, request.pseudo):
            for image_id in sorted(part.image_ids):
                original, mirrored, sim = self._resolve(image_id)
                if dim is None and sim.objects:
                    dim = len(sim.objects[0].appearance)
                for det in part.detections_for(image_id):
                    if det.class_id < 0:
                        continue  # ignore-bucket boxes teach nothing
                    bbox = det.bbox.mirrored(sim.width) if mirrored else det.bbox
                    if dim is None:
                        dim = self._probe_dim()
                    a = self._contribution(original, sim, bbox, dim)
                    if mirrored:
                        if mirror_perm is None or len(mirror_perm) != dim:
                            mirror_perm = mirror_permutation(dim)
                        a = a[list(mirror_perm)]
                    per_class.setdefault(det.class_id, []).append(a)

        if dim is None:
            dim = self._probe_dim()
        n_classes = max(per_class.keys(), default=-1) + 1
        prototypes = []
        counts = []
        for c in range(n_classes):
            vecs = per_class.get(c, [])
            counts.append(len(vecs))
            if vecs:
                prototypes.append(tuple(float(x) for x in np.mean(vecs, axis=0)))
            else:
                prototypes.append(tuple([0.0] * dim))

        state = SimModelState(
            prototypes=tuple(prototypes),
            counts=tuple(counts),
            kappa=self._config.kappa,
            noise_seed=request.seed,
            view_transform=request.view_transform,
        )
        with self._lock:
            self._n_models += 1
            token = f"sim-{self._n_models:04d}"
            self._models[token] = state
        return ModelHandle(
            backend_id=self.backend_id,
            token=token,
            view_transform=request.view_transform,
            training_seed=request.seed,
        )

    def _probe_dim(self) -> int:
        for sim in self._images.values():
            if sim.objects:
                return len(sim.objects[0].appearance)
        return 1

    # -- inference -----------------------------------------------------------

    def run_inference(
        self, handle: ModelHandle, records: Sequence[ImageRecord], table: ClassTable
    ) -> AnnotationSet:
        with self._lock:
            state = self._models.get(handle.token)
        if state is None:
            raise BackendError(f"unknown sim model {handle.token!r}")
        entries: dict[str, tuple[Detection, ...]] = {}
        for rec in records:
            original, mirrored, sim = self._resolve(rec.image_id)
            dets = self._predict_one(state, original, sim, table)
            if mirrored:
                dets = [
                    Detection(
                        class_id=d.class_id,
                        bbox=d.bbox.mirrored(sim.width),
                        confidence=d.confidence,
                    )
                    for d in dets
                ]
            if dets:
                entries[rec.image_id] = tuple(dets)
        return AnnotationSet(entries=entries, kind=AnnotationKind.PSEUDO_LABEL)

    def _predict_one(
        self, state: SimModelState, original_id: str, sim: _SimImage, table: ClassTable
    ) -> list[Detection]:
        cfg = self._config
        # Per-image stream keyed off the model's seed: repeatable regardless
        # of how images are batched across calls.
        rng = np.random.default_rng(
            np.random.SeedSequence([state.noise_seed, crc32(original_id.encode())])
        )
        dets: list[Detection] = []
        n_classes = len(table)
        for obj in sim.objects:
            if obj.class_id >= n_classes:
                raise BackendError(
                    f"image {original_id!r} holds class {obj.class_id}, "
                    f"table knows {n_classes}"
                )
            entry = table.entry(obj.class_id)
            if obj.class_id < len(state.counts):
                s = state.skill(obj.class_id)
                proto = np.asarray(state.prototypes[obj.class_id], dtype=float)
                dist = float(np.linalg.norm(np.asarray(obj.appearance) - proto))
            else:
                s = 0.0
                dist = float(np.linalg.norm(np.asarray(obj.appearance)))
            q = _sigmoid(cfg.alpha * (s - obj.difficulty) - cfg.beta * dist)
            eps = float(rng.normal(0.0, cfg.emission_noise))
            if q + eps < entry.threshold:
                continue
            confidence = round(min(max(q + eps, entry.threshold), 1.0), 4)
            spread = (1.0 - s) * cfg.jitter
            jit = rng.normal(0.0, spread, size=4) if spread > 0 else np.zeros(4)
            bbox = self._jittered_box(obj.bbox, jit, sim.width, sim.height)
            dets.append(Detection(class_id=obj.class_id, bbox=bbox, confidence=confidence))
        for c in range(n_classes):
            s = state.skill(c) if c < len(state.counts) else 0.0
            n_fp = int(rng.poisson(cfg.fp_rate * (1.0 - s)))
            entry = table.entry(c)
            for _ in range(n_fp):
                hi = min(entry.threshold + 0.1, 1.0)
                confidence = round(float(rng.uniform(entry.threshold, hi)), 4)
                (wlo, whi), (hlo, hhi) = cfg.fp_box_ranges
                w = float(rng.uniform(wlo, min(whi, sim.width)))
                h = float(rng.uniform(hlo, min(hhi, sim.height)))
                l = float(rng.uniform(0.0, sim.width - w))
                t = float(rng.uniform(0.0, sim.height - h))
                dets.append(
                    Detection(
                        class_id=c,
                        bbox=_round_box(l, t, l + w, t + h),
                        confidence=confidence,
                    )
                )
        return dets

    @staticmethod
    def _jittered_box(
        bbox: BoundingBox, jit: np.ndarray, width: float, height: float
    ) -> BoundingBox:
        l = bbox.left + float(jit[0])
        t = bbox.top + float(jit[1])
        r = bbox.right + float(jit[2])
        b = bbox.bottom + float(jit[3])
        # repair: at least 1px span, fully inside the image
        l = min(max(l, 0.0), width - 1.0)
        r = max(min(r, width), l + 1.0)
        t = min(max(t, 0.0), height - 1.0)
        b = max(min(b, height), t + 1.0)
        return _round_box(l, t, r, b)
