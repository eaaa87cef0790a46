"""Label-file and manifest I/O.

Label files use the KITTI object layout: one object per line, 15
whitespace-separated fields plus an optional trailing score. Only the
type name, the four bbox fields, and the score are interpreted; the
rest is carried through untouched so foreign tooling keeps working on
files we rewrite. Boxes are written at 2 decimals and scores at 4,
which is also the precision the rest of the engine quantizes to, so a
write/read cycle is lossless.

Datasets are described by JSON-lines manifests: one image per line with
id, pixel size, optional sequence position, optional domain tag, and an
optional relative path to the image's label file. A sibling
``<stem>.meta.json`` can carry a dataset name, the annotation kind, and
class-name mapping overrides.
"""

from __future__ import annotations

import json
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from colabel.types import (
    IGNORE_CLASS_ID,
    AnnotationKind,
    AnnotationSet,
    BoundingBox,
    ClassTable,
    Detection,
    DomainTag,
    ImageRecord,
)

DONT_CARE_NAME = "DontCare"

# Conventional KITTI type names folded into coarse classes when the
# class table defines the target name. Everything else that the table
# doesn't name directly lands in the ignore bucket.
_SYNONYMS = {
    "Car": "vehicle",
    "Van": "vehicle",
    "Truck": "vehicle",
    "Pedestrian": "pedestrian",
    "Person_sitting": "pedestrian",
    "Cyclist": "cyclist",
    "Tram": "tram",
}


class KittiFormatError(ValueError):
    """A label file or manifest line that cannot be interpreted."""


@dataclass(frozen=True)
class KittiLine:
    """One parsed label line, everything preserved."""

    type_name: str
    truncated: float
    occluded: int
    alpha: float
    bbox: BoundingBox
    dimensions: tuple[float, float, float]
    location: tuple[float, float, float]
    rotation_y: float
    score: float | None = None


@dataclass(frozen=True)
class ParsedLabel:
    detection: Detection
    raw: KittiLine


def resolve_class_map(
    table: ClassTable, overrides: Mapping[str, str] | None = None
) -> dict[str, int]:
    """Build the type-name -> class-id mapping used while parsing.

    Table names map to themselves, known synonyms map onto table names
    when those exist, and overrides win over both. An override value of
    "ignore" (or DontCare) sends the name to the ignore bucket. Names
    absent from the final map are ignored at parse time.
    """
    out: dict[str, int] = {name: table.id_of(name) for name in table.names}
    for alias, target in _SYNONYMS.items():
        if target in table.names and alias not in out:
            out[alias] = table.id_of(target)
    out[DONT_CARE_NAME] = IGNORE_CLASS_ID
    for alias, target in (overrides or {}).items():
        if target in ("ignore", DONT_CARE_NAME):
            out[alias] = IGNORE_CLASS_ID
        else:
            out[alias] = table.id_of(target)
    return out


def parse_label_line(
    line: str, class_map: Mapping[str, int], lineno: int = 0
) -> ParsedLabel:
    fields = line.split()
    if len(fields) not in (15, 16):
        raise KittiFormatError(
            f"line {lineno}: expected 15 or 16 fields, got {len(fields)}"
        )
    try:
        numbers = [float(x) for x in fields[1:]]
    except ValueError as exc:
        raise KittiFormatError(f"line {lineno}: unparsable number: {exc}") from None
    type_name = fields[0]
    try:
        bbox = BoundingBox(*numbers[3:7])
    except ValueError as exc:
        raise KittiFormatError(f"line {lineno}: {exc}") from None
    score = numbers[14] if len(fields) == 16 else None
    if score is not None and not 0.0 <= score <= 1.0:
        raise KittiFormatError(f"line {lineno}: score {score} outside [0, 1]")
    raw = KittiLine(
        type_name=type_name,
        truncated=numbers[0],
        occluded=int(numbers[1]),
        alpha=numbers[2],
        bbox=bbox,
        dimensions=(numbers[7], numbers[8], numbers[9]),
        location=(numbers[10], numbers[11], numbers[12]),
        rotation_y=numbers[13],
        score=score,
    )
    detection = Detection(
        class_id=class_map.get(type_name, IGNORE_CLASS_ID),
        bbox=bbox,
        confidence=1.0 if score is None else score,
    )
    return ParsedLabel(detection=detection, raw=raw)


def parse_label_file(text: str, class_map: Mapping[str, int]) -> list[ParsedLabel]:
    parsed = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parsed.append(parse_label_line(line, class_map, lineno))
    return parsed


def format_label_line(
    detection: Detection, table: ClassTable, raw: KittiLine | None = None
) -> str:
    """Render one detection as a 16-field label line.

    Uninterpreted fields come from ``raw`` when given, otherwise from
    the conventional sentinels used for detector output files.
    """
    if raw is not None:
        name = raw.type_name
        truncated, occluded, alpha = raw.truncated, raw.occluded, raw.alpha
        dims, loc, rot = raw.dimensions, raw.location, raw.rotation_y
    else:
        if detection.class_id == IGNORE_CLASS_ID:
            name = DONT_CARE_NAME
        else:
            name = table.entry(detection.class_id).name
        truncated, occluded, alpha = 0.0, 0, -10.0
        dims, loc, rot = (-1.0, -1.0, -1.0), (-1000.0, -1000.0, -1000.0), -10.0
    b = detection.bbox
    parts = [
        name,
        f"{truncated:.2f}",
        str(occluded),
        f"{alpha:.2f}",
        f"{b.left:.2f}",
        f"{b.top:.2f}",
        f"{b.right:.2f}",
        f"{b.bottom:.2f}",
        f"{dims[0]:.2f}",
        f"{dims[1]:.2f}",
        f"{dims[2]:.2f}",
        f"{loc[0]:.2f}",
        f"{loc[1]:.2f}",
        f"{loc[2]:.2f}",
        f"{rot:.2f}",
        f"{detection.confidence:.4f}",
    ]
    return " ".join(parts)


def write_label_file(
    detections: Sequence[Detection],
    table: ClassTable,
    raws: Sequence[KittiLine] | None = None,
) -> str:
    if raws is not None and len(raws) != len(detections):
        raise ValueError("raws must parallel detections")
    lines = [
        format_label_line(d, table, raws[i] if raws is not None else None)
        for i, d in enumerate(detections)
    ]
    return "".join(line + "\n" for line in lines)


@dataclass(frozen=True)
class DatasetManifest:
    """An on-disk dataset: images plus optional per-image label files."""

    name: str
    images: tuple[ImageRecord, ...]
    label_paths: Mapping[str, Path | None] = field(default_factory=dict)
    kind: AnnotationKind | None = None
    class_overrides: Mapping[str, str] | None = None
    path: Path | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "images", tuple(self.images))
        ids = [r.image_id for r in self.images]
        if len(set(ids)) != len(ids):
            raise KittiFormatError(f"manifest {self.name}: duplicate image ids")
        positions = {}
        for r in self.images:
            if r.in_sequence:
                key = (r.sequence_id, r.frame_index)
                if key in positions:
                    raise KittiFormatError(
                        f"manifest {self.name}: duplicate sequence position {key}"
                    )
                positions[key] = r.image_id
        unknown = set(self.label_paths) - set(ids)
        if unknown:
            raise KittiFormatError(
                f"manifest {self.name}: label paths for unknown images {sorted(unknown)}"
            )

    def records_by_id(self) -> dict[str, ImageRecord]:
        return {r.image_id: r for r in self.images}

    def widths(self) -> dict[str, float]:
        return {r.image_id: r.width for r in self.images}

    @property
    def labeled_ids(self) -> tuple[str, ...]:
        return tuple(
            r.image_id for r in self.images if self.label_paths.get(r.image_id)
        )

    @property
    def unlabeled_ids(self) -> tuple[str, ...]:
        return tuple(
            r.image_id for r in self.images if not self.label_paths.get(r.image_id)
        )


def _meta_path(manifest_path: Path) -> Path:
    return manifest_path.with_name(manifest_path.stem + ".meta.json")


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    meta: dict = {}
    meta_file = _meta_path(path)
    if meta_file.exists():
        meta = json.loads(meta_file.read_text())
    images: list[ImageRecord] = []
    label_paths: dict[str, Path | None] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise KittiFormatError(f"{path}:{lineno}: bad JSON: {exc}") from None
        if not isinstance(row, dict):
            raise KittiFormatError(f"{path}:{lineno}: expected an object per line")
        try:
            record = ImageRecord(
                image_id=row["image_id"],
                width=float(row["width"]),
                height=float(row["height"]),
                sequence_id=row.get("sequence_id"),
                frame_index=row.get("frame_index"),
                domain_tag=DomainTag(row.get("domain_tag", "target")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise KittiFormatError(f"{path}:{lineno}: {exc}") from None
        images.append(record)
        rel = row.get("label_path")
        if rel is None:
            label_paths[record.image_id] = None
        else:
            label_file = (path.parent / rel).resolve()
            if not label_file.is_file():
                raise KittiFormatError(
                    f"{path}:{lineno}: label file {rel!r} does not exist"
                )
            label_paths[record.image_id] = label_file
    kind = AnnotationKind(meta["kind"]) if "kind" in meta else None
    return DatasetManifest(
        name=meta.get("name", path.stem),
        images=tuple(images),
        label_paths=label_paths,
        kind=kind,
        class_overrides=meta.get("class_map"),
        path=path,
    )


def load_labels(
    manifest: DatasetManifest,
    table: ClassTable,
    overrides: Mapping[str, str] | None = None,
) -> AnnotationSet:
    """Parse every label file referenced by the manifest into one set.

    Images without a label file are not part of the result; see
    ``load_parts`` for the labeled/unlabeled split. The set kind comes
    from manifest metadata and defaults to ground truth.
    """
    class_map = resolve_class_map(table, overrides or manifest.class_overrides)
    kind = manifest.kind or AnnotationKind.GROUND_TRUTH
    entries: dict[str, list[Detection]] = {}
    for image_id in manifest.labeled_ids:
        label_path = manifest.label_paths[image_id]
        assert label_path is not None
        try:
            parsed = parse_label_file(label_path.read_text(), class_map)
        except KittiFormatError as exc:
            raise KittiFormatError(f"{label_path}: {exc}") from None
        entries[image_id] = [p.detection for p in parsed]
        if kind is AnnotationKind.PSEUDO_LABEL and not parsed:
            raise KittiFormatError(
                f"{label_path}: empty label file in a pseudo-label dataset"
            )
    return AnnotationSet(entries=entries, kind=kind)


def load_parts(
    manifest: DatasetManifest,
    table: ClassTable,
    overrides: Mapping[str, str] | None = None,
) -> tuple[AnnotationSet, AnnotationSet]:
    """Split a manifest into its labeled and unlabeled halves."""
    labeled = load_labels(manifest, table, overrides)
    unlabeled = AnnotationSet(
        entries={i: () for i in manifest.unlabeled_ids},
        kind=AnnotationKind.UNLABELED,
    )
    return labeled, unlabeled


def save_manifest(
    images: Sequence[ImageRecord],
    label_rel_paths: Mapping[str, str],
    path: Path,
    *,
    name: str | None = None,
    kind: AnnotationKind | None = None,
) -> None:
    lines = []
    for r in images:
        row: dict = {"image_id": r.image_id, "width": r.width, "height": r.height}
        if r.in_sequence:
            row["sequence_id"] = r.sequence_id
            row["frame_index"] = r.frame_index
        row["domain_tag"] = r.domain_tag.value
        if r.image_id in label_rel_paths:
            row["label_path"] = label_rel_paths[r.image_id]
        lines.append(json.dumps(row, sort_keys=True))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(line + "\n" for line in lines))
    meta: dict = {}
    if name is not None:
        meta["name"] = name
    if kind is not None:
        meta["kind"] = kind.value
    if meta:
        _meta_path(path).write_text(json.dumps(meta, sort_keys=True) + "\n")


def save_annotations(
    annotations: AnnotationSet,
    images: Mapping[str, ImageRecord],
    out_dir: str | Path,
    *,
    table: ClassTable,
    name: str = "dataset",
) -> Path:
    """Write a set as ``manifest.jsonl`` + ``labels/<image_id>.txt``.

    Returns the manifest path. Image order follows sorted ids so the
    same set always serializes to the same bytes.
    """
    out_dir = Path(out_dir)
    labels_dir = out_dir / "labels"
    labels_dir.mkdir(parents=True, exist_ok=True)
    rel_paths: dict[str, str] = {}
    ordered = sorted(annotations.image_ids)
    for image_id in ordered:
        if image_id not in images:
            raise KeyError(f"no image record for {image_id!r}")
        text = write_label_file(annotations.entries[image_id], table)
        rel = f"labels/{image_id}.txt"
        (out_dir / rel).write_text(text)
        rel_paths[image_id] = rel
    manifest_path = out_dir / "manifest.jsonl"
    save_manifest(
        [images[i] for i in ordered],
        rel_paths,
        manifest_path,
        name=name,
        kind=annotations.kind,
    )
    return manifest_path


def read_label_dir(
    label_dir: str | Path,
    table: ClassTable,
    overrides: Mapping[str, str] | None = None,
) -> dict[str, list[Detection]]:
    """Parse every ``*.txt`` in a directory, keyed by file stem.

    This is how detector output directories are collected: one file per
    image the detector emitted boxes for.
    """
    class_map = resolve_class_map(table, overrides)
    out: dict[str, list[Detection]] = {}
    for label_path in sorted(Path(label_dir).glob("*.txt")):
        try:
            parsed = parse_label_file(label_path.read_text(), class_map)
        except KittiFormatError as exc:
            raise KittiFormatError(f"{label_path}: {exc}") from None
        out[label_path.stem] = [p.detection for p in parsed]
    return out
