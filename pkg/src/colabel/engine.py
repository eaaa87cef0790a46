"""Self-labeling orchestrators.

Two meta-learners share the same cycle skeleton: train on everything
trusted so far, predict the whole unlabeled pool, promote a confident
slice into the trusted set, and stop once consecutive prediction
snapshots stabilize.

``run_self_training`` keeps one detector talking to itself.
``run_co_training`` runs two detectors on complementary views of the
same data (the second trains on horizontally mirrored inputs) and makes
them exchange pseudo-labels: each offers its most confident fresh
predictions, and the receiver keeps the images it is itself least
confident about. Disagreement, not confidence alone, decides what
crosses over.

Both loops checkpoint every cycle under ``run_dir/checkpoints`` and can
resume from the latest snapshot; models are never serialized, they are
retrained deterministically from the checkpointed label sets.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence, TypeVar

import numpy as np

from colabel import reporting
from colabel.backends import ConfigurationError, DetectorBackend, ModelHandle, predict, train
from colabel.evaluation import ApMode, map_similarity
from colabel.kitti import load_labels, load_manifest, save_annotations
from colabel.selection import fuse, image_confidences, rand_select, select_extreme
from colabel.types import (
    AnnotationKind,
    AnnotationSet,
    ClassTable,
    ImageRecord,
    SelectionDirection,
    SelectionParams,
    SequenceParams,
    StopParams,
    TrainingHyper,
    ViewTransform,
)

__all__ = [
    "CheckpointError",
    "CycleState",
    "ExchangeLabelPolicy",
    "RunResult",
    "SelfLabelingConfig",
    "load_checkpoint",
    "run_co_training",
    "run_self_training",
    "should_stop",
    "train_final",
]

# Phase salts keep the training, selection, and final-evaluation seed
# streams disjoint; every draw derives from
# SeedSequence([root_seed, phase, detector, cycle]).
_PHASE_TRAIN = 0x7A11
_PHASE_SELECT = 0x5E1E
_PHASE_FINAL = 0xF1AA

STATE_SCHEMA = 1


class CheckpointError(RuntimeError):
    """A run directory is missing, inconsistent, or belongs to a
    different configuration."""


class ExchangeLabelPolicy(str, Enum):
    """Who writes the labels on an exchanged image.

    TEACHER: the producing detector's pseudo-labels travel with the
    image; the receiver only ranks. STUDENT: the receiver re-labels the
    image with its own predictions, so only images the receiver detected
    something on can cross (an exchanged image must carry boxes).
    """

    TEACHER = "teacher"
    STUDENT = "student"


@dataclass(frozen=True)
class SelfLabelingConfig:
    """Everything a run needs besides the data and the backend.

    ``seed`` is the root of all randomness. ``pause_after`` stops the
    loop after checkpointing that cycle (interruption hook for tests);
    it is excluded from the config hash, as is ``concurrent``, since
    neither may change results.
    """

    table: ClassTable
    selection: SelectionParams = SelectionParams()
    stop: StopParams = StopParams()
    sequence: SequenceParams | None = None
    hyper: TrainingHyper = TrainingHyper()
    seed: int = 0
    exchange_label_policy: ExchangeLabelPolicy = ExchangeLabelPolicy.TEACHER
    disable_view_split: bool = False
    concurrent: bool = True
    ap_mode: ApMode = ApMode.ELEVEN_POINT
    pause_after: int | None = None

    def __post_init__(self) -> None:
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("seed must fit in an unsigned 64-bit integer")
        if self.pause_after is not None and self.pause_after < 0:
            raise ConfigurationError("pause_after must be >= 0")

    def as_dict(self) -> dict[str, Any]:
        return {
            "classes": [
                {
                    "name": c.name,
                    "threshold": c.threshold,
                    "min_height": c.min_height,
                    "iou_threshold": c.iou_threshold,
                }
                for c in self.table
            ],
            "selection": {
                "sample_size": self.selection.sample_size,
                "keep_size": self.selection.keep_size,
                "confident_cap": self.selection.confident_cap,
            },
            "stop": {
                "min_cycles": self.stop.min_cycles,
                "stability_threshold": self.stop.stability_threshold,
                "stability_window": self.stop.stability_window,
                "max_cycles": self.stop.max_cycles,
            },
            "sequence": None
            if self.sequence is None
            else {
                "frame_gap_current": self.sequence.frame_gap_current,
                "frame_gap_history": self.sequence.frame_gap_history,
            },
            "training": {
                "options": dict(self.hyper.options),
                "budget_check": self.hyper.budget_check,
            },
            "seed": int(self.seed),
            "exchange_label_policy": self.exchange_label_policy.value,
            "disable_view_split": self.disable_view_split,
            "ap_mode": self.ap_mode.value,
        }


def _run_hash(mode: str, config: SelfLabelingConfig) -> str:
    canon = json.dumps(
        {"mode": mode, "config": config.as_dict()}, sort_keys=True, separators=(",", ":")
    )
    return hashlib.sha256(canon.encode()).hexdigest()


def should_stop(params: StopParams, deltas: Sequence[float], k: int) -> bool:
    """Stability rule: after at least ``min_cycles`` cycles, stop once the
    last ``stability_window`` similarity deltas all sit below
    ``stability_threshold``. ``deltas[i]`` is |s_{i+2} - s_{i+1}|, so the
    first entry exists after cycle 2.
    """
    if k < params.min_cycles:
        return False
    w = params.stability_window
    if len(deltas) < w:
        return False
    return all(d < params.stability_threshold for d in list(deltas)[-w:])


def _deltas(similarities: Sequence[float]) -> tuple[float, ...]:
    return tuple(
        abs(similarities[i] - similarities[i - 1]) for i in range(1, len(similarities))
    )


def _train_seed(root: int, phase: int, detector: int, cycle: int) -> int:
    seq = np.random.SeedSequence([int(root), phase, detector, cycle])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def _select_rng(root: int, detector: int, cycle: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([int(root), _PHASE_SELECT, detector, cycle])
    )


@dataclass(frozen=True)
class RunResult:
    """Outcome of a self-labeling run.

    ``latest`` holds each detector's final full-pool prediction set (the
    product of the method); ``accumulated`` the trusted sets the final
    models were trained on. Detector 1 is the reference detector.
    """

    mode: str
    n_cycles: int
    stopped: bool
    reason: str
    similarities: tuple[float, ...]
    accumulated: Mapping[int, AnnotationSet]
    latest: Mapping[int, AnnotationSet]
    provenance: Mapping[int, Mapping[str, Mapping[str, int]]]
    run_dir: Path

    @property
    def pseudo_labels(self) -> AnnotationSet:
        return self.latest[1]

    @property
    def deltas(self) -> tuple[float, ...]:
        return _deltas(self.similarities)


@dataclass(frozen=True)
class CycleState:
    """One checkpoint, as read back from disk."""

    mode: str
    cycle: int
    config_hash: str
    similarities: tuple[float, ...]
    stopped: bool
    reason: str | None
    accumulated: Mapping[int, AnnotationSet]
    latest: Mapping[int, AnnotationSet]
    provenance: Mapping[int, dict[str, dict[str, int]]]
    path: Path

    @property
    def deltas(self) -> tuple[float, ...]:
        return _deltas(self.similarities)


def _checkpoint_dirs(run_dir: Path) -> list[Path]:
    root = run_dir / "checkpoints"
    if not root.is_dir():
        return []
    return sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("cycle_"))


def load_checkpoint(run_dir: str | Path, table: ClassTable, cycle: int | None = None) -> CycleState:
    """Read one checkpoint back (the latest unless ``cycle`` is given)."""
    run_dir = Path(run_dir)
    dirs = _checkpoint_dirs(run_dir)
    if not dirs:
        raise CheckpointError(f"no checkpoints under {run_dir}")
    if cycle is None:
        path = dirs[-1]
    else:
        path = run_dir / "checkpoints" / f"cycle_{cycle:04d}"
        if not path.is_dir():
            raise CheckpointError(f"no checkpoint for cycle {cycle} under {run_dir}")
    try:
        state = json.loads((path / "state.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable state in {path}: {exc}") from None
    if state.get("schema") != STATE_SCHEMA:
        raise CheckpointError(f"unsupported checkpoint schema in {path}")
    accumulated: dict[int, AnnotationSet] = {}
    latest: dict[int, AnnotationSet] = {}
    for d in state["detectors"]:
        base = path / f"dpsi{d}"
        accumulated[d] = _load_set(base / "accumulated", table)
        latest[d] = _load_set(base / "latest", table)
    provenance = {
        int(d): {img: dict(meta) for img, meta in per.items()}
        for d, per in state.get("provenance", {}).items()
    }
    return CycleState(
        mode=state["mode"],
        cycle=int(state["cycle"]),
        config_hash=state["config_hash"],
        similarities=tuple(state["similarities"]),
        stopped=bool(state["stopped"]),
        reason=state.get("reason"),
        accumulated=accumulated,
        latest=latest,
        provenance=provenance,
        path=path,
    )


def _load_set(directory: Path, table: ClassTable) -> AnnotationSet:
    manifest = directory / "manifest.jsonl"
    if not manifest.is_file():
        raise CheckpointError(f"missing label snapshot {manifest}")
    loaded = load_labels(load_manifest(manifest), table)
    if loaded.kind is not AnnotationKind.PSEUDO_LABEL:
        loaded = loaded.with_kind(AnnotationKind.PSEUDO_LABEL)
    return loaded


class _Checkpointer:
    """Owns the run directory: config stamp, per-cycle snapshots, and the
    append-only metrics log. Snapshots land atomically (tmp + rename)."""

    def __init__(
        self,
        run_dir: Path,
        mode: str,
        config: SelfLabelingConfig,
        images: Mapping[str, ImageRecord],
        detectors: Sequence[int],
    ) -> None:
        self.run_dir = run_dir
        self.mode = mode
        self.config = config
        self.images = images
        self.detectors = tuple(detectors)
        self.config_hash = _run_hash(mode, config)
        self.metrics_path = run_dir / "metrics.csv"

    def init_fresh(self) -> None:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        existing = _checkpoint_dirs(self.run_dir)
        if existing:
            raise CheckpointError(
                f"{self.run_dir} already holds a run; pass resume=True to continue it"
            )
        (self.run_dir / "config.json").write_text(
            json.dumps(
                {
                    "schema": STATE_SCHEMA,
                    "mode": self.mode,
                    "config": self.config.as_dict(),
                    "config_hash": self.config_hash,
                },
                indent=2,
                sort_keys=True,
            )
            + "\n"
        )
        reporting.write_metrics_header(self.metrics_path, self.config.table)
        self._sweep_tmp()

    def validate_resume(self) -> None:
        cfg_path = self.run_dir / "config.json"
        if not cfg_path.is_file():
            raise CheckpointError(f"{self.run_dir} has no config.json to resume from")
        stored = json.loads(cfg_path.read_text())
        if stored.get("config_hash") != self.config_hash:
            raise CheckpointError(
                "configuration does not match the run directory "
                f"(stored {stored.get('config_hash', '?')[:12]}, "
                f"current {self.config_hash[:12]})"
            )
        self._sweep_tmp()

    def _sweep_tmp(self) -> None:
        root = self.run_dir / "checkpoints"
        if root.is_dir():
            for p in root.iterdir():
                if p.name.startswith(".tmp_"):
                    shutil.rmtree(p, ignore_errors=True)

    def write(
        self,
        cycle: int,
        accumulated: Mapping[int, AnnotationSet],
        latest: Mapping[int, AnnotationSet],
        similarities: Sequence[float],
        stopped: bool,
        reason: str | None,
        provenance: Mapping[int, Mapping[str, Mapping[str, int]]],
    ) -> None:
        root = self.run_dir / "checkpoints"
        root.mkdir(parents=True, exist_ok=True)
        final = root / f"cycle_{cycle:04d}"
        tmp = root / f".tmp_cycle_{cycle:04d}"
        if tmp.exists():
            shutil.rmtree(tmp)
        tmp.mkdir()
        for d in self.detectors:
            for label, payload in (("accumulated", accumulated[d]), ("latest", latest[d])):
                needed = {i: self.images[i] for i in payload.image_ids}
                save_annotations(
                    payload, needed, tmp / f"dpsi{d}" / label, table=self.config.table, name=label
                )
        state = {
            "schema": STATE_SCHEMA,
            "mode": self.mode,
            "cycle": cycle,
            "config_hash": self.config_hash,
            "detectors": list(self.detectors),
            "similarities": list(similarities),
            "stopped": stopped,
            "reason": reason,
            "provenance": {str(d): provenance.get(d, {}) for d in self.detectors},
        }
        (tmp / "state.json").write_text(json.dumps(state, indent=2, sort_keys=True) + "\n")
        (tmp / "rng.json").write_text(
            json.dumps(
                {
                    "schema": STATE_SCHEMA,
                    "scheme": "seed_sequence",
                    "spawn_key": "[root_seed, phase, detector, cycle]",
                    "root_seed": int(self.config.seed),
                    "phases": {
                        "train": _PHASE_TRAIN,
                        "select": _PHASE_SELECT,
                        "final": _PHASE_FINAL,
                    },
                    "next_cycle": cycle + 1,
                },
                indent=2,
                sort_keys=True,
            )
            + "\n"
        )
        if final.exists():
            shutil.rmtree(final)
        os.replace(tmp, final)

    def append_metrics(
        self,
        cycle: int,
        similarity: float,
        delta: float | None,
        accumulated: Mapping[int, AnnotationSet],
        latest: Mapping[int, AnnotationSet],
    ) -> None:
        table = self.config.table
        row: dict[str, Any] = {
            "cycle": cycle,
            "similarity": similarity,
            "delta": delta,
        }
        for d in (1, 2):
            here = d in accumulated
            row[f"acc_images_{d}"] = accumulated[d].n_images if here else None
            row[f"acc_boxes_{d}"] = accumulated[d].n_detections if here else None
            row[f"new_images_{d}"] = latest[d].n_images if here else None
            row[f"new_boxes_{d}"] = latest[d].n_detections if here else None
            counts = accumulated[d].class_counts() if here else {}
            for name in table.names:
                row[f"acc_{name}_{d}"] = counts.get(table.id_of(name), 0) if here else None
        reporting.append_metrics_row(self.metrics_path, table, row)

    def sync_metrics(self, cycle: int) -> None:
        # Resuming may find rows past the checkpoint (crash between log
        # append and snapshot rename); trim so the re-run appends cleanly.
        if self.metrics_path.is_file():
            reporting.truncate_metrics(self.metrics_path, cycle)
        else:
            reporting.write_metrics_header(self.metrics_path, self.config.table)


_T = TypeVar("_T")


def _join(tasks: Mapping[int, Callable[[], _T]], parallel: bool) -> dict[int, _T]:
    """Run per-detector tasks, joining in detector order so results and
    errors surface deterministically."""
    order = sorted(tasks)
    if parallel and len(order) > 1:
        with ThreadPoolExecutor(max_workers=len(order)) as pool:
            futures = {d: pool.submit(tasks[d]) for d in order}
            return {d: futures[d].result() for d in order}
    return {d: tasks[d]() for d in order}


def _unlabeled_ids(unlabeled: AnnotationSet | Iterable[str]) -> tuple[str, ...]:
    if isinstance(unlabeled, AnnotationSet):
        if unlabeled.kind is not AnnotationKind.UNLABELED:
            raise ConfigurationError(
                f"expected an unlabeled pool, got kind {unlabeled.kind.value!r}"
            )
        return tuple(sorted(unlabeled.image_ids))
    ids = tuple(sorted(str(i) for i in unlabeled))
    if len(set(ids)) != len(ids):
        raise ConfigurationError("unlabeled pool contains duplicate image ids")
    return ids


class _Loop:
    """State shared by both meta-learners for one run."""

    def __init__(
        self,
        mode: str,
        config: SelfLabelingConfig,
        backend: DetectorBackend,
        labeled: AnnotationSet,
        unlabeled: AnnotationSet | Iterable[str],
        images: Mapping[str, ImageRecord],
        run_dir: str | Path,
        resume: bool,
        detectors: Sequence[int],
    ) -> None:
        if labeled.kind is not AnnotationKind.GROUND_TRUTH:
            raise ConfigurationError("labeled data must be ground truth")
        if labeled.n_images == 0:
            raise ConfigurationError("labeled pool is empty; nothing to bootstrap from")
        pool = _unlabeled_ids(unlabeled)
        if not pool:
            raise ConfigurationError("unlabeled pool is empty; nothing to label")
        overlap = set(labeled.image_ids) & set(pool)
        if overlap:
            raise ConfigurationError(
                f"labeled and unlabeled pools share image ids: {sorted(overlap)[:5]}"
            )
        missing = (set(labeled.image_ids) | set(pool)) - set(images)
        if missing:
            raise ConfigurationError(f"missing image records for: {sorted(missing)[:5]}")

        self.mode = mode
        self.cfg = config
        self.backend = backend
        self.labeled = labeled
        self.images = dict(images)
        self.pool = pool
        self.pool_records = {i: self.images[i] for i in pool}
        self.detectors = tuple(detectors)
        self.parallel = bool(config.concurrent and backend.supports_concurrent_sessions)
        self.run_dir = Path(run_dir)
        self.ckpt = _Checkpointer(self.run_dir, mode, config, self.images, self.detectors)

        if config.disable_view_split:
            views = {d: ViewTransform.IDENTITY for d in self.detectors}
            salts = {d: 1 for d in self.detectors}
        else:
            views = {d: (ViewTransform.IDENTITY if d == 1 else ViewTransform.HORIZONTAL_MIRROR) for d in self.detectors}
            salts = {d: d for d in self.detectors}
        self.views = views
        self.salts = salts

        self.similarities: list[float] = []
        self.accumulated: dict[int, AnnotationSet] = {
            d: AnnotationSet.empty() for d in self.detectors
        }
        self.latest: dict[int, AnnotationSet] = {}
        self.handles: dict[int, ModelHandle] = {}
        self.provenance: dict[int, dict[str, dict[str, int]]] = {d: {} for d in self.detectors}
        self.k = 0
        self.resume = resume

    # cycle plumbing -----------------------------------------------------

    def _train(self, detector: int, cycle: int) -> ModelHandle:
        return train(
            self.backend,
            self.labeled,
            self.accumulated[detector],
            self.images,
            self.cfg.hyper,
            view_transform=self.views[detector],
            seed=_train_seed(self.cfg.seed, _PHASE_TRAIN, self.salts[detector], cycle),
        )

    def _predict_pool(self, detector: int) -> AnnotationSet:
        return predict(self.backend, self.handles[detector], self.pool_records, self.cfg.table)

    def _retrain_and_predict(self, cycle: int) -> None:
        self.handles = _join(
            {d: (lambda d=d: self._train(d, cycle)) for d in self.detectors}, self.parallel
        )
        self.latest = _join(
            {d: (lambda d=d: self._predict_pool(d)) for d in self.detectors}, self.parallel
        )

    def bootstrap(self) -> None:
        self.ckpt.init_fresh()
        self._retrain_and_predict(0)
        self.ckpt.write(0, self.accumulated, self.latest, [], False, None, self.provenance)

    def restore(self) -> CycleState:
        self.ckpt.validate_resume()
        state = load_checkpoint(self.run_dir, self.cfg.table)
        if state.mode != self.mode:
            raise CheckpointError(
                f"run directory holds a {state.mode} run, asked to resume {self.mode}"
            )
        if state.config_hash != self.ckpt.config_hash:
            raise CheckpointError("checkpoint belongs to a different configuration")
        self.k = state.cycle
        self.similarities = list(state.similarities)
        self.accumulated = dict(state.accumulated)
        self.latest = dict(state.latest)
        self.provenance = {d: dict(state.provenance.get(d, {})) for d in self.detectors}
        self.ckpt.sync_metrics(state.cycle)
        return state

    def finish_cycle(self, k: int) -> tuple[bool, str | None]:
        """Similarity bookkeeping, checkpoint, metrics. Returns
        (done, reason); ``reason`` is also set when pausing."""
        self.k = k
        stable = should_stop(self.cfg.stop, _deltas(self.similarities), k)
        capped = k >= self.cfg.stop.max_cycles
        stopped = stable or capped
        reason = "stability" if stable else ("max_cycles" if capped else None)
        self.ckpt.write(
            k, self.accumulated, self.latest, self.similarities, stopped, reason, self.provenance
        )
        delta = self.similarities[-1] - self.similarities[-2] if len(self.similarities) > 1 else None
        self.ckpt.append_metrics(
            k,
            self.similarities[-1],
            abs(delta) if delta is not None else None,
            self.accumulated,
            self.latest,
        )
        if stopped:
            return True, reason
        if self.cfg.pause_after is not None and k == self.cfg.pause_after:
            return True, "paused"
        return False, None

    def result(self, stopped: bool, reason: str) -> RunResult:
        return RunResult(
            mode=self.mode,
            n_cycles=self.k,
            stopped=stopped,
            reason=reason,
            similarities=tuple(self.similarities),
            accumulated=dict(self.accumulated),
            latest=dict(self.latest),
            provenance={d: dict(p) for d, p in self.provenance.items()},
            run_dir=self.run_dir,
        )

    def resumed_result(self, state: CycleState) -> RunResult:
        return RunResult(
            mode=self.mode,
            n_cycles=state.cycle,
            stopped=state.stopped,
            reason=state.reason or "stability",
            similarities=state.similarities,
            accumulated=dict(state.accumulated),
            latest=dict(state.latest),
            provenance={d: dict(p) for d, p in state.provenance.items()},
            run_dir=self.run_dir,
        )


def run_self_training(
    config: SelfLabelingConfig,
    backend: DetectorBackend,
    labeled: AnnotationSet,
    unlabeled: AnnotationSet | Iterable[str],
    images: Mapping[str, ImageRecord],
    run_dir: str | Path,
    *,
    resume: bool = False,
) -> RunResult:
    """Single-detector self-labeling.

    Cycle k: sample from the freshest full-pool predictions (skipping
    near-duplicate frames in sequences and frames close to anything
    already trusted), keep the ``keep_size`` most confident images, fuse
    them into the trusted set, retrain, re-predict the pool, and compare
    the two prediction snapshots. Stops per ``config.stop``; returns the
    final prediction snapshot as the product.
    """
    loop = _Loop("self_training", config, backend, labeled, unlabeled, images, run_dir, resume, (1,))
    if resume:
        state = loop.restore()
        if state.stopped:
            return loop.resumed_result(state)
    else:
        loop.bootstrap()
        if config.pause_after is not None and config.pause_after == 0:
            return loop.result(False, "paused")

    sel = config.selection
    k = loop.k
    while True:
        k += 1
        previous = loop.latest[1]
        rng = _select_rng(config.seed, loop.salts[1], k)
        sampled = rand_select(
            previous,
            sel.sample_size,
            rng,
            records=loop.images,
            seq_params=config.sequence,
            accumulated=loop.accumulated[1],
        )
        promoted = select_extreme(sampled, sel.keep_size, SelectionDirection.MOST_CONFIDENT)
        loop.accumulated[1] = fuse(loop.accumulated[1], promoted)
        for image_id in promoted.image_ids:
            loop.provenance[1][image_id] = {"origin": 1, "labeler": 1, "cycle": k}
        loop._retrain_and_predict(k)
        loop.similarities.append(
            map_similarity(previous, loop.latest[1], config.table, mode=config.ap_mode)
        )
        done, reason = loop.finish_cycle(k)
        if done:
            return loop.result(reason != "paused", reason or "stability")


def _exchange_one_way(
    loop: _Loop, producer: int, receiver: int, cycle: int
) -> AnnotationSet:
    """Move pseudo-labels from ``producer`` to ``receiver``.

    The producer offers up to ``confident_cap`` of its most confident
    fresh predictions (after random subsampling guarded against the
    receiver's history); the receiver ranks the offer by its *own* mean
    confidence per image and keeps the ``keep_size`` least confident,
    i.e. the images it most disagrees on.
    """
    sel = loop.cfg.selection
    rng = _select_rng(loop.cfg.seed, loop.salts[receiver], cycle)
    sampled = rand_select(
        loop.latest[producer],
        sel.sample_size,
        rng,
        records=loop.images,
        seq_params=loop.cfg.sequence,
        accumulated=loop.accumulated[receiver],
    )
    offered = select_extreme(sampled, sel.confident_cap, SelectionDirection.MOST_CONFIDENT)
    if offered.n_images == 0:
        return AnnotationSet.empty()
    offer_records = {i: loop.images[i] for i in offered.image_ids}
    receiver_view = predict(loop.backend, loop.handles[receiver], offer_records, loop.cfg.table)
    if loop.cfg.exchange_label_policy is ExchangeLabelPolicy.STUDENT:
        # Receiver re-labels with its own output; images it saw nothing
        # on cannot carry labels and drop out of the exchange.
        return select_extreme(receiver_view, sel.keep_size, SelectionDirection.LEAST_CONFIDENT)
    confidences = image_confidences(receiver_view)
    ranked = sorted(
        offered.image_ids,
        key=lambda i: (
            confidences[i].mean_confidence if i in confidences else 0.0,
            i,
        ),
    )
    return offered.restricted_to(ranked[: sel.keep_size])


def run_co_training(
    config: SelfLabelingConfig,
    backend: DetectorBackend,
    labeled: AnnotationSet,
    unlabeled: AnnotationSet | Iterable[str],
    images: Mapping[str, ImageRecord],
    run_dir: str | Path,
    *,
    resume: bool = False,
) -> RunResult:
    """Two-detector co-training with disagreement-based exchange.

    Detector 1 trains on the data as-is, detector 2 on a horizontally
    mirrored view (``config.disable_view_split`` collapses the split for
    degeneracy checks). Each cycle both directions of the exchange are
    computed against the cycle-entry state, then both trusted sets grow,
    both detectors retrain and re-predict. The stop rule watches
    detector 1's prediction similarity only, and detector 1's final
    snapshot is the product.
    """
    loop = _Loop("co_training", config, backend, labeled, unlabeled, images, run_dir, resume, (1, 2))
    if resume:
        state = loop.restore()
        if state.stopped:
            return loop.resumed_result(state)
        # The exchange consults cycle-entry models; rebuild them from the
        # checkpointed trusted sets (training is deterministic in the seed).
        loop.handles = _join(
            {d: (lambda d=d: loop._train(d, state.cycle)) for d in loop.detectors},
            loop.parallel,
        )
    else:
        loop.bootstrap()
        if config.pause_after is not None and config.pause_after == 0:
            return loop.result(False, "paused")

    k = loop.k
    while True:
        k += 1
        previous = loop.latest[1]
        incoming = {
            receiver: _exchange_one_way(loop, producer, receiver, k)
            for producer, receiver in ((1, 2), (2, 1))
        }
        for producer, receiver in ((1, 2), (2, 1)):
            gained = incoming[receiver]
            loop.accumulated[receiver] = fuse(loop.accumulated[receiver], gained)
            labeler = (
                receiver
                if config.exchange_label_policy is ExchangeLabelPolicy.STUDENT
                else producer
            )
            for image_id in gained.image_ids:
                loop.provenance[receiver][image_id] = {
                    "origin": producer,
                    "labeler": labeler,
                    "cycle": k,
                }
        loop._retrain_and_predict(k)
        loop.similarities.append(
            map_similarity(previous, loop.latest[1], config.table, mode=config.ap_mode)
        )
        done, reason = loop.finish_cycle(k)
        if done:
            return loop.result(reason != "paused", reason or "stability")


def train_final(
    config: SelfLabelingConfig,
    backend: DetectorBackend,
    labeled: AnnotationSet,
    pseudo: AnnotationSet,
    images: Mapping[str, ImageRecord],
) -> ModelHandle:
    """Train the evaluation detector once, outside the loop, on labeled
    data plus the run's product. Uses its own seed stream so it never
    collides with in-loop training."""
    pool = {i: images[i] for i in set(labeled.image_ids) | set(pseudo.image_ids)}
    return train(
        backend,
        labeled,
        pseudo,
        pool,
        config.hyper,
        view_transform=ViewTransform.IDENTITY,
        seed=_train_seed(config.seed, _PHASE_FINAL, 1, 0),
    )
