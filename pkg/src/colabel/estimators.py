"""Estimator-style front end for the two meta-learners.

Thin wrappers that follow scikit-learn conventions: constructor stores
hyperparameters verbatim, ``get_params`` / ``set_params`` work for grid
search and cloning, ``fit`` runs the loop and exposes the outcome
through trailing-underscore attributes:

    labeler = CoTrainingLabeler(backend=backend, table=table, seed=7)
    labeler.fit(labeled, unlabeled, images)
    labeler.pseudo_labels_      # final prediction snapshot, detector 1
    labeler.n_cycles_           # cycles run
    labeler.similarities_       # per-cycle prediction similarity

``fit`` signatures differ from the classic (X, y) shape because the
inputs are annotation sets, not feature matrices.
"""

from __future__ import annotations

import tempfile
from pathlib import Path
from typing import Iterable, Mapping

from sklearn.base import BaseEstimator

from colabel.backends import DetectorBackend
from colabel.engine import (
    ExchangeLabelPolicy,
    RunResult,
    SelfLabelingConfig,
    run_co_training,
    run_self_training,
)
from colabel.evaluation import ApMode
from colabel.types import (
    AnnotationSet,
    ClassTable,
    ImageRecord,
    SelectionParams,
    SequenceParams,
    StopParams,
    TrainingHyper,
)

__all__ = ["CoTrainingLabeler", "SelfTrainingLabeler"]


class _BaseLabeler(BaseEstimator):
    _mode = ""

    def __init__(
        self,
        backend: DetectorBackend | None = None,
        table: ClassTable | None = None,
        *,
        sample_size: int = 2000,
        keep_size: int = 100,
        confident_cap: int | None = None,
        min_cycles: int = 20,
        stability_threshold: float = 2.0,
        stability_window: int = 5,
        max_cycles: int = 60,
        sequence: SequenceParams | None = None,
        hyper: TrainingHyper | None = None,
        seed: int = 0,
        exchange_label_policy: str | ExchangeLabelPolicy = ExchangeLabelPolicy.TEACHER,
        disable_view_split: bool = False,
        concurrent: bool = True,
        ap_mode: str | ApMode = ApMode.ELEVEN_POINT,
        run_dir: str | Path | None = None,
    ) -> None:
        self.backend = backend
        self.table = table
        self.sample_size = sample_size
        self.keep_size = keep_size
        self.confident_cap = confident_cap
        self.min_cycles = min_cycles
        self.stability_threshold = stability_threshold
        self.stability_window = stability_window
        self.max_cycles = max_cycles
        self.sequence = sequence
        self.hyper = hyper
        self.seed = seed
        self.exchange_label_policy = exchange_label_policy
        self.disable_view_split = disable_view_split
        self.concurrent = concurrent
        self.ap_mode = ap_mode
        self.run_dir = run_dir

    def _config(self) -> SelfLabelingConfig:
        if self.backend is None or self.table is None:
            raise ValueError("backend and table are required to fit")
        return SelfLabelingConfig(
            table=self.table,
            selection=SelectionParams(
                sample_size=self.sample_size,
                keep_size=self.keep_size,
                confident_cap=self.confident_cap,
            ),
            stop=StopParams(
                min_cycles=self.min_cycles,
                stability_threshold=self.stability_threshold,
                stability_window=self.stability_window,
                max_cycles=self.max_cycles,
            ),
            sequence=self.sequence,
            hyper=self.hyper or TrainingHyper(),
            seed=self.seed,
            exchange_label_policy=ExchangeLabelPolicy(self.exchange_label_policy),
            disable_view_split=self.disable_view_split,
            concurrent=self.concurrent,
            ap_mode=ApMode(self.ap_mode),
        )

    def fit(
        self,
        labeled: AnnotationSet,
        unlabeled: AnnotationSet | Iterable[str],
        images: Mapping[str, ImageRecord],
    ) -> "_BaseLabeler":
        config = self._config()
        runner = run_co_training if self._mode == "co_training" else run_self_training
        if self.run_dir is None:
            with tempfile.TemporaryDirectory(prefix="colabel_") as tmp:
                result = runner(config, self.backend, labeled, unlabeled, images, tmp)
                # run_dir vanishes with the context; keep only in-memory state
                self._adopt(result, keep_dir=False)
        else:
            result = runner(config, self.backend, labeled, unlabeled, images, self.run_dir)
            self._adopt(result, keep_dir=True)
        return self

    def _adopt(self, result: RunResult, *, keep_dir: bool) -> None:
        self.result_ = result
        self.pseudo_labels_ = result.pseudo_labels
        self.accumulated_ = result.accumulated[1]
        self.n_cycles_ = result.n_cycles
        self.similarities_ = result.similarities
        self.stopped_ = result.stopped
        self.run_dir_ = result.run_dir if keep_dir else None


class SelfTrainingLabeler(_BaseLabeler):
    """One detector teaching itself from its most confident predictions."""

    _mode = "self_training"


class CoTrainingLabeler(_BaseLabeler):
    """Two detectors on mirrored views exchanging labels they disagree on."""

    _mode = "co_training"
