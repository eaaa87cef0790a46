"""Experiment configuration: one JSON file describing a whole run.

Structure (defaults shown; only ``classes`` is always required, plus the
sections each subcommand needs)::

    {
      "mode": "co",                    // "self" | "co"
      "seed": 0,
      "output_dir": "runs/exp",
      "classes": [
        {"name": "car", "threshold": 0.8, "min_height": 25.0, "iou_threshold": 0.7}
      ],
      "selection": {"sample_size": 2000, "keep_size": 100, "confident_cap": null},
      "stop": {"min_cycles": 20, "stability_threshold": 2.0,
               "stability_window": 5, "max_cycles": 60},
      "sequence": null,                // or {"frame_gap_current": 5, "frame_gap_history": 10}
      "training": {"options": {}, "budget_check": false},
      "exchange_label_policy": "teacher",
      "disable_view_split": false,
      "concurrent": true,
      "ap_mode": "11point",
      "data": {"train_manifest": "train.jsonl", "test_manifest": null},
      "backend": {"kind": "sim", "detector": {}, "datasets": []},
      "simulate": {"count": 200, "name": "sim", "labeled_fraction": 0.05,
                   "domain_tag": "target", "sidecar": true, "world": {}}
    }

The train manifest carries the labeled/unlabeled split implicitly: images
with a ``label_path`` are the labeled pool, the rest the unlabeled pool.
Relative paths resolve against the config file's directory. An external
backend instead takes ``{"kind": "external", "command": "prog args...",
"timeout_s": 300, "max_restarts": 1, "work_dir": null}``.

Errors carry the dotted field path, e.g.
``config field 'stop.min_cycles': must be >= 1``.
"""

from __future__ import annotations

import json
import shlex
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from colabel.backends import DetectorBackend, ExternalDetectorBackend
from colabel.engine import ExchangeLabelPolicy, SelfLabelingConfig
from colabel.evaluation import ApMode
from colabel.types import (
    ClassEntry,
    ClassTable,
    DomainTag,
    SelectionParams,
    SequenceParams,
    StopParams,
    TrainingHyper,
)

__all__ = ["ConfigError", "ExperimentConfig", "load_experiment"]


class ConfigError(ValueError):
    """Invalid experiment config; ``field`` is the dotted JSON path."""

    def __init__(self, field_path: str, message: str):
        self.field = field_path
        super().__init__(f"config field {field_path!r}: {message}")


def _expect_mapping(value: Any, path: str) -> Mapping[str, Any]:
    if not isinstance(value, Mapping):
        raise ConfigError(path, f"expected an object, got {type(value).__name__}")
    return value


def _reject_unknown(section: Mapping[str, Any], allowed: set[str], path: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(path, f"unknown keys {sorted(unknown)}; allowed: {sorted(allowed)}")


def _get(section: Mapping, key: str, path: str, kind, default=None, required=False):
    if key not in section:
        if required:
            raise ConfigError(f"{path}.{key}" if path else key, "is required")
        return default
    value = section[key]
    if value is None and not required:
        return None
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is not None and not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ConfigError(
            f"{path}.{key}" if path else key,
            f"expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}",
        )
    return value


def _build(path: str, factory, **kwargs):
    try:
        return factory(**kwargs)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


@dataclass(frozen=True)
class DataConfig:
    train_manifest: Path | None = None
    test_manifest: Path | None = None


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "sim"
    detector: Mapping[str, Any] = field(default_factory=dict)
    datasets: tuple[Path, ...] = ()
    command: str = ""
    timeout_s: float = 300.0
    max_restarts: int = 1
    work_dir: Path | None = None


@dataclass(frozen=True)
class SimulateConfig:
    count: int = 200
    name: str = "sim"
    labeled_fraction: float = 0.05
    domain_tag: DomainTag = DomainTag.TARGET
    sidecar: bool = True
    world: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    seed: int
    output_dir: Path
    table: ClassTable
    selection: SelectionParams
    stop: StopParams
    sequence: SequenceParams | None
    hyper: TrainingHyper
    exchange_label_policy: ExchangeLabelPolicy
    disable_view_split: bool
    concurrent: bool
    ap_mode: ApMode
    data: DataConfig
    backend: BackendConfig
    simulate: SimulateConfig

    def labeling_config(self, **overrides) -> SelfLabelingConfig:
        kwargs: dict[str, Any] = dict(
            table=self.table,
            selection=self.selection,
            stop=self.stop,
            sequence=self.sequence,
            hyper=self.hyper,
            seed=self.seed,
            exchange_label_policy=self.exchange_label_policy,
            disable_view_split=self.disable_view_split,
            concurrent=self.concurrent,
            ap_mode=self.ap_mode,
        )
        kwargs.update(overrides)
        return SelfLabelingConfig(**kwargs)

    def build_backend(self) -> DetectorBackend:
        if self.backend.kind == "external":
            work_dir = self.backend.work_dir or self.output_dir / "backend"
            return ExternalDetectorBackend(
                self.backend.command,
                work_dir,
                self.table,
                timeout_s=self.backend.timeout_s,
                max_restarts=self.backend.max_restarts,
            )
        # deferred import: the sim stack is optional for external runs
        from colabel.sim import SimDetectorBackend, SimDetectorConfig

        detector = _build("backend.detector", _sim_detector_config, **dict(self.backend.detector))
        paths = list(self.backend.datasets)
        if not paths:
            raise ConfigError(
                "backend.datasets",
                "sim backend needs at least one simulated dataset manifest "
                "(produce one with the simulate command)",
            )
        return SimDetectorBackend.from_manifests(paths, self.table, detector)


def _sim_detector_config(**kwargs):
    from colabel.sim import SimDetectorConfig

    if "fp_box_ranges" in kwargs:
        kwargs["fp_box_ranges"] = tuple(tuple(r) for r in kwargs["fp_box_ranges"])
    return SimDetectorConfig(**kwargs)


_TOP_KEYS = {
    "mode",
    "seed",
    "output_dir",
    "classes",
    "selection",
    "stop",
    "sequence",
    "training",
    "exchange_label_policy",
    "disable_view_split",
    "concurrent",
    "ap_mode",
    "data",
    "backend",
    "simulate",
}


def parse_experiment(raw: Mapping[str, Any], base_dir: Path) -> ExperimentConfig:
    _expect_mapping(raw, "<root>")
    _reject_unknown(raw, _TOP_KEYS, "<root>")

    mode = _get(raw, "mode", "", str, default="self")
    if mode not in ("self", "co"):
        raise ConfigError("mode", f"expected 'self' or 'co', got {mode!r}")
    seed = _get(raw, "seed", "", int, default=0)
    if not 0 <= seed < 2**64:
        raise ConfigError("seed", "must fit in an unsigned 64-bit integer")

    def respath(value: str | None) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else base_dir / p

    output_dir = respath(_get(raw, "output_dir", "", str, default="runs/experiment"))
    assert output_dir is not None

    classes_raw = raw.get("classes")
    if not isinstance(classes_raw, list) or not classes_raw:
        raise ConfigError("classes", "a non-empty list of class entries is required")
    entries = []
    for i, c in enumerate(classes_raw):
        cpath = f"classes[{i}]"
        c = _expect_mapping(c, cpath)
        _reject_unknown(c, {"name", "threshold", "min_height", "iou_threshold"}, cpath)
        entries.append(
            _build(
                cpath,
                ClassEntry,
                name=_get(c, "name", cpath, str, required=True),
                threshold=_get(c, "threshold", cpath, float, default=0.8),
                min_height=_get(c, "min_height", cpath, float, default=25.0),
                iou_threshold=_get(c, "iou_threshold", cpath, float, default=0.5),
            )
        )
    table = _build("classes", ClassTable, classes=tuple(entries))

    sel_raw = _expect_mapping(raw.get("selection", {}), "selection")
    _reject_unknown(sel_raw, {"sample_size", "keep_size", "confident_cap"}, "selection")
    selection = _build(
        "selection",
        SelectionParams,
        sample_size=_get(sel_raw, "sample_size", "selection", int, default=2000),
        keep_size=_get(sel_raw, "keep_size", "selection", int, default=100),
        confident_cap=_get(sel_raw, "confident_cap", "selection", int, default=None),
    )

    stop_raw = _expect_mapping(raw.get("stop", {}), "stop")
    _reject_unknown(
        stop_raw, {"min_cycles", "stability_threshold", "stability_window", "max_cycles"}, "stop"
    )
    stop = _build(
        "stop",
        StopParams,
        min_cycles=_get(stop_raw, "min_cycles", "stop", int, default=20),
        stability_threshold=_get(stop_raw, "stability_threshold", "stop", float, default=2.0),
        stability_window=_get(stop_raw, "stability_window", "stop", int, default=5),
        max_cycles=_get(stop_raw, "max_cycles", "stop", int, default=60),
    )

    sequence = None
    if raw.get("sequence") is not None:
        seq_raw = _expect_mapping(raw["sequence"], "sequence")
        _reject_unknown(seq_raw, {"frame_gap_current", "frame_gap_history"}, "sequence")
        sequence = _build(
            "sequence",
            SequenceParams,
            frame_gap_current=_get(seq_raw, "frame_gap_current", "sequence", int, default=5),
            frame_gap_history=_get(seq_raw, "frame_gap_history", "sequence", int, default=10),
        )

    tr_raw = _expect_mapping(raw.get("training", {}), "training")
    _reject_unknown(tr_raw, {"options", "budget_check"}, "training")
    hyper = _build(
        "training",
        TrainingHyper,
        options=_expect_mapping(tr_raw.get("options", {}), "training.options"),
        budget_check=_get(tr_raw, "budget_check", "training", bool, default=False),
    )

    policy_raw = _get(raw, "exchange_label_policy", "", str, default="teacher")
    try:
        policy = ExchangeLabelPolicy(policy_raw)
    except ValueError:
        raise ConfigError(
            "exchange_label_policy", f"expected 'teacher' or 'student', got {policy_raw!r}"
        ) from None

    ap_raw = _get(raw, "ap_mode", "", str, default="11point")
    try:
        ap_mode = ApMode(ap_raw)
    except ValueError:
        raise ConfigError("ap_mode", f"expected '11point' or '40point', got {ap_raw!r}") from None

    data_raw = _expect_mapping(raw.get("data", {}), "data")
    _reject_unknown(data_raw, {"train_manifest", "test_manifest"}, "data")
    data = DataConfig(
        train_manifest=respath(_get(data_raw, "train_manifest", "data", str)),
        test_manifest=respath(_get(data_raw, "test_manifest", "data", str)),
    )

    be_raw = _expect_mapping(raw.get("backend", {"kind": "sim"}), "backend")
    _reject_unknown(
        be_raw,
        {"kind", "detector", "datasets", "command", "timeout_s", "max_restarts", "work_dir"},
        "backend",
    )
    kind = _get(be_raw, "kind", "backend", str, default="sim")
    if kind not in ("sim", "external"):
        raise ConfigError("backend.kind", f"expected 'sim' or 'external', got {kind!r}")
    if kind == "external" and not be_raw.get("command"):
        raise ConfigError("backend.command", "external backend needs a command line")
    datasets_raw = be_raw.get("datasets", [])
    if not isinstance(datasets_raw, list):
        raise ConfigError("backend.datasets", "expected a list of manifest paths")
    backend = BackendConfig(
        kind=kind,
        detector=dict(_expect_mapping(be_raw.get("detector", {}), "backend.detector")),
        datasets=tuple(p for p in (respath(d) for d in datasets_raw) if p),
        command=_get(be_raw, "command", "backend", str, default=""),
        timeout_s=_get(be_raw, "timeout_s", "backend", float, default=300.0),
        max_restarts=_get(be_raw, "max_restarts", "backend", int, default=1),
        work_dir=respath(_get(be_raw, "work_dir", "backend", str)),
    )

    sim_raw = _expect_mapping(raw.get("simulate", {}), "simulate")
    _reject_unknown(
        sim_raw,
        {"count", "name", "labeled_fraction", "domain_tag", "sidecar", "world"},
        "simulate",
    )
    fraction = _get(sim_raw, "labeled_fraction", "simulate", float, default=0.05)
    if not 0.0 < fraction <= 1.0:
        raise ConfigError("simulate.labeled_fraction", "must be in (0, 1]")
    tag_raw = _get(sim_raw, "domain_tag", "simulate", str, default="target")
    try:
        domain_tag = DomainTag(tag_raw)
    except ValueError:
        raise ConfigError(
            "simulate.domain_tag",
            f"expected one of {[t.value for t in DomainTag]}, got {tag_raw!r}",
        ) from None
    count = _get(sim_raw, "count", "simulate", int, default=200)
    if count < 1:
        raise ConfigError("simulate.count", "must be >= 1")
    simulate = SimulateConfig(
        count=count,
        name=_get(sim_raw, "name", "simulate", str, default="sim"),
        labeled_fraction=fraction,
        domain_tag=domain_tag,
        sidecar=_get(sim_raw, "sidecar", "simulate", bool, default=True),
        world=dict(_expect_mapping(sim_raw.get("world", {}), "simulate.world")),
    )

    return ExperimentConfig(
        mode=mode,
        seed=seed,
        output_dir=output_dir,
        table=table,
        selection=selection,
        stop=stop,
        sequence=sequence,
        hyper=hyper,
        exchange_label_policy=policy,
        disable_view_split=_get(raw, "disable_view_split", "", bool, default=False),
        concurrent=_get(raw, "concurrent", "", bool, default=True),
        ap_mode=ap_mode,
        data=data,
        backend=backend,
        simulate=simulate,
    )


def load_experiment(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"{path} is not valid JSON: {exc}") from None
    return parse_experiment(raw, path.parent.resolve())


def apply_overrides(
    config: ExperimentConfig,
    *,
    mode: str | None = None,
    seed: int | None = None,
    backend: str | None = None,
    out: str | Path | None = None,
) -> ExperimentConfig:
    """Apply the one-to-one CLI flag overrides.

    ``backend`` accepts ``sim`` or ``external:<command line>``.
    """
    changes: dict[str, Any] = {}
    if mode is not None:
        if mode not in ("self", "co"):
            raise ConfigError("mode", f"expected 'self' or 'co', got {mode!r}")
        changes["mode"] = mode
    if seed is not None:
        if not 0 <= seed < 2**64:
            raise ConfigError("seed", "must fit in an unsigned 64-bit integer")
        changes["seed"] = seed
    if out is not None:
        changes["output_dir"] = Path(out)
    if backend is not None:
        if backend == "sim":
            changes["backend"] = BackendConfig(
                kind="sim",
                detector=config.backend.detector,
                datasets=config.backend.datasets,
            )
        elif backend.startswith("external:"):
            command = backend[len("external:") :].strip()
            if not shlex.split(command):
                raise ConfigError("backend.command", "external backend needs a command line")
            changes["backend"] = BackendConfig(
                kind="external",
                command=command,
                timeout_s=config.backend.timeout_s,
                max_restarts=config.backend.max_restarts,
                work_dir=config.backend.work_dir,
            )
        else:
            raise ConfigError(
                "backend", f"expected 'sim' or 'external:<command>', got {backend!r}"
            )
    if not changes:
        return config
    from dataclasses import replace

    return replace(config, **changes)
