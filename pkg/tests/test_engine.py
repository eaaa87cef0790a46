"""Orchestrator tests: stop rule traces, loop mechanics on scripted
backends, exchange semantics, checkpoint/resume determinism."""

import json
from pathlib import Path

import pytest

from colabel.backends import ConfigurationError, DetectorBackend, ModelHandle, TrainRequest
from colabel.engine import (
    CheckpointError,
    ExchangeLabelPolicy,
    SelfLabelingConfig,
    load_checkpoint,
    run_co_training,
    run_self_training,
    should_stop,
    train_final,
)
from colabel.estimators import CoTrainingLabeler, SelfTrainingLabeler
from colabel.evaluation import evaluate
from colabel.reporting import read_metrics
from colabel.sim import (
    SimDetectorBackend,
    SimDetectorConfig,
    SimWorldConfig,
    generate_dataset,
)
from colabel.types import (
    AnnotationKind,
    AnnotationSet,
    ClassEntry,
    ClassTable,
    Detection,
    ImageRecord,
    SelectionParams,
    StopParams,
    ViewTransform,
    is_mirrored_id,
    toggle_mirror_marker,
)

TABLE = ClassTable(
    classes=(
        ClassEntry("vehicle", 0.5, 25.0, 0.7),
        ClassEntry("pedestrian", 0.5, 25.0, 0.5),
    )
)


def _deltas(sims):
    return [abs(sims[i] - sims[i - 1]) for i in range(1, len(sims))]


def _first_stop(params, sims):
    """Cycle at which a run with this similarity trace would stop, or None."""
    for k in range(1, len(sims) + 1):
        if should_stop(params, _deltas(sims[:k]), k):
            return k
    return None


class TestShouldStop:
    def test_worked_example(self):
        # similarities 50, 60, 61, 61.5 with a window of 2 below 2.0:
        # deltas 10, 1, 0.5; the last two qualify only at cycle 4.
        params = StopParams(min_cycles=3, stability_threshold=2.0, stability_window=2, max_cycles=60)
        assert _first_stop(params, [50.0, 60.0, 61.0, 61.5]) == 4

    def test_worked_example_not_earlier(self):
        params = StopParams(min_cycles=3, stability_threshold=2.0, stability_window=2, max_cycles=60)
        assert _first_stop(params, [50.0, 60.0, 61.0]) is None

    def test_alternating_never_stops(self):
        params = StopParams(min_cycles=3, stability_threshold=2.0, stability_window=2, max_cycles=60)
        sims = [50.0]
        for i in range(60):
            sims.append(sims[-1] + (5.0 if i % 2 == 0 else 0.1))
        # every window of two deltas contains a 5.0
        assert _first_stop(params, sims) is None

    def test_min_cycles_gate(self):
        params = StopParams(min_cycles=10, stability_threshold=2.0, stability_window=2, max_cycles=60)
        sims = [70.0] * 30
        assert _first_stop(params, sims) == 10

    def test_constant_similarity_window_bound(self):
        # with a short min_cycles the window itself is the binding
        # constraint: the first delta appears at cycle 2, so a window of
        # w needs cycle w+1.
        params = StopParams(min_cycles=1, stability_threshold=2.0, stability_window=3, max_cycles=60)
        assert _first_stop(params, [55.0] * 20) == 4

    def test_constant_similarity_min_bound(self):
        params = StopParams(min_cycles=6, stability_threshold=2.0, stability_window=3, max_cycles=60)
        assert _first_stop(params, [55.0] * 20) == 6

    def test_threshold_is_strict(self):
        params = StopParams(min_cycles=1, stability_threshold=2.0, stability_window=1, max_cycles=60)
        # delta exactly at the threshold does not count as stable
        assert _first_stop(params, [50.0, 52.0, 54.0, 56.0]) is None
        assert _first_stop(params, [50.0, 51.9]) == 2

    def test_noise_then_quiet(self):
        params = StopParams(min_cycles=2, stability_threshold=1.0, stability_window=3, max_cycles=60)
        assert _first_stop(params, [90.0, 50.0, 50.5, 50.8, 51.0, 51.1]) == 5

    def test_late_spike_defers(self):
        params = StopParams(min_cycles=2, stability_threshold=1.0, stability_window=2, max_cycles=60)
        sims = [50.0, 50.1, 50.2, 58.0, 58.1, 58.2]
        # stable at 3, but a fresh trace including the spike at 4 must wait
        assert _first_stop(params, sims) == 3
        assert should_stop(params, _deltas(sims[:4]), 4) is False
        assert should_stop(params, _deltas(sims[:5]), 5) is False
        assert should_stop(params, _deltas(sims[:6]), 6) is True

    def test_window_longer_than_history(self):
        params = StopParams(min_cycles=1, stability_threshold=2.0, stability_window=5, max_cycles=60)
        assert should_stop(params, [0.1, 0.1, 0.1], 4) is False

    def test_single_delta_window(self):
        params = StopParams(min_cycles=1, stability_threshold=0.5, stability_window=1, max_cycles=60)
        assert _first_stop(params, [80.0, 80.2]) == 2

    def test_table_defaults_trace(self):
        # defaults: 20 cycles minimum, five deltas below 2.0
        params = StopParams()
        sims = [40.0 + i for i in range(19)] + [59.1, 59.2, 59.3, 59.4, 59.5, 59.6]
        assert _first_stop(params, sims) == 24 or _first_stop(params, sims) == 20
        # deltas of 1.0 are already below 2.0, so the gate is min_cycles
        assert _first_stop(params, sims) == 20

    def test_strictly_before_min_is_never_stopped(self):
        params = StopParams(min_cycles=7, stability_threshold=100.0, stability_window=1, max_cycles=60)
        sims = [10.0, 10.0, 10.0, 10.0, 10.0, 10.0]
        assert _first_stop(params, sims) is None


# --- scripted backends ----------------------------------------------------


class ScriptedBackend(DetectorBackend):
    """Ignores training entirely; predicts ground truth verbatim.

    ``flaky``: every second model (by training order) drops half the
    images from its predictions, so consecutive snapshots keep
    disagreeing and the loop can never stabilize.
    """

    def __init__(self, gt: AnnotationSet, *, conf: float = 0.99, flaky: bool = False):
        self.gt = gt
        self.conf = conf
        self.flaky = flaky
        self.trainings = 0

    @property
    def backend_id(self) -> str:
        return "scripted"

    @property
    def supports_concurrent_sessions(self) -> bool:
        return True

    def run_training(self, request: TrainRequest) -> ModelHandle:
        self.trainings += 1
        return ModelHandle(
            backend_id="scripted",
            token=f"m{self.trainings}",
            view_transform=request.view_transform,
            training_seed=request.seed,
        )

    def run_inference(self, handle, images, table) -> AnnotationSet:
        entries = {}
        drop = self.flaky and int(handle.token[1:]) % 2 == 1
        for n, rec in enumerate(sorted(images, key=lambda r: r.image_id)):
            image_id = rec.image_id
            plain = toggle_mirror_marker(image_id) if is_mirrored_id(image_id) else image_id
            dets = self.gt.entries.get(plain, ())
            if not dets:
                continue
            if drop and n % 2 == 0:
                continue
            out = []
            for d in dets:
                bbox = d.bbox.mirrored(rec.width) if is_mirrored_id(image_id) else d.bbox
                out.append(Detection(d.class_id, bbox, self.conf))
            entries[image_id] = out
        return AnnotationSet(entries=entries, kind=AnnotationKind.PSEUDO_LABEL)


@pytest.fixture(scope="module")
def sim_world():
    world = SimWorldConfig(seed=7)
    ds = generate_dataset(world, 60, name="tr")
    labeled_ids = sorted(ds.ground_truth.image_ids)[:10]
    labeled = ds.ground_truth.restricted_to(labeled_ids)
    pool = tuple(i for i in sorted(ds.records) if i not in set(labeled_ids))
    return ds, labeled, pool, dict(ds.records)


def _sim_backend(ds):
    return SimDetectorBackend(SimDetectorConfig(), [ds])


def _config(**kw):
    base = dict(
        table=TABLE,
        selection=SelectionParams(sample_size=30, keep_size=10),
        stop=StopParams(min_cycles=5, stability_threshold=5.0, stability_window=2, max_cycles=8),
        seed=11,
    )
    base.update(kw)
    return SelfLabelingConfig(**base)


class TestSelfTrainingLoop:
    def test_perfect_detector_stops_at_window_bound(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        backend = ScriptedBackend(ds.ground_truth)
        cfg = _config(stop=StopParams(min_cycles=2, stability_threshold=2.0, stability_window=3, max_cycles=60))
        res = run_self_training(cfg, backend, labeled, pool, images, tmp_path / "run")
        # identical snapshots every cycle: similarity pinned at 100, so
        # the window (3 deltas, first complete at cycle 4) is binding
        assert res.similarities == (100.0,) * 4
        assert res.n_cycles == 4
        assert res.reason == "stability"

    def test_perfect_detector_min_cycles_bound(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        backend = ScriptedBackend(ds.ground_truth)
        cfg = _config(stop=StopParams(min_cycles=6, stability_threshold=2.0, stability_window=2, max_cycles=60))
        res = run_self_training(cfg, backend, labeled, pool, images, tmp_path / "run")
        assert res.n_cycles == 6

    def test_perfect_detector_first_snapshot_matches_truth(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        backend = ScriptedBackend(ds.ground_truth)
        cfg = _config(stop=StopParams(min_cycles=1, stability_threshold=2.0, stability_window=1, max_cycles=60))
        res = run_self_training(cfg, backend, labeled, pool, images, tmp_path / "run")
        report = evaluate(ds.ground_truth.restricted_to(res.pseudo_labels.image_ids), res.pseudo_labels, TABLE)
        assert report.mean_ap == pytest.approx(100.0)
        gt_pool_with_objects = [i for i in pool if ds.ground_truth.entries.get(i)]
        assert sorted(res.pseudo_labels.image_ids) == gt_pool_with_objects

    def test_max_cycles_cap(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        backend = ScriptedBackend(ds.ground_truth, flaky=True)
        cfg = _config(stop=StopParams(min_cycles=1, stability_threshold=1e-9, stability_window=1, max_cycles=5))
        res = run_self_training(cfg, backend, labeled, pool, images, tmp_path / "run")
        assert res.n_cycles == 5
        assert res.reason == "max_cycles"
        assert res.stopped

    def test_accumulated_grows_monotonically(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        cfg = _config()
        res = run_self_training(cfg, _sim_backend(ds), labeled, pool, images, tmp_path / "run")
        previous: set = set()
        for k in range(res.n_cycles + 1):
            state = load_checkpoint(tmp_path / "run", TABLE, cycle=k)
            ids = set(state.accumulated[1].image_ids)
            assert previous <= ids
            previous = ids

    def test_pseudo_labels_stay_inside_pool(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        cfg = _config()
        res = run_self_training(cfg, _sim_backend(ds), labeled, pool, images, tmp_path / "run")
        assert set(res.pseudo_labels.image_ids) <= set(pool)
        assert set(res.accumulated[1].image_ids) <= set(pool)
        assert set(res.provenance[1]) == set(res.accumulated[1].image_ids)
        assert all(m["origin"] == 1 for m in res.provenance[1].values())

    def test_saturation_accumulates_every_confident_image(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        backend = ScriptedBackend(ds.ground_truth)
        cfg = _config(
            selection=SelectionParams(sample_size=len(pool), keep_size=len(pool)),
            stop=StopParams(min_cycles=1, stability_threshold=2.0, stability_window=1, max_cycles=60),
        )
        res = run_self_training(cfg, backend, labeled, pool, images, tmp_path / "run")
        with_objects = {i for i in pool if ds.ground_truth.entries.get(i)}
        assert set(res.accumulated[1].image_ids) == with_objects

    def test_unlabeled_as_annotation_set(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        unl = AnnotationSet(entries={i: () for i in pool}, kind=AnnotationKind.UNLABELED)
        cfg = _config()
        r1 = run_self_training(cfg, _sim_backend(ds), labeled, unl, images, tmp_path / "a")
        r2 = run_self_training(cfg, _sim_backend(ds), labeled, pool, images, tmp_path / "b")
        assert r1.similarities == r2.similarities
        assert r1.pseudo_labels == r2.pseudo_labels

    def test_metrics_rows_match_cycles(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        cfg = _config()
        res = run_self_training(cfg, _sim_backend(ds), labeled, pool, images, tmp_path / "run")
        rows = read_metrics(tmp_path / "run" / "metrics.csv")
        assert len(rows) == res.n_cycles
        assert [int(r["cycle"]) for r in rows] == list(range(1, res.n_cycles + 1))
        assert rows[0]["delta"] == ""
        assert all(r["acc_images_2"] == "" for r in rows)
        last = rows[-1]
        assert int(last["acc_images_1"]) == res.accumulated[1].n_images
        assert int(last["new_boxes_1"]) == res.pseudo_labels.n_detections
        per_class = res.accumulated[1].class_counts()
        assert int(last["acc_vehicle_1"]) == per_class.get(0, 0)
        assert int(last["acc_pedestrian_1"]) == per_class.get(1, 0)

    def test_checkpoint_layout(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        cfg = _config()
        res = run_self_training(cfg, _sim_backend(ds), labeled, pool, images, tmp_path / "run")
        run = tmp_path / "run"
        names = sorted(p.name for p in (run / "checkpoints").iterdir())
        assert names == [f"cycle_{k:04d}" for k in range(res.n_cycles + 1)]
        for name in names:
            cdir = run / "checkpoints" / name
            assert (cdir / "state.json").is_file()
            assert (cdir / "rng.json").is_file()
            assert (cdir / "dpsi1" / "accumulated" / "manifest.jsonl").is_file()
            assert (cdir / "dpsi1" / "latest" / "manifest.jsonl").is_file()
            assert not (cdir / "dpsi2").exists()
        config = json.loads((run / "config.json").read_text())
        assert config["mode"] == "self_training"
        assert config["config_hash"]
        assert config["config"]["seed"] == 11

    def test_validation_errors(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        cfg = _config()
        empty = AnnotationSet.empty(AnnotationKind.GROUND_TRUTH)
        with pytest.raises(ConfigurationError, match="labeled pool is empty"):
            run_self_training(cfg, _sim_backend(ds), empty, pool, images, tmp_path / "a")
        with pytest.raises(ConfigurationError, match="unlabeled pool is empty"):
            run_self_training(cfg, _sim_backend(ds), labeled, (), images, tmp_path / "b")
        with pytest.raises(ConfigurationError, match="share image ids"):
            run_self_training(
                cfg, _sim_backend(ds), labeled, pool + (labeled.image_ids[0],), images, tmp_path / "c"
            )
        with pytest.raises(ConfigurationError, match="missing image records"):
            run_self_training(cfg, _sim_backend(ds), labeled, pool + ("ghost",), images, tmp_path / "d")
        with pytest.raises(ConfigurationError, match="unlabeled"):
            run_self_training(cfg, _sim_backend(ds), labeled, labeled.with_kind(AnnotationKind.PSEUDO_LABEL), images, tmp_path / "e")


class TestCoTrainingLoop:
    def test_exchange_provenance_invariant(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        cfg = _config()
        res = run_co_training(cfg, _sim_backend(ds), labeled, pool, images, tmp_path / "run")
        assert res.accumulated[1].n_images > 0 and res.accumulated[2].n_images > 0
        for receiver in (1, 2):
            for image_id, meta in res.provenance[receiver].items():
                assert meta["origin"] != receiver, (receiver, image_id, meta)
                assert meta["origin"] in (1, 2)
                assert meta["labeler"] == meta["origin"]  # teacher policy

    def test_student_policy_labels_are_receivers(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        cfg = _config(exchange_label_policy=ExchangeLabelPolicy.STUDENT)
        res = run_co_training(cfg, _sim_backend(ds), labeled, pool, images, tmp_path / "run")
        assert res.accumulated[1].n_images > 0
        for receiver in (1, 2):
            for meta in res.provenance[receiver].values():
                assert meta["origin"] != receiver
                assert meta["labeler"] == receiver

    def test_policies_disagree_on_labels(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        teacher = run_co_training(_config(), _sim_backend(ds), labeled, pool, images, tmp_path / "t")
        student = run_co_training(
            _config(exchange_label_policy=ExchangeLabelPolicy.STUDENT),
            _sim_backend(ds),
            labeled,
            pool,
            images,
            tmp_path / "s",
        )
        assert teacher.accumulated[1] != student.accumulated[1]

    def test_degenerate_split_synchronizes_detectors(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        cfg = _config(disable_view_split=True)
        res = run_co_training(cfg, _sim_backend(ds), labeled, pool, images, tmp_path / "run")
        assert res.accumulated[1] == res.accumulated[2]
        assert res.latest[1] == res.latest[2]
        for k in range(res.n_cycles + 1):
            state = load_checkpoint(tmp_path / "run", TABLE, cycle=k)
            assert state.accumulated[1] == state.accumulated[2]
            assert state.latest[1] == state.latest[2]

    def test_views_split_by_default(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        cfg = _config()
        res = run_co_training(cfg, _sim_backend(ds), labeled, pool, images, tmp_path / "run")
        assert res.latest[1] != res.latest[2]

    def test_concurrent_matches_sequential(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        r_con = run_co_training(
            _config(concurrent=True), _sim_backend(ds), labeled, pool, images, tmp_path / "c"
        )
        r_seq = run_co_training(
            _config(concurrent=False), _sim_backend(ds), labeled, pool, images, tmp_path / "s"
        )
        assert r_con.similarities == r_seq.similarities
        assert r_con.latest[1] == r_seq.latest[1]
        assert r_con.accumulated[2] == r_seq.accumulated[2]
        assert (tmp_path / "c" / "metrics.csv").read_text() == (tmp_path / "s" / "metrics.csv").read_text()

    def test_perfect_detectors_stop_at_bound(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        backend = ScriptedBackend(ds.ground_truth)
        cfg = _config(stop=StopParams(min_cycles=2, stability_threshold=2.0, stability_window=3, max_cycles=60))
        res = run_co_training(cfg, backend, labeled, pool, images, tmp_path / "run")
        assert res.similarities == (100.0,) * 4
        assert res.n_cycles == 4

    def test_metrics_carry_both_detectors(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        cfg = _config()
        res = run_co_training(cfg, _sim_backend(ds), labeled, pool, images, tmp_path / "run")
        rows = read_metrics(tmp_path / "run" / "metrics.csv")
        assert len(rows) == res.n_cycles
        last = rows[-1]
        assert int(last["acc_images_2"]) == res.accumulated[2].n_images
        assert int(last["new_images_2"]) == res.latest[2].n_images


class TestResume:
    def test_interrupt_and_resume_is_invisible(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        full = run_co_training(_config(), _sim_backend(ds), labeled, pool, images, tmp_path / "full")

        paused = run_co_training(
            _config(pause_after=3), _sim_backend(ds), labeled, pool, images, tmp_path / "part"
        )
        assert paused.reason == "paused"
        assert paused.stopped is False
        assert paused.n_cycles == 3

        resumed = run_co_training(
            _config(), _sim_backend(ds), labeled, pool, images, tmp_path / "part", resume=True
        )
        assert resumed.similarities == full.similarities
        assert resumed.latest[1] == full.latest[1]
        assert resumed.latest[2] == full.latest[2]
        assert resumed.accumulated[1] == full.accumulated[1]
        assert resumed.provenance == full.provenance
        assert (tmp_path / "part" / "metrics.csv").read_text() == (
            tmp_path / "full" / "metrics.csv"
        ).read_text()

    def test_self_training_resume(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        full = run_self_training(_config(), _sim_backend(ds), labeled, pool, images, tmp_path / "full")
        run_self_training(
            _config(pause_after=2), _sim_backend(ds), labeled, pool, images, tmp_path / "part"
        )
        resumed = run_self_training(
            _config(), _sim_backend(ds), labeled, pool, images, tmp_path / "part", resume=True
        )
        assert resumed.similarities == full.similarities
        assert resumed.pseudo_labels == full.pseudo_labels
        assert (tmp_path / "part" / "metrics.csv").read_text() == (
            tmp_path / "full" / "metrics.csv"
        ).read_text()

    def test_resume_from_finished_run_returns_immediately(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        first = run_self_training(_config(), _sim_backend(ds), labeled, pool, images, tmp_path / "run")

        class Untouchable(DetectorBackend):
            @property
            def backend_id(self):
                return "sim"

            def run_training(self, request):
                raise AssertionError("resume of a finished run must not train")

            def run_inference(self, handle, images, table):
                raise AssertionError("resume of a finished run must not predict")

        again = run_self_training(
            _config(), Untouchable(), labeled, pool, images, tmp_path / "run", resume=True
        )
        assert again.n_cycles == first.n_cycles
        assert again.stopped is True
        assert again.pseudo_labels == first.pseudo_labels
        assert again.similarities == first.similarities

    def test_resume_rejects_other_config(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        run_self_training(
            _config(pause_after=1), _sim_backend(ds), labeled, pool, images, tmp_path / "run"
        )
        with pytest.raises(CheckpointError, match="does not match"):
            run_self_training(
                _config(seed=999), _sim_backend(ds), labeled, pool, images, tmp_path / "run", resume=True
            )

    def test_resume_rejects_other_mode(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        run_self_training(
            _config(pause_after=1), _sim_backend(ds), labeled, pool, images, tmp_path / "run"
        )
        with pytest.raises(CheckpointError):
            run_co_training(
                _config(), _sim_backend(ds), labeled, pool, images, tmp_path / "run", resume=True
            )

    def test_fresh_run_refuses_occupied_directory(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        run_self_training(
            _config(pause_after=1), _sim_backend(ds), labeled, pool, images, tmp_path / "run"
        )
        with pytest.raises(CheckpointError, match="resume=True"):
            run_self_training(_config(), _sim_backend(ds), labeled, pool, images, tmp_path / "run")

    def test_resume_without_checkpoints_fails(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        with pytest.raises(CheckpointError):
            run_self_training(
                _config(), _sim_backend(ds), labeled, pool, images, tmp_path / "missing", resume=True
            )

    def test_pause_zero_stops_after_bootstrap(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        res = run_self_training(
            _config(pause_after=0), _sim_backend(ds), labeled, pool, images, tmp_path / "run"
        )
        assert res.n_cycles == 0
        assert res.reason == "paused"
        assert res.pseudo_labels.n_images > 0  # bootstrap predictions exist
        resumed = run_self_training(
            _config(), _sim_backend(ds), labeled, pool, images, tmp_path / "run", resume=True
        )
        full = run_self_training(_config(), _sim_backend(ds), labeled, pool, images, tmp_path / "full")
        assert resumed.similarities == full.similarities


class TestFinalDetector:
    def test_final_training_consumes_run_product(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        backend = _sim_backend(ds)
        cfg = _config()
        res = run_self_training(cfg, backend, labeled, pool, images, tmp_path / "run")
        handle = train_final(cfg, backend, labeled, res.pseudo_labels, images)
        assert handle.view_transform is ViewTransform.IDENTITY
        state = backend.model_state(handle)
        trained_images = labeled.n_images + res.pseudo_labels.n_images
        assert sum(state.counts) >= trained_images  # at least one box per image here


class TestEstimators:
    def test_self_estimator_fit(self, sim_world, tmp_path):
        ds, labeled, pool, images = sim_world
        est = SelfTrainingLabeler(
            backend=_sim_backend(ds),
            table=TABLE,
            sample_size=30,
            keep_size=10,
            min_cycles=5,
            stability_threshold=5.0,
            stability_window=2,
            max_cycles=8,
            seed=11,
            run_dir=tmp_path / "run",
        )
        est.fit(labeled, pool, images)
        assert est.n_cycles_ >= 5
        assert est.pseudo_labels_.n_images > 0
        assert est.run_dir_ == tmp_path / "run"
        reference = run_self_training(_config(), _sim_backend(ds), labeled, pool, images, tmp_path / "ref")
        assert est.similarities_ == reference.similarities

    def test_co_estimator_tempdir(self, sim_world):
        ds, labeled, pool, images = sim_world
        est = CoTrainingLabeler(
            backend=_sim_backend(ds),
            table=TABLE,
            sample_size=30,
            keep_size=10,
            min_cycles=2,
            stability_threshold=5.0,
            stability_window=2,
            max_cycles=4,
            seed=11,
        )
        est.fit(labeled, pool, images)
        assert est.run_dir_ is None
        assert est.accumulated_.n_images > 0

    def test_get_params_roundtrip(self):
        est = CoTrainingLabeler(seed=3, keep_size=7)
        params = est.get_params()
        assert params["seed"] == 3 and params["keep_size"] == 7
        est.set_params(seed=5)
        assert est.seed == 5
