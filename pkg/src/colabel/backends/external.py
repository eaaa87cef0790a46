"""Client for out-of-process detectors speaking the stdio wire protocol.

The engine spawns the detector command once and keeps it running for the
whole session. Messages are newline-delimited JSON on the child's stdin and
stdout; label payloads never travel inline but as KITTI label files plus
manifests under this backend's work directory:

    {"id": 1, "cmd": "train", "labeled_manifest": ..., "pseudo_manifest": ...,
     "hyper": {...}, "view_transform": "identity", "seed": 7, "model_out": ...}
    {"id": 2, "cmd": "predict", "model": ..., "images_manifest": ...,
     "thresholds": {"vehicle": 0.8}, "out_dir": ...}

and the child answers {"id": N, "ok": true, "model"|"out_dir": path} or
{"id": N, "ok": false, "error": "..."}. Mirroring is handled engine-side, so
the child always works in whatever frame the files are in; the
``view_transform`` field is informational.

A child that times out or exits is restarted and the request re-sent, up to
``max_restarts`` times; after that a BackendError carries the tail of the
child's stderr log.
"""

from __future__ import annotations

import json
import queue
import shlex
import subprocess
import threading
import time
from pathlib import Path
from typing import Any, Mapping, Sequence

from colabel.backends.base import (
    BackendError,
    DetectorBackend,
    ModelHandle,
    TrainRequest,
)
from colabel.kitti import read_label_dir, save_annotations, save_manifest
from colabel.types import (
    AnnotationKind,
    AnnotationSet,
    ClassTable,
    ImageRecord,
    ViewTransform,
)

__all__ = ["ExternalDetectorBackend"]

_STDERR_TAIL_BYTES = 4000


class ExternalDetectorBackend(DetectorBackend):
    """Runs an external detector process and speaks the wire protocol to it."""

    def __init__(
        self,
        command: str | Sequence[str],
        work_dir: str | Path,
        table: ClassTable,
        *,
        timeout_s: float = 300.0,
        max_restarts: int = 1,
    ) -> None:
        if isinstance(command, str):
            command = shlex.split(command)
        if not command:
            raise ValueError("external detector command is empty")
        if timeout_s <= 0:
            raise ValueError("timeout_s must be positive")
        if max_restarts < 0:
            raise ValueError("max_restarts must be >= 0")
        self._command = list(command)
        self._work_dir = Path(work_dir)
        self._table = table
        self._timeout_s = timeout_s
        self._max_restarts = max_restarts
        self._lock = threading.Lock()
        self._proc: subprocess.Popen[str] | None = None
        self._reader: threading.Thread | None = None
        self._queue: queue.Queue[str | None] = queue.Queue()
        self._stderr_path = self._work_dir / "detector.stderr.log"
        self._next_id = 0
        self._next_session = 0

    @property
    def backend_id(self) -> str:
        return "external"

    # One child process, one pipe: sessions are inherently serial.
    @property
    def supports_concurrent_sessions(self) -> bool:
        return False

    # -- process management ------------------------------------------------

    def _ensure_process(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            return
        self._work_dir.mkdir(parents=True, exist_ok=True)
        stderr_file = open(self._stderr_path, "ab")
        try:
            self._proc = subprocess.Popen(
                self._command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=stderr_file,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise BackendError(
                f"cannot start external detector {self._command!r}: {exc}"
            ) from None
        finally:
            # The child duplicated the descriptor (or spawn failed); either
            # way the parent's copy is done.
            stderr_file.close()
        # Fresh queue per process: stale lines from a dead child must not be
        # mistaken for answers from the new one.
        self._queue = queue.Queue()
        self._reader = threading.Thread(
            target=_pump_lines, args=(self._proc.stdout, self._queue), daemon=True
        )
        self._reader.start()

    def _kill_process(self) -> None:
        if self._proc is None:
            return
        if self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        if self._proc.stdin:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
        self._proc = None

    def close(self) -> None:
        with self._lock:
            self._kill_process()

    def _stderr_tail(self) -> str:
        try:
            data = self._stderr_path.read_bytes()
        except OSError:
            return "(no stderr captured)"
        tail = data[-_STDERR_TAIL_BYTES:].decode("utf-8", errors="replace").strip()
        return tail or "(stderr empty)"

    # -- request plumbing ----------------------------------------------------

    def _roundtrip(self, payload: dict[str, Any]) -> dict[str, Any]:
        attempts = self._max_restarts + 1
        last_failure = "never started"
        for _ in range(attempts):
            self._ensure_process()
            assert self._proc is not None and self._proc.stdin is not None
            try:
                self._proc.stdin.write(json.dumps(payload, sort_keys=True) + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError):
                last_failure = "pipe to detector process broke"
                self._kill_process()
                continue
            answer = self._await_answer(payload["id"])
            if answer is not None:
                return answer
            last_failure = f"no answer within {self._timeout_s}s (or process exited)"
            self._kill_process()
        raise BackendError(
            f"external detector failed after {attempts} attempt(s): {last_failure}; "
            f"stderr tail:\n{self._stderr_tail()}"
        )

    def _await_answer(self, request_id: int) -> dict[str, Any] | None:
        deadline = time.monotonic() + self._timeout_s
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return None
            try:
                line = self._queue.get(timeout=remaining)
            except queue.Empty:
                return None
            if line is None:  # EOF: the child went away mid-request
                return None
            line = line.strip()
            if not line:
                continue
            try:
                message = json.loads(line)
            except json.JSONDecodeError:
                continue  # children may chat on stdout; only JSON counts
            if not isinstance(message, dict) or message.get("id") != request_id:
                continue  # a late answer to an abandoned request
            return message

    def _session_dir(self, kind: str) -> Path:
        self._next_session += 1
        path = self._work_dir / "sessions" / f"{self._next_session:06d}_{kind}"
        path.mkdir(parents=True, exist_ok=True)
        return path

    # -- DetectorBackend -----------------------------------------------------

    def run_training(self, request: TrainRequest) -> ModelHandle:
        with self._lock:
            session = self._session_dir("train")
            labeled_manifest = save_annotations(
                request.labeled,
                request.images,
                session / "labeled",
                table=self._table,
                name="labeled",
            )
            pseudo_manifest = save_annotations(
                request.pseudo,
                request.images,
                session / "pseudo",
                table=self._table,
                name="pseudo",
            )
            model_out = session / "model"
            self._next_id += 1
            response = self._roundtrip(
                {
                    "id": self._next_id,
                    "cmd": "train",
                    "labeled_manifest": str(labeled_manifest),
                    "pseudo_manifest": str(pseudo_manifest),
                    "hyper": request.hyper.as_dict(),
                    "view_transform": request.view_transform.value,
                    "seed": request.seed,
                    "model_out": str(model_out),
                }
            )
            if not response.get("ok"):
                raise BackendError(
                    f"external training failed: {response.get('error', 'no error given')}"
                )
            model_path = response.get("model")
            if not isinstance(model_path, str) or not model_path:
                raise BackendError("train response lacks a 'model' path")
            if not Path(model_path).exists():
                raise BackendError(f"detector reported model {model_path!r} but wrote nothing there")
            return ModelHandle(
                backend_id=self.backend_id,
                token=model_path,
                view_transform=request.view_transform,
                training_seed=request.seed,
            )

    def run_inference(
        self, handle: ModelHandle, records: Sequence[ImageRecord], table: ClassTable
    ) -> AnnotationSet:
        with self._lock:
            session = self._session_dir("predict")
            images_manifest = session / "images.jsonl"
            save_manifest(list(records), {}, images_manifest, name="images")
            out_dir = session / "out"
            out_dir.mkdir()
            self._next_id += 1
            response = self._roundtrip(
                {
                    "id": self._next_id,
                    "cmd": "predict",
                    "model": handle.token,
                    "images_manifest": str(images_manifest),
                    "thresholds": table.thresholds_by_name(),
                    "out_dir": str(out_dir),
                }
            )
            if not response.get("ok"):
                raise BackendError(
                    f"external inference failed: {response.get('error', 'no error given')}"
                )
            answered_dir = response.get("out_dir")
            if not isinstance(answered_dir, str) or not answered_dir:
                raise BackendError("predict response lacks an 'out_dir' path")
            per_image = read_label_dir(answered_dir, table)
            entries = {i: dets for i, dets in per_image.items() if dets}
            return AnnotationSet(entries=entries, kind=AnnotationKind.PSEUDO_LABEL)


def _pump_lines(stream: Any, sink: queue.Queue) -> None:
    try:
        for line in stream:
            sink.put(line)
    except ValueError:
        pass  # stream closed under the reader
    finally:
        sink.put(None)
