"""Durable session persistence: an append-only JSON-lines journal.

One directory per session:

    journal.jsonl    append-only event log (the source of truth)
    dataset.json     copy of the dataset manifest with resolved paths
    snapshots/       compacted journals

Event types: ``session`` (config), ``model`` (canonical architecture +
provenance envelope), ``record`` (training results), ``job`` (queue state
transitions), ``fit`` (which model ids form the MDS base configuration).
Every append is flushed and fsynced, so a crash can tear at most the final
line; loading truncates a torn trailing line with a warning. Distance
matrices and embeddings are recomputed from journaled state on load.
"""

from __future__ import annotations

import json
import os
import threading
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from .arch import Architecture, arch_from_dict, canonical_dict
from .trainer import TrainingRecord

JOURNAL_NAME = "journal.jsonl"


class StoreError(ValueError):
    pass


@dataclass
class ModelState:
    arch: Architecture
    record: TrainingRecord | None = None


@dataclass
class Session:
    directory: Path | None = None
    dataset_manifest: str | None = None
    config: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)   # id -> ModelState, insertion-ordered
    jobs: dict = field(default_factory=dict)     # job_id -> latest job event fields
    base_ids: list = field(default_factory=list)

    def registry_equal(self, other: "Session") -> bool:
        if list(self.models) != list(other.models):
            return False
        for model_id, state in self.models.items():
            theirs = other.models[model_id]
            if state.arch != theirs.arch:
                return False
            mine = state.record.to_dict() if state.record else None
            its = theirs.record.to_dict() if theirs.record else None
            if mine != its:
                return False
        return True

    def apply(self, event: dict) -> None:
        kind = event.get("type")
        if kind == "session":
            self.dataset_manifest = event.get("dataset")
            self.config = event.get("config", {})
        elif kind == "model":
            model_id = event["id"]
            if model_id not in self.models:
                arch = arch_from_dict(
                    event["arch"],
                    provenance=event.get("provenance", "handcrafted"),
                    parent_id=event.get("parent_id"),
                )
                self.models[model_id] = ModelState(arch=arch)
        elif kind == "record":
            model_id = event["id"]
            if model_id not in self.models:
                raise StoreError(f"record event for unknown model {model_id}")
            self.models[model_id].record = TrainingRecord.from_dict(event["record"])
        elif kind == "job":
            job_id = event["job_id"]
            self.jobs.setdefault(job_id, {}).update(
                {k: v for k, v in event.items() if k != "type"})
        elif kind == "fit":
            self.base_ids = list(event["base_ids"])
        else:
            raise StoreError(f"unknown event type {kind!r}")


class Journal:
    """Single-writer append-only event log; appends are atomic at line
    granularity (write + flush + fsync)."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(self.path, "a", encoding="utf-8")
        self._lock = threading.Lock()

    def append(self, event: dict) -> None:
        line = json.dumps(event, sort_keys=True, separators=(",", ":"))
        with self._lock:
            self._file.write(line + "\n")
            self._file.flush()
            os.fsync(self._file.fileno())

    def close(self) -> None:
        with self._lock:
            if not self._file.closed:
                self._file.close()


def model_event(arch: Architecture) -> dict:
    return {"type": "model", "id": arch.id, "arch": canonical_dict(arch),
            "provenance": arch.provenance, "parent_id": arch.parent_id,
            "created_at": arch.created_at}


def record_event(model_id: str, record: TrainingRecord) -> dict:
    return {"type": "record", "id": model_id, "record": record.to_dict()}


def read_events(path) -> list[dict]:
    """Parse a journal file; a torn trailing line is dropped with a warning."""
    events = []
    with open(path, encoding="utf-8") as f:
        lines = f.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for lineno, line in enumerate(lines):
        try:
            events.append(json.loads(line))
        except json.JSONDecodeError as exc:
            if lineno == len(lines) - 1:
                warnings.warn(f"{path}: truncating torn trailing line {lineno + 1}")
                break
            raise StoreError(f"{path}: corrupt journal line {lineno + 1}: {exc}") from exc
    return events


def load(path) -> Session:
    """Replay a journal into a Session. ``path`` may be a session directory
    (containing journal.jsonl) or a journal/snapshot file."""
    path = Path(path)
    if path.is_dir():
        journal_path = path / JOURNAL_NAME
        directory = path
    else:
        journal_path = path
        directory = path.parent
    if not journal_path.exists():
        raise StoreError(f"no journal at {journal_path}")
    session = Session(directory=directory)
    for event in read_events(journal_path):
        session.apply(event)
    return session


def snapshot(session: Session, path=None) -> Path:
    """Write a compacted journal equivalent to the session state.

    Atomic: written to a temp file and renamed into place.
    """
    if path is None:
        if session.directory is None:
            raise StoreError("snapshot needs a target path for in-memory sessions")
        snapdir = session.directory / "snapshots"
        snapdir.mkdir(parents=True, exist_ok=True)
        path = snapdir / f"snapshot-{int(time.time() * 1000)}.jsonl"
    path = Path(path)
    events: list[dict] = [{"type": "session", "version": 1,
                           "dataset": session.dataset_manifest,
                           "config": session.config}]
    for model_id, state in session.models.items():
        events.append(model_event(state.arch))
        if state.record is not None:
            events.append(record_event(model_id, state.record))
    for job_id, fields_ in session.jobs.items():
        events.append({"type": "job", **fields_})
    if session.base_ids:
        events.append({"type": "fit", "base_ids": list(session.base_ids)})
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        for event in events:
            f.write(json.dumps(event, sort_keys=True, separators=(",", ":")) + "\n")
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)
    return path
