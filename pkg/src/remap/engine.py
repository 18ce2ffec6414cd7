"""Session engine: the model registry, training job queue, live event bus,
and projection lifecycle behind the HTTP service.

One worker thread drains the queue (rank ascending, then submission order).
Every state change is journaled and broadcast; subscribers receive a full
state snapshot first, then deltas, so a mirror replaying the stream matches
the journal exactly.
"""

from __future__ import annotations

import queue
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .arch import Architecture, canonical_dict, chip_sequence, count_parameters, validate
from .data import Dataset
from .distances import METRICS, append_row, distance_matrix
from .edits import EditOp, VariationConstraints, ablations, apply_edit, variations
from .embedding import ProjectionManager, insert_out_of_sample, interpretable_projection
from .store import Journal, Session, model_event, record_event
from .surrogate import surrogate_train
from .trainer import TrainingConfig, train

JOB_STATES = ("queued", "running", "done", "failed", "cancelled")


class EngineError(ValueError):
    pass


class UnknownModel(EngineError):
    pass


class UnknownJob(EngineError):
    pass


class UnknownClass(EngineError):
    pass


class NotTrained(EngineError):
    pass


@dataclass
class Job:
    job_id: str
    arch_id: str
    epochs: int
    seed: int
    mode: str
    rank: int = 0
    seq: int = 0
    state: str = "queued"
    submitted_at: float = field(default_factory=time.time)
    cancel: threading.Event = field(default_factory=threading.Event)

    def to_dict(self) -> dict:
        return {"job_id": self.job_id, "arch_id": self.arch_id, "epochs": self.epochs,
                "seed": self.seed, "mode": self.mode, "rank": self.rank,
                "seq": self.seq, "state": self.state, "submitted_at": self.submitted_at}


@dataclass
class ModelEntry:
    arch: Architecture
    record: object = None

    @property
    def trained(self) -> bool:
        return self.record is not None


class EventBus:
    """Fan-out of engine events to per-subscriber queues."""

    def __init__(self):
        self._lock = threading.Lock()
        self._subscribers: list[queue.Queue] = []

    def subscribe(self, first_event: dict | None = None) -> queue.Queue:
        q: queue.Queue = queue.Queue()
        with self._lock:
            if first_event is not None:
                q.put(first_event)
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def publish(self, event: dict) -> None:
        with self._lock:
            for q in self._subscribers:
                q.put(event)


class SessionEngine:
    """Owns one session: registry, distances, projections, queue, journal."""

    def __init__(self, dataset: Dataset | None, config: TrainingConfig,
                 journal: Journal | None = None, start_worker: bool = True):
        self.dataset = dataset
        self.config = config
        self.journal = journal
        self.lock = threading.RLock()
        self.models: dict[str, ModelEntry] = {}
        self.jobs: dict[str, Job] = {}
        self.matrices: dict = {metric: None for metric in METRICS}
        self.projections = ProjectionManager()
        self.bus = EventBus()
        self._seq = 0
        self._cond = threading.Condition(self.lock)
        self._stop = False
        self._worker: threading.Thread | None = None
        if start_worker:
            self.start_worker()

    # -- lifecycle ----------------------------------------------------------

    @classmethod
    def from_session(cls, session: Session, dataset: Dataset | None,
                     journal: Journal | None = None,
                     start_worker: bool = True) -> "SessionEngine":
        config = TrainingConfig.from_dict(session.config) if session.config else TrainingConfig()
        engine = cls(dataset, config, journal=journal, start_worker=False)
        for model_id, state in session.models.items():
            engine.models[model_id] = ModelEntry(state.arch, state.record)
        for job_id, fields_ in session.jobs.items():
            job = Job(job_id=job_id, arch_id=fields_["arch_id"],
                      epochs=fields_.get("epochs", config.epochs),
                      seed=fields_.get("seed", config.seed),
                      mode=fields_.get("mode", config.mode),
                      rank=fields_.get("rank", 0), seq=fields_.get("seq", 0),
                      state=fields_.get("state", "queued"),
                      submitted_at=fields_.get("submitted_at", 0.0))
            engine._seq = max(engine._seq, job.seq + 1)
            if job.state == "running":  # interrupted by a previous shutdown
                job.state = "cancelled"
                engine._journal_job(job)
            engine.jobs[job_id] = job
        if session.base_ids:
            engine._rebuild_projections(session.base_ids)
        if start_worker:
            engine.start_worker()
        return engine

    def _rebuild_projections(self, base_ids: list[str]) -> None:
        base_items = [self._item(i) for i in base_ids if self.models[i].trained]
        usable = [i for i in base_ids if self.models[i].trained]
        if len(usable) < 3:
            return
        self.matrices = {metric: distance_matrix(base_items, metric, ids=usable)
                         for metric in METRICS}
        self.projections.fit(self.matrices)
        for model_id, entry in self.models.items():
            if model_id in usable or not entry.trained:
                continue
            self._embed_new_model(model_id)

    def start_worker(self) -> None:
        if self._worker is not None:
            return
        self._worker = threading.Thread(target=self._worker_loop, daemon=True,
                                        name="remap-trainer")
        self._worker.start()

    def shutdown(self, timeout: float = 10.0) -> None:
        with self._cond:
            self._stop = True
            self._cond.notify_all()
        if self._worker is not None:
            self._worker.join(timeout=timeout)
        self._publish({"type": "shutdown"})
        if self.journal is not None:
            self.journal.close()

    # -- registry -----------------------------------------------------------

    def _item(self, model_id: str):
        entry = self.models[model_id]
        preds = entry.record.predictions if entry.trained else None
        return (entry.arch, preds)

    def _journal(self, event: dict) -> None:
        if self.journal is not None:
            self.journal.append(event)

    def _journal_job(self, job: Job) -> None:
        self._journal({"type": "job", **job.to_dict()})

    def _publish(self, event: dict) -> None:
        with self.lock:
            self.bus.publish(event)

    def add_model(self, arch: Architecture) -> ModelEntry:
        violations = validate(arch)
        if violations:
            raise EngineError("invalid architecture: "
                              + "; ".join(v.message for v in violations))
        with self.lock:
            if arch.id in self.models:
                return self.models[arch.id]
            entry = ModelEntry(arch)
            self.models[arch.id] = entry
            event = model_event(arch)
            self._journal(event)
            self.bus.publish(event)
            return entry

    def get_model(self, model_id: str) -> ModelEntry:
        try:
            return self.models[model_id]
        except KeyError:
            raise UnknownModel(f"unknown model {model_id!r}") from None

    # -- queue --------------------------------------------------------------

    def enqueue(self, arch: Architecture | str, epochs: int | None = None,
                seed: int | None = None, rank: int = 0) -> Job:
        with self.lock:
            if isinstance(arch, str):
                entry = self.get_model(arch)
            else:
                entry = self.add_model(arch)
            self._seq += 1
            job = Job(job_id=f"job-{self._seq:05d}", arch_id=entry.arch.id,
                      epochs=epochs if epochs is not None else self.config.epochs,
                      seed=seed if seed is not None else self.config.seed,
                      mode=self.config.mode, rank=rank, seq=self._seq)
            self.jobs[job.job_id] = job
            self._journal_job(job)
            self.bus.publish({"type": "job", **job.to_dict()})
            self._cond.notify_all()
            return job

    def get_job(self, job_id: str) -> Job:
        try:
            return self.jobs[job_id]
        except KeyError:
            raise UnknownJob(f"unknown job {job_id!r}") from None

    def reorder(self, job_id: str, rank: int) -> dict:
        with self.lock:
            job = self.get_job(job_id)
            if job.state != "queued":
                return {"job_id": job_id, "status": "noop",
                        "reason": f"job is {job.state}, not queued"}
            job.rank = rank
            self._journal_job(job)
            self.bus.publish({"type": "job", **job.to_dict()})
            self._cond.notify_all()
            return {"job_id": job_id, "status": "ok", "rank": rank}

    def cancel(self, job_id: str) -> dict:
        with self.lock:
            job = self.get_job(job_id)
            if job.state == "queued":
                job.state = "cancelled"
                job.cancel.set()
                self._journal_job(job)
                self.bus.publish({"type": "job", **job.to_dict()})
                return {"job_id": job_id, "status": "cancelled"}
            if job.state == "running":
                job.cancel.set()  # takes effect at the next epoch boundary
                return {"job_id": job_id, "status": "cancelling"}
            return {"job_id": job_id, "status": "noop",
                    "reason": f"job already {job.state}"}

    def queue_view(self) -> list[dict]:
        with self.lock:
            return [job.to_dict() for job in
                    sorted(self.jobs.values(), key=lambda j: j.seq)]

    def _next_queued(self) -> Job | None:
        queued = [j for j in self.jobs.values() if j.state == "queued"]
        if not queued:
            return None
        return min(queued, key=lambda j: (j.rank, j.seq))

    # -- worker -------------------------------------------------------------

    def _worker_loop(self) -> None:
        while True:
            with self._cond:
                job = self._next_queued()
                while not self._stop and job is None:
                    self._cond.wait(timeout=0.5)
                    job = self._next_queued()
                if self._stop:
                    return
                if job.cancel.is_set():
                    job.state = "cancelled"
                    self._journal_job(job)
                    self.bus.publish({"type": "job", **job.to_dict()})
                    continue
                job.state = "running"
                self._journal_job(job)
                self.bus.publish({"type": "job", **job.to_dict()})
                arch = self.models[job.arch_id].arch
            try:
                record = self._run_job(job, arch)
                self._finalize_job(job, record)
            except Exception as exc:  # noqa: BLE001 - worker must survive
                with self.lock:
                    job.state = "failed"
                    self._journal_job(job)
                    self.bus.publish({"type": "job", **job.to_dict(), "error": str(exc)})

    def _run_job(self, job: Job, arch: Architecture):
        config = TrainingConfig(
            epochs=job.epochs, batch_size=self.config.batch_size,
            learning_rate=self.config.learning_rate, momentum=self.config.momentum,
            seed=job.seed, mode=job.mode)

        def sink(epoch, train_loss, val_accuracy):
            self._publish({"type": "progress", "job_id": job.job_id, "epoch": epoch,
                           "train_loss": train_loss, "val_accuracy": val_accuracy})

        if job.mode == "surrogate":
            labels = self.dataset.val_labels if self.dataset is not None else None
            k = self.dataset.num_classes if self.dataset is not None else arch.num_classes
            return surrogate_train(arch, config, val_labels=labels, num_classes=k,
                                   progress_sink=sink, cancel=job.cancel)
        if self.dataset is None:
            raise EngineError("real training requires a dataset")
        return train(arch, self.dataset, config, progress_sink=sink, cancel=job.cancel)

    def _attach_record(self, model_id: str, record) -> None:
        with self.lock:
            self.models[model_id].record = record
            self._journal(record_event(model_id, record))
            self.bus.publish(record_event(model_id, record))
            if self.projections.fitted:
                self._embed_new_model(model_id)

    def _finalize_job(self, job: Job, record) -> None:
        with self.lock:
            self._attach_record(job.arch_id, record)
            job.state = {"complete": "done", "cancelled": "cancelled",
                         "failed": "failed"}[record.status]
            self._journal_job(job)
            self.bus.publish({"type": "job", **job.to_dict()})

    def train_sync(self, arch: Architecture | str, epochs: int | None = None,
                   seed: int | None = None):
        """Train on the calling thread, bypassing the queue (used by the
        preprocessing CLI). Journals and embeds exactly like the worker."""
        with self.lock:
            entry = self.get_model(arch) if isinstance(arch, str) else self.add_model(arch)
        config = TrainingConfig(
            epochs=epochs if epochs is not None else self.config.epochs,
            batch_size=self.config.batch_size,
            learning_rate=self.config.learning_rate, momentum=self.config.momentum,
            seed=seed if seed is not None else self.config.seed, mode=self.config.mode)
        if config.mode == "surrogate":
            labels = self.dataset.val_labels if self.dataset is not None else None
            k = self.dataset.num_classes if self.dataset is not None else entry.arch.num_classes
            record = surrogate_train(entry.arch, config, val_labels=labels, num_classes=k)
        else:
            if self.dataset is None:
                raise EngineError("real training requires a dataset")
            record = train(entry.arch, self.dataset, config)
        self._attach_record(entry.arch.id, record)
        return record

    # -- distances & projections --------------------------------------------

    def _embed_new_model(self, model_id: str) -> None:
        """Append the model to both matrices and insert it out-of-sample."""
        rows = {}
        for metric in METRICS:
            matrix = self.matrices[metric]
            if matrix is None:
                return
            if model_id not in matrix.ids:
                items = [self._item(i) for i in matrix.ids]
                matrix = append_row(matrix, items, self._item(model_id), new_id=model_id)
                self.matrices[metric] = matrix
            emb = self.projections.get(metric)
            row = matrix.row(model_id)
            index = {m: k for k, m in enumerate(matrix.ids)}
            rows[metric] = np.array([row[index[b]] for b in emb.base_ids])
        self.projections.insert(model_id, rows)

    def refit(self) -> list[str]:
        """Refit both MDS bases over every trained model; journals the new
        base configuration."""
        with self.lock:
            trained = [i for i, e in self.models.items() if e.trained]
            if len(trained) < 3:
                raise EngineError(f"need at least 3 trained models, have {len(trained)}")
            items = [self._item(i) for i in trained]
            self.matrices = {metric: distance_matrix(items, metric, ids=trained)
                             for metric in METRICS}
            self.projections.refit(self.matrices)
            self._journal({"type": "fit", "base_ids": trained})
            self.bus.publish({"type": "fit", "base_ids": trained})
            return trained

    # -- spawning -----------------------------------------------------------

    def spawn_ablations(self, parent_id: str, selected) -> tuple[list[Job], list[dict]]:
        with self.lock:
            parent = self.get_model(parent_id)
            if not parent.trained:
                raise NotTrained(f"parent {parent_id} has no training record")
            children, skipped = ablations(parent.arch, set(selected))
            epochs = parent.record.epochs_run or self.config.epochs
            jobs = []
            for child in children:
                self.add_model(child)
                jobs.append(self.enqueue(child.id, epochs=epochs))
            diagnostics = [{"layer_index": index,
                            "violations": [v.message for v in violations]}
                           for index, violations in skipped]
            return jobs, diagnostics

    def spawn_variations(self, parent_id: str, constraints: VariationConstraints,
                         epochs: int | None = None) -> list[Job]:
        with self.lock:
            parent = self.get_model(parent_id)
            children = variations(parent.arch, constraints)
            jobs = []
            for child in children:
                self.add_model(child)
                jobs.append(self.enqueue(child.id, epochs=epochs))
            return jobs

    def spawn_handcrafted(self, parent_id: str, edits: list[EditOp],
                          epochs: int | None = None) -> list[Job]:
        with self.lock:
            if not edits:
                raise EngineError("handcraft request carries no edits")
            parent = self.get_model(parent_id)
            arch = parent.arch
            for edit in edits:
                arch = apply_edit(arch, edit)
            child = arch.with_layers(arch.layers, "handcrafted", parent_id=parent_id)
            self.add_model(child)
            return [self.enqueue(child.id, epochs=epochs)]

    # -- queries ------------------------------------------------------------

    def model_summary(self, model_id: str) -> dict:
        entry = self.models[model_id]
        summary = {"id": model_id, "provenance": entry.arch.provenance,
                   "parent_id": entry.arch.parent_id,
                   "param_count": count_parameters(entry.arch),
                   "layer_count": len(entry.arch.layers),
                   "trained": entry.trained}
        if entry.trained:
            summary.update(val_accuracy=entry.record.final_val_accuracy,
                           epochs_run=entry.record.epochs_run,
                           status=entry.record.status)
        return summary

    def list_models(self, provenance: str | None = None, pareto_only: bool = False,
                    class_id: int | None = None,
                    min_class_accuracy: float | None = None) -> list[dict]:
        with self.lock:
            ids = list(self.models)
            if provenance is not None:
                ids = [i for i in ids if self.models[i].arch.provenance == provenance]
            if pareto_only:
                front = set(self.pareto_ids())
                ids = [i for i in ids if i in front]
            if class_id is not None and min_class_accuracy is not None:
                accs = self.class_accuracies(class_id)
                ids = [i for i in ids if accs.get(i, 0.0) >= min_class_accuracy]
            return [self.model_summary(i) for i in ids]

    def pareto_ids(self) -> list[str]:
        """Models not dominated in (smaller param_count, larger accuracy)."""
        with self.lock:
            scored = [(i, count_parameters(e.arch), e.record.final_val_accuracy)
                      for i, e in self.models.items()
                      if e.trained and e.record.status != "failed"]
            front = []
            for i, params, acc in scored:
                dominated = any(
                    (p2 <= params and a2 >= acc and (p2 < params or a2 > acc))
                    for _, p2, a2 in scored)
                if not dominated:
                    front.append(i)
            return front

    def model_detail(self, model_id: str) -> dict:
        with self.lock:
            entry = self.get_model(model_id)
            detail = {"id": model_id, "arch": canonical_dict(entry.arch),
                      "provenance": entry.arch.provenance,
                      "parent_id": entry.arch.parent_id,
                      "created_at": entry.arch.created_at,
                      "param_count": count_parameters(entry.arch),
                      "chips": chip_sequence(entry.arch).to_dicts(),
                      "record": entry.record.to_dict() if entry.trained else None}
            return detail

    def class_accuracies(self, class_id: int) -> dict:
        with self.lock:
            k = self.dataset.num_classes if self.dataset is not None else None
            if k is not None and not 0 <= class_id < k:
                raise UnknownClass(f"class {class_id} outside 0..{k - 1}")
            out = {}
            for model_id, entry in self.models.items():
                if not entry.trained:
                    continue
                per_class = entry.record.per_class_accuracy
                if class_id >= len(per_class):
                    raise UnknownClass(f"class {class_id} outside the record range")
                out[model_id] = per_class[class_id]
            return out

    def projection(self, kind: str) -> dict:
        with self.lock:
            if kind == "interpretable":
                items = [(i, count_parameters(e.arch), e.record.final_val_accuracy)
                         for i, e in self.models.items() if e.trained]
                emb = interpretable_projection(items)
                coords = emb.coords()
                degenerate = False
                base_ids = list(coords)
            elif kind in METRICS:
                emb = self.projections.get(kind)
                coords = emb.coords()
                degenerate = emb.degenerate
                base_ids = list(emb.base_ids)
            else:
                raise EngineError(f"unknown projection {kind!r}")
            points = []
            for model_id, (x, y) in coords.items():
                summary = self.model_summary(model_id)
                points.append({"id": model_id, "x": x, "y": y,
                               "val_accuracy": summary.get("val_accuracy"),
                               "param_count": summary["param_count"],
                               "provenance": summary["provenance"]})
            return {"projection": kind, "points": points,
                    "base_ids": base_ids, "degenerate": degenerate}

    def snapshot_event(self) -> dict:
        with self.lock:
            models = []
            for model_id, entry in self.models.items():
                payload = model_event(entry.arch)
                payload["record"] = entry.record.to_dict() if entry.trained else None
                models.append(payload)
            return {"type": "snapshot", "models": models, "jobs": self.queue_view(),
                    "fitted": self.projections.fitted}

    def subscribe(self) -> queue.Queue:
        with self.lock:
            return self.bus.subscribe(first_event=self.snapshot_event())

    def unsubscribe(self, q: queue.Queue) -> None:
        self.bus.unsubscribe(q)
