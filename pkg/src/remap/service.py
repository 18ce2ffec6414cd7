"""REST + server-sent-events surface over a session engine.

Endpoints (all JSON):

    GET  /models                         filterable model listing
    GET  /models/{id}                    full detail incl. chips and record
    GET  /projection/{kind}              interpretable | structural | prediction
    GET  /pareto                         non-dominated (params, accuracy) models
    GET  /class/{c}/accuracies           per-model accuracy on one class
    GET  /dataset                        class names + thumbnails for the selector
    GET  /queue                          all jobs, submission order
    POST /ablations                      {parent_id, selected: [i, ...]}
    POST /variations                     {parent_id, n_children, seed, allowed?}
    POST /handcraft                      {parent_id, edits: [{op, target_index, payload?}]}
    POST /queue/reorder                  {job_id, rank}
    POST /queue/cancel                   {job_id}
    POST /projections/refit              {}
    GET  /events                         SSE stream: snapshot, then deltas

The event stream frames each event as ``data: <json>\\n\\n`` so browser
EventSource clients work; one JSON object per data line.
"""

from __future__ import annotations

import json
import queue
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import StreamingResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .arch import ParseError, layer_from_dict
from .edits import EditError, EditOp, InvalidResult, VariationConstraints
from .engine import EngineError, SessionEngine, UnknownClass, UnknownJob, UnknownModel


class AblationRequest(BaseModel):
    parent_id: str
    selected: list[int]


class VariationRequest(BaseModel):
    parent_id: str
    n_children: int = 10
    seed: int = 0
    epochs: int | None = None
    # layer handle -> list of op names; omitted = unconstrained
    allowed: dict[int, list[str]] | None = None


class EditPayload(BaseModel):
    op: str
    target_index: int
    payload: dict | None = None


class HandcraftRequest(BaseModel):
    parent_id: str
    edits: list[EditPayload]
    epochs: int | None = None


class ReorderRequest(BaseModel):
    job_id: str
    rank: int


class CancelRequest(BaseModel):
    job_id: str


def _http_error(exc: Exception) -> HTTPException:
    if isinstance(exc, (UnknownModel, UnknownJob, UnknownClass)):
        return HTTPException(status_code=404, detail=str(exc))
    if isinstance(exc, InvalidResult):
        return HTTPException(status_code=400, detail={
            "error": "invalid architecture",
            "violations": [{"rule": v.rule, "layer_index": v.layer_index,
                            "message": v.message} for v in exc.violations]})
    return HTTPException(status_code=400, detail=str(exc))


def create_app(engine: SessionEngine, static_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="remap", version="0.1.0")
    app.state.engine = engine

    @app.get("/models")
    def list_models(provenance: str | None = None, pareto_only: bool = False,
                    class_id: int | None = None, min_class_accuracy: float | None = None):
        try:
            return engine.list_models(provenance=provenance, pareto_only=pareto_only,
                                      class_id=class_id,
                                      min_class_accuracy=min_class_accuracy)
        except EngineError as exc:
            raise _http_error(exc) from exc

    @app.get("/models/{model_id}")
    def model_detail(model_id: str):
        try:
            return engine.model_detail(model_id)
        except EngineError as exc:
            raise _http_error(exc) from exc

    @app.get("/projection/{kind}")
    def projection(kind: str):
        try:
            return engine.projection(kind)
        except EngineError as exc:
            raise _http_error(exc) from exc

    @app.get("/pareto")
    def pareto():
        ids = engine.pareto_ids()
        return [engine.model_summary(i) for i in ids]

    @app.get("/class/{class_id}/accuracies")
    def class_accuracies(class_id: int):
        try:
            accuracies = engine.class_accuracies(class_id)
        except EngineError as exc:
            raise _http_error(exc) from exc
        names = engine.dataset.class_names if engine.dataset is not None else []
        name = names[class_id] if class_id < len(names) else str(class_id)
        return {"class_id": class_id, "class_name": name, "accuracies": accuracies}

    @app.get("/dataset")
    def dataset_info():
        ds = engine.dataset
        if ds is None:
            raise HTTPException(status_code=404, detail="session has no dataset")
        return {"class_names": ds.class_names, "num_classes": ds.num_classes,
                "input_shape": list(ds.input_shape),
                "val_count": int(len(ds.val_labels)),
                "thumbnails": ds.class_thumbnails()}

    @app.get("/queue")
    def queue_listing():
        return engine.queue_view()

    @app.post("/ablations")
    def spawn_ablations(request: AblationRequest):
        try:
            jobs, skipped = engine.spawn_ablations(request.parent_id,
                                                   set(request.selected))
        except (EngineError, EditError) as exc:
            raise _http_error(exc) from exc
        return {"jobs": [j.to_dict() for j in jobs], "skipped": skipped}

    @app.post("/variations")
    def spawn_variations(request: VariationRequest):
        try:
            parent = engine.get_model(request.parent_id)
            if request.allowed is None:
                constraints = VariationConstraints.unconstrained(
                    parent.arch, n_children=request.n_children, seed=request.seed)
            else:
                constraints = VariationConstraints(
                    allowed={int(k): set(v) for k, v in request.allowed.items()},
                    n_children=request.n_children, seed=request.seed)
            jobs = engine.spawn_variations(request.parent_id, constraints,
                                           epochs=request.epochs)
        except (EngineError, EditError) as exc:
            raise _http_error(exc) from exc
        return {"jobs": [j.to_dict() for j in jobs]}

    @app.post("/handcraft")
    def spawn_handcraft(request: HandcraftRequest):
        try:
            edits = []
            for item in request.edits:
                payload = layer_from_dict(item.payload) if item.payload else None
                edits.append(EditOp(op=item.op, target_index=item.target_index,
                                    payload=payload))
            jobs = engine.spawn_handcrafted(request.parent_id, edits,
                                            epochs=request.epochs)
        except InvalidResult as exc:
            return {"jobs": [], "error": _http_error(exc).detail}
        except (EngineError, EditError, ParseError) as exc:
            raise _http_error(exc) from exc
        return {"jobs": [j.to_dict() for j in jobs]}

    @app.post("/queue/reorder")
    def reorder(request: ReorderRequest):
        try:
            return engine.reorder(request.job_id, request.rank)
        except EngineError as exc:
            raise _http_error(exc) from exc

    @app.post("/queue/cancel")
    def cancel(request: CancelRequest):
        try:
            return engine.cancel(request.job_id)
        except EngineError as exc:
            raise _http_error(exc) from exc

    @app.post("/projections/refit")
    def refit():
        try:
            base_ids = engine.refit()
        except EngineError as exc:
            raise _http_error(exc) from exc
        return {"status": "ok", "base_ids": base_ids}

    @app.get("/events")
    def events(request: Request):
        subscription = engine.subscribe()

        def stream():
            try:
                while True:
                    try:
                        event = subscription.get(timeout=1.0)
                    except queue.Empty:
                        yield ": keepalive\n\n"
                        continue
                    yield f"data: {json.dumps(event, sort_keys=True)}\n\n"
                    if event.get("type") == "shutdown":
                        return
            finally:
                engine.unsubscribe(subscription)

        return StreamingResponse(stream(), media_type="text/event-stream")

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
