"""HTTP front for the review store.

Labelers authenticate with bearer tokens (token -> labeler id map from
config). Status codes follow the store's error taxonomy: 409 on version
conflicts, 422 on validation problems, 401 on bad tokens, 404 on unknown
items.
"""

from __future__ import annotations

import json
from pathlib import Path

from fastapi import Depends, FastAPI, HTTPException, Query, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from ..builder import OcrTask
from .store import (
    NotFoundError,
    NothingToExportError,
    ReviewStore,
    ValidationError,
    VersionConflictError,
)


class TaskIn(BaseModel):
    id: str
    image_ref: str
    question: str
    vlm_answer: str | None = None


class EnqueueIn(BaseModel):
    tasks: list[TaskIn]


class DecisionIn(BaseModel):
    action: str
    expected_version: int
    corrected_text: str | None = None


def load_tokens(path: str | Path) -> dict[str, str]:
    """Token file: JSON object mapping bearer token -> labeler id."""
    return json.loads(Path(path).read_text(encoding="utf-8"))


def create_app(store: ReviewStore, tokens: dict[str, str]) -> FastAPI:
    app = FastAPI(title="review service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    def current_labeler(request: Request) -> str:
        auth = request.headers.get("Authorization", "")
        if not auth.startswith("Bearer "):
            raise HTTPException(status_code=401, detail="missing bearer token")
        labeler = tokens.get(auth[len("Bearer "):])
        if labeler is None:
            raise HTTPException(status_code=401, detail="unknown token")
        return labeler

    @app.get("/healthz")
    def healthz():
        return {"ok": True}

    @app.post("/queues/{queue}/items")
    def enqueue(queue: str, payload: EnqueueIn, labeler: str = Depends(current_labeler)):
        tasks = [
            OcrTask(
                id=t.id,
                image_ref=t.image_ref,
                question=t.question,
                vlm_answer=t.vlm_answer,
                review_status="queued" if t.vlm_answer else "unreviewed",
            )
            for t in payload.tasks
        ]
        result = store.enqueue(queue, tasks)
        return {
            "enqueued": result.added,
            "duplicates": result.duplicates,
            "rejected": [{"id": i, "reason": r} for i, r in result.rejected],
        }

    @app.get("/queues/{queue}/next")
    def claim_next(
        queue: str,
        labeler: str = Depends(current_labeler),
        declared: str | None = Query(default=None, alias="labeler"),
    ):
        if declared is not None and declared != labeler:
            raise HTTPException(
                status_code=422,
                detail=f"labeler param {declared!r} does not match token identity {labeler!r}",
            )
        item = store.claim_next(queue, labeler)
        if item is None:
            return Response(status_code=204)
        return {"item": item.to_dict()}

    @app.get("/items/{item_id}")
    def get_item(item_id: str, labeler: str = Depends(current_labeler)):
        try:
            return {"item": store.get(item_id).to_dict()}
        except NotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc

    @app.post("/items/{item_id}/decision")
    def decide(item_id: str, payload: DecisionIn, labeler: str = Depends(current_labeler)):
        try:
            item = store.decide(
                item_id,
                action=payload.action,
                expected_version=payload.expected_version,
                labeler=labeler,
                corrected_text=payload.corrected_text,
            )
        except VersionConflictError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        except NotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except ValidationError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return {"item": item.to_dict()}

    @app.get("/queues/{queue}/stats")
    def stats(queue: str, labeler: str = Depends(current_labeler)):
        return store.stats(queue)

    @app.get("/queues/{queue}/export")
    def export(queue: str, format: str = "manifest", labeler: str = Depends(current_labeler)):
        if format != "manifest":
            raise HTTPException(status_code=422, detail=f"unknown export format {format!r}")
        try:
            samples = store.export_verified(queue)
        except NothingToExportError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        records = [s.to_dict() for s in samples]
        manifest = {
            "name": f"review-{queue}-verified",
            "kind": "conversation",
            "strategy": "vlm_human_check",
            "counts": len(records),
            "fixed_answers": False,
        }
        return {"manifest": manifest, "records": records}

    return app


def serve(store: ReviewStore, tokens: dict[str, str], host: str = "127.0.0.1", port: int = 8765):
    import uvicorn

    uvicorn.run(create_app(store, tokens), host=host, port=port, log_level="warning")
