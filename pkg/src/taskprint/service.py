"""Knowledge-cloud HTTP service: submit task records, query top-k candidates."""

from __future__ import annotations

import base64
import binascii

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .baselines import KeywordSet
from .errors import (
    DuplicateTaskError,
    EmptyPoolError,
    TaskprintError,
    UnknownMeasureError,
    ValidationError,
)
from .measures import DEFAULT_MEASURE, MeasureRegistry, TaskQuery, default_registry
from .selector import CandidatePool, select
from .store import TaskStore

SCHEMA_VERSION = 1


class SubmitRequest(BaseModel):
    task_id: str
    fingerprint: str = Field(description="base64 of the TFPR binary format")
    task_size: int = 0
    keywords: list[str] | None = None
    scenario_metadata: dict = Field(default_factory=dict)
    data_shareable: bool = False
    overlap_group: str | None = None
    overwrite: bool = False


class QueryRequest(BaseModel):
    fingerprint: str | None = Field(default=None, description="base64 TFPR")
    keywords: list[str] | None = None
    task_id: str | None = None
    measure: str | None = None
    k: int = Field(default=5, ge=1)
    scenario: str | None = None
    exclude_overlap_group: str | None = None


def _decode_fingerprint_b64(b64: str):
    from .serialization import fingerprint_from_bytes

    try:
        raw = base64.b64decode(b64, validate=True)
    except (binascii.Error, ValueError):
        raise HTTPException(400, detail="fingerprint: invalid base64") from None
    try:
        return fingerprint_from_bytes(raw)
    except TaskprintError as e:
        raise HTTPException(400, detail=f"fingerprint: {e}") from None


def create_app(
    store: TaskStore,
    registry: MeasureRegistry | None = None,
    default_measure: str = DEFAULT_MEASURE,
) -> FastAPI:
    registry = registry or default_registry()
    registry.get(default_measure)  # fail fast on a bad flag
    app = FastAPI(title="taskprint knowledge cloud", version="1")

    @app.post("/v1/tasks", status_code=201)
    def submit_task(req: SubmitRequest):
        try:
            raw = base64.b64decode(req.fingerprint, validate=True)
        except (binascii.Error, ValueError):
            raise HTTPException(400, detail="fingerprint: invalid base64") from None
        try:
            task_id = store.submit(
                task_id=req.task_id,
                fingerprint_bytes=raw,
                task_size=req.task_size,
                keywords=req.keywords,
                scenario_metadata=req.scenario_metadata,
                data_shareable=req.data_shareable,
                overlap_group=req.overlap_group,
                overwrite=req.overwrite,
            )
        except DuplicateTaskError as e:
            raise HTTPException(409, detail=str(e)) from None
        except ValidationError as e:
            raise HTTPException(400, detail=str(e)) from None
        return {"schema_version": SCHEMA_VERSION, "task_id": task_id}

    @app.get("/v1/tasks")
    def list_tasks():
        return {"schema_version": SCHEMA_VERSION, "tasks": store.listing()}

    @app.get("/v1/tasks/{task_id}")
    def get_task(task_id: str):
        try:
            record, raw = store.get(task_id)
        except KeyError:
            raise HTTPException(404, detail=f"no stored task {task_id!r}") from None
        return {
            "schema_version": SCHEMA_VERSION,
            "task_id": record.task_id,
            "fingerprint": base64.b64encode(raw).decode("ascii"),
            "task_size": record.task_size,
            "keywords": sorted(record.keywords.keywords) if record.keywords else [],
            "scenario_metadata": record.scenario_metadata,
            "data_shareable": record.data_shareable,
            "overlap_group": record.overlap_group,
            "created_at": record.created_at,
        }

    @app.get("/v1/measures")
    def list_measures():
        return {
            "schema_version": SCHEMA_VERSION,
            "default_measure": default_measure,
            "measures": registry.describe(),
        }

    @app.post("/v1/query")
    def query(req: QueryRequest):
        try:
            measure = registry.get(req.measure or default_measure)
        except UnknownMeasureError as e:
            raise HTTPException(400, detail=str(e)) from None
        target = TaskQuery(
            task_id=req.task_id,
            fingerprint=_decode_fingerprint_b64(req.fingerprint) if req.fingerprint else None,
            keywords=KeywordSet(req.task_id or "query", frozenset(req.keywords), 0)
            if req.keywords
            else None,
        )
        if target.fingerprint is None and target.keywords is None:
            raise HTTPException(400, detail="query needs a fingerprint or a keyword set")

        excluded_groups = {req.exclude_overlap_group} if req.exclude_overlap_group else set()
        if req.task_id and req.task_id in store:
            own_group = store.get(req.task_id)[0].overlap_group
            if own_group:
                excluded_groups.add(own_group)

        entries = []
        for record in store.records():
            if req.scenario and req.scenario not in record.scenario_metadata:
                continue
            if record.overlap_group and record.overlap_group in excluded_groups:
                continue
            if not measure.supports(record, target):
                continue
            entries.append(record)
        if not entries:
            raise HTTPException(404, detail="no compatible records after filtering")

        try:
            ranked = select(target, CandidatePool(entries=entries), measure, req.k)
        except EmptyPoolError as e:
            raise HTTPException(404, detail=str(e)) from None
        except ValidationError as e:
            raise HTTPException(400, detail=str(e)) from None

        by_id = {r.task_id: r for r in entries}
        suggestions = []
        for item in ranked:
            record = by_id[item.task_id]
            suggestions.append(
                {
                    "task_id": item.task_id,
                    "distance": item.distance,
                    "rank": item.rank,
                    "task_size": record.task_size,
                    "scenario_metadata": record.scenario_metadata,
                    "data_shareable": record.data_shareable,
                }
            )
        return {
            "schema_version": SCHEMA_VERSION,
            "measure": measure.name,
            "suggestions": suggestions,
        }

    return app
