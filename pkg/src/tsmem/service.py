"""HTTP JSON service over one memory store.

Endpoints: ``POST /v1/turns``, ``POST /v1/query``, ``POST /v1/consolidate``,
``GET /v1/snapshot`` and ``GET /v1/health``. Mutations share the store's
writer lock; a request that cannot get it within ``lock_timeout`` seconds
gets 409. Malformed bodies get 400 and provider failures 503.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Literal, Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from tsmem import persistence
from tsmem.memory import Memory, WriterBusy
from tsmem.model import ChatTurn, Speaker, TimePoint
from tsmem.providers.base import ProviderError

logger = logging.getLogger(__name__)


class TurnIn(BaseModel):
    turn_id: str = Field(min_length=1)
    session_id: str = Field(min_length=1)
    dialogue_time: str
    speaker: Literal["user", "assistant"]
    text: str


class TurnsIn(BaseModel):
    turns: list[TurnIn]


class QueryIn(BaseModel):
    text: str = Field(min_length=1)
    issued_at: str
    ablation: Literal["none", "temporal", "summary", "naive"] = "none"


class ConsolidateIn(BaseModel):
    force: bool = True


def _bad_request(message: str) -> JSONResponse:
    return JSONResponse({"error": "bad_request", "detail": message}, status_code=400)


def create_app(memory: Memory, store_path: Optional[str | Path] = None, lock_timeout: float = 30.0) -> FastAPI:
    """Build the app around ``memory``; with ``store_path`` every mutation is saved."""
    app = FastAPI(title="tsmem", version="1")

    @app.exception_handler(RequestValidationError)
    async def _validation(_: Request, exc: RequestValidationError):
        return _bad_request(str(exc.errors()))

    @app.exception_handler(WriterBusy)
    async def _busy(_: Request, exc: WriterBusy):
        return JSONResponse({"error": "conflict", "detail": str(exc)}, status_code=409)

    @app.exception_handler(ProviderError)
    async def _provider(_: Request, exc: ProviderError):
        return JSONResponse({"error": "provider_unavailable", "detail": str(exc)}, status_code=503)

    def _save() -> None:
        if store_path is not None:
            persistence.save(memory, store_path)

    @app.get("/v1/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.post("/v1/turns")
    def post_turns(body: TurnsIn):
        try:
            turns = [ChatTurn(t.turn_id, t.session_id, TimePoint.parse(t.dialogue_time), Speaker(t.speaker), t.text)
                     for t in body.turns]
        except ValueError as exc:
            return _bad_request(str(exc))
        try:
            report = memory.ingest(turns, lock_timeout=lock_timeout)
        except ValueError as exc:
            return _bad_request(str(exc))
        _save()
        return report.to_json()

    @app.post("/v1/query")
    def post_query(body: QueryIn):
        try:
            issued = TimePoint.parse(body.issued_at)
        except ValueError as exc:
            return _bad_request(str(exc))
        result = memory.query(body.text, issued, memory.retrieval.with_ablation(body.ablation))
        return result.to_json()

    @app.post("/v1/consolidate")
    def post_consolidate(body: Optional[ConsolidateIn] = None):
        installed = memory.consolidate(force=(body or ConsolidateIn()).force, lock_timeout=lock_timeout)
        _save()
        return {"installed": len(installed), "stats": memory.stats()}

    @app.get("/v1/snapshot")
    def get_snapshot():
        if store_path is not None:
            return persistence.save(memory, store_path)
        with memory.writer(lock_timeout):
            state = persistence.dump_state(memory)
            return persistence.manifest_for(memory, state)

    return app
