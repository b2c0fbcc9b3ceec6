"""Client-facing HTTP API.

POST /tasks                          {precondition?, effect} -> {transactionId}
GET  /transactions                   -> list of transaction views
GET  /transactions/{id}              -> status + plan + participants
GET  /transactions/{id}/events       -> SSE stream of history entries
POST /transactions/{id}/cancel       -> acknowledgement

The event stream carries one JSON object per event with monotonically
increasing `seq`; clients resume after a drop with `?fromSeq=<last seen>`
and deduplicate by seq.  The stream closes after the terminal status event.
"""

from __future__ import annotations

import json
import queue

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import StreamingResponse
from pydantic import BaseModel

from .. import entish
from .core import AlreadyTerminal, TaskManager, UnknownTransaction

TERMINAL_VALUES = {"Completed", "Aborted", "Cancelled"}


class TaskIn(BaseModel):
    precondition: str | None = None
    effect: str


def create_app(tm: TaskManager) -> FastAPI:
    app = FastAPI(title="taskfleet task manager", version="0.1.0")

    @app.get("/health")
    def health():
        return {"ok": True}

    @app.post("/tasks")
    def submit_task(task: TaskIn):
        if not task.effect or not task.effect.strip():
            raise HTTPException(status_code=400, detail={"error": "effect is required"})
        try:
            txn_id = tm.submit_task(task.precondition, task.effect)
        except entish.FormulaSyntaxError as exc:
            raise HTTPException(
                status_code=400,
                detail={"error": str(exc), "position": exc.position, "expected": exc.expected},
            ) from exc
        return {"transactionId": txn_id}

    @app.get("/transactions")
    def list_transactions():
        return tm.list_views()

    @app.get("/transactions/{txn_id}")
    def get_transaction(txn_id: str):
        try:
            return tm.get_view(txn_id)
        except UnknownTransaction as exc:
            raise HTTPException(status_code=404, detail={"error": f"unknown transaction {txn_id}"}) from exc

    @app.post("/transactions/{txn_id}/cancel")
    def cancel(txn_id: str):
        try:
            tm.cancel(txn_id)
        except UnknownTransaction as exc:
            raise HTTPException(status_code=404, detail={"error": f"unknown transaction {txn_id}"}) from exc
        except AlreadyTerminal as exc:
            raise HTTPException(status_code=409, detail={"error": "AlreadyTerminal"}) from exc
        return {"status": "cancelling"}

    @app.get("/transactions/{txn_id}/events")
    def events(txn_id: str, request: Request, fromSeq: int = 0):
        try:
            backlog, live, close = tm.subscribe_events(txn_id, from_seq=fromSeq)
        except UnknownTransaction as exc:
            raise HTTPException(status_code=404, detail={"error": f"unknown transaction {txn_id}"}) from exc

        def is_terminal(event: dict) -> bool:
            return event.get("messageType") == "StatusChanged" and any(
                event.get("bodySummary", "").startswith(v) for v in TERMINAL_VALUES
            )

        def frame(event: dict) -> str:
            return f"id: {event['seq']}\ndata: {json.dumps(event)}\n\n"

        def stream():
            try:
                terminal_seen = False
                delivered = fromSeq
                for event in backlog:
                    if event["seq"] <= delivered:
                        continue
                    delivered = event["seq"]
                    yield frame(event)
                    if is_terminal(event):
                        terminal_seen = True
                if not terminal_seen and not backlog:
                    # Resuming past the end of a finished transaction: there
                    # is nothing left to wait for.
                    try:
                        if tm.get_view(txn_id)["status"] in TERMINAL_VALUES:
                            terminal_seen = True
                    except UnknownTransaction:
                        terminal_seen = True
                while not terminal_seen:
                    try:
                        event = live.get(timeout=2.0)
                    except queue.Empty:
                        yield ": ping\n\n"
                        continue
                    if event["seq"] <= delivered:
                        continue  # already replayed from the backlog
                    delivered = event["seq"]
                    yield frame(event)
                    if is_terminal(event):
                        terminal_seen = True
            finally:
                close()

        return StreamingResponse(stream(), media_type="text/event-stream")

    return app
