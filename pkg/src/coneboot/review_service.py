"""HTTP service for the mask review step.

Serves frame/mask PNGs and the pending queue to the browser UI and records
verdicts durably. The verdict log is the single source of truth: every POST
is appended (and fsynced) before the in-memory queue moves, and appends are
serialized behind a lock while reads stay concurrent.
"""

from __future__ import annotations

import io
import logging
import threading
import time
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from fastapi.responses import HTMLResponse
from pydantic import BaseModel

from .frames import load_manifest, load_png_gray
from .review import (
    Verdict,
    append_verdict,
    build_queue,
    read_verdict_log,
    record_verdict,
    verdict_log_path,
)

log = logging.getLogger(__name__)


class VerdictIn(BaseModel):
    sequence_id: str
    decision: str
    elapsed_ms: int = 0
    reviewer: str = "local"


class ReviewStore:
    """Thread-safe queue state on top of the durable verdict log."""

    def __init__(self, root: str | Path, mask_algo: str = "hull"):
        self.root = Path(root)
        self.mask_algo = mask_algo
        self.manifest = load_manifest(self.root / "manifest.json")
        self.log_path = verdict_log_path(self.root)
        self.queue = build_queue(self.manifest, read_verdict_log(self.log_path))
        self._lock = threading.Lock()

    def sequence_dir(self, sequence_id: str) -> Path:
        try:
            return self.root / self.manifest.entry(sequence_id).path
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown sequence {sequence_id!r}")

    def frame_files(self, sequence_id: str) -> list[Path]:
        d = self.sequence_dir(sequence_id)
        files = sorted(d.glob("frame_*.png"))
        if not files:
            raise HTTPException(status_code=404, detail=f"no frames for {sequence_id!r}")
        return files

    def next_items(self, limit: int) -> list[dict]:
        with self._lock:
            pending = list(self.queue.pending[:limit])
        items = []
        for sid in pending:
            mid = len(self.frame_files(sid)) // 2
            items.append(
                {
                    "sequence_id": sid,
                    "frame_url": f"/api/image/{sid}/frame/{mid}",
                    "mask_url": f"/api/image/{sid}/mask",
                }
            )
        return items

    def record(self, body: VerdictIn) -> None:
        verdict = Verdict(
            sequence_id=body.sequence_id,
            decision=body.decision,
            timestamp_ms=int(time.time() * 1000),
            elapsed_ms=body.elapsed_ms,
            reviewer=body.reviewer,
        )
        with self._lock:
            # durable first: the log is acknowledged before the queue moves
            updated = record_verdict(self.queue, verdict)
            append_verdict(self.log_path, verdict)
            self.queue = updated

    def progress(self) -> dict:
        with self._lock:
            done = self.queue.done
            return {
                "total": self.queue.total,
                "done": len(done),
                "good": sum(1 for v in done.values() if v.decision == "good"),
                "bad": sum(1 for v in done.values() if v.decision == "bad"),
            }


def _png_response(arr: np.ndarray) -> Response:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(arr.astype(np.uint8), mode="L").save(buf, format="PNG")
    return Response(content=buf.getvalue(), media_type="image/png")


def create_app(root: str | Path, mask_algo: str = "hull", ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="mask review")
    store = ReviewStore(root, mask_algo)
    app.state.store = store

    @app.get("/api/queue")
    def queue(limit: int = 8) -> dict:
        return {"items": store.next_items(max(1, min(limit, 64)))}

    @app.get("/api/image/{sequence_id}/frame/{index}")
    def frame(sequence_id: str, index: int) -> Response:
        files = store.frame_files(sequence_id)
        if not 0 <= index < len(files):
            raise HTTPException(status_code=404, detail=f"frame {index} out of range")
        return _png_response(load_png_gray(files[index]))

    @app.get("/api/image/{sequence_id}/mask")
    def mask(sequence_id: str) -> Response:
        d = store.sequence_dir(sequence_id)
        path = d / f"mask_{store.mask_algo}.png"
        if not path.exists():
            raise HTTPException(
                status_code=404,
                detail=f"no mask_{store.mask_algo}.png for {sequence_id!r}; run maskgen first",
            )
        return _png_response(load_png_gray(path))

    @app.post("/api/verdicts", status_code=204)
    def verdicts(body: VerdictIn) -> Response:
        if body.decision not in ("good", "bad"):
            raise HTTPException(status_code=422, detail="decision must be good or bad")
        try:
            store.record(body)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown sequence {body.sequence_id!r}")
        return Response(status_code=204)

    @app.get("/api/progress")
    def progress() -> dict:
        return store.progress()

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    else:

        @app.get("/", response_class=HTMLResponse)
        def index() -> str:
            return (
                "<html><body><h1>mask review API</h1>"
                "<p>No UI bundle mounted; the API lives under /api/.</p></body></html>"
            )

    return app
