"""HTTP labeling service and the scripted auto-labeler.

Human observers label generated images "good" or "bad" through a small
HTTP API; verdicts land in the append-only label store that bootstraps the
quality filter. The auto-labeler is a deterministic stand-in for the human
used in synthetic end-to-end runs.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import Response
from pydantic import BaseModel

from .dataset import DatasetManifest
from .quality_filter import FilterError, LabelRecord, LabelStore, now_timestamp


class LabelRequest(BaseModel):
    image_id: str
    verdict: str
    annotator: str


def build_app(pool: DatasetManifest, store: LabelStore, static_dir=None) -> FastAPI:
    """Labeling API over one generated pool.

    GET /batch?n=k   -> up to k unlabeled ids with image URLs
    GET /image/{id}  -> PNG bytes
    POST /label      -> append a LabelRecord (idempotent)
    GET /progress    -> {labeled_good, labeled_bad, remaining}
    """
    app = FastAPI(title="labeling-service")
    by_id = {e.image_id: e for e in pool}

    from fastapi.middleware.cors import CORSMiddleware

    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.get("/batch")
    def batch(n: int = 20):
        verdicts = store.verdicts()
        items = []
        for e in pool:
            if e.image_id in verdicts:
                continue
            items.append({"image_id": e.image_id, "url": f"/image/{e.image_id}"})
            if len(items) >= n:
                break
        remaining = sum(1 for e in pool if e.image_id not in verdicts)
        return {"items": items, "remaining": remaining}

    @app.get("/image/{image_id}")
    def image(image_id: str):
        entry = by_id.get(image_id)
        if entry is None:
            raise HTTPException(status_code=404, detail=f"unknown image_id {image_id!r}")
        data = Path(pool.resolve(entry)).read_bytes()
        return Response(content=data, media_type="image/png")

    @app.post("/label")
    def label(req: LabelRequest):
        if req.image_id not in by_id:
            raise HTTPException(status_code=404, detail=f"unknown image_id {req.image_id!r}")
        try:
            record = LabelRecord(
                image_id=req.image_id,
                verdict=req.verdict,
                annotator=req.annotator,
                labeled_at=now_timestamp(),
            )
        except FilterError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        written = store.append(record)
        return {"accepted": True, "written": written}

    @app.get("/progress")
    def progress():
        verdicts = {k: v for k, v in store.verdicts().items() if k in by_id}
        good = sum(1 for v in verdicts.values() if v == "good")
        bad = len(verdicts) - good
        return {
            "labeled_good": good,
            "labeled_bad": bad,
            "remaining": len(pool) - len(verdicts),
        }

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app


def serve(pool: DatasetManifest, store: LabelStore, port: int, static_dir=None):
    """Run the labeling service until interrupted."""
    import uvicorn

    uvicorn.run(build_app(pool, store, static_dir=static_dir), host="0.0.0.0", port=port)


def color_crispness(img: np.ndarray) -> float:
    """Margin of the dominant color channel over the other two; a crisp
    single-hue image scores high, a washed-out one low."""
    means = img.reshape(-1, 3).mean(axis=0)
    order = np.sort(means)
    return float(order[2] - 0.5 * (order[0] + order[1]))


def auto_label(
    pool: DatasetManifest,
    store: LabelStore,
    *,
    good_fraction: float = 0.5,
    annotator: str = "auto",
) -> dict:
    """Deterministic scripted labeler: rank the pool by color crispness and
    mark the top fraction good, the rest bad."""
    scored = []
    for e in pool:
        scored.append((color_crispness(pool.load_pixels(e)), e.image_id))
    scored.sort(key=lambda t: (-t[0], t[1]))
    n_good = int(round(good_fraction * len(scored)))
    counts = {"good": 0, "bad": 0}
    for rank, (_, image_id) in enumerate(scored):
        verdict = "good" if rank < n_good else "bad"
        store.append(
            LabelRecord(
                image_id=image_id,
                verdict=verdict,
                annotator=annotator,
                labeled_at=float(rank),
            )
        )
        counts[verdict] += 1
    return counts
