"""HTTP service exposing a fused asset for interactive prompting.

Endpoints:
  GET  /meta             frame/view counts, per-frame point counts, config
  GET  /frame/{t}/points interleaved x,y,z,r,g,b float32 little-endian
  POST /query            {prompts, tau?} -> per-frame base64 u16 labels

The asset is loaded once and never mutated; queries are pure reads and safe
to run concurrently. Malformed requests return 400 with a message.
"""

from __future__ import annotations

import base64
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .classify import NO_LABEL_NAME
from .errors import Ov4dError, UnknownPromptError
from .pipeline import FusedAsset, load_asset, query
from .scene import read_manifest, read_ply


class QueryRequest(BaseModel):
    prompts: list[str]
    tau: float | None = None


def _load_geometry(asset: FusedAsset) -> list[np.ndarray]:
    """Interleave each frame's positions and colors for the wire format."""
    manifest_path = asset.config.get("manifest")
    if not manifest_path:
        raise Ov4dError("asset config records no manifest path; cannot serve points")
    doc = read_manifest(manifest_path)
    base = Path(manifest_path).parent
    buffers = []
    for t, rel in enumerate(doc["frames"]):
        frame = read_ply(base / rel, frame_index=t)
        interleaved = np.empty((frame.point_count, 6), dtype="<f4")
        interleaved[:, :3] = frame.points
        interleaved[:, 3:] = frame.colors
        buffers.append(interleaved)
    return buffers


def create_app(asset, static_dir=None) -> FastAPI:
    """Build the service around a FusedAsset (or a path to one)."""
    if not isinstance(asset, FusedAsset):
        asset = load_asset(asset)
    geometry = _load_geometry(asset)
    if len(geometry) != asset.num_frames:
        raise Ov4dError(
            f"manifest has {len(geometry)} frames but asset has {asset.num_frames}"
        )

    app = FastAPI(title="ov4d", docs_url=None, redoc_url=None)

    @app.exception_handler(RequestValidationError)
    async def malformed(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": str(exc.errors())})

    @app.get("/meta")
    def meta():
        derived = asset.config.get("derived", {})
        return {
            "num_frames": asset.num_frames,
            "num_views": derived.get("num_views"),
            "point_counts": [f.point_count for f in asset.frames],
            "config": asset.config,
            "content_hash": asset.content_hash,
        }

    @app.get("/frame/{t}/points")
    def frame_points(t: int):
        if not 0 <= t < asset.num_frames:
            return JSONResponse(
                status_code=404,
                content={"detail": f"frame {t} out of range [0, {asset.num_frames})"},
            )
        return Response(
            content=geometry[t].tobytes(),
            media_type="application/octet-stream",
            headers={"X-Point-Count": str(geometry[t].shape[0])},
        )

    @app.post("/query")
    def run_query(request: QueryRequest):
        if not request.prompts:
            return JSONResponse(
                status_code=400, content={"detail": "prompts must be non-empty"}
            )
        try:
            fields, query_ms = query(asset, request.prompts, tau=request.tau)
        except UnknownPromptError as exc:
            return JSONResponse(status_code=400, content={"detail": str(exc)})
        except Ov4dError as exc:
            return JSONResponse(status_code=400, content={"detail": str(exc)})
        classes = [p.strip() for p in request.prompts]
        frames = []
        for lf in fields:
            frames.append(
                {
                    "t": lf.frame_index,
                    "labels": base64.b64encode(
                        lf.labels.astype("<u2").tobytes()
                    ).decode("ascii"),
                    "scores": {
                        "min": float(lf.scores.min()) if lf.scores.size else 0.0,
                        "max": float(lf.scores.max()) if lf.scores.size else 0.0,
                        "mean": float(lf.scores.mean()) if lf.scores.size else 0.0,
                    },
                }
            )
        return {
            "classes": classes,
            "no_label_index": len(classes),
            "no_label_name": NO_LABEL_NAME,
            "frames": frames,
            "query_ms": query_ms,
        }

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="static")

    return app


def serve(asset_path, host: str = "127.0.0.1", port: int = 8787, static_dir=None) -> None:
    import uvicorn

    app = create_app(asset_path, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
