#!/usr/bin/env python3
"""Regenerate frontend/src/__fixtures__/mini_session.json.

The browser client tests run against a canned server session (one /meta
subset plus one /query response over the mini fixture scene) so they need
no Python server. This script rebuilds that file from the real service;
tests/test_service.py asserts the committed copy stays in sync.
"""

from __future__ import annotations

import json
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from ov4d.fixtures import generate_scenario
from ov4d.pipeline import PipelineConfig, build_asset
from ov4d.service import create_app

REPO_ROOT = Path(__file__).resolve().parents[1]
OUT_PATH = REPO_ROOT / "frontend" / "src" / "__fixtures__" / "mini_session.json"


def canonical_session(asset, meta) -> dict:
    """Must match tests/test_service.py::canonical_session byte-for-byte in
    content: /meta subset + one query with the timing zeroed."""
    client = TestClient(create_app(asset))
    meta_doc = client.get("/meta").json()
    query_doc = client.post("/query", json={"prompts": meta["part_names"]}).json()
    query_doc["query_ms"] = 0.0
    return {
        "meta": {
            "num_frames": meta_doc["num_frames"],
            "num_views": meta_doc["num_views"],
            "point_counts": meta_doc["point_counts"],
        },
        "query": query_doc,
    }


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        directory = Path(tmp) / "mini"
        meta = generate_scenario("mini", directory)
        config = PipelineConfig.load(directory / "config.json")
        asset = build_asset(directory / "manifest.json", config)
        doc = canonical_session(asset, meta)
    OUT_PATH.parent.mkdir(parents=True, exist_ok=True)
    OUT_PATH.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"wrote {OUT_PATH}")


if __name__ == "__main__":
    main()
