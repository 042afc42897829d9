"""Mask proposals and their propagation across the T x V grid.

Real deployments produce tracks with external segmentation and tracking
models and hand them to `ingest_tracks`; synthetic fixtures use the oracle
tracker, which propagates masks exactly through persistent point ids.

2D masks are plain (H, W) boolean arrays. Track files are JSON with
run-length encoded cells; absent cells of an initial track are all-zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LoadError, OracleUnavailableError, TrackFormatError
from .instrumentation import counters
from .render import SplatConfig, splat_coverage
from .scene import SequenceAsset

ORIGIN_INITIAL = "initial_proposal"
ORIGIN_AUGMENT = "validation_augment"
_ORIGINS = (ORIGIN_INITIAL, ORIGIN_AUGMENT)


@dataclass
class MaskTrack:
    """One tracked mask identity across the grid.

    cells maps (t, v) to a boolean mask; cells that are absent are all-zero.
    Initial-proposal tracks conceptually populate every cell, augment tracks
    exactly one.
    """

    track_id: int
    origin: str
    cells: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    def mask_at(self, t: int, v: int) -> np.ndarray | None:
        return self.cells.get((t, v))

    def nonempty_cells(self) -> list[tuple[int, int]]:
        """Cells with at least one set pixel, in (t, v)-major order."""
        return sorted(key for key, m in self.cells.items() if m.any())


@dataclass
class TrackSet:
    """All tracks over one asset, with the grid geometry they were made for."""

    tracks: list[MaskTrack]
    num_frames: int
    num_views: int
    resolution: tuple[int, int]

    @property
    def n_initial(self) -> int:
        return sum(1 for tr in self.tracks if tr.origin == ORIGIN_INITIAL)

    def by_id(self, track_id: int) -> MaskTrack:
        for tr in self.tracks:
            if tr.track_id == track_id:
                return tr
        raise KeyError(f"no track with id {track_id}")

    def next_track_id(self) -> int:
        return max((tr.track_id for tr in self.tracks), default=-1) + 1

    def validate(self) -> None:
        seen = set()
        for tr in self.tracks:
            if tr.track_id in seen:
                raise TrackFormatError(f"duplicate track id {tr.track_id}")
            seen.add(tr.track_id)
            if tr.origin not in _ORIGINS:
                raise TrackFormatError(f"track {tr.track_id}: bad origin '{tr.origin}'")
            for (t, v), mask in tr.cells.items():
                if not (0 <= t < self.num_frames and 0 <= v < self.num_views):
                    raise TrackFormatError(
                        f"track {tr.track_id}: cell ({t}, {v}) outside the "
                        f"{self.num_frames} x {self.num_views} grid"
                    )
                if mask.shape != self.resolution:
                    raise TrackFormatError(
                        f"track {tr.track_id}: cell ({t}, {v}) resolution {mask.shape} "
                        f"!= {self.resolution}"
                    )
            if tr.origin == ORIGIN_AUGMENT and len(tr.cells) != 1:
                raise TrackFormatError(
                    f"augment track {tr.track_id} must populate exactly one cell"
                )


# ---------------------------------------------------------------------------
# Run-length encoding: row-major scan, alternating run lengths starting with
# the count of 0 bits (the first run may be 0).


def rle_encode(mask: np.ndarray) -> list[int]:
    flat = np.asarray(mask, dtype=bool).reshape(-1)
    n = flat.size
    if n == 0:
        return [0]
    boundaries = np.nonzero(np.diff(flat))[0] + 1
    runs = np.diff(np.concatenate(([0], boundaries, [n]))).tolist()
    if flat[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_decode(runs: list[int], resolution: tuple[int, int]) -> np.ndarray:
    h, w = resolution
    total = h * w
    runs = [int(r) for r in runs]
    if any(r < 0 for r in runs):
        raise TrackFormatError("RLE runs must be nonnegative")
    if sum(runs) != total:
        raise TrackFormatError(f"RLE runs sum to {sum(runs)}, expected {total}")
    flat = np.zeros(total, dtype=bool)
    pos = 0
    value = False
    for r in runs:
        if value and r:
            flat[pos:pos + r] = True
        pos += r
        value = not value
    return flat.reshape(h, w)


# ---------------------------------------------------------------------------
# Oracle tracker for synthetic fixtures


def _require_fixture(asset: SequenceAsset) -> None:
    if not asset.is_fixture():
        raise OracleUnavailableError(
            "oracle tracking needs fixture point ids and part labels; "
            "ingest externally computed tracks for real assets"
        )


def _frame_id_index(asset: SequenceAsset, t: int) -> dict[int, int]:
    ids = asset.frames[t].point_ids
    assert ids is not None
    return {int(pid): i for i, pid in enumerate(ids)}


def oracle_initial_proposals(
    asset: SequenceAsset,
    granularity: int = 1,
    splat_config: SplatConfig | None = None,
) -> list[np.ndarray]:
    """First-cell mask proposals: one splat footprint per visible fixture part.

    granularity > 1 splits each part into that many spatial chunks along its
    largest world extent, yielding finer (still part-pure) proposals.
    """
    _require_fixture(asset)
    if granularity < 1:
        raise ValueError("granularity must be >= 1")
    counters.increment("track")
    config = splat_config if splat_config is not None else SplatConfig()

    frame = asset.frames[0]
    camera = asset.cameras[0]
    view = asset.view(0, 0)
    labels = frame.part_labels
    assert labels is not None

    visible = view.pixel_to_point[view.silhouette]
    visible_parts = np.unique(labels[visible]) if visible.size else np.empty(0, dtype=np.int32)

    masks: list[np.ndarray] = []
    for part in visible_parts.tolist():
        part_points = frame.points[labels == part]
        if granularity == 1:
            masks.append(splat_coverage(part_points, camera, config))
            continue
        extents = part_points.max(axis=0) - part_points.min(axis=0)
        axis = int(np.argmax(extents))
        order = np.argsort(part_points[:, axis], kind="stable")
        for chunk in np.array_split(order, granularity):
            if chunk.size:
                masks.append(splat_coverage(part_points[chunk], camera, config))
    return masks


def oracle_propagate(
    asset: SequenceAsset,
    seed: np.ndarray,
    track_id: int = 0,
    lose_cells: set[tuple[int, int]] | None = None,
    splat_config: SplatConfig | None = None,
) -> MaskTrack:
    """Propagate a first-cell seed mask to every (t, v) cell via point ids.

    The point ids visible under the seed in cell (0, 0) define the tracked
    set; each cell's mask is the splat footprint of those ids there.
    lose_cells simulates tracking dropouts by zeroing the listed cells.
    """
    _require_fixture(asset)
    counters.increment("track")
    config = splat_config if splat_config is not None else SplatConfig()
    lose_cells = lose_cells or set()

    first = asset.view(0, 0)
    if seed.shape != first.resolution:
        raise TrackFormatError(f"seed resolution {seed.shape} != {first.resolution}")
    under = seed & first.silhouette
    seeds_idx = np.unique(first.pixel_to_point[under])
    ids0 = asset.frames[0].point_ids
    assert ids0 is not None
    tracked_ids = ids0[seeds_idx]

    cells: dict[tuple[int, int], np.ndarray] = {}
    empty = np.zeros(first.resolution, dtype=bool)
    for t in range(asset.num_frames):
        ids_t = asset.frames[t].point_ids
        assert ids_t is not None
        pts = asset.frames[t].points[np.isin(ids_t, tracked_ids)]
        for v in range(asset.num_views):
            if (t, v) in lose_cells or pts.shape[0] == 0:
                cells[(t, v)] = empty.copy()
            else:
                cells[(t, v)] = splat_coverage(pts, asset.cameras[v], config)
    return MaskTrack(track_id=track_id, origin=ORIGIN_INITIAL, cells=cells)


def oracle_track_set(
    asset: SequenceAsset,
    granularity: int = 1,
    lose_cells: dict[int, set[tuple[int, int]]] | None = None,
    splat_config: SplatConfig | None = None,
) -> TrackSet:
    """Full oracle pipeline: initial proposals on cell (0, 0), each propagated.

    lose_cells maps track_id -> cells to zero for that track.
    """
    seeds = oracle_initial_proposals(asset, granularity, splat_config)
    lose_cells = lose_cells or {}
    tracks = [
        oracle_propagate(asset, seed, track_id=i, lose_cells=lose_cells.get(i), splat_config=splat_config)
        for i, seed in enumerate(seeds)
    ]
    ts = TrackSet(
        tracks=tracks,
        num_frames=asset.num_frames,
        num_views=asset.num_views,
        resolution=asset.resolution,
    )
    ts.validate()
    return ts


# ---------------------------------------------------------------------------
# Track file IO
#
# JSON: {"T", "V", "H", "W", "tracks": [{"id", "origin",
#        "cells": [{"t", "v", "rle": [...]}, ...]}, ...]}
# Cells that are all-zero may be omitted. Indices are 0-based.


def export_tracks(track_set: TrackSet, path: Path | str) -> None:
    h, w = track_set.resolution
    doc = {
        "T": track_set.num_frames,
        "V": track_set.num_views,
        "H": h,
        "W": w,
        "tracks": [],
    }
    for tr in track_set.tracks:
        cells = [
            {"t": t, "v": v, "rle": rle_encode(tr.cells[(t, v)])}
            for (t, v) in sorted(tr.cells)
            if tr.cells[(t, v)].any()
        ]
        doc["tracks"].append({"id": tr.track_id, "origin": tr.origin, "cells": cells})
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def ingest_tracks(path: Path | str, asset: SequenceAsset) -> TrackSet:
    """Load a track file and check it against the asset's grid and resolution."""
    counters.increment("track")
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"track file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TrackFormatError(f"{path}: not valid JSON: {exc}") from exc

    h, w = asset.resolution
    if (doc.get("T"), doc.get("V")) != (asset.num_frames, asset.num_views):
        raise TrackFormatError(
            f"{path}: grid {doc.get('T')} x {doc.get('V')} does not match asset "
            f"{asset.num_frames} x {asset.num_views}"
        )
    if (doc.get("H"), doc.get("W")) != (h, w):
        raise TrackFormatError(
            f"{path}: resolution {doc.get('H')} x {doc.get('W')} does not match "
            f"asset {h} x {w}"
        )

    tracks = []
    for entry in doc.get("tracks", []):
        cells: dict[tuple[int, int], np.ndarray] = {}
        for cell in entry.get("cells", []):
            t, v = int(cell["t"]), int(cell["v"])
            cells[(t, v)] = rle_decode(cell["rle"], (h, w))
        tracks.append(MaskTrack(track_id=int(entry["id"]), origin=entry["origin"], cells=cells))

    ts = TrackSet(
        tracks=tracks,
        num_frames=asset.num_frames,
        num_views=asset.num_views,
        resolution=(h, w),
    )
    ts.validate()
    return ts
