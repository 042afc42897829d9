"""Synthetic scenario generator: small scenes with exactly known geometry,
part labels, tracks, embeddings, vocabularies, and ground-truth labels.

Every scenario is built so the intended behavior is provable from the
construction: parts project to disjoint image regions, so a correct pipeline
labels every visible point with its part and everything else `no label`.
Scenario directories are self-contained (scene + config + sidecar truths) and
drive both the test suite and the demo CLI flow.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .classify import LabelField, write_label_file, write_vocab_file
from .fusion import write_embedding_file
from .render import SplatConfig, splat_coverage
from .scene import Camera, PointCloudFrame, SequenceAsset, load_sequence, save_sequence
from .stub_vectors import cell_vector, class_vector
from .tracks import (
    ORIGIN_INITIAL,
    MaskTrack,
    TrackSet,
    export_tracks,
    oracle_track_set,
    rle_encode,
)
from .validation import ValidationConfig, validate_and_augment

EMBED_DIM = 8


# ---------------------------------------------------------------------------
# geometry helpers


def fibonacci_sphere(count: int, radius: float = 1.0) -> np.ndarray:
    """Evenly distributed points on a sphere shell, deterministic."""
    i = np.arange(count, dtype=np.float64) + 0.5
    polar = np.arccos(1.0 - 2.0 * i / count)
    azimuth = np.pi * (1.0 + np.sqrt(5.0)) * i
    return radius * np.stack(
        [
            np.cos(azimuth) * np.sin(polar),
            np.sin(azimuth) * np.sin(polar),
            np.cos(polar),
        ],
        axis=1,
    )


def look_at_camera(
    view_index: int,
    eye,
    target,
    focal: float,
    resolution: tuple[int, int],
    up=(0.0, 0.0, 1.0),
) -> Camera:
    """Right-handed camera at `eye` with its optical axis through `target`."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward])
    h, w = resolution
    return Camera(
        view_index=view_index,
        focal=(focal, focal),
        principal=(w / 2.0, h / 2.0),
        rotation=rotation,
        translation=-rotation @ eye,
        resolution=resolution,
    )


def ring_cameras(
    num_views: int,
    ring_radius: float,
    focal: float,
    resolution: tuple[int, int],
    phase_deg: float = 0.0,
    target=(0.0, 0.0, 0.0),
) -> list[Camera]:
    """Cameras evenly spaced on a horizontal circle, all looking at `target`."""
    cams = []
    for v in range(num_views):
        angle = np.deg2rad(phase_deg + 360.0 * v / num_views)
        eye = (
            float(target[0]) + ring_radius * np.cos(angle),
            float(target[1]) + ring_radius * np.sin(angle),
            float(target[2]),
        )
        cams.append(look_at_camera(v, eye, target, focal, resolution))
    return cams


def _grid_plate(
    center,
    half_width: float,
    half_height: float,
    side: int,
    rng: np.random.Generator,
    depth_jitter: float = 0.02,
) -> np.ndarray:
    """side x side points in a vertical plane, jittered along world Y (depth)."""
    xs = np.linspace(-half_width, half_width, side)
    zs = np.linspace(-half_height, half_height, side)
    gx, gz = np.meshgrid(xs, zs, indexing="ij")
    n = side * side
    pts = np.stack(
        [
            gx.reshape(-1),
            rng.uniform(-depth_jitter, depth_jitter, n),
            gz.reshape(-1),
        ],
        axis=1,
    )
    return pts + np.asarray(center, dtype=np.float64)


def _part_colors(num_points: int, part_index: int, rng: np.random.Generator) -> np.ndarray:
    bases = np.array(
        [
            [0.85, 0.35, 0.25],
            [0.25, 0.45, 0.85],
            [0.30, 0.75, 0.35],
        ]
    )
    base = bases[part_index % len(bases)]
    jitter = rng.uniform(-0.08, 0.08, (num_points, 3))
    return np.clip(base + jitter, 0.0, 1.0)


def _make_frame(frame_index: int, groups: list[tuple[np.ndarray, int, np.ndarray]]) -> PointCloudFrame:
    """Concatenate (points, part_index, colors) groups into one labeled frame.

    Point ids are persistent across frames because each part keeps a fixed id
    block: part k's points get ids [part_base_k, part_base_k + count), where
    the bases follow the (stable) group order and sizes.
    """
    pts = np.concatenate([g[0] for g in groups]).astype(np.float32)
    cols = np.concatenate([g[2] for g in groups]).astype(np.float32)
    labels = np.concatenate(
        [np.full(len(g[0]), g[1], dtype=np.int32) for g in groups]
    )
    id_arr = []
    cursor = 0
    for points, _, _ in groups:
        id_arr.append(np.arange(cursor, cursor + len(points), dtype=np.int64))
        cursor += len(points)
    return PointCloudFrame(
        frame_index=frame_index,
        points=pts,
        colors=cols,
        point_ids=np.concatenate(id_arr),
        part_labels=labels,
    )


# ---------------------------------------------------------------------------
# independent silhouette oracle (per-point loop; no shared code with the
# vectorized z-buffer renderer)


def brute_force_silhouette(frame: PointCloudFrame, camera: Camera, radius: int) -> np.ndarray:
    h, w = camera.resolution
    sil = np.zeros((h, w), dtype=bool)
    cam = frame.points.astype(np.float64) @ camera.rotation.T + camera.translation
    fx, fy = camera.focal
    cx, cy = camera.principal
    offsets = [
        (dr, dc)
        for dr in range(-radius, radius + 1)
        for dc in range(-radius, radius + 1)
        if dr * dr + dc * dc <= radius * radius
    ]
    for x, y, z in cam:
        if z <= 0.0:
            continue
        col = int(np.floor(cx + fx * x / z + 0.5))
        row = int(np.floor(cy + fy * y / z + 0.5))
        if not (0 <= row < h and 0 <= col < w):
            continue
        for dr, dc in offsets:
            rr, cc = row + dr, col + dc
            if 0 <= rr < h and 0 <= cc < w:
                sil[rr, cc] = True
    return sil


# ---------------------------------------------------------------------------
# scenario constructions


@dataclass
class _SceneRecipe:
    frames: list[PointCloudFrame]
    cameras: list[Camera]
    part_names: list[str]
    config: dict
    extras: dict


def _config_base(part_names: list[str], min_area: int = 0) -> dict:
    return {
        "resolution": None,
        "splat": {"radius_px": 2, "depth_epsilon": 1e-4},
        "validation": {
            "enabled": True,
            "connectivity": "eight",
            "min_component_area_px": min_area,
        },
        "fusion_strategy": "attention",
        "embedding_dim": EMBED_DIM,
        "tau_default": 0.2,
        "tracks": {"mode": "oracle", "path": None, "granularity": 1},
        "embeddings": {"mode": "deterministic_stub", "path": None},
        "text": {"mode": "deterministic_stub", "path": None},
        "manifest": "manifest.json",
    }


def _build_two_part() -> _SceneRecipe:
    """Two orbiting sphere shells, vertically separated, seen from a 4-camera
    ring at 512x512. Every view keeps the parts' footprints disjoint."""
    t_count, v_count = 5, 4
    resolution = (512, 512)
    rng = np.random.default_rng(20260823)
    shell_a = fibonacci_sphere(1000, 0.35)
    shell_b = fibonacci_sphere(1000, 0.35)
    colors_a = _part_colors(1000, 0, rng)
    colors_b = _part_colors(1000, 1, rng)
    frames = []
    for t in range(t_count):
        angle = 2.0 * np.pi * t / t_count
        center_a = np.array([0.25 * np.cos(angle + 0.4), 0.25 * np.sin(angle + 0.4), 0.55])
        center_b = np.array([0.25 * np.cos(-angle + 2.1), 0.25 * np.sin(-angle + 2.1), -0.55])
        frames.append(
            _make_frame(
                t,
                [
                    (shell_a + center_a, 0, colors_a),
                    (shell_b + center_b, 1, colors_b),
                ],
            )
        )
    cameras = ring_cameras(v_count, 3.2, 580.0, resolution)
    return _SceneRecipe(
        frames=frames,
        cameras=cameras,
        part_names=["part_a", "part_b"],
        config=_config_base(["part_a", "part_b"]),
        extras={},
    )


def _build_flip() -> _SceneRecipe:
    """Two plates with exclusive per-camera visibility; the generator later
    writes one deliberately flipped embedding row into the embedding file."""
    t_count = 8
    resolution = (256, 256)
    rng = np.random.default_rng(4417)
    plate_l = _grid_plate((0.0, 0.0, 0.0), 0.8, 0.8, 20, rng)
    plate_r = _grid_plate((4.0, 0.0, 0.0), 0.8, 0.8, 20, rng)
    colors_l = _part_colors(400, 0, rng)
    colors_r = _part_colors(400, 1, rng)
    frames = []
    for t in range(t_count):
        drift = np.array([0.01 * t, 0.0, 0.0])
        frames.append(
            _make_frame(
                t,
                [
                    (plate_l + drift, 0, colors_l),
                    (plate_r + drift, 1, colors_r),
                ],
            )
        )
    cameras = [
        look_at_camera(0, (0.0, -2.5, 0.0), (0.0, 0.0, 0.0), 250.0, resolution),
        look_at_camera(1, (4.0, 2.5, 0.0), (4.0, 0.0, 0.0), 250.0, resolution),
    ]
    config = _config_base(["limb_left", "limb_right"])
    config["tracks"] = {"mode": "file", "path": "tracks.json", "granularity": 1}
    config["embeddings"] = {"mode": "ingest_file", "path": "embeddings.bin"}
    config["text"] = {"mode": "ingest_vocab_file", "path": "vocab.bin"}
    return _SceneRecipe(
        frames=frames,
        cameras=cameras,
        part_names=["limb_left", "limb_right"],
        config=config,
        extras={"flip_track_id": 0, "flip_cell": [3, 0], "flip_to": "limb_right"},
    )


def _build_appearing() -> _SceneRecipe:
    """Two shells present throughout; a third appears at frame 2, so no
    first-frame proposal can ever track it and validation must recover it.

    The persistent parts matter beyond realism: per-class min-max logit
    equalization needs other-part masks in every frame's columns, otherwise
    the weakest of a frame's same-part masks is zeroed outright.
    """
    t_count, v_count = 4, 2
    resolution = (256, 256)
    rng = np.random.default_rng(907)
    shell_a = fibonacci_sphere(300, 0.3)
    shell_b = fibonacci_sphere(300, 0.3)
    shell_c = fibonacci_sphere(300, 0.3)
    colors_a = _part_colors(300, 0, rng)
    colors_b = _part_colors(300, 1, rng)
    colors_c = _part_colors(300, 2, rng)
    frames = []
    for t in range(t_count):
        groups = [
            (shell_a + np.array([-0.55, 0.0, 0.01 * t]), 0, colors_a),
            (shell_b + np.array([0.55, 0.0, -0.01 * t]), 1, colors_b),
        ]
        if t >= 2:
            groups.append((shell_c + np.array([0.0, 0.0, 0.6]), 2, colors_c))
        frames.append(_make_frame(t, groups))
    cameras = ring_cameras(v_count, 3.0, 260.0, resolution, phase_deg=90.0)
    names = ["part_a", "part_b", "part_c"]
    return _SceneRecipe(
        frames=frames,
        cameras=cameras,
        part_names=names,
        config=_config_base(names),
        extras={"appears_at_frame": 2, "appearing_part": "part_c"},
    )


def _build_lost() -> _SceneRecipe:
    """Two dense plates, one camera; the second part's track is blanked at one
    cell so validation has exactly one connected footprint to restore."""
    t_count = 3
    resolution = (256, 256)
    rng = np.random.default_rng(3311)
    plate_a = _grid_plate((-0.5, 0.0, 0.0), 0.35, 0.35, 24, rng)
    plate_b = _grid_plate((0.5, 0.0, 0.0), 0.35, 0.35, 24, rng)
    colors_a = _part_colors(plate_a.shape[0], 0, rng)
    colors_b = _part_colors(plate_b.shape[0], 1, rng)
    frames = [
        _make_frame(t, [(plate_a, 0, colors_a), (plate_b, 1, colors_b)])
        for t in range(t_count)
    ]
    cameras = [look_at_camera(0, (0.0, -2.5, 0.0), (0.0, 0.0, 0.0), 250.0, resolution)]
    config = _config_base(["part_a", "part_b"])
    config["tracks"] = {"mode": "file", "path": "tracks.json", "granularity": 1}
    return _SceneRecipe(
        frames=frames,
        cameras=cameras,
        part_names=["part_a", "part_b"],
        config=config,
        extras={"lose_track_id": 1, "lose_cell": [1, 0]},
    )


def _build_translate() -> _SceneRecipe:
    """A single sparse plate translating right; footprints per frame are the
    ground truth for mask propagation."""
    t_count = 3
    resolution = (256, 256)
    rng = np.random.default_rng(551)
    plate = _grid_plate((0.0, 0.0, 0.0), 0.24, 0.24, 9, rng)
    colors = _part_colors(plate.shape[0], 0, rng)
    frames = [
        _make_frame(t, [(plate + np.array([-0.4 + 0.4 * t, 0.0, 0.0]), 0, colors)])
        for t in range(t_count)
    ]
    cameras = [look_at_camera(0, (0.0, -2.5, 0.0), (0.0, 0.0, 0.0), 250.0, resolution)]
    config = _config_base(["part_a"])
    config["embeddings"] = {"mode": "ingest_file", "path": "embeddings.bin"}
    return _SceneRecipe(
        frames=frames,
        cameras=cameras,
        part_names=["part_a"],
        config=config,
        extras={},
    )


def _build_mini() -> _SceneRecipe:
    """Smallest end-to-end scene (96x96, 2 frames); the browser-viewer fixture."""
    t_count, v_count = 2, 2
    resolution = (96, 96)
    rng = np.random.default_rng(77)
    shell_a = fibonacci_sphere(100, 0.28)
    shell_b = fibonacci_sphere(100, 0.28)
    colors_a = _part_colors(100, 0, rng)
    colors_b = _part_colors(100, 1, rng)
    frames = []
    for t in range(t_count):
        center_a = np.array([-0.5, 0.0, 0.05 * t])
        center_b = np.array([0.5, 0.0, -0.05 * t])
        frames.append(
            _make_frame(
                t,
                [(shell_a + center_a, 0, colors_a), (shell_b + center_b, 1, colors_b)],
            )
        )
    cameras = ring_cameras(v_count, 3.0, 95.0, resolution, phase_deg=90.0)
    return _SceneRecipe(
        frames=frames,
        cameras=cameras,
        part_names=["part_a", "part_b"],
        config=_config_base(["part_a", "part_b"]),
        extras={},
    )


_BUILDERS = {
    "two_part": _build_two_part,
    "flip": _build_flip,
    "appearing": _build_appearing,
    "lost": _build_lost,
    "translate": _build_translate,
    "mini": _build_mini,
}

SCENARIO_NAMES = tuple(sorted(_BUILDERS))


# ---------------------------------------------------------------------------
# emission


def _synthetic_plate_tracks(asset: SequenceAsset, splat: SplatConfig) -> TrackSet:
    """One track per part with per-cell coverage of that part's points."""
    tracks = []
    for part in range(len(asset.part_names)):
        cells = {}
        for t in range(asset.num_frames):
            frame = asset.frames[t]
            member = frame.part_labels == part
            for v in range(asset.num_views):
                mask = splat_coverage(frame.points[member], asset.cameras[v], splat)
                if mask.any():
                    cells[(t, v)] = mask
        tracks.append(MaskTrack(track_id=part, origin=ORIGIN_INITIAL, cells=cells))
    ts = TrackSet(
        tracks=tracks,
        num_frames=asset.num_frames,
        num_views=asset.num_views,
        resolution=asset.resolution,
    )
    ts.validate()
    return ts


def _track_part_names(track_set: TrackSet, asset: SequenceAsset) -> dict[int, str]:
    """Dominant part name per track, from the points visible under its masks."""
    names = {}
    for track in track_set.tracks:
        votes = np.zeros(len(asset.part_names), dtype=np.int64)
        for (t, v), mask in track.cells.items():
            view = asset.view(t, v)
            ids = view.pixel_to_point[mask & view.silhouette]
            if ids.size:
                votes += np.bincount(
                    asset.frames[t].part_labels[ids], minlength=len(asset.part_names)
                )
        if votes.sum():
            names[track.track_id] = asset.part_names[int(votes.argmax())]
    return names


def _ground_truth_labels(asset: SequenceAsset) -> list[LabelField]:
    """Part label for every point that wins at least one pixel in some view at
    that frame; `no label` for the rest."""
    k = len(asset.part_names)
    fields = []
    for t in range(asset.num_frames):
        frame = asset.frames[t]
        visible = np.zeros(frame.point_count, dtype=bool)
        for v in range(asset.num_views):
            view = asset.view(t, v)
            visible[view.pixel_to_point[view.silhouette]] = True
        labels = np.where(visible, frame.part_labels, k).astype(np.uint16)
        fields.append(
            LabelField(
                frame_index=t,
                labels=labels,
                scores=np.zeros(frame.point_count, dtype=np.float32),
                num_classes=k,
            )
        )
    return fields


def _expected_proposal_counts(track_set: TrackSet, asset: SequenceAsset, config: dict) -> list[int]:
    """Per-frame proposal count after the validation pass the config asks for."""
    ts = track_set
    if config["validation"]["enabled"]:
        ts = validate_and_augment(
            track_set,
            asset,
            ValidationConfig(
                connectivity=config["validation"]["connectivity"],
                min_component_area_px=config["validation"]["min_component_area_px"],
            ),
        )
    counts = []
    for t in range(asset.num_frames):
        n = 0
        for track in ts.tracks:
            for v in range(asset.num_views):
                mask = track.cells.get((t, v))
                if mask is not None and mask.any():
                    n += 1
        counts.append(n)
    return counts


def generate_scenario(name: str, out_dir) -> dict:
    """Write a complete scenario directory; returns its metadata dictionary."""
    from pathlib import Path

    if name not in _BUILDERS:
        raise KeyError(f"unknown scenario {name!r}; available: {SCENARIO_NAMES}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    recipe = _BUILDERS[name]()
    splat = SplatConfig(
        splat_radius_px=recipe.config["splat"]["radius_px"],
        depth_epsilon=recipe.config["splat"]["depth_epsilon"],
    )

    manifest_path = save_sequence(
        recipe.frames, recipe.cameras, out, part_names=recipe.part_names
    )
    asset = load_sequence(manifest_path, splat_config=splat)

    # Independent silhouette truth, then a generator self-check against the
    # rendered views: a scenario that disagrees with its own oracle is a bug.
    sil_cells = []
    for t in range(asset.num_frames):
        for v in range(asset.num_views):
            sil = brute_force_silhouette(
                asset.frames[t], asset.cameras[v], splat.splat_radius_px
            )
            if not np.array_equal(sil, asset.view(t, v).silhouette):
                raise AssertionError(
                    f"scenario {name}: silhouette oracle mismatch at cell ({t}, {v})"
                )
            sil_cells.append({"t": t, "v": v, "rle": rle_encode(sil)})
    h, w = asset.resolution
    with open(out / "gt_silhouettes.json", "w") as fh:
        json.dump(
            {
                "T": asset.num_frames,
                "V": asset.num_views,
                "H": h,
                "W": w,
                "cells": sil_cells,
            },
            fh,
        )
        fh.write("\n")

    # Tracks: synthetic per-part coverage for the plate scenes driven from
    # files, the first-frame oracle everywhere else.
    if name == "flip":
        track_set = _synthetic_plate_tracks(asset, splat)
    elif name == "lost":
        track_set = oracle_track_set(
            asset,
            granularity=1,
            lose_cells={
                recipe.extras["lose_track_id"]: {tuple(recipe.extras["lose_cell"])}
            },
            splat_config=splat,
        )
    else:
        track_set = oracle_track_set(asset, granularity=1, splat_config=splat)
    export_tracks(track_set, out / "tracks.json")

    # Stub embeddings for every non-empty initial cell; the flip scenario
    # overwrites one record with the other part's vector for that cell.
    track_names = _track_part_names(track_set, asset)
    vectors = {}
    for track in track_set.tracks:
        pname = track_names[track.track_id]
        for (t, v), mask in track.cells.items():
            if mask.any():
                vectors[(track.track_id, t, v)] = cell_vector(pname, t, v, EMBED_DIM)
    if name == "flip":
        ft, fv = recipe.extras["flip_cell"]
        vectors[(recipe.extras["flip_track_id"], ft, fv)] = cell_vector(
            recipe.extras["flip_to"], ft, fv, EMBED_DIM
        )
    write_embedding_file(out / "embeddings.bin", vectors, EMBED_DIM)

    write_vocab_file(
        out / "vocab.bin",
        {pname: class_vector(pname, EMBED_DIM) for pname in recipe.part_names},
        EMBED_DIM,
    )

    gt_fields = _ground_truth_labels(asset)
    write_label_file(out / "gt_labels.bin", gt_fields, recipe.part_names)

    with open(out / "config.json", "w") as fh:
        json.dump(recipe.config, fh, indent=2, sort_keys=True)
        fh.write("\n")

    meta = {
        "scenario": name,
        "part_names": recipe.part_names,
        "no_label_index": len(recipe.part_names),
        "num_frames": asset.num_frames,
        "num_views": asset.num_views,
        "resolution": [h, w],
        "point_counts": [f.point_count for f in asset.frames],
        "embedding_dim": EMBED_DIM,
        "expected_proposals_per_frame": _expected_proposal_counts(
            track_set, asset, recipe.config
        ),
        "files": {
            "manifest": "manifest.json",
            "config": "config.json",
            "tracks": "tracks.json",
            "embeddings": "embeddings.bin",
            "vocab": "vocab.bin",
            "gt_labels": "gt_labels.bin",
            "gt_silhouettes": "gt_silhouettes.json",
        },
    }
    meta.update(recipe.extras)
    with open(out / "fixture.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return meta
