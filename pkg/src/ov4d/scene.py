"""4D scene data model: point-cloud frames, cameras, rendered views, sequence IO.

A sequence lives on disk as a JSON manifest plus one PLY file per frame.
Frame and view indices are 0-based everywhere in code and in files. All
arrays are frozen (read-only) once a SequenceAsset is built, so the asset
is safe to share across parallel pipeline stages.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LoadError, SceneValidationError

ROTATION_TOL = 1e-6


@dataclass
class PointCloudFrame:
    """One frame of the sequence: positions in meters, colors in [0, 1].

    point_ids and part_labels are only present for synthetic fixtures with
    known cross-frame correspondences; real captures leave them as None.
    """

    frame_index: int
    points: np.ndarray          # (P, 3) float32, world units
    colors: np.ndarray          # (P, 3) float32 in [0, 1]
    point_ids: np.ndarray | None = None     # (P,) int64, unique within the frame
    part_labels: np.ndarray | None = None   # (P,) int32, fixture part per point

    @property
    def point_count(self) -> int:
        return int(self.points.shape[0])

    def validate(self) -> None:
        p = self.point_count
        if p == 0:
            raise SceneValidationError(f"frame {self.frame_index}: empty point cloud")
        if self.points.shape != (p, 3):
            raise SceneValidationError(f"frame {self.frame_index}: points must be (P, 3)")
        if self.colors.shape != (p, 3):
            raise SceneValidationError(
                f"frame {self.frame_index}: colors length {self.colors.shape} != points length {p}"
            )
        if np.any(self.colors < 0.0) or np.any(self.colors > 1.0):
            raise SceneValidationError(f"frame {self.frame_index}: colors outside [0, 1]")
        if self.point_ids is not None:
            if self.point_ids.shape != (p,):
                raise SceneValidationError(f"frame {self.frame_index}: point_ids length mismatch")
            if len(np.unique(self.point_ids)) != p:
                raise SceneValidationError(f"frame {self.frame_index}: point_ids not unique")
        if self.part_labels is not None and self.part_labels.shape != (p,):
            raise SceneValidationError(f"frame {self.frame_index}: part_labels length mismatch")

    def freeze(self) -> None:
        for arr in (self.points, self.colors, self.point_ids, self.part_labels):
            if arr is not None:
                arr.flags.writeable = False


@dataclass
class Camera:
    """Pinhole camera with a rigid world-to-camera transform."""

    view_index: int
    focal: tuple[float, float]        # (fx, fy) pixels
    principal: tuple[float, float]    # (cx, cy) pixels
    rotation: np.ndarray              # (3, 3) float64, world -> camera
    translation: np.ndarray           # (3,) float64
    resolution: tuple[int, int]       # (H, W)

    def validate(self) -> None:
        fx, fy = self.focal
        if fx <= 0 or fy <= 0:
            raise SceneValidationError(f"camera {self.view_index}: non-positive focal length")
        h, w = self.resolution
        cx, cy = self.principal
        if not (0 < cx < w and 0 < cy < h):
            raise SceneValidationError(f"camera {self.view_index}: principal point outside image")
        r = self.rotation
        if r.shape != (3, 3):
            raise SceneValidationError(f"camera {self.view_index}: rotation must be 3x3")
        if np.max(np.abs(r @ r.T - np.eye(3))) > ROTATION_TOL:
            raise SceneValidationError(f"camera {self.view_index}: rotation not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ROTATION_TOL:
            raise SceneValidationError(f"camera {self.view_index}: rotation determinant != +1")

    def freeze(self) -> None:
        self.rotation.flags.writeable = False
        self.translation.flags.writeable = False


# Sentinels for background pixels.
DEPTH_BACKGROUND = np.float32(np.inf)
POINT_BACKGROUND = np.int32(-1)


@dataclass
class RenderedView:
    """Rendering of one (frame, view) cell with its visibility bookkeeping."""

    frame_index: int
    view_index: int
    image: np.ndarray           # (H, W, 3) float32 RGB
    silhouette: np.ndarray      # (H, W) bool, foreground coverage
    depth: np.ndarray           # (H, W) float32, inf on background
    pixel_to_point: np.ndarray  # (H, W) int32, frontmost point index, -1 on background

    @property
    def resolution(self) -> tuple[int, int]:
        return self.silhouette.shape  # type: ignore[return-value]

    def validate(self, point_count: int) -> None:
        fg = self.silhouette
        if not np.array_equal(fg, self.pixel_to_point >= 0):
            raise SceneValidationError("silhouette disagrees with pixel_to_point coverage")
        if not np.array_equal(fg, np.isfinite(self.depth)):
            raise SceneValidationError("silhouette disagrees with depth coverage")
        if fg.any():
            idx = self.pixel_to_point[fg]
            if idx.max(initial=-1) >= point_count:
                raise SceneValidationError("pixel_to_point references out-of-range point index")
        if np.any(self.depth[fg] < 0):
            raise SceneValidationError("negative depth recorded for a foreground pixel")

    def freeze(self) -> None:
        for arr in (self.image, self.silhouette, self.depth, self.pixel_to_point):
            arr.flags.writeable = False


@dataclass
class SequenceAsset:
    """The loaded 4D scene: T frames, V cameras, and the full T x V render grid."""

    frames: list[PointCloudFrame]
    cameras: list[Camera]
    rendered: list[list[RenderedView]] = field(default_factory=list)  # [t][v]
    part_names: list[str] | None = None

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    @property
    def num_views(self) -> int:
        return len(self.cameras)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.cameras[0].resolution

    def view(self, t: int, v: int) -> RenderedView:
        return self.rendered[t][v]

    def is_fixture(self) -> bool:
        return self.part_names is not None and all(
            f.point_ids is not None and f.part_labels is not None for f in self.frames
        )

    def validate(self) -> None:
        if not self.frames:
            raise SceneValidationError("sequence has no frames")
        if not self.cameras:
            raise SceneValidationError("sequence has no cameras")
        for t, frame in enumerate(self.frames):
            if frame.frame_index != t:
                raise SceneValidationError(f"frame indices not contiguous at {t}")
            frame.validate()
        res = self.cameras[0].resolution
        for v, cam in enumerate(self.cameras):
            if cam.view_index != v:
                raise SceneValidationError(f"view indices not contiguous at {v}")
            if cam.resolution != res:
                raise SceneValidationError("cameras disagree on resolution")
            cam.validate()
        if len(self.rendered) != self.num_frames or any(
            len(row) != self.num_views for row in self.rendered
        ):
            raise SceneValidationError("render grid is not T x V")
        for t, row in enumerate(self.rendered):
            for v, rv in enumerate(row):
                if rv.resolution != res:
                    raise SceneValidationError(f"rendered cell ({t}, {v}) resolution mismatch")
                rv.validate(self.frames[t].point_count)

    def freeze(self) -> None:
        for frame in self.frames:
            frame.freeze()
        for cam in self.cameras:
            cam.freeze()
        for row in self.rendered:
            for rv in row:
                rv.freeze()


# ---------------------------------------------------------------------------
# PLY IO
#
# Frames are stored with float x,y,z and uchar red,green,blue; fixtures add
# uint point_id and uchar part. Colors are 8-bit in files and [0, 1] floats
# in memory.

_PLY_TYPES = {
    "float": ("<f4", 4), "float32": ("<f4", 4),
    "double": ("<f8", 8), "float64": ("<f8", 8),
    "uchar": ("<u1", 1), "uint8": ("<u1", 1),
    "char": ("<i1", 1), "int8": ("<i1", 1),
    "ushort": ("<u2", 2), "uint16": ("<u2", 2),
    "short": ("<i2", 2), "int16": ("<i2", 2),
    "uint": ("<u4", 4), "uint32": ("<u4", 4),
    "int": ("<i4", 4), "int32": ("<i4", 4),
}


def write_ply(path: Path | str, frame: PointCloudFrame, binary: bool = True) -> None:
    path = Path(path)
    p = frame.point_count
    colors_u8 = np.clip(np.rint(frame.colors * 255.0), 0, 255).astype(np.uint8)
    props = [("x", "float"), ("y", "float"), ("z", "float"),
             ("red", "uchar"), ("green", "uchar"), ("blue", "uchar")]
    if frame.point_ids is not None:
        props.append(("point_id", "uint"))
    if frame.part_labels is not None:
        props.append(("part", "uchar"))

    header = ["ply",
              "format binary_little_endian 1.0" if binary else "format ascii 1.0",
              f"element vertex {p}"]
    header += [f"property {ptype} {name}" for name, ptype in props]
    header.append("end_header")

    points32 = frame.points.astype(np.float32, copy=False)
    columns: list[np.ndarray] = [points32[:, 0], points32[:, 1], points32[:, 2],
                                 colors_u8[:, 0], colors_u8[:, 1], colors_u8[:, 2]]
    if frame.point_ids is not None:
        columns.append(frame.point_ids.astype(np.uint32))
    if frame.part_labels is not None:
        columns.append(frame.part_labels.astype(np.uint8))

    with path.open("wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            rec = np.empty(p, dtype=[(name, _PLY_TYPES[ptype][0]) for name, ptype in props])
            for (name, _), col in zip(props, columns):
                rec[name] = col
            f.write(rec.tobytes())
        else:
            for i in range(p):
                fields = []
                for (name, ptype), col in zip(props, columns):
                    if ptype == "float":
                        fields.append(np.format_float_positional(np.float32(col[i]), unique=True))
                    else:
                        fields.append(str(int(col[i])))
                f.write((" ".join(fields) + "\n").encode("ascii"))


def read_ply(path: Path | str, frame_index: int = 0) -> PointCloudFrame:
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"point cloud file not found: {path}")
    with path.open("rb") as f:
        data = f.read()

    end = data.find(b"end_header")
    if end < 0:
        raise LoadError(f"{path}: not a PLY file (no end_header)")
    header_bytes = data[:end]
    body = data[data.find(b"\n", end) + 1:]

    fmt = None
    count = 0
    props: list[tuple[str, str]] = []
    for raw in header_bytes.decode("ascii", errors="replace").splitlines():
        tokens = raw.strip().split()
        if not tokens:
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            if tokens[1] != "vertex":
                raise LoadError(f"{path}: unsupported element '{tokens[1]}'")
            count = int(tokens[2])
        elif tokens[0] == "property":
            if tokens[1] == "list":
                raise LoadError(f"{path}: list properties not supported")
            props.append((tokens[2], tokens[1]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise LoadError(f"{path}: unsupported PLY format '{fmt}'")

    if fmt == "ascii":
        text = body.decode("ascii")
        rows = [line.split() for line in text.splitlines() if line.strip()]
        if len(rows) < count:
            raise LoadError(f"{path}: expected {count} vertices, found {len(rows)}")
        table = {name: np.empty(count) for name, _ in props}
        for i in range(count):
            for j, (name, _) in enumerate(props):
                table[name][i] = float(rows[i][j])
    else:
        dtype = np.dtype([(name, _PLY_TYPES[ptype][0]) for name, ptype in props])
        needed = dtype.itemsize * count
        if len(body) < needed:
            raise LoadError(f"{path}: truncated binary body")
        rec = np.frombuffer(body[:needed], dtype=dtype)
        table = {name: rec[name] for name, _ in props}

    for axis in ("x", "y", "z"):
        if axis not in table:
            raise LoadError(f"{path}: missing '{axis}' property")
    points = np.stack(
        [np.asarray(table["x"]), np.asarray(table["y"]), np.asarray(table["z"])], axis=1
    ).astype(np.float32)
    if all(c in table for c in ("red", "green", "blue")):
        colors = np.stack(
            [np.asarray(table["red"]), np.asarray(table["green"]), np.asarray(table["blue"])],
            axis=1,
        ).astype(np.float32) / 255.0
    else:
        colors = np.full((count, 3), 0.5, dtype=np.float32)
    point_ids = np.asarray(table["point_id"]).astype(np.int64) if "point_id" in table else None
    part_labels = np.asarray(table["part"]).astype(np.int32) if "part" in table else None

    frame = PointCloudFrame(frame_index, points, colors, point_ids, part_labels)
    frame.validate()
    return frame


# ---------------------------------------------------------------------------
# Manifest IO
#
# Manifest schema:
#   {
#     "frames": ["frames/frame_000.ply", ...],          # relative to manifest
#     "cameras": [{"focal": [fx, fy], "principal": [cx, cy],
#                  "rotation": [9 floats, row-major], "translation": [3],
#                  "resolution": [H, W]}, ...],
#     "part_names": ["part_a", ...]                      # fixtures only
#   }


def _camera_from_dict(v: int, entry: dict) -> Camera:
    return Camera(
        view_index=v,
        focal=(float(entry["focal"][0]), float(entry["focal"][1])),
        principal=(float(entry["principal"][0]), float(entry["principal"][1])),
        rotation=np.asarray(entry["rotation"], dtype=np.float64).reshape(3, 3),
        translation=np.asarray(entry["translation"], dtype=np.float64).reshape(3),
        resolution=(int(entry["resolution"][0]), int(entry["resolution"][1])),
    )


def _camera_to_dict(cam: Camera) -> dict:
    return {
        "focal": [cam.focal[0], cam.focal[1]],
        "principal": [cam.principal[0], cam.principal[1]],
        "rotation": [float(x) for x in cam.rotation.reshape(-1)],
        "translation": [float(x) for x in cam.translation],
        "resolution": [cam.resolution[0], cam.resolution[1]],
    }


def read_manifest(manifest_path: Path | str) -> dict:
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise LoadError(f"manifest not found: {manifest_path}")
    try:
        return json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise LoadError(f"manifest is not valid JSON: {manifest_path}: {exc}") from exc


def load_sequence(manifest_path: Path | str, splat_config=None) -> SequenceAsset:
    """Load a sequence and render the full T x V grid.

    Raises LoadError for missing files and SceneValidationError for data
    that violates scene invariants.
    """
    from .render import SplatConfig, render_view  # local import to avoid a cycle

    manifest_path = Path(manifest_path)
    doc = read_manifest(manifest_path)
    base = manifest_path.parent

    frame_paths = doc.get("frames", [])
    camera_docs = doc.get("cameras", [])
    if not frame_paths:
        raise SceneValidationError(f"{manifest_path}: manifest lists no frames")
    if not camera_docs:
        raise SceneValidationError(f"{manifest_path}: manifest lists no cameras")

    frames = [read_ply(base / rel, frame_index=t) for t, rel in enumerate(frame_paths)]
    cameras = [_camera_from_dict(v, entry) for v, entry in enumerate(camera_docs)]

    config = splat_config if splat_config is not None else SplatConfig()
    rendered = [[render_view(frame, cam, config) for cam in cameras] for frame in frames]

    asset = SequenceAsset(
        frames=frames,
        cameras=cameras,
        rendered=rendered,
        part_names=list(doc["part_names"]) if "part_names" in doc else None,
    )
    asset.validate()
    asset.freeze()
    return asset


def save_sequence(
    frames: list[PointCloudFrame],
    cameras: list[Camera],
    out_dir: Path | str,
    part_names: list[str] | None = None,
    binary: bool = True,
) -> Path:
    """Write frames and a manifest under out_dir; returns the manifest path."""
    out_dir = Path(out_dir)
    frame_dir = out_dir / "frames"
    frame_dir.mkdir(parents=True, exist_ok=True)
    rels = []
    for frame in frames:
        rel = f"frames/frame_{frame.frame_index:03d}.ply"
        write_ply(out_dir / rel, frame, binary=binary)
        rels.append(rel)
    doc = {"frames": rels, "cameras": [_camera_to_dict(c) for c in cameras]}
    if part_names is not None:
        doc["part_names"] = list(part_names)
    manifest = out_dir / "manifest.json"
    manifest.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return manifest
