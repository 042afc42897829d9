"""Z-buffer point-splat renderer.

Each point is projected through the pinhole model and stamped as a filled
disk of configurable pixel radius; per pixel the nearest point wins and its
index is recorded in pixel_to_point. Image convention: row 0 is the top,
col 0 is the left, pixel centers sit at integer coordinates, and a projected
point lands in the nearest integer pixel (half rounds toward +infinity).

Depth ties closer than 1e-9 world units resolve to the lower point index so
rendering is bit-deterministic regardless of evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import BehindCameraError, SceneValidationError
from .instrumentation import counters
from .scene import Camera, PointCloudFrame, RenderedView

# Depth quantum for the deterministic tie-break.
_TIE_QUANTUM = 1e-9
# Point indices are packed into the low bits of the z-buffer key.
_INDEX_BITS = 20
_INDEX_MASK = (1 << _INDEX_BITS) - 1
_EMPTY_KEY = np.int64(np.iinfo(np.int64).max)


@dataclass
class SplatConfig:
    """Disk radius in pixels and the depth tolerance for visibility checks."""

    splat_radius_px: int = 2
    depth_epsilon: float = 1e-4

    def validate(self) -> None:
        if self.splat_radius_px < 0:
            raise SceneValidationError("splat_radius_px must be >= 0")
        if self.depth_epsilon <= 0:
            raise SceneValidationError("depth_epsilon must be > 0")


@lru_cache(maxsize=None)
def disk_offsets(radius: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/col offsets of the filled Euclidean disk with the given pixel radius."""
    span = np.arange(-radius, radius + 1)
    dr, dc = np.meshgrid(span, span, indexing="ij")
    keep = dr * dr + dc * dc <= radius * radius
    return dr[keep].copy(), dc[keep].copy()


def project_point(camera: Camera, point: np.ndarray) -> tuple[tuple[float, float], float]:
    """Project a single world point.

    Returns ((row, col), depth) in pixel coordinates and camera-space depth.
    Raises BehindCameraError when the point has non-positive depth.
    """
    p_cam = camera.rotation @ np.asarray(point, dtype=np.float64) + camera.translation
    z = float(p_cam[2])
    if z <= 0.0:
        raise BehindCameraError(f"point projects behind camera (z_cam={z:.6g})")
    col = camera.principal[0] + camera.focal[0] * float(p_cam[0]) / z
    row = camera.principal[1] + camera.focal[1] * float(p_cam[1]) / z
    return (row, col), z


def project_points(camera: Camera, points: np.ndarray):
    """Vectorized projection of (P, 3) world points.

    Returns (rows, cols, depths, in_front) where in_front flags points with
    positive camera-space depth; rows/cols are only meaningful there.
    """
    pts = np.asarray(points, dtype=np.float64)
    p_cam = pts @ camera.rotation.T + camera.translation
    z = p_cam[:, 2]
    in_front = z > 0.0
    safe_z = np.where(in_front, z, 1.0)
    cols = camera.principal[0] + camera.focal[0] * p_cam[:, 0] / safe_z
    rows = camera.principal[1] + camera.focal[1] * p_cam[:, 1] / safe_z
    return rows, cols, z, in_front


def _center_pixels(rows: np.ndarray, cols: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Nearest integer pixel, half rounding up; matches the ingestion raster format.
    return np.floor(rows + 0.5).astype(np.int64), np.floor(cols + 0.5).astype(np.int64)


def render_view(frame: PointCloudFrame, camera: Camera, config: SplatConfig) -> RenderedView:
    """Render one frame from one camera into a RenderedView.

    Points behind the camera or whose center pixel falls off the image are
    skipped; disks of on-image points are clipped at the image border.
    """
    config.validate()
    counters.increment("render")
    h, w = camera.resolution
    n = frame.point_count
    if n >= (1 << _INDEX_BITS):
        raise SceneValidationError(f"frame has {n} points; renderer supports < {1 << _INDEX_BITS}")

    rows, cols, z, in_front = project_points(camera, frame.points)
    ir, ic = _center_pixels(rows, cols)
    keep = in_front & (ir >= 0) & (ir < h) & (ic >= 0) & (ic < w)
    kept_idx = np.nonzero(keep)[0]

    key_buf = np.full(h * w, _EMPTY_KEY, dtype=np.int64)
    if kept_idx.size:
        zk = z[kept_idx]
        bucket = np.round(zk / _TIE_QUANTUM).astype(np.int64)
        if bucket.max(initial=0) >= (1 << (63 - _INDEX_BITS)):
            raise SceneValidationError("point depth too large for the z-buffer key")
        keys = (bucket << _INDEX_BITS) | kept_idx.astype(np.int64)
        pr, pc = ir[kept_idx], ic[kept_idx]
        dr, dc = disk_offsets(config.splat_radius_px)
        for k in range(dr.size):
            rr = pr + dr[k]
            cc = pc + dc[k]
            ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
            np.minimum.at(key_buf, rr[ok] * w + cc[ok], keys[ok])

    covered = key_buf != _EMPTY_KEY
    winner = np.where(covered, key_buf & _INDEX_MASK, -1).astype(np.int32)

    silhouette = covered.reshape(h, w)
    pixel_to_point = winner.reshape(h, w)
    depth = np.full(h * w, np.inf, dtype=np.float32)
    image = np.zeros((h * w, 3), dtype=np.float32)
    if covered.any():
        won = winner[covered]
        depth[covered] = z[won].astype(np.float32)
        image[covered] = frame.colors[won]

    return RenderedView(
        frame_index=frame.frame_index,
        view_index=camera.view_index,
        image=image.reshape(h, w, 3),
        silhouette=silhouette,
        depth=depth.reshape(h, w),
        pixel_to_point=pixel_to_point,
    )


def splat_coverage(points: np.ndarray, camera: Camera, config: SplatConfig) -> np.ndarray:
    """Pixels covered by any splat of the given points (no depth test).

    This is the footprint used when a mask is carried to another cell: the
    silhouette the points would produce, ignoring occlusion by other points.
    """
    config.validate()
    counters.increment("render")
    h, w = camera.resolution
    mask = np.zeros((h, w), dtype=bool)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        return mask
    rows, cols, _, in_front = project_points(camera, pts)
    ir, ic = _center_pixels(rows, cols)
    keep = in_front & (ir >= 0) & (ir < h) & (ic >= 0) & (ic < w)
    pr, pc = ir[keep], ic[keep]
    dr, dc = disk_offsets(config.splat_radius_px)
    for k in range(dr.size):
        rr = pr + dr[k]
        cc = pc + dc[k]
        ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        mask[rr[ok], cc[ok]] = True
    return mask


def dump_png(path, image: np.ndarray) -> None:
    """Debug dump of an RGB float image or a boolean mask as an 8-bit PNG."""
    from PIL import Image

    if image.dtype == bool:
        arr = (image.astype(np.uint8)) * 255
    else:
        arr = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)
