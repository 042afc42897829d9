"""Coverage validation: find silhouette regions no track mask explains and
augment the track set with one new per-cell mask per connected component.

Tracking models cannot mask regions unseen in the first cell and sometimes
drop a target mid-sequence; both failure modes leave silhouette pixels
uncovered. Augmented masks restore exact coverage and are later embedded
individually, since no cross-cell correspondence exists for them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import SceneValidationError, TrackFormatError
from .instrumentation import counters
from .scene import SequenceAsset
from .tracks import ORIGIN_AUGMENT, MaskTrack, TrackSet

# Area scaling anchor: 16 px minimum at 512 x 512.
_AREA_DENOMINATOR = 16384

_STRUCTURES = {
    "four": np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool),
    "eight": np.ones((3, 3), dtype=bool),
}


def default_min_component_area(resolution: tuple[int, int]) -> int:
    h, w = resolution
    return (h * w) // _AREA_DENOMINATOR


@dataclass
class ValidationConfig:
    """Connectivity for component splitting and the speckle-noise area floor.

    min_component_area_px=None scales the 512x512 default of 16 px to the
    working resolution; pass 0 to keep every component.
    """

    connectivity: str = "eight"
    min_component_area_px: int | None = None

    def validate(self) -> None:
        if self.connectivity not in _STRUCTURES:
            raise SceneValidationError("connectivity must be 'four' or 'eight'")
        if self.min_component_area_px is not None and self.min_component_area_px < 0:
            raise SceneValidationError("min_component_area_px must be >= 0")

    def min_area_for(self, resolution: tuple[int, int]) -> int:
        if self.min_component_area_px is None:
            return default_min_component_area(resolution)
        return self.min_component_area_px


def coverage_union(masks: list[np.ndarray], resolution: tuple[int, int] | None = None) -> np.ndarray:
    """Bitwise OR of masks; the all-zero mask for an empty list."""
    if not masks:
        if resolution is None:
            raise TrackFormatError("coverage_union of an empty list needs a resolution")
        return np.zeros(resolution, dtype=bool)
    shape = masks[0].shape
    out = np.zeros(shape, dtype=bool)
    for m in masks:
        if m.shape != shape:
            raise TrackFormatError(f"mask resolution {m.shape} != {shape} in union")
        out |= m
    return out


def uncovered_region(silhouette: np.ndarray, union: np.ndarray) -> np.ndarray:
    """Silhouette pixels not explained by the union: silhouette AND NOT union."""
    if silhouette.shape != union.shape:
        raise TrackFormatError(
            f"silhouette {silhouette.shape} and union {union.shape} differ in resolution"
        )
    return silhouette & ~union


def connected_components(mask: np.ndarray, config: ValidationConfig) -> list[np.ndarray]:
    """Split a mask into maximal connected regions, ordered by first scan pixel.

    Components smaller than the configured area floor are dropped.
    """
    config.validate()
    labeled, count = ndimage.label(mask, structure=_STRUCTURES[config.connectivity])
    if count == 0:
        return []
    min_area = config.min_area_for(mask.shape)
    areas = np.bincount(labeled.reshape(-1), minlength=count + 1)
    # scipy labels in scan order, so label order is first-pixel order already
    return [labeled == lab for lab in range(1, count + 1) if areas[lab] >= min_area]


def validate_and_augment(
    track_set: TrackSet,
    asset: SequenceAsset,
    config: ValidationConfig,
) -> TrackSet:
    """Append one augment track per surviving uncovered component per cell.

    Input tracks are reused untouched; the returned set extends them with
    single-cell augment tracks ordered by (t, v, component).
    """
    config.validate()
    counters.increment("validate")
    if track_set.resolution != asset.resolution:
        raise TrackFormatError(
            f"track resolution {track_set.resolution} != asset {asset.resolution}"
        )

    new_tracks = list(track_set.tracks)
    next_id = track_set.next_track_id()
    for t in range(asset.num_frames):
        for v in range(asset.num_views):
            cell_masks = [
                tr.cells[(t, v)]
                for tr in track_set.tracks
                if (t, v) in tr.cells
            ]
            union = coverage_union(cell_masks, asset.resolution)
            missing = uncovered_region(asset.view(t, v).silhouette, union)
            if not missing.any():
                continue
            for component in connected_components(missing, config):
                new_tracks.append(
                    MaskTrack(
                        track_id=next_id,
                        origin=ORIGIN_AUGMENT,
                        cells={(t, v): component},
                    )
                )
                next_id += 1

    out = TrackSet(
        tracks=new_tracks,
        num_frames=track_set.num_frames,
        num_views=track_set.num_views,
        resolution=track_set.resolution,
    )
    out.validate()
    return out
