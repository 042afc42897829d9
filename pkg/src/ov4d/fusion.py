"""Per-track memory banks, memory attention, 2D->3D unprojection, and
per-frame assembly of (masks, embeddings) proposal sets.

Each track owns a bank of per-cell mask embeddings ordered frame-major then
view. Memory attention re-expresses every row as a similarity-weighted convex
combination of all rows of the same track, which pulls outlier rows (identity
flips) toward the consistent cluster without touching other tracks.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import AssetFormatError, MissingEmbeddingError, TrackFormatError
from .instrumentation import counters
from .scene import RenderedView, SequenceAsset
from .stub_vectors import cell_vector, content_vector
from .tracks import MaskTrack, TrackSet

EMBEDDING_MAGIC = b"OV4DEMB\x00"

_UNIT_NORM_TOL = 1e-5


@dataclass(frozen=True)
class MaskEmbedding:
    """One embedding vector tagged with the (track, frame, view) it came from."""

    vector: np.ndarray
    track_id: int
    frame_index: int
    view_index: int

    def validate(self) -> None:
        norm = float(np.linalg.norm(self.vector))
        if abs(norm - 1.0) > _UNIT_NORM_TOL:
            raise AssetFormatError(
                f"embedding for track {self.track_id} cell "
                f"({self.frame_index}, {self.view_index}) has norm {norm:.6f}, expected 1"
            )


@dataclass
class MemoryBank:
    """All cell embeddings of one track, rows ordered frame-major then view."""

    track_id: int
    cells: list[tuple[int, int]]
    matrix: np.ndarray  # (len(cells), D) float32, rows unit-norm

    @property
    def num_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class Mask3D:
    """Point-index form of a 2D mask after unprojection through one view."""

    frame_index: int
    point_indices: np.ndarray  # sorted unique int64
    track_id: int


@dataclass
class FrameProposalSet:
    """Everything the classifier needs for one frame: L masks + L embeddings."""

    frame_index: int
    point_count: int
    masks: list[Mask3D]
    embeddings: np.ndarray  # (L, D) float32

    def __post_init__(self) -> None:
        if len(self.masks) != self.embeddings.shape[0]:
            raise AssetFormatError(
                f"frame {self.frame_index}: {len(self.masks)} masks but "
                f"{self.embeddings.shape[0]} embedding rows"
            )

    @property
    def num_proposals(self) -> int:
        return len(self.masks)

    def mask_matrix(self) -> np.ndarray:
        """Dense point-membership matrix, shape (point_count, L), boolean."""
        mat = np.zeros((self.point_count, self.num_proposals), dtype=bool)
        for col, mask in enumerate(self.masks):
            mat[mask.point_indices, col] = True
        return mat


def _normalize(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise AssetFormatError("cannot normalize a zero embedding vector")
    return (np.asarray(vec, dtype=np.float64) / norm).astype(np.float32)


class StubEmbeddingProvider:
    """Reproducible mask embeddings derived from scene part labels.

    Masks over the same part cluster around that part's centroid vector with
    small per-cell noise, standing in for a frozen vision encoder. Requires a
    fixture asset that carries per-point part labels.
    """

    mode = "deterministic_stub"

    def __init__(self, asset: SequenceAsset, dim: int = 8, noise_scale: float = 0.03):
        if not asset.is_fixture():
            raise AssetFormatError(
                "stub embeddings need per-point part labels; "
                "use an embedding file for unlabeled scenes"
            )
        self.asset = asset
        self.dim = dim
        self.noise_scale = noise_scale

    def has(self, track_id: int, t: int, v: int) -> bool:
        return False

    def embed(self, view: RenderedView, mask: np.ndarray, track_id: int) -> np.ndarray:
        t, v = view.frame_index, view.view_index
        visible = mask & view.silhouette
        if visible.any():
            ids = view.pixel_to_point[visible]
            parts = self.asset.frames[t].part_labels[ids]
            dominant = int(np.bincount(parts).argmax())
            name = self.asset.part_names[dominant]
            return cell_vector(name, t, v, self.dim, noise_scale=self.noise_scale)
        # Mask over pure background: no part identity to anchor to, fall back
        # to a vector derived from the mask content itself.
        digest = hashlib.sha256(np.packbits(mask).tobytes()).hexdigest()[:16]
        return content_vector(f"background|{t}|{v}|{digest}", self.dim)


class FileEmbeddingProvider:
    """Embeddings ingested from a binary file keyed by (track_id, t, v)."""

    mode = "ingest_file"

    def __init__(self, path):
        self.path = str(path)
        self.vectors, self.dim = read_embedding_file(path)

    def has(self, track_id: int, t: int, v: int) -> bool:
        return (track_id, t, v) in self.vectors

    def embed(self, view: RenderedView, mask: np.ndarray, track_id: int) -> np.ndarray:
        key = (track_id, view.frame_index, view.view_index)
        try:
            return self.vectors[key]
        except KeyError:
            raise MissingEmbeddingError(
                f"no embedding for track {key[0]} cell ({key[1]}, {key[2]}) "
                f"in {self.path}"
            ) from None


def embed_mask(provider, view: RenderedView, mask: np.ndarray, track_id: int) -> MaskEmbedding:
    """Produce the unit-norm embedding of one mask at one cell."""
    if mask.shape != view.silhouette.shape:
        raise TrackFormatError(
            f"mask resolution {mask.shape} != view {view.silhouette.shape}"
        )
    counters.increment("embed")
    vec = _normalize(provider.embed(view, mask, track_id))
    emb = MaskEmbedding(
        vector=vec,
        track_id=track_id,
        frame_index=view.frame_index,
        view_index=view.view_index,
    )
    emb.validate()
    return emb


def build_memory_bank(
    track: MaskTrack,
    asset: SequenceAsset,
    provider,
) -> MemoryBank:
    """Collect the track's cell embeddings into one frame-major matrix.

    Non-empty cells must embed (a missing file key is an error there). Empty
    or absent cells contribute a row only when the provider has a stored
    vector for them; the stub never does, so fixture banks shrink to the
    track's non-empty cells.
    """
    cells: list[tuple[int, int]] = []
    rows: list[np.ndarray] = []
    for t in range(asset.num_frames):
        for v in range(asset.num_views):
            mask = track.cells.get((t, v))
            nonempty = mask is not None and bool(mask.any())
            if not nonempty and not provider.has(track.track_id, t, v):
                continue
            if mask is None:
                mask = np.zeros(asset.resolution, dtype=bool)
            emb = embed_mask(provider, asset.view(t, v), mask, track.track_id)
            cells.append((t, v))
            rows.append(emb.vector)
    if rows:
        matrix = np.stack(rows).astype(np.float32)
    else:
        matrix = np.zeros((0, provider.dim), dtype=np.float32)
    return MemoryBank(track_id=track.track_id, cells=cells, matrix=matrix)


def memory_attention(bank: MemoryBank) -> np.ndarray:
    """Update every bank row to softmax(Q Q^T) Q, computed row-stably.

    Raw dot products (unit-norm rows make them cosines), no temperature, and
    no re-normalization of the output rows.
    """
    if bank.num_rows == 0:
        raise AssetFormatError(f"memory bank for track {bank.track_id} is empty")
    q = bank.matrix.astype(np.float64)
    gram = q @ q.T
    gram -= gram.max(axis=1, keepdims=True)
    weights = np.exp(gram)
    weights /= weights.sum(axis=1, keepdims=True)
    return (weights @ q).astype(np.float32)


FUSION_STRATEGIES = ("individual", "average", "attention")


def fuse_track_embeddings(bank: MemoryBank, strategy: str) -> dict[tuple[int, int], np.ndarray]:
    """Map each bank cell to its fused embedding under the chosen strategy."""
    if strategy not in FUSION_STRATEGIES:
        raise AssetFormatError(
            f"unknown fusion strategy {strategy!r}; expected one of {FUSION_STRATEGIES}"
        )
    counters.increment("fuse")
    if bank.num_rows == 0:
        return {}
    if strategy == "individual":
        fused = bank.matrix
    elif strategy == "average":
        mean = bank.matrix.astype(np.float64).mean(axis=0).astype(np.float32)
        fused = np.broadcast_to(mean, bank.matrix.shape)
    else:
        fused = memory_attention(bank)
    return {cell: fused[i].copy() for i, cell in enumerate(bank.cells)}


def unproject_mask(mask: np.ndarray, view: RenderedView, track_id: int) -> Mask3D:
    """Lift mask pixels to the point indices visible at those pixels."""
    if mask.shape != view.silhouette.shape:
        raise TrackFormatError(
            f"mask resolution {mask.shape} != view {view.silhouette.shape}"
        )
    ids = view.pixel_to_point[mask & view.silhouette]
    return Mask3D(
        frame_index=view.frame_index,
        point_indices=np.unique(ids).astype(np.int64),
        track_id=track_id,
    )


def assemble_frame(
    t: int,
    track_set: TrackSet,
    fused: dict[int, dict[tuple[int, int], np.ndarray]],
    asset: SequenceAsset,
) -> FrameProposalSet:
    """Gather one (Mask3D, embedding) pair per non-empty cell at frame t.

    Pairs are ordered by (track_id, view); tracks empty at frame t in every
    view contribute nothing.
    """
    counters.increment("fuse")
    masks: list[Mask3D] = []
    rows: list[np.ndarray] = []
    dim = None
    for track in sorted(track_set.tracks, key=lambda tr: tr.track_id):
        for v in range(track_set.num_views):
            mask = track.cells.get((t, v))
            if mask is None or not mask.any():
                continue
            per_cell = fused.get(track.track_id)
            if per_cell is None or (t, v) not in per_cell:
                raise MissingEmbeddingError(
                    f"no fused embedding for track {track.track_id} cell ({t}, {v})"
                )
            masks.append(unproject_mask(mask, asset.view(t, v), track.track_id))
            rows.append(per_cell[(t, v)])
            dim = rows[-1].shape[0]
    point_count = asset.frames[t].point_count
    if rows:
        embeddings = np.stack(rows).astype(np.float32)
    else:
        embeddings = np.zeros((0, dim or 0), dtype=np.float32)
    return FrameProposalSet(
        frame_index=t,
        point_count=point_count,
        masks=masks,
        embeddings=embeddings,
    )


def fuse_sequence(
    track_set: TrackSet,
    asset: SequenceAsset,
    provider,
    strategy: str,
) -> list[FrameProposalSet]:
    """Bank + fuse every track, then assemble proposals for every frame.

    Augment tracks have single-cell banks, so every strategy reduces to the
    individually computed embedding for them.
    """
    fused: dict[int, dict[tuple[int, int], np.ndarray]] = {}
    for track in track_set.tracks:
        bank = build_memory_bank(track, asset, provider)
        fused[track.track_id] = fuse_track_embeddings(bank, strategy)
    return [
        assemble_frame(t, track_set, fused, asset)
        for t in range(asset.num_frames)
    ]


def write_embedding_file(path, vectors: dict[tuple[int, int, int], np.ndarray], dim: int) -> None:
    """Write embeddings keyed by (track_id, t, v) in a flat binary layout.

    Header: 8-byte magic, u32 dimension, u32 record count. Each record:
    u32 track_id, u16 t, u16 v, then `dim` little-endian float32 values.
    """
    keys = sorted(vectors)
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<II", dim, len(keys)))
        for track_id, t, v in keys:
            vec = np.asarray(vectors[(track_id, t, v)], dtype="<f4")
            if vec.shape != (dim,):
                raise AssetFormatError(
                    f"embedding for ({track_id}, {t}, {v}) has shape {vec.shape}, "
                    f"expected ({dim},)"
                )
            fh.write(struct.pack("<IHH", track_id, t, v))
            fh.write(vec.tobytes())


def read_embedding_file(path) -> tuple[dict[tuple[int, int, int], np.ndarray], int]:
    """Read an embedding file back into a {(track_id, t, v): vector} map.

    Vectors come back exactly as stored; unit normalization happens at
    ingestion time in embed_mask, keeping write(read(f)) bit-identical to f.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16 or data[:8] != EMBEDDING_MAGIC:
        raise AssetFormatError(f"{path}: not an embedding file (bad magic)")
    dim, count = struct.unpack_from("<II", data, 8)
    record = 8 + 4 * dim
    expected = 16 + count * record
    if len(data) != expected:
        raise AssetFormatError(
            f"{path}: expected {expected} bytes for {count} records, got {len(data)}"
        )
    vectors: dict[tuple[int, int, int], np.ndarray] = {}
    offset = 16
    for _ in range(count):
        track_id, t, v = struct.unpack_from("<IHH", data, offset)
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset + 8)
        vectors[(track_id, t, v)] = vec.copy()
        offset += record
    return vectors, dim
